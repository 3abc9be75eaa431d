"""Self-describing binary checkpoint format.

Layout (little-endian):
  bytes 0-7    magic ``LEAFNET1``
  bytes 8-15   unsigned 64-bit header length H
  H bytes      UTF-8 JSON header: format_version, class_names, arch (model
               configuration), meta (free-form training provenance), and a
               tensor table of {name, shape, dtype "f32", offset, nbytes}
               with offsets relative to the payload start
  rest         concatenated raw fp32 tensor payload

The header fully determines the payload layout; loading validates every
tensor's byte length against its shape and restores values bit for bit.
"""

import json
import struct

import numpy as np

from .layers import ModelConfig, ResNet9
from .tensor import Tensor

MAGIC = b"LEAFNET1"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    """Base class for checkpoint format violations."""


class MagicError(CheckpointError):
    """File does not start with the expected magic bytes."""


class VersionError(CheckpointError):
    """Header format_version is not supported."""


class HeaderError(CheckpointError):
    """Header bytes are not valid JSON or lack required fields."""


class TruncatedError(CheckpointError):
    """File ends before the header-declared payload does."""


class TensorMismatchError(CheckpointError):
    """Tensor table disagrees with payload bytes or model shapes."""


def save_checkpoint(path, model: ResNet9, class_names, meta=None):
    """Write the model's parameters and buffers; returns ``path``."""
    table = []
    chunks = []
    offset = 0
    for name, t in model.named_state():
        arr = t.data if isinstance(t, Tensor) else np.asarray(t)
        if arr.dtype != np.float32:
            raise CheckpointError(f"tensor {name!r} has dtype {arr.dtype}; format stores f32 only")
        raw = np.ascontiguousarray(arr).tobytes()
        table.append({"name": name, "shape": list(arr.shape), "dtype": "f32",
                      "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "class_names": list(class_names),
        "arch": model.config.to_dict(),
        "meta": dict(meta or {}),
        "tensors": table,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for raw in chunks:
            fh.write(raw)
    return path


def read_header(path) -> dict:
    """Parse and validate the JSON header without touching the payload."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if len(magic) < 8 or magic != MAGIC:
            raise MagicError(f"{path}: expected magic {MAGIC!r}, found {magic!r}")
        raw_len = fh.read(8)
        if len(raw_len) < 8:
            raise TruncatedError(f"{path}: file ends inside the header length field")
        (hlen,) = struct.unpack("<Q", raw_len)
        header_bytes = fh.read(hlen)
    if len(header_bytes) < hlen:
        raise TruncatedError(f"{path}: header declares {hlen} bytes, file has {len(header_bytes)}")
    try:
        header = json.loads(header_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HeaderError(f"{path}: header is not valid JSON: {exc}") from None
    for key in ("format_version", "class_names", "arch", "tensors"):
        if key not in header:
            raise HeaderError(f"{path}: header missing {key!r}")
    if header["format_version"] != FORMAT_VERSION:
        raise VersionError(f"{path}: format_version {header['format_version']!r}, "
                           f"supported: {FORMAT_VERSION}")
    return header


def load_checkpoint(path):
    """Rebuild (model, class_names, meta) from a checkpoint file.

    Raises without returning any partial state: the model is constructed
    and populated only after every tensor slice has been validated.
    """
    header = read_header(path)
    with open(path, "rb") as fh:
        fh.seek(8)
        (hlen,) = struct.unpack("<Q", fh.read(8))
        fh.seek(16 + hlen)
        payload = fh.read()

    table = header["tensors"]
    end = 0
    arrays = {}
    for entry in table:
        shape = tuple(int(s) for s in entry["shape"])
        nbytes = int(entry["nbytes"])
        offset = int(entry["offset"])
        if entry.get("dtype") != "f32":
            raise TensorMismatchError(f"{path}: tensor {entry['name']!r} has "
                                      f"dtype {entry.get('dtype')!r}, expected 'f32'")
        expected = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
        if nbytes != expected:
            raise TensorMismatchError(
                f"{path}: tensor {entry['name']!r} shape {shape} needs {expected} bytes, "
                f"table says {nbytes}")
        if offset + nbytes > len(payload):
            raise TruncatedError(
                f"{path}: tensor {entry['name']!r} extends to byte {offset + nbytes}, "
                f"payload has {len(payload)}")
        arrays[entry["name"]] = np.frombuffer(
            payload, dtype="<f4", count=nbytes // 4, offset=offset).reshape(shape)
        end = max(end, offset + nbytes)
    if len(payload) > end:
        raise TensorMismatchError(f"{path}: {len(payload) - end} trailing payload byte(s) "
                                  "not described by the header")

    config = ModelConfig.from_dict(header["arch"])
    model = ResNet9(config)
    state = model.named_state()
    state_names = [n for n, _ in state]
    if sorted(state_names) != sorted(arrays):
        missing = sorted(set(state_names) - set(arrays))
        extra = sorted(set(arrays) - set(state_names))
        raise TensorMismatchError(f"{path}: tensor table does not match the architecture "
                                  f"(missing {missing}, unexpected {extra})")
    for name, t in state:
        arr = arrays[name]
        dest = t.data if isinstance(t, Tensor) else t
        if dest.shape != arr.shape:
            raise TensorMismatchError(f"{path}: tensor {name!r} is {arr.shape} in file, "
                                      f"model expects {dest.shape}")
        dest[...] = arr
    return model, list(header["class_names"]), header.get("meta", {})
