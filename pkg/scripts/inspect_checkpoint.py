#!/usr/bin/env python3
"""Print a checkpoint's header: architecture, classes, meta, tensor table.

    python3 scripts/inspect_checkpoint.py runs/latest/best.ckpt [--tensors]
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from leafnet.checkpoint import read_header


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("checkpoint")
    ap.add_argument("--tensors", action="store_true", help="list the tensor table")
    args = ap.parse_args()

    header = read_header(args.checkpoint)
    table = header["tensors"]
    payload = sum(e["nbytes"] for e in table)
    elems = payload // 4

    print(f"format_version: {header['format_version']}")
    print(f"classes ({len(header['class_names'])}): "
          + ", ".join(header["class_names"][:8])
          + (" ..." if len(header["class_names"]) > 8 else ""))
    print(f"architecture: {header['arch']}")
    for key, value in sorted(header.get("meta", {}).items()):
        if key != "config":
            print(f"meta.{key}: {value}")
    print(f"tensors: {len(table)} ({elems:,} fp32 values, {payload:,} payload bytes)")
    if args.tensors:
        for e in table:
            shape = "x".join(str(s) for s in e["shape"])
            print(f"  {e['name']:<28} {shape:>14}  offset {e['offset']:>10}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
