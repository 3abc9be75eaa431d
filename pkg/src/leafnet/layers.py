"""Network layers and the residual classifier they assemble.

The default stack: two stem convolutions (64 filters stride 1, then 128
filters stride 2), three identity-skip residual blocks at 128 channels,
global max pooling, and a linear classifier head. Widths, block placement,
interleaved pooling, and the final pooling extent are all configurable so
alternative residual stacks can be expressed without code changes.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class ModelConfig:
    """Architecture description; serialized verbatim into checkpoints.

    ``body`` entries: ("conv", out_channels, stride) for a 3x3 conv + batch
    norm + relu unit, ("res",) for an identity-skip residual block at the
    current width, ("pool", k) for k-by-k max pooling with stride k.
    ``pool`` is the final pooling: "global" collapses each channel map to
    its maximum; an integer k pools k-by-k windows and flattens (the head
    size then depends on ``img_size``).
    """

    num_classes: int = 51
    in_channels: int = 3
    body: tuple = (("conv", 64, 1), ("conv", 128, 2), ("res",), ("res",), ("res",))
    pool: object = "global"
    img_size: int = 256

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "in_channels": self.in_channels,
            "body": [list(entry) for entry in self.body],
            "pool": self.pool,
            "img_size": self.img_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            num_classes=int(d["num_classes"]),
            in_channels=int(d["in_channels"]),
            body=tuple(tuple(entry) for entry in d["body"]),
            pool=d["pool"],
            img_size=int(d["img_size"]),
        )


class Layer:
    """Base: parameter/buffer discovery plus train/eval mode switching."""

    def named_parameters(self, prefix=""):
        return []

    def named_buffers(self, prefix=""):
        return []

    def set_training(self, flag: bool):
        pass

    def __call__(self, x):
        return self.forward(x)


class Conv2d(Layer):
    """3x3 cross-correlation, padding 1, no bias (batch norm follows)."""

    KSIZE = 3
    PADDING = 1

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1, dtype=np.float32):
        if stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {stride}")
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.stride = stride
        self.weight = T.zeros((out_ch, in_ch, self.KSIZE, self.KSIZE), dtype=dtype, requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        if c != self.in_ch:
            raise ShapeError(f"conv expects {self.in_ch} input channels, got {c}")
        if h + 2 * self.PADDING < self.KSIZE or w + 2 * self.PADDING < self.KSIZE:
            raise ShapeError(f"padded input must fit a {self.KSIZE}x{self.KSIZE} "
                             f"window, got {h}x{w}")
        hp = (h + 2 * self.PADDING - self.KSIZE) // self.stride + 1
        wp = (w + 2 * self.PADDING - self.KSIZE) // self.stride + 1
        cols = T.im2col(x, self.KSIZE, self.stride, self.PADDING)
        wmat = T.reshape(self.weight, (self.out_ch, self.in_ch * self.KSIZE * self.KSIZE))
        out = T.matmul(cols, T.transpose2d(wmat))  # (N*H'*W', out_ch)
        out = T.reshape(out, (n, hp, wp, self.out_ch))
        return T.permute(out, (0, 3, 1, 2))

    def named_parameters(self, prefix=""):
        return [(prefix + "weight", self.weight)]


class BatchNorm2d(Layer):
    def __init__(self, channels: int, eps=1e-5, momentum=0.1, dtype=np.float32):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = T.ones((channels,), dtype=dtype, requires_grad=True)
        self.beta = T.zeros((channels,), dtype=dtype, requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.training = True

    def forward(self, x: Tensor) -> Tensor:
        return T.batch_norm2d(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training=self.training, eps=self.eps, momentum=self.momentum,
        )

    def named_parameters(self, prefix=""):
        return [(prefix + "gamma", self.gamma), (prefix + "beta", self.beta)]

    def named_buffers(self, prefix=""):
        return [(prefix + "running_mean", self.running_mean), (prefix + "running_var", self.running_var)]

    def set_training(self, flag: bool):
        self.training = flag


class Linear(Layer):
    def __init__(self, in_features: int, out_features: int, dtype=np.float32):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = T.zeros((out_features, in_features), dtype=dtype, requires_grad=True)
        self.bias = T.zeros((out_features,), dtype=dtype, requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        if x.data.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"linear expects [N, {self.in_features}], got {x.shape}")
        return T.add(T.matmul(x, T.transpose2d(self.weight)), self.bias)

    def named_parameters(self, prefix=""):
        return [(prefix + "weight", self.weight), (prefix + "bias", self.bias)]


def global_max_pool(x: Tensor) -> Tensor:
    """[N,C,H,W] -> [N,C]: per-channel maximum over all positions.

    Gradient goes to the first argmax in row-major (H, W) order.
    """
    n, c, h, w = x.shape
    flat = T.reshape(x, (n * c, h * w))
    return T.reshape(T.max_last_axis(flat), (n, c))


def max_pool2d(x: Tensor, k: int) -> Tensor:
    """Non-overlapping k-by-k max pooling (stride k); trailing rows cropped."""
    n, c, h, w = x.shape
    if h < k or w < k:
        raise ShapeError(f"pool window {k} does not fit {h}x{w}")
    hp, wp = h // k, w // k
    cols = T.im2col(T.reshape(x, (n * c, 1, h, w)), k, stride=k, padding=0)
    return T.reshape(T.max_last_axis(cols), (n, c, hp, wp))


class MaxPool2d(Layer):
    def __init__(self, k: int):
        self.k = k

    def forward(self, x):
        return max_pool2d(x, self.k)


class ConvBlock(Layer):
    """conv -> batch norm -> relu."""

    def __init__(self, in_ch, out_ch, stride=1, dtype=np.float32):
        self.conv = Conv2d(in_ch, out_ch, stride, dtype=dtype)
        self.bn = BatchNorm2d(out_ch, dtype=dtype)

    def forward(self, x):
        return T.relu(self.bn(self.conv(x)))

    def named_parameters(self, prefix=""):
        return self.conv.named_parameters(prefix + "conv.") + self.bn.named_parameters(prefix + "bn.")

    def named_buffers(self, prefix=""):
        return self.bn.named_buffers(prefix + "bn.")

    def set_training(self, flag):
        self.bn.set_training(flag)


class ResidualBlock(Layer):
    """Two conv+bn stages with an identity skip: relu(bn2(conv2(relu(bn1(conv1 x)))) + x).

    Input and output shapes are identical; there is no projection path.
    """

    def __init__(self, channels: int, dtype=np.float32):
        self.channels = channels
        self.conv1 = Conv2d(channels, channels, 1, dtype=dtype)
        self.bn1 = BatchNorm2d(channels, dtype=dtype)
        self.conv2 = Conv2d(channels, channels, 1, dtype=dtype)
        self.bn2 = BatchNorm2d(channels, dtype=dtype)

    def forward(self, x):
        h = T.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        return T.relu(T.add(h, x))

    def named_parameters(self, prefix=""):
        out = []
        for name, sub in (("conv1.", self.conv1), ("bn1.", self.bn1), ("conv2.", self.conv2), ("bn2.", self.bn2)):
            out.extend(sub.named_parameters(prefix + name))
        return out

    def named_buffers(self, prefix=""):
        return self.bn1.named_buffers(prefix + "bn1.") + self.bn2.named_buffers(prefix + "bn2.")

    def set_training(self, flag):
        self.bn1.set_training(flag)
        self.bn2.set_training(flag)


def _trace_body(config: ModelConfig):
    """Walk the body spec, returning (channels, spatial) after each entry."""
    ch, s = config.in_channels, config.img_size
    states = []
    for entry in config.body:
        kind = entry[0]
        if kind == "conv":
            _, out_ch, stride = entry
            ch = out_ch
            s = (s + 2 - 3) // stride + 1
        elif kind == "res":
            pass
        elif kind == "pool":
            s = s // entry[1]
        else:
            raise ValueError(f"unknown body entry {entry!r}")
        states.append((ch, s))
    return states


class ResNet9(Layer):
    """The assembled classifier: configurable conv/residual body, pooled head."""

    def __init__(self, config: ModelConfig | None = None, dtype=np.float32):
        self.config = config or ModelConfig()
        self.dtype = np.dtype(dtype)
        cfg = self.config
        self.body = []
        ch = cfg.in_channels
        for entry in cfg.body:
            kind = entry[0]
            if kind == "conv":
                _, out_ch, stride = entry
                self.body.append(ConvBlock(ch, out_ch, stride, dtype=dtype))
                ch = out_ch
            elif kind == "res":
                self.body.append(ResidualBlock(ch, dtype=dtype))
            elif kind == "pool":
                self.body.append(MaxPool2d(entry[1]))
            else:
                raise ValueError(f"unknown body entry {entry!r}")
        states = _trace_body(cfg)
        final_ch, final_s = states[-1] if states else (ch, cfg.img_size)
        if cfg.pool == "global":
            feats = final_ch
        else:
            k = int(cfg.pool)
            feats = final_ch * (final_s // k) ** 2
        self.head = Linear(feats, cfg.num_classes, dtype=dtype)
        # head input depends on spatial size only for windowed final pooling
        self._size_locked = cfg.pool != "global" or any(e[0] == "pool" for e in cfg.body)

    def forward(self, x: Tensor, trace: list | None = None) -> Tensor:
        if x.data.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ShapeError(
                f"expected [N, {self.config.in_channels}, H, W] input, got {x.shape}")
        if self._size_locked and (x.shape[2] != self.config.img_size or x.shape[3] != self.config.img_size):
            raise ShapeError(
                f"this configuration is locked to {self.config.img_size}px inputs, got {x.shape}")
        h = x
        for i, layer in enumerate(self.body):
            h = layer(h)
            if trace is not None:
                trace.append((f"body.{i}", tuple(h.shape)))
        if self.config.pool == "global":
            h = global_max_pool(h)
        else:
            h = max_pool2d(h, int(self.config.pool))
            h = T.reshape(h, (h.shape[0], -1))
        if trace is not None:
            trace.append(("pool", tuple(h.shape)))
        out = self.head(h)
        if trace is not None:
            trace.append(("head", tuple(out.shape)))
        return out

    def named_parameters(self, prefix=""):
        out = []
        for i, layer in enumerate(self.body):
            out.extend(layer.named_parameters(f"{prefix}body.{i}."))
        out.extend(self.head.named_parameters(prefix + "head."))
        return out

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def named_buffers(self, prefix=""):
        out = []
        for i, layer in enumerate(self.body):
            out.extend(layer.named_buffers(f"{prefix}body.{i}."))
        return out

    def named_state(self):
        """Parameters then buffers, in a fixed order (checkpoint layout)."""
        return self.named_parameters() + self.named_buffers()

    def set_training(self, flag: bool):
        for layer in self.body:
            layer.set_training(flag)

    def train(self):
        self.set_training(True)

    def eval(self):
        self.set_training(False)


def kaiming_init(model: ResNet9, rng: T.Rng) -> ResNet9:
    """He-normal conv/linear weights, identity batch norm, zero biases.

    Weights draw from normal(0, sqrt(2 / fan_in)) in a fixed layer order, so
    one seed reproduces the full initialization bit for bit.
    """
    def init_layer(layer):
        if isinstance(layer, Conv2d):
            fan_in = layer.in_ch * layer.KSIZE * layer.KSIZE
            layer.weight.data[...] = rng.normal(
                layer.weight.shape, 0.0, math.sqrt(2.0 / fan_in), dtype=model.dtype)
        elif isinstance(layer, BatchNorm2d):
            layer.gamma.data[...] = 1
            layer.beta.data[...] = 0
            layer.running_mean[...] = 0
            layer.running_var[...] = 1
        elif isinstance(layer, Linear):
            layer.weight.data[...] = rng.normal(
                layer.weight.shape, 0.0, math.sqrt(2.0 / layer.in_features), dtype=model.dtype)
            layer.bias.data[...] = 0
        elif isinstance(layer, ConvBlock):
            init_layer(layer.conv)
            init_layer(layer.bn)
        elif isinstance(layer, ResidualBlock):
            for sub in (layer.conv1, layer.bn1, layer.conv2, layer.bn2):
                init_layer(sub)

    for layer in model.body:
        init_layer(layer)
    init_layer(model.head)
    return model


def count_parameters(model) -> int:
    """Element count over trainable tensors (running stats excluded)."""
    return sum(t.size for _, t in model.named_parameters())
