"""Dense fp32 tensors with reverse-mode automatic differentiation.

Every differentiable primitive records its inputs and a backward closure on
the tensor it produces; ``backward(loss)`` replays the recorded closures in
exact reverse execution order. fp32 is the working precision; every op also
accepts fp64 so gradient checks can run in a low-noise shadow mode.

Determinism contract: with the deterministic flag set (the default), matmul
uses the pinned sequential-k kernel so results match naive-loop oracles
bit for bit, and all work is single-threaded. With the flag cleared, matmul
goes through BLAS, which may reorder summation (results stay within 1e-5 of
the pinned kernel for inputs in [-1, 1]).
"""

import itertools
from contextlib import contextmanager

import numpy as np

from ._kernels import matmul_fast, matmul_pinned


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class NumericError(ArithmeticError):
    """A value that must be finite is NaN or infinite."""


_SEQ = itertools.count()
_GRAD_ENABLED = True
_DETERMINISTIC = True


def set_deterministic(flag: bool) -> None:
    """Toggle the pinned-summation-order (single-threaded) matmul kernel."""
    global _DETERMINISTIC
    _DETERMINISTIC = bool(flag)


def is_deterministic() -> bool:
    return _DETERMINISTIC


@contextmanager
def deterministic_mode(flag: bool):
    prev = _DETERMINISTIC
    set_deterministic(flag)
    try:
        yield
    finally:
        set_deterministic(prev)


@contextmanager
def no_grad():
    """Disable tape recording (eval-mode forwards, finite differences)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Rng:
    """Seeded pseudorandom source: PCG64 stream, ziggurat normal variates.

    The algorithm pair (PCG64 bit generator + numpy Generator's
    standard_normal) is fixed so one 64-bit seed reproduces the same
    sequence across runs and platforms.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def normal(self, shape, mean=0.0, std=1.0, dtype=np.float32) -> np.ndarray:
        dt = np.dtype(dtype).type
        return self._gen.standard_normal(tuple(shape), dtype=dtype) * dt(std) + dt(mean)

    def uniform(self, shape, low=0.0, high=1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=tuple(shape))

    def integers(self, low, high, shape=()) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def spawn(self, key: int) -> "Rng":
        """Derive an independent stream from (seed, key); splitmix64-style mix."""
        x = (self.seed + (key + 1) * 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
        x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
        x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
        return Rng(x ^ (x >> 31))


class Tensor:
    """A dense float array plus the bookkeeping reverse-mode AD needs.

    ``data`` is a numpy array (fp32 by default). Tensors produced by
    primitives carry their parent tensors and a backward closure; leaf
    tensors (parameters, inputs) carry neither. ``grad`` is populated by
    ``backward`` and accumulated across consumers.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_seq")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float32)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward
        self._seq = next(_SEQ)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def _validate_shape(shape):
    shape = tuple(int(d) for d in shape)
    if len(shape) == 0:
        raise ShapeError("shape must be non-empty")
    for d in shape:
        if d < 1:
            raise ShapeError(f"all dimensions must be >= 1, got {shape}")
    return shape


def zeros(shape, dtype=np.float32, requires_grad=False) -> Tensor:
    return Tensor(np.zeros(_validate_shape(shape), dtype=dtype), requires_grad=requires_grad)


def ones(shape, dtype=np.float32, requires_grad=False) -> Tensor:
    return Tensor(np.ones(_validate_shape(shape), dtype=dtype), requires_grad=requires_grad)


def full(shape, value, dtype=np.float32, requires_grad=False) -> Tensor:
    return Tensor(np.full(_validate_shape(shape), value, dtype=dtype), requires_grad=requires_grad)


def randn(shape, mean=0.0, std=1.0, rng=None, dtype=np.float32, requires_grad=False) -> Tensor:
    if rng is None:
        raise ValueError("randn requires an explicit Rng for reproducibility")
    return Tensor(rng.normal(_validate_shape(shape), mean, std, dtype=dtype), requires_grad=requires_grad)


def assert_finite(x, name="tensor") -> None:
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values in {name}")


def _make(data, parents, backward_fn) -> Tensor:
    requires = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if requires:
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward_fn)
    return Tensor(data)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _check_same_dtype(a: Tensor, b: Tensor, opname: str) -> None:
    if a.dtype != b.dtype:
        raise TypeError(f"{opname}: dtype mismatch {a.dtype} vs {b.dtype}")


def _broadcast_plan(a_shape, b_shape):
    """Return (b view shape, axes to sum for b's gradient) or raise.

    Broadcasting is restricted to a 1-D per-channel vector against the
    channel axis of the other operand: axis -1 for 2-D (bias over [N, K]),
    axis 0 for 3-D maps [C, H, W], axis 1 for 4-D batches [N, C, H, W].
    """
    if a_shape == b_shape:
        return None, None
    if len(b_shape) == 1:
        c = b_shape[0]
        if len(a_shape) == 2 and a_shape[1] == c:
            return (1, c), (0,)
        if len(a_shape) == 3 and a_shape[0] == c:
            return (c, 1, 1), (1, 2)
        if len(a_shape) == 4 and a_shape[1] == c:
            return (1, c, 1, 1), (0, 2, 3)
    raise ShapeError(f"cannot broadcast {b_shape} against {a_shape}")


def _binary_elementwise(a: Tensor, b: Tensor, fwd, da_fn, db_fn, opname):
    _check_same_dtype(a, b, opname)
    view_shape, reduce_axes = _broadcast_plan(a.shape, b.shape)
    b_view = b.data if view_shape is None else b.data.reshape(view_shape)
    out_data = fwd(a.data, b_view)

    def backward(g):
        _accumulate(a, da_fn(g, a.data, b_view))
        gb = db_fn(g, a.data, b_view)
        if reduce_axes is not None:
            gb = gb.sum(axis=reduce_axes).reshape(b.shape)
        _accumulate(b, gb)

    return _make(out_data, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    return _binary_elementwise(
        a, b,
        lambda x, y: x + y,
        lambda g, x, y: g,
        lambda g, x, y: g,
        "add",
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _binary_elementwise(
        a, b,
        lambda x, y: x - y,
        lambda g, x, y: g,
        lambda g, x, y: -g,
        "sub",
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _binary_elementwise(
        a, b,
        lambda x, y: x * y,
        lambda g, x, y: g * y,
        lambda g, x, y: g * x,
        "mul",
    )


def scale(x: Tensor, c: float) -> Tensor:
    c = x.data.dtype.type(c)
    out = x.data * c

    def backward(g):
        _accumulate(x, g * c)

    return _make(out, (x,), backward)


def _mm(a_data: np.ndarray, b_data: np.ndarray) -> np.ndarray:
    if _DETERMINISTIC:
        return matmul_pinned(a_data, b_data)
    return matmul_fast(a_data, b_data)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b, "matmul")
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = _mm(a.data, b.data)

    def backward(g):
        _accumulate(a, _mm(g, b.data.T))
        _accumulate(b, _mm(a.data.T, g))

    return _make(out, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, x.data.dtype.type(0))

    def backward(g):
        # subgradient at 0 is 0
        _accumulate(x, g * (x.data > 0))

    return _make(out, (x,), backward)


def log_softmax(logits: Tensor) -> Tensor:
    if logits.data.ndim != 2:
        raise ShapeError(f"log_softmax expects [N, K] logits, got {logits.shape}")
    if logits.shape[1] < 2:
        raise ShapeError("log_softmax needs at least 2 classes")
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    shifted = z - m
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse

    def backward(g):
        p = np.exp(out)
        _accumulate(logits, g - p * g.sum(axis=1, keepdims=True))

    return _make(out, (logits,), backward)


def softmax(logits: Tensor) -> np.ndarray:
    """Row-wise probabilities (plain array; not recorded on the tape)."""
    with no_grad():
        return np.exp(log_softmax(logits).data)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under row softmax."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy expects [N, K] logits, got {logits.shape}")
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels must have shape ({n},), got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        bad = labels[(labels < 0) | (labels >= k)][0]
        raise ValueError(f"label {bad} outside [0, {k})")
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    shifted = z - m
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    out = np.asarray(-logp[np.arange(n), labels].mean(), dtype=z.dtype)

    def backward(g):
        p = np.exp(logp)
        onehot = np.zeros_like(p)
        onehot[np.arange(n), labels] = 1
        _accumulate(logits, (p - onehot) * (g / z.dtype.type(n)))

    return _make(out, (logits,), backward)


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.data.dtype)

    def backward(g):
        _accumulate(x, np.full(x.shape, g, dtype=x.data.dtype))

    return _make(out, (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {x.shape} ({x.size} elements) "
                         f"into {tuple(shape)}") from None

    def backward(g):
        _accumulate(x, g.reshape(x.shape))

    return _make(out, (x,), backward)


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    out = np.transpose(x.data, axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        _accumulate(x, np.transpose(g, inverse))

    return _make(out, (x,), backward)


def transpose2d(x: Tensor) -> Tensor:
    return permute(x, (1, 0))


def im2col(x: Tensor, ksize: int, stride: int, padding: int) -> Tensor:
    """Unroll kxk patches of [N,C,H,W] into rows of a [N*H'*W', C*k*k] matrix.

    Column order within a row is (channel, kernel row, kernel col), matching
    the summation order of the loop definition of convolution. Backward
    scatter-adds patch gradients back into the padded input.
    """
    n, c, h, w = x.shape
    hp = (h + 2 * padding - ksize) // stride + 1
    wp = (w + 2 * padding - ksize) // stride + 1
    if hp < 1 or wp < 1:
        raise ShapeError(f"im2col: kernel {ksize} does not fit input {x.shape}")
    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    col = np.empty((n, c, ksize, ksize, hp, wp), dtype=x.data.dtype)
    for i in range(ksize):
        for j in range(ksize):
            col[:, :, i, j] = xp[:, :, i : i + stride * hp : stride, j : j + stride * wp : stride]
    out = col.transpose(0, 4, 5, 1, 2, 3).reshape(n * hp * wp, c * ksize * ksize)

    def backward(g):
        gcol = g.reshape(n, hp, wp, c, ksize, ksize).transpose(0, 3, 4, 5, 1, 2)
        gxp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=g.dtype)
        for i in range(ksize):
            for j in range(ksize):
                gxp[:, :, i : i + stride * hp : stride, j : j + stride * wp : stride] += gcol[:, :, i, j]
        if padding:
            gxp = gxp[:, :, padding : padding + h, padding : padding + w]
        _accumulate(x, gxp)

    return _make(out, (x,), backward)


def max_last_axis(x: Tensor) -> Tensor:
    """Row-wise max of a 2-D tensor; gradient routes to the first argmax."""
    if x.data.ndim != 2:
        raise ShapeError(f"max_last_axis expects a 2-D tensor, got {x.shape}")
    idx = x.data.argmax(axis=1)
    rows = np.arange(x.shape[0])
    out = x.data[rows, idx]

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[rows, idx] = g
        _accumulate(x, gx)

    return _make(out, (x,), backward)


def batch_norm2d(x, gamma, beta, running_mean, running_var, training,
                 eps=1e-5, momentum=0.1):
    """Per-channel normalization of [N,C,H,W] with affine scale and shift.

    Training mode standardizes with biased batch statistics over (N, H, W)
    and folds them into the running estimates in place:
    running <- (1 - momentum) * running + momentum * batch_stat.
    Eval mode applies the running estimates elementwise, so each sample's
    output is independent of the rest of the batch.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"batch_norm2d expects [N,C,H,W], got {x.shape}")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError("gamma/beta must have shape [C]")
    dt = x.data.dtype
    eps = dt.type(eps)

    if training:
        m = n * h * w
        if m < 2:
            raise ShapeError("train-mode batch norm needs N*H*W >= 2 (variance undefined)")
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))  # biased
        running_mean *= dt.type(1 - momentum)
        running_mean += dt.type(momentum) * mean
        running_var *= dt.type(1 - momentum)
        running_var += dt.type(momentum) * var
    else:
        mean = running_mean
        var = running_var

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
    out = gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1)

    if training:

        def backward(g):
            _accumulate(gamma, (g * xhat).sum(axis=(0, 2, 3)))
            _accumulate(beta, g.sum(axis=(0, 2, 3)))
            gxhat = g * gamma.data.reshape(1, c, 1, 1)
            mean_g = gxhat.mean(axis=(0, 2, 3), keepdims=True)
            mean_gx = (gxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
            _accumulate(x, inv_std.reshape(1, c, 1, 1) * (gxhat - mean_g - xhat * mean_gx))

    else:

        def backward(g):
            _accumulate(gamma, (g * xhat).sum(axis=(0, 2, 3)))
            _accumulate(beta, g.sum(axis=(0, 2, 3)))
            _accumulate(x, g * (gamma.data * inv_std).reshape(1, c, 1, 1))

    return _make(out, (x, gamma, beta), backward)


def backward(loss: Tensor, params=None) -> None:
    """Propagate d(loss)/d(tensor) to every requires_grad tensor behind loss.

    Recorded ops run in exact reverse execution order. Parameters listed in
    ``params`` that the loss never reached get a zero gradient of their own
    shape.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    nodes = []
    seen = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        if t._backward is not None:
            nodes.append(t)
        for p in t._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append(p)
    nodes.sort(key=lambda t: t._seq, reverse=True)
    if loss.requires_grad:
        loss.grad = np.ones_like(loss.data)
    for t in nodes:
        if t.grad is not None:
            t._backward(t.grad)
    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)


def zero_grads(params) -> None:
    for p in params:
        p.grad = None


def grad_check(f, x: Tensor, eps=1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must map the tensor to a scalar Tensor. Every coordinate of ``x``
    is perturbed by +-eps; the relative error denominator is
    max(|analytic|, |numeric|, 1e-8). Run in fp64 for tight tolerances, and
    keep inputs away from nondifferentiable points (e.g. relu at 0).
    """
    x.requires_grad = True
    x.grad = None
    out = f(x)
    backward(out, params=[x])
    analytic = x.grad.reshape(-1).copy()
    flat = x.data.reshape(-1)
    numeric = np.zeros_like(analytic)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f(x).data)
            flat[i] = orig - eps
            fm = float(f(x).data)
            flat[i] = orig
            numeric[i] = (fp - fm) / (2.0 * eps)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float((np.abs(analytic - numeric) / denom).max())


def grad_check_sampled(f, x: Tensor, eps=1e-5, num_samples=5, rng=None) -> float:
    """grad_check restricted to a sample of coordinates (for large tensors)."""
    x.requires_grad = True
    x.grad = None
    out = f(x)
    backward(out, params=[x])
    analytic = x.grad.reshape(-1).copy()
    flat = x.data.reshape(-1)
    if flat.size <= num_samples:
        coords = np.arange(flat.size)
    elif rng is None:
        coords = np.linspace(0, flat.size - 1, num_samples).astype(np.int64)
    else:
        coords = np.sort(rng.integers(0, flat.size, (num_samples,)))
    worst = 0.0
    with no_grad():
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f(x).data)
            flat[i] = orig - eps
            fm = float(f(x).data)
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * eps)
            denom = max(abs(analytic[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst
