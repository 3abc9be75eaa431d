"""Adam optimizer and learning-rate schedules.

Moment buffers are stored per parameter in fp32 (matching the parameters)
and updates are applied in place, so a fixed data order gives bit-identical
parameter trajectories run to run.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .tensor import NumericError, ShapeError, Tensor


def default_no_decay(name: str) -> bool:
    """Batch-norm scale/shift parameters are excluded from weight decay."""
    return name.endswith(".gamma") or name.endswith(".beta")


class Adam:
    """Adam with bias correction and L2 weight decay.

    By default the decay term is folded into the gradient before the moment
    updates (g <- g + wd * theta), i.e. classic coupled L2 regularization;
    ``decoupled=True`` switches to subtracting lr * wd * theta directly from
    the parameter instead. Parameters matching ``no_decay`` skip the term.
    """

    def __init__(self, named_params, lr=0.001, beta1=0.9, beta2=0.999,
                 eps=1e-8, weight_decay=0.0, no_decay=default_no_decay,
                 decoupled=False):
        if isinstance(named_params, dict):
            named_params = list(named_params.items())
        self.named_params = [(n, p) for n, p in named_params]
        for n, p in self.named_params:
            if not isinstance(p, Tensor):
                raise TypeError(f"parameter {n!r} is not a Tensor")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.no_decay = no_decay or (lambda name: False)
        self.decoupled = decoupled
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.named_params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.named_params}

    def step(self, lr=None):
        """Apply one update from the gradients currently on the parameters."""
        if lr is None:
            lr = self.lr
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.named_params:
            if p.grad is None:
                raise NumericError(f"parameter {name!r} has no gradient; run backward first")
            if p.grad.shape != p.data.shape:
                raise ShapeError(f"gradient shape {p.grad.shape} does not match "
                                 f"parameter {name!r} shape {p.data.shape}")
            if not np.all(np.isfinite(p.grad)):
                raise NumericError(f"non-finite gradient in parameter {name!r}")
            dt = p.data.dtype.type
            g = p.grad
            decay = self.weight_decay if not self.no_decay(name) else 0.0
            if decay and not self.decoupled:
                g = g + dt(decay) * p.data
            elif decay:
                p.data -= dt(lr) * dt(decay) * p.data
            m, v = self.m[name], self.v[name]
            m *= dt(self.beta1)
            m += dt(1.0 - self.beta1) * g
            v *= dt(self.beta2)
            v += dt(1.0 - self.beta2) * (g * g)
            mhat = m / dt(bc1)
            vhat = v / dt(bc2)
            p.data -= dt(lr) * mhat / (np.sqrt(vhat) + dt(self.eps))

    def zero_grad(self):
        for _, p in self.named_params:
            p.grad = None

    def state(self) -> dict:
        """Moment buffers and step count, for exact training resumption."""
        return {"t": self.t, "m": self.m, "v": self.v}

    def load_state(self, state: dict):
        self.t = int(state["t"])
        for name in self.m:
            self.m[name][...] = state["m"][name]
            self.v[name][...] = state["v"][name]


@dataclass(frozen=True)
class CosineSchedule:
    """Cosine annealing from ``base_lr`` down to ``eta_min`` over ``total_steps``.

    lr(0) = base_lr, lr(total/2) = (base_lr + eta_min) / 2, lr(total) = eta_min.
    Steps past the horizon clamp to eta_min (with a one-time warning).
    """

    base_lr: float
    total_steps: int
    eta_min: float = 0.0

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")

    def __call__(self, step: int) -> float:
        if not 0 <= step <= self.total_steps:
            warnings.warn(
                f"schedule queried at step {step} outside [0, {self.total_steps}]; clamping",
                RuntimeWarning, stacklevel=2)
            step = min(max(step, 0), self.total_steps)
        frac = step / self.total_steps
        return self.eta_min + 0.5 * (self.base_lr - self.eta_min) * (1.0 + math.cos(math.pi * frac))


@dataclass(frozen=True)
class ConstantSchedule:
    base_lr: float

    def __call__(self, step: int) -> float:
        return self.base_lr
