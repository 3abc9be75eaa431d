#!/usr/bin/env python3
"""Finite-difference audit of every layer primitive and the composite model.

Prints a table of max relative errors between analytic and central-difference
gradients, all in double precision. Useful when touching anything in
leafnet.tensor or leafnet.layers.

    python3 scripts/check_gradients.py [--composite-samples N]
"""

import argparse
import os
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from leafnet import tensor as T
from leafnet.layers import (Conv2d, Linear, ModelConfig, ResNet9,
                            global_max_pool, kaiming_init)
from leafnet.tensor import Tensor


def f64(rng, shape, mean=0.0, std=1.0):
    return rng.normal(shape, mean, std, dtype=np.float64)


def primitive_checks(rng):
    proj = lambda shape: (lambda c: (lambda out: T.sum_all(T.mul(out, c))))(
        Tensor(f64(rng, shape)))

    conv = Conv2d(2, 3, dtype=np.float64)
    conv.weight.data[...] = f64(rng, conv.weight.shape, 0.0, 0.5)
    x = Tensor(f64(rng, (2, 2, 5, 5)))
    p = proj((2, 3, 5, 5))
    yield "conv2d/input", T.grad_check(lambda v: p(conv(v)), x)
    yield "conv2d/weight", T.grad_check(lambda w: p(conv(Tensor(x.data.copy()))),
                                        conv.weight)

    xb = Tensor(f64(rng, (2, 3, 4, 4)))
    gamma, beta = Tensor(f64(rng, (3,), 1.0, 0.1)), Tensor(f64(rng, (3,), 0.0, 0.1))
    rm, rv = np.zeros(3), np.ones(3)
    bn = lambda v, g, b: T.batch_norm2d(v, g, b, rm, rv, training=True)
    p = proj((2, 3, 4, 4))
    yield "batchnorm/input", T.grad_check(lambda v: p(bn(v, gamma, beta)), xb)
    yield "batchnorm/gamma", T.grad_check(lambda g: p(bn(xb, g, beta)), gamma)
    yield "batchnorm/beta", T.grad_check(lambda b: p(bn(xb, gamma, b)), beta)

    signs = np.where(rng.uniform((4, 6)) < 0.5, -1.0, 1.0)
    xr = Tensor(signs * rng.uniform((4, 6), 0.2, 1.0))
    p = proj((4, 6))
    yield "relu", T.grad_check(lambda v: p(T.relu(v)), xr)

    vals = np.random.default_rng(1).permutation(96).astype(np.float64) * 0.01
    p = proj((2, 3))
    yield "global_max_pool", T.grad_check(
        lambda v: p(global_max_pool(v)), Tensor(vals.reshape(2, 3, 4, 4)))

    lin = Linear(6, 4, dtype=np.float64)
    lin.weight.data[...] = f64(rng, (4, 6), 0.0, 0.5)
    lin.bias.data[...] = f64(rng, (4,), 0.0, 0.5)
    xl = Tensor(f64(rng, (3, 6)))
    p = proj((3, 4))
    yield "linear/input", T.grad_check(lambda v: p(lin(v)), xl)
    yield "linear/weight", T.grad_check(lambda w: p(lin(Tensor(xl.data.copy()))),
                                        lin.weight)
    yield "linear/bias", T.grad_check(lambda b: p(lin(Tensor(xl.data.copy()))),
                                      lin.bias)

    xs = Tensor(f64(rng, (3, 7), 0.0, 2.0))
    p = proj((3, 7))
    yield "log_softmax", T.grad_check(lambda v: p(T.log_softmax(v)), xs)

    xc = Tensor(f64(rng, (4, 6), 0.0, 2.0))
    labels = [int(v) for v in rng.integers(0, 6, (4,))]
    yield "cross_entropy", T.grad_check(lambda v: T.cross_entropy(v, labels), xc)


def composite_checks(rng, num_samples):
    model = ResNet9(ModelConfig(num_classes=51, img_size=32), dtype=np.float64)
    kaiming_init(model, T.Rng(7))
    model.train()
    xin = Tensor(f64(rng, (2, 3, 32, 32)))
    labels = [int(v) for v in rng.integers(0, 51, (2,))]
    loss_fn = lambda _: T.cross_entropy(model(xin), labels)
    yield "composite/input", T.grad_check_sampled(
        loss_fn, xin, eps=1e-6, num_samples=2 * num_samples, rng=rng)
    for name, param in model.named_parameters():
        yield f"composite/{name}", T.grad_check_sampled(
            loss_fn, param, eps=1e-6, num_samples=num_samples, rng=rng)


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--composite-samples", type=int, default=2,
                    help="finite-difference coordinates probed per model tensor")
    args = ap.parse_args()

    rng = T.Rng(0)
    failures = 0
    t0 = time.time()
    for section, checks, tol in (("primitive", primitive_checks(rng), 1e-5),
                                 ("composite", composite_checks(rng, args.composite_samples), 1e-3)):
        for name, err in checks:
            ok = err < tol
            failures += not ok
            print(f"{'ok  ' if ok else 'FAIL'} {name:<32} {err:.3e} (tol {tol:g})")
    print(f"\n{failures} failure(s) in {time.time() - t0:.1f}s")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
