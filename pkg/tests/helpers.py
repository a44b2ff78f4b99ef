"""Shared toy victims and task factories for the test suite."""

import numpy as np

import bayesmask as bm


def random_image(shape, seed):
    rng = bm.SamplerSeed(seed, 0).generator()
    return bm.Image(rng.random(shape).astype(np.float32))


def toy_oracle(shape=(3, 3, 3), classes=3, seed=11, budget=None, wstd=1.0):
    rng = bm.SamplerSeed(8800 + seed, 0).generator()
    c, w, h = shape
    weight = rng.normal(0.0, wstd, size=(classes, c * w * h))
    bias = rng.normal(0.0, 0.5, size=classes)
    return bm.LinearSoftmaxOracle(weight, bias, shape, budget=budget)


def unreachable_target_task(seed, shape=(3, 3, 3), classes=3):
    """Random victim whose class 0 can never win the argmax.

    The class-0 bias is pushed far below every achievable logit, so a
    targeted attack on class 0 can never terminate early and must spend
    its whole query budget minimizing the loss.
    """
    rng = bm.SamplerSeed(7000 + seed, 0).generator()
    c, w, h = shape
    x = bm.Image(rng.random(shape).astype(np.float32))
    weight = rng.normal(0.0, 1.0, size=(classes, c * w * h))
    bias = rng.normal(0.0, 0.5, size=classes)
    bias[0] -= 25.0
    oracle = bm.LinearSoftmaxOracle(weight, bias, shape)
    spec = bm.LossSpec(bm.LossMode.TARGETED_CROSS_ENTROPY,
                       source_class=1, target_class=0)
    return x, oracle, spec


def accumulation_task(seed, side=12, budget=8, frac=0.6, channels=3, classes=3):
    """Calibrated toy task: success requires collecting good pixels.

    Only the target class's logit depends on the image; selecting pixel p
    shifts it by a per-pixel delta fixed by the (seeded) synthetic image.
    The target bias is set so the attack succeeds exactly when the selected
    mask accumulates ``frac`` of the best achievable top-``budget`` delta
    sum, giving a smooth difficulty dial.
    """
    rng = bm.SamplerSeed(5200 + seed, 0).generator()
    shape = (channels, side, side)
    x = bm.Image(np.full(shape, 0.5, dtype=np.float32))
    x_syn = bm.Image(rng.integers(0, 2, size=shape).astype(np.float32))
    w0 = rng.normal(0.0, 1.0, size=shape)
    delta = (w0 * (x_syn.data.astype(np.float64) - 0.5)).sum(axis=0).reshape(-1)
    top = np.sort(delta)[::-1][:budget].sum()
    weight = np.zeros((classes, channels * side * side))
    weight[0] = w0.reshape(-1)
    base = float(weight[0] @ x.flat().astype(np.float64))
    bias = np.zeros(classes)
    bias[0] = -base - frac * top
    bias[2:] = -0.5
    oracle = bm.LinearSoftmaxOracle(weight, bias, shape)
    spec = bm.LossSpec(bm.LossMode.TARGETED_CROSS_ENTROPY,
                       source_class=1, target_class=0)
    return x, x_syn, oracle, spec
