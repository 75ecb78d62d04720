"""Central-difference gradient checks for the autodiff ops and the joint losses.

All checks run in float64. The error measure is
``|analytic - numeric| / max(1, |analytic|)``.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

H = 1e-5
TOL = 1e-4


def rel_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    return np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))


def _away_from_zero(rng, shape, margin=0.05):
    """Uniform in [-2, 2] but never within ``margin`` of 0 (keeps ReLU/l1 off their kinks)."""
    x = rng.uniform(margin, 2.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def numeric_grad(fn, arrays, h=H):
    """Full central-difference gradient of scalar ``fn(*arrays)`` w.r.t. every array."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = fn(*arrays)
            flat[i] = orig - h
            lo = fn(*arrays)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * h)
        grads.append(g)
    return grads


def _op_cases(rng):
    """``name -> (builder, input arrays)``; builders map leaf tensors to an output tensor."""
    n = int(rng.integers(1, 3))
    c, o = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    stride = int(rng.integers(1, 3))
    pad = int(rng.integers(0, 2))
    return {
        "conv2d": (lambda x, w, b: ad.conv2d(x, w, b, stride, pad),
                   [rng.normal(size=(n, c, 5, 5)), rng.normal(size=(o, c, 3, 3)), rng.normal(size=o)]),
        "conv_transpose2d": (lambda x, w, b: ad.conv_transpose2d(x, w, b, 2, 1),
                             [rng.normal(size=(n, c, 3, 3)), rng.normal(size=(c, o, 4, 4)), rng.normal(size=o)]),
        "dense": (ad.dense, [rng.normal(size=(n, 4)), rng.normal(size=(4, 3)), rng.normal(size=3)]),
        "relu": (ad.relu, [_away_from_zero(rng, (n, 6))]),
        "sigmoid": (ad.sigmoid, [rng.uniform(-10, 10, size=(n, 6))]),
        "reshape": (lambda x: ad.reshape(x, (n, 3, 2)), [rng.normal(size=(n, 6))]),
        "flatten": (ad.flatten, [rng.normal(size=(n, 2, 2, 2))]),
        "upsample_nearest": (lambda x: ad.upsample_nearest(x, 2), [rng.normal(size=(n, c, 2, 3))]),
        "add": (ad.add, [rng.normal(size=(n, 3)), rng.normal(size=(3,))]),
        "mul": (ad.mul, [rng.normal(size=(n, 3)), rng.normal(size=(1, 3))]),
        "scale": (lambda x: ad.scale(x, 2.5), [rng.normal(size=(n, 4))]),
        "tsum": (ad.tsum, [rng.normal(size=(n, 4))]),
        "mean": (ad.mean, [rng.normal(size=(n, 4))]),
        "l1_loss": (ad.l1_loss, [_away_from_zero(rng, (n, 3)), np.zeros((n, 3))]),
        "l2_loss": (ad.l2_loss, [rng.normal(size=(n, 3)), rng.normal(size=(n, 3))]),
    }


OP_NAMES = tuple(_op_cases(np.random.default_rng(0)))


def check_op(name, seed):
    """Max relative error for op ``name`` over all input coordinates at ``seed``."""
    rng = np.random.default_rng(seed)
    builder, arrays = _op_cases(rng)[name]
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    with ad.default_dtype(np.float64):
        probe = builder(*[Tensor(a) for a in arrays])
        weights = rng.normal(size=probe.shape)

        def scalar(*arrs):
            out = builder(*[Tensor(a) for a in arrs])
            return float(np.sum(out.data * weights))

        leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
        out = builder(*leaves)
        loss = ad.tsum(ad.mul(out, Tensor(weights)))
        ad.backward(loss)
        analytic = [leaf.grad for leaf in leaves]
        numeric = numeric_grad(scalar, arrays)
    return max(float(rel_error(a, nu).max()) for a, nu in zip(analytic, numeric))


def joint_loss_fn(kind, weights=None):
    """Scalar loss of the joint model as a function of (params dict, images, angles)."""
    from .trainer import LossWeights, feedback_loss, joint_loss

    if weights is None:
        weights = LossWeights(1.0, 10.0, 10.0 if kind == "feedback" else None)

    def fn(model, x, clean, y):
        z = model.encode(x)
        pred = model.predict(z)
        recon = model.decode(z)
        if kind == "feedback":
            recon_pred = model.predict(model.encode(recon))
            return feedback_loss(recon, clean, pred, recon_pred, y, weights)
        return joint_loss(recon, clean, pred, y, weights)

    return fn


# A kink crossed inside [-h, h] moves the central difference by at most half the
# gap between the one-sided slopes, so accepted probes carry < TOL / 2 of it.
KINK_TOL = TOL
# Full-model probes move ~10^5 pre-activations at once, so they need a far
# smaller step; float64 rounding there is ~1e-5 absolute, well under TOL.
MODEL_H = 1e-8
MAX_RESAMPLES = 50


def _central(value, shift, base, h=H):
    """Central difference along ``shift`` plus a flag for a kink inside [-h, h].

    Kinked probes are discarded: a wrong analytic gradient would still
    disagree with two one-sided slopes that agree with each other.
    """
    shift(h)
    hi = value()
    shift(-2 * h)
    lo = value()
    shift(h)
    fwd, bwd = (hi - base) / h, (base - lo) / h
    central = (hi - lo) / (2 * h)
    kinked = abs(fwd - bwd) > KINK_TOL * max(1.0, abs(central))
    return central, kinked


def check_joint_loss(kind, seed, batch=2, n_coords=4):
    """Relative errors of the joint (or feedback) loss gradient through the full model.

    Checks one random direction over every parameter and the input at once,
    plus ``n_coords`` random single coordinates per parameter group. Probes
    that straddle a kink are redrawn. Returns the largest error seen.
    """
    from .models import build_nvidia_desk

    rng = np.random.default_rng(seed)
    fn = joint_loss_fn(kind)
    with ad.default_dtype(np.float64):
        model = build_nvidia_desk(seed=seed)
        for p in model.params.values():
            # non-zero biases so no unit sits exactly on a ReLU kink
            if p.data.ndim == 1:
                p.data[...] = rng.normal(scale=0.05, size=p.shape)
        x_arr = rng.uniform(0.05, 0.95, size=(batch, 3, model.spec.height, model.spec.width))
        clean = Tensor(np.clip(x_arr + rng.normal(scale=0.05, size=x_arr.shape), 0, 1))
        y = Tensor(rng.normal(scale=20.0, size=(batch, 1)))
        x = Tensor(x_arr.copy(), requires_grad=True)

        loss = fn(model, x, clean, y)
        base = loss.item()
        ad.backward(loss)
        leaves = dict(model.params)
        leaves["input"] = x

        def value():
            return fn(model, Tensor(x.data), clean, y).item()

        errors = []
        for _ in range(MAX_RESAMPLES):
            dirs = {k: rng.normal(size=t.shape) for k, t in leaves.items()}

            def shift(step):
                for k, t in leaves.items():
                    t.data += step * dirs[k]

            numeric, kinked = _central(value, shift, base, MODEL_H)
            if not kinked:
                analytic = sum(float(np.sum(t.grad * dirs[k])) for k, t in leaves.items())
                errors.append(float(rel_error(analytic, numeric)))
                break
        else:
            raise RuntimeError(f"every direction crossed a kink (seed {seed})")

        for k, t in leaves.items():
            flat, gflat = t.data.reshape(-1), t.grad.reshape(-1)
            want = min(n_coords, flat.size)
            order = rng.permutation(flat.size)[: want + MAX_RESAMPLES]
            done = 0
            for i in order:

                def shift(step, i=i):
                    flat[i] += step

                numeric, kinked = _central(value, shift, base, MODEL_H)
                if kinked:
                    continue
                errors.append(float(rel_error(gflat[i], numeric)))
                done += 1
                if done == want:
                    break
            if done < want:
                raise RuntimeError(f"{k}: too many probes crossed a kink (seed {seed})")
    return max(errors)
