"""Finite-difference validation of analytic gradients.

All checks run in double precision with central differences; the step is
1e-5 scaled by the magnitude of the perturbed value.
"""

from __future__ import annotations

import zlib

import numpy as np

from .tensor import NumericsError, Tensor
from . import ops


class GradCheckFailure(RuntimeError):
    """Raised when an op produces non-finite values during checking."""


def grad_check(fn, inputs, step=1e-5, seed=0):
    """Max relative error between analytic and numeric gradients.

    ``fn`` maps the given double-precision Tensors to one output Tensor.
    The output is projected to a scalar with fixed random weights so the
    whole Jacobian is exercised. Returns
    max |analytic - numeric| / max(|analytic|, |numeric|, 1e-8) over every
    element of every input.
    """
    name = getattr(fn, "__name__", "op")
    for t in inputs:
        if t.dtype != np.float64:
            raise ValueError("grad_check requires float64 inputs")
        t.zero_grad()
    try:
        out = fn(*inputs)
    except NumericsError as exc:
        raise GradCheckFailure(f"non-finite forward value in '{name}': {exc}") from exc
    w = np.random.default_rng(seed).standard_normal(out.shape)
    out.backward(w)

    def scalar():
        return float(np.sum(fn(*inputs).data * w))

    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            h = step * max(1.0, abs(orig))
            flat[i] = orig + h
            try:
                fp = scalar()
                flat[i] = orig - h
                fm = scalar()
            except NumericsError as exc:
                raise GradCheckFailure(
                    f"non-finite value while perturbing '{name}': {exc}") from exc
            finally:
                flat[i] = orig
            numeric = (fp - fm) / (2 * h)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


def _t(rng, shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True, dtype=np.float64)


def _t_away_from_zero(rng, shape, margin=0.1):
    data = rng.standard_normal(shape)
    data = data + np.where(data >= 0, margin, -margin)
    return Tensor(data, requires_grad=True, dtype=np.float64)


def _t_distinct_over_time(rng, shape):
    # Well-separated levels shuffled along the time axis: keeps the
    # time-max unique so the max-pool subgradient is exact under
    # perturbation.
    t_axis = len(shape) - 2
    base = np.arange(shape[t_axis], dtype=np.float64) * 0.5
    bshape = tuple(shape[t_axis] if i == t_axis else 1 for i in range(len(shape)))
    data = rng.permuted(np.broadcast_to(base.reshape(bshape), shape).copy(), axis=t_axis)
    return Tensor(data + rng.standard_normal(shape) * 0.01,
                  requires_grad=True, dtype=np.float64)


def _check_conv2d(rng):
    b, c, o = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
    k = int(rng.integers(1, 4))
    s, p = int(rng.integers(1, 3)), int(rng.integers(0, 3))
    h = int(rng.integers(k, k + 4))
    w = int(rng.integers(k, k + 4))
    x, wt, bi = _t(rng, (b, c, h, w)), _t(rng, (o, c, k, k)), _t(rng, (o,))
    return grad_check(lambda *a: ops.conv2d(*a, stride=s, padding=p), [x, wt, bi])


def _check_conv3d_t311(rng):
    b, c, o = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
    t, h, w = int(rng.integers(1, 5)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
    x, wt, bi = _t(rng, (b, c, t, h, w)), _t(rng, (o, c, 3, 1, 1)), _t(rng, (o,))
    return grad_check(ops.conv3d_t311, [x, wt, bi])


def _check_conv1d_channelwise(rng):
    t, c = int(rng.integers(1, 7)), int(rng.integers(1, 5))
    shape = (t, c) if rng.integers(2) else (int(rng.integers(1, 3)), t, c)
    x, wt, bi = _t(rng, shape), _t(rng, (c, 3)), _t(rng, (c,))
    return grad_check(ops.conv1d_channelwise, [x, wt, bi])


def _check_conv1d_temporalwise(rng):
    t, ci, co = int(rng.integers(1, 6)), int(rng.integers(1, 5)), int(rng.integers(1, 5))
    shape = (t, ci) if rng.integers(2) else (int(rng.integers(1, 3)), t, ci)
    x, wt, bi = _t(rng, shape), _t(rng, (co, ci)), _t(rng, (co,))
    return grad_check(ops.conv1d_temporalwise, [x, wt, bi])


def _check_conv1d_full(rng):
    t, ci, co = int(rng.integers(1, 6)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
    shape = (t, ci) if rng.integers(2) else (int(rng.integers(1, 3)), t, ci)
    x, wt, bi = _t(rng, shape), _t(rng, (co, ci, 3)), _t(rng, (co,))
    return grad_check(ops.conv1d_full, [x, wt, bi])


def _bn_inputs(rng):
    # First extent >= 8 keeps batch variances away from zero, where the
    # curvature of the train-mode normalization would dominate the
    # central-difference truncation error.
    ndim = int(rng.integers(2, 5))
    shape = (int(rng.integers(8, 13)),) + tuple(
        int(rng.integers(2, 5)) for _ in range(ndim - 1))
    axis = 1 if ndim == 4 else ndim - 1
    c = shape[axis]
    x, al, be = _t(rng, shape), _t(rng, (c,)), _t(rng, (c,))
    m = Tensor(rng.standard_normal(c), dtype=np.float64)
    v = Tensor(rng.uniform(0.5, 2.0, c), dtype=np.float64)
    return x, al, be, m, v, axis


def _check_batch_norm_train(rng):
    x, al, be, m, v, axis = _bn_inputs(rng)
    return grad_check(
        lambda x_, a_, b_: ops.batch_norm(x_, a_, b_, m, v, axis, training=True),
        [x, al, be])


def _check_batch_norm_infer(rng):
    x, al, be, m, v, axis = _bn_inputs(rng)
    return grad_check(
        lambda x_, a_, b_: ops.batch_norm(x_, a_, b_, m, v, axis, training=False),
        [x, al, be])


def _check_relu(rng):
    shape = tuple(int(rng.integers(1, 5)) for _ in range(int(rng.integers(1, 4))))
    return grad_check(ops.relu, [_t_away_from_zero(rng, shape)])


def _check_global_avg_pool2d(rng):
    shape = (int(rng.integers(1, 3)), int(rng.integers(1, 4)),
             int(rng.integers(1, 5)), int(rng.integers(1, 5)))
    return grad_check(ops.global_avg_pool2d, [_t(rng, shape)])


def _check_temporal_max_pool(rng):
    t, c = int(rng.integers(1, 6)), int(rng.integers(1, 4))
    shape = (t, c) if rng.integers(2) else (int(rng.integers(1, 3)), t, c)
    return grad_check(ops.temporal_max_pool, [_t_distinct_over_time(rng, shape)])


def _check_fc(rng):
    b, ci, co = int(rng.integers(1, 4)), int(rng.integers(1, 6)), int(rng.integers(1, 6))
    return grad_check(ops.fc, [_t(rng, (b, ci)), _t(rng, (co, ci)), _t(rng, (co,))])


def _check_softmax(rng):
    shape = (int(rng.integers(1, 4)), int(rng.integers(2, 6)))
    return grad_check(ops.softmax, [_t(rng, shape)])


def _check_mean_over(rng):
    shape = (int(rng.integers(1, 4)), int(rng.integers(1, 5)), int(rng.integers(1, 4)))
    axis = int(rng.integers(0, 3))
    return grad_check(lambda x: ops.mean_over(x, axis), [_t(rng, shape)])


def _check_softmax_cross_entropy(rng):
    b, k = int(rng.integers(1, 5)), int(rng.integers(2, 6))
    labels = rng.integers(0, k, size=b)
    return grad_check(lambda z: ops.softmax_cross_entropy(z, labels), [_t(rng, (b, k))])


def _check_add(rng):
    shape = tuple(int(rng.integers(1, 5)) for _ in range(int(rng.integers(1, 4))))
    return grad_check(lambda a, b: a + b, [_t(rng, shape), _t(rng, shape)])


def _check_reshape(rng):
    b, c = int(rng.integers(1, 4)), int(rng.integers(1, 5))
    return grad_check(lambda x: x.reshape((c, b)), [_t(rng, (b, c))])


def _check_transpose(rng):
    shape = tuple(int(rng.integers(1, 4)) for _ in range(3))
    axes = tuple(np.random.default_rng(int(rng.integers(1 << 30))).permutation(3))
    return grad_check(lambda x: x.transpose(axes), [_t(rng, shape)])


OP_CHECKS = {
    "conv2d": _check_conv2d,
    "conv3d_t311": _check_conv3d_t311,
    "conv1d_channelwise": _check_conv1d_channelwise,
    "conv1d_temporalwise": _check_conv1d_temporalwise,
    "conv1d_full": _check_conv1d_full,
    "batch_norm_train": _check_batch_norm_train,
    "batch_norm_infer": _check_batch_norm_infer,
    "relu": _check_relu,
    "global_avg_pool2d": _check_global_avg_pool2d,
    "temporal_max_pool": _check_temporal_max_pool,
    "fc": _check_fc,
    "softmax": _check_softmax,
    "mean_over": _check_mean_over,
    "softmax_cross_entropy": _check_softmax_cross_entropy,
    "add": _check_add,
    "reshape": _check_reshape,
    "transpose": _check_transpose,
}


def run_op_checks(op=None, instances=20, seed=0):
    """Run the standard gradient-check suite.

    Returns {op name: max relative error over ``instances`` random
    shapes}. ``op`` limits the run to a single op.
    """
    names = [op] if op else sorted(OP_CHECKS)
    unknown = [n for n in names if n not in OP_CHECKS]
    if unknown:
        raise ValueError(f"unknown op {unknown[0]!r}; known: {', '.join(sorted(OP_CHECKS))}")
    results = {}
    for name in names:
        rng = np.random.default_rng((seed, zlib.crc32(name.encode())))
        worst = 0.0
        for _ in range(instances):
            worst = max(worst, OP_CHECKS[name](rng))
        results[name] = worst
    return results
