"""Forward/backward operators for the network graph.

All ops take and return :class:`~stnet.tensor.Tensor`; gradients flow
only to inputs with ``requires_grad``. Convolutions use cross-correlation
(no kernel flip) and zero padding.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, make_node

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def _require(cond, msg):
    if not cond:
        raise ValueError(msg)


# ---------------------------------------------------------------------------
# 2D / 3D convolution
# ---------------------------------------------------------------------------

def conv2d(x, weight, bias, stride=1, padding=0):
    """Strided 2D cross-correlation: [B,C,H,W] -> [B,O,H',W'].

    H' = floor((H + 2*padding - kh) / stride) + 1, likewise W'.
    """
    _require(x.ndim == 4, f"conv2d input must be 4D, got {x.shape}")
    _require(weight.ndim == 4, f"conv2d weight must be 4D, got {weight.shape}")
    b_, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    _require(ci == c, f"conv2d channel mismatch: input has {c}, weight expects {ci}")
    _require(bias.shape == (o,), f"conv2d bias must have shape ({o},), got {bias.shape}")
    _require(stride >= 1 and padding >= 0, "conv2d stride must be >=1 and padding >=0")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    _require(ho >= 1 and wo >= 1,
             f"conv2d output would be empty for input {x.shape} and kernel {weight.shape}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    y = np.zeros((b_, o, ho, wo), dtype=np.result_type(x.data, weight.data))
    # Accumulate one 1x1 contraction per kernel offset; avoids an im2col copy.
    for i in range(kh):
        for j in range(kw):
            xs = xp[:, :, i:i + stride * (ho - 1) + 1:stride,
                    j:j + stride * (wo - 1) + 1:stride]
            y += np.einsum("bchw,oc->bohw", xs, weight.data[:, :, i, j], optimize=True)
    y += bias.data[None, :, None, None]

    out = make_node(y, (x, weight, bias), "conv2d")
    if out._prev:
        def backward(g):
            if weight.requires_grad or x.requires_grad:
                gxp = np.zeros_like(xp) if x.requires_grad else None
                for i in range(kh):
                    for j in range(kw):
                        sl = (slice(None), slice(None),
                              slice(i, i + stride * (ho - 1) + 1, stride),
                              slice(j, j + stride * (wo - 1) + 1, stride))
                        if weight.requires_grad:
                            gw = np.einsum("bohw,bchw->oc", g, xp[sl], optimize=True)
                            if weight.grad is None:
                                weight.grad = np.zeros_like(weight.data)
                            weight.grad[:, :, i, j] += gw
                        if x.requires_grad:
                            gxp[sl] += np.einsum("bohw,oc->bchw", g,
                                                 weight.data[:, :, i, j], optimize=True)
                if x.requires_grad:
                    if padding:
                        x.accumulate_grad(gxp[:, :, padding:padding + h, padding:padding + w])
                    else:
                        x.accumulate_grad(gxp)
            if bias.requires_grad:
                bias.accumulate_grad(g.sum(axis=(0, 2, 3)))
        out._backward = backward
    return out


def conv3d_t311(x, weight, bias, temporal_padding=1):
    """Temporal 3D convolution with kernel (3,1,1): [B,C,T,H,W] -> [B,O,T,H,W].

    Spatial kernel is fixed to 1x1; temporal stride 1 with zero padding
    (default 1, which preserves T).
    """
    _require(x.ndim == 5, f"conv3d_t311 input must be 5D, got {x.shape}")
    _require(weight.ndim == 5, f"conv3d_t311 weight must be 5D, got {weight.shape}")
    b_, c, t, h, w = x.shape
    o, ci, kt, kh, kw = weight.shape
    _require(t >= 1, "conv3d_t311 requires T >= 1")
    _require(kh == 1 and kw == 1,
             f"conv3d_t311 supports only 1x1 spatial kernels, got {kh}x{kw}")
    _require(kt == 3, f"conv3d_t311 temporal kernel must be 3, got {kt}")
    _require(ci == c, f"conv3d_t311 channel mismatch: input has {c}, weight expects {ci}")
    _require(bias.shape == (o,), f"conv3d_t311 bias must have shape ({o},)")
    tp = temporal_padding
    to = t + 2 * tp - 2
    _require(to >= 1, "conv3d_t311 output would be empty")

    xp = np.pad(x.data, ((0, 0), (0, 0), (tp, tp), (0, 0), (0, 0)))
    y = np.zeros((b_, o, to, h, w), dtype=np.result_type(x.data, weight.data))
    for k in range(3):
        y += np.einsum("bcthw,oc->bothw", xp[:, :, k:k + to],
                       weight.data[:, :, k, 0, 0], optimize=True)
    y += bias.data[None, :, None, None, None]

    out = make_node(y, (x, weight, bias), "conv3d_t311")
    if out._prev:
        def backward(g):
            if x.requires_grad or weight.requires_grad:
                gxp = np.zeros_like(xp) if x.requires_grad else None
                for k in range(3):
                    xs = xp[:, :, k:k + to]
                    if weight.requires_grad:
                        gw = np.einsum("bothw,bcthw->oc", g, xs, optimize=True)
                        if weight.grad is None:
                            weight.grad = np.zeros_like(weight.data)
                        weight.grad[:, :, k, 0, 0] += gw
                    if x.requires_grad:
                        gxp[:, :, k:k + to] += np.einsum(
                            "bothw,oc->bcthw", g, weight.data[:, :, k, 0, 0],
                            optimize=True)
                if x.requires_grad:
                    x.accumulate_grad(gxp[:, :, tp:tp + t] if tp else gxp)
            if bias.requires_grad:
                bias.accumulate_grad(g.sum(axis=(0, 2, 3, 4)))
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# Separable 1D convolutions over feature sequences ([T,C] or [B,T,C])
# ---------------------------------------------------------------------------

def _as_seq(x, op):
    _require(x.ndim in (2, 3), f"{op} expects [T,C] or [B,T,C], got {x.shape}")
    return x.ndim == 2


def conv1d_channelwise(x, weight, bias, padding=1):
    """Depthwise temporal convolution: one length-3 kernel per channel.

    y[i,j] = sum_k x[i+k-1, j] * weight[j, k] + bias[j], with rows outside
    [0, T) contributing zero.
    """
    squeeze = _as_seq(x, "conv1d_channelwise")
    c = x.shape[-1]
    _require(weight.shape == (c, 3),
             f"conv1d_channelwise weight must have shape ({c}, 3), got {weight.shape}")
    _require(bias.shape == (c,), f"conv1d_channelwise bias must have shape ({c},)")
    xd = x.data[None] if squeeze else x.data
    t = xd.shape[1]
    to = t + 2 * padding - 2
    _require(to >= 1, "conv1d_channelwise output would be empty")

    xp = np.pad(xd, ((0, 0), (padding, padding), (0, 0)))
    y = np.zeros((xd.shape[0], to, c), dtype=np.result_type(xd, weight.data))
    for k in range(3):
        y += xp[:, k:k + to] * weight.data[:, k][None, None, :]
    y += bias.data[None, None, :]
    if squeeze:
        y = y[0]

    out = make_node(y, (x, weight, bias), "conv1d_channelwise")
    if out._prev:
        def backward(g):
            gb = g[None] if squeeze else g
            if x.requires_grad or weight.requires_grad:
                gxp = np.zeros_like(xp) if x.requires_grad else None
                for k in range(3):
                    if weight.requires_grad:
                        gw = np.einsum("btc,btc->c", gb, xp[:, k:k + to], optimize=True)
                        if weight.grad is None:
                            weight.grad = np.zeros_like(weight.data)
                        weight.grad[:, k] += gw
                    if x.requires_grad:
                        gxp[:, k:k + to] += gb * weight.data[:, k][None, None, :]
                if x.requires_grad:
                    gx = gxp[:, padding:padding + t] if padding else gxp
                    x.accumulate_grad(gx[0] if squeeze else gx)
            if bias.requires_grad:
                bias.accumulate_grad(gb.sum(axis=(0, 1)))
        out._backward = backward
    return out


def conv1d_temporalwise(x, weight, bias):
    """Pointwise (kernel size 1) convolution mixing channels per timestep.

    Equivalent to x @ weight.T + bias applied independently at every
    timestep, so the temporal receptive field is 1.
    """
    _as_seq(x, "conv1d_temporalwise")
    ci = x.shape[-1]
    _require(weight.ndim == 2 and weight.shape[1] == ci,
             f"conv1d_temporalwise weight must have shape (C_out, {ci}), got {weight.shape}")
    co = weight.shape[0]
    _require(bias.shape == (co,), f"conv1d_temporalwise bias must have shape ({co},)")

    y = x.data @ weight.data.T + bias.data
    out = make_node(y, (x, weight, bias), "conv1d_temporalwise")
    if out._prev:
        def backward(g):
            if x.requires_grad:
                x.accumulate_grad(g @ weight.data)
            if weight.requires_grad:
                g2 = g.reshape(-1, co)
                x2 = x.data.reshape(-1, ci)
                weight.accumulate_grad(g2.T @ x2)
            if bias.requires_grad:
                bias.accumulate_grad(g.reshape(-1, co).sum(axis=0))
        out._backward = backward
    return out


def conv1d_full(x, weight, bias, padding=1):
    """Ordinary (non-separable) temporal convolution with kernel size 3.

    weight has shape [C_out, C_in, 3]; mixes all channels within a
    3-step temporal window.
    """
    squeeze = _as_seq(x, "conv1d_full")
    ci = x.shape[-1]
    _require(weight.ndim == 3 and weight.shape[1] == ci and weight.shape[2] == 3,
             f"conv1d_full weight must have shape (C_out, {ci}, 3), got {weight.shape}")
    co = weight.shape[0]
    _require(bias.shape == (co,), f"conv1d_full bias must have shape ({co},)")
    xd = x.data[None] if squeeze else x.data
    t = xd.shape[1]
    to = t + 2 * padding - 2
    _require(to >= 1, "conv1d_full output would be empty")

    xp = np.pad(xd, ((0, 0), (padding, padding), (0, 0)))
    y = np.zeros((xd.shape[0], to, co), dtype=np.result_type(xd, weight.data))
    for k in range(3):
        y += xp[:, k:k + to] @ weight.data[:, :, k].T
    y += bias.data[None, None, :]
    if squeeze:
        y = y[0]

    out = make_node(y, (x, weight, bias), "conv1d_full")
    if out._prev:
        def backward(g):
            gb = g[None] if squeeze else g
            if x.requires_grad or weight.requires_grad:
                gxp = np.zeros_like(xp) if x.requires_grad else None
                for k in range(3):
                    if weight.requires_grad:
                        gw = np.einsum("bto,btc->oc", gb, xp[:, k:k + to], optimize=True)
                        if weight.grad is None:
                            weight.grad = np.zeros_like(weight.data)
                        weight.grad[:, :, k] += gw
                    if x.requires_grad:
                        gxp[:, k:k + to] += gb @ weight.data[:, :, k]
                if x.requires_grad:
                    gx = gxp[:, padding:padding + t] if padding else gxp
                    x.accumulate_grad(gx[0] if squeeze else gx)
            if bias.requires_grad:
                bias.accumulate_grad(gb.sum(axis=(0, 1)))
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

def batch_norm(x, alpha, beta, running_mean, running_var, axis, training,
               momentum=BN_MOMENTUM, eps=BN_EPS):
    """Batch normalization over every axis except ``axis`` (the channel axis).

    Inference: y = (x - m) / sqrt(var + eps) * alpha + beta with the
    accumulated running statistics. Training normalizes with batch
    statistics and updates the running buffers in place:
    m <- momentum * m + (1 - momentum) * batch_mean (same for var).
    Running buffers never receive gradients.
    """
    axis = axis % x.ndim
    c = x.shape[axis]
    for name, p in (("alpha", alpha), ("beta", beta),
                    ("running_mean", running_mean), ("running_var", running_var)):
        _require(p.shape == (c,), f"batch_norm {name} must have shape ({c},), got {p.shape}")
    reduce_axes = tuple(i for i in range(x.ndim) if i != axis)
    n = int(np.prod([x.shape[i] for i in reduce_axes])) if reduce_axes else 1
    bshape = tuple(c if i == axis else 1 for i in range(x.ndim))

    if training:
        _require(x.size > 0, "batch_norm training mode requires a non-empty batch")
        mu = x.data.mean(axis=reduce_axes)
        xc = x.data - mu.reshape(bshape)
        var = np.mean(xc * xc, axis=reduce_axes)
        running_mean.data[...] = momentum * running_mean.data + (1 - momentum) * mu
        running_var.data[...] = momentum * running_var.data + (1 - momentum) * var
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv.reshape(bshape)
    else:
        inv = 1.0 / np.sqrt(running_var.data + eps)
        xhat = (x.data - running_mean.data.reshape(bshape)) * inv.reshape(bshape)

    y = xhat * alpha.data.reshape(bshape) + beta.data.reshape(bshape)
    out = make_node(y, (x, alpha, beta), "batch_norm")
    if out._prev:
        def backward(g):
            if alpha.requires_grad:
                alpha.accumulate_grad(np.sum(g * xhat, axis=reduce_axes))
            if beta.requires_grad:
                beta.accumulate_grad(g.sum(axis=reduce_axes))
            if x.requires_grad:
                ga = g * alpha.data.reshape(bshape)
                if training:
                    s1 = ga.sum(axis=reduce_axes).reshape(bshape)
                    s2 = np.sum(ga * xhat, axis=reduce_axes).reshape(bshape)
                    gx = (inv.reshape(bshape) / n) * (n * ga - s1 - xhat * s2)
                else:
                    gx = ga * inv.reshape(bshape)
                x.accumulate_grad(gx)
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# Activations, pooling, linear layers
# ---------------------------------------------------------------------------

def relu(x):
    mask = x.data > 0
    out = make_node(np.where(mask, x.data, 0), (x,), "relu")
    if out._prev:
        def backward(g):
            x.accumulate_grad(g * mask)
        out._backward = backward
    return out


def global_avg_pool2d(x):
    """Spatial mean per channel: [B,C,H,W] -> [B,C]."""
    _require(x.ndim == 4, f"global_avg_pool2d input must be 4D, got {x.shape}")
    b_, c, h, w = x.shape
    out = make_node(x.data.mean(axis=(2, 3)), (x,), "global_avg_pool2d")
    if out._prev:
        def backward(g):
            x.accumulate_grad(np.broadcast_to(g[:, :, None, None],
                                              x.data.shape) / (h * w))
        out._backward = backward
    return out


def temporal_max_pool(x):
    """Max over the time axis: [T,C] -> [C] or [B,T,C] -> [B,C].

    Gradient is routed to the first occurrence of the per-channel max.
    """
    _as_seq(x, "temporal_max_pool")
    taxis = x.ndim - 2
    _require(x.shape[taxis] >= 1, "temporal_max_pool requires T >= 1")
    idx = np.argmax(x.data, axis=taxis)
    y = np.take_along_axis(x.data, np.expand_dims(idx, taxis), axis=taxis)
    out = make_node(np.squeeze(y, axis=taxis), (x,), "temporal_max_pool")
    if out._prev:
        def backward(g):
            gx = np.zeros_like(x.data)
            np.put_along_axis(gx, np.expand_dims(idx, taxis),
                              np.expand_dims(g, taxis), axis=taxis)
            x.accumulate_grad(gx)
        out._backward = backward
    return out


def max_pool2d(x, kernel=3, stride=2, padding=1):
    """Spatial max pooling (used by the 7x7-stem presets after the stem conv).

    Gradient is routed to the first occurrence of each window max.
    """
    _require(x.ndim == 4, f"max_pool2d input must be 4D, got {x.shape}")
    b_, c, h, w = x.shape
    ho = (h + 2 * padding - kernel) // stride + 1
    wo = (w + 2 * padding - kernel) // stride + 1
    _require(ho >= 1 and wo >= 1, "max_pool2d output would be empty")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                constant_values=-np.inf)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kernel, kernel), axis=(2, 3))
    win = win[:, :, ::stride, ::stride].reshape(b_, c, ho, wo, kernel * kernel)
    idx = np.argmax(win, axis=-1)
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    out = make_node(y, (x,), "max_pool2d")
    if out._prev:
        def backward(g):
            gxp = np.zeros_like(xp)
            ii, jj = np.unravel_index(idx, (kernel, kernel))
            bi, ci, hi, wi = np.indices(idx.shape)
            rows = hi * stride + ii
            cols = wi * stride + jj
            np.add.at(gxp, (bi, ci, rows, cols), g)
            x.accumulate_grad(gxp[:, :, padding:padding + h, padding:padding + w]
                              if padding else gxp)
        out._backward = backward
    return out


def fc(x, weight, bias):
    """Affine map: [B,C_in] -> [B,C_out]."""
    _require(x.ndim == 2, f"fc input must be 2D, got {x.shape}")
    ci = x.shape[1]
    _require(weight.ndim == 2 and weight.shape[1] == ci,
             f"fc weight must have shape (C_out, {ci}), got {weight.shape}")
    _require(bias.shape == (weight.shape[0],),
             f"fc bias must have shape ({weight.shape[0]},)")
    out = make_node(x.data @ weight.data.T + bias.data, (x, weight, bias), "fc")
    if out._prev:
        def backward(g):
            if x.requires_grad:
                x.accumulate_grad(g @ weight.data)
            if weight.requires_grad:
                weight.accumulate_grad(g.T @ x.data)
            if bias.requires_grad:
                bias.accumulate_grad(g.sum(axis=0))
        out._backward = backward
    return out


def softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    out = make_node(s, (x,), "softmax")
    if out._prev:
        def backward(g):
            dot = np.sum(g * s, axis=axis, keepdims=True)
            x.accumulate_grad(s * (g - dot))
        out._backward = backward
    return out


def mean_over(x, axis):
    """Mean over one axis, e.g. averaging per-snippet scores."""
    n = x.shape[axis]
    out = make_node(x.data.mean(axis=axis), (x,), "mean_over")
    if out._prev:
        def backward(g):
            x.accumulate_grad(np.broadcast_to(np.expand_dims(g, axis),
                                              x.data.shape) / n)
        out._backward = backward
    return out


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer class labels.

    Numerically stabilized by max subtraction. Gradient w.r.t. logits is
    (softmax - one_hot) / batch_size.
    """
    _require(logits.ndim == 2, f"softmax_cross_entropy logits must be 2D, got {logits.shape}")
    b_, k = logits.shape
    labels = np.asarray(labels)
    _require(labels.shape == (b_,), f"labels must have shape ({b_},), got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label out of range [0, {k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(b_), labels].mean()
    out = make_node(np.asarray(loss, dtype=logits.dtype), (logits,), "softmax_cross_entropy")
    if out._prev:
        p = np.exp(logp)
        def backward(g):
            gl = p.copy()
            gl[np.arange(b_), labels] -= 1.0
            logits.accumulate_grad(gl * (g / b_))
        out._backward = backward
    return out
