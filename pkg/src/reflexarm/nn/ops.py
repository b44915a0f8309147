"""Differentiable op suite: arithmetic, matmul, conv/deconv, activations, losses.

Every op returns a new Tensor and, while a Tape is active, wires a backward
closure computing exact chain-rule gradients. Reductions accumulate in
float64 and cast back to the input dtype.
"""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, accumulate_grad, make_node


class ShapeError(ValueError):
    """Operand shapes violate an op contract."""


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _sum_to_shape(grad, shape):
    """Reverse numpy broadcasting: reduce grad back to the operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def bwd(g):
        if a.tracked:
            accumulate_grad(a, _sum_to_shape(g, a.data.shape))
        if b.tracked:
            accumulate_grad(b, _sum_to_shape(g, b.data.shape))

    return make_node(out_data, (a, b), bwd)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data - b.data

    def bwd(g):
        if a.tracked:
            accumulate_grad(a, _sum_to_shape(g, a.data.shape))
        if b.tracked:
            accumulate_grad(b, _sum_to_shape(-g, b.data.shape))

    return make_node(out_data, (a, b), bwd)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def bwd(g):
        if a.tracked:
            accumulate_grad(a, _sum_to_shape(g * b.data, a.data.shape))
        if b.tracked:
            accumulate_grad(b, _sum_to_shape(g * a.data, b.data.shape))

    return make_node(out_data, (a, b), bwd)


def scale(a, c):
    a = _as_tensor(a)
    c = float(c)
    out_data = a.data * c

    def bwd(g):
        accumulate_grad(a, g * c)

    return make_node(out_data, (a,), bwd)


def neg(a):
    return scale(a, -1.0)


# ---------------------------------------------------------------------------
# matmul and shape ops

def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        if a.tracked:
            accumulate_grad(a, g @ b.data.T)
        if b.tracked:
            accumulate_grad(b, a.data.T @ g)

    return make_node(out_data, (a, b), bwd)


def reshape(a, shape):
    a = _as_tensor(a)
    out_data = a.data.reshape(shape)

    def bwd(g):
        accumulate_grad(a, g.reshape(a.data.shape))

    return make_node(out_data, (a,), bwd)


def flatten(a):
    """Collapse all but the leading (batch) axis."""
    a = _as_tensor(a)
    return reshape(a, (a.data.shape[0], -1))


def concat(tensors, axis=-1):
    tensors = [_as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        parts = np.split(g, splits, axis=axis)
        for t, p in zip(tensors, parts):
            if t.tracked:
                accumulate_grad(t, p)

    return make_node(out_data, tuple(tensors), bwd)


def slice_last(a, start, stop):
    """Slice along the last axis (used to split packed heads)."""
    a = _as_tensor(a)
    out_data = a.data[..., start:stop]

    def bwd(g):
        full = np.zeros_like(a.data)
        full[..., start:stop] = g
        accumulate_grad(a, full)

    return make_node(out_data, (a,), bwd)


# ---------------------------------------------------------------------------
# activations and pointwise transcendentals

def relu(a):
    a = _as_tensor(a)
    out_data = np.maximum(a.data, 0)

    def bwd(g):
        accumulate_grad(a, g * (a.data > 0))

    return make_node(out_data, (a,), bwd)


def tanh(a):
    a = _as_tensor(a)
    out_data = np.tanh(a.data)

    def bwd(g):
        accumulate_grad(a, g * (1.0 - out_data * out_data))

    return make_node(out_data, (a,), bwd)


def sigmoid(a):
    a = _as_tensor(a)
    # numerically safe logistic
    out_data = np.empty_like(a.data)
    pos = a.data >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ex = np.exp(a.data[~pos])
    out_data[~pos] = ex / (1.0 + ex)

    def bwd(g):
        accumulate_grad(a, g * out_data * (1.0 - out_data))

    return make_node(out_data, (a,), bwd)


def softplus(a):
    a = _as_tensor(a)
    out_data = np.logaddexp(0.0, a.data).astype(a.data.dtype)

    def bwd(g):
        sig = 1.0 / (1.0 + np.exp(-a.data))
        accumulate_grad(a, g * sig)

    return make_node(out_data, (a,), bwd)


def exp(a):
    a = _as_tensor(a)
    out_data = np.exp(a.data)

    def bwd(g):
        accumulate_grad(a, g * out_data)

    return make_node(out_data, (a,), bwd)


def log(a):
    a = _as_tensor(a)
    out_data = np.log(a.data)

    def bwd(g):
        accumulate_grad(a, g / a.data)

    return make_node(out_data, (a,), bwd)


def square(a):
    a = _as_tensor(a)
    out_data = a.data * a.data

    def bwd(g):
        accumulate_grad(a, g * (2.0 * a.data))

    return make_node(out_data, (a,), bwd)


def clip(a, lo, hi):
    """Hard clip; gradient passes through inside [lo, hi], zero outside."""
    a = _as_tensor(a)
    out_data = np.clip(a.data, lo, hi)

    def bwd(g):
        accumulate_grad(a, g * ((a.data >= lo) & (a.data <= hi)))

    return make_node(out_data, (a,), bwd)


def minimum(a, b):
    """Elementwise min; gradient routes to the smaller operand (ties to a)."""
    a, b = _as_tensor(a), _as_tensor(b)
    take_a = a.data <= b.data
    out_data = np.where(take_a, a.data, b.data)

    def bwd(g):
        if a.tracked:
            accumulate_grad(a, _sum_to_shape(g * take_a, a.data.shape))
        if b.tracked:
            accumulate_grad(b, _sum_to_shape(g * ~take_a, b.data.shape))

    return make_node(out_data, (a, b), bwd)


def instance_norm(x, gain, bias, eps=1e-5):
    """Normalize each (instance, channel) plane over its spatial extent.

    x is NCHW; gain and bias have shape (C,). Variance is the biased
    estimator, matching the usual normalization-layer convention.
    """
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    if x.data.ndim != 4:
        raise ShapeError(f"instance_norm expects NCHW input, got shape {x.data.shape}")
    mu = x.data.mean(axis=(2, 3), keepdims=True, dtype=np.float64)
    var = ((x.data - mu) ** 2).mean(axis=(2, 3), keepdims=True, dtype=np.float64)
    inv = (1.0 / np.sqrt(var + eps)).astype(x.data.dtype)
    xhat = (x.data - mu.astype(x.data.dtype)) * inv
    g4 = gain.data.reshape(1, -1, 1, 1)
    out_data = xhat * g4 + bias.data.reshape(1, -1, 1, 1)

    def bwd(g):
        if bias.tracked:
            accumulate_grad(bias, g.sum(axis=(0, 2, 3), dtype=np.float64).astype(bias.data.dtype))
        if gain.tracked:
            accumulate_grad(gain, (g * xhat).sum(axis=(0, 2, 3), dtype=np.float64).astype(gain.data.dtype))
        if x.tracked:
            dxhat = g * g4
            m1 = dxhat.mean(axis=(2, 3), keepdims=True, dtype=np.float64).astype(x.data.dtype)
            m2 = (dxhat * xhat).mean(axis=(2, 3), keepdims=True, dtype=np.float64).astype(x.data.dtype)
            accumulate_grad(x, inv * (dxhat - m1 - xhat * m2))

    return make_node(out_data, (x, gain, bias), bwd)


# ---------------------------------------------------------------------------
# reductions (float64 accumulation)

def sum_(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.data.dtype)

    def bwd(g):
        if axis is None:
            accumulate_grad(a, np.broadcast_to(g, a.data.shape))
        else:
            g2 = g if keepdims else np.expand_dims(g, axis)
            accumulate_grad(a, np.broadcast_to(g2, a.data.shape))

    return make_node(out_data, (a,), bwd)


def mean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.data.shape[ax] for ax in axes]))
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# convolution (NCHW, 'same' padding, arbitrary stride)

def same_pad(size, kernel, stride):
    """TF-style 'same': output ceil(size/stride), extra padding at the end."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return out, total // 2, total - total // 2


def _im2col(xp, kh, kw, stride, oh, ow):
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + oh * stride:stride, j:j + ow * stride:stride]
    return cols.reshape(n, c * kh * kw, oh * ow)


def _col2im(cols, xp_shape, kh, kw, stride, oh, ow):
    n, c = xp_shape[:2]
    cols = cols.reshape(n, c, kh, kw, oh, ow)
    xp = np.zeros(xp_shape, dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + oh * stride:stride, j:j + ow * stride:stride] += cols[:, :, i, j]
    return xp


def _conv_fwd(x, w, stride):
    n, c, h, wd = x.shape
    oc, ic, kh, kw = w.shape
    oh, pt, pb = same_pad(h, kh, stride)
    ow, pl, pr = same_pad(wd, kw, stride)
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    cols = _im2col(xp, kh, kw, stride, oh, ow)            # (N, C*KH*KW, OH*OW)
    out = w.reshape(oc, -1) @ cols                        # (N, OC, OH*OW) via broadcasting
    return out.reshape(n, oc, oh, ow), cols, xp.shape, (pt, pl, oh, ow)


def _conv_bwd_data(dy, w, xp_shape, stride, geom):
    oc = w.shape[0]
    kh, kw = w.shape[2], w.shape[3]
    pt, pl, oh, ow = geom
    dy2 = dy.reshape(dy.shape[0], oc, oh * ow)
    dcols = w.reshape(oc, -1).T @ dy2                     # (N, C*KH*KW, OH*OW)
    return _col2im(dcols, xp_shape, kh, kw, stride, oh, ow)


def conv2d(x, w, b=None, stride=1):
    """2-d convolution, NCHW, 'same' padding. Weight (OC, IC, KH, KW)."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input, got shape {x.data.shape}")
    if x.data.shape[1] != w.data.shape[1]:
        raise ShapeError(f"conv2d channel mismatch: input {x.data.shape}, weight {w.data.shape}")
    out_data, cols, xp_shape, geom = _conv_fwd(x.data, w.data, stride)
    n, c, h, wd = x.data.shape
    pt, pl, oh, ow = geom
    parents = (x, w)

    if b is not None:
        b = _as_tensor(b)
        out_data = out_data + b.data.reshape(1, -1, 1, 1)
        parents = (x, w, b)

    def bwd(g):
        oc = w.data.shape[0]
        if b is not None and b.tracked:
            accumulate_grad(b, g.sum(axis=(0, 2, 3), dtype=np.float64).astype(b.data.dtype))
        if w.tracked:
            g2 = g.reshape(n, oc, oh * ow)
            # (OC, C*KH*KW), summed over batch and positions
            dw = np.tensordot(g2, cols, axes=([0, 2], [0, 2]))
            accumulate_grad(w, dw.reshape(w.data.shape).astype(w.data.dtype))
        if x.tracked:
            dxp = _conv_bwd_data(g, w.data, xp_shape, stride, geom)
            accumulate_grad(x, dxp[:, :, pt:pt + h, pl:pl + wd])

    return make_node(out_data, parents, bwd)


def conv_transpose2d(x, w, b=None, stride=2):
    """Transposed conv (stride-s upsampling), NCHW. Weight (IC, OC, KH, KW).

    Exactly the adjoint of ``conv2d`` with 'same' padding: output spatial size
    is input*stride, so an encoder/decoder pair mirrors shapes.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 4:
        raise ShapeError(f"conv_transpose2d expects NCHW input, got shape {x.data.shape}")
    if x.data.shape[1] != w.data.shape[0]:
        raise ShapeError(f"conv_transpose2d channel mismatch: input {x.data.shape}, weight {w.data.shape}")
    n, ic, h, wd = x.data.shape
    _, oc, kh, kw = w.data.shape
    out_h, out_w = h * stride, wd * stride
    # mirror conv: (N, OC, out_h, out_w) -> (N, IC, h, wd) with weight (IC, OC, KH, KW)
    _, pt, pb = same_pad(out_h, kh, stride)
    _, pl, pr = same_pad(out_w, kw, stride)
    xp_shape = (n, oc, out_h + pt + pb, out_w + pl + pr)
    w2 = w.data.reshape(ic, oc * kh * kw)

    # forward of the deconv = backward-data of the mirror conv, with dy := x
    dy2 = x.data.reshape(n, ic, h * wd)
    dcols = w2.T @ dy2                                     # (N, OC*KH*KW, H*W)
    full = _col2im(dcols, xp_shape, kh, kw, stride, h, wd)
    out_data = full[:, :, pt:pt + out_h, pl:pl + out_w]
    parents = (x, w)
    if b is not None:
        b = _as_tensor(b)
        out_data = out_data + b.data.reshape(1, -1, 1, 1)
        parents = (x, w, b)

    def bwd(g):
        gp = np.pad(g, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
        cols = _im2col(gp, kh, kw, stride, h, wd)          # (N, OC*KH*KW, H*W)
        if b is not None and b.tracked:
            accumulate_grad(b, g.sum(axis=(0, 2, 3), dtype=np.float64).astype(b.data.dtype))
        if w.tracked:
            dw = np.tensordot(x.data.reshape(n, ic, h * wd), cols, axes=([0, 2], [0, 2]))
            accumulate_grad(w, dw.reshape(w.data.shape).astype(w.data.dtype))
        if x.tracked:
            dx = (w2 @ cols).reshape(n, ic, h, wd)
            accumulate_grad(x, dx)

    return make_node(out_data, parents, bwd)


# ---------------------------------------------------------------------------
# stochastic node and losses

def gaussian_reparameterize(mu, logvar, noise):
    """z = mu + exp(logvar/2) * noise, with noise treated as a constant."""
    mu, logvar = _as_tensor(mu), _as_tensor(logvar)
    noise = noise.data if isinstance(noise, Tensor) else np.asarray(noise, dtype=mu.data.dtype)
    if noise.shape != mu.data.shape:
        raise ShapeError(f"noise shape {noise.shape} != mu shape {mu.data.shape}")
    std = np.exp(0.5 * logvar.data)
    out_data = mu.data + std * noise

    def bwd(g):
        if mu.tracked:
            accumulate_grad(mu, g)
        if logvar.tracked:
            accumulate_grad(logvar, g * (0.5 * std * noise))

    return make_node(out_data, (mu, logvar), bwd)


def mse_loss(pred, target, reduction="mean"):
    """Squared-error loss; target is a constant."""
    pred = _as_tensor(pred)
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.data.dtype)
    if t.shape != pred.data.shape:
        raise ShapeError(f"mse_loss shapes differ: {pred.data.shape} vs {t.shape}")
    diff = pred.data - t
    if reduction == "mean":
        out_data = np.asarray(np.mean(diff * diff, dtype=np.float64), dtype=pred.data.dtype)
        coef = 2.0 / diff.size
    elif reduction == "sum":
        out_data = np.asarray(np.sum(diff * diff, dtype=np.float64), dtype=pred.data.dtype)
        coef = 2.0
    else:
        raise ValueError(f"unknown reduction {reduction!r}")

    def bwd(g):
        accumulate_grad(pred, (g * coef) * diff)

    return make_node(out_data, (pred,), bwd)


def l1_loss(pred, target, reduction="mean"):
    """Absolute-error loss; target is a constant. Subgradient 0 at ties."""
    pred = _as_tensor(pred)
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.data.dtype)
    if t.shape != pred.data.shape:
        raise ShapeError(f"l1_loss shapes differ: {pred.data.shape} vs {t.shape}")
    diff = pred.data - t
    if reduction == "mean":
        out_data = np.asarray(np.mean(np.abs(diff), dtype=np.float64), dtype=pred.data.dtype)
        coef = 1.0 / diff.size
    elif reduction == "sum":
        out_data = np.asarray(np.sum(np.abs(diff), dtype=np.float64), dtype=pred.data.dtype)
        coef = 1.0
    else:
        raise ValueError(f"unknown reduction {reduction!r}")

    def bwd(g):
        accumulate_grad(pred, (g * coef) * np.sign(diff))

    return make_node(out_data, (pred,), bwd)


def kl_standard_normal(mu, logvar):
    """KL(N(mu, diag exp(logvar)) || N(0, I)), summed over dims, mean over batch."""
    mu, logvar = _as_tensor(mu), _as_tensor(logvar)
    n = mu.data.shape[0]
    var = np.exp(logvar.data)
    per = 0.5 * (mu.data * mu.data + var - logvar.data - 1.0)
    out_data = np.asarray(per.sum(dtype=np.float64) / n, dtype=mu.data.dtype)

    def bwd(g):
        c = g / n
        if mu.tracked:
            accumulate_grad(mu, c * mu.data)
        if logvar.tracked:
            accumulate_grad(logvar, c * 0.5 * (var - 1.0))

    return make_node(out_data, (mu, logvar), bwd)


_LOG_2PI = float(np.log(2.0 * np.pi))
_SQUASH_EPS = 1e-6


def tanh_gaussian_sample(mean, log_std, noise):
    """Sample a tanh-squashed Gaussian and its log-density, reparameterized.

    Returns (action in (-1,1), log_prob summed over action dims). The squash
    correction uses log(1 - tanh(u)^2 + eps) for numerical safety.
    """
    mean, log_std = _as_tensor(mean), _as_tensor(log_std)
    std = exp(log_std)
    pre = add(mean, mul(std, Tensor(np.asarray(noise, dtype=mean.data.dtype))))
    action = tanh(pre)
    # log N(pre; mean, std) = -0.5*noise^2 - log_std - 0.5 log 2pi  (noise constant)
    noise_arr = np.asarray(noise, dtype=mean.data.dtype)
    gauss = add(scale(Tensor(noise_arr * noise_arr), -0.5),
                add(neg(log_std), Tensor(np.full_like(noise_arr, -0.5 * _LOG_2PI))))
    correction = log(add(sub(Tensor(np.asarray(1.0, dtype=mean.data.dtype)), square(action)),
                         Tensor(np.asarray(_SQUASH_EPS, dtype=mean.data.dtype))))
    logp = sum_(sub(gauss, correction), axis=-1)
    return action, logp
