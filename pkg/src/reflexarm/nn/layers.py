"""Layer modules: parameter registration plus thin wrappers over ops.

Parameters are discovered by walking attributes in definition order, so a
module's checkpoint layout is stable as long as its __init__ is.
"""
from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Parameter


class Module:
    """Base class giving ordered parameter discovery and name paths."""

    def named_parameters(self, prefix=""):
        out = []
        for name, value in vars(self).items():
            path = f"{prefix}.{name}" if prefix else name
            if isinstance(value, Parameter):
                out.append((path, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(path))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{path}.{i}"))
                    elif isinstance(item, Parameter):
                        out.append((f"{path}.{i}", item))
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self):
        return sum(p.data.size for p in self.parameters())


def he_normal(rng, shape, fan_in, dtype=np.float32):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(dtype)


def glorot_uniform(rng, shape, fan_in, fan_out, dtype=np.float32):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape).astype(dtype)


class Dense(Module):
    """Affine map x @ W + b with x of shape (N, in_dim)."""

    def __init__(self, in_dim, out_dim, rng, init="he"):
        if init == "he":
            w = he_normal(rng, (in_dim, out_dim), in_dim)
        elif init == "glorot":
            w = glorot_uniform(rng, (in_dim, out_dim), in_dim, out_dim)
        else:
            raise ValueError(f"unknown init {init!r}")
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(out_dim, dtype=np.float32))

    def __call__(self, x):
        return ops.add(ops.matmul(x, self.weight), self.bias)


class Conv2d(Module):
    """'same'-padded convolution, NCHW, weight (OC, IC, KH, KW)."""

    def __init__(self, in_ch, out_ch, kernel, stride, rng):
        fan_in = in_ch * kernel * kernel
        self.weight = Parameter(he_normal(rng, (out_ch, in_ch, kernel, kernel), fan_in))
        self.bias = Parameter(np.zeros(out_ch, dtype=np.float32))
        self.stride = stride

    def __call__(self, x):
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride)


class ConvTranspose2d(Module):
    """Stride-s upsampling convolution, NCHW, weight (IC, OC, KH, KW)."""

    def __init__(self, in_ch, out_ch, kernel, stride, rng):
        fan_in = in_ch * kernel * kernel
        self.weight = Parameter(he_normal(rng, (in_ch, out_ch, kernel, kernel), fan_in))
        self.bias = Parameter(np.zeros(out_ch, dtype=np.float32))
        self.stride = stride

    def __call__(self, x):
        return ops.conv_transpose2d(x, self.weight, self.bias, stride=self.stride)


class InstanceNorm(Module):
    def __init__(self, channels, eps=1e-5):
        self.gain = Parameter(np.ones(channels, dtype=np.float32))
        self.bias = Parameter(np.zeros(channels, dtype=np.float32))
        self.eps = eps

    def __call__(self, x):
        return ops.instance_norm(x, self.gain, self.bias, eps=self.eps)


class ResidualBlock(Module):
    """conv-norm-relu-conv-norm with identity skip, stride 1."""

    def __init__(self, channels, rng, kernel=3):
        self.conv1 = Conv2d(channels, channels, kernel, 1, rng)
        self.norm1 = InstanceNorm(channels)
        self.conv2 = Conv2d(channels, channels, kernel, 1, rng)
        self.norm2 = InstanceNorm(channels)

    def __call__(self, x):
        h = ops.relu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return ops.add(x, h)


class MLP(Module):
    """Dense stack with ReLU between layers and a linear head."""

    def __init__(self, sizes, rng):
        if len(sizes) < 2:
            raise ValueError("MLP needs at least input and output sizes")
        self.layers = [Dense(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]

    def __call__(self, x):
        for layer in self.layers[:-1]:
            x = ops.relu(layer(x))
        return self.layers[-1](x)
