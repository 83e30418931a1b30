"""Parameterised layers built on the autodiff Tensor.

Every layer registers its weights in declaration order; `parameters()`
returns them in that order, which is also the checkpoint blob order.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, concat, conv2d, conv2d_transpose, softmax


class Module:
    """Base class: tracks parameters and submodules in declaration order."""

    def __init__(self):
        object.__setattr__(self, "_params", [])
        object.__setattr__(self, "_modules", [])

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params.append(value)
        elif isinstance(value, Module):
            self._modules.append(value)
        object.__setattr__(self, name, value)

    def parameters(self):
        params = list(self._params)
        for module in self._modules:
            params.extend(module.parameters())
        return params

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def n_parameters(self):
        return sum(p.size for p in self.parameters())


def _glorot(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


class Dense(Module):
    """Affine map on the trailing axis: x @ W + b."""

    def __init__(self, in_features, out_features, rng, bias=True):
        super().__init__()
        self.weight = _glorot(rng, in_features, out_features,
                              (in_features, out_features))
        self.bias = None
        if bias:
            self.bias = Tensor(np.zeros(out_features), requires_grad=True)

    def __call__(self, x):
        out = x @ self.weight
        if self.bias is not None:
            out = out + self.bias
        return out


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel, stride, padding,
                 rng):
        super().__init__()
        fan_in = in_channels * kernel * kernel
        fan_out = out_channels * kernel * kernel
        self.weight = _glorot(rng, fan_in, fan_out,
                              (out_channels, in_channels, kernel, kernel))
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True)
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        out = conv2d(x, self.weight, stride=self.stride,
                     padding=self.padding)
        return out + self.bias.reshape(1, -1, 1, 1)


class ConvTranspose2d(Module):
    def __init__(self, in_channels, out_channels, kernel, stride, padding,
                 rng):
        super().__init__()
        fan_in = in_channels * kernel * kernel
        fan_out = out_channels * kernel * kernel
        self.weight = _glorot(rng, fan_in, fan_out,
                              (in_channels, out_channels, kernel, kernel))
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True)
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        out = conv2d_transpose(x, self.weight, stride=self.stride,
                               padding=self.padding)
        return out + self.bias.reshape(1, -1, 1, 1)


class GraphAttention(Module):
    """Single-head graph attention over a fixed adjacency.

    Scores are additive: score(i, j) = leaky_relu(a_src . h_i + a_dst . h_j)
    masked to edges of the adjacency (which includes self loops), then
    softmax-normalised over neighbours j and used to average the projected
    features.  No output nonlinearity; callers stack their own.
    """

    def __init__(self, in_features, out_features, rng, slope=0.2):
        super().__init__()
        self.weight = _glorot(rng, in_features, out_features,
                              (in_features, out_features))
        self.att_src = _glorot(rng, out_features, 1, (out_features, 1))
        self.att_dst = _glorot(rng, out_features, 1, (out_features, 1))
        self.slope = slope

    def __call__(self, x, adjacency_mask):
        """x: (B, N, in), adjacency_mask: (N, N) of {0, 1} floats."""
        h = x @ self.weight                       # (B, N, out)
        score_src = h @ self.att_src              # (B, N, 1)
        score_dst = h @ self.att_dst              # (B, N, 1)
        scores = score_src + score_dst.swap_last_axes()   # (B, N, N)
        scores = scores.leaky_relu(self.slope)
        # Non-edges get a large negative logit so softmax ignores them.
        scores = scores * adjacency_mask + (1.0 - adjacency_mask) * -1e9
        alpha = softmax(scores, axis=-1)
        return alpha @ h


class MLPHead(Module):
    """Two-layer head: dense -> relu -> dense."""

    def __init__(self, in_features, hidden, out_features, rng):
        super().__init__()
        self.lin1 = Dense(in_features, hidden, rng)
        self.lin2 = Dense(hidden, out_features, rng)

    def __call__(self, x):
        return self.lin2(self.lin1(x).relu())


__all__ = [
    "Module", "Dense", "Conv2d", "ConvTranspose2d", "GraphAttention",
    "MLPHead", "concat",
]
