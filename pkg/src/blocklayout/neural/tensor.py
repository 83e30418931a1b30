"""Reverse-mode automatic differentiation on float64 numpy arrays.

A Tensor wraps an ndarray and records the operations that produced it on
a tape (a DAG of parent links plus backward closures).  Calling
``backward()`` on a scalar walks the tape in reverse topological order
and accumulates gradients into every tensor created with
``requires_grad=True``.

Design constraints:
  - everything is float64; no implicit down-casting
  - binary ops broadcast like numpy; gradients are summed back to the
    unbroadcast shape
  - matmul supports stacked (batched) operands
  - convolution and transposed convolution share one set of index
    helpers so the forward of one is the input-gradient of the other
"""

from __future__ import annotations

import numpy as np


class TapeError(RuntimeError):
    """Raised for malformed autodiff graphs or misuse of backward()."""


def _unbroadcast(grad, shape):
    """Sum grad down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Node in the autodiff tape; holds data and (after backward) grad."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- construction helpers -------------------------------------------

    @classmethod
    def _from_op(cls, data, parents, backward):
        out = cls(data)
        tracked = tuple(p for p in parents if p.requires_grad or p._parents)
        if tracked:
            out.requires_grad = True
            out._parents = tracked
            out._backward = backward
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return "Tensor(shape=%s, grad=%s)" % (
            self.data.shape, self.requires_grad)

    def detach(self):
        """Copy of this tensor cut off from the tape."""
        return Tensor(self.data.copy())

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    # -- backward pass ---------------------------------------------------

    def backward(self):
        """Accumulate gradients of this scalar into the tape's leaves."""
        if self.data.size != 1:
            raise TapeError("backward() requires a scalar, got shape %s"
                            % (self.data.shape,))
        order = []
        state = {}  # id -> 0 visiting, 1 done
        stack = [(self, iter(self._parents))]
        state[id(self)] = 0
        nodes = {id(self): self}
        while stack:
            node, it = stack[-1]
            advanced = False
            for parent in it:
                pid = id(parent)
                if pid not in state:
                    state[pid] = 0
                    nodes[pid] = parent
                    stack.append((parent, iter(parent._parents)))
                    advanced = True
                    break
                if state[pid] == 0:
                    raise TapeError("cycle detected in autodiff tape")
            if not advanced:
                state[id(node)] = 1
                order.append(node)
                stack.pop()
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- elementwise arithmetic -------------------------------------------

    def __add__(self, other):
        other = _as_tensor(other)
        out_data = self.data + other.data

        def backward(g):
            self._accumulate(_unbroadcast(g, self.data.shape))
            other._accumulate(_unbroadcast(g, other.data.shape))
        return Tensor._from_op(out_data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        def backward(g):
            self._accumulate(-g)
        return Tensor._from_op(-self.data, (self,), backward)

    def __sub__(self, other):
        return self + (-_as_tensor(other))

    def __rsub__(self, other):
        return _as_tensor(other) + (-self)

    def __mul__(self, other):
        other = _as_tensor(other)
        out_data = self.data * other.data

        def backward(g):
            self._accumulate(_unbroadcast(g * other.data, self.data.shape))
            other._accumulate(_unbroadcast(g * self.data, other.data.shape))
        return Tensor._from_op(out_data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _as_tensor(other)
        out_data = self.data / other.data

        def backward(g):
            self._accumulate(_unbroadcast(g / other.data, self.data.shape))
            other._accumulate(_unbroadcast(
                -g * self.data / (other.data * other.data),
                other.data.shape))
        return Tensor._from_op(out_data, (self, other), backward)

    def __rtruediv__(self, other):
        return _as_tensor(other) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out_data = self.data ** exponent

        def backward(g):
            self._accumulate(g * exponent * self.data ** (exponent - 1))
        return Tensor._from_op(out_data, (self,), backward)

    # -- matmul ------------------------------------------------------------

    def __matmul__(self, other):
        other = _as_tensor(other)
        if self.data.ndim < 2 or other.data.ndim < 2:
            raise TapeError("matmul operands must be at least 2-D")
        out_data = self.data @ other.data

        def backward(g):
            self._accumulate(_unbroadcast(
                g @ other.data.swapaxes(-1, -2), self.data.shape))
            other._accumulate(_unbroadcast(
                self.data.swapaxes(-1, -2) @ g, other.data.shape))
        return Tensor._from_op(out_data, (self, other), backward)

    # -- elementwise nonlinearities ----------------------------------------

    def exp(self):
        out_data = np.exp(self.data)

        def backward(g):
            self._accumulate(g * out_data)
        return Tensor._from_op(out_data, (self,), backward)

    def log(self):
        def backward(g):
            self._accumulate(g / self.data)
        return Tensor._from_op(np.log(self.data), (self,), backward)

    def tanh(self):
        out_data = np.tanh(self.data)

        def backward(g):
            self._accumulate(g * (1.0 - out_data * out_data))
        return Tensor._from_op(out_data, (self,), backward)

    def sigmoid(self):
        out_data = 1.0 / (1.0 + np.exp(-self.data))

        def backward(g):
            self._accumulate(g * out_data * (1.0 - out_data))
        return Tensor._from_op(out_data, (self,), backward)

    def relu(self):
        keep = self.data > 0.0

        def backward(g):
            self._accumulate(g * keep)
        return Tensor._from_op(self.data * keep, (self,), backward)

    def leaky_relu(self, slope=0.2):
        factor = np.where(self.data > 0.0, 1.0, slope)

        def backward(g):
            self._accumulate(g * factor)
        return Tensor._from_op(self.data * factor, (self,), backward)

    def clamp_min(self, bound):
        """Elementwise max(x, bound); gradient passes where x > bound."""
        keep = self.data > bound
        out_data = np.where(keep, self.data, bound)

        def backward(g):
            self._accumulate(g * keep)
        return Tensor._from_op(out_data, (self,), backward)

    def clamp_max(self, bound):
        """Elementwise min(x, bound); gradient passes where x < bound."""
        keep = self.data < bound
        out_data = np.where(keep, self.data, bound)

        def backward(g):
            self._accumulate(g * keep)
        return Tensor._from_op(out_data, (self,), backward)

    # -- reductions ---------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is None:
                expanded = np.broadcast_to(g, self.data.shape)
            else:
                if not keepdims:
                    g = np.expand_dims(g, axis)
                expanded = np.broadcast_to(g, self.data.shape)
            self._accumulate(expanded.copy())
        return Tensor._from_op(out_data, (self,), backward)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            count = self.data.size
        else:
            count = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def max_detached(self, axis=None, keepdims=False):
        """Reduction max as a constant (no gradient); for softmax shifts."""
        return Tensor(self.data.max(axis=axis, keepdims=keepdims))

    # -- shape manipulation ---------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old_shape = self.data.shape

        def backward(g):
            self._accumulate(g.reshape(old_shape))
        return Tensor._from_op(self.data.reshape(shape), (self,), backward)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.data.ndim)))
        inverse = tuple(np.argsort(axes))

        def backward(g):
            self._accumulate(g.transpose(inverse))
        return Tensor._from_op(self.data.transpose(axes), (self,), backward)

    def swap_last_axes(self):
        """Transpose the trailing two axes, keeping any batch axes."""
        axes = list(range(self.data.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
        return self.transpose(axes)

    def broadcast_to(self, shape):
        shape = tuple(shape)
        src_shape = self.data.shape

        def backward(g):
            self._accumulate(_unbroadcast(g, src_shape))
        return Tensor._from_op(
            np.broadcast_to(self.data, shape).copy(), (self,), backward)

    def __getitem__(self, key):
        src_shape = self.data.shape

        def backward(g):
            full = np.zeros(src_shape)
            np.add.at(full, key, g)
            self._accumulate(full)
        return Tensor._from_op(self.data[key], (self,), backward)


def _as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def concat(tensors, axis=-1):
    """Concatenate tensors along an axis; gradient splits back."""
    tensors = [_as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for tensor, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            tensor._accumulate(g[tuple(index)])
    return Tensor._from_op(out_data, tuple(tensors), backward)


def softmax(logits, axis=-1):
    """Numerically stable softmax along `axis` (max shift is detached)."""
    shifted = logits - logits.max_detached(axis=axis, keepdims=True)
    exp = shifted.exp()
    return exp / exp.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis=-1):
    shifted = logits - logits.max_detached(axis=axis, keepdims=True)
    return shifted - shifted.exp().sum(axis=axis, keepdims=True).log()


# -- convolution index helpers ---------------------------------------------
#
# All three routines operate on already-padded inputs and share the same
# (stride, kernel) indexing so conv2d and conv2d_transpose can be exact
# adjoints of one another.

def _conv_windows(padded, kh, kw, stride):
    """View of sliding (kh, kw) windows: (B, C, Ho, Wo, kh, kw)."""
    windows = np.lib.stride_tricks.sliding_window_view(
        padded, (kh, kw), axis=(2, 3))
    return windows[:, :, ::stride, ::stride]


def _conv_out(padded, weight, stride):
    """Cross-correlation: (B,C,Hp,Wp) x (F,C,kh,kw) -> (B,F,Ho,Wo)."""
    kh, kw = weight.shape[2], weight.shape[3]
    windows = _conv_windows(padded, kh, kw, stride)
    return np.einsum("bcijuv,fcuv->bfij", windows, weight, optimize=True)

def _conv_dw(padded, dout, stride):
    """Weight gradient: windows of the padded input against dout."""
    kh = padded.shape[2] - (dout.shape[2] - 1) * stride
    kw = padded.shape[3] - (dout.shape[3] - 1) * stride
    windows = _conv_windows(padded, kh, kw, stride)
    return np.einsum("bcijuv,bfij->fcuv", windows, dout, optimize=True)


def _conv_dx(dout, weight, stride, padded_shape):
    """Input gradient, returned at the padded shape."""
    kh, kw = weight.shape[2], weight.shape[3]
    _, _, ho, wo = dout.shape
    dx = np.zeros(padded_shape)
    for u in range(kh):
        for v in range(kw):
            patch = np.einsum("bfij,fc->bcij", dout, weight[:, :, u, v],
                              optimize=True)
            dx[:, :, u:u + stride * ho:stride,
               v:v + stride * wo:stride] += patch
    return dx


def _pad2d(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding),
                      (padding, padding)))


def _crop2d(x, padding):
    if padding == 0:
        return x
    return x[:, :, padding:-padding, padding:-padding]


def conv2d(x, weight, stride=1, padding=0):
    """2-D cross-correlation over (B, C, H, W) with (F, C, kh, kw) weight."""
    x = _as_tensor(x)
    weight = _as_tensor(weight)
    padded = _pad2d(x.data, padding)
    out_data = _conv_out(padded, weight.data, stride)

    def backward(g):
        dx_padded = _conv_dx(g, weight.data, stride, padded.shape)
        x._accumulate(_crop2d(dx_padded, padding))
        weight._accumulate(_conv_dw(padded, g, stride))
    return Tensor._from_op(out_data, (x, weight), backward)


def conv2d_transpose(x, weight, stride=1, padding=0):
    """Transposed convolution; exact adjoint of conv2d with same weight.

    x: (B, F, H, W), weight: (F, C, kh, kw) ->
    (B, C, (H-1)*stride + kh - 2*padding, ...).
    """
    x = _as_tensor(x)
    weight = _as_tensor(weight)
    b = x.data.shape[0]
    channels = weight.data.shape[1]
    kh, kw = weight.data.shape[2], weight.data.shape[3]
    hp = (x.data.shape[2] - 1) * stride + kh
    wp = (x.data.shape[3] - 1) * stride + kw
    out_padded = _conv_dx(x.data, weight.data, stride,
                          (b, channels, hp, wp))
    out_data = _crop2d(out_padded, padding)

    def backward(g):
        g_padded = _pad2d(g, padding)
        x._accumulate(_conv_out(g_padded, weight.data, stride))
        weight._accumulate(_conv_dw(g_padded, x.data, stride))
    return Tensor._from_op(out_data, (x, weight), backward)
