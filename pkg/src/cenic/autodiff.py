"""Minimal deterministic tensor kernels with reverse-mode differentiation.

Tensors wrap 4-D (or lower) numpy arrays in the globally selected precision.
Every operation is a pure function of its inputs; graphs are recorded
dynamically and differentiated by ``backward``/``vjp``. Convolutions run as
tiled im2col/col2im matrix products so BLAS does the heavy lifting while the
per-axis accumulation order stays fixed.
"""

import math
from contextlib import contextmanager

import numpy as np
import scipy.special

from . import config
from .errors import ChannelMismatch, InvalidStride, NotDifferentiable, ShapeError

# Upper bound on the transient im2col buffer, in elements.
_COL_BUDGET = 16 * 1024 * 1024

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph recording within the block (inference mode)."""
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


def grad_enabled():
    return _GRAD_ENABLED


class Tensor:
    """Array value plus an optional backward edge into the recorded graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False, _parents=(), _vjp=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=config.default_dtype())
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, grad={self.requires_grad})"

    def backward(self, cotangent=None):
        """Reverse-mode sweep from this node, accumulating into leaf ``.grad``."""
        if cotangent is None:
            cotangent = np.ones_like(self.data)
        run_backward(self, np.asarray(cotangent, dtype=self.data.dtype))

    # operators
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, key):
        return getitem(self, key)


def astensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _tracked(parents):
    return _GRAD_ENABLED and any(
        isinstance(p, Tensor) and (p.requires_grad or p._parents) for p in parents
    )


def _make(data, parents, vjp):
    if _tracked(parents):
        t = Tensor.__new__(Tensor)
        t.data = data
        t.grad = None
        t.requires_grad = True
        t._parents = tuple(p for p in parents if isinstance(p, Tensor))
        t._vjp = vjp
        return t
    return Tensor(data)


def run_backward(root, cotangent):
    if root.data.shape != cotangent.shape:
        raise ShapeError(
            f"cotangent shape {cotangent.shape} != value shape {root.data.shape}"
        )
    # iterative topological order (graphs can be deep)
    topo = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    grads = {id(root): cotangent}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad and not node._parents:
            node.grad = g if node.grad is None else node.grad + g
        if node._vjp is not None:
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None:
                    continue
                pid = id(parent)
                if pid in grads:
                    grads[pid] = grads[pid] + pg
                else:
                    grads[pid] = pg


def vjp(output, inputs, cotangent=None):
    """Gradients of ``output`` w.r.t. ``inputs`` under the given cotangent.

    Inputs not connected to the output get zero gradients.
    """
    inputs = list(inputs)
    saved = [t.grad for t in inputs]
    for t in inputs:
        t.grad = None
    output.backward(cotangent)
    grads = tuple(
        t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs
    )
    for t, s in zip(inputs, saved):
        t.grad = s
    return grads


def _unbroadcast(g, shape):
    # reduce a gradient back to the shape it was broadcast from
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] > 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b):
    a, b = astensor(a), astensor(b)
    out = a.data + b.data
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def sub(a, b):
    a, b = astensor(a), astensor(b)
    out = a.data - b.data
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)),
    )


def mul(a, b):
    a, b = astensor(a), astensor(b)
    out = a.data * b.data
    return _make(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def div(a, b):
    a, b = astensor(a), astensor(b)
    out = a.data / b.data
    return _make(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        ),
    )


def absolute(a):
    a = astensor(a)
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def square(a):
    a = astensor(a)
    return _make(np.square(a.data), (a,), lambda g: (g * (2.0 * a.data),))


def sqrt(a):
    a = astensor(a)
    out = np.sqrt(a.data)

    def bwd(g):
        # subgradient 0 at exactly zero
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(out > 0, g / (2.0 * out), 0.0)
        return (r,)

    return _make(out, (a,), bwd)


def exp(a):
    a = astensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    a = astensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sigmoid(a):
    a = astensor(a)
    out = scipy.special.expit(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def ndtr(a):
    """Standard normal CDF."""
    a = astensor(a)
    out = scipy.special.ndtr(a.data)
    inv_sqrt2pi = 1.0 / math.sqrt(2.0 * math.pi)

    def bwd(g):
        return (g * np.exp(-0.5 * a.data * a.data) * inv_sqrt2pi,)

    return _make(out, (a,), bwd)


def power(a, p):
    """Elementwise a**p for a real constant exponent (positive base)."""
    a = astensor(a)
    p = float(p)
    out = np.power(a.data, p)
    return _make(out, (a,), lambda g: (g * p * np.power(a.data, p - 1.0),))


def maximum(a, b):
    a, b = astensor(a), astensor(b)
    out = np.maximum(a.data, b.data)

    def bwd(g):
        mask = a.data >= b.data
        return (
            _unbroadcast(g * mask, a.data.shape),
            _unbroadcast(g * ~mask, b.data.shape),
        )

    return _make(out, (a, b), bwd)


def relu(a):
    a = astensor(a)
    return _make(np.maximum(a.data, 0.0), (a,), lambda g: (g * (a.data > 0),))


def tsum(a, axis=None, keepdims=False):
    a = astensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, a.data.shape).copy(),)

    return _make(np.asarray(out), (a,), bwd)


def tmean(a, axis=None, keepdims=False):
    a = astensor(a)
    n = a.data.size if axis is None else np.prod(
        [a.data.shape[i] for i in np.atleast_1d(axis)]
    )
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(a, shape):
    a = astensor(a)
    out = a.data.reshape(shape)
    return _make(out, (a,), lambda g: (g.reshape(a.data.shape),))


def getitem(a, key):
    a = astensor(a)
    out = a.data[key]

    def bwd(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return (full,)

    return _make(np.ascontiguousarray(out), (a,), bwd)


def nondifferentiable(data, parents, opname):
    """Graph node whose backward path is an error (e.g. hard rounding)."""

    def bwd(_g):
        raise NotDifferentiable(f"{opname} has no gradient")

    return _make(data, parents, bwd)


# ---------------------------------------------------------------------------
# convolution kernels
# ---------------------------------------------------------------------------


def conv_out_size(size, stride):
    return -(-size // stride)


def same_pads(size, kernel, stride):
    """Total padding split (before, after) for ceil(size/stride) outputs."""
    total = max((conv_out_size(size, stride) - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def _check_conv_args(x, kernel, bias, stride):
    if stride < 1:
        raise InvalidStride(f"stride must be >= 1, got {stride}")
    if x.ndim != 4:
        raise ShapeError(f"expected 4-D input, got shape {x.shape}")
    if kernel.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
        raise ShapeError(f"expected square 4-D kernel, got shape {kernel.shape}")
    if bias.shape != (kernel.shape[0],):
        raise ShapeError(
            f"bias shape {bias.shape} does not match {kernel.shape[0]} outputs"
        )
    if x.shape[1] != kernel.shape[1]:
        raise ChannelMismatch(
            f"input has {x.shape[1]} channels, kernel expects {kernel.shape[1]}"
        )


def _row_tile(n, c, kk, wo):
    per_row = max(n * c * kk * wo, 1)
    return max(1, _COL_BUDGET // per_row)


def _pad_input(x, k, stride):
    pt, pb = same_pads(x.shape[2], k, stride)
    pl, pr = same_pads(x.shape[3], k, stride)
    if pt or pb or pl or pr:
        x = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    return x, (pt, pl)


def _fill_col(xp, col, r0, r1, wo, k, stride):
    # col viewed as (N, C, K, K, rows, Wo); one strided copy per kernel tap
    n, c = xp.shape[:2]
    view = col.reshape(n, c, k, k, r1 - r0, wo)
    for dy in range(k):
        ys = r0 * stride + dy
        for dx in range(k):
            view[:, :, dy, dx] = xp[
                :, :, ys : ys + (r1 - r0 - 1) * stride + 1 : stride,
                dx : dx + (wo - 1) * stride + 1 : stride,
            ]


def conv2d_array(x, kernel, bias, stride):
    """Strided same-padded convolution on plain arrays."""
    _check_conv_args(x, kernel, bias, stride)
    n, c, h, w = x.shape
    o, _, k, _ = kernel.shape
    ho, wo = conv_out_size(h, stride), conv_out_size(w, stride)
    if k == 1 and stride == 1:
        out = np.matmul(kernel.reshape(o, c), x.reshape(n, c, h * w))
        out += bias.reshape(1, o, 1)
        return out.reshape(n, o, h, w)
    xp, _ = _pad_input(x, k, stride)
    kmat = kernel.reshape(o, c * k * k)
    out = np.empty((n, o, ho, wo), dtype=x.dtype)
    tile = _row_tile(n, c, k * k, wo)
    for r0 in range(0, ho, tile):
        r1 = min(r0 + tile, ho)
        col = np.empty((n, c * k * k, (r1 - r0) * wo), dtype=x.dtype)
        _fill_col(xp, col, r0, r1, wo, k, stride)
        out[:, :, r0:r1] = np.matmul(kmat, col).reshape(n, o, r1 - r0, wo)
    out += bias.reshape(1, o, 1, 1)
    return out


def conv2d_input_grad_array(dy, kernel, stride, in_hw):
    """Adjoint of the bias-free convolution: scatter dy back to input space."""
    n, o, ho, wo = dy.shape
    c, k = kernel.shape[1], kernel.shape[2]
    h, w = in_hw
    if k == 1 and stride == 1:
        out = np.matmul(kernel.reshape(o, c).T, dy.reshape(n, o, ho * wo))
        return out.reshape(n, c, h, w)
    pt, pb = same_pads(h, k, stride)
    pl, pr = same_pads(w, k, stride)
    hp, wp = h + pt + pb, w + pl + pr
    kmat_t = kernel.reshape(o, c * k * k).T
    xg = np.zeros((n, c, hp, wp), dtype=dy.dtype)
    tile = _row_tile(n, c, k * k, wo)
    for r0 in range(0, ho, tile):
        r1 = min(r0 + tile, ho)
        col = np.matmul(kmat_t, dy[:, :, r0:r1].reshape(n, o, (r1 - r0) * wo))
        view = col.reshape(n, c, k, k, r1 - r0, wo)
        for ky in range(k):
            ys = r0 * stride + ky
            for kx in range(k):
                xg[
                    :, :, ys : ys + (r1 - r0 - 1) * stride + 1 : stride,
                    kx : kx + (wo - 1) * stride + 1 : stride,
                ] += view[:, :, ky, kx]
    return np.ascontiguousarray(xg[:, :, pt : pt + h, pl : pl + w])


def conv2d_kernel_grad_array(x, dy, stride, k):
    """Gradient of the convolution w.r.t. its kernel and bias."""
    n, c = x.shape[:2]
    o, ho, wo = dy.shape[1], dy.shape[2], dy.shape[3]
    if k == 1 and stride == 1:
        dk = np.matmul(
            dy.reshape(n, o, ho * wo), x.reshape(n, c, ho * wo).transpose(0, 2, 1)
        ).sum(axis=0)
        return dk.reshape(o, c, 1, 1), dy.sum(axis=(0, 2, 3))
    xp, _ = _pad_input(x, k, stride)
    dk = np.zeros((o, c * k * k), dtype=x.dtype)
    tile = _row_tile(n, c, k * k, wo)
    for r0 in range(0, ho, tile):
        r1 = min(r0 + tile, ho)
        col = np.empty((n, c * k * k, (r1 - r0) * wo), dtype=x.dtype)
        _fill_col(xp, col, r0, r1, wo, k, stride)
        dk += np.matmul(
            dy[:, :, r0:r1].reshape(n, o, (r1 - r0) * wo), col.transpose(0, 2, 1)
        ).sum(axis=0)
    return dk.reshape(o, c, k, k), dy.sum(axis=(0, 2, 3))


def deconv2d_array(x, kernel, bias, stride):
    """Transposed convolution: adjoint of conv2d at the upsampled geometry."""
    _check_conv_args(x, kernel, bias, stride)
    n, i, h, w = x.shape
    o = kernel.shape[0]
    kc = np.ascontiguousarray(kernel.transpose(1, 0, 2, 3))
    out = conv2d_input_grad_array(x, kc, stride, (h * stride, w * stride))
    out += bias.reshape(1, o, 1, 1)
    return out


def conv2d(x, kernel, bias, stride=1):
    """Differentiable strided convolution (see conv2d_array for semantics)."""
    x, kernel, bias = astensor(x), astensor(kernel), astensor(bias)
    stride = int(stride)
    out = conv2d_array(x.data, kernel.data, bias.data, stride)
    k = kernel.data.shape[2]
    in_hw = x.data.shape[2:]

    def bwd(g):
        dx = conv2d_input_grad_array(g, kernel.data, stride, in_hw)
        dk, db = conv2d_kernel_grad_array(x.data, g, stride, k)
        return dx, dk, db

    return _make(out, (x, kernel, bias), bwd)


def deconv2d(x, kernel, bias, stride=1):
    """Differentiable transposed convolution; kernel is (out, in, K, K)."""
    x, kernel, bias = astensor(x), astensor(kernel), astensor(bias)
    stride = int(stride)
    out = deconv2d_array(x.data, kernel.data, bias.data, stride)
    k = kernel.data.shape[2]

    def bwd(g):
        kc = np.ascontiguousarray(kernel.data.transpose(1, 0, 2, 3))
        dx = conv2d_array(g, kc, np.zeros(x.data.shape[1], dtype=g.dtype), stride)
        dkc, _ = conv2d_kernel_grad_array(g, x.data, stride, k)
        dk = np.ascontiguousarray(dkc.transpose(1, 0, 2, 3))
        db = g.sum(axis=(0, 2, 3))
        return dx, dk, db

    return _make(out, (x, kernel, bias), bwd)


def avgpool2(a):
    """2x2 mean pooling with stride 2 (odd trailing row/column dropped)."""
    a = astensor(a)
    n, c, h, w = a.data.shape
    h2, w2 = h // 2, w // 2
    view = a.data[:, :, : h2 * 2, : w2 * 2].reshape(n, c, h2, 2, w2, 2)
    out = view.mean(axis=(3, 5))

    def bwd(g):
        full = np.zeros_like(a.data)
        spread = np.broadcast_to(
            g.reshape(n, c, h2, 1, w2, 1) * 0.25, (n, c, h2, 2, w2, 2)
        )
        full[:, :, : h2 * 2, : w2 * 2] = spread.reshape(n, c, h2 * 2, w2 * 2)
        return (full,)

    return _make(out, (a,), bwd)


def pad_to_multiple(img, m):
    """Replicate-pad spatial dims up to the next multiple of ``m``.

    Returns the padded array and the original (height, width) for crop-back.
    """
    if m < 1:
        raise ValueError("multiple must be >= 1")
    arr = img.data if isinstance(img, Tensor) else np.asarray(img)
    h, w = arr.shape[2], arr.shape[3]
    ph = (-h) % m
    pw = (-w) % m
    if ph or pw:
        arr = np.pad(arr, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="edge")
    return arr, (h, w)


def crop_to(arr, dims):
    """Inverse of pad_to_multiple."""
    h, w = dims
    return arr[:, :, :h, :w]
