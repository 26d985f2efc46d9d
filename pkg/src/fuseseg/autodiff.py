"""Reverse-mode automatic differentiation over float64 numpy arrays.

A small tape-based engine in the micrograd tradition: every operation
returns a new :class:`Tensor` that remembers its parents and a closure
computing parent gradients from the output gradient.  All arithmetic is
IEEE-754 binary64; forward passes are deterministic for identical inputs.

Graph construction is skipped entirely when no input requires gradients
(or inside :func:`no_grad`), so frozen submodules run at plain-numpy cost.
"""

from __future__ import annotations

import contextlib
import math
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided
from scipy.special import erf

from .exceptions import ConfigurationError, NumericError, ShapeError

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A float64 array plus optional gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Backpropagate from this tensor through the recorded graph."""
        if grad is None:
            if self.size != 1:
                raise ShapeError("backward() without an explicit gradient "
                                 "requires a scalar tensor")
            grad = np.ones_like(self.data)
        self.grad = np.asarray(grad, dtype=np.float64).reshape(self.shape).copy()

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operator sugar; python scalars and ndarrays are wrapped as constants.
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Parameter:
    """A named tensor with a freeze flag; frozen parameters never update."""

    __slots__ = ("tensor", "frozen", "name")

    def __init__(self, data, name: str, frozen: bool = False):
        self.tensor = Tensor(data, requires_grad=not frozen)
        self.frozen = bool(frozen)
        self.name = name

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self) -> np.ndarray | None:
        return self.tensor.grad

    def zero_grad(self) -> None:
        self.tensor.zero_grad()

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.tensor.shape}, frozen={self.frozen})"


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...],
          backward: Callable[[], Callable[[np.ndarray], None]]) -> Tensor:
    """Build an output node; skips the tape when gradients are not needed.

    ``backward`` is a thunk so closures are only constructed on the grad path.
    """
    if _grad_enabled and any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True)
        out._parents = parents
        out._backward = backward()
        return out
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting expanded."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data + b.data

    def bw():
        def run(g):
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(g, b.shape))
        return run

    return _make(out, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data - b.data

    def bw():
        def run(g):
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(-g, b.shape))
        return run

    return _make(out, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    a = _wrap(a)

    def bw():
        def run(g):
            a.accumulate_grad(-g)
        return run

    return _make(-a.data, (a,), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data * b.data

    def bw():
        def run(g):
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(g * a.data, b.shape))
        return run

    return _make(out, (a, b), bw)


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data / b.data

    def bw():
        def run(g):
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))
        return run

    return _make(out, (a, b), bw)


# ---------------------------------------------------------------------------
# linear algebra and shape movement
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul requires >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw():
        def run(g):
            if a.requires_grad:
                ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
                a.accumulate_grad(_unbroadcast(ga, a.shape))
            if b.requires_grad:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
                b.accumulate_grad(_unbroadcast(gb, b.shape))
        return run

    return _make(out, (a, b), bw)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    a = _wrap(a)
    shape = tuple(shape)

    def bw():
        def run(g):
            a.accumulate_grad(g.reshape(a.shape))
        return run

    return _make(a.data.reshape(shape), (a,), bw)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    a = _wrap(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bw():
        def run(g):
            a.accumulate_grad(g.transpose(inv))
        return run

    # ascontiguousarray keeps downstream matmuls on fast paths
    return _make(np.ascontiguousarray(a.data.transpose(axes)), (a,), bw)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis."""
    a = _wrap(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def bw():
        def run(g):
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[idx] += g
        return run

    return _make(np.ascontiguousarray(a.data[idx]), (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    """Concatenate along ``axis``; the inverse split recovers operands bit-exactly."""
    tensors = [_wrap(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty sequence")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]

    def bw():
        def run(g):
            offset = 0
            for t, n in zip(tensors, sizes):
                if t.requires_grad:
                    idx = [slice(None)] * g.ndim
                    idx[axis] = slice(offset, offset + n)
                    t.accumulate_grad(g[tuple(idx)])
                offset += n
        return run

    return _make(out, tuple(tensors), bw)


def split(a: Tensor, sizes: Sequence[int], axis: int) -> list[Tensor]:
    """Split into consecutive chunks of the given sizes along ``axis``."""
    if sum(sizes) != a.shape[axis]:
        raise ShapeError(f"split sizes {list(sizes)} do not cover axis of length "
                         f"{a.shape[axis]}")
    pieces = []
    offset = 0
    for n in sizes:
        pieces.append(narrow(a, axis, offset, n))
        offset += n
    return pieces


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw():
        def run(g):
            if axis is None:
                a.accumulate_grad(np.broadcast_to(g, a.shape))
                return
            gk = g
            if not keepdims:
                axes = (axis,) if isinstance(axis, int) else tuple(axis)
                for ax in sorted(ax % a.ndim for ax in axes):
                    gk = np.expand_dims(gk, ax)
            a.accumulate_grad(np.broadcast_to(gk, a.shape))
        return run

    return _make(out, (a,), bw)


def tmean(a: Tensor) -> Tensor:
    """Mean over all elements (scalar output)."""
    a = _wrap(a)
    n = a.size
    out = a.data.mean()

    def bw():
        def run(g):
            a.accumulate_grad(np.broadcast_to(g / n, a.shape))
        return run

    return _make(out, (a,), bw)


# ---------------------------------------------------------------------------
# nonlinearities and normalization
# ---------------------------------------------------------------------------

def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) Gaussian error linear unit."""
    a = _wrap(a)
    phi = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))
    out = a.data * phi

    def bw():
        def run(g):
            pdf = _INV_SQRT2PI * np.exp(-0.5 * a.data * a.data)
            a.accumulate_grad(g * (phi + a.data * pdf))
        return run

    return _make(out, (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    a = _wrap(a)
    out = _sigmoid_stable(a.data)

    def bw():
        def run(g):
            a.accumulate_grad(g * out * (1.0 - out))
        return run

    return _make(out, (a,), bw)


def _sigmoid_stable(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Shift-stabilized softmax along ``axis``; rows are positive and sum to 1."""
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw():
        def run(g):
            dot = (g * out).sum(axis=axis, keepdims=True)
            a.accumulate_grad(out * (g - dot))
        return run

    return _make(out, (a,), bw)


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize over the last axis, then scale and shift per feature."""
    a, gamma, beta = _wrap(a), _wrap(gamma), _wrap(beta)
    d = a.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm scale/shift must have shape ({d},), got "
                         f"{gamma.shape} and {beta.shape}")
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    out = gamma.data * xhat + beta.data

    def bw():
        def run(g):
            if gamma.requires_grad:
                gamma.accumulate_grad(
                    _unbroadcast(g * xhat, gamma.shape))
            if beta.requires_grad:
                beta.accumulate_grad(_unbroadcast(g, beta.shape))
            if a.requires_grad:
                gx = g * gamma.data
                m1 = gx.mean(axis=-1, keepdims=True)
                m2 = (gx * xhat).mean(axis=-1, keepdims=True)
                a.accumulate_grad(inv_std * (gx - m1 - xhat * m2))
        return run

    return _make(out, (a, gamma, beta), bw)


# ---------------------------------------------------------------------------
# spatial operations
# ---------------------------------------------------------------------------

def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    s0, s1, s2, s3 = xp.strides
    win = as_strided(xp, (b, c, ho, wo, kh, kw),
                     (s0, s1, s2 * stride, s3 * stride, s2, s3))
    col = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))
    return col.reshape(b * ho * wo, c * kh * kw), ho, wo


def _col2im(dcol: np.ndarray, xshape, kh: int, kw: int,
            stride: int, pad: int, ho: int, wo: int) -> np.ndarray:
    b, c, h, w = xshape
    dxp = np.zeros((b, c, h + 2 * pad, w + 2 * pad))
    d6 = dcol.reshape(b, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += d6[:, :, i, j]
    if pad:
        return dxp[:, :, pad:h + pad, pad:w + pad]
    return dxp


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int | str = "same") -> Tensor:
    """2-d cross-correlation (no kernel flip) over NCHW input.

    ``padding="same"`` keeps the spatial size for odd kernels at stride 1.
    """
    x, weight = _wrap(x), _wrap(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input and OIHW kernel, got "
                         f"{x.shape} and {weight.shape}")
    cout, cin, kh, kw = weight.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigurationError(f"conv2d kernel dims must be odd, got {kh}x{kw}")
    if x.shape[1] != cin:
        raise ShapeError(f"conv2d channel mismatch: input has {x.shape[1]}, "
                         f"kernel expects {cin}")
    if padding == "same":
        if stride != 1:
            raise ConfigurationError("'same' padding requires stride 1")
        pad = (kh - 1) // 2
    else:
        pad = int(padding)
    h, w = x.shape[2], x.shape[3]
    if (h + 2 * pad - kh) % stride or (w + 2 * pad - kw) % stride:
        raise ConfigurationError(
            f"conv2d output size is not integral for input {h}x{w}, kernel "
            f"{kh}x{kw}, stride {stride}, padding {pad}")

    col, ho, wo = _im2col(x.data, kh, kw, stride, pad)
    wmat = weight.data.reshape(cout, cin * kh * kw)
    out = col @ wmat.T
    if bias is not None:
        bias = _wrap(bias)
        out += bias.data
    b = x.shape[0]
    out = out.reshape(b, ho, wo, cout).transpose(0, 3, 1, 2)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw():
        def run(g):
            gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, cout)
            if bias is not None and bias.requires_grad:
                bias.accumulate_grad(gmat.sum(axis=0))
            if weight.requires_grad:
                weight.accumulate_grad((gmat.T @ col).reshape(weight.shape))
            if x.requires_grad:
                dcol = gmat @ wmat
                x.accumulate_grad(
                    _col2im(dcol, x.shape, kh, kw, stride, pad, ho, wo))
        return run

    return _make(np.ascontiguousarray(out), parents, bw)


def upsample2x(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Learnable transposed convolution, kernel 2x2 stride 2: exact doubling.

    ``weight`` has shape (C, C_out, 2, 2).  Windows do not overlap, so both
    directions reduce to einsums.
    """
    x, weight = _wrap(x), _wrap(weight)
    if x.ndim != 4 or weight.ndim != 4 or weight.shape[2:] != (2, 2):
        raise ShapeError(f"upsample2x expects NCHW input and (C,Cout,2,2) kernel, "
                         f"got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[0]:
        raise ShapeError(f"upsample2x channel mismatch: input has {x.shape[1]}, "
                         f"kernel expects {weight.shape[0]}")
    b, c, h, w = x.shape
    cout = weight.shape[1]
    out6 = np.einsum("bchw,cokl->bohkwl", x.data, weight.data, optimize=True)
    out = out6.reshape(b, cout, 2 * h, 2 * w)
    if bias is not None:
        bias = _wrap(bias)
        out = out + bias.data[:, None, None]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw():
        def run(g):
            g6 = g.reshape(b, cout, h, 2, w, 2)
            if bias is not None and bias.requires_grad:
                bias.accumulate_grad(g.sum(axis=(0, 2, 3)))
            if weight.requires_grad:
                weight.accumulate_grad(
                    np.einsum("bchw,bohkwl->cokl", x.data, g6, optimize=True))
            if x.requires_grad:
                x.accumulate_grad(
                    np.einsum("bohkwl,cokl->bchw", g6, weight.data, optimize=True))
        return run

    return _make(out, parents, bw)


@lru_cache(maxsize=64)
def interp_matrix(out_size: int, in_size: int) -> np.ndarray:
    """Row-stochastic 1-d linear interpolation matrix (align_corners=False)."""
    m = np.zeros((out_size, in_size))
    scale = in_size / out_size
    for o in range(out_size):
        src = (o + 0.5) * scale - 0.5
        src = min(max(src, 0.0), in_size - 1.0)
        lo = int(math.floor(src))
        hi = min(lo + 1, in_size - 1)
        frac = src - lo
        m[o, lo] += 1.0 - frac
        m[o, hi] += frac
    m.setflags(write=False)
    return m


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize (align_corners=False) of NCHW input; linear, hence
    exactly differentiable.  Same-size resize is a bit-exact pass-through."""
    x = _wrap(x)
    if x.ndim != 4:
        raise ShapeError(f"resize_bilinear expects NCHW input, got {x.shape}")
    if out_h < 1 or out_w < 1:
        raise ConfigurationError(f"resize target must be positive, got {out_h}x{out_w}")
    h, w = x.shape[2], x.shape[3]
    if (out_h, out_w) == (h, w):
        def bw_id():
            def run(g):
                x.accumulate_grad(g)
            return run
        return _make(x.data, (x,), bw_id)

    rh = interp_matrix(out_h, h)
    rw = interp_matrix(out_w, w)
    out = np.matmul(rh, np.matmul(x.data, rw.T))

    def bw():
        def run(g):
            x.accumulate_grad(np.matmul(rh.T, np.matmul(g, rw)))
        return run

    return _make(out, (x,), bw)


# ---------------------------------------------------------------------------
# losses and fusion
# ---------------------------------------------------------------------------

def bce_with_logits(logits: Tensor, target) -> Tensor:
    """Mean binary cross-entropy computed stably from raw logits."""
    logits = _wrap(logits)
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if t.shape != logits.shape:
        raise ShapeError(f"bce_with_logits target shape {t.shape} != logits "
                         f"shape {logits.shape}")
    z = logits.data
    per_elem = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    out = per_elem.mean()
    n = z.size

    def bw():
        def run(g):
            logits.accumulate_grad((_sigmoid_stable(z) - t) * (g / n))
        return run

    return _make(out, (logits,), bw)


def weighted_sum(tensors: Sequence[Tensor], weights: Tensor) -> Tensor:
    """sum_i weights[i] * tensors[i] with all operands the same shape.

    Terms whose weight is exactly 0.0 are skipped in the forward pass, so a
    one-hot weight vector reproduces the selected tensor bit-for-bit; the
    weight gradient is still computed for every index.
    """
    tensors = [_wrap(t) for t in tensors]
    weights = _wrap(weights)
    if weights.ndim != 1 or len(tensors) != weights.shape[0]:
        raise ShapeError(f"weighted_sum needs one weight per tensor, got "
                         f"{weights.shape} for {len(tensors)} tensors")
    base = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != base:
            raise ShapeError(f"weighted_sum operands disagree in shape: "
                             f"{t.shape} vs {base}")
    wv = weights.data
    out = None
    for wi, t in zip(wv, tensors):
        if wi == 0.0:
            continue
        term = wi * t.data
        out = term if out is None else out + term
    if out is None:
        out = np.zeros(base)

    def bw():
        def run(g):
            if weights.requires_grad:
                gw = np.array([np.vdot(g, t.data) for t in tensors])
                weights.accumulate_grad(gw)
            for wi, t in zip(wv, tensors):
                if t.requires_grad:
                    t.accumulate_grad(wi * g)
        return run

    return _make(out, tuple(tensors) + (weights,), bw)


def multi_head_attention(x: Tensor, w_qkv: Tensor, b_qkv: Tensor,
                         w_out: Tensor, b_out: Tensor, num_heads: int) -> Tensor:
    """Scaled dot-product self-attention over (B, N, D) token tensors."""
    b, n, d = x.shape
    if d % num_heads:
        raise ShapeError(f"embed dim {d} not divisible by {num_heads} heads")
    dh = d // num_heads
    qkv = add(matmul(x, w_qkv), b_qkv)                      # (B, N, 3D)
    q, k, v = split(qkv, [d, d, d], axis=2)
    q = transpose(reshape(q, (b, n, num_heads, dh)), (0, 2, 1, 3))
    k = transpose(reshape(k, (b, n, num_heads, dh)), (0, 2, 1, 3))
    v = transpose(reshape(v, (b, n, num_heads, dh)), (0, 2, 1, 3))
    scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))), Tensor(1.0 / math.sqrt(dh)))
    attn = softmax(scores, axis=-1)
    ctx = matmul(attn, v)                                   # (B, H, N, dh)
    ctx = reshape(transpose(ctx, (0, 2, 1, 3)), (b, n, d))
    return add(matmul(ctx, w_out), b_out)


# ---------------------------------------------------------------------------
# gradient checking oracle
# ---------------------------------------------------------------------------

def grad_check(closure: Callable[[], Tensor],
               params: Iterable[Tensor | Parameter],
               eps: float = 1e-5) -> float:
    """Compare analytic gradients against central finite differences.

    ``closure`` rebuilds the scalar loss from the current parameter values.
    Returns the max over all coordinates of
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    """
    tensors = [p.tensor if isinstance(p, Parameter) else p for p in params]
    for t in tensors:
        t.zero_grad()
    loss = closure()
    if loss.size != 1:
        raise ShapeError("grad_check closure must return a scalar loss")
    if not np.isfinite(loss.data).all():
        raise NumericError("grad_check: non-finite loss")
    loss.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
                for t in tensors]

    def eval_loss() -> float:
        val = float(closure().data)
        if not math.isfinite(val):
            raise NumericError("grad_check: non-finite loss during probing")
        return val

    worst = 0.0
    for t, a in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        aflat = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = eval_loss()
            flat[i] = orig - eps
            down = eval_loss()
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            denom = max(1.0, abs(aflat[i]), abs(numeric))
            worst = max(worst, abs(aflat[i] - numeric) / denom)
    return worst
