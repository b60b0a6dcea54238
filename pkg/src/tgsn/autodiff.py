"""Minimal dense-tensor engine with reverse-mode differentiation.

Tensors wrap numpy arrays (float32 for training, float64 for gradient
checks). Every op records its parents and a backward closure; ``backward()``
topologically sorts the implicit graph and visits each node once. Only the
ops the network needs are provided; broadcasting is supported in ``add`` and
``mul`` (bias adds, per-channel scales) and nowhere else.

Checkpoints use the ``TGSN-CKPT v1`` named-tensor table:

    TGSN-CKPT v1
    <n_tensors>
    <name>,<ndim>,<d0>,<d1>,...      (n_tensors lines)
    <concatenated float32 LE payloads>
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import erf

from .errors import NonFiniteGradient, ParseError, ShapeError

CKPT_MAGIC = "TGSN-CKPT v1"

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """A dense array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self, seed=None):
        """Reverse-mode sweep from this node; visits each node exactly once."""
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that does not require grad")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        if seed is None:
            self.grad = np.ones_like(self.data)
        else:
            self.grad = np.asarray(seed, dtype=self.data.dtype)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _make(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype)
    else:
        t.grad = t.grad + g.astype(t.data.dtype, copy=False)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise / structural ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: {a.data.shape} vs {b.data.shape}") from None

    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), bw)


def neg(a) -> Tensor:
    a = _wrap(a)

    def bw(g):
        _accum(a, -g)

    return _make(-a.data, (a,), bw)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: {a.data.shape} vs {b.data.shape}") from None

    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), bw)


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands: {a.data.shape} vs {b.data.shape}")
    try:
        data = a.data @ b.data
    except ValueError:
        raise ShapeError(f"matmul: {a.data.shape} vs {b.data.shape}") from None

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    return _make(data, (a, b), bw)


def reshape(a: Tensor, shape) -> Tensor:
    a = _wrap(a)

    def bw(g):
        _accum(a, g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), bw)


def transpose(a: Tensor, axes) -> Tensor:
    a = _wrap(a)
    inv = np.argsort(axes)

    def bw(g):
        _accum(a, g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), bw)


def concat(tensors, axis: int) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in ts]
    data = np.concatenate([t.data for t in ts], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    return _make(data, tuple(ts), bw)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    a = _wrap(a)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def bw(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        _accum(a, full)

    return _make(a.data[idx], (a,), bw)


def split_channels(a: Tensor) -> tuple[Tensor, Tensor]:
    """Split axis 1 into two equal halves."""
    c = a.data.shape[1]
    if c % 2 != 0:
        raise ShapeError(f"split_channels needs an even channel count, got {c}")
    return slice_axis(a, 1, 0, c // 2), slice_axis(a, 1, c // 2, c)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape))
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape))

    return _make(data, (a,), bw)


def mean_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    n = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def gather_rows(table: Tensor, idx: np.ndarray) -> Tensor:
    """Row lookup ``table[idx]`` with scatter-add backward."""
    table = _wrap(table)
    idx = np.asarray(idx, dtype=np.intp)

    def bw(g):
        if table.requires_grad:
            full = np.zeros_like(table.data)
            np.add.at(full, idx, g)
            _accum(table, full)

    return _make(table.data[idx], (table,), bw)


# -- nonlinearities --------------------------------------------------------------

def gelu(a: Tensor) -> Tensor:
    a = _wrap(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    data = x * cdf

    def bw(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        _accum(a, g * (cdf + x * pdf))

    return _make(data, (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    a = _wrap(a)
    x = a.data
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    s = s.astype(x.dtype)

    def bw(g):
        _accum(a, g * s * (1.0 - s))

    return _make(s, (a,), bw)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = _wrap(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        inner = (g * s).sum(axis=axis, keepdims=True)
        _accum(a, s * (g - inner))

    return _make(s, (a,), bw)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = _wrap(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    data = z - lse
    s = np.exp(data)

    def bw(g):
        _accum(a, g - s * g.sum(axis=axis, keepdims=True))

    return _make(data, (a,), bw)


# -- normalization ----------------------------------------------------------------

def layernorm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale/shift."""
    a, gamma, beta = _wrap(a), _wrap(gamma), _wrap(beta)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    data = gamma.data * xhat + beta.data

    def bw(g):
        if gamma.requires_grad:
            _accum(gamma, _unbroadcast(g * xhat, gamma.data.shape))
        if beta.requires_grad:
            _accum(beta, _unbroadcast(g, beta.data.shape))
        if a.requires_grad:
            dxhat = g * gamma.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            _accum(a, inv * (dxhat - m1 - xhat * m2))

    return _make(data, (a, gamma, beta), bw)


@dataclass
class BatchNorm2d:
    """Per-channel batch normalization over (N, ., H, W) maps.

    ``gamma``/``beta`` are trainable; running statistics are plain arrays
    updated in train mode and consumed in eval mode.
    """

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @staticmethod
    def create(channels: int, dtype=np.float32, momentum: float = 0.1) -> "BatchNorm2d":
        return BatchNorm2d(
            gamma=Tensor(np.ones(channels, dtype=dtype), requires_grad=True),
            beta=Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            momentum=momentum,
        )


def batchnorm2d(a: Tensor, bn: BatchNorm2d, training: bool) -> Tensor:
    a = _wrap(a)
    x = a.data
    if x.ndim != 4:
        raise ShapeError(f"batchnorm2d expects (N, C, H, W), got {x.shape}")
    if x.shape[1] != bn.gamma.data.shape[0]:
        raise ShapeError(
            f"batchnorm2d: {x.shape[1]} channels vs {bn.gamma.data.shape[0]} params")
    axes = (0, 2, 3)
    gb = bn.gamma.data[None, :, None, None]
    bb = bn.beta.data[None, :, None, None]
    if training:
        mu = x.mean(axis=axes, keepdims=True)
        var = x.var(axis=axes, keepdims=True)
        bn.running_mean = ((1 - bn.momentum) * bn.running_mean
                           + bn.momentum * mu.reshape(-1)).astype(bn.running_mean.dtype)
        bn.running_var = ((1 - bn.momentum) * bn.running_var
                          + bn.momentum * var.reshape(-1)).astype(bn.running_var.dtype)
    else:
        mu = bn.running_mean[None, :, None, None]
        var = bn.running_var[None, :, None, None]
    inv = 1.0 / np.sqrt(var + bn.eps)
    xhat = (x - mu) * inv
    data = gb * xhat + bb

    def bw(g):
        if bn.gamma.requires_grad:
            _accum(bn.gamma, (g * xhat).sum(axis=axes))
        if bn.beta.requires_grad:
            _accum(bn.beta, g.sum(axis=axes))
        if a.requires_grad:
            dxhat = g * gb
            if training:
                m1 = dxhat.mean(axis=axes, keepdims=True)
                m2 = (dxhat * xhat).mean(axis=axes, keepdims=True)
                _accum(a, inv * (dxhat - m1 - xhat * m2))
            else:
                _accum(a, dxhat * inv)

    return _make(data, (a, bn.gamma, bn.beta), bw)


# -- convolutions ------------------------------------------------------------------

def conv1x1(a: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Pointwise conv: (N, Ci, H, W) x (Co, Ci) -> (N, Co, H, W)."""
    a, w = _wrap(a), _wrap(w)
    x = a.data
    if x.ndim != 4 or w.data.ndim != 2:
        raise ShapeError(f"conv1x1: input {x.shape}, weight {w.data.shape}")
    n, ci, h, wd = x.shape
    co, ci_w = w.data.shape
    if ci != ci_w:
        raise ShapeError(f"conv1x1: {ci} input channels vs weight {ci_w}")
    xm = np.ascontiguousarray(x.transpose(0, 2, 3, 1)).reshape(-1, ci)
    out = xm @ w.data.T
    data = np.ascontiguousarray(out.reshape(n, h, wd, co).transpose(0, 3, 1, 2))
    parents = [a, w]
    if b is not None:
        b = _wrap(b)
        data += b.data[None, :, None, None]
        parents.append(b)

    def bw(g):
        gm = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, co)
        if a.requires_grad:
            dx = (gm @ w.data).reshape(n, h, wd, ci)
            _accum(a, np.ascontiguousarray(dx.transpose(0, 3, 1, 2)))
        if w.requires_grad:
            _accum(w, gm.T @ xm)
        if b is not None and b.requires_grad:
            _accum(b, gm.sum(axis=0))

    return _make(data, tuple(parents), bw)


_DW_MASK_CACHE: dict[tuple, np.ndarray] = {}


def _dw_masks(h: int, w: int, kh: int, kw: int, dilation: int) -> np.ndarray:
    """(kh*kw, h*w, h*w) 0/1 shift masks: mask[t, src, dst] selects the source
    position each tap reads for each output position (zero padding)."""
    key = (h, w, kh, kw, dilation)
    cached = _DW_MASK_CACHE.get(key)
    if cached is not None:
        return cached
    ph = dilation * (kh - 1) // 2
    pw = dilation * (kw - 1) // 2
    hw = h * w
    masks = np.zeros((kh * kw, hw, hw), dtype=np.float32)
    t = 0
    for i in range(kh):
        for j in range(kw):
            di, dj = i * dilation - ph, j * dilation - pw
            for dst in range(hw):
                sh, sw = dst // w + di, dst % w + dj
                if 0 <= sh < h and 0 <= sw < w:
                    masks[t, sh * w + sw, dst] = 1.0
            t += 1
    if len(_DW_MASK_CACHE) > 32:
        _DW_MASK_CACHE.clear()
    _DW_MASK_CACHE[key] = masks
    return masks


def depthwise_conv2d(a: Tensor, k: Tensor, b: Tensor | None = None,
                     dilation: int = 1) -> Tensor:
    """Per-channel 'same' conv: (N, C, H, W) x (C, kh, kw), zero padding.

    Implemented as a per-channel position-mixing matmul built from
    precomputed tap masks; exact for any kernel/dilation on these small
    spatiotemporal grids.
    """
    a, k = _wrap(a), _wrap(k)
    x = a.data
    if x.ndim != 4 or k.data.ndim != 3:
        raise ShapeError(f"depthwise_conv2d: input {x.shape}, kernel {k.data.shape}")
    n, c, h, wd = x.shape
    ck, kh, kw = k.data.shape
    if c != ck:
        raise ShapeError(f"depthwise_conv2d: {c} channels vs kernel {ck}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"depthwise_conv2d needs odd kernel sizes, got {kh}x{kw}")
    hw = h * wd
    masks = _dw_masks(h, wd, kh, kw, dilation).astype(x.dtype, copy=False)
    masks2 = masks.reshape(kh * kw, hw * hw)
    mix = (k.data.reshape(c, kh * kw) @ masks2).reshape(c, hw, hw)
    xf = x.reshape(n, c, 1, hw)
    data = np.matmul(xf, mix).reshape(n, c, h, wd)
    parents = [a, k]
    if b is not None:
        b = _wrap(b)
        data = data + b.data[None, :, None, None]
        parents.append(b)

    def bw(g):
        gf = g.reshape(n, c, 1, hw)
        if k.requires_grad:
            xt = x.reshape(n, c, hw).swapaxes(0, 1)
            gt = g.reshape(n, c, hw).swapaxes(0, 1)
            src_dst = np.matmul(xt.swapaxes(-1, -2), gt)       # (c, hw, hw)
            dk = src_dst.reshape(c, hw * hw) @ masks2.T
            _accum(k, dk.reshape(c, kh, kw))
        if a.requires_grad:
            dx = np.matmul(gf, mix.swapaxes(-1, -2)).reshape(x.shape)
            _accum(a, dx)
        if b is not None and b.requires_grad:
            _accum(b, g.sum(axis=(0, 2, 3)))

    return _make(data, tuple(parents), bw)


def flatten_permute(a: Tensor) -> Tensor:
    """(N, E, H, W) -> (N, H*W, E) token sequence."""
    n, e, h, w = a.data.shape
    return reshape(transpose(a, (0, 2, 3, 1)), (n, h * w, e))


# -- stochastic regularizers --------------------------------------------------------

def dropout(a: Tensor, p: float, rng: np.random.Generator | None,
            training: bool) -> Tensor:
    """Zero elements with prob p in train mode, rescale survivors by 1/(1-p)."""
    a = _wrap(a)
    if not training or p <= 0.0:
        return a
    if p >= 1.0:
        return mul(a, np.zeros((), dtype=a.data.dtype))
    mask = (rng.random(a.data.shape) >= p).astype(a.data.dtype) / (1.0 - p)
    return mul(a, mask)


def droppath(a: Tensor, p: float, rng: np.random.Generator | None,
             training: bool) -> Tensor:
    """Stochastic depth: zero the whole branch per sample with prob p."""
    a = _wrap(a)
    if not training or p <= 0.0:
        return a
    shape = (a.data.shape[0],) + (1,) * (a.data.ndim - 1)
    if p >= 1.0:
        return mul(a, np.zeros(shape, dtype=a.data.dtype))
    mask = (rng.random(shape) >= p).astype(a.data.dtype) / (1.0 - p)
    return mul(a, mask)


# -- attention -----------------------------------------------------------------------

def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor
                                 ) -> tuple[Tensor, Tensor]:
    """softmax(q k^T / sqrt(d)) v over the last two axes.

    Returns (output, attention weights); weights rows are distributions over
    keys.
    """
    d = q.data.shape[-1]
    if k.data.shape[-1] != d:
        raise ShapeError(f"attention: query dim {d} vs key dim {k.data.shape[-1]}")
    scores = mul(matmul(q, transpose(k, _swap_last(k.data.ndim))),
                 1.0 / math.sqrt(d))
    attn = softmax(scores, axis=-1)
    return matmul(attn, v), attn


def _swap_last(ndim: int) -> tuple:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


# -- optimizer -----------------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> list[np.ndarray]:
    """One Adam update with bias correction. Returns new parameter arrays."""
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} params vs {len(grads)} grads")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ShapeError(f"param {i}: shape {p.shape} vs grad {g.shape}")
        if not np.isfinite(g).all():
            raise NonFiniteGradient(f"param {i}: non-finite gradient")
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g
        mhat = state.m[i] / bc1
        vhat = state.v[i] / bc2
        out.append((p - lr * mhat / (np.sqrt(vhat) + eps)).astype(p.dtype))
    return out


# -- init / checking / checkpoints ----------------------------------------------------

def trunc_normal(rng: np.random.Generator, shape, sd: float = 0.02,
                 dtype=np.float32) -> np.ndarray:
    """Normal(0, sd) resampled until everything lies within 2 sd."""
    x = rng.normal(0.0, sd, size=shape)
    while True:
        bad = np.abs(x) > 2.0 * sd
        if not bad.any():
            break
        x[bad] = rng.normal(0.0, sd, size=int(bad.sum()))
    return x.astype(dtype)


def parameter(data, dtype=np.float32) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


def grad_check(fn, tensors: list[Tensor], h: float = 1e-4) -> float:
    """Max relative error between backward grads and central differences.

    ``fn`` must rebuild its graph from the current ``tensors`` data on every
    call and return a scalar Tensor. Run at float64.
    """
    for t in tensors:
        t.grad = None
    out = fn()
    out.backward()
    analytic = [np.array(t.grad, dtype=np.float64) if t.grad is not None
                else np.zeros_like(t.data, dtype=np.float64) for t in tensors]
    worst = 0.0
    for t, ga in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        gn = np.zeros_like(ga).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(fn().data)
            flat[i] = orig - h
            fm = float(fn().data)
            flat[i] = orig
            gn[i] = (fp - fm) / (2.0 * h)
        gn = gn.reshape(ga.shape)
        denom = np.maximum(np.maximum(np.abs(ga), np.abs(gn)), 1e-3)
        worst = max(worst, float(np.max(np.abs(ga - gn) / denom)))
    return worst


def save_checkpoint(named: dict[str, np.ndarray], path: str | Path) -> None:
    lines = [CKPT_MAGIC, str(len(named))]
    blobs = []
    for name, arr in named.items():
        if "," in name or "\n" in name:
            raise ValueError(f"bad tensor name {name!r}")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        lines.append(",".join([name, str(arr.ndim)] + [str(d) for d in arr.shape]))
        blobs.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.readline().decode("ascii", errors="replace").rstrip("\n")
        if magic != CKPT_MAGIC:
            raise ParseError(f"{path}: bad magic line {magic!r}")
        try:
            n = int(fh.readline().decode("ascii").strip())
        except ValueError as exc:
            raise ParseError(f"{path}: bad tensor count") from exc
        entries = []
        for _ in range(n):
            parts = fh.readline().decode("ascii").rstrip("\n").split(",")
            if len(parts) < 2:
                raise ParseError(f"{path}: malformed tensor line {parts!r}")
            name = parts[0]
            ndim = int(parts[1])
            shape = tuple(int(d) for d in parts[2:2 + ndim])
            if len(shape) != ndim:
                raise ParseError(f"{path}: tensor {name}: bad shape line")
            entries.append((name, shape))
        out = {}
        for name, shape in entries:
            count = int(np.prod(shape)) if shape else 1
            blob = fh.read(count * 4)
            if len(blob) != count * 4:
                raise ParseError(f"{path}: tensor {name}: truncated payload")
            out[name] = np.frombuffer(blob, dtype="<f4").reshape(shape).copy()
    return out
