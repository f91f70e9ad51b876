"""Dense-tensor engine with reverse-mode gradients and forward-mode JVPs.

Tensors wrap contiguous numpy arrays (float32 for training, float64 for
oracle-grade tests).  Reverse mode records a tape of backward closures as ops
execute; ``backward`` replays it in reverse topological order.  Forward mode
propagates (primal, tangent) pairs -- dual numbers -- through the *same*
kernels, which is what the distillation tangent needs: one extra forward pass,
flat memory.

Layout conventions: images are NHWC, conv weights are (kh, kw, Cin, Cout),
linear weights are (Din, Dout).  Broadcasting is deliberately restricted to
scalar-tensor; the few structured broadcasts the networks need (channel bias,
per-sample scale) are dedicated ops.
"""

from __future__ import annotations

import numpy as np

from . import _kernels

__all__ = [
    "Tensor", "DualTensor", "Graph", "ShapeError", "no_grad", "jvp", "grad",
    "add", "sub", "mul", "neg", "matmul", "linear", "conv2d",
    "conv2d_transpose", "group_norm", "silu", "softmax", "reshape", "concat",
    "sum_", "mean_", "sin", "cos", "exp", "log", "sqrt", "add_channels",
    "mul_batch", "sin_cos_embed",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""


def _shape_fail(op, *shapes):
    raise ShapeError(f"{op}: incompatible shapes {' vs '.join(str(tuple(s)) for s in shapes)}")


# ---------------------------------------------------------------------------
# value types

_grad_enabled = True


class no_grad:
    """Context manager disabling tape construction (inference / targets)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """A dense array plus optional gradient and tape linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        # ascontiguousarray would promote 0-d scalars to 1-d
        self.data = arr if arr.ndim == 0 else np.ascontiguousarray(arr)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # numpy should never silently absorb a Tensor through a ufunc
    __array_ufunc__ = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if self.grad is None:
            self.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
        else:
            self.grad += g

    def backward(self, seed=None):
        if seed is None:
            if self.data.ndim != 0:
                raise ValueError("backward() without seed requires a scalar tensor, "
                                 f"got shape {self.shape}")
            seed = np.ones((), dtype=self.dtype)
        Graph.trace(self).run_backward(self, np.asarray(seed, dtype=self.dtype))

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.dtype}, grad={self.requires_grad})"

    # operator sugar
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class DualTensor:
    """(primal, tangent) pair for forward-mode differentiation."""

    __slots__ = ("primal", "tangent")

    def __init__(self, primal, tangent):
        p = np.asarray(primal)
        p = p if p.ndim == 0 else np.ascontiguousarray(p)
        if tangent is None:
            tangent = np.zeros_like(p)
        t = np.asarray(tangent, dtype=p.dtype)
        t = t if t.ndim == 0 else np.ascontiguousarray(t)
        if p.shape != t.shape:
            _shape_fail("DualTensor", p.shape, t.shape)
        self.primal = p
        self.tangent = t

    @property
    def shape(self):
        return self.primal.shape

    @property
    def dtype(self):
        return self.primal.dtype

    def __repr__(self):
        return f"DualTensor(shape={tuple(self.shape)}, dtype={self.dtype})"

    def __array_ufunc__(self, ufunc, method, *a, **kw):
        raise TypeError(f"unsupported op '{ufunc.__name__}' on DualTensor; "
                        "use the engine ops so the tangent propagates")

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

    def __neg__(self):
        return neg(self)


class Graph:
    """Reverse-topologically ordered view of the tape below one root.

    Nodes are the Tensors themselves; each holds its parents and a
    local-derivative closure.  Acyclicity is structural: ops only ever link a
    fresh output to existing inputs.
    """

    __slots__ = ("nodes",)

    def __init__(self, nodes):
        self.nodes = nodes

    @staticmethod
    def trace(root):
        order, seen, stack = [], set(), [(root, False)]
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
        return Graph(order)

    def run_backward(self, root, seed):
        root._accum(seed)
        for node in reversed(self.nodes):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


# ---------------------------------------------------------------------------
# dispatch helpers

def _is_dual(x):
    return isinstance(x, DualTensor)


def _parts(x, dtype=None):
    """(primal ndarray, tangent ndarray or None) for any operand."""
    if isinstance(x, DualTensor):
        return x.primal, x.tangent
    if isinstance(x, Tensor):
        return x.data, None
    return np.asarray(x, dtype=dtype), None


def _rg(x):
    return isinstance(x, Tensor) and x.requires_grad and _grad_enabled


def _out(data, parents, backward):
    """Build the output tensor, attaching the tape node when grads flow."""
    live = tuple(p for p in parents if _rg(p))
    t = Tensor(data)
    if live:
        t.requires_grad = True
        t._parents = live
        t._backward = backward
    return t


def _scalar_ok(a, b):
    return a.ndim == 0 or b.ndim == 0 or a.shape == b.shape


# ---------------------------------------------------------------------------
# elementwise arithmetic

def _ew_binary(name, a, b, fwd, da_fn, db_fn, tan_fn):
    dual = _is_dual(a) or _is_dual(b)
    dtype = (a if isinstance(a, (Tensor, DualTensor)) else b).dtype
    pa, ta = _parts(a, dtype)
    pb, tb = _parts(b, dtype)
    if not _scalar_ok(pa, pb):
        _shape_fail(name, pa.shape, pb.shape)
    out = fwd(pa, pb)
    if dual:
        return DualTensor(out, tan_fn(pa, pb, ta, tb, out))

    def bw(g):
        if _rg(a):
            a._accum(_unbroadcast(da_fn(g, pa, pb, out), pa.shape))
        if _rg(b):
            b._accum(_unbroadcast(db_fn(g, pa, pb, out), pb.shape))

    return _out(out, (a, b), bw)


def _unbroadcast(g, shape):
    # only scalar-tensor broadcasting exists; collapse back to scalar if needed
    if g.shape != tuple(shape):
        return g.sum()
    return g


def add(a, b):
    def tan(pa, pb, ta, tb, out):
        if ta is None:
            return tb if tb.shape == out.shape else np.broadcast_to(tb, out.shape).copy()
        if tb is None:
            return ta if ta.shape == out.shape else np.broadcast_to(ta, out.shape).copy()
        return ta + tb
    return _ew_binary("add", a, b, lambda x, y: x + y,
                      lambda g, x, y, o: g, lambda g, x, y, o: g, tan)


def sub(a, b):
    def tan(pa, pb, ta, tb, out):
        if ta is None:
            t = -tb
        elif tb is None:
            t = ta
        else:
            t = ta - tb
        return t if t.shape == out.shape else np.broadcast_to(t, out.shape).copy()
    return _ew_binary("sub", a, b, lambda x, y: x - y,
                      lambda g, x, y, o: g, lambda g, x, y, o: -g, tan)


def mul(a, b):
    def tan(pa, pb, ta, tb, out):
        t = 0
        if ta is not None:
            t = ta * pb
        if tb is not None:
            t = t + pa * tb
        return t if getattr(t, "shape", None) == out.shape else np.broadcast_to(t, out.shape).copy()
    return _ew_binary("mul", a, b, lambda x, y: x * y,
                      lambda g, x, y, o: g * y, lambda g, x, y, o: g * x, tan)


def neg(a):
    pa, ta = _parts(a)
    if _is_dual(a):
        return DualTensor(-pa, -ta)

    def bw(g):
        if _rg(a):
            a._accum(-g)

    return _out(-pa, (a,), bw)


def _ew_unary(name, a, fwd, dfn):
    """Unary elementwise op; dfn(primal, out) returns d out / d in."""
    pa, ta = _parts(a)
    out = fwd(pa)
    if _is_dual(a):
        return DualTensor(out, dfn(pa, out) * ta)

    def bw(g):
        if _rg(a):
            a._accum(g * dfn(pa, out))

    return _out(out, (a,), bw)


def sin(a):
    return _ew_unary("sin", a, np.sin, lambda x, o: np.cos(x))


def cos(a):
    return _ew_unary("cos", a, np.cos, lambda x, o: -np.sin(x))


def exp(a):
    return _ew_unary("exp", a, np.exp, lambda x, o: o)


def log(a):
    return _ew_unary("log", a, np.log, lambda x, o: 1.0 / x)


def sqrt(a):
    return _ew_unary("sqrt", a, np.sqrt, lambda x, o: 0.5 / o)


def silu(a):
    """x * sigmoid(x)."""
    pa, ta = _parts(a)
    out, dlocal = _kernels.silu_fwd(pa)
    if _is_dual(a):
        return DualTensor(out, dlocal * ta)

    def bw(g):
        if _rg(a):
            a._accum(g * dlocal)

    return _out(out, (a,), bw)


# ---------------------------------------------------------------------------
# structured broadcasts the networks need

def add_channels(x, v):
    """x[B, ..., C] + v[B, C] broadcast over the middle axes."""
    px, tx = _parts(x)
    pv, tv = _parts(v)
    if px.shape[0] != pv.shape[0] or px.shape[-1] != pv.shape[-1] or pv.ndim != 2:
        _shape_fail("add_channels", px.shape, pv.shape)
    mid = (1,) * (px.ndim - 2)
    vexp = pv.reshape(pv.shape[0], *mid, pv.shape[1])
    out = px + vexp
    if _is_dual(x) or _is_dual(v):
        tan = np.zeros_like(out)
        if tx is not None:
            tan += tx
        if tv is not None:
            tan += tv.reshape(vexp.shape)
        return DualTensor(out, tan)

    axes = tuple(range(1, px.ndim - 1))

    def bw(g):
        if _rg(x):
            x._accum(g)
        if _rg(v):
            v._accum(g.sum(axis=axes))

    return _out(out, (x, v), bw)


def mul_batch(x, s):
    """x[B, ...] * s[B] with the scalar broadcast over per-sample axes."""
    px, tx = _parts(x)
    ps, ts = _parts(s)
    if ps.ndim != 1 or ps.shape[0] != px.shape[0]:
        _shape_fail("mul_batch", px.shape, ps.shape)
    sexp = ps.reshape((-1,) + (1,) * (px.ndim - 1))
    out = px * sexp
    if _is_dual(x) or _is_dual(s):
        tan = np.zeros_like(out)
        if tx is not None:
            tan += tx * sexp
        if ts is not None:
            tan += px * ts.reshape(sexp.shape)
        return DualTensor(out, tan)

    axes = tuple(range(1, px.ndim))

    def bw(g):
        if _rg(x):
            x._accum(g * sexp)
        if _rg(s):
            s._accum((g * px).sum(axis=axes))

    return _out(out, (x, s), bw)


# ---------------------------------------------------------------------------
# shape ops

def reshape(a, shape):
    pa, ta = _parts(a)
    out = pa.reshape(shape)
    if _is_dual(a):
        return DualTensor(out, ta.reshape(shape))
    old = pa.shape

    def bw(g):
        if _rg(a):
            a._accum(g.reshape(old))

    return _out(out, (a,), bw)


def concat(tensors, axis=-1):
    duals = any(_is_dual(t) for t in tensors)
    parts = [_parts(t) for t in tensors]
    out = np.concatenate([p for p, _ in parts], axis=axis)
    if duals:
        tans = [t if t is not None else np.zeros_like(p) for p, t in parts]
        return DualTensor(out, np.concatenate(tans, axis=axis))

    sizes = [p.shape[axis] for p, _ in parts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        pieces = np.split(g, splits, axis=axis)
        for t, piece in zip(tensors, pieces):
            if _rg(t):
                t._accum(piece)

    return _out(out, tuple(tensors), bw)


def sum_(a, axis=None):
    pa, ta = _parts(a)
    out = pa.sum(axis=axis)
    if _is_dual(a):
        return DualTensor(out, ta.sum(axis=axis))
    shape = pa.shape

    def bw(g):
        if _rg(a):
            a._accum(_expand_reduced(g, shape, axis))

    return _out(out, (a,), bw)


def mean_(a, axis=None):
    pa, ta = _parts(a)
    out = pa.mean(axis=axis)
    if _is_dual(a):
        return DualTensor(out, ta.mean(axis=axis))
    shape = pa.shape
    n = pa.size if axis is None else np.prod([shape[i] for i in np.atleast_1d(axis)])

    def bw(g):
        if _rg(a):
            a._accum(_expand_reduced(g, shape, axis) / n)

    return _out(out, (a,), bw)


def _expand_reduced(g, shape, axis):
    if axis is None:
        return np.broadcast_to(g, shape).astype(g.dtype, copy=True)
    axes = tuple(np.atleast_1d(axis) % len(shape))
    gshape = [1 if i in axes else s for i, s in enumerate(shape)]
    return np.broadcast_to(g.reshape(gshape), shape).astype(g.dtype, copy=True)


# ---------------------------------------------------------------------------
# matmul / linear / softmax

def matmul(a, b, transpose_b=False):
    """2-D or batched 3-D matrix product."""
    pa, ta = _parts(a)
    pb, tb = _parts(b)
    pbT = np.swapaxes(pb, -1, -2) if transpose_b else pb
    if pa.shape[-1] != pbT.shape[-2]:
        _shape_fail("matmul", pa.shape, pb.shape)
    out = pa @ pbT
    if _is_dual(a) or _is_dual(b):
        tan = np.zeros_like(out)
        if ta is not None:
            tan += ta @ pbT
        if tb is not None:
            tbT = np.swapaxes(tb, -1, -2) if transpose_b else tb
            tan += pa @ tbT
        return DualTensor(out, tan)

    def bw(g):
        if _rg(a):
            a._accum(g @ np.swapaxes(pbT, -1, -2))
        if _rg(b):
            gb = np.swapaxes(pa, -1, -2) @ g
            if transpose_b:
                gb = np.swapaxes(gb, -1, -2)
            if gb.ndim > pb.ndim:  # batched product against unbatched weight
                gb = gb.sum(axis=tuple(range(gb.ndim - pb.ndim)))
            b._accum(np.ascontiguousarray(gb))

    return _out(out, (a, b), bw)


def linear(x, w, b=None):
    """x[..., Din] @ w[Din, Dout] + b[Dout]."""
    y = matmul(x, w)
    if b is None:
        return y
    pb, tb = _parts(b)
    py, ty = _parts(y)
    out = py + pb
    if _is_dual(y) or _is_dual(b):
        tan = np.zeros_like(out)
        if ty is not None:
            tan += ty
        if tb is not None:
            tan += tb
        return DualTensor(out, tan)

    axes = tuple(range(py.ndim - 1))

    def bw(g):
        if _rg(y):
            y._accum(g)
        if _rg(b):
            b._accum(g.sum(axis=axes))

    return _out(out, (y, b), bw)


def softmax(a, axis=-1):
    pa, ta = _parts(a)
    shifted = pa - pa.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    if _is_dual(a):
        dot = (ta * out).sum(axis=axis, keepdims=True)
        return DualTensor(out, out * (ta - dot))

    def bw(g):
        if _rg(a):
            dot = (g * out).sum(axis=axis, keepdims=True)
            a._accum(out * (g - dot))

    return _out(out, (a,), bw)


# ---------------------------------------------------------------------------
# convolution kernels (NHWC, weights (kh, kw, Cin, Cout))

def _pad_hw(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))


def _im2col(xp, kh, kw, stride):
    """Patch matrix (B*Ho*Wo, kh*kw*C) from a padded NHWC array."""
    B, Hp, Wp, C = xp.shape
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    s = xp.strides
    cols = np.empty((B, Ho, Wo, kh, kw * C), xp.dtype)
    for a in range(kh):
        src = np.lib.stride_tricks.as_strided(
            xp[:, a:], (B, Ho, Wo, kw * C),
            (s[0], s[1] * stride, s[2] * stride, s[3]))
        cols[:, :, :, a, :] = src
    return cols.reshape(B * Ho * Wo, kh * kw * C), Ho, Wo


def _col2im(dcols, xp_shape, kh, kw, stride):
    """Adjoint of _im2col: scatter-add patch rows back onto the padded canvas."""
    B, Hp, Wp, C = xp_shape
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    dc = dcols.reshape(B, Ho, Wo, kh, kw, C)
    return _kernels.col2im(dc, Hp, Wp, stride)


def _conv2d_fwd(x, w, stride, pad):
    kh, kw, Ci, Co = w.shape
    xp = _pad_hw(x, pad)
    cols, Ho, Wo = _im2col(xp, kh, kw, stride)
    y = cols @ w.reshape(-1, Co)
    return y.reshape(x.shape[0], Ho, Wo, Co)


def _conv2d_dx(dy, w, x_shape, stride, pad):
    kh, kw, Ci, Co = w.shape
    B, H, W, _ = x_shape
    dcols = dy.reshape(-1, Co) @ w.reshape(-1, Co).T
    dxp = _col2im(dcols, (B, H + 2 * pad, W + 2 * pad, Ci), kh, kw, stride)
    if pad:
        dxp = np.ascontiguousarray(dxp[:, pad:-pad, pad:-pad, :])
    return dxp


def _conv2d_dw(dy, x, w_shape, stride, pad):
    kh, kw, Ci, Co = w_shape
    cols, _, _ = _im2col(_pad_hw(x, pad), kh, kw, stride)
    dw = cols.T @ dy.reshape(-1, Co)
    return dw.reshape(w_shape)


def conv2d(x, w, b=None, stride=1, pad=0):
    """2-D cross-correlation with optional channel bias."""
    px, tx = _parts(x)
    pw, tw = _parts(w)
    if px.ndim != 4 or pw.ndim != 4 or px.shape[3] != pw.shape[2]:
        _shape_fail("conv2d", px.shape, pw.shape)
    out = _conv2d_fwd(px, pw, stride, pad)
    pb = tb = None
    if b is not None:
        pb, tb = _parts(b)
        out += pb
    if _is_dual(x) or _is_dual(w) or (b is not None and _is_dual(b)):
        tan = np.zeros_like(out)
        if tx is not None:
            tan += _conv2d_fwd(tx, pw, stride, pad)
        if tw is not None:
            tan += _conv2d_fwd(px, tw, stride, pad)
        if tb is not None:
            tan += tb
        return DualTensor(out, tan)

    def bw(g):
        if _rg(x):
            x._accum(_conv2d_dx(g, pw, px.shape, stride, pad))
        if _rg(w):
            w._accum(_conv2d_dw(g, px, pw.shape, stride, pad))
        if b is not None and _rg(b):
            b._accum(g.sum(axis=(0, 1, 2)))

    parents = (x, w) if b is None else (x, w, b)
    return _out(out, parents, bw)


def _convt_fwd(x, w, stride, pad, output_padding):
    kh, kw, Ci, Co = w.shape
    B, H, W, _ = x.shape
    Hy = (H - 1) * stride + kh - 2 * pad + output_padding
    Wy = (W - 1) * stride + kw - 2 * pad + output_padding
    patches = x.reshape(-1, Ci) @ w.reshape(kh, kw, Ci, Co).transpose(2, 0, 1, 3).reshape(Ci, -1)
    canvas = _col2im(patches.reshape(B, H, W, kh, kw, Co).reshape(B * H * W, -1),
                     (B, Hy + 2 * pad, Wy + 2 * pad, Co), kh, kw, stride)
    if pad:
        canvas = np.ascontiguousarray(canvas[:, pad:pad + Hy, pad:pad + Wy, :])
    return canvas


def _convt_dx(dy, w, x_shape, stride, pad):
    kh, kw, Ci, Co = w.shape
    B, H, W, _ = x_shape
    dyp = _pad_hw(dy, pad)
    s = dyp.strides
    Hn = (H - 1) * stride + kh
    Wn = (W - 1) * stride + kw
    if dyp.shape[1] < Hn or dyp.shape[2] < Wn:  # output_padding region gets no grad
        grow_h, grow_w = Hn - dyp.shape[1], Wn - dyp.shape[2]
        dyp = np.pad(dyp, ((0, 0), (0, grow_h), (0, grow_w), (0, 0)))
    cols, Ho, Wo = _im2col(dyp, kh, kw, stride)
    dx = cols @ w.transpose(0, 1, 3, 2).reshape(-1, Ci)
    return dx.reshape(B, H, W, Ci)


def _convt_dw(dy, x, w_shape, stride, pad):
    kh, kw, Ci, Co = w_shape
    B, H, W, _ = x.shape
    dyp = _pad_hw(dy, pad)
    Hn = (H - 1) * stride + kh
    Wn = (W - 1) * stride + kw
    if dyp.shape[1] < Hn or dyp.shape[2] < Wn:
        dyp = np.pad(dyp, ((0, 0), (0, Hn - dyp.shape[1]), (0, Wn - dyp.shape[2]), (0, 0)))
    cols, _, _ = _im2col(dyp, kh, kw, stride)
    dw = x.reshape(-1, Ci).T @ cols.reshape(B * H * W, kh * kw * Co)
    return dw.reshape(Ci, kh, kw, Co).transpose(1, 2, 0, 3)


def conv2d_transpose(x, w, b=None, stride=1, pad=0, output_padding=0):
    """Transposed convolution (the adjoint of conv2d's spatial map)."""
    px, tx = _parts(x)
    pw, tw = _parts(w)
    if px.ndim != 4 or pw.ndim != 4 or px.shape[3] != pw.shape[2]:
        _shape_fail("conv2d_transpose", px.shape, pw.shape)
    out = _convt_fwd(px, pw, stride, pad, output_padding)
    pb = tb = None
    if b is not None:
        pb, tb = _parts(b)
        out += pb
    if _is_dual(x) or _is_dual(w) or (b is not None and _is_dual(b)):
        tan = np.zeros_like(out)
        if tx is not None:
            tan += _convt_fwd(tx, pw, stride, pad, output_padding)
        if tw is not None:
            tan += _convt_fwd(px, tw, stride, pad, output_padding)
        if tb is not None:
            tan += tb
        return DualTensor(out, tan)

    def bw(g):
        if _rg(x):
            x._accum(_convt_dx(g, pw, px.shape, stride, pad))
        if _rg(w):
            w._accum(_convt_dw(g, px, pw.shape, stride, pad))
        if b is not None and _rg(b):
            b._accum(g.sum(axis=(0, 1, 2)))

    parents = (x, w) if b is None else (x, w, b)
    return _out(out, parents, bw)


# ---------------------------------------------------------------------------
# group normalization

def group_norm(x, gamma, beta, groups, eps=1e-5):
    """GroupNorm over (H, W, C/groups) per sample, per-channel affine."""
    px, tx = _parts(x)
    pg, tg = _parts(gamma)
    pbta, tb = _parts(beta)
    B, H, W, C = px.shape
    if C % groups or pg.shape != (C,) or pbta.shape != (C,):
        _shape_fail("group_norm", px.shape, pg.shape)
    cg = C // groups
    xg = px.reshape(B, H * W, groups, cg)
    gamma2 = pg.reshape(groups, cg)
    beta2 = pbta.reshape(groups, cg)
    y4, xhat4, invstd = _kernels.gn_fwd(xg, gamma2, beta2, eps)
    out = y4.reshape(B, H, W, C)

    if _is_dual(x) or _is_dual(gamma) or _is_dual(beta):
        tan = np.zeros_like(out)
        if tx is not None:
            t4 = _kernels.gn_tangent(xg, tx.reshape(xg.shape), xhat4, invstd, gamma2)
            tan += t4.reshape(B, H, W, C)
        if tg is not None:
            tan += xhat4.reshape(B, H, W, C) * tg
        if tb is not None:
            tan += tb
        return DualTensor(out, tan)

    def bw(g):
        need_x = _rg(x)
        dx4, dgamma_p, dbeta_p = _kernels.gn_bwd(g.reshape(xg.shape), xhat4,
                                                 gamma2, invstd)
        if _rg(gamma):
            gamma._accum(dgamma_p.sum(axis=0).reshape(C))
        if _rg(beta):
            beta._accum(dbeta_p.sum(axis=0).reshape(C))
        if need_x:
            x._accum(dx4.reshape(B, H, W, C))

    return _out(out, (x, gamma, beta), bw)


# ---------------------------------------------------------------------------
# sinusoidal time features

def sin_cos_embed(t, freqs):
    """[sin(t*w_k) | cos(t*w_k)] for per-sample scalar t[B] and fixed freqs[K]."""
    pt, tt = _parts(t)
    w = np.asarray(freqs, pt.dtype)
    if pt.ndim != 1:
        _shape_fail("sin_cos_embed", pt.shape, w.shape)
    arg = pt[:, None] * w[None, :]
    out = np.concatenate([np.sin(arg), np.cos(arg)], axis=1)
    if _is_dual(t):
        darg = tt[:, None] * w[None, :]
        tan = np.concatenate([np.cos(arg) * darg, -np.sin(arg) * darg], axis=1)
        return DualTensor(out, tan)

    K = w.shape[0]

    def bw(g):
        if _rg(t):
            dt = (g[:, :K] * np.cos(arg) - g[:, K:] * np.sin(arg)) @ w
            t._accum(dt)

    return _out(out, (t,), bw)


# ---------------------------------------------------------------------------
# functional entry points

def jvp(fn, inputs, tangents):
    """Evaluate fn and its directional derivative in one dual-number pass.

    ``inputs`` / ``tangents`` are matching arrays (or scalars, or sequences of
    them).  Returns (value, directional_derivative) as numpy arrays.
    """
    single = not isinstance(inputs, (tuple, list))
    ins = [inputs] if single else list(inputs)
    tans = [tangents] if single else list(tangents)
    if len(ins) != len(tans):
        raise ValueError("jvp: inputs and tangents must pair up")
    duals = []
    for x, v in zip(ins, tans):
        p = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64 if np.isscalar(x) else None)
        v = np.asarray(v, dtype=p.dtype)
        if np.shape(p) != np.shape(v):
            _shape_fail("jvp", np.shape(p), np.shape(v))
        duals.append(DualTensor(p, v))
    out = fn(*duals)
    if not isinstance(out, DualTensor):
        raise TypeError("jvp: function output lost its tangent; "
                        "compose it from engine ops only")
    return out.primal, out.tangent


def grad(loss_fn, params, *inputs):
    """Gradients of a scalar loss w.r.t. a dict of named parameter tensors."""
    for p in params.values():
        p.zero_grad()
    loss = loss_fn(params, *inputs)
    if not isinstance(loss, Tensor) or loss.data.ndim != 0:
        raise ValueError("grad: loss_fn must return a scalar Tensor")
    loss.backward()
    out = {}
    for name, p in params.items():
        out[name] = p.grad if p.grad is not None else np.zeros_like(p.data)
    return loss.item(), out
