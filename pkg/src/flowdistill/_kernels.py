"""Hot array kernels: numba-compiled when available, numpy otherwise.

Every kernel writes each output element from exactly one parallel iteration,
so results are bitwise reproducible regardless of thread scheduling.
Accumulations run in float64 scalars even for float32 data.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit, prange
    HAVE_NUMBA = True
except ImportError:                                       # pragma: no cover
    HAVE_NUMBA = False

    def njit(*a, **k):
        def deco(f):
            return f
        return deco

    prange = range

_JIT = dict(parallel=True, fastmath=True, cache=True)


# ---------------------------------------------------------------------------
# col2im (adjoint of patch extraction), strided

@njit(**_JIT)
def _col2im_nb(dc, Hp, Wp, stride):
    B, Ho, Wo, kh, kw, C = dc.shape
    out = np.zeros((B, Hp, Wp, C), dc.dtype)
    for b in prange(B):
        for i in range(Ho):
            for a in range(kh):
                ii = i * stride + a
                for j in range(Wo):
                    jj = j * stride
                    for d in range(kw):
                        for c in range(C):
                            out[b, ii, jj + d, c] += dc[b, i, j, a, d, c]
    return out


def _col2im_np(dc, Hp, Wp, stride):
    B, Ho, Wo, kh, kw, C = dc.shape
    out = np.zeros((B, Hp, Wp, C), dc.dtype)
    for a in range(kh):
        for d in range(kw):
            out[:, a:a + (Ho - 1) * stride + 1:stride,
                d:d + (Wo - 1) * stride + 1:stride, :] += dc[:, :, :, a, d, :]
    return out


def col2im(dcols_6d, Hp, Wp, stride):
    dc = np.ascontiguousarray(dcols_6d)
    if HAVE_NUMBA:
        return _col2im_nb(dc, Hp, Wp, stride)
    return _col2im_np(dc, Hp, Wp, stride)


# ---------------------------------------------------------------------------
# group norm

@njit(**_JIT)
def _gn_fwd_nb(x4, gamma2, beta2, eps):
    B, P, G, cg = x4.shape
    y = np.empty_like(x4)
    xhat = np.empty_like(x4)
    invstd = np.empty((B, G), x4.dtype)
    for bg in prange(B * G):
        b = bg // G
        g = bg % G
        s = 0.0
        s2 = 0.0
        for p in range(P):
            for c in range(cg):
                v = float(x4[b, p, g, c])
                s += v
                s2 += v * v
        n = P * cg
        mu = s / n
        var = s2 / n - mu * mu
        if var < 0.0:
            var = 0.0
        inv = 1.0 / np.sqrt(var + eps)
        invstd[b, g] = inv
        for p in range(P):
            for c in range(cg):
                xh = (x4[b, p, g, c] - mu) * inv
                xhat[b, p, g, c] = xh
                y[b, p, g, c] = xh * gamma2[g, c] + beta2[g, c]
    return y, xhat, invstd


def _gn_fwd_np(x4, gamma2, beta2, eps):
    mu = x4.mean(axis=(1, 3), keepdims=True)
    var = x4.var(axis=(1, 3), keepdims=True)
    invstd = (1.0 / np.sqrt(var + eps)).astype(x4.dtype)
    xhat = (x4 - mu) * invstd
    y = xhat * gamma2[None, None] + beta2[None, None]
    return y, xhat, invstd[:, 0, :, 0]


def gn_fwd(x4, gamma2, beta2, eps):
    if HAVE_NUMBA:
        return _gn_fwd_nb(x4, gamma2, beta2, x4.dtype.type(eps))
    return _gn_fwd_np(x4, gamma2, beta2, x4.dtype.type(eps))


@njit(**_JIT)
def _gn_bwd_nb(dy4, xhat4, gamma2, invstd):
    B, P, G, cg = dy4.shape
    dx = np.empty_like(dy4)
    dgamma_p = np.zeros((B, G, cg), dy4.dtype)
    dbeta_p = np.zeros((B, G, cg), dy4.dtype)
    for bg in prange(B * G):
        b = bg // G
        g = bg % G
        m1 = 0.0
        m2 = 0.0
        for p in range(P):
            for c in range(cg):
                dxh = float(dy4[b, p, g, c]) * float(gamma2[g, c])
                xh = float(xhat4[b, p, g, c])
                m1 += dxh
                m2 += dxh * xh
                dgamma_p[b, g, c] += dy4[b, p, g, c] * xhat4[b, p, g, c]
                dbeta_p[b, g, c] += dy4[b, p, g, c]
        n = P * cg
        m1 /= n
        m2 /= n
        inv = invstd[b, g]
        for p in range(P):
            for c in range(cg):
                dxh = dy4[b, p, g, c] * gamma2[g, c]
                dx[b, p, g, c] = (dxh - m1 - xhat4[b, p, g, c] * m2) * inv
    return dx, dgamma_p, dbeta_p


def _gn_bwd_np(dy4, xhat4, gamma2, invstd):
    dxhat = dy4 * gamma2[None, None]
    m1 = dxhat.mean(axis=(1, 3), keepdims=True)
    m2 = (dxhat * xhat4).mean(axis=(1, 3), keepdims=True)
    dx = (dxhat - m1 - xhat4 * m2) * invstd[:, None, :, None]
    dgamma_p = (dy4 * xhat4).sum(axis=1)
    dbeta_p = dy4.sum(axis=1)
    return dx, dgamma_p, dbeta_p


def gn_bwd(dy4, xhat4, gamma2, invstd):
    if HAVE_NUMBA:
        return _gn_bwd_nb(np.ascontiguousarray(dy4), xhat4, gamma2, invstd)
    return _gn_bwd_np(dy4, xhat4, gamma2, invstd)


@njit(**_JIT)
def _gn_tangent_nb(x4, tx4, xhat4, invstd, gamma2):
    B, P, G, cg = x4.shape
    out = np.empty_like(x4)
    for bg in prange(B * G):
        b = bg // G
        g = bg % G
        s_t = 0.0
        s_xt = 0.0
        for p in range(P):
            for c in range(cg):
                tv = float(tx4[b, p, g, c])
                s_t += tv
                s_xt += float(xhat4[b, p, g, c]) * tv
        n = P * cg
        tmu = s_t / n
        txv = s_xt / n          # mean(xhat * tx) = dvar / (2 std)
        inv = invstd[b, g]
        for p in range(P):
            for c in range(cg):
                dxh = (tx4[b, p, g, c] - tmu) * inv - xhat4[b, p, g, c] * txv * inv
                out[b, p, g, c] = dxh * gamma2[g, c]
    return out


def _gn_tangent_np(x4, tx4, xhat4, invstd, gamma2):
    tmu = tx4.mean(axis=(1, 3), keepdims=True)
    txv = (xhat4 * tx4).mean(axis=(1, 3), keepdims=True)
    inv = invstd[:, None, :, None]
    dxh = (tx4 - tmu) * inv - xhat4 * txv * inv
    return dxh * gamma2[None, None]


def gn_tangent(x4, tx4, xhat4, invstd, gamma2):
    """Directional derivative of the normalized output times gamma."""
    if HAVE_NUMBA:
        return _gn_tangent_nb(x4, np.ascontiguousarray(tx4), xhat4, invstd, gamma2)
    return _gn_tangent_np(x4, tx4, xhat4, invstd, gamma2)


# ---------------------------------------------------------------------------
# SiLU

@njit(**_JIT)
def _silu_nb(x):
    out = np.empty_like(x)
    dlocal = np.empty_like(x)
    xf = x.reshape(-1)
    of = out.reshape(-1)
    df = dlocal.reshape(-1)
    for i in prange(xf.size):
        s = 1.0 / (1.0 + np.exp(-xf[i]))
        of[i] = xf[i] * s
        df[i] = s * (1.0 + xf[i] * (1.0 - s))
    return out, dlocal


def silu_fwd(x):
    """Returns (x * sigmoid(x), local derivative)."""
    if HAVE_NUMBA:
        return _silu_nb(np.ascontiguousarray(x))
    s = 1.0 / (1.0 + np.exp(-x))
    return x * s, s * (1.0 + x * (1.0 - s))


# ---------------------------------------------------------------------------
# optimizer / gradient utilities

@njit(**_JIT)
def _adam_nb(p, g, m, v, lr, b1, b2, eps, bias1, bias2, wd):
    for i in prange(p.size):
        gi = g[i]
        m[i] = b1 * m[i] + (1.0 - b1) * gi
        v[i] = b2 * v[i] + (1.0 - b2) * gi * gi
        upd = lr * (m[i] / bias1) / (np.sqrt(v[i] / bias2) + eps)
        if wd != 0.0:
            upd += lr * wd * p[i]
        p[i] -= upd
    return p


def adam_update(p, g, m, v, lr, b1, b2, eps, bias1, bias2, wd):
    if HAVE_NUMBA and p.size > 1024:
        _adam_nb(p.reshape(-1), np.ascontiguousarray(g).reshape(-1),
                 m.reshape(-1), v.reshape(-1),
                 p.dtype.type(lr), p.dtype.type(b1), p.dtype.type(b2),
                 p.dtype.type(eps), p.dtype.type(bias1), p.dtype.type(bias2),
                 p.dtype.type(wd))
        return
    m *= b1
    m += (1 - b1) * g
    v *= b2
    v += (1 - b2) * g * g
    upd = lr * (m / bias1) / (np.sqrt(v / bias2) + eps)
    if wd:
        upd = upd + (lr * wd) * p
    p -= upd.astype(p.dtype)


@njit(cache=True, fastmath=True)
def _sumsq_nb(x):
    s = 0.0
    for i in range(x.size):
        v = float(x[i])
        s += v * v
    return s


def sumsq(x):
    if HAVE_NUMBA and x.size > 1024:
        return float(_sumsq_nb(np.ascontiguousarray(x).reshape(-1)))
    return float(np.sum(x.astype(np.float64) ** 2))
