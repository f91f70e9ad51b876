"""Evaluation metrics: relative L2, windowed SSIM, spectral discrepancy, RMSE.

All metrics accept single fields (H, W), batched single-channel stacks
(B, H, W) or (B, H, W, 1), and reduce to a scalar by averaging per-sample
values over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError


def _batched(x):
    x = np.asarray(x, np.float64)
    if x.ndim == 2:
        return x[None]
    if x.ndim == 4 and x.shape[-1] == 1:
        return x[..., 0]
    if x.ndim == 3:
        return x
    raise ShapeError(f"metrics: expected 2-D fields, got {x.shape}")


def rel_l2(pred, truth):
    """Mean over samples of ||pred - truth|| / ||truth||."""
    p, t = _batched(pred), _batched(truth)
    if p.shape != t.shape:
        raise ShapeError(f"rel_l2: {p.shape} vs {t.shape}")
    num = np.sqrt(((p - t) ** 2).sum(axis=(1, 2)))
    den = np.sqrt((t**2).sum(axis=(1, 2)))
    if np.any(den == 0):
        raise ZeroDivisionError("rel_l2 undefined for an all-zero reference")
    return float((num / den).mean())


def rmse(pred, truth):
    """Root mean squared error over all elements."""
    p, t = _batched(pred), _batched(truth)
    if p.shape != t.shape:
        raise ShapeError(f"rmse: {p.shape} vs {t.shape}")
    return float(np.sqrt(np.mean((p - t) ** 2)))


# ---------------------------------------------------------------------------
# SSIM

@dataclass
class SSIMConfig:
    window: int = 7
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03

    def __post_init__(self):
        if self.window % 2 == 0 or self.sigma <= 0:
            raise ValueError("window must be odd and sigma positive")


def gaussian_window(w, sigma):
    half = (w - 1) / 2.0
    x = np.arange(w) - half
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def _conv_same_1d(x, kernel, axis):
    """'same' zero-padded convolution along one axis of a batched stack."""
    w = kernel.size
    half = w // 2
    pad = [(0, 0)] * x.ndim
    pad[axis] = (half, half)
    xp = np.pad(x, pad)
    win = np.lib.stride_tricks.sliding_window_view(xp, w, axis=axis)
    return np.tensordot(win, kernel, axes=([-1], [0]))


def _gauss_filter(x, kernel):
    return _conv_same_1d(_conv_same_1d(x, kernel, 1), kernel, 2)


def ssim(pred, truth, cfg: SSIMConfig | None = None, eq_tol=1e-8):
    """Structural similarity with a per-sample data range from the reference.

    The window is a separable normalized Gaussian with 'same' padding; the
    stability constants are C1 = (k1 L)^2, C2 = (k2 L)^2 with
    L = max(truth) - min(truth) per sample.  A constant reference (L = 0)
    scores 1 when the fields agree within tolerance and 0 otherwise.
    """
    cfg = cfg or SSIMConfig()
    y, x = _batched(pred), _batched(truth)   # x is the reference
    if y.shape != x.shape:
        raise ShapeError(f"ssim: {y.shape} vs {x.shape}")
    kernel = gaussian_window(cfg.window, cfg.sigma)
    scores = np.empty(x.shape[0])
    for b in range(x.shape[0]):
        L = float(x[b].max() - x[b].min())
        if L == 0.0:
            scores[b] = 1.0 if np.allclose(x[b], y[b], atol=eq_tol, rtol=0.0) else 0.0
            continue
        c1 = (cfg.k1 * L) ** 2
        c2 = (cfg.k2 * L) ** 2
        xb = x[b][None]
        yb = y[b][None]
        mu_x = _gauss_filter(xb, kernel)
        mu_y = _gauss_filter(yb, kernel)
        var_x = _gauss_filter(xb * xb, kernel) - mu_x**2
        var_y = _gauss_filter(yb * yb, kernel) - mu_y**2
        cov = _gauss_filter(xb * yb, kernel) - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
        den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
        scores[b] = np.mean(num / den)
    return float(scores.mean())


# ---------------------------------------------------------------------------
# spectra

_EPS = 1e-12


def normalized_power_spectrum(field):
    """Mean-centered, centered-origin power spectrum normalized to unit mass.

    The real and imaginary parts are rescaled by their joint max before
    squaring (single-precision overflow guard); normalization then removes
    that factor again, leaving the relative allocation of spectral energy.
    """
    x = _batched(field)
    x = x - x.mean(axis=(1, 2), keepdims=True)
    F = np.fft.fftshift(np.fft.fft2(x, axes=(1, 2)), axes=(1, 2))
    re, im = np.real(F), np.imag(F)
    s = np.maximum(np.abs(re), np.abs(im)).max(axis=(1, 2), keepdims=True)
    s = np.maximum(s, _EPS)
    P = (re / s) ** 2 + (im / s) ** 2
    return P / (P.sum(axis=(1, 2), keepdims=True) + _EPS)


def psdd(pred, truth):
    """l1 distance between normalized power spectra, averaged per bin and batch."""
    p, t = _batched(pred), _batched(truth)
    if p.shape != t.shape:
        raise ShapeError(f"psdd: {p.shape} vs {t.shape}")
    Pp = normalized_power_spectrum(p)
    Pt = normalized_power_spectrum(t)
    per_sample = np.abs(Pp - Pt).sum(axis=(1, 2)) / (p.shape[1] * p.shape[2])
    return float(per_sample.mean())


def radial_spectrum(field):
    """(radii, mean power per integer shell) around the centered origin."""
    x = _batched(field)
    B, H, W = x.shape
    x = x - x.mean(axis=(1, 2), keepdims=True)
    F = np.fft.fftshift(np.fft.fft2(x, axes=(1, 2)), axes=(1, 2))
    P = np.abs(F) ** 2
    ky = np.arange(H) - H // 2
    kx = np.arange(W) - W // 2
    r = np.floor(np.sqrt(ky[:, None] ** 2 + kx[None, :] ** 2)).astype(int)
    rmax = r.max()
    counts = np.bincount(r.ravel(), minlength=rmax + 1)
    sums = np.zeros(rmax + 1)
    for b in range(B):
        sums += np.bincount(r.ravel(), weights=P[b].ravel(), minlength=rmax + 1)
    power = sums / (counts * B)
    return np.arange(rmax + 1), power


def spectral_power_total(field):
    """Unnormalized total spectral power of the mean-centered field."""
    x = _batched(field)
    x = x - x.mean(axis=(1, 2), keepdims=True)
    F = np.fft.fft2(x, axes=(1, 2))
    return float((np.abs(F) ** 2).sum())
