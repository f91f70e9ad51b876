"""Metric oracles: brute-force SSIM, spectral invariances, Parseval."""

import numpy as np
import pytest

from flowdistill.metrics import (SSIMConfig, gaussian_window,
                                 normalized_power_spectrum, psdd,
                                 radial_spectrum, rel_l2, rmse,
                                 spectral_power_total, ssim)

RNG = np.random.default_rng


# ---------------------------------------------------------------------------
# relative L2 / RMSE

def test_rel_l2_basics():
    rng = RNG(0)
    t = rng.standard_normal((3, 8, 8))
    assert rel_l2(t, t) == 0.0
    assert rel_l2(np.zeros_like(t), t) == pytest.approx(1.0)
    assert rel_l2(2 * t, t) == pytest.approx(1.0)


def test_rel_l2_zero_reference_fails():
    with pytest.raises(ZeroDivisionError):
        rel_l2(np.ones((1, 4, 4)), np.zeros((1, 4, 4)))


def test_rmse_basics():
    rng = RNG(1)
    t = rng.standard_normal((2, 6, 6))
    assert rmse(t, t) == 0.0
    assert rmse(t + 2.0, t) == pytest.approx(2.0)
    v = rng.standard_normal(100)
    w = rng.standard_normal(100)
    assert rmse(v.reshape(1, 10, 10), w.reshape(1, 10, 10)) == \
        pytest.approx(np.linalg.norm(v - w) / np.sqrt(100))


# ---------------------------------------------------------------------------
# SSIM

def brute_force_ssim(x, y, cfg):
    """Direct per-window evaluation with explicit zero padding."""
    g1 = gaussian_window(cfg.window, cfg.sigma)
    K = np.outer(g1, g1)
    half = cfg.window // 2
    L = x.max() - x.min()
    c1, c2 = (cfg.k1 * L) ** 2, (cfg.k2 * L) ** 2
    xp = np.pad(x, half)
    yp = np.pad(y, half)
    H, W = x.shape
    out = np.empty((H, W))
    for i in range(H):
        for j in range(W):
            wx = xp[i:i + cfg.window, j:j + cfg.window]
            wy = yp[i:i + cfg.window, j:j + cfg.window]
            mx = (K * wx).sum()
            my = (K * wy).sum()
            vx = (K * wx * wx).sum() - mx**2
            vy = (K * wy * wy).sum() - my**2
            cxy = (K * wx * wy).sum() - mx * my
            out[i, j] = ((2 * mx * my + c1) * (2 * cxy + c2)) / \
                        ((mx**2 + my**2 + c1) * (vx + vy + c2))
    return out.mean()


def test_ssim_equal_fields():
    rng = RNG(2)
    x = rng.standard_normal((2, 16, 16))
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)


def test_ssim_degenerate_reference():
    const = np.full((1, 8, 8), 3.0)
    assert ssim(const, const) == 1.0
    assert ssim(const + 0.5, const) == 0.0


def test_ssim_matches_brute_force():
    rng = RNG(3)
    cfg = SSIMConfig()
    for _ in range(5):
        x = rng.standard_normal((16, 16)) * rng.uniform(0.5, 4.0)
        y = x + 0.3 * rng.standard_normal((16, 16))
        fast = ssim(y, x, cfg)
        slow = brute_force_ssim(x, y, cfg)
        assert abs(fast - slow) < 1e-6


def test_ssim_symmetric_given_reference_range():
    # with L fixed by the same field, swapping the remaining roles is symmetric
    rng = RNG(4)
    a = rng.standard_normal((12, 12))
    b = a + 0.2 * rng.standard_normal((12, 12))
    # force identical ranges so the adaptive L agrees in both orders
    b = (b - b.min()) / (b.max() - b.min()) * (a.max() - a.min()) + a.min()
    assert ssim(b, a) == pytest.approx(ssim(a, b), abs=1e-10)


def test_ssim_upper_bound_and_identity_of_indiscernibles():
    rng = RNG(5)
    x = rng.standard_normal((10, 10))
    y = x + 0.5 * rng.standard_normal((10, 10))
    assert ssim(y, x) < 1.0 - 1e-9
    assert ssim(x.copy(), x) > 1.0 - 1e-9


def test_ssim_batch_is_mean_of_singles():
    rng = RNG(6)
    x = rng.standard_normal((3, 8, 8))
    y = x + 0.1 * rng.standard_normal(x.shape)
    whole = ssim(y, x)
    singles = np.mean([ssim(y[i], x[i]) for i in range(3)])
    assert whole == pytest.approx(singles, abs=1e-12)


# ---------------------------------------------------------------------------
# PSDD

def test_psdd_zero_cases():
    rng = RNG(7)
    x = rng.standard_normal((2, 16, 16))
    assert psdd(x, x) == 0.0
    assert psdd(x + 5.0, x) < 1e-12          # mean shift removed
    assert psdd(3.0 * x, x) < 1e-9           # positive rescale normalized away


def test_psdd_symmetry_and_positivity():
    rng = RNG(8)
    a = rng.standard_normal((2, 16, 16))
    b = rng.standard_normal((2, 16, 16))
    assert psdd(a, b) == pytest.approx(psdd(b, a), abs=1e-15)
    assert psdd(a, b) > 0


def test_normalized_spectrum_unit_mass():
    rng = RNG(9)
    x = rng.standard_normal((4, 12, 12))
    P = normalized_power_spectrum(x)
    np.testing.assert_allclose(P.sum(axis=(1, 2)), 1.0, atol=1e-9)


def test_parseval():
    rng = RNG(10)
    for n in (8, 16, 32):
        x = rng.standard_normal((n, n)) * 3.1
        total = spectral_power_total(x)
        xc = x - x.mean()
        want = n * n * np.sum(xc**2)
        assert abs(total - want) / want < 1e-10


# ---------------------------------------------------------------------------
# radial spectrum

def test_pure_mode_lands_in_its_shell():
    N = 32
    i = np.arange(N)
    field = np.cos(2 * np.pi * 4 * i[None, :] / N) * np.ones((N, 1))
    radii, power = radial_spectrum(field)
    assert radii[np.argmax(power)] == 4
    others = np.delete(power, 4)
    assert power[4] >= 100 * others.max()


def test_white_noise_flat_spectrum():
    rng = RNG(11)
    fields = rng.standard_normal((64, 64, 64))
    radii, power = radial_spectrum(fields)
    # ignore the origin bin (zeroed by mean-centering) and the sparse corners
    sel = (radii >= 1) & (radii <= 32)
    ratio = power[sel].max() / power[sel].min()
    assert ratio < 2.0, ratio


def test_constant_field_zero_spectrum():
    radii, power = radial_spectrum(np.full((16, 16), 2.5))
    assert np.max(power) < 1e-20
