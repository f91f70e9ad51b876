"""Solver physics, random-field statistics, degrade pipeline, container format."""

import numpy as np
import pytest

from flowdistill.kolmogorov import (BlowUpError, FieldDataset, GRFConfig,
                                    SolverConfig, SpectralOps, divergence_max,
                                    enstrophy, forcing_source, generate_dataset,
                                    init_grf_vorticity, kolmogorov_step,
                                    load_fields, save_fields, simulate_trajectory,
                                    subsample_stride, upsample_nearest)
from flowdistill.metrics import radial_spectrum
from flowdistill.tensor import ShapeError

RNG = np.random.default_rng


# ---------------------------------------------------------------------------
# random initial field

def test_grf_zero_mean():
    om = init_grf_vorticity(GRFConfig(), 64, RNG(0))
    assert abs(om.mean()) < 1e-10


def test_grf_real_from_hermitian_spectrum():
    # shaping the transform of real noise by a real factor keeps symmetry
    rng = RNG(1)
    ops = SpectralOps(32)
    k = np.sqrt(ops.mx**2 + ops.my**2)
    shape = (1.0 + (7.0 * k) ** 2) ** (-1.25)
    shape[0, 0] = 0.0
    noise_hat = np.fft.fft2(rng.standard_normal((32, 32))) * shape
    field = np.fft.ifft2(noise_hat)
    assert np.max(np.abs(field.imag)) < 1e-10


def test_grf_spectral_slope():
    cfg = GRFConfig(alpha=2.5, tau_corr=7.0)
    acc = None
    for i in range(32):
        om = init_grf_vorticity(cfg, 64, RNG(100 + i))
        radii, power = radial_spectrum(om)
        acc = power if acc is None else acc + power
    acc /= 32
    sel = (radii >= 4) & (radii <= 24)     # high-k range, away from sparse corners
    slope = np.polyfit(np.log(radii[sel]), np.log(acc[sel]), 1)[0]
    assert abs(slope - (-2 * cfg.alpha)) < 0.4, slope


# ---------------------------------------------------------------------------
# solver physics

def test_viscous_decay_matches_crank_nicolson_factor():
    cfg = SolverConfig(N=32)
    ops = SpectralOps(32)
    rng = RNG(2)
    # arbitrary Hermitian spectrum; single step with no advection influence is
    # checked mode-wise after removing the (dealiased) nonlinear contribution
    om_hat = np.fft.fft2(rng.standard_normal((32, 32)))
    half = 0.5 * cfg.nu * ops.k2 * cfg.dt
    factor = (1 - half) / (1 + half)
    # single-mode field: its self-advection Jacobian vanishes identically
    for (a, b) in ((1, 2), (3, 5), (0, 7)):
        mode = np.zeros((32, 32), complex)
        mode[a, b] = 1.0 + 0.5j
        mode[-a % 32, -b % 32] = np.conj(mode[a, b])
        stepped = kolmogorov_step(mode, ops, cfg)
        assert np.max(np.abs(stepped - factor * mode)) < 1e-12


def test_zero_field_zero_forcing_stays_zero():
    cfg = SolverConfig(N=32)
    ops = SpectralOps(32)
    out = kolmogorov_step(np.zeros((32, 32), complex), ops, cfg)
    assert np.max(np.abs(out)) == 0.0


def test_dealiased_modes_stay_zero():
    cfg = SolverConfig(N=32)
    ops = SpectralOps(32)
    rng = RNG(3)
    om_hat = ops.dealias * np.fft.fft2(rng.standard_normal((32, 32)))
    f_hat = ops.dealias * np.fft.fft2(forcing_source(cfg, 32))
    for _ in range(5):
        om_hat = kolmogorov_step(om_hat, ops, cfg, f_hat)
    assert np.max(np.abs(om_hat[~ops.dealias])) == 0.0


def test_inviscid_unforced_enstrophy_conservation():
    cfg = SolverConfig(N=64)
    ops = SpectralOps(64)
    om = init_grf_vorticity(GRFConfig(), 64, RNG(4))
    om_hat = ops.dealias * np.fft.fft2(om)
    z0 = enstrophy(np.real(np.fft.ifft2(om_hat)))
    for _ in range(100):
        om_hat = kolmogorov_step(om_hat, ops, cfg, forcing_hat=None, nu=0.0)
    z1 = enstrophy(np.real(np.fft.ifft2(om_hat)))
    assert abs(z1 - z0) / z0 < 0.005


def test_incompressibility_structural():
    cfg = SolverConfig(N=64)
    ops = SpectralOps(64)
    om_hat = ops.dealias * np.fft.fft2(init_grf_vorticity(GRFConfig(), 64, RNG(5)))
    f_hat = ops.dealias * np.fft.fft2(forcing_source(cfg, 64))
    for _ in range(50):
        om_hat = kolmogorov_step(om_hat, ops, cfg, f_hat)
    assert divergence_max(om_hat, ops) < 1e-8


def test_forced_run_stationarity_proxy():
    cfg = SolverConfig(N=64, burn_in_steps=0, record_stride=50,
                       snapshots_per_traj=240, seed=7)
    snaps = simulate_trajectory(cfg, GRFConfig(), RNG(6))
    last_quarter = snaps[180:]
    z = np.array([enstrophy(s) for s in last_quarter])
    h1, h2 = z[:30].mean(), z[30:].mean()
    assert abs(h1 - h2) / max(h1, h2) < 0.20


def test_blow_up_detector():
    cfg = SolverConfig(N=32, dt=0.5, burn_in_steps=0, record_stride=1,
                       snapshots_per_traj=2000)
    with pytest.raises(BlowUpError):
        simulate_trajectory(cfg, GRFConfig(amplitude=30.0), RNG(7))


# ---------------------------------------------------------------------------
# degrade / upsample

def test_subsample_identity_and_anchoring():
    x = np.arange(16, dtype=float).reshape(4, 4)
    np.testing.assert_array_equal(subsample_stride(x, 1), x)
    sub = subsample_stride(x, 2)
    np.testing.assert_array_equal(sub, [[0, 2], [8, 10]])


def test_subsample_indivisible():
    with pytest.raises(ShapeError):
        subsample_stride(np.zeros((5, 5)), 2)


def test_upsample_block_replication():
    np.testing.assert_array_equal(upsample_nearest(np.array([[3.0]]), 3),
                                  np.full((3, 3), 3.0))
    x = np.arange(4.0).reshape(2, 2)
    np.testing.assert_array_equal(upsample_nearest(x, 1), x)


def test_degrade_composition_identities():
    rng = RNG(8)
    x = rng.standard_normal((3, 16, 16, 1))
    s = 4
    lr = subsample_stride(x, s)
    np.testing.assert_array_equal(subsample_stride(upsample_nearest(lr, s), s), lr)
    up = upsample_nearest(lr, s)
    np.testing.assert_array_equal(
        upsample_nearest(subsample_stride(up, s), s), up)
    # subsample o upsample o subsample == subsample
    np.testing.assert_array_equal(
        subsample_stride(upsample_nearest(subsample_stride(x, s), s), s),
        subsample_stride(x, s))


# ---------------------------------------------------------------------------
# dataset container

def test_split_sizes_and_stats(tmp_path):
    rng = RNG(9)
    hr = rng.standard_normal((1000, 8, 8)).astype(np.float32)
    ds = FieldDataset.from_snapshots(hr, stride_s=2, seed=3)
    assert len(ds.train_idx) == 900 and len(ds.val_idx) == 100
    ds.validate()
    normed = ds.normalize(ds.hr[ds.train_idx])
    assert abs(normed.mean()) < 1e-3
    assert abs(normed.std() - 1.0) < 1e-3


def test_container_roundtrip_bitwise(tmp_path):
    rng = RNG(10)
    hr = rng.standard_normal((20, 8, 8)).astype(np.float32)
    ds = FieldDataset.from_snapshots(hr, stride_s=4, seed=1)
    p = tmp_path / "ds.ffd"
    ds.save(p)
    back = FieldDataset.load(p)
    np.testing.assert_array_equal(back.hr, ds.hr)
    np.testing.assert_array_equal(back.lr_up, ds.lr_up)
    np.testing.assert_array_equal(back.mean, ds.mean)
    np.testing.assert_array_equal(back.std, ds.std)
    np.testing.assert_array_equal(back.train_idx, ds.train_idx)
    np.testing.assert_array_equal(back.val_idx, ds.val_idx)
    assert back.stride_s == 4
    back.save(tmp_path / "ds2.ffd")
    assert (tmp_path / "ds.ffd").read_bytes() == (tmp_path / "ds2.ffd").read_bytes()


def test_single_block_variant(tmp_path):
    rng = RNG(11)
    fields = rng.standard_normal((5, 8, 8, 1)).astype(np.float32)
    p = tmp_path / "pred.ffd"
    save_fields(p, fields)
    np.testing.assert_array_equal(load_fields(p), fields)
    with pytest.raises(ValueError):
        load_fields(__file__)


def test_generate_dataset_smoke_and_determinism(tmp_path):
    cfg = SolverConfig(N=32, burn_in_steps=100, record_stride=10,
                       snapshots_per_traj=10, seed=5)
    ds1 = generate_dataset(cfg, n_traj=2, stride_s=4)
    assert ds1.count == 20
    ds1.validate()
    ds2 = generate_dataset(cfg, n_traj=2, stride_s=4)
    np.testing.assert_array_equal(ds1.hr, ds2.hr)
    a, b = tmp_path / "a.ffd", tmp_path / "b.ffd"
    ds1.save(a)
    ds2.save(b)
    assert a.read_bytes() == b.read_bytes()
