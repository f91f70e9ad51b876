"""Noise schedules and the epsilon-prediction baseline."""

import numpy as np
import pytest

from flowdistill import tensor as T
from flowdistill.ddpm import (DDPMTrainer, DiffusionTrainConfig, NoiseSchedule,
                              make_schedule, q_sample)
from flowdistill.nn import UNetConfig, init_unet
from flowdistill.tensor import Tensor

RNG = np.random.default_rng


def tiny_cfg():
    return UNetConfig(field_size=16, base_channels=8, channel_mult=(1, 2),
                      blocks_per_level=1, attention_resolution=8, time_embed_dim=16)


@pytest.mark.parametrize("kind", ["cosine", "linear"])
def test_schedule_shape_and_monotonicity(kind):
    sch = make_schedule(kind, 500)
    assert sch.abar.shape == (501,)
    assert sch.abar[0] == 1.0
    assert np.all(np.diff(sch.abar) < 0)
    assert 0 < sch.abar[-1] < 0.01


@pytest.mark.parametrize("kind", ["cosine", "linear"])
def test_log_snr_strictly_decreasing(kind):
    sch = make_schedule(kind, 300)
    lam = sch.lam[1:]  # lam_0 is +inf at the clean endpoint
    assert np.all(np.isfinite(lam))
    assert np.all(np.diff(lam) < 0)


def test_schedule_reproducible():
    a = make_schedule("cosine", 777).abar
    b = make_schedule("cosine", 777).abar
    np.testing.assert_array_equal(a, b)


def test_q_sample_identity_at_zero():
    rng = RNG(0)
    sch = make_schedule("cosine", 100)
    x0 = rng.standard_normal((2, 4, 4, 1))
    eps = rng.standard_normal(x0.shape)
    np.testing.assert_array_equal(q_sample(x0, eps, [0, 0], sch), x0)


def test_q_sample_inversion():
    rng = RNG(1)
    sch = make_schedule("cosine", 1000)
    x0 = rng.standard_normal((3, 4, 4, 1))
    eps = rng.standard_normal(x0.shape)
    for t in (1, 250, 500, 999):
        z = q_sample(x0, eps, [t] * 3, sch)
        back = (z - np.sqrt(1 - sch.abar[t]) * eps) / np.sqrt(sch.abar[t])
        np.testing.assert_allclose(back, x0, atol=1e-9)


def test_q_sample_variance():
    rng = RNG(2)
    sch = make_schedule("cosine", 1000)
    t = 400
    eps = rng.standard_normal((20000, 1, 1, 1))
    z = q_sample(np.zeros_like(eps), eps, [t] * eps.shape[0], sch)
    want = 1 - sch.abar[t]
    assert abs(np.var(z) - want) / want < 0.05


def test_snr_matched_index():
    sch = make_schedule("cosine", 1000)
    idx = sch.snr_matched_index(0.5)
    # log-SNR target is 0 at tau = 0.5
    assert abs(sch.lam[idx]) == np.min(np.abs(sch.lam[np.isfinite(sch.lam)]))
    assert sch.snr_matched_index(0.01) < idx < sch.snr_matched_index(0.99)


def test_oracle_eps_model_zero_loss():
    rng = RNG(3)
    p = init_unet(tiny_cfg(), rng)
    cfg = DiffusionTrainConfig(T=100, lr=1e-4, batch=2, seed=1)

    captured = {}

    def oracle(params, z, t, cond=None):
        return Tensor(captured["eps"])

    trainer = DDPMTrainer(p, cfg, model_fn=oracle)
    # mirror the trainer's rng to know the upcoming eps draw
    probe = np.random.default_rng(np.random.SeedSequence(1))
    x = rng.standard_normal((2, 16, 16, 1)).astype(np.float32)
    probe.integers(1, 101, size=2)
    captured["eps"] = probe.standard_normal(x.shape).astype(np.float32)
    assert trainer.train_step(x) == 0.0


def test_ddpm_overfit():
    rng = RNG(4)
    p = init_unet(UNetConfig(field_size=16, base_channels=16, channel_mult=(1, 2),
                             blocks_per_level=1, attention_resolution=8,
                             time_embed_dim=64), rng)
    cfg = DiffusionTrainConfig(T=1000, lr=3e-3, batch=8, seed=2)
    trainer = DDPMTrainer(p, cfg)
    data = rng.standard_normal((2, 16, 16, 1)).astype(np.float32)
    batch = np.concatenate([data] * 4)
    losses = [trainer.train_step(batch) for _ in range(501)]
    assert losses[500] < 0.1 * losses[0], (losses[0], losses[500])


def test_ddpm_lr_zero_params_unchanged():
    rng = RNG(5)
    p = init_unet(tiny_cfg(), rng)
    before = {k: t.data.copy() for k, t in p.tensors.items()}
    trainer = DDPMTrainer(p, DiffusionTrainConfig(T=50, lr=0.0, batch=2, seed=3))
    trainer.train_step(rng.standard_normal((2, 16, 16, 1)).astype(np.float32))
    for k, t in p.tensors.items():
        np.testing.assert_array_equal(t.data, before[k])
