"""End-to-end reconstruction pipeline shared by the CLI, studies, and demos.

Everything model-facing happens in normalized space (training-split
statistics); predictions are denormalized back to physical fields before
metrics, which use the per-sample data range of the raw truth.
"""

from __future__ import annotations

import time

import numpy as np

from . import tensor as T
from .ddpm import make_schedule
from .kolmogorov import FieldDataset
from .metrics import psdd, radial_spectrum, rel_l2, rmse, ssim
from .nn import ModelParams, unet_forward
from .samplers import (NFECounter, SOLVERS, consistency_sample, index_grid,
                       inject_noise, uniform_grid)

SAMPLER_KINDS = ("consistency", "euler", "heun", "rk5", "ddim", "dpmpp")


def val_frames(ds: FieldDataset, count, offset=0):
    """Evenly spaced validation-split indices (positions into ds.val_idx)."""
    n = len(ds.val_idx)
    if count > n:
        raise ValueError(f"requested {count} frames but the split has {n}")
    pos = np.linspace(offset, n - 1, count).astype(int)
    return ds.val_idx[np.unique(pos)]


def frame_noise(shape, seed, trial=0):
    """Deterministic per-(seed, trial) Gaussian noise, stable under batching."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial,)))
    return rng.standard_normal(shape).astype(np.float32)


def velocity_fn(params: ModelParams, counter: NFECounter | None = None):
    """Batched velocity-field closure over the transport-time convention."""
    fn = counter if counter is not None else unet_forward

    def v(z, t):
        tt = np.full(z.shape[0], t, np.float32)
        with T.no_grad():
            out = fn(params, z.astype(np.float32), tt)
        return out.data.astype(z.dtype)

    return v


def eps_fn(params: ModelParams, T_steps, counter: NFECounter | None = None):
    """Batched noise-prediction closure over normalized diffusion indices."""
    fn = counter if counter is not None else unet_forward

    def eps_model(x, t_index):
        tt = np.full(x.shape[0], t_index / T_steps, np.float32)
        with T.no_grad():
            out = fn(params, x.astype(np.float32), tt)
        return out.data.astype(x.dtype)

    return eps_model


def reconstruct(params: ModelParams, ds: FieldDataset, frames, sampler, tau,
                K=5, eps=None, noise_seed=0, trial=0, schedule_kind="cosine",
                T_steps=1000):
    """Super-resolve the chosen frames; returns (physical fields, NFE, seconds).

    The wall clock wraps only the sampler call (conditioning noise and
    normalization excluded), one batched pass over all frames.
    """
    if sampler not in SAMPLER_KINDS:
        raise ValueError(f"unknown sampler '{sampler}' (choose from {SAMPLER_KINDS})")
    frames = np.asarray(frames, int)
    x_up = ds.normalize(ds.lr_up[frames])
    if eps is None:
        eps = frame_noise(x_up.shape, noise_seed, trial)
    counter = NFECounter(unet_forward)

    t0 = time.perf_counter()
    if sampler == "consistency":
        pred = consistency_sample(params, x_up, eps, tau, counter=counter)
    elif sampler in SOLVERS:
        z = inject_noise(x_up, eps, tau)
        pred = SOLVERS[sampler](velocity_fn(params, counter), z, uniform_grid(tau, K))
    else:
        sch = make_schedule(schedule_kind, T_steps)
        grid = index_grid(sch.snr_matched_index(tau), K)
        z = inject_noise(x_up, eps, tau)
        model = eps_fn(params, T_steps, counter)
        if sampler == "ddim":
            from .samplers import ddim_sample
            pred = ddim_sample(model, sch, grid, z)
        else:
            from .samplers import dpmpp_2m_sample
            pred = dpmpp_2m_sample(model, sch, grid, z)
    elapsed = time.perf_counter() - t0
    return ds.denormalize(pred), counter.count, elapsed


def lr_baseline(ds: FieldDataset, frames):
    """The no-model reference: the nearest-neighbour upsampled input itself."""
    return ds.lr_up[np.asarray(frames, int)]


def evaluate_fields(pred_phys, truth_phys):
    """The metric triple on physical fields."""
    return {
        "rel_l2": rel_l2(pred_phys, truth_phys),
        "ssim": ssim(pred_phys, truth_phys),
        "psdd": psdd(pred_phys, truth_phys),
    }


def evaluate_rmse(pred_phys, truth_phys):
    return rmse(pred_phys, truth_phys)


def mean_radial_spectrum(fields):
    radii, power = radial_spectrum(fields)
    return radii, power
