"""Multi-step diffusion baseline: noise schedules and epsilon-prediction training."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .fm import TrainingDiverged
from .nn import ModelParams, unet_forward
from .optim import Adam, clip_grad_norm
from .tensor import Tensor


@dataclass
class DiffusionTrainConfig:
    T: int = 1000
    schedule: str = "cosine"        # cosine | linear
    lr: float = 1e-4
    grad_clip_norm: float = 1.0
    batch: int = 8
    epochs: int = 1
    steps: int = 0
    seed: int = 42

    def __post_init__(self):
        if self.T < 2:
            raise ValueError("need at least 2 diffusion steps")


class NoiseSchedule:
    """Table of cumulative signal fractions abar_t for t = 0..T.

    Derived columns: sigma_t = sqrt(1 - abar_t) and the log-SNR
    lam_t = log(sqrt(abar_t) / sigma_t); lam_0 is +inf at the clean endpoint.
    """

    def __init__(self, abar, kind, T):
        abar = np.asarray(abar, np.float64)
        if abar.ndim != 1 or abar[0] != 1.0:
            raise ValueError("schedule must start at abar_0 = 1")
        if np.any(np.diff(abar) >= 0):
            raise ValueError("abar must be strictly decreasing")
        if abar[-1] <= 0:
            raise ValueError("abar must stay positive")
        self.abar = abar
        self.kind = kind
        self.T = T
        self.sigma = np.sqrt(1.0 - abar)
        with np.errstate(divide="ignore"):
            self.lam = np.log(np.sqrt(abar) / np.maximum(self.sigma, 0.0))

    def snr_matched_index(self, tau_ot):
        """Diffusion index whose signal/noise mix matches the transport-path
        injection (1-tau, tau): closest in log-SNR."""
        target = np.log((1.0 - tau_ot) / tau_ot)
        finite = np.isfinite(self.lam)
        idx = np.argmin(np.abs(self.lam[finite] - target))
        return int(np.arange(self.T + 1)[finite][idx])


def make_schedule(kind, T):
    t = np.arange(T + 1, dtype=np.float64)
    if kind == "cosine":
        s = 0.008
        f = np.cos((t / T + s) / (1 + s) * np.pi / 2.0) ** 2
        abar = f / f[0]
    elif kind == "linear":
        beta = np.linspace(1e-4, 2e-2, T)
        abar = np.concatenate([[1.0], np.cumprod(1.0 - beta)])
    else:
        raise ValueError(f"unknown schedule kind '{kind}'")
    return NoiseSchedule(abar, kind, T)


def q_sample(x0, eps, t, schedule: NoiseSchedule):
    """Forward noising: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    if x0.shape != eps.shape:
        raise T.ShapeError(f"q_sample: {x0.shape} vs {eps.shape}")
    a = schedule.abar[np.asarray(t, int)]
    a = a.reshape((-1,) + (1,) * (x0.ndim - 1)) if np.ndim(a) else a
    return np.sqrt(a) * x0 + np.sqrt(1.0 - a) * eps


class DDPMTrainer:
    """Epsilon-prediction MSE at uniformly sampled discrete times."""

    def __init__(self, params: ModelParams, cfg: DiffusionTrainConfig,
                 model_fn=unet_forward):
        self.params = params
        self.cfg = cfg
        self.model_fn = model_fn
        self.schedule = make_schedule(cfg.schedule, cfg.T)
        self.opt = Adam(params, lr=cfg.lr)
        self.rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
        self.iteration = 0

    def train_step(self, batch_x):
        cfg = self.cfg
        x = np.asarray(batch_x, np.float32)
        B = x.shape[0]
        t = self.rng.integers(1, cfg.T + 1, size=B)
        eps = self.rng.standard_normal(x.shape).astype(np.float32)
        z = q_sample(x, eps, t, self.schedule).astype(np.float32)
        # the network's time input is the normalized index
        t_in = (t / cfg.T).astype(np.float32)
        self.params.zero_grad()
        pred = self.model_fn(self.params, Tensor(z), Tensor(t_in), cond=None)
        err = T.sub(pred, Tensor(eps))
        loss = T.mean_(T.mul(err, err))
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingDiverged(f"diffusion loss became {value} at "
                                   f"iteration {self.iteration}")
        loss.backward()
        clip_grad_norm(self.params, cfg.grad_clip_norm)
        self.opt.step(self.params)
        self.iteration += 1
        return value


def eps_model_fn(params: ModelParams, T_steps):
    """Adapter: eps_model(x, t_index) for the samplers, normalizing the index."""
    def eps_model(x, t_index):
        t_in = np.full(x.shape[0], t_index / T_steps, np.float32)
        with T.no_grad():
            out = unet_forward(params, x.astype(np.float32), t_in)
        return out.data.astype(x.dtype)
    return eps_model
