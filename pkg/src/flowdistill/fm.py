"""Flow-matching teacher on the linear transport path.

The coupling is z_t = (1-t) x + t eps with constant conditional velocity
eps - x; training regresses the network onto that velocity at logit-normally
sampled times.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import ModelParams, sinusoidal_embed, unet_forward
from .optim import Adam, clip_grad_norm, lr_at
from .tensor import Tensor


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; carries the last finite loss for diagnostics."""

    def __init__(self, msg, last_loss=None):
        super().__init__(msg)
        self.last_loss = last_loss


@dataclass
class FMTrainConfig:
    p_mu: float = -0.4
    p_sigma: float = 1.0
    t_eps: float = 1e-3
    lr: float = 1e-4
    lr_schedule: str = "constant"       # constant | linear (decay to lr_floor)
    lr_floor: float = 1e-5
    weight_decay: float = 0.0
    grad_clip_norm: float = 1.0
    batch: int = 8
    epochs: int = 1
    steps: int = 0                      # explicit step budget; overrides epochs if > 0
    seed: int = 42
    adaptive_weighting: bool = False
    adaptive_p: float = 1.0
    adaptive_eps: float = 0.01
    condition_channel: bool = False

    def __post_init__(self):
        if not (self.p_sigma > 0 and 0 < self.t_eps < 0.5 and self.grad_clip_norm > 0):
            raise ValueError("invalid FM training config")


def ot_interpolate(x, eps, t):
    """(1-t) x + t eps; t is a scalar or per-sample array."""
    x = np.asarray(x)
    eps = np.asarray(eps)
    if x.shape != eps.shape:
        raise T.ShapeError(f"ot_interpolate: {x.shape} vs {eps.shape}")
    t = _per_sample(t, x)
    return (1.0 - t) * x + t * eps


def conditional_velocity(x, eps):
    """The transport path's constant velocity eps - x."""
    x = np.asarray(x)
    eps = np.asarray(eps)
    if x.shape != eps.shape:
        raise T.ShapeError(f"conditional_velocity: {x.shape} vs {eps.shape}")
    return eps - x


def _per_sample(t, x):
    t = np.asarray(t, x.dtype)
    if t.ndim == 0:
        return t
    return t.reshape((-1,) + (1,) * (x.ndim - 1))


def sample_time_logit_normal(rng, p_mu, p_sigma, t_eps, size=None):
    """t = sigmoid(mu + sigma*n), n ~ N(0,1), clamped into [t_eps, 1-t_eps]."""
    n = rng.standard_normal(size)
    t = 1.0 / (1.0 + np.exp(-(p_mu + p_sigma * n)))
    return np.clip(t, t_eps, 1.0 - t_eps)


# ---------------------------------------------------------------------------
# adaptive loss weighting (learned per-time log-variance u(t))

class AdaptiveWeight:
    """Tiny MLP u(t); weighted loss = mean(loss_i * exp(-u_i) + u_i).

    Reduces to the plain mean when u == 0, which is also its initialization.
    """

    FEATURES = 8

    def __init__(self, rng, lr, dtype=np.float32):
        d = self.FEATURES * 2
        self.params = {
            "w1": Tensor(rng.standard_normal((d, d)).astype(dtype) / np.sqrt(d),
                         requires_grad=True),
            "b1": Tensor(np.zeros(d, dtype), requires_grad=True),
            "w2": Tensor(np.zeros((d, 1), dtype), requires_grad=True),
            "b2": Tensor(np.zeros(1, dtype), requires_grad=True),
        }
        holder = type("P", (), {"tensors": self.params})()
        self._holder = holder
        self.opt = Adam(holder, lr=lr)

    def u(self, t):
        feats = sinusoidal_embed(Tensor(np.asarray(t, np.float32)), self.FEATURES * 2)
        h = T.silu(T.linear(feats, self.params["w1"], self.params["b1"]))
        return T.reshape(T.linear(h, self.params["w2"], self.params["b2"]), (-1,))

    def step(self):
        self.opt.step(self._holder)
        for p in self.params.values():
            p.zero_grad()


def adaptive_weight(loss_per_sample, weight_net, t):
    """Apply the learned-uncertainty weighting; plain mean if weight_net is None."""
    if weight_net is None:
        return T.mean_(loss_per_sample)
    u = weight_net.u(t)
    weighted = T.add(T.mul(loss_per_sample, T.exp(T.neg(u))), u)
    return T.mean_(weighted)


# ---------------------------------------------------------------------------
# training

def fm_loss(params: ModelParams, x, eps, t, weight_net=None, cond=None,
            model_fn=unet_forward):
    """Conditional flow-matching loss on one batch (graph-building)."""
    z = ot_interpolate(x, eps, t)
    v_target = conditional_velocity(x, eps)
    pred = model_fn(params, Tensor(z), Tensor(np.asarray(t, x.dtype)), cond=cond)
    err = T.sub(pred, Tensor(v_target))
    per_sample = T.mean_(T.mul(err, err), axis=(1, 2, 3))
    return adaptive_weight(per_sample, weight_net, t)


class FMTrainer:
    """One optimizer step at a time over normalized HR snapshots."""

    def __init__(self, params: ModelParams, cfg: FMTrainConfig, total_steps=None,
                 model_fn=unet_forward):
        self.params = params
        self.model_fn = model_fn
        self.cfg = cfg
        self.opt = Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
        self.rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
        self.iteration = 0
        self.total_steps = total_steps or max(cfg.steps, 1)
        self.weight_net = AdaptiveWeight(self.rng, cfg.lr) if cfg.adaptive_weighting else None
        self._last_loss = None

    def train_step(self, batch_x, cond=None):
        cfg = self.cfg
        x = np.asarray(batch_x, np.float32)
        B = x.shape[0]
        t = sample_time_logit_normal(self.rng, cfg.p_mu, cfg.p_sigma, cfg.t_eps,
                                     size=B).astype(np.float32)
        eps = self.rng.standard_normal(x.shape).astype(np.float32)
        self.params.zero_grad()
        loss = fm_loss(self.params, x, eps, t, self.weight_net, cond=cond,
                       model_fn=self.model_fn)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingDiverged(f"flow-matching loss became {value} at "
                                   f"iteration {self.iteration}", self._last_loss)
        loss.backward()
        clip_grad_norm(self.params, cfg.grad_clip_norm)
        lr = lr_at(self.iteration, self.total_steps, cfg.lr, cfg.lr_schedule, cfg.lr_floor)
        self.opt.step(self.params, lr=lr)
        if self.weight_net is not None:
            self.weight_net.step()
        self.iteration += 1
        self._last_loss = value
        return value
