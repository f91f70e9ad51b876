"""TrigFlow parameterization, lossless OT transforms, and consistency distillation.

The sinusoidal coupling z_t = cos(t) x + sin(t) eps on t in [0, pi/2] is the
coordinate system the continuous-time consistency objective lives in.  A
teacher trained on the linear transport path supplies trajectory directions
through three exact coordinate transforms (time, latent, velocity).  The
distillation step regresses the student onto an EMA-anchored target whose
tangent term is the trajectory derivative of the consistency function,
computed in a single dual-number forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .fm import sample_time_logit_normal
from .nn import ModelParams, unet_forward
from .optim import Adam, clip_grad_norm
from .tensor import DualTensor, Tensor


@dataclass
class SCDConfig:
    ema_rate: float = 0.98
    tangent_clip: float = 1.0
    tangent_warmup_iters: int = 500
    p_mu: float = -0.4
    p_sigma: float = 0.8
    t_eps: float = 1e-6
    lr: float = 2e-5
    grad_clip_norm: float = 1.0
    batch: int = 8
    epochs: int = 1
    steps: int = 0
    seed: int = 42

    def __post_init__(self):
        if not (0 < self.ema_rate < 1 and self.tangent_clip >= 0
                and self.tangent_warmup_iters >= 0):
            raise ValueError("invalid distillation config")


class TangentDiverged(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# path and transforms

def trig_interpolate(x, eps, t_trig):
    """cos(t) x + sin(t) eps on the sinusoidal coupling, t in [0, pi/2]."""
    x = np.asarray(x)
    eps = np.asarray(eps)
    if x.shape != eps.shape:
        raise T.ShapeError(f"trig_interpolate: {x.shape} vs {eps.shape}")
    t = np.asarray(t_trig)
    if np.any(t < 0) or np.any(t > np.pi / 2 + 1e-12):
        raise ValueError(f"trig time outside [0, pi/2]: {t}")
    tb = t.reshape((-1,) + (1,) * (x.ndim - 1)) if t.ndim else t
    return np.cos(tb) * x + np.sin(tb) * eps


def t_ot_from_trig(t_trig):
    """sin(t)/(sin(t)+cos(t)): monotone map of [0, pi/2] onto [0, 1]."""
    s, c = np.sin(t_trig), np.cos(t_trig)
    return s / (s + c)


def t_trig_from_ot(t_ot):
    """Inverse time map: arctan(t/(1-t)), with t=1 mapping to pi/2."""
    t_ot = np.asarray(t_ot)
    one_minus = 1.0 - t_ot
    return np.where(one_minus <= 0, np.pi / 2, np.arctan2(t_ot, one_minus))


def _path_scale(t_ot):
    return np.sqrt(t_ot**2 + (1.0 - t_ot) ** 2)


def z_ot_from_trig(z_trig, t_ot):
    """Rescale a sinusoidal-path latent onto the linear path's geometry.

    For a shared coupling (x, eps), cos(t) x + sin(t) eps equals
    (sin t + cos t) times the linear-path latent at the mapped time, and
    1/(sin t + cos t) = sqrt(t_ot^2 + (1 - t_ot)^2), so the linear-path
    latent is z_trig * sqrt(t_ot^2 + (1 - t_ot)^2).  Endpoints are fixed
    points of the map.  This scaling is the one under which the velocity
    transform reproduces the sinusoidal path's conditional velocity exactly.
    """
    z = np.asarray(z_trig)
    s = _path_scale(np.asarray(t_ot))
    sb = s.reshape((-1,) + (1,) * (z.ndim - 1)) if s.ndim else s
    return z * sb


def z_trig_from_ot(z_ot, t_ot):
    """Inverse latent rescaling, linear path -> sinusoidal path."""
    z = np.asarray(z_ot)
    s = _path_scale(np.asarray(t_ot))
    sb = s.reshape((-1,) + (1,) * (z.ndim - 1)) if s.ndim else s
    return z / sb


def trig_velocity_from_ot(z_ot, t_ot, v_ot):
    """Convert an OT velocity into the sinusoidal path's velocity.

    ((1-2t) z + (1-2t+2t^2) v) / sqrt(t^2 + (1-t)^2), t the OT time.
    """
    z = np.asarray(z_ot)
    v = np.asarray(v_ot)
    if z.shape != v.shape:
        raise T.ShapeError(f"trig_velocity_from_ot: {z.shape} vs {v.shape}")
    t = np.asarray(t_ot)
    tb = t.reshape((-1,) + (1,) * (z.ndim - 1)) if t.ndim else t
    return ((1.0 - 2.0 * tb) * z + (1.0 - 2.0 * tb + 2.0 * tb**2) * v) / _path_scale(tb)


# ---------------------------------------------------------------------------
# consistency parameterization

def consistency_fn(params: ModelParams, z_trig, t_trig, cond=None, model_fn=unet_forward):
    """f(z, t) = cos(t) z - sin(t) F(z, t); exact identity at t = 0.

    Accepts Tensors, DualTensors, or raw arrays; the boundary behavior holds
    for arbitrary network parameters because cos(0) = 1 and sin(0) = 0.
    """
    if not isinstance(z_trig, (Tensor, DualTensor)):
        z_trig = Tensor(np.asarray(z_trig))
    zdata = z_trig.primal if isinstance(z_trig, DualTensor) else z_trig.data
    if not isinstance(t_trig, (Tensor, DualTensor)):
        t_trig = Tensor(np.broadcast_to(np.asarray(t_trig, zdata.dtype),
                                        (zdata.shape[0],)).copy())
    F = model_fn(params, z_trig, t_trig, cond=cond)
    return T.sub(T.mul_batch(z_trig, T.cos(t_trig)),
                 T.mul_batch(F, T.sin(t_trig)))


def ema_update(ema: ModelParams, student: ModelParams, rate):
    """ema <- rate * ema + (1 - rate) * student, elementwise."""
    for k, t in ema.tensors.items():
        s = student.tensors[k].data
        if s.shape != t.data.shape:
            raise T.ShapeError(f"ema_update[{k}]: {t.data.shape} vs {s.shape}")
        t.data *= rate
        t.data += (1.0 - rate) * s


# ---------------------------------------------------------------------------
# distillation step

class SCDTrainer:
    """Continuous-time consistency distillation (or from-scratch training).

    With a teacher, the trajectory direction fed to the tangent JVP comes from
    the teacher queried in OT coordinates through the exact transforms.
    Without one (from-scratch mode), the direction is the student's own
    stop-gradient prediction.
    """

    def __init__(self, student: ModelParams, teacher: ModelParams | None,
                 cfg: SCDConfig, model_fn=unet_forward, teacher_fn=None):
        self.student = student
        self.ema = student.copy(role="ema_student")
        self.teacher = teacher
        self.cfg = cfg
        self.model_fn = model_fn
        self.teacher_fn = teacher_fn or (lambda p, z, t: unet_forward(p, z, t))
        self.opt = Adam(student, lr=cfg.lr)
        self.rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
        self.iteration = 0
        self.last_warmup_factor = 0.0

    def warmup_factor(self):
        w = self.cfg.tangent_warmup_iters
        return 1.0 if w == 0 else min(1.0, self.iteration / w)

    def distill_step(self, batch_x):
        cfg = self.cfg
        x = np.asarray(batch_x, np.float32)
        B = x.shape[0]

        t_ot = sample_time_logit_normal(self.rng, cfg.p_mu, cfg.p_sigma, cfg.t_eps,
                                        size=B).astype(np.float32)
        t_trig = t_trig_from_ot(t_ot).astype(np.float32)
        eps = self.rng.standard_normal(x.shape).astype(np.float32)
        z_trig = trig_interpolate(x, eps, t_trig)
        ct = np.cos(t_trig)

        if self.teacher is not None:
            z_ot = z_ot_from_trig(z_trig, t_ot)
            with T.no_grad():
                v_ot = self.teacher_fn(self.teacher, Tensor(z_ot), Tensor(t_ot))
            v_ot = v_ot.data if isinstance(v_ot, Tensor) else np.asarray(v_ot)
            direction = trig_velocity_from_ot(z_ot, t_ot, v_ot).astype(np.float32)
        else:
            with T.no_grad():
                own = self.model_fn(self.student, Tensor(z_trig), Tensor(t_trig), cond=None)
            direction = own.data.copy()

        # trajectory derivative of the consistency function, one dual pass
        zd = DualTensor(z_trig, direction)
        td = DualTensor(t_trig, np.ones_like(t_trig))
        Fd = self.model_fn(self.ema, zd, td, cond=None)
        fd = T.sub(T.mul_batch(zd, T.cos(td)), T.mul_batch(Fd, T.sin(td)))
        tangent = fd.tangent
        if not np.all(np.isfinite(tangent)):
            raise TangentDiverged(
                "non-finite distillation tangent at iteration "
                f"{self.iteration}: t_trig={np.array2string(t_trig, precision=4)}, "
                f"max|direction|={np.max(np.abs(direction)):.3e}")

        np.clip(tangent, -cfg.tangent_clip, cfg.tangent_clip, out=tangent)
        warm = self.warmup_factor()
        self.last_warmup_factor = warm
        target = Fd.primal + ct.reshape(-1, 1, 1, 1) * (warm * tangent)

        self.student.zero_grad()
        F_stud = self.model_fn(self.student, Tensor(z_trig), Tensor(t_trig), cond=None)
        err = T.sub(F_stud, Tensor(target.astype(np.float32)))
        loss = T.mean_(T.mul(err, err))
        value = loss.item()
        if not np.isfinite(value):
            raise TangentDiverged(f"non-finite distillation loss at iteration {self.iteration}")
        loss.backward()
        clip_grad_norm(self.student, cfg.grad_clip_norm)
        self.opt.step(self.student)
        ema_update(self.ema, self.student, cfg.ema_rate)
        self.iteration += 1
        return value
