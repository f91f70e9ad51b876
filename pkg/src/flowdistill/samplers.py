"""Inference: noise-injection conditioning and the sampler zoo.

Conditioning places the upsampled low-resolution field at an intermediate
time on the transport path (z_tau = (1-tau) x_up + tau eps) and generates
from there, so unconditional models perform conditional reconstruction.

Solvers over the transport ODE dz/dt = v(z, t): Euler (1 NFE/step), Heun
(2 NFE/step), and a fixed-step 6-stage fifth-order Runge-Kutta (6 NFE/step,
Fehlberg's fifth-order weights, the embedded fourth-order estimate unused).
The consistency student needs no integration: one evaluation.  The diffusion
baseline is served by deterministic DDIM and DPM-Solver++(2M) over a discrete
noise schedule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import unet_forward
from .trig import consistency_fn, t_trig_from_ot, trig_interpolate, z_trig_from_ot


@dataclass
class StepGrid:
    """Ordered times tau_0 > tau_1 > ... > tau_K = 0."""

    times: np.ndarray
    convention: str = "ot"          # ot | diffusion-index

    def __post_init__(self):
        t = np.asarray(self.times, np.float64)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("grid needs at least a start and an end time")
        if np.any(np.diff(t) >= 0):
            raise ValueError("grid times must be strictly decreasing")
        if t[-1] != 0:
            raise ValueError("grid must end at 0")
        self.times = t

    @property
    def steps(self):
        return self.times.size - 1


def uniform_grid(tau, K, convention="ot"):
    """K uniform steps from tau down to 0."""
    if not tau > 0:
        raise ValueError(f"grid start must be positive, got {tau}")
    return StepGrid(np.linspace(tau, 0.0, K + 1), convention)


def index_grid(t_start, K):
    """Uniform integer grid over diffusion indices t_start..0."""
    t = np.unique(np.round(np.linspace(0, t_start, K + 1)).astype(int))[::-1]
    if t.size != K + 1:
        raise ValueError(f"index grid from {t_start} cannot hold {K} distinct steps")
    return StepGrid(t.astype(np.float64), "diffusion-index")


class NFECounter:
    """Wraps a model callable and counts evaluations (one per batched call)."""

    def __init__(self, fn):
        self.fn = fn
        self.count = 0

    def __call__(self, *args, **kwargs):
        self.count += 1
        return self.fn(*args, **kwargs)


def count_nfe(counter: NFECounter):
    return counter.count


# ---------------------------------------------------------------------------
# conditioning

def inject_noise(x_lr_up, eps, tau):
    """z_tau = (1-tau) x_up + tau eps on the transport path; tau in (0, 1]."""
    x = np.asarray(x_lr_up)
    e = np.asarray(eps)
    if x.shape != e.shape:
        raise T.ShapeError(f"inject_noise: {x.shape} vs {e.shape}")
    if not 0 < tau <= 1:
        raise ValueError(f"injection time must lie in (0, 1], got {tau}")
    return (1.0 - tau) * x + tau * e


# ---------------------------------------------------------------------------
# transport-ODE solvers (velocity_fn(z, t) -> dz/dt)

def _check_state(name, z):
    if not np.all(np.isfinite(z)):
        raise FloatingPointError(f"{name}: state became non-finite")


def euler_solve(velocity_fn, z_start, grid: StepGrid):
    z = np.asarray(z_start).copy()
    t = grid.times
    for k in range(grid.steps):
        dt = t[k + 1] - t[k]
        z = z + dt * velocity_fn(z, t[k])
        _check_state("euler_solve", z)
    return z


def heun_solve(velocity_fn, z_start, grid: StepGrid):
    z = np.asarray(z_start).copy()
    t = grid.times
    for k in range(grid.steps):
        dt = t[k + 1] - t[k]
        k1 = velocity_fn(z, t[k])
        k2 = velocity_fn(z + dt * k1, t[k + 1])
        z = z + (dt / 2.0) * (k1 + k2)
        _check_state("heun_solve", z)
    return z


# Fehlberg's six-stage pair: propagate with the fifth-order weights
_RK5_C = np.array([0.0, 1 / 4, 3 / 8, 12 / 13, 1.0, 1 / 2])
_RK5_A = [
    [],
    [1 / 4],
    [3 / 32, 9 / 32],
    [1932 / 2197, -7200 / 2197, 7296 / 2197],
    [439 / 216, -8.0, 3680 / 513, -845 / 4104],
    [-8 / 27, 2.0, -3544 / 2565, 1859 / 4104, -11 / 40],
]
_RK5_B = np.array([16 / 135, 0.0, 6656 / 12825, 28561 / 56430, -9 / 50, 2 / 55])


def rk5_solve(velocity_fn, z_start, grid: StepGrid):
    z = np.asarray(z_start).copy()
    t = grid.times
    for k in range(grid.steps):
        dt = t[k + 1] - t[k]
        ks = []
        for i in range(6):
            zi = z
            for j, a in enumerate(_RK5_A[i]):
                zi = zi + (dt * a) * ks[j]
            ks.append(velocity_fn(zi, t[k] + _RK5_C[i] * dt))
        for i in range(6):
            if _RK5_B[i]:
                z = z + (dt * _RK5_B[i]) * ks[i]
        _check_state("rk5_solve", z)
    return z


SOLVERS = {"euler": euler_solve, "heun": heun_solve, "rk5": rk5_solve}
NFE_PER_STEP = {"euler": 1, "heun": 2, "rk5": 6}


# ---------------------------------------------------------------------------
# one-step consistency sampling

def consistency_sample(student_params, x_lr_up, eps, tau_ot, counter=None,
                       trig_latent=True):
    """One-evaluation reconstruction from a noised observation.

    The latent is built on the sinusoidal path at the mapped time (the
    student's training convention); set trig_latent=False to mix on the
    transport path first and rescale across geometries instead.
    """
    if not 0 < tau_ot < 1:
        raise ValueError(f"consistency sampling needs tau in (0, 1), got {tau_ot}")
    x = np.asarray(x_lr_up)
    tau_trig = float(t_trig_from_ot(tau_ot))
    if trig_latent:
        z = trig_interpolate(x, eps, tau_trig)
    else:
        z = z_trig_from_ot(inject_noise(x, eps, tau_ot), tau_ot)
    t = np.full(x.shape[0], tau_trig, x.dtype)
    with T.no_grad():
        out = consistency_fn(student_params, z, t,
                             model_fn=counter if counter is not None else unet_forward)
    return out.data


# ---------------------------------------------------------------------------
# diffusion samplers (eps_model(x, t_index) -> predicted noise)

def _xhat0(x_s, eps_hat, abar_s):
    if abar_s <= 0:
        raise ZeroDivisionError("ddim: schedule reached abar = 0")
    return (x_s - np.sqrt(1.0 - abar_s) * eps_hat) / np.sqrt(abar_s)


def ddim_sample(eps_model, schedule, grid: StepGrid, z_start):
    """Deterministic reverse updates through the implied clean prediction."""
    if grid.convention != "diffusion-index":
        raise ValueError("ddim_sample expects a diffusion-index grid")
    abar = schedule.abar
    x = np.asarray(z_start).copy()
    t = grid.times.astype(int)
    for k in range(grid.steps):
        s, u = t[k], t[k + 1]
        eps_hat = eps_model(x, s)
        x0 = _xhat0(x, eps_hat, abar[s])
        x = np.sqrt(abar[u]) * x0 + np.sqrt(1.0 - abar[u]) * eps_hat
        _check_state("ddim_sample", x)
    return x


def dpmpp_2m_sample(eps_model, schedule, grid: StepGrid, z_start):
    """Second-order multistep solver in log-SNR coordinates.

    The final step to the zero-noise endpoint has infinite log-SNR gap; there
    the update's exact limit is the current clean prediction, so that step
    falls back to first order.
    """
    if grid.convention != "diffusion-index":
        raise ValueError("dpmpp_2m_sample expects a diffusion-index grid")
    if grid.steps < 2:
        raise ValueError("multistep solver needs at least 2 steps")
    abar = schedule.abar
    t = grid.times.astype(int)
    lam = schedule.lam
    sig = schedule.sigma
    x = np.asarray(z_start).copy()
    x0_prev = None
    h_prev = None
    x0_cur = _xhat0(x, eps_model(x, t[0]), abar[t[0]])
    for k in range(grid.steps):
        s, u = t[k], t[k + 1]
        h = lam[u] - lam[s]
        if h == 0:
            raise ZeroDivisionError("dpmpp_2m: duplicate grid times (h = 0)")
        if k == 0 or not np.isfinite(h):
            D = x0_cur
        else:
            r = h_prev / h
            D = (1.0 + 1.0 / (2.0 * r)) * x0_cur - (1.0 / (2.0 * r)) * x0_prev
        x = (sig[u] / sig[s]) * x - np.sqrt(abar[u]) * (np.exp(-h) - 1.0) * D
        _check_state("dpmpp_2m_sample", x)
        x0_prev, h_prev = x0_cur, h
        if u > 0:
            x0_cur = _xhat0(x, eps_model(x, u), abar[u])
    return x
