"""Solver orders, exact-denoiser oracles, conditioning, NFE accounting."""

import numpy as np
import pytest

from flowdistill.ddpm import make_schedule, q_sample
from flowdistill.samplers import (NFECounter, StepGrid, consistency_sample,
                                  ddim_sample, dpmpp_2m_sample, euler_solve,
                                  heun_solve, index_grid, inject_noise,
                                  rk5_solve, uniform_grid)

RNG = np.random.default_rng


# ---------------------------------------------------------------------------
# grids

def test_grid_validation():
    with pytest.raises(ValueError):
        StepGrid(np.array([0.5, 0.6, 0.0]))
    with pytest.raises(ValueError):
        StepGrid(np.array([1.0, 0.5, 0.1]))
    g = uniform_grid(0.6, 5)
    assert g.steps == 5 and g.times[0] == 0.6 and g.times[-1] == 0.0


# ---------------------------------------------------------------------------
# conditioning

def test_inject_noise_limits():
    rng = RNG(0)
    x = rng.standard_normal((2, 8, 8, 1))
    e = rng.standard_normal(x.shape)
    near0 = inject_noise(x, e, 1e-9)
    np.testing.assert_allclose(near0, x, atol=1e-8)
    np.testing.assert_array_equal(inject_noise(x, e, 1.0), e)
    with pytest.raises(ValueError):
        inject_noise(x, e, 0.0)


def test_inject_noise_variance():
    rng = RNG(1)
    tau = 0.7
    x = rng.standard_normal((10_000,) + (1, 1, 1))
    e = rng.standard_normal(x.shape)
    v = np.var(inject_noise(x, e, tau))
    expect = (1 - tau) ** 2 + tau**2
    assert abs(v - expect) / expect < 0.05


def test_inject_then_ideal_transport_recovers_input():
    rng = RNG(2)
    x = rng.standard_normal((1, 6, 6, 1))
    e = rng.standard_normal(x.shape)
    tau = 0.55
    z = inject_noise(x, e, tau)
    # true velocity of the pair is constant, one Euler step suffices exactly
    out = euler_solve(lambda zz, tt: e - x, z, uniform_grid(tau, 1))
    np.testing.assert_allclose(out, x, atol=1e-12)


# ---------------------------------------------------------------------------
# ODE solvers

def test_constant_velocity_exact_for_all():
    rng = RNG(3)
    z0 = rng.standard_normal((1, 4, 4, 1))
    v = rng.standard_normal(z0.shape)
    grid = uniform_grid(0.8, 4)
    want = z0 - 0.8 * v
    for solver in (euler_solve, heun_solve, rk5_solve):
        np.testing.assert_allclose(solver(lambda z, t: v, z0, grid), want, atol=1e-12)


def test_heun_exact_on_linear_in_time():
    a, b = 1.7, -0.4
    z0 = np.array([2.0])
    tau = 1.0
    out = heun_solve(lambda z, t: a * t + b, z0, uniform_grid(tau, 3))
    # d z/dt = a t + b integrates to a quadratic; Heun is exact for it
    want = z0 + a / 2 * (0**2 - tau**2) + b * (0 - tau)
    np.testing.assert_allclose(out, want, atol=1e-12)


def test_rk5_exact_on_quartic():
    coeffs = np.array([0.3, -1.2, 0.8, 2.0, -0.5])
    z0 = np.array([0.7])
    tau = 1.0

    def v(z, t):
        return np.polyval(coeffs, t) * np.ones_like(z)

    out = rk5_solve(v, z0, uniform_grid(tau, 2))
    anti = np.polyint(coeffs)
    want = z0 + np.polyval(anti, 0.0) - np.polyval(anti, tau)
    assert abs(out[0] - want[0]) < 1e-10


def _order_slope(solver, Ks):
    # dz/dt = -z from z(1) = 1 down to t=0; truth z(0) = e
    errs = []
    for K in Ks:
        out = solver(lambda z, t: -z, np.array([1.0]), uniform_grid(1.0, K))
        errs.append(abs(out[0] - np.e))
    logK = np.log(np.asarray(Ks, float))
    logE = np.log(np.asarray(errs))
    return -np.polyfit(logK, logE, 1)[0]


def test_euler_backward_compounding():
    K = 64
    out = euler_solve(lambda z, t: -z, np.array([1.0]), uniform_grid(1.0, K))
    np.testing.assert_allclose(out[0], (1 + 1 / K) ** K, rtol=1e-12)


def test_solver_orders():
    assert abs(_order_slope(euler_solve, [8, 16, 32, 64]) - 1) < 0.3
    assert abs(_order_slope(heun_solve, [8, 16, 32, 64]) - 2) < 0.3
    assert abs(_order_slope(rk5_solve, [2, 4, 8, 16]) - 5) < 0.3


def test_solvers_agree_at_large_K():
    rng = RNG(4)
    z0 = rng.standard_normal((1, 3, 3, 1))

    def v(z, t):
        return np.sin(3 * t) * z - 0.5 * z**2 / (1 + z**2)

    ref = rk5_solve(v, z0, uniform_grid(0.9, 400))
    for solver, K in ((euler_solve, 800_000), (heun_solve, 2_000), (rk5_solve, 50)):
        out = solver(v, z0, uniform_grid(0.9, K))
        assert np.max(np.abs(out - ref)) < 1e-6, solver.__name__


def test_nan_detection():
    with pytest.raises(FloatingPointError):
        euler_solve(lambda z, t: z * np.nan, np.ones(3), uniform_grid(1.0, 2))


# ---------------------------------------------------------------------------
# NFE accounting

def test_nfe_counts():
    z0 = np.ones((1, 2, 2, 1))
    cases = [(euler_solve, 5, 5), (heun_solve, 5, 10), (rk5_solve, 5, 30)]
    for solver, K, want in cases:
        c = NFECounter(lambda z, t: -z)
        solver(c, z0, uniform_grid(0.6, K))
        assert c.count == want, solver.__name__


# ---------------------------------------------------------------------------
# diffusion samplers with an exact denoiser

def _exact_eps_model(x0, schedule):
    def eps_model(x, t):
        a = schedule.abar[int(t)]
        if a >= 1.0:
            return np.zeros_like(x)
        return (x - np.sqrt(a) * x0) / np.sqrt(1.0 - a)
    return eps_model


def test_ddim_single_full_step_identity():
    # plug-in identity: with the true noise, one step recovers x0 exactly.
    # At the extreme end of the cosine schedule sqrt(abar) ~ 6e-17 puts the
    # signal below float64 rounding, so the start index is mid-schedule.
    rng = RNG(5)
    sch = make_schedule("cosine", 1000)
    x0 = rng.standard_normal((1, 4, 4, 1))
    eps = rng.standard_normal(x0.shape)
    z = q_sample(x0, eps, 600, sch)

    def true_eps(x, t):
        return eps

    out = ddim_sample(true_eps, sch, StepGrid(np.array([600.0, 0.0]),
                                              "diffusion-index"), z)
    np.testing.assert_allclose(out, x0, atol=1e-12)


@pytest.mark.parametrize("kind", ["cosine", "linear"])
def test_exact_denoiser_recovery_k30(kind):
    rng = RNG(6)
    sch = make_schedule(kind, 1000)
    x0 = rng.standard_normal((2, 4, 4, 1))
    eps = rng.standard_normal(x0.shape)
    z = q_sample(x0, eps, 1000, sch)
    grid = index_grid(1000, 30)
    model = _exact_eps_model(x0, sch)
    for sampler in (ddim_sample, dpmpp_2m_sample):
        out = sampler(model, sch, grid, z.copy())
        assert np.max(np.abs(out - x0)) < 1e-6, sampler.__name__


def test_dpmpp_first_step_is_first_order():
    # with distinct x0 predictions the first update must use D_0 = xhat0
    sch = make_schedule("cosine", 100)
    rng = RNG(7)
    z = rng.standard_normal((1, 2, 2, 1))
    calls = []

    def eps_model(x, t):
        calls.append(int(t))
        return 0.1 * np.ones_like(x)

    grid = index_grid(100, 4)
    dpmpp_2m_sample(eps_model, sch, grid, z.copy())
    t0, t1 = grid.times[0], grid.times[1]
    x0_hat = (z - np.sqrt(1 - sch.abar[int(t0)]) * 0.1) / np.sqrt(sch.abar[int(t0)])
    h = sch.lam[int(t1)] - sch.lam[int(t0)]
    want = (sch.sigma[int(t1)] / sch.sigma[int(t0)]) * z \
        - np.sqrt(sch.abar[int(t1)]) * (np.exp(-h) - 1.0) * x0_hat
    # replay only the first step
    x = (sch.sigma[int(t1)] / sch.sigma[int(t0)]) * z \
        - np.sqrt(sch.abar[int(t1)]) * (np.exp(-h) - 1.0) * x0_hat
    np.testing.assert_allclose(x, want, atol=0)
    assert calls[0] == 100


def test_dpmpp_first_step_matches_ddim_exactly():
    # substituting x_s = sqrt(abar_s) xhat0 + sigma_s eps_hat into the log-SNR
    # update collapses it to the DDIM step whenever D_k = xhat0, so the first
    # step agrees with DDIM for any model; later steps blend in the previous
    # clean prediction and must diverge.
    sch = make_schedule("cosine", 1000)
    rng = RNG(8)
    z = rng.standard_normal((1, 3, 3, 1))

    def wiggly_model(x, t):
        return np.tanh(x) * np.cos(0.01 * t)

    seen = {}

    def spying_model(tag):
        def fn(x, t):
            seen.setdefault(tag, {})[int(t)] = x.copy()
            return wiggly_model(x, t)
        return fn

    three = StepGrid(np.array([800.0, 400.0, 200.0, 0.0]), "diffusion-index")
    a3 = ddim_sample(spying_model("ddim"), sch, three, z.copy())
    b3 = dpmpp_2m_sample(spying_model("dpmpp"), sch, three, z.copy())
    # the state each sampler hands the model at t=400 is its first-step output
    np.testing.assert_allclose(seen["ddim"][400], seen["dpmpp"][400], atol=1e-12)
    # downstream steps blend the previous clean prediction and diverge
    assert np.max(np.abs(a3 - b3)) > 1e-6


def test_ddim_rejects_zero_abar():
    sch = make_schedule("cosine", 100)
    sch.abar = sch.abar.copy()
    sch.abar[50] = 0.0

    def model(x, t):
        return np.zeros_like(x)

    g = StepGrid(np.array([50.0, 0.0]), "diffusion-index")
    with pytest.raises(ZeroDivisionError):
        ddim_sample(model, sch, g, np.ones((1, 2, 2, 1)))


def test_monotone_abar_enforced():
    from flowdistill.ddpm import NoiseSchedule
    bad = np.array([1.0, 0.5, 0.6, 0.2])
    with pytest.raises(ValueError):
        NoiseSchedule(bad, "x", 3)


# ---------------------------------------------------------------------------
# consistency sampling

def _oracle_student(xbar):
    """Params/model pair whose consistency output is exactly xbar everywhere."""
    from flowdistill import tensor as T
    from flowdistill.nn import ModelParams, UNetConfig
    from flowdistill.tensor import DualTensor, Tensor

    cfg = UNetConfig(field_size=8, base_channels=8, channel_mult=(1, 2),
                     blocks_per_level=1, attention_resolution=4, time_embed_dim=16)
    params = ModelParams(cfg, "student")

    def model_fn(p, z, t, cond=None):
        if not isinstance(z, (Tensor, DualTensor)):
            z = Tensor(z)
        if not isinstance(t, (Tensor, DualTensor)):
            t = Tensor(np.asarray(t))
        B = (z.primal if isinstance(z, DualTensor) else z.data).shape[0]
        xb = Tensor(np.broadcast_to(xbar, (B,) + xbar.shape[1:]).copy())
        s = T.sin(t)
        c = T.cos(t)
        inv_s = T.exp(T.neg(T.log(s)))
        return T.sub(T.mul_batch(z, T.mul(c, inv_s)), T.mul_batch(xb, inv_s))

    return params, model_fn


def test_consistency_boundary_limit():
    # for any bounded network, tau -> 0+ returns the observation itself
    from flowdistill.nn import ModelParams, UNetConfig
    from flowdistill.tensor import Tensor

    rng = RNG(9)
    params = ModelParams(UNetConfig(field_size=8, base_channels=8,
                                    channel_mult=(1, 2), blocks_per_level=1,
                                    attention_resolution=4, time_embed_dim=16),
                         "student")

    def bounded_model(p, z, t, cond=None):
        zdata = z.data if isinstance(z, Tensor) else np.asarray(z)
        return Tensor(np.tanh(zdata) + 1.7)

    x_up = rng.standard_normal((1, 8, 8, 1))
    eps = rng.standard_normal(x_up.shape)
    out = consistency_sample(params, x_up, eps, 1e-7, counter=NFECounter(bounded_model))
    np.testing.assert_allclose(out, x_up, atol=1e-4)


def test_consistency_single_nfe_and_oracle_output():
    rng = RNG(10)
    xbar = rng.standard_normal((1, 8, 8, 1))
    params, model_fn = _oracle_student(xbar)
    x_up = rng.standard_normal((2, 8, 8, 1))
    eps = rng.standard_normal(x_up.shape)
    for tau in (0.1, 0.3, 0.8):
        c = NFECounter(model_fn)
        out = consistency_sample(params, x_up, eps, tau, counter=c)
        assert c.count == 1
        np.testing.assert_allclose(out, np.broadcast_to(xbar, out.shape), atol=1e-5)


def test_consistency_latent_conventions_coincide():
    # cos(arctan(tau/(1-tau))) = (1-tau)/sqrt(tau^2+(1-tau)^2), so mixing on
    # the sinusoidal path at the mapped time equals mixing on the transport
    # path and rescaling across geometries: the two conventions are one map
    rng = RNG(11)
    from flowdistill.trig import t_trig_from_ot, trig_interpolate, z_trig_from_ot
    x_up = rng.standard_normal((1, 8, 8, 1))
    eps = rng.standard_normal(x_up.shape)
    for tau in (0.1, 0.3, 0.5, 0.9):
        za = trig_interpolate(x_up, eps, float(t_trig_from_ot(tau)))
        zb = z_trig_from_ot(inject_noise(x_up, eps, tau), tau)
        np.testing.assert_allclose(za, zb, atol=1e-12)
    xbar = rng.standard_normal((1, 8, 8, 1))
    params, model_fn = _oracle_student(xbar)
    a = consistency_sample(params, x_up, eps, 0.3, counter=NFECounter(model_fn))
    b = consistency_sample(params, x_up, eps, 0.3, counter=NFECounter(model_fn),
                           trig_latent=False)
    np.testing.assert_allclose(a, b, atol=1e-12)
