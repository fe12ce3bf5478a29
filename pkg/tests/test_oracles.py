import math

import mpmath as mp
import numpy as np
import pytest

from harnacklab import oracles
from harnacklab.geometry import build_interval, build_torus
from harnacklab.solver import Problem

# frozen with an independent 30-digit ODE integration (mpmath.odefun) of
# p' = a p - 4 p^2, q' = a q + 2 n p
GAUSSIAN_FROZEN = [
    # p0, a, t, n, q0, p, q
    (1.0, -1.0, 1.0, 1, 0.0, 0.104259966931271977, 0.332690715605376434),
    (1.0, -1.0, 1.0, 2, 0.3, 0.104259966931271977, 0.775745263562185561),
    (2.0, -0.5, 2.0, 1, 0.0, 0.0662015103958073761, 0.590026545969654507),
    (12.5, 0.0, 1.0, 1, 0.0, 0.245098039215686275, 1.96591281636216289),
]


def test_homogeneous_examples():
    assert oracles.homogeneous_solution(1, -1, 0, 1) == pytest.approx(math.exp(math.exp(-1)), rel=1e-15)
    for t in (0.0, 1.0, 7.5):
        assert oracles.homogeneous_solution(0.7, 0, 0, t) == pytest.approx(math.exp(0.7), rel=1e-15)
    assert oracles.homogeneous_solution(0, -1, 1, math.inf) == pytest.approx(math.e, rel=1e-15)
    assert oracles.homogeneous_solution(0, -1, 1, 50.0) == pytest.approx(math.e, rel=1e-15)


def test_homogeneous_formula_a_negative():
    q0, a, V, t = 0.4, -0.7, 1.3, 2.2
    q = (q0 + V / a) * math.exp(a * t) - V / a
    assert oracles.homogeneous_log(q0, a, V, t) == pytest.approx(q, rel=1e-14)


def test_homogeneous_rejects_positive_a():
    with pytest.raises(ValueError):
        oracles.homogeneous_log(0, 1.0, 0, 1)


def _d_dt(fn, t, h=1e-3):
    # fourth-order central difference
    return (-fn(t + 2 * h) + 8 * fn(t + h) - 8 * fn(t - h) + fn(t - 2 * h)) / (12 * h)


def test_homogeneous_satisfies_ode():
    q0, a, V = 0.8, -1.5, 0.6
    q = lambda t: oracles.homogeneous_log(q0, a, V, t)  # noqa: E731
    for t in (0.1, 0.7, 2.0):
        assert abs(_d_dt(q, t) - (a * q(t) + V)) <= 1e-10


@pytest.mark.parametrize("p0,a,t,n,q0,p_ref,q_ref", GAUSSIAN_FROZEN)
def test_gaussian_frozen(p0, a, t, n, q0, p_ref, q_ref):
    p, q = oracles.gaussian_selfsimilar(p0, a, t, n, q0)
    assert p == pytest.approx(p_ref, rel=1e-14)
    assert q == pytest.approx(q_ref, rel=1e-13)


def test_gaussian_live_mpmath():
    mp.mp.dps = 25
    a, p0, n = -0.3, 0.7, 2
    sol = mp.odefun(lambda s, y: [a * y[0] - 4 * y[0] ** 2, a * y[1] + 2 * n * y[0]], 0, [mp.mpf(p0), mp.mpf(0)])
    for t in (0.5, 1.5):
        p, q = oracles.gaussian_selfsimilar(p0, a, t, n)
        pr, qr = sol(t)
        assert p == pytest.approx(float(pr), rel=1e-13) and q == pytest.approx(float(qr), rel=1e-13)


def test_gaussian_heat_kernel_profile():
    t0 = 0.02
    for t in (0.0, 0.3, 1.0):
        p, _ = oracles.gaussian_selfsimilar(1 / (4 * t0), 0.0, t)
        assert p == pytest.approx(1 / (4 * (t0 + t)), rel=1e-14)
        # Δf = 2 n p = n / (2(t0 + t)): the Li-Yau equality case
        assert 2 * 1 * p == pytest.approx(1 / (2 * (t0 + t)), rel=1e-14)


def test_gaussian_satisfies_odes():
    a, p0, n = -0.8, 1.3, 2
    P = lambda t: oracles.gaussian_selfsimilar(p0, a, t, n)[0]  # noqa: E731
    Q = lambda t: oracles.gaussian_selfsimilar(p0, a, t, n)[1]  # noqa: E731
    for t in (0.3, 1.0):
        assert abs(_d_dt(P, t) - (a * P(t) - 4 * P(t) ** 2)) <= 1e-10
        assert abs(_d_dt(Q, t) - (a * Q(t) + 2 * n * P(t))) <= 1e-10


def test_gaussian_rejects():
    with pytest.raises(ValueError):
        oracles.gaussian_selfsimilar(0.0, -1, 1)
    with pytest.raises(ValueError):
        oracles.gaussian_selfsimilar(1.0, 0.5, 1)


@pytest.mark.parametrize("n,t", [(1, 0.01), (1, 3.0), (2, 0.05), (2, 1.0)])
def test_kernel_mass(n, t):
    g = build_torus(n, [64] * n, [2 * math.pi] * n)
    assert g.integrate(oracles.heat_kernel_field(g, t)) == pytest.approx(1.0, abs=1e-12)


def test_kernel_small_t_peak():
    g = build_torus(1, [64], [2 * math.pi])
    t = 0.01
    assert oracles.torus_heat_kernel(g, (np.array(0.0),), t) == pytest.approx((4 * math.pi * t) ** -0.5, rel=1e-14)


@pytest.mark.parametrize("t", [0.05, 0.5, 2.0])
def test_kernel_matches_fourier_series(t):
    # independent representation: K = (1/L) sum_k exp(-k^2 t) cos(k x)
    L = 2 * math.pi
    mp.mp.dps = 30
    for x in (0.0, 0.7, 3.0):
        series = mp.nsum(lambda k: mp.exp(-(k**2) * t) * mp.cos(k * x), [-mp.inf, mp.inf]) / L
        assert float(oracles.heat_kernel_1d(np.array(x), L, t)) == pytest.approx(float(series), rel=1e-13)


def test_kernel_satisfies_heat_equation():
    L, x = 3.0, 0.4
    for t in (0.05, 0.8):
        K = lambda s, y=x: float(oracles.heat_kernel_1d(np.array(y), L, s))  # noqa: E731
        h = 1e-3
        K_xx = (-K(t, x + 2 * h) + 16 * K(t, x + h) - 30 * K(t) + 16 * K(t, x - h) - K(t, x - 2 * h)) / (12 * h * h)
        # finite-difference truncation dominates for the narrow early kernel
        assert abs(_d_dt(K, t) - K_xx) <= 1e-5 * abs(K_xx)


def test_kernel_rejects_nonpositive_t():
    with pytest.raises(ValueError):
        oracles.heat_kernel_1d(np.zeros(3), 1.0, 0.0)


@pytest.mark.parametrize("n", [1, 2])
def test_semigroup(n):
    g = build_torus(n, [64] if n == 1 else [16, 16], [2 * math.pi] * n)
    conv = oracles.image_kernel_convolution(g, 0.3, 0.5)
    assert np.max(np.abs(conv - oracles.heat_kernel_field(g, 0.8))) <= 1e-10


def test_fine_grid_homogeneous():
    g = build_torus(1, [16], [2 * math.pi])
    p = Problem(g, -1.0, np.full(g.shape, 0.5), 0.0, np.full(g.shape, math.e), 0.5, 0.1)
    ref = oracles.fine_grid_reference(p, refine=2)
    for t, u in zip(ref.times, ref.states):
        assert np.max(np.abs(u - oracles.homogeneous_solution(1.0, -1.0, 0.5, t))) <= 1e-8


def test_fine_grid_heat_kernel():
    g = build_torus(1, [32], [2 * math.pi])
    t0 = 0.2
    p = Problem(g, 0.0, np.zeros(g.shape), 0.0, oracles.heat_kernel_field(g, t0), 0.2, 0.05)
    p = Problem(g, 0.0, p.V, 0.0, p.u0, 0.2, 0.05, u0_fn=lambda x: oracles.torus_heat_kernel(g, (x,), t0))
    ref = oracles.fine_grid_reference(p, refine=4)
    for t, u in zip(ref.times, ref.states):
        assert np.max(np.abs(u - oracles.heat_kernel_field(g, t0 + t))) <= 1e-7


def test_fine_grid_converges_to_kernel():
    g = build_torus(1, [16], [2 * math.pi])
    t0 = 0.1
    fn = lambda x: oracles.torus_heat_kernel(g, (x,), t0)  # noqa: E731
    p = Problem(g, 0.0, np.zeros(g.shape), 0.0, g.field(fn), 0.1, 0.1, u0_fn=fn)
    errs = [np.max(np.abs(oracles.fine_grid_reference(p, r).states[-1] - oracles.heat_kernel_field(g, 0.2))) for r in (2, 4)]
    # sixth-order differences: doubling the grid gains about 2^6
    assert errs[0] / errs[1] > 30


def test_fine_grid_budget_and_arguments(iv):
    g = build_torus(1, [16], [2 * math.pi])
    p = Problem(g, 0.0, np.zeros(g.shape), 0.0, np.ones(g.shape), 1.0, 0.1)
    with pytest.raises(oracles.OracleBudgetError):
        oracles.fine_grid_reference(p, refine=4, max_steps=10)
    with pytest.raises(ValueError):
        oracles.fine_grid_reference(p, refine=1)
    q = Problem(iv, 0.0, np.zeros(iv.shape), 0.0, np.ones(iv.shape), 1.0, 0.1)
    with pytest.raises(ValueError):
        oracles.fine_grid_reference(q, refine=2)


def test_fine_grid_interval_constant():
    g = build_interval(17, 1.0)
    p = Problem(g, -1.0, np.zeros(g.shape), 0.0, np.full(g.shape, math.e), 0.3, 0.1, V_fn=lambda x: 0 * x, u0_fn=lambda x: math.e + 0 * x)
    ref = oracles.fine_grid_reference(p, refine=2)
    assert np.allclose(ref.states[-1], oracles.homogeneous_solution(1.0, -1.0, 0.0, 0.3), rtol=1e-10)
