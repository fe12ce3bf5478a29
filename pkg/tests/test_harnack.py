import math
import warnings

import numpy as np
import pytest

from harnacklab import oracles
from harnacklab.geometry import GeometryError, build_interval, build_torus
from harnacklab.harnack import (
    HarnackError,
    JetCache,
    NonPositiveInput,
    Tolerances,
    appendix_evolution_residual,
    bochner_residual,
    boundary_flux_check,
    cauchy_schwarz_check,
    certify,
    evolution_residual,
    jet_from_f,
    jet_from_u,
    log_transform,
    quantity_liyau,
    quantity_P,
    quantity_Q,
    quantity_restated,
    upsample_trajectory,
)
from harnacklab.solver import Problem, solve

from conftest import random_trig


def heat_problem(g, u0, t_end=0.5, dt=1e-3, record_every=5):
    return Problem(g, 0.0, np.zeros(g.shape), 0.0, u0, t_end, dt, record_every)


def test_log_transform():
    assert np.allclose(log_transform([1.0, math.e, math.exp(-2)]), [0.0, -1.0, 2.0])
    with pytest.raises(NonPositiveInput):
        log_transform([1.0, 0.0])
    with pytest.raises(NonPositiveInput):
        log_transform([1.0, -1e-300])


def test_jet_from_u_matches_jet_from_f(t1, t2):
    for g in (t1, t2):
        f = 0.5 * random_trig(g, 3, 2)
        a, b = jet_from_f(g, f), jet_from_u(g, np.exp(-f))
        assert np.allclose(a.lap, b.lap, atol=1e-9)
        assert np.allclose(a.grad_sq, b.grad_sq, atol=1e-9)
        assert np.allclose(a.hess_sq, b.hess_sq, atol=1e-9)


def test_quantities_on_sine(t1):
    x = t1.coords[0]
    f = np.sin(x)
    t, A = 0.5, 2.0
    assert np.allclose(quantity_Q(t1, f, t, A), -np.sin(x) - A * t - 1 / (2 * t), atol=1e-12)
    assert np.allclose(quantity_P(t1, f, t), -2 * np.sin(x) - np.cos(x) ** 2 - 2 / t, atol=1e-12)
    assert np.allclose(quantity_liyau(t1, f, t), -2 * t * np.sin(x) - 1, atol=1e-12)


@pytest.mark.parametrize("fn", [quantity_P, quantity_liyau])
def test_quantities_reject_nonpositive_t(t1, fn):
    with pytest.raises(HarnackError):
        fn(t1, np.zeros(t1.shape), 0.0)
    with pytest.raises(HarnackError):
        quantity_Q(t1, np.zeros(t1.shape), -1.0, 0.0)


def test_heat_kernel_liyau_equality_near_peak():
    # on a wide torus the kernel is Euclidean near the centre, where 2tΔf = n
    g = build_torus(1, [256], [8 * math.pi])
    t = 0.3
    u = oracles.heat_kernel_field(g, t, center=(4 * math.pi,))
    lay = quantity_liyau(g, jet_from_u(g, u), t)
    assert abs(lay[128]) < 1e-10
    # far tails sit below machine precision relative to the peak, so only the core is checked
    assert np.max(lay[96:161]) < 1e-8


def test_gaussian_margins(t1):
    # f = p x^2 + q near the peak: Δf = 2p and P = 4p - 4p^2 x^2 - 2n/t
    g = build_torus(1, [256], [8 * math.pi])
    t0 = 0.25
    u = oracles.heat_kernel_field(g, t0, center=(4 * math.pi,))
    p, _ = oracles.gaussian_selfsimilar(1 / (4 * t0), 0.0, 0.0)
    j = jet_from_u(g, u)
    assert j.lap[128] == pytest.approx(2 * p, rel=1e-10)
    assert quantity_P(g, j, 1.0)[128] == pytest.approx(4 * p - 2, rel=1e-10)


def test_Q_monotone_in_A(t1):
    f = random_trig(t1, 1, 3)
    assert np.all(quantity_Q(t1, f, 0.7, 2.0) <= quantity_Q(t1, f, 0.7, 1.0))


def test_bochner_vanishes(t1, t2):
    for g, seed in ((t1, 0), (t2, 1)):
        f = random_trig(g, seed, 3)
        assert np.max(np.abs(bochner_residual(g, f))) < 1e-9


def test_bochner_interval_rejected(iv):
    with pytest.raises(GeometryError):
        bochner_residual(iv, np.zeros(iv.shape))


def test_cauchy_schwarz(t1, t2):
    for g in (t1, t2):
        f = random_trig(g, 5, 3)
        assert np.max(cauchy_schwarz_check(g, f, 0.5)) <= 1e-9
    # 1-D: (Δf)^2 = |D²f|^2 exactly
    assert np.max(np.abs(cauchy_schwarz_check(t1, random_trig(t1, 6, 2), 0.3))) < 1e-9
    # isotropic 2-D quadratic-like field reaches equality: f = cos x + cos y at (0,0)
    x, y = t2.coords
    assert abs(cauchy_schwarz_check(t2, np.cos(x) + np.cos(y), 1.0)[0, 0]) < 1e-10


def homogeneous_traj(g, a=-1.0, V=0.5, A=0.0):
    p = Problem(g, a, np.full(g.shape, V), A, np.full(g.shape, math.e), 0.5, 1e-2)
    return p, solve(p)


def test_restated_on_constants(t1):
    A = 0.3
    p, traj = homogeneous_traj(t1, A=A)
    for i in (10, 25):
        t = traj.times[i]
        r = quantity_restated(t1, traj, i)
        assert np.allclose(r.margin, -A * t - 1 / (2 * t), atol=1e-10)
        assert r.deviation < 1e-10


def test_evolution_residual_on_constants(t1):
    p, traj = homogeneous_traj(t1)
    ev = evolution_residual(traj, p, 20)
    # Q = -n/(2t): the quadratic terms cancel and only -aQ = a n/(2t) remains
    t = traj.times[20]
    assert np.allclose(ev.residual, p.a / (2 * t), atol=1e-8)
    assert np.all(ev.case2)


def test_evolution_residual_heat(t2):
    u0 = 2 + random_trig(t2, 2, 2)
    p = heat_problem(t2, u0, t_end=0.4, dt=5e-4, record_every=2)
    traj = solve(p)
    jets = JetCache(traj)
    for i in (50, 200, 399):
        assert np.max(evolution_residual(traj, p, i, jets).residual) < 1e-3


def test_appendix_identity_heat(t1):
    p = heat_problem(t1, 2 + random_trig(t1, 4, 3), t_end=0.3, dt=5e-4, record_every=2)
    traj = solve(p)
    ap = appendix_evolution_residual(traj, 100)
    assert np.max(np.abs(ap.identity_residual)) < 1e-5


def test_appendix_rejects(t1, iv):
    _, traj = homogeneous_traj(t1)
    with pytest.raises(HarnackError):
        appendix_evolution_residual(traj, 5)
    traj = solve(heat_problem(iv, np.ones(iv.shape), t_end=0.1, dt=1e-2, record_every=1))
    with pytest.raises(GeometryError):
        appendix_evolution_residual(traj, 5)


def test_boundary_flux(iv):
    x = iv.coords[0]
    p = Problem(iv, -1.0, np.sin(x), 1.0, np.full(iv.shape, 2.0), 0.1, 1e-2)
    traj = solve(p)
    b = boundary_flux_check(traj, p, 5)
    assert b.V_nu == pytest.approx((-1, -1), abs=1e-3)
    assert max(map(abs, b.u_nu)) < 1e-2


def test_boundary_flux_constant(iv):
    p = Problem(iv, 0.0, np.zeros(iv.shape), 0.0, np.full(iv.shape, 3.0), 0.1, 1e-2)
    b = boundary_flux_check(solve(p), p, 5)
    assert b.u_nu == (0.0, 0.0) and b.V_nu == (0.0, 0.0)


def test_boundary_flux_rejects(t1, iv):
    _, traj = homogeneous_traj(t1)
    with pytest.raises(GeometryError):
        boundary_flux_check(traj, traj.problem, 3)
    x = iv.coords[0]
    p = Problem(iv, 0.0, -np.sin(x), 0.0, np.ones(iv.shape), 0.1, 1e-2)
    assert p.boundary_admissible is False
    with pytest.raises(HarnackError):
        boundary_flux_check(solve(p), p, 3)


def test_certify_single_sample(t1):
    p = Problem(t1, 0.0, np.zeros(t1.shape), 0.0, np.ones(t1.shape), 0.0, 1e-2)
    rep = certify(solve(p), p)
    assert rep.slices == []
    assert any("vacuously" in w for w in rep.warnings)
    assert rep.passed


def test_certify_monotone_in_A(t1):
    x = t1.coords[0]
    u0 = np.exp(random_trig(t1, 7, 2))
    res = []
    for A in (1.0, 3.0):
        p = Problem(t1, -1.0, np.sin(x), A, u0, 0.3, 1e-3, 5)
        res.append(certify(solve(p), p).verdicts["Q"].worst)
    assert res[1] <= res[0]


def test_certify_linear_torus_passes(t1):
    p = heat_problem(t1, 1.5 + random_trig(t1, 8, 2), t_end=0.5, dt=5e-4, record_every=2)
    rep = certify(solve(p), p)
    assert rep.passed, {k: v.worst for k, v in rep.verdicts.items()}
    assert {"Q", "P", "liyau", "evolution", "appendix_identity"} <= set(rep.verdicts)


def test_certify_nonlinear_torus_passes(t1):
    x = t1.coords[0]
    p = Problem(t1, -1.0, np.sin(x), 1.0, np.exp(random_trig(t1, 9, 2)), 0.5, 5e-4, 2)
    rep = certify(solve(p), p)
    assert rep.passed, {k: v.worst for k, v in rep.verdicts.items()}
    assert "P" not in rep.verdicts


def test_certify_oversampling(t1):
    p = heat_problem(t1, 1.5 + random_trig(t1, 8, 2), t_end=0.2, dt=5e-4, record_every=2)
    traj = solve(p)
    a, b = certify(traj, p), certify(traj, p, oversample=2)
    assert b.verdicts["Q"].worst == pytest.approx(a.verdicts["Q"].worst, abs=1e-8)
    # locations are reported on the original grid
    assert all(0 <= s.argmaxQ[0] < 64 for s in b.slices)
    assert b.problem["points"] == [64]


def test_certify_oversampling_interval_warns(iv):
    p = heat_problem(iv, 2 + np.cos(iv.coords[0]), t_end=0.1, dt=1e-2, record_every=1)
    rep = certify(solve(p), p, oversample=2)
    assert any("oversampling" in w for w in rep.warnings)


def test_upsample_preserves_nodes(t2):
    p = heat_problem(t2, 2 + random_trig(t2, 1, 2), t_end=0.05, dt=1e-2, record_every=1)
    traj = solve(p)
    fine = upsample_trajectory(traj, 2)
    assert np.allclose(fine.states[:, ::2, ::2], traj.states, atol=1e-13)


def test_certify_tolerance_failure(t1):
    p = heat_problem(t1, 1.5 + random_trig(t1, 8, 2), t_end=0.2)
    rep = certify(solve(p), p, Tolerances(Q=-1e3))
    assert not rep.verdicts["Q"].passed and not rep.passed
