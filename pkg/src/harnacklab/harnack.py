"""Differential Harnack quantities and the pointwise checks behind them.

Everything is phrased in terms of ``f = -log u``. With that sign the flow
becomes ``f_t - Δf = a f - V - |∇f|^2`` and the gradient estimates read

* ``Q = Δf - A t - n/(2t) <= 0``                      (nonlinear flow, a <= 0)
* ``f_t - a f + V + |∇f|^2 <= A t + n/(2t)``          (same bound, restated)
* ``P = 2Δf - |∇f|^2 <= 2n/t``                        (heat equation)
* ``2tΔf <= n``                                       (Li-Yau, heat equation)

The quantity functions return *margins*: fields that are ``<= 0`` wherever
the corresponding inequality holds.

Derivatives of ``f`` can be taken directly from ``f`` (spectrally on the
torus) or from ``u`` through the quotient rule, see :func:`jet_from_u`. The
latter stays accurate when ``u`` is smooth but ``log u`` is not resolved on
the grid, as happens far out in the tails of a heat kernel.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from . import geometry as geo
from .geometry import Geometry, GeometryError
from .solver import Problem, ProblemError, Trajectory, normal_derivative

log = logging.getLogger(__name__)


class NonPositiveInput(ValueError):
    pass


class HarnackError(ValueError):
    pass


def log_transform(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if not np.all(u > 0):
        raise NonPositiveInput("f = -log u needs u > 0 everywhere")
    return -np.log(u)


@dataclass
class LogJet:
    """``f = -log u`` together with the derivatives the estimates need."""

    f: np.ndarray
    grad: tuple[np.ndarray, ...]
    lap: np.ndarray
    hess_sq: Optional[np.ndarray] = None

    @property
    def grad_sq(self) -> np.ndarray:
        return sum(d * d for d in self.grad)


def jet_from_f(g: Geometry, f) -> LogJet:
    f = g.check(f)
    if g.is_torus:
        grad, H = geo.gradient_and_hessian(g, f)
        hess_sq = sum(H[i][j] ** 2 for i in range(g.n) for j in range(g.n))
        return LogJet(f=f, grad=grad, lap=sum(H[i][i] for i in range(g.n)), hess_sq=hess_sq)
    return LogJet(f=f, grad=geo.gradient(g, f), lap=geo.laplacian(g, f))


def jet_from_u(g: Geometry, u) -> LogJet:
    """Derivatives of ``f = -log u`` via ``∇f = -∇u/u`` and ``D²f = -D²u/u + ∇u⊗∇u/u²``."""
    u = g.check(u)
    f = log_transform(u)
    if not g.is_torus:
        grad = tuple(-d / u for d in geo.gradient(g, u))
        lap = -geo.laplacian(g, u) / u + sum(d * d for d in grad)
        return LogJet(f=f, grad=grad, lap=lap)
    du, Hu = geo.gradient_and_hessian(g, u)
    grad = tuple(-d / u for d in du)
    H = [[-Hu[i][j] / u + grad[i] * grad[j] for j in range(g.n)] for i in range(g.n)]
    lap = sum(H[i][i] for i in range(g.n))
    hess_sq = sum(H[i][j] ** 2 for i in range(g.n) for j in range(g.n))
    return LogJet(f=f, grad=grad, lap=lap, hess_sq=hess_sq)


def _jet(g: Geometry, f) -> LogJet:
    return f if isinstance(f, LogJet) else jet_from_f(g, f)


def _check_t(t: float):
    if not t > 0:
        raise HarnackError(f"Harnack quantities need t > 0 (got {t})")


def quantity_Q(g: Geometry, f, t: float, A: float) -> np.ndarray:
    _check_t(t)
    return _jet(g, f).lap - A * t - g.n / (2 * t)


def quantity_P(g: Geometry, f, t: float) -> np.ndarray:
    """``2Δf - |∇f|^2 - 2n/t``."""
    _check_t(t)
    j = _jet(g, f)
    return 2 * j.lap - j.grad_sq - 2 * g.n / t


def quantity_liyau(g: Geometry, f, t: float) -> np.ndarray:
    _check_t(t)
    return 2 * t * _jet(g, f).lap - g.n


# ---------------------------------------------------------------------------
# time derivatives along a trajectory


@lru_cache(maxsize=None)
def _central_weights(m: int) -> np.ndarray:
    """First-derivative weights on the stencil ``-m..m`` with unit spacing (order ``2m``)."""
    offsets = np.arange(-m, m + 1, dtype=float)
    V = np.vander(offsets, increasing=True).T
    rhs = np.zeros(2 * m + 1)
    rhs[1] = 1.0
    return np.linalg.solve(V, rhs)


def _time_weights(times: np.ndarray, index: int, max_half_width: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Centered finite-difference weights for d/dt at ``times[index]``.

    Uses the widest uniform centered stencil that fits (up to sixth order),
    falling back to the three-point formula for nonuniform spacing.
    """
    if index <= 0 or index >= len(times) - 1:
        raise HarnackError(f"index {index} is not an interior sample")
    for m in range(min(max_half_width, index, len(times) - 1 - index), 0, -1):
        d = np.diff(times[index - m : index + m + 1])
        if np.allclose(d, d[0], rtol=1e-9, atol=0):
            return np.arange(index - m, index + m + 1), _central_weights(m) / d[0]
    h0 = times[index] - times[index - 1]
    h1 = times[index + 1] - times[index]
    w = np.array([-h1 / (h0 * (h0 + h1)), (h1 - h0) / (h0 * h1), h0 / (h1 * (h0 + h1))])
    return np.arange(index - 1, index + 2), w


def _interior_mask(g: Geometry) -> np.ndarray:
    # the ghost-node closure is only first-order consistent at the interval
    # endpoints, so pointwise PDE residuals are evaluated on interior nodes
    m = np.ones(g.shape, dtype=bool)
    if g.has_boundary:
        m[0] = m[-1] = False
    return m


class JetCache:
    """Lazily computed jets for every sample of a trajectory."""

    def __init__(self, traj: Trajectory):
        self.traj = traj
        self._jets: dict[int, LogJet] = {}

    def __getitem__(self, i: int) -> LogJet:
        if i not in self._jets:
            self._jets[i] = jet_from_u(self.traj.problem.geometry, self.traj.states[i])
        return self._jets[i]

    def ddt(self, index: int, attr: str) -> np.ndarray:
        idx, w = _time_weights(self.traj.times, index)
        return sum(wi * getattr(self[i], attr) for i, wi in zip(idx, w))

    def release_before(self, index: int):
        """Drop jets older than ``index``; a forward sweep never needs them again."""
        for i in [k for k in self._jets if k < index]:
            del self._jets[i]


@dataclass
class RestatedResult:
    margin: np.ndarray
    deviation: float  # sup |restated - Q| over the checked nodes


def quantity_restated(g: Geometry, u_traj: Trajectory, index: int, jets: Optional[JetCache] = None) -> RestatedResult:
    """``f_t - a f + V + |∇f|^2 - A t - n/(2t)`` at an interior sample.

    Through the transformed equation this equals ``Q``; the deviation from
    ``Q`` is returned as a consistency diagnostic.
    """
    p = u_traj.problem
    jets = jets or JetCache(u_traj)
    t = float(u_traj.times[index])
    _check_t(t)
    j = jets[index]
    f_t = jets.ddt(index, "f")
    margin = f_t - p.a * j.f + p.V + j.grad_sq - p.A * t - g.n / (2 * t)
    Q = quantity_Q(g, j, t, p.A)
    mask = _interior_mask(g)
    return RestatedResult(margin, float(np.max(np.abs(margin - Q)[mask])))


def bochner_residual(g: Geometry, f) -> np.ndarray:
    """``Δ|∇f|^2 - 2|D²f|^2 - 2<∇f, ∇Δf>``; zero on a flat torus."""
    if not g.is_torus:
        raise GeometryError("Bochner residual is only evaluated on the torus")
    grad, H = geo.gradient_and_hessian(g, f)
    z = sum(d * d for d in grad)
    y = sum(H[i][i] for i in range(g.n))
    lap_z = geo.laplacian(g, z)
    grad_y = geo.gradient(g, y)
    hess_sq = sum(H[i][j] ** 2 for i in range(g.n) for j in range(g.n))
    return lap_z - 2 * hess_sq - 2 * sum(a * b for a, b in zip(grad, grad_y))


def cauchy_schwarz_check(g: Geometry, f, t: float) -> np.ndarray:
    """``(P + z)^2 / (4n) - |D²f|^2``, i.e. the trace inequality ``(Δf)^2 <= n |D²f|^2``."""
    if not g.is_torus:
        raise GeometryError("Hessian checks are only evaluated on the torus")
    j = _jet(g, f)
    z = j.grad_sq
    P = 2 * j.lap - z
    return (P + z) ** 2 / (4 * g.n) - j.hess_sq


@dataclass
class EvolutionResult:
    residual: np.ndarray
    case2: np.ndarray  # True where Q + At + n/t >= 0
    B: np.ndarray
    mask: np.ndarray  # nodes where the residual is meaningful


def evolution_residual(traj: Trajectory, p: Problem, index: int, jets: Optional[JetCache] = None) -> EvolutionResult:
    """Residual of ``LQ - aQ + 2<∇f,∇Q> <= (2/n)[(n/2t)^2 - (Q + At + n/2t)^2]``.

    ``L = ∂_t - Δ``. The time derivative of the explicit part ``-At - n/(2t)``
    is taken analytically; only ``Δf`` is differenced in time.
    """
    g = p.geometry
    jets = jets or JetCache(traj)
    t = float(traj.times[index])
    _check_t(t)
    n = g.n
    j = jets[index]
    Q = j.lap - p.A * t - n / (2 * t)
    Q_t = jets.ddt(index, "lap") - p.A + n / (2 * t * t)
    nb = not g.has_boundary
    # Q does not satisfy the Neumann condition, so no ghost reflection for it
    grad_Q, lap_Q = geo.gradient_and_laplacian(g, Q, neumann=nb)
    lhs = Q_t - lap_Q - p.a * Q + 2 * sum(a * b for a, b in zip(j.grad, grad_Q))
    rhs = (2 / n) * ((n / (2 * t)) ** 2 - (Q + p.A * t + n / (2 * t)) ** 2)
    s = Q + p.A * t + n / t
    case2 = s >= 0
    B = np.where(case2, -Q * s, 0.0)
    return EvolutionResult(lhs - rhs, case2, B, _interior_mask(g))


@dataclass
class AppendixResult:
    identity_residual: np.ndarray
    chain_margin: np.ndarray  # I - (2/t)(P - 2n/t)
    chain_asserted: np.ndarray  # where P >= 2n/t, the only place the step is claimed


def appendix_evolution_residual(traj: Trajectory, index: int, jets: Optional[JetCache] = None) -> AppendixResult:
    """Residual of ``LP = -2<∇f,∇P> - 2|D²f|^2`` (flat torus, heat equation) and the ``I`` chain."""
    p = traj.problem
    g = p.geometry
    if not p.is_linear:
        raise HarnackError("the P identity is stated for the heat equation (a = 0, V = 0)")
    if not g.is_torus:
        raise GeometryError("the P identity needs the Hessian, available on the torus only")
    jets = jets or JetCache(traj)
    t = float(traj.times[index])
    _check_t(t)
    n = g.n
    j = jets[index]
    z = j.grad_sq
    P = 2 * j.lap - z
    P_t = 2 * jets.ddt(index, "lap") - jets.ddt(index, "grad_sq")
    grad_P, lap_P = geo.gradient_and_laplacian(g, P)
    residual = P_t - lap_P + 2 * sum(a * b for a, b in zip(j.grad, grad_P)) + 2 * j.hess_sq
    I = (P + z) ** 2 - (2 * n / t) ** 2
    chain = I - (2 / t) * (P - 2 * n / t)
    return AppendixResult(residual, chain, P >= 2 * n / t)


@dataclass
class BoundaryFlux:
    t: float
    u_nu: tuple[float, float]
    V_nu: tuple[float, float]
    Q_nu: tuple[float, float]


def boundary_flux_check(traj: Trajectory, p: Problem, index: int, jets: Optional[JetCache] = None) -> BoundaryFlux:
    """One-sided estimates of ``u_ν``, ``V_ν`` and ``Q_ν`` at both interval endpoints."""
    g = p.geometry
    if not g.has_boundary:
        raise GeometryError("boundary checks need the Neumann interval")
    if not p.boundary_admissible:
        raise HarnackError("V_ν <= 0 does not hold on the boundary")
    t = float(traj.times[index])
    u = traj.states[index]
    if t > 0:
        jets = jets or JetCache(traj)
        Q = quantity_Q(g, jets[index], t, p.A)
        Q_nu = normal_derivative(g, Q)
    else:
        Q_nu = (math.nan, math.nan)
    return BoundaryFlux(t, normal_derivative(g, u), normal_derivative(g, p.V), Q_nu)


# ---------------------------------------------------------------------------
# certification


@dataclass
class Tolerances:
    Q: float = 1e-4
    P: float = 1e-4
    liyau: float = 1e-4
    restated: float = 1e-3
    evolution: float = 1e-3
    bochner: float = 1e-8
    u_nu: float = 1e-6
    t_min: float = 0.05


@dataclass
class HarnackSlice:
    t: float
    min_u: float
    maxQ: float
    argmaxQ: tuple
    max_liyau: Optional[float] = None
    max_P: Optional[float] = None
    max_restated: Optional[float] = None
    restated_deviation: Optional[float] = None
    bochner_residual_max: Optional[float] = None
    evolution_violation_max: Optional[float] = None
    appendix_residual_max: Optional[float] = None
    case2_fraction: Optional[float] = None
    u_nu: Optional[tuple[float, float]] = None
    Q_nu: Optional[tuple[float, float]] = None
    argmax: dict = field(default_factory=dict)


@dataclass
class Verdict:
    name: str
    worst: float
    tolerance: float
    where: Optional[tuple] = None  # (t, node index)
    kind: str = "max"  # "max": worst <= tol passes; "min": worst >= tol passes

    @property
    def passed(self) -> bool:
        if math.isnan(self.worst):
            return False
        if self.kind == "min":
            return self.worst >= self.tolerance
        return self.worst <= self.tolerance


@dataclass
class HarnackReport:
    problem: dict
    tolerances: Tolerances
    slices: list[HarnackSlice]
    verdicts: dict[str, Verdict]
    warnings: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts.values())


def _argmax(a: np.ndarray, mask=None, stride: int = 1) -> tuple[float, tuple]:
    if mask is not None:
        a = np.where(mask, a, -np.inf)
    i = int(np.argmax(a))
    return float(a.flat[i]), tuple(int(k) // stride for k in np.unravel_index(i, a.shape))


def upsample_trajectory(traj: Trajectory, factor: int) -> Trajectory:
    """Trigonometric interpolation of every torus sample onto a ``factor``-times finer grid.

    Products such as ``|∇f|^2`` or ``∇u/u`` double the bandwidth of a field,
    so on a grid that barely resolves ``u`` they alias. Evaluating them on the
    interpolated grid removes that error without re-solving.
    """
    p = traj.problem
    g = p.geometry
    if not g.is_torus:
        raise GeometryError("oversampling is only defined on the torus")
    gf = geo.refine_torus(g, factor)
    V = geo.fourier_upsample(p.V, gf.shape)
    u0 = geo.fourier_upsample(p.u0, gf.shape)
    try:
        pf = Problem(gf, p.a, V, p.A, u0, p.t_end, p.dt, p.record_every)
    except ProblemError as exc:
        raise HarnackError(f"cannot oversample this problem: {exc}") from exc
    states = np.stack([geo.fourier_upsample(u, gf.shape) for u in traj.states])
    if not np.all(states > 0):
        raise HarnackError("interpolated solution is not positive; lower the oversampling factor")
    return Trajectory(pf, traj.times, states, traj.stats)


def problem_summary(p: Problem) -> dict:
    g = p.geometry
    return {
        "geometry": g.kind.value,
        "n": g.n,
        "points": list(g.points),
        "lengths": list(g.lengths),
        "a": p.a,
        "A": p.A,
        "t_end": p.t_end,
        "dt": p.dt,
        "record_every": p.record_every,
        "linear": p.is_linear,
        "boundary_admissible": p.boundary_admissible,
    }


def certify(
    traj: Trajectory,
    p: Problem,
    tol: Tolerances | None = None,
    *,
    t_shift: float = 0.0,
    oversample: int = 1,
) -> HarnackReport:
    """Evaluate every applicable estimate on each sample with ``t >= t_min``.

    Q is always checked; P and Li-Yau only for the heat equation; the restated
    form and the evolution residuals on interior samples; boundary fluxes on
    the interval. Failures are verdicts, never exceptions.

    Parameters
    ----------
    traj, p
        Trajectory and the problem it solves.
    tol
        Tolerances; defaults to :class:`Tolerances`.
    t_shift
        Age of the initial datum when it is itself a heat kernel. Used only by
        the Li-Yau sharpness diagnostic, which evaluates ``2(t + t_shift)Δf``.
    oversample
        On the torus, evaluate all quantities on the trigonometric interpolant
        of each sample on a grid this many times finer, and take maxima over
        the original nodes. Ignored on the interval.
    """
    tol = tol or Tolerances()
    summary = problem_summary(p)
    g = p.geometry
    warnings: list[str] = []
    stride = 1
    if oversample > 1 and g.is_torus:
        traj = upsample_trajectory(traj, oversample)
        p = traj.problem
        g = p.geometry
        stride = oversample
    elif oversample > 1:
        warnings.append("oversampling ignored on the interval")
    # nodes of the original grid
    nodes = np.zeros(g.shape, dtype=bool)
    nodes[tuple(slice(None, None, stride) for _ in range(g.n))] = True
    interior = nodes & _interior_mask(g)
    jets = JetCache(traj)
    slices: list[HarnackSlice] = []
    worst: dict[str, tuple[float, tuple]] = {}

    def track(name, value, where):
        if name not in worst or value > worst[name][0]:
            worst[name] = (value, where)

    def track_min(name, value, where):
        if name not in worst or value < worst[name][0]:
            worst[name] = (value, where)

    def amax(field, mask=nodes):
        return _argmax(field, mask, stride)

    last = len(traj) - 1
    first_certified = None
    for i, t in enumerate(traj.times):
        t = float(t)
        if g.has_boundary:
            u_nu = normal_derivative(g, traj.states[i])
            track("boundary_u_nu", max(abs(v) for v in u_nu), (t, None))
        if t < tol.t_min or t <= 0:
            continue
        jets.release_before(i - 3)
        j = jets[i]
        mQ, aQ = amax(quantity_Q(g, j, t, p.A))
        s = HarnackSlice(t=t, min_u=float(traj.states[i][nodes].min()), maxQ=mQ, argmaxQ=aQ)
        track("Q", mQ, (t, aQ))
        if p.is_linear:
            s.max_liyau, loc = amax(quantity_liyau(g, j, t))
            s.argmax["liyau"] = loc
            track("liyau", s.max_liyau, (t, loc))
            s.max_P, loc = amax(quantity_P(g, j, t))
            s.argmax["P"] = loc
            track("P", s.max_P, (t, loc))
            if first_certified is None:
                first_certified = i
        if g.is_torus:
            s.bochner_residual_max = float(np.max(np.abs(bochner_residual(g, j.f))[nodes]))
        if 0 < i < last:
            r = quantity_restated(g, traj, i, jets)
            s.max_restated, loc = amax(r.margin)
            s.argmax["restated"] = loc
            s.restated_deviation = float(np.max(np.abs(r.margin - quantity_Q(g, j, t, p.A))[interior]))
            track("restated_deviation", s.restated_deviation, (t, None))
            ev = evolution_residual(traj, p, i, jets)
            s.evolution_violation_max, loc = amax(ev.residual, ev.mask & nodes)
            s.argmax["evolution"] = loc
            s.case2_fraction = float(np.mean(ev.case2[nodes]))
            track("evolution", s.evolution_violation_max, (t, loc))
            if p.is_linear and g.is_torus:
                ap = appendix_evolution_residual(traj, i, jets)
                s.appendix_residual_max, loc = amax(np.abs(ap.identity_residual))
                track("appendix_identity", s.appendix_residual_max, (t, loc))
                asserted = ap.chain_asserted & nodes
                if np.any(asserted):
                    m = float(np.min(np.where(asserted, ap.chain_margin, np.inf)))
                    track_min("appendix_chain", m, (t, None))
        if g.has_boundary and p.boundary_admissible:
            b = boundary_flux_check(traj, p, i, jets)
            s.u_nu, s.Q_nu = b.u_nu, b.Q_nu
        slices.append(s)

    verdicts: dict[str, Verdict] = {}
    if not slices:
        warnings.append("no samples with t >= t_min; all verdicts pass vacuously")
    for name, tv in (
        ("Q", tol.Q),
        ("liyau", tol.liyau),
        ("P", tol.P),
        ("restated_deviation", tol.restated),
        ("evolution", tol.evolution),
        ("appendix_identity", tol.evolution),
        ("boundary_u_nu", tol.u_nu),
    ):
        if name in worst:
            verdicts[name] = Verdict(name, worst[name][0], tv, worst[name][1])
    if "appendix_chain" in worst:
        verdicts["appendix_chain"] = Verdict("appendix_chain", worst["appendix_chain"][0], 0.0, worst["appendix_chain"][1], "min")
    if first_certified is not None and t_shift > 0:
        t = float(traj.times[first_certified])
        jet = jet_from_u(g, traj.states[first_certified])
        sharp, loc = amax(2 * (t + t_shift) * jet.lap)
        verdicts["liyau_sharpness"] = Verdict("liyau_sharpness", sharp, 0.98 * g.n, (t + t_shift, loc), "min")
    if g.has_boundary and p.boundary_admissible is False:
        warnings.append("V_ν <= 0 fails on the boundary; boundary checks skipped")
    return HarnackReport(summary, tol, slices, verdicts, warnings)
