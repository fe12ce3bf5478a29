"""Time integration of ``u_t = Δu + a u log u + V u``.

On the torus each step is a Strang splitting: half a reaction step, a full
diffusion step, half a reaction step. Both substeps are exact flows:

* reaction: ``w = log u`` obeys the linear ODE ``w' = a w + V`` pointwise;
* diffusion: the discrete heat semigroup, diagonal in Fourier modes.

Neither substep can produce a non-positive value, and the composition is
second order in ``dt``.

On the Neumann interval the pointwise reaction flow does not preserve the
boundary condition (it tilts ``u`` at the walls whenever ``V_ν != 0``), and
splitting leaves a boundary layer of width ~sqrt(dt) that spoils every
derivative-based check near the walls. There the step is the second-order
exponential Runge-Kutta scheme of Cox and Matthews instead: diffusion is
still exact (DCT-I diagonalizes the ghost-reflected Laplacian), the reaction
enters explicitly as a source. Positivity is then checked, not guaranteed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy import fft as sfft

from .geometry import Geometry, gradient, laplacian

log = logging.getLogger(__name__)

# guard on max |log u_next - log u| for a single step
MAX_LOG_CHANGE = 1.0
MAX_HALVINGS = 12
# relative slack when comparing a declared A with the certified one
A_RTOL = 1e-9


class SolverError(RuntimeError):
    def __init__(self, message: str, t: float):
        super().__init__(f"{message} (t={t:.6g})")
        self.t = t


class PositivityLoss(SolverError):
    pass


class StepRejected(SolverError):
    pass


class ProblemError(ValueError):
    pass


def certify_A(g: Geometry, V) -> float:
    """Smallest admissible constant ``A >= 0`` with ``-ΔV <= A`` on the grid.

    On the interval ``V`` need not satisfy the Neumann condition, so the
    endpoint Laplacian uses one-sided differences rather than ghost reflection.
    """
    lap = laplacian(g, V, neumann=False)
    return max(0.0, float(np.max(-lap)))


def normal_derivative(g: Geometry, phi) -> tuple[float, float]:
    """Outward normal derivative at the two interval endpoints (one-sided, second order)."""
    if g.is_torus:
        raise ValueError("the torus has no boundary")
    (d,) = gradient(g, phi, neumann=False)
    return -float(d[0]), float(d[-1])


@dataclass(frozen=True, eq=False)
class Problem:
    geometry: Geometry
    a: float
    V: np.ndarray
    A: float
    u0: np.ndarray
    t_end: float
    dt: float
    record_every: int = 1
    # analytic forms, used by the fine-grid reference when present
    V_fn: Optional[Callable] = None
    u0_fn: Optional[Callable] = None

    def __post_init__(self):
        g = self.geometry
        object.__setattr__(self, "V", g.check(self.V))
        object.__setattr__(self, "u0", g.check(self.u0))
        errors = problem_violations(self)
        if errors:
            raise ProblemError("; ".join(errors))

    @property
    def is_linear(self) -> bool:
        return self.a == 0 and not np.any(self.V)

    @property
    def boundary_admissible(self) -> Optional[bool]:
        """Whether ``V_ν <= 0`` at both interval endpoints (None on the torus)."""
        if not self.geometry.has_boundary:
            return None
        return all(v <= 1e-12 for v in normal_derivative(self.geometry, self.V))


def problem_violations(p: Problem) -> list[str]:
    out = []
    if not p.a <= 0:
        out.append(f"constant a must satisfy a <= 0 (got a={p.a})")
    if not np.all(np.isfinite(p.V)):
        out.append("V has non-finite values")
    if not np.all(np.isfinite(p.u0)) or not np.min(p.u0) > 0:
        out.append("initial datum u0 must be strictly positive and finite")
    if not p.A >= 0:
        out.append(f"A must be >= 0 (got {p.A})")
    elif np.all(np.isfinite(p.V)):
        A_min = certify_A(p.geometry, p.V)
        if p.A < A_min - A_RTOL * max(1.0, A_min):
            out.append(f"declared A={p.A} is below the certified bound -ΔV <= {A_min:.12g}")
    if not p.t_end >= 0:
        out.append("t_end must be >= 0")
    if not p.dt > 0:
        out.append("dt must be > 0")
    if int(p.record_every) != p.record_every or p.record_every < 1:
        out.append("record_every must be a positive integer")
    return out


@dataclass
class SolverStats:
    steps: int = 0
    rejected: int = 0
    min_u: float = math.inf


@dataclass
class Trajectory:
    problem: Problem
    times: np.ndarray
    states: np.ndarray  # shape (n_samples, *geometry.shape)
    stats: SolverStats = field(default_factory=SolverStats)

    def __len__(self):
        return len(self.times)

    @property
    def samples(self):
        return list(zip(self.times, self.states))


# ---------------------------------------------------------------------------
# substeps


def reaction_flow(w: np.ndarray, tau: float, a: float, V) -> np.ndarray:
    """Exact flow of ``w' = a w + V`` over time ``tau``."""
    z = a * tau
    phi1 = math.expm1(z) / z if z != 0 else 1.0
    return w * math.exp(z) + V * (tau * phi1)


def diffusion_flow(g: Geometry, u: np.ndarray, tau: float) -> np.ndarray:
    """Exact discrete heat semigroup ``exp(tau Δ_h) u``."""
    decay = np.exp(tau * g.laplacian_eigenvalues)
    if g.is_torus:
        return sfft.ifftn(decay * sfft.fftn(u)).real
    return sfft.idct(decay * sfft.dct(u, type=1), type=1)


def reaction(u: np.ndarray, a: float, V) -> np.ndarray:
    return a * u * np.log(u) + V * u


@lru_cache(maxsize=32)
def _etd_coefficients(g: Geometry, dt: float):
    z = dt * g.laplacian_eigenvalues
    small = np.abs(z) < 1e-2
    zs = np.where(small, 1.0, z)
    phi1 = np.where(small, 1 + z / 2 + z**2 / 6 + z**3 / 24 + z**4 / 120, np.expm1(zs) / zs)
    phi2 = np.where(small, 0.5 + z / 6 + z**2 / 24 + z**3 / 120 + z**4 / 720, (np.expm1(zs) - zs) / zs**2)
    return np.exp(z), dt * phi1, dt * phi2


def etd2_step(g: Geometry, u: np.ndarray, dt: float, a: float, V) -> np.ndarray:
    """One ETD-RK2 step on the interval, in DCT-I coefficients."""
    E, c1, c2 = _etd_coefficients(g, dt)
    dct = lambda w: sfft.dct(w, type=1)  # noqa: E731
    N0 = dct(reaction(u, a, V))
    base = E * dct(u) + c1 * N0
    mid = sfft.idct(base, type=1)
    return sfft.idct(base + c2 * (dct(reaction(mid, a, V)) - N0), type=1)


def strang_step(g: Geometry, u: np.ndarray, dt: float, a: float, V) -> np.ndarray:
    v = np.exp(reaction_flow(np.log(u), 0.5 * dt, a, V))
    v = diffusion_flow(g, v, dt)
    return np.exp(reaction_flow(np.log(v), 0.5 * dt, a, V))


def step(u: np.ndarray, t: float, dt: float, p: Problem) -> np.ndarray:
    """Advance ``u`` from ``t`` to ``t + dt``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    g = p.geometry
    # a non-positive intermediate turns into NaN through the log and is caught below
    with np.errstate(invalid="ignore", divide="ignore"):
        v = strang_step(g, u, dt, p.a, p.V) if g.is_torus else etd2_step(g, u, dt, p.a, p.V)
    if not np.all(v > 0) or not np.all(np.isfinite(v)):
        raise PositivityLoss("step produced a non-positive or non-finite value", t + dt)
    w = np.log(u)
    w_next = np.log(v)
    change = float(np.max(np.abs(w_next - w)))
    if change > MAX_LOG_CHANGE:
        raise StepRejected(f"log-change {change:.3g} exceeds guard", t)
    return v


def sample_schedule(p: Problem) -> tuple[np.ndarray, list[int]]:
    """Sample times and the step indices they correspond to.

    The horizon is split into ``ceil(t_end / dt)`` equal steps; every
    ``record_every``-th state is stored, and the final state always is.
    """
    if p.t_end == 0:
        return np.array([0.0]), [0]
    n = max(1, math.ceil(p.t_end / p.dt - 1e-9))
    idx = list(range(0, n + 1, p.record_every))
    if idx[-1] != n:
        idx.append(n)
    h = p.t_end / n
    return np.array([i * h for i in idx]), idx


def solve(p: Problem) -> Trajectory:
    times, idx = sample_schedule(p)
    stats = SolverStats(min_u=float(p.u0.min()))
    states = [p.u0.copy()]
    if len(times) == 1:
        return Trajectory(p, times, np.stack(states), stats)
    n = idx[-1]
    h = p.t_end / n
    keep = set(idx)
    u = p.u0.copy()
    for i in range(1, n + 1):
        u = _advance(u, (i - 1) * h, h, p, stats, 0)
        stats.steps += 1
        stats.min_u = min(stats.min_u, float(u.min()))
        if i in keep:
            states.append(u.copy())
    return Trajectory(p, times, np.stack(states), stats)


def _advance(u, t, h, p, stats, depth):
    try:
        return step(u, t, h, p)
    except StepRejected:
        if depth >= MAX_HALVINGS:
            raise
        stats.rejected += 1
        log.debug("step at t=%.6g rejected, halving to %.3g", t, h / 2)
        u = _advance(u, t, h / 2, p, stats, depth + 1)
        return _advance(u, t + h / 2, h / 2, p, stats, depth + 1)
