"""Reference solutions used to validate the main solver.

Closed forms:

* ``homogeneous_solution`` -- spatially constant solutions, where the flow
  reduces to the linear ODE ``q' = a q + V`` for ``q = log u``.
* ``torus_heat_kernel`` -- the periodized Euclidean heat kernel.
* ``gaussian_selfsimilar`` -- the Gaussian ansatz ``f = p(t)|x|^2 + q(t)``
  for ``f = -log u`` with ``V = 0``.

``fine_grid_reference`` is a brute-force solver that shares nothing with
:mod:`harnacklab.solver`: explicit RK4 in time on a refined finite-difference
grid, with the reaction term integrated as is rather than split off.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .geometry import Geometry, build_interval, build_torus, fourier_upsample

_TAIL = 1e-14


class OracleBudgetError(RuntimeError):
    """The fine-grid reference would need more RK4 steps than allowed."""


def _phi1(z):
    """``expm1(z) / z`` with the removable singularity at 0 filled in."""
    z = np.asarray(z, dtype=float)
    out = np.ones_like(z)
    nz = z != 0
    out[nz] = np.expm1(z[nz]) / z[nz]
    return out if out.ndim else float(out)


def homogeneous_log(q0, a: float, V_const, t: float):
    """``q(t)`` solving ``q' = a q + V``, ``q(0) = q0``."""
    if a > 0:
        raise ValueError("a must satisfy a <= 0")
    return q0 * math.exp(a * t) + V_const * t * _phi1(a * t)


def homogeneous_solution(q0: float, a: float, V_const: float, t: float) -> float:
    """Spatially constant solution ``u(t) = exp(q(t))`` with ``u(0) = exp(q0)``.

    For ``t = inf`` and ``a < 0`` the limit ``exp(-V/a)`` is returned.
    """
    if math.isinf(t):
        if a < 0:
            return math.exp(-V_const / a)
        if V_const == 0:
            return math.exp(q0)
        raise ValueError("no finite limit for a = 0 and V != 0")
    return math.exp(homogeneous_log(q0, a, V_const, t))


def _image_radius(L: float, t: float) -> int:
    # for x in [-L/2, L/2] the first omitted image sits at distance >= (K + 1/2) L;
    # the extra margin covers the (geometrically decaying) rest of the tail
    return math.ceil(math.sqrt(4 * t * (math.log(2 / _TAIL) + 5)) / L - 0.5) + 1


def heat_kernel_1d(x, L: float, t: float) -> np.ndarray:
    """Heat kernel on the circle of circumference ``L``, centred at 0."""
    if t <= 0:
        raise ValueError("heat kernel needs t > 0")
    x = np.asarray(x, dtype=float)
    x = (x + 0.5 * L) % L - 0.5 * L
    K = _image_radius(L, t)
    k = np.arange(-K, K + 1).reshape((-1,) + (1,) * x.ndim)
    return np.sum(np.exp(-((x - k * L) ** 2) / (4 * t)), axis=0) / math.sqrt(4 * math.pi * t)


def torus_heat_kernel(g: Geometry, x, t: float, center=None) -> np.ndarray:
    """Evaluate the torus heat kernel at point(s) ``x`` (one coordinate array per axis).

    The kernel on a flat torus factors into per-axis circle kernels, each an
    image sum truncated once the Gaussian tail drops below 1e-14.
    """
    if not g.is_torus:
        raise ValueError("torus_heat_kernel needs a torus geometry")
    center = center or (0.0,) * g.n
    out = 1.0
    for xi, ci, L in zip(x, center, g.lengths):
        out = out * heat_kernel_1d(np.asarray(xi) - ci, L, t)
    return out


def heat_kernel_field(g: Geometry, t: float, center=None) -> np.ndarray:
    return np.broadcast_to(torus_heat_kernel(g, g.coords, t, center), g.shape).copy()


def gaussian_selfsimilar(p0: float, a: float, t: float, n: int = 1, q0: float = 0.0) -> tuple[float, float]:
    """Coefficients of ``f = p(t)|x|^2 + q(t)`` solving the log-transformed flow with V = 0.

    ``p`` satisfies the Bernoulli equation ``p' = a p - 4 p^2`` and ``q``
    satisfies ``q' = a q + 2 n p``. Both are solved in closed form.
    """
    if p0 <= 0 or a > 0:
        raise ValueError("need p0 > 0 and a <= 0")
    if a == 0:
        r = 1.0 / p0 + 4.0 * t
        q = q0 + 0.5 * n * math.log(p0 * r)
    else:
        c = 1.0 / p0 - 4.0 / a
        r = 4.0 / a + c * math.exp(-a * t)
        q = q0 * math.exp(a * t) - 2.0 * n * math.exp(a * t) / (a * c) * math.log(p0 * r)
    assert r > 0
    return 1.0 / r, q


# ---------------------------------------------------------------------------
# fine-grid brute-force reference


def _fd_laplacian_torus(phi: np.ndarray, h: tuple[float, ...]) -> np.ndarray:
    # sixth-order central differences, periodic
    c = (1 / 90, -3 / 20, 3 / 2, -49 / 18)
    out = np.zeros_like(phi)
    for axis, hi in enumerate(h):
        acc = c[3] * phi
        for s, cs in zip((3, 2, 1), c[:3]):
            acc = acc + cs * (np.roll(phi, s, axis) + np.roll(phi, -s, axis))
        out += acc / hi**2
    return out


def _fd_laplacian_interval(phi: np.ndarray, h: float) -> np.ndarray:
    out = np.empty_like(phi)
    out[1:-1] = phi[2:] - 2 * phi[1:-1] + phi[:-2]
    out[0] = 2 * (phi[1] - phi[0])
    out[-1] = 2 * (phi[-2] - phi[-1])
    return out / h**2


def _refine_geometry(g: Geometry, refine: int) -> Geometry:
    if g.is_torus:
        return build_torus(g.n, [N * refine for N in g.points], g.lengths)
    return build_interval((g.points[0] - 1) * refine + 1, g.lengths[0])


def _restrict(g: Geometry, phi: np.ndarray, refine: int) -> np.ndarray:
    return phi[tuple(slice(None, None, refine) for _ in range(g.n))]


def fine_grid_reference(p, refine: int = 4, max_steps: int = 2_000_000, cfl: float = 0.5):
    """Solve ``p`` on a ``refine``-times finer finite-difference grid with explicit RK4.

    Initial data and potential are taken from ``p.u0_fn`` / ``p.V_fn`` when
    available, otherwise interpolated (Fourier on the torus). The result is
    restricted to the coarse nodes and to the sample times the main solver
    would record.
    """
    from .solver import Trajectory, SolverStats, sample_schedule

    if refine < 2:
        raise ValueError("refine must be >= 2")
    g = p.geometry
    gf = _refine_geometry(g, refine)

    if p.u0_fn is not None:
        u = gf.field(p.u0_fn)
    elif g.is_torus:
        u = fourier_upsample(p.u0, gf.shape)
    else:
        raise ValueError("interval reference needs the analytic initial datum u0_fn")
    if p.V_fn is not None:
        V = gf.field(p.V_fn)
    elif g.is_torus:
        V = fourier_upsample(p.V, gf.shape)
    else:
        raise ValueError("interval reference needs the analytic potential V_fn")

    if g.is_torus:
        h = gf.spacing
        lap = lambda w: _fd_laplacian_torus(w, h)  # noqa: E731
        lam_max = sum((272 / 45) / hi**2 for hi in h)
    else:
        h0 = gf.spacing[0]
        lap = lambda w: _fd_laplacian_interval(w, h0)  # noqa: E731
        lam_max = 4 / h0**2
    a = p.a

    def rhs(w):
        return lap(w) + a * w * np.log(w) + V * w

    # RK4 stability interval on the negative real axis is about 2.78
    dt_max = cfl * 2.78 / (lam_max + abs(a) * 10 + float(np.max(np.abs(V))))

    times, record_steps = sample_schedule(p)
    t_targets = times
    n_total = 0
    samples = [_restrict(g, u, refine).copy()]
    t = 0.0
    for target in t_targets[1:]:
        span = target - t
        m = max(1, math.ceil(span / dt_max))
        n_total += m
        if n_total > max_steps:
            raise OracleBudgetError(f"reference needs more than {max_steps} RK4 steps")
        k = span / m
        for _ in range(m):
            k1 = rhs(u)
            k2 = rhs(u + 0.5 * k * k1)
            k3 = rhs(u + 0.5 * k * k2)
            k4 = rhs(u + k * k3)
            u = u + (k / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(u > 0):
            raise ArithmeticError(f"reference lost positivity near t={target}")
        t = target
        samples.append(_restrict(g, u, refine).copy())

    stats = SolverStats(steps=n_total, rejected=0, min_u=float(min(s.min() for s in samples)))
    return Trajectory(problem=p, times=np.asarray(t_targets), states=np.stack(samples), stats=stats)


def image_kernel_convolution(g: Geometry, t1: float, t2: float) -> np.ndarray:
    """Direct grid convolution of two heat kernels, for the semigroup check."""
    k1 = heat_kernel_field(g, t1)
    k2 = heat_kernel_field(g, t2)
    out = np.zeros(g.shape)
    w = float(g.weights.flat[0])
    for idx in itertools.product(*(range(N) for N in g.shape)):
        out[idx] = np.sum(k1 * np.roll(k2, idx, axis=tuple(range(g.n)))) * w
    return out
