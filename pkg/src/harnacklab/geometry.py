"""Flat model manifolds and the differential operators used on them.

Two geometries are supported:

* ``PeriodicTorus`` -- the flat torus T^1 or T^2, differentiated spectrally
  with the discrete Fourier transform.
* ``NeumannInterval`` -- a closed interval with endpoint-inclusive nodes,
  differentiated by second-order central differences with ghost-node
  reflection at the ends.

Both carry the flat metric, so the Ricci curvature is identically zero.
Scalar fields are plain ``numpy`` arrays of shape ``geometry.shape``
(row-major over the axes).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import fft as sfft


class GeometryKind(str, enum.Enum):
    TORUS = "torus"
    INTERVAL = "interval"


class GeometryError(ValueError):
    """Invalid geometry parameters or a field that does not live on the grid."""


@dataclass(frozen=True)
class Geometry:
    kind: GeometryKind
    n: int
    points: tuple[int, ...]
    lengths: tuple[float, ...]

    ricci_lower_bound: float = 0.0

    @property
    def has_boundary(self) -> bool:
        return self.kind is GeometryKind.INTERVAL

    @property
    def is_torus(self) -> bool:
        return self.kind is GeometryKind.TORUS

    @property
    def shape(self) -> tuple[int, ...]:
        return self.points

    @property
    def size(self) -> int:
        return math.prod(self.points)

    @cached_property
    def spacing(self) -> tuple[float, ...]:
        if self.is_torus:
            return tuple(L / N for L, N in zip(self.lengths, self.points))
        return (self.lengths[0] / (self.points[0] - 1),)

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        """1-D node coordinates along each axis."""
        if self.is_torus:
            return tuple(np.arange(N) * h for N, h in zip(self.points, self.spacing))
        return (np.linspace(0.0, self.lengths[0], self.points[0]),)

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        """Node coordinates broadcast to the full grid (``indexing='ij'``)."""
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    @cached_property
    def weights(self) -> np.ndarray:
        """Quadrature weights: uniform cell volume on the torus, trapezoid on the interval."""
        if self.is_torus:
            return np.full(self.shape, math.prod(self.spacing))
        w = np.full(self.shape, self.spacing[0])
        w[0] = w[-1] = 0.5 * self.spacing[0]
        return w

    def integrate(self, phi: np.ndarray) -> float:
        return float(np.sum(self.check(phi) * self.weights))

    def check(self, phi) -> np.ndarray:
        """Return ``phi`` as a float array, raising if it is not a field on this grid."""
        arr = np.asarray(phi, dtype=float)
        if arr.shape != self.shape:
            raise GeometryError(f"field of shape {arr.shape} does not live on grid {self.shape}")
        return arr

    def field(self, fn) -> np.ndarray:
        """Sample ``fn(*coords)`` on the grid."""
        return np.broadcast_to(np.asarray(fn(*self.coords), dtype=float), self.shape).copy()

    # spectral symbols (torus only)

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Angular wavenumbers per axis, shaped for broadcasting against ``fftn`` output."""
        ks = []
        for axis, (N, L) in enumerate(zip(self.points, self.lengths)):
            k = 2.0 * np.pi * np.fft.fftfreq(N, d=L / N)
            shape = [1] * self.n
            shape[axis] = N
            ks.append(k.reshape(shape))
        return tuple(ks)

    @cached_property
    def _ik(self) -> tuple[np.ndarray, ...]:
        # first-derivative symbols with the Nyquist mode zeroed
        out = []
        for k, N in zip(self.wavenumbers, self.points):
            d = 1j * k.copy()
            d.flat[N // 2] = 0.0
            out.append(d)
        return tuple(out)

    @cached_property
    def k_squared(self) -> np.ndarray:
        return sum(k**2 for k in self.wavenumbers) * np.ones(self.shape)

    @cached_property
    def laplacian_eigenvalues(self) -> np.ndarray:
        """Eigenvalues of the discrete Laplacian in its natural basis.

        Fourier modes on the torus; DCT-I cosine modes on the interval, where
        the ghost-reflected second difference is diagonal.
        """
        if self.is_torus:
            return -self.k_squared
        N = self.points[0]
        h = self.spacing[0]
        m = np.arange(N)
        return -(4.0 / h**2) * np.sin(np.pi * m / (2 * (N - 1))) ** 2


def build_torus(n: int, points_per_axis, periods) -> Geometry:
    if n not in (1, 2):
        raise GeometryError(f"unsupported dimension {n}; only n = 1 or 2")
    points = tuple(int(p) for p in points_per_axis)
    lengths = tuple(float(L) for L in periods)
    if len(points) != n or len(lengths) != n:
        raise GeometryError("points_per_axis and periods must both have length n")
    for N in points:
        if N < 8 or N % 2:
            raise GeometryError(f"torus point count {N} must be even and >= 8")
    for L in lengths:
        if not (L > 0 and math.isfinite(L)):
            raise GeometryError(f"torus period {L} must be positive")
    return Geometry(GeometryKind.TORUS, n, points, lengths)


def build_interval(points: int, length: float) -> Geometry:
    points = int(points)
    length = float(length)
    if points < 9:
        raise GeometryError(f"interval needs at least 9 nodes, got {points}")
    if not (length > 0 and math.isfinite(length)):
        raise GeometryError(f"interval length {length} must be positive")
    return Geometry(GeometryKind.INTERVAL, 1, (points,), (length,))


def fourier_upsample(phi: np.ndarray, fine_shape) -> np.ndarray:
    """Evaluate the trigonometric interpolant of periodic samples on a finer grid.

    The Nyquist coefficient is split evenly between +N/2 and -N/2 so the
    interpolant is real and symmetric.
    """
    out = np.asarray(phi, dtype=float)
    for axis, M in enumerate(fine_shape):
        N = out.shape[axis]
        if M == N:
            continue
        coef = np.fft.rfft(out, axis=axis)
        idx = [slice(None)] * out.ndim
        idx[axis] = N // 2
        coef[tuple(idx)] *= 0.5
        out = np.fft.irfft(coef, n=M, axis=axis) * (M / N)
    return out


def refine_torus(g: Geometry, factor: int) -> Geometry:
    return build_torus(g.n, [N * factor for N in g.points], g.lengths)


# ---------------------------------------------------------------------------
# operators


def _spectral(g: Geometry, phi: np.ndarray, symbol) -> np.ndarray:
    return sfft.ifftn(symbol * sfft.fftn(phi)).real


def gradient(g: Geometry, phi, neumann: bool = True) -> tuple[np.ndarray, ...]:
    """Partial derivatives of ``phi`` along each axis.

    On the interval, ``neumann=True`` uses ghost reflection, so the endpoint
    derivative is zero by construction. Pass ``neumann=False`` for fields that
    do not satisfy the Neumann condition; the endpoints then use second-order
    one-sided differences.
    """
    phi = g.check(phi)
    if g.is_torus:
        phi_hat = sfft.fftn(phi)
        return tuple(sfft.ifftn(ik * phi_hat).real for ik in g._ik)
    h = g.spacing[0]
    d = np.empty_like(phi)
    d[1:-1] = (phi[2:] - phi[:-2]) / (2 * h)
    if neumann:
        d[0] = d[-1] = 0.0
    else:
        d[0] = (-3 * phi[0] + 4 * phi[1] - phi[2]) / (2 * h)
        d[-1] = (3 * phi[-1] - 4 * phi[-2] + phi[-3]) / (2 * h)
    return (d,)


def laplacian(g: Geometry, phi, neumann: bool = True) -> np.ndarray:
    phi = g.check(phi)
    if g.is_torus:
        return _spectral(g, phi, -g.k_squared)
    h2 = g.spacing[0] ** 2
    out = np.empty_like(phi)
    out[1:-1] = (phi[2:] - 2 * phi[1:-1] + phi[:-2]) / h2
    if neumann:
        out[0] = 2 * (phi[1] - phi[0]) / h2
        out[-1] = 2 * (phi[-2] - phi[-1]) / h2
    else:
        out[0] = (2 * phi[0] - 5 * phi[1] + 4 * phi[2] - phi[3]) / h2
        out[-1] = (2 * phi[-1] - 5 * phi[-2] + 4 * phi[-3] - phi[-4]) / h2
    return out


def hessian(g: Geometry, phi) -> list[list[np.ndarray]]:
    """Full matrix of second partials (torus only)."""
    return gradient_and_hessian(g, phi)[1]


def gradient_and_hessian(g: Geometry, phi) -> tuple[tuple[np.ndarray, ...], list[list[np.ndarray]]]:
    """Gradient and Hessian from a single forward transform (torus only)."""
    phi = g.check(phi)
    if not g.is_torus:
        raise GeometryError("hessian is only available on the periodic torus")
    phi_hat = sfft.fftn(phi)
    grad = tuple(sfft.ifftn(ik * phi_hat).real for ik in g._ik)
    H = [[None] * g.n for _ in range(g.n)]
    for i in range(g.n):
        for j in range(i, g.n):
            symbol = -(g.wavenumbers[i] ** 2) if i == j else g._ik[i] * g._ik[j]
            H[i][j] = H[j][i] = sfft.ifftn(symbol * phi_hat).real
    return grad, H


def gradient_and_laplacian(g: Geometry, phi, neumann: bool = True) -> tuple[tuple[np.ndarray, ...], np.ndarray]:
    if not g.is_torus:
        return gradient(g, phi, neumann), laplacian(g, phi, neumann)
    phi_hat = sfft.fftn(g.check(phi))
    grad = tuple(sfft.ifftn(ik * phi_hat).real for ik in g._ik)
    return grad, sfft.ifftn(-g.k_squared * phi_hat).real


def gradient_sq(g: Geometry, phi, neumann: bool = True) -> np.ndarray:
    return sum(d * d for d in gradient(g, phi, neumann))


def hessian_sq(g: Geometry, phi) -> np.ndarray:
    H = hessian(g, phi)
    return sum(H[i][j] ** 2 for i in range(g.n) for j in range(g.n))


def inner_grad(g: Geometry, phi, psi, neumann: bool = True) -> np.ndarray:
    return sum(a * b for a, b in zip(gradient(g, phi, neumann), gradient(g, psi, neumann)))
