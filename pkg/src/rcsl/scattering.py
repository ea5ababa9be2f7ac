"""Two-particle interaction through a finite-range potential on a causal region.

Two particles at equal-time events x1 and x2 interact only through the
space-time points z that are space-like to both events and time-like to
their midpoint. In one spatial dimension and at t >= 0 that region is the
diamond with vertices

    (mid, 0), (mid - D/4, D/4), (mid, D/2), (mid + D/4, D/4)   in (z, t),

with D = |x2 - x1|, of area D^2 / 8. The two-particle amplitude picks up a
phase W(|x1 - x2|^2) times the measure of the region swept so far, so the
position density never changes while the momentum distribution spreads by
momentum exchange that conserves the total momentum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from ._rules import gauss_legendre, spawn_generators
from .errors import GridResolutionError
from .quadrature import QuadResult

__all__ = [
    "RegionQuery",
    "PotentialSpec",
    "TwoParticleGrid",
    "MomentumDistribution",
    "region_indicator",
    "diamond_vertices",
    "shoelace_area",
    "region_measure_1d",
    "region_volume",
    "volume_scaling_fit",
    "phase_evolve",
    "two_packet_state",
    "outgoing_distribution",
    "outgoing_mass_sq",
    "minimum_range",
    "mass_constraint",
]

HBAR_C_EV_CM = 6.582e-16 * 3e10


@dataclass(frozen=True)
class RegionQuery:
    """Two equal-time events and the upper limit ``s`` of the time integral.

    Events are time-first vectors of length ``1 + spatial_dim``.
    """

    x1: np.ndarray
    x2: np.ndarray
    s: float = math.inf
    spatial_dim: int = 1

    def __post_init__(self):
        a = np.asarray(self.x1, dtype=float).reshape(-1)
        b = np.asarray(self.x2, dtype=float).reshape(-1)
        if self.spatial_dim not in (1, 3):
            raise ValueError("spatial_dim must be 1 or 3")
        if a.size != 1 + self.spatial_dim or b.size != a.size:
            raise ValueError("events need 1 + spatial_dim components")
        if not self.s >= 0:
            raise ValueError("s must be non-negative")
        if a[0] != b[0]:
            raise ValueError("events must be at equal times")
        object.__setattr__(self, "x1", a)
        object.__setattr__(self, "x2", b)

    @property
    def separation(self) -> float:
        return float(np.linalg.norm(self.x2[1:] - self.x1[1:]))

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.x1 + self.x2)

    @property
    def t_top(self) -> float:
        """Time of the top vertex, measured from the events."""
        return 0.5 * self.separation


def _sq(v: np.ndarray) -> np.ndarray:
    return np.sum(v[..., 1:] ** 2, axis=-1) - v[..., 0] ** 2


def region_indicator(z, q: RegionQuery):
    """1 inside the interaction region, 0 outside or on its boundary.

    z - x1 and z - x2 must be space-like and z - midpoint time-like, all
    strictly.
    """
    z = np.asarray(z, dtype=float)
    inside = (_sq(z - q.x1) > 0) & (_sq(z - q.x2) > 0) & (_sq(z - q.midpoint) < 0)
    out = inside.astype(int)
    return out if out.ndim else int(out)


def diamond_vertices(delta: float) -> np.ndarray:
    """Vertices (z, t) of the 1+1D region for events at 0 and ``delta``."""
    d = float(delta)
    return np.array([[d / 2, 0.0], [3 * d / 4, d / 4], [d / 2, d / 2], [d / 4, d / 4]])


def shoelace_area(vertices: np.ndarray) -> float:
    """Area of a simple polygon from its ordered vertices."""
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def region_measure_1d(delta, s):
    """Area of the 1+1D region below time ``s``, in closed form."""
    d = np.abs(np.asarray(delta, dtype=float))
    s = np.minimum(np.asarray(s, dtype=float), d / 2.0)
    s = np.maximum(s, 0.0)
    early = s**2
    late = d**2 / 16.0 + d * (s - d / 4.0) - (s**2 - d**2 / 16.0)
    out = np.where(s <= d / 4.0, early, late)
    return out if out.ndim else float(out)


def region_volume(q: RegionQuery, n_samples: int = 400_000, seed: int = 0) -> QuadResult:
    """Monte Carlo measure of the region for 0 <= t <= min(s, t_top).

    Points are drawn uniformly in the box that bounds the midpoint's future
    light cone up to the top time, so the estimator is unbiased. In 1+1D the
    closed-form area is attached as ``meta["exact"]``.
    """
    delta = q.separation
    tmax = min(q.s, q.t_top)
    meta = {"t_max": tmax}
    if q.spatial_dim == 1:
        meta["exact"] = float(region_measure_1d(delta, q.s))
    if delta == 0 or tmax == 0:
        return QuadResult(0.0, 0.0, 1, "monte-carlo", meta)
    rng = spawn_generators(seed, 1, key=(21, q.spatial_dim))[0]
    dim = q.spatial_dim
    t = q.x1[0] + tmax * rng.random(n_samples)
    z = q.midpoint[1:] + tmax * (2.0 * rng.random((n_samples, dim)) - 1.0)
    hits = region_indicator(np.column_stack([t, z]), q).astype(float)
    vol = tmax * (2.0 * tmax) ** dim
    p = math.fsum(hits) / n_samples
    err = vol * math.sqrt(max(p * (1.0 - p), 0.0) / max(n_samples - 1, 1))
    return QuadResult(vol * p, err, n_samples, "monte-carlo", meta)


@dataclass(frozen=True)
class ScalingFit:
    """Power-law fit volume = C * delta^slope."""

    slope: float
    slope_error: float
    prefactor: float
    deltas: tuple
    volumes: tuple
    errors: tuple


def volume_scaling_fit(deltas: Sequence[float] = (1.0, 2.0, 4.0, 8.0), spatial_dim: int = 3,
                       n_samples: int = 400_000, seed: int = 0) -> ScalingFit:
    """Fit the region volume against separation on a log-log scale.

    Each separation uses its own random stream, so the fit sees independent
    noise.
    """
    vols, errs = [], []
    for i, d in enumerate(deltas):
        zero = np.zeros(1 + spatial_dim)
        x2 = zero.copy()
        x2[1] = d
        res = region_volume(RegionQuery(zero, x2, math.inf, spatial_dim), n_samples, seed=seed + 7919 * (i + 1))
        vols.append(res.value)
        errs.append(res.error_estimate)
    x = np.log(np.asarray(deltas, dtype=float))
    y = np.log(np.asarray(vols))
    sy = np.asarray(errs) / np.asarray(vols)
    A = np.column_stack([np.ones_like(x), x])
    Wt = np.diag(1.0 / sy**2)
    cov = np.linalg.inv(A.T @ Wt @ A)
    beta = cov @ A.T @ Wt @ y
    return ScalingFit(float(beta[1]), float(math.sqrt(cov[1, 1])), float(math.exp(beta[0])),
                      tuple(float(d) for d in deltas), tuple(vols), tuple(errs))


# ----------------------------------------------------------- potential

@dataclass(frozen=True)
class PotentialSpec:
    """Finite-range potential W(r^2) = W0 (1 - r^2 / b^2)^2 for r < b."""

    W0: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        if not self.b > 0:
            raise ValueError("range b must be positive")
        if not math.isfinite(self.W0):
            raise ValueError("W0 must be finite")

    def W(self, r_sq):
        r2 = np.asarray(r_sq, dtype=float)
        out = np.where(r2 < self.b**2, self.W0 * (1.0 - r2 / self.b**2) ** 2, 0.0)
        return out if out.ndim else float(out)

    @property
    def s_turnoff(self) -> float:
        """Time beyond which the accumulated phase no longer changes."""
        return 0.5 * self.b

    def phase(self, xi, s=math.inf):
        """Accumulated 1+1D phase W(xi^2) * A(|xi|, s)."""
        xi = np.asarray(xi, dtype=float)
        return self.W(xi**2) * region_measure_1d(np.abs(xi), s)

    def fourier_g(self, k) -> np.ndarray:
        """Regular part of the 1D transform of the turned-off phase factor.

        g(k) = (1 / 2 pi) int dxi exp(-i k xi) [exp(-i phase(xi)) - 1]; the
        omitted remainder is the delta function at k = 0. Depends on k only
        through k^2 because the phase is even in xi.
        """
        k = np.asarray(k, dtype=float)
        vals = np.array([_fourier_g_cached(self.W0, self.b, float(abs(kk))) for kk in k.ravel()])
        return vals.reshape(k.shape)


@lru_cache(maxsize=4096)
def _fourier_g_cached(W0: float, b: float, k: float) -> complex:
    pot = PotentialSpec(W0, b)
    x, w = gauss_legendre(200)
    xi = b * x
    integrand = np.exp(-1j * pot.phase(xi)) - 1.0
    # even integrand: 2 int_0^b cos(k xi) (...) dxi
    return complex(2.0 * b * np.sum(w * np.cos(k * xi) * integrand) / (2.0 * math.pi))


# ----------------------------------------------------------- grids

@dataclass(frozen=True)
class TwoParticleGrid:
    """Square grid for two particles on a line."""

    n: int = 256
    length: float = 80.0

    def __post_init__(self):
        if self.n < 8 or self.n % 2:
            raise ValueError("n must be an even integer >= 8")
        if not self.length > 0:
            raise ValueError("length must be positive")

    @property
    def dx(self) -> float:
        return self.length / self.n

    @property
    def x(self) -> np.ndarray:
        return (np.arange(self.n) - self.n // 2) * self.dx

    @property
    def dq(self) -> float:
        return 2.0 * math.pi / self.length

    @property
    def q(self) -> np.ndarray:
        return (np.arange(self.n) - self.n // 2) * self.dq

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.x, indexing="ij")


def phase_evolve(chi0: np.ndarray, grid: TwoParticleGrid, pot: PotentialSpec, s: float) -> np.ndarray:
    """Multiply a two-particle amplitude by the phase accumulated up to ``s``."""
    if s < 0:
        raise ValueError("s must be non-negative")
    x1, x2 = grid.mesh()
    phi = pot.phase(x1 - x2, s)
    return np.asarray(chi0, dtype=complex) * np.exp(-1j * phi)


def _packet(x: np.ndarray, p: float, sigma: float) -> np.ndarray:
    return (2.0 * math.pi * sigma**2) ** -0.25 * np.exp(1j * p * x - x**2 / (4.0 * sigma**2))


def two_packet_state(grid: TwoParticleGrid, p1: float, p2: float, sigma: float,
                     centers: tuple[float, float] = (0.0, 0.0), symmetrize: bool = True) -> np.ndarray:
    """Product of two Gaussian packets, optionally symmetrized, unit norm."""
    x = grid.x
    a = _packet(x - centers[0], p1, sigma)
    b = _packet(x - centers[1], p2, sigma)
    chi = np.outer(a, b)
    if symmetrize:
        chi = chi + np.outer(b, a)
    norm = math.sqrt(float(np.sum(np.abs(chi) ** 2)) * grid.dx**2)
    return chi / norm


@dataclass
class MomentumDistribution:
    """Joint momentum density on the grid and its marginals.

    Attributes
    ----------
    q : ndarray
        Momentum grid, shared by both particles.
    density : ndarray, shape (n, n)
        |chi(q1, q2)|^2, normalized so ``density.sum() * dq**2 == 1``.
    total : ndarray
        Probability of each total momentum q1 + q2 on the grid ``P``.
    P : ndarray
    transfer : ndarray
        Probability of each q1 - p1 on the grid ``k``.
    k : ndarray
    leakage : float
        Probability within 10% of the grid edge in position or momentum.
    """

    q: np.ndarray
    dq: float
    density: np.ndarray
    P: np.ndarray
    total: np.ndarray
    k: np.ndarray
    transfer: np.ndarray
    leakage: float
    norm: float

    @property
    def total_mean(self) -> float:
        return float(np.sum(self.P * self.total))

    @property
    def total_std(self) -> float:
        m = self.total_mean
        return float(math.sqrt(np.sum((self.P - m) ** 2 * self.total)))


def _edge_mass(prob: np.ndarray) -> float:
    n = prob.shape[0]
    band = max(1, n // 10)
    inner = prob[band:n - band, band:n - band].sum()
    return float(prob.sum() - inner)


def outgoing_distribution(grid: TwoParticleGrid, p1: float, p2: float, sigma: float,
                          pot: PotentialSpec, s: float | None = None, *,
                          symmetrize: bool = True, leakage_tol: float = 1e-6,
                          centers: tuple[float, float] = (0.0, 0.0)) -> MomentumDistribution:
    """Momentum distribution after the interaction has switched off.

    The initial state is a pair of equal-time Gaussian packets of width
    ``sigma``; the phase is applied up to ``s`` (default: the switch-off time
    b / 2) and the result is Fourier transformed on the grid.

    Raises
    ------
    GridResolutionError
        When more than ``leakage_tol`` of the probability sits near the edge
        of the position or momentum grid.
    """
    chi0 = two_packet_state(grid, p1, p2, sigma, centers, symmetrize)
    chi = phase_evolve(chi0, grid, pot, pot.s_turnoff if s is None else s)
    pos = np.abs(chi) ** 2 * grid.dx**2
    amp = np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(chi))) * grid.dx**2 / (2.0 * math.pi)
    dens = np.abs(amp) ** 2
    prob = dens * grid.dq**2
    leak = max(_edge_mass(pos), _edge_mass(prob))
    if leak > leakage_tol:
        raise GridResolutionError(f"probability {leak:.3g} near the grid edge exceeds {leakage_tol:g}")
    n = grid.n
    i = np.arange(n)
    ii, jj = np.meshgrid(i, i, indexing="ij")
    q = grid.q
    total = np.bincount((ii + jj).ravel(), weights=prob.ravel(), minlength=2 * n - 1)
    P = 2.0 * q[0] + np.arange(2 * n - 1) * grid.dq
    line = prob.sum(axis=1)
    return MomentumDistribution(q, grid.dq, dens, P, total, q - p1, line, leak, float(prob.sum()))


# ----------------------------------------------------------- masses

def outgoing_mass_sq(p, k, sign: int, m: float) -> float:
    """Squared mass omega(p)^2 - (p + sign k)^2 = m^2 - 2 sign p.k - k^2.

    A particle with on-shell energy for momentum ``p`` that ends with
    momentum p + sign * k carries this squared mass.
    """
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    p = np.atleast_1d(np.asarray(p, dtype=float))
    k = np.atleast_1d(np.asarray(k, dtype=float))
    return float(m**2 - 2.0 * sign * np.dot(p, k) - np.dot(k, k))


def minimum_range(m_ev: float = 940e6, budget_ev: float = 100.0, hbar_c: float = HBAR_C_EV_CM) -> float:
    """Smallest potential range b (cm) with (hbar c)^2 / (2 m c^2 b^2) <= budget."""
    return hbar_c / math.sqrt(2.0 * m_ev * budget_ev)


def mass_constraint(b_cm: float, kinetic_ev: float, m_ev: float = 940e6, budget_ev: float = 100.0,
                    hbar_c: float = HBAR_C_EV_CM) -> dict:
    """Check whether a scattering keeps the induced mass spread within budget.

    Both the initial kinetic energy and the localization energy
    (hbar c)^2 / (2 m c^2 b^2) must stay below ``budget_ev``.
    """
    localization = hbar_c**2 / (2.0 * m_ev * b_cm**2)
    return {
        "localization_ev": localization,
        "kinetic_ev": kinetic_ev,
        "b_min_cm": minimum_range(m_ev, budget_ev, hbar_c),
        "ok": bool(localization <= budget_ev and kinetic_ev <= budget_ev),
        "exceeds": bool(localization > budget_ev or kinetic_ev > budget_ev),
    }
