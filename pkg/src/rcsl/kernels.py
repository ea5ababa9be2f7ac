"""Light-cone smearing kernel and the number-density eigenvalues built on it.

The kernel is

    f(x^2) = (x^2 / l^2) exp(-x^2 / l^2)   for x^2 > 0, else 0,

with the signed squared interval x^2 = |x|^2 - t^2, so f lives only at
space-like separation and vanishes smoothly (quadratically) on the cone.
Arrays of space-time points are laid out time first: ``(t, x)`` in 1+1D and
``(t, x, y, z)`` in 3+1D. Natural units (c = 1) are used throughout.

Besides pointwise evaluation this module provides exact one-dimensional
reductions of the kernel's spatial overlap integrals, which are the building
blocks of the decoherence calculations.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import lambertw

from ._rules import batched_panels, gauss_legendre
from .errors import ConvergenceError

__all__ = [
    "SmearingKernel",
    "EventConfig",
    "ClumpSpec",
    "interval_sq",
    "smear_f",
    "smear_f_prime",
    "smear_f_timederiv_sq",
    "smear_f_grad_sq",
    "kernel_cutoff_sq",
    "kernel_antiderivative",
    "ntilde_eigenvalue",
    "clump_profile",
    "clump_lattice",
    "mean_time",
    "shell_overlap",
    "shell_norm",
]


@dataclass(frozen=True)
class SmearingKernel:
    """Scale and dimension of the smearing kernel.

    Parameters
    ----------
    ell : float
        Kernel scale, in model length units.
    spatial_dim : int
        1 (reduced test mode) or 3 (physical case).
    """

    ell: float = 1.0
    spatial_dim: int = 3

    def __post_init__(self):
        if not (np.isfinite(self.ell) and self.ell > 0):
            raise ValueError(f"ell must be positive and finite, got {self.ell}")
        if self.spatial_dim not in (1, 3):
            raise ValueError(f"spatial_dim must be 1 or 3, got {self.spatial_dim}")


@dataclass(frozen=True)
class EventConfig:
    """A set of particle events, one row ``(t, *space)`` per event.

    An empty set is the vacuum branch.
    """

    events: np.ndarray = field(default_factory=lambda: np.empty((0, 4)))

    def __post_init__(self):
        ev = np.asarray(self.events, dtype=float)
        if ev.ndim == 1:
            ev = ev.reshape(0, 4) if ev.size == 0 else ev[None, :]
        if ev.ndim != 2 or ev.shape[1] not in (2, 4):
            raise ValueError("events must have shape (n, 2) or (n, 4)")
        if not np.all(np.isfinite(ev)):
            raise ValueError("event coordinates must be finite")
        object.__setattr__(self, "events", ev)

    @classmethod
    def vacuum(cls, spatial_dim: int = 3) -> "EventConfig":
        return cls(np.empty((0, 1 + spatial_dim)))

    @property
    def n(self) -> int:
        return self.events.shape[0]

    @property
    def spatial_dim(self) -> int:
        return self.events.shape[1] - 1

    @property
    def is_vacuum(self) -> bool:
        return self.n == 0

    def shifted(self, offset: Sequence[float]) -> "EventConfig":
        """Translate every event by a space-time offset."""
        return EventConfig(self.events + np.asarray(offset, dtype=float))

    def same_profile(self, other: "EventConfig") -> bool:
        """True when both configurations give the same eigenvalue profile."""
        if self.events.shape != other.events.shape:
            return False
        a = self.events[np.lexsort(self.events.T[::-1])]
        b = other.events[np.lexsort(other.events.T[::-1])]
        return bool(np.array_equal(a, b))


@dataclass(frozen=True)
class ClumpSpec:
    """Uniform cubic clump of nucleons and the separation of its two copies.

    Parameters
    ----------
    n : float
        Number of nucleons.
    side : float
        Cube edge length; the volume is ``side**3``.
    separation : array_like
        Spatial displacement between the two branch locations.
    density : float, optional
        Number density; derived from ``n / side**3`` when omitted and checked
        for consistency when given.
    """

    n: float
    side: float
    separation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    density: float | None = None

    def __post_init__(self):
        if not self.n >= 1:
            raise ValueError(f"n must be at least 1, got {self.n}")
        if not self.side > 0:
            raise ValueError(f"side must be positive, got {self.side}")
        sep = np.asarray(self.separation, dtype=float).reshape(-1)
        if sep.size == 1:
            sep = np.array([sep[0], 0.0, 0.0])
        if sep.size != 3:
            raise ValueError("separation must be a 3-vector")
        object.__setattr__(self, "separation", sep)
        dens = self.n / self.side**3
        if self.density is None:
            object.__setattr__(self, "density", dens)
        elif not np.isclose(self.density, dens, rtol=1e-9):
            raise ValueError("density * side**3 must equal n")

    @property
    def volume(self) -> float:
        return self.side**3

    @property
    def distance(self) -> float:
        return float(np.linalg.norm(self.separation))


def interval_sq(x: np.ndarray) -> np.ndarray:
    """Signed squared interval |x|^2 - t^2 of time-first 4-vectors."""
    x = np.asarray(x, dtype=float)
    return np.sum(x[..., 1:] ** 2, axis=-1) - x[..., 0] ** 2


def smear_f(x_sq, k: SmearingKernel):
    """Kernel value f(x^2); zero on and inside the light cone."""
    u = np.asarray(x_sq, dtype=float) / k.ell**2
    up = np.maximum(u, 0.0)
    out = up * np.exp(-up)
    return out if out.ndim else float(out)


def smear_f_prime(s_sq, k: SmearingKernel):
    """Derivative df/d(s^2) for s^2 >= 0.

    Raises
    ------
    ValueError
        If any ``s_sq`` is negative; the time-like branch is the caller's job.
    """
    s2 = np.asarray(s_sq, dtype=float)
    if np.any(s2 < 0):
        raise ValueError("smear_f_prime is defined for s_sq >= 0 only")
    l2 = k.ell**2
    out = (l2 - s2) * np.exp(-s2 / l2) / l2**2
    return out if out.ndim else float(out)


def _fprime_masked(s2: np.ndarray, k: SmearingKernel) -> np.ndarray:
    s2p = np.where(s2 > 0, s2, 0.0)
    return np.where(s2 > 0, smear_f_prime(s2p, k), 0.0)


def smear_f_timederiv_sq(x, k: SmearingKernel):
    """Squared time derivative 4 t^2 f'(x^2)^2 of f at the point ``x``."""
    x = np.asarray(x, dtype=float)
    out = 4.0 * x[..., 0] ** 2 * _fprime_masked(interval_sq(x), k) ** 2
    return out if out.ndim else float(out)


def smear_f_grad_sq(x, k: SmearingKernel):
    """Squared spatial gradient 4 |x|^2 f'(x^2)^2 of f at the point ``x``."""
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x[..., 1:] ** 2, axis=-1)
    out = 4.0 * r2 * _fprime_masked(interval_sq(x), k) ** 2
    return out if out.ndim else float(out)


def kernel_cutoff_sq(k: SmearingKernel, rel: float = 1e-12) -> float:
    """Squared interval beyond which f stays below ``rel`` times its peak.

    Solves (u/l^2) exp(1 - u/l^2) = rel on the decaying side.
    """
    if not 0 < rel < 1:
        raise ValueError("rel must lie in (0, 1)")
    u = -lambertw(-rel / np.e, k=-1).real
    return float(u) * k.ell**2


def kernel_antiderivative(u, k: SmearingKernel):
    """G(u) = integral of f from 0 to u, in closed form."""
    l2 = k.ell**2
    v = np.maximum(np.asarray(u, dtype=float), 0.0) / l2
    out = l2 * (-np.expm1(-v) - v * np.exp(-v))
    return out if out.ndim else float(out)


def ntilde_eigenvalue(x, cfg: EventConfig, k: SmearingKernel):
    """Eigenvalue of the smeared number density at points ``x``.

    Sum over events s of f[(x - x_s)^2 - (t - t_s)^2]; zero for the vacuum.
    ``x`` has shape ``(..., 1 + spatial_dim)``.
    """
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape[:-1])
    if cfg.is_vacuum:
        return out if out.ndim else 0.0
    if cfg.spatial_dim != x.shape[-1] - 1:
        raise ValueError("point and event dimensions differ")
    flat = x.reshape(-1, x.shape[-1])
    acc = np.zeros(flat.shape[0])
    block = max(1, 2_000_000 // max(1, flat.shape[0]))
    for i in range(0, cfg.n, block):
        ev = cfg.events[i:i + block]
        d = flat[:, None, :] - ev[None, :, :]
        acc += np.sum(smear_f(interval_sq(d), k), axis=1)
    out = acc.reshape(x.shape[:-1])
    return out if out.ndim else float(out)


def mean_time(cfg: EventConfig) -> float:
    """Arithmetic mean of the event times.

    Raises
    ------
    ValueError
        For the vacuum, which has no events.
    """
    if cfg.is_vacuum:
        raise ValueError("mean time is undefined for the vacuum")
    return float(np.mean(cfg.events[:, 0]))


def clump_lattice(clump: ClumpSpec, center: Sequence[float], t: float = 0.0) -> EventConfig:
    """Explicit event configuration: one nucleon per site of a cubic lattice.

    ``clump.n`` is rounded to the nearest cube m^3; sites sit at the centres
    of the m^3 sub-cells of the clump.
    """
    m = max(1, int(round(clump.n ** (1.0 / 3.0))))
    h = clump.side / m
    axis = -0.5 * clump.side + h * (np.arange(m) + 0.5)
    gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1) + np.asarray(center, dtype=float)
    ev = np.column_stack([np.full(pts.shape[0], float(t)), pts])
    return EventConfig(ev)


def _cube_sum(x: np.ndarray, clump: ClumpSpec, center: np.ndarray, k: SmearingKernel, n: int) -> np.ndarray:
    x01, w01 = gauss_legendre(n)
    z = clump.side * (x01 - 0.5)
    w = clump.side * w01
    gz = np.stack(np.meshgrid(z, z, z, indexing="ij"), axis=-1).reshape(-1, 3)
    gw = (w[:, None, None] * w[None, :, None] * w[None, None, :]).ravel()
    out = np.empty(x.shape[0])
    block = max(1, 4_000_000 // gz.shape[0])
    for i in range(0, x.shape[0], block):
        xb = x[i:i + block]
        rel = xb[:, None, 1:] - center - gz[None, :, :]
        s2 = np.sum(rel**2, axis=-1) - xb[:, None, 0] ** 2
        out[i:i + block] = smear_f(s2, k) @ gw
    return clump.density * out


def clump_profile(x, clump: ClumpSpec, center: Sequence[float], k: SmearingKernel,
                  tol: float = 1e-6, max_nodes: int = 64, nodes: int | None = None):
    """Smeared density of a uniform cubic clump centred at ``center``.

    Evaluates D * integral over the cube of f[(x - center - z)^2 - t^2] with
    tensor Gauss-Legendre rules, doubling the order until two successive
    estimates agree to ``tol`` relative to the largest value. A fixed
    ``nodes`` skips the refinement.

    Raises
    ------
    ConvergenceError
        If ``max_nodes`` points per axis are not enough; ``partial`` holds the
        last estimate.
    """
    if k.spatial_dim != 3:
        raise ValueError("clump profiles need spatial_dim = 3")
    x = np.asarray(x, dtype=float)
    flat = x.reshape(-1, 4)
    c = np.asarray(center, dtype=float)
    if nodes is not None:
        out = _cube_sum(flat, clump, c, k, int(nodes)).reshape(x.shape[:-1])
        return out if out.ndim else float(out)
    n = 8
    prev = _cube_sum(flat, clump, c, k, n)
    while True:
        n2 = min(2 * n, max_nodes)
        cur = _cube_sum(flat, clump, c, k, n2)
        scale = max(np.max(np.abs(cur)), np.finfo(float).tiny)
        if np.max(np.abs(cur - prev)) <= tol * scale:
            out = cur.reshape(x.shape[:-1])
            return out if out.ndim else float(out)
        if n2 == max_nodes:
            raise ConvergenceError("clump profile did not converge", partial=cur.reshape(x.shape[:-1]))
        n, prev = n2, cur


def shell_overlap(rho, tau_a, tau_b, k: SmearingKernel, nodes: int = 24):
    """Spatial overlap of two kernel shells.

    Computes the integral over all space of
    f(|x|^2 - tau_a^2) f(|x - rho e|^2 - tau_b^2), i.e. the inner product of
    the kernels of two events whose time offsets from the current time are
    ``tau_a`` and ``tau_b`` and whose spatial distance is ``rho``.

    In 3D the angular integral is done exactly (bipolar coordinates), leaving
    one integral over u = r^2 - tau_a^2 against the closed-form antiderivative
    of f. In 1D the spatial line integral is done directly. Both use composite
    Gauss-Legendre panels split at every kink of the integrand. Arguments
    broadcast against each other.
    """
    rho, ta, tb = np.broadcast_arrays(np.abs(np.asarray(rho, dtype=float)),
                                      np.abs(np.asarray(tau_a, dtype=float)),
                                      np.abs(np.asarray(tau_b, dtype=float)))
    shape = rho.shape
    rho, ta, tb = rho.ravel(), ta.ravel(), tb.ravel()
    if k.spatial_dim == 3:
        out = _overlap_3d(rho, ta, tb, k, nodes)
    else:
        out = _overlap_1d(rho, ta, tb, k, nodes)
    out = out.reshape(shape)
    return out if out.ndim else float(out)


def shell_norm(tau, k: SmearingKernel, nodes: int = 24):
    """Squared spatial norm of one kernel shell at time offset ``tau``."""
    return shell_overlap(0.0, tau, tau, k, nodes)


def _overlap_3d(rho, ta, tb, k, nodes):
    l2 = k.ell**2
    ucut = kernel_cutoff_sq(k, 1e-16)
    m = rho.size
    fixed = np.array([0.0, 0.25, 1.0, 2.5, 6.0, 12.0]) * l2
    kinks = np.stack([(rho + tb) ** 2 - ta**2, (rho - tb) ** 2 - ta**2], axis=1)
    br = np.concatenate([np.broadcast_to(fixed, (m, fixed.size)), kinks,
                         np.full((m, 1), ucut)], axis=1)
    br = np.sort(np.clip(br, 0.0, ucut), axis=1)
    u, w = batched_panels(br[:, :-1], br[:, 1:], nodes)
    u = u.reshape(m, -1)
    w = w.reshape(m, -1)
    r1 = np.sqrt(u + ta[:, None] ** 2)
    fu = smear_f(u, k)
    small = rho < 1e-7 * k.ell
    out = np.empty(m)
    big = ~small
    if np.any(big):
        rb = rho[big, None]
        tb2 = tb[big, None] ** 2
        hi = kernel_antiderivative((r1[big] + rb) ** 2 - tb2, k)
        lo = kernel_antiderivative((r1[big] - rb) ** 2 - tb2, k)
        out[big] = np.pi / (2.0 * rho[big]) * np.sum(w[big] * fu[big] * (hi - lo), axis=1)
    if np.any(small):
        g = smear_f(u[small] + ta[small, None] ** 2 - tb[small, None] ** 2, k)
        out[small] = 2.0 * np.pi * np.sum(w[small] * r1[small] * fu[small] * g, axis=1)
    return out


def _overlap_1d(rho, ta, tb, k, nodes):
    ucut = kernel_cutoff_sq(k, 1e-16)
    ra = np.sqrt(ta**2 + ucut)
    rb = np.sqrt(tb**2 + ucut)
    lo_lim = np.maximum(-ra, rho - rb)
    hi_lim = np.minimum(ra, rho + rb)
    m = rho.size
    pts = np.stack([-ra, -ta, ta, ra, rho - rb, rho - tb, rho + tb, rho + rb], axis=1)
    l = k.ell
    # extra breaks resolve the kernel peak on each edge of each shell
    edges = np.concatenate([-ta[:, None], ta[:, None], (rho - tb)[:, None], (rho + tb)[:, None]], axis=1)
    widths = np.stack([l**2 / (2.0 * np.maximum(np.abs(edges), l)) * c for c in (1.0, 4.0)], axis=2)
    sign = np.array([-1.0, 1.0, -1.0, 1.0])
    extra = (edges[:, :, None] + sign[None, :, None] * widths).reshape(m, -1)
    br = np.concatenate([pts, extra], axis=1)
    br = np.sort(np.clip(br, lo_lim[:, None], hi_lim[:, None]), axis=1)
    x, w = batched_panels(br[:, :-1], br[:, 1:], nodes)
    x = x.reshape(m, -1)
    w = w.reshape(m, -1)
    fa = smear_f(x**2 - ta[:, None] ** 2, k)
    fb = smear_f((x - rho[:, None]) ** 2 - tb[:, None] ** 2, k)
    out = np.sum(w * fa * fb, axis=1)
    out[lo_lim >= hi_lim] = 0.0
    return out
