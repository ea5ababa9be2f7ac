"""Positive-frequency Klein-Gordon packets with a finite temporal window.

The spatial kernel is

    K(t, x) = (2 pi)^(-d/2) int d^d k  phi(k) exp(i (k.x - omega(k) t)),
    phi(k)  = (2 sigma^2 / pi)^(d/4) exp(-sigma^2 |k - p|^2),

with omega(k) = sqrt(|k|^2 + m^2), so K solves the Klein-Gordon equation
and has unit spatial norm. A packet centred at the event (t0, x0) is
K(t - t0, x - x0) G(t - t0) with the temporal window
G(t) = (2 pi sigma'^2)^(-1/4) exp(-t^2 / (4 sigma'^2)), whose energy
spread is 1 / (2 sigma').

Units are natural (hbar = c = 1) except in ``mass_accuracy_tradeoff``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import j0

from ._rules import gauss_legendre, panel_rule

__all__ = [
    "PacketSpec",
    "kg_kernel",
    "time_window",
    "packet_amplitude",
    "kg_residual",
    "energy_spread",
    "group_velocity",
    "time_translate_vs_evolve",
    "mass_accuracy_tradeoff",
]

HBAR_EV_S = 6.582e-16
K_WIDTH = 8.0


@dataclass(frozen=True)
class PacketSpec:
    """Gaussian packet parameters.

    Parameters
    ----------
    p : float or array_like of length 3
        Mean momentum; a scalar means one spatial dimension.
    sigma : float
        Spatial width.
    sigma_prime : float
        Temporal window width.
    m : float
        Mass.
    center : array_like, optional
        Time-first centre event; defaults to the origin.
    """

    p: object = 0.0
    sigma: float = 1.0
    sigma_prime: float = 1.0
    m: float = 1.0
    center: object = None

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        if p.size not in (1, 3):
            raise ValueError("p must be a scalar or a 3-vector")
        if not (self.sigma > 0 and self.sigma_prime > 0):
            raise ValueError("widths must be positive")
        if not self.m >= 0:
            raise ValueError("mass must be non-negative")
        c = np.zeros(1 + p.size) if self.center is None else np.asarray(self.center, dtype=float).reshape(-1)
        if c.size != 1 + p.size:
            raise ValueError("center must have 1 + spatial_dim components")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "center", c)

    @property
    def spatial_dim(self) -> int:
        return int(self.p.size)

    def omega(self, k_sq):
        return np.sqrt(np.asarray(k_sq) + self.m**2)


def _nodes_1d(spec: PacketSpec, tx_extent: float) -> int:
    # enough nodes to resolve the phase k x - omega t over the window
    span = 2.0 * K_WIDTH / spec.sigma
    return int(min(2048, max(96, math.ceil(span * tx_extent / math.pi) + 64)))


def kg_kernel(x, spec: PacketSpec, nodes: int | None = None) -> np.ndarray:
    """Klein-Gordon kernel at time-first points ``x`` relative to the origin.

    The momentum integral is truncated at |k - p| = 8 / sigma, where the
    Gaussian weight is below 1e-27.
    """
    x = np.asarray(x, dtype=float)
    pts = np.atleast_2d(x).reshape(-1, x.shape[-1])
    d = spec.spatial_dim
    if pts.shape[-1] != 1 + d:
        raise ValueError("points need 1 + spatial_dim components")
    t = pts[:, 0]
    sig = spec.sigma
    norm = (2.0 * sig**2 / math.pi) ** (d / 4.0) * (2.0 * math.pi) ** (-d / 2.0)
    if d == 1:
        extent = float(np.max(np.abs(pts))) + 1.0
        n = nodes or _nodes_1d(spec, extent)
        lo, hi = spec.p[0] - K_WIDTH / sig, spec.p[0] + K_WIDTH / sig
        # omega has a kink at k = 0 when m = 0 and strong curvature there for small m
        breaks = [lo, hi] + ([0.0] if lo < 0.0 < hi else [])
        k, w = panel_rule(breaks, n)
        wk = w * np.exp(-sig**2 * (k - spec.p[0]) ** 2)
        om = spec.omega(k**2)
        out = np.empty(len(t), dtype=complex)
        for s in range(0, len(t), 4096):
            sl = slice(s, s + 4096)
            ph = np.outer(pts[sl, 1], k) - np.outer(t[sl], om)
            out[sl] = np.exp(1j * ph) @ wk
        out *= norm
    else:
        pv = spec.p
        pn = float(np.linalg.norm(pv))
        axis = pv / pn if pn > 0 else np.array([0.0, 0.0, 1.0])
        xs = pts[:, 1:]
        xpar = xs @ axis
        xperp = np.linalg.norm(xs - np.outer(xpar, axis), axis=1)
        extent = float(np.max(np.abs(pts))) + 1.0
        n = nodes or min(256, _nodes_1d(spec, extent))
        u, w = gauss_legendre(n)
        kpar = pn + K_WIDTH / sig * (2.0 * u - 1.0)
        wpar = 2.0 * K_WIDTH / sig * w * np.exp(-sig**2 * (kpar - pn) ** 2)
        kperp = K_WIDTH / sig * u
        wperp = K_WIDTH / sig * w * kperp * np.exp(-sig**2 * kperp**2) * 2.0 * math.pi
        om = spec.omega(kpar[:, None] ** 2 + kperp[None, :] ** 2)
        out = np.empty(len(t), dtype=complex)
        for i in range(len(t)):
            ph = np.exp(1j * (kpar[:, None] * xpar[i] - om * t[i]))
            out[i] = np.sum(wpar[:, None] * wperp[None, :] * ph * j0(kperp[None, :] * xperp[i]))
        out *= norm
    return out.reshape(x.shape[:-1]) if x.ndim > 1 else out[0]


def time_window(t, spec: PacketSpec):
    """Temporal window G(t) with unit L2 norm in t."""
    t = np.asarray(t, dtype=float)
    sp = spec.sigma_prime
    return (2.0 * math.pi * sp**2) ** -0.25 * np.exp(-t**2 / (4.0 * sp**2))


def packet_amplitude(x, spec: PacketSpec) -> np.ndarray:
    """Packet centred at ``spec.center``: K(x - c) G(t - t_c)."""
    x = np.asarray(x, dtype=float)
    rel = x - spec.center
    return kg_kernel(rel, spec) * time_window(rel[..., 0], spec)


def kg_residual(spec: PacketSpec, points, h: float | None = None) -> np.ndarray:
    """Relative Klein-Gordon residual of the kernel by central differences.

    Returns |d_t^2 K - lap K + m^2 K| / (|d_t^2 K| + |lap K| + m^2 |K|) at
    each point, with step ``h`` defaulting to sigma / 50.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    h = spec.sigma / 50.0 if h is None else h
    d = spec.spatial_dim
    nodes = _nodes_1d(spec, float(np.max(np.abs(pts))) + 2.0) if d == 1 else None
    f = lambda q: kg_kernel(q, spec, nodes)
    k0 = f(pts)
    shift = np.zeros(1 + d)
    shift[0] = h
    dtt = (f(pts + shift) - 2.0 * k0 + f(pts - shift)) / h**2
    lap = np.zeros_like(k0)
    for j in range(1, 1 + d):
        shift = np.zeros(1 + d)
        shift[j] = h
        lap += (f(pts + shift) - 2.0 * k0 + f(pts - shift)) / h**2
    num = np.abs(dtt - lap + spec.m**2 * k0)
    den = np.abs(dtt) + np.abs(lap) + spec.m**2 * np.abs(k0)
    return num / den


def energy_spread(spec: PacketSpec, n: int = 1 << 14) -> float:
    """Standard deviation of the window's energy distribution, from an FFT."""
    sp = spec.sigma_prime
    L = 80.0 * sp
    t = (np.arange(n) - n // 2) * (L / n)
    g = time_window(t, spec)
    spec_e = np.abs(np.fft.fftshift(np.fft.fft(g))) ** 2
    E = np.fft.fftshift(np.fft.fftfreq(n, d=L / n)) * 2.0 * math.pi
    spec_e /= spec_e.sum()
    mean = np.sum(E * spec_e)
    return float(math.sqrt(np.sum((E - mean) ** 2 * spec_e)))


def group_velocity(spec: PacketSpec, nodes: int = 400) -> float:
    """Mean of k / omega(k) under the 1D momentum density |phi(k)|^2."""
    if spec.spatial_dim != 1:
        raise ValueError("group_velocity is one-dimensional")
    u, w = gauss_legendre(nodes)
    p, sig = spec.p[0], spec.sigma
    k = p + K_WIDTH / sig * (2.0 * u - 1.0)
    rho = w * np.exp(-2.0 * sig**2 * (k - p) ** 2)
    return float(np.sum(rho * k / spec.omega(k**2)) / np.sum(rho))


def _marginal(amp: np.ndarray, x: np.ndarray, dt: float, dx: float) -> np.ndarray:
    rho = np.sum(np.abs(amp) ** 2, axis=0) * dt
    return rho / (rho.sum() * dx)


def time_translate_vs_evolve(spec: PacketSpec, s: float, x_grid: np.ndarray,
                             t_grid: np.ndarray | None = None) -> dict:
    """Compare a time-translated packet with a freely evolved one.

    The translated packet is K(t' - s, x) G(t' - s): the whole packet moved
    to the window centre s. The evolved packet is K(t', x) G(t' - s): the
    kernel launched at t' = 0 and observed through the same window. Both are
    reduced to their position marginals integrated over t'. The returned
    ``velocity`` is the shift of the evolved mean relative to the translated
    one per unit s. ``t_grid`` defaults to s +- 6 sigma' on 121 points.
    """
    if spec.spatial_dim != 1:
        raise ValueError("time_translate_vs_evolve is one-dimensional")
    x = np.asarray(x_grid, dtype=float)
    if t_grid is None:
        t_grid = s + 6.0 * spec.sigma_prime * np.linspace(-1.0, 1.0, 121)
    t = np.asarray(t_grid, dtype=float)
    dx, dt = x[1] - x[0], t[1] - t[0]
    T, X = np.meshgrid(t, x, indexing="ij")
    ext = float(max(np.max(np.abs(x)), np.max(np.abs(t)))) + 1.0
    nodes = _nodes_1d(spec, ext)
    win = time_window(T - s, spec)
    trans = kg_kernel(np.stack([T - s, X], axis=-1), spec, nodes) * win
    evol = kg_kernel(np.stack([T, X], axis=-1), spec, nodes) * win
    out = {}
    for name, amp in (("translated", trans), ("evolved", evol)):
        rho = _marginal(amp, x, dt, dx)
        mean = float(np.sum(x * rho) * dx)
        out[name] = {"mean": mean, "peak": float(x[np.argmax(rho)]), "variance": float(np.sum((x - mean) ** 2 * rho) * dx), "density": rho}
    a, b = out["translated"], out["evolved"]
    shifted = np.interp(x, x - (b["mean"] - a["mean"]), b["density"], left=0.0, right=0.0)
    out["shape_distance"] = float(np.sum(np.abs(shifted - a["density"])) * dx)
    out["velocity"] = (b["mean"] - a["mean"]) / s if s else 0.0
    return out


def mass_accuracy_tradeoff(m_ev: float, target_fraction) -> np.ndarray:
    """Temporal width (s) needed to resolve the mass to ``target_fraction``.

    sigma' = hbar / (m c^2 * target_fraction), from the energy-time spread.
    """
    frac = np.asarray(target_fraction, dtype=float)
    if np.any(frac <= 0) or m_ev <= 0:
        raise ValueError("mass and target fraction must be positive")
    out = HBAR_EV_S / (m_ev * frac)
    return out if out.ndim else float(out)
