"""Stochastic collapse dynamics on a finite basis of event branches.

Every branch is an eigenstate of the smeared number density, so the
noise-driven evolution acts on each branch amplitude by multiplication and no
time ordering is needed. On a lattice of space-time cells with 4-volumes dv
and noise values w, a branch b with eigenvalue profile nu_b is multiplied by

    prod_i exp[-(dv_i / 4 Lambda) (w_i - 2 Lambda nu_b(x_i))^2].

Noise fields are drawn from the probability rule (density equal to the
squared norm of the resulting state) exactly, by visiting the cells in a
fixed order and drawing each w_i from the Gaussian mixture weighted by the
current branch weights. Ensemble averages of this process reproduce the
density-matrix evolution

    rho_bb' -> rho_bb' exp[-(Lambda / 2) int dx (nu_b - nu_b')^2],

which is also computed here directly, together with the decoherence exponent
of a two-location superposition of a uniform cubic clump.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import quad_vec
from scipy.interpolate import CubicSpline

from ._rules import batched_panels, gauss_legendre, geometric_breaks, panel_rule, spawn_generators
from .errors import BudgetExhausted, ConvergenceError
from .kernels import (ClumpSpec, EventConfig, SmearingKernel, clump_profile, kernel_cutoff_sq,
                      ntilde_eigenvalue, shell_norm, shell_overlap)
from .quadrature import DEFAULT_MC_BUDGET, MC_CHUNK, Domain4, QuadResult, integrate

__all__ = [
    "BranchState",
    "NoiseLattice",
    "DensityMatrixLR",
    "EnsembleResult",
    "LindbladResidual",
    "RegimeWarning",
    "branch_profiles",
    "evolve_trajectory",
    "sample_noise",
    "run_ensemble",
    "lattice_exponent",
    "decoherence_matrix",
    "density_matrix_evolve",
    "lindblad_check",
    "decoherence_exponent",
    "pair_overlap_integral",
]


class RegimeWarning(UserWarning):
    """A reduction is used outside the regime where it is accurate."""


# ----------------------------------------------------------------- types

@dataclass(frozen=True)
class BranchState:
    """Superposition of event-configuration branches.

    Attributes
    ----------
    configs : tuple of EventConfig
        Distinct branch configurations.
    amplitudes : ndarray of complex
        Branch amplitudes, scaled by ``exp(log_scale)``.
    log_scale : float
        Logarithm of a common factor, so unnormalized states cannot
        underflow.
    """

    configs: tuple
    amplitudes: np.ndarray
    log_scale: float = 0.0

    def __post_init__(self):
        cfgs = tuple(self.configs)
        amp = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if len(cfgs) == 0 or len(cfgs) != amp.size:
            raise ValueError("need one amplitude per branch and at least one branch")
        for i in range(len(cfgs)):
            for j in range(i):
                if cfgs[i].same_profile(cfgs[j]):
                    raise ValueError("branch configurations must be distinct")
        object.__setattr__(self, "configs", cfgs)
        object.__setattr__(self, "amplitudes", amp)

    @classmethod
    def from_weights(cls, configs: Sequence[EventConfig], weights: Sequence[float],
                     phases: Sequence[float] | None = None) -> "BranchState":
        w = np.asarray(weights, dtype=float)
        ph = np.zeros(w.size) if phases is None else np.asarray(phases, dtype=float)
        return cls(tuple(configs), np.sqrt(w) * np.exp(1j * ph)).normalized()

    @property
    def n_branches(self) -> int:
        return self.amplitudes.size

    @property
    def weights(self) -> np.ndarray:
        """Normalized branch weights |c_b|^2 / sum |c|^2."""
        p = np.abs(self.amplitudes) ** 2
        return p / p.sum()

    @property
    def squared_norm(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2) * math.exp(2.0 * self.log_scale))

    @property
    def is_normalized(self) -> bool:
        return self.log_scale == 0.0 and abs(np.sum(np.abs(self.amplitudes) ** 2) - 1.0) < 1e-12

    def normalized(self) -> "BranchState":
        norm = math.sqrt(float(np.sum(np.abs(self.amplitudes) ** 2)))
        if norm == 0:
            raise ValueError("cannot normalize a zero state")
        return BranchState(self.configs, self.amplitudes / norm, 0.0)


@dataclass(frozen=True)
class NoiseLattice:
    """Space-time cells tiling a slab, with optional noise values.

    Attributes
    ----------
    centers : ndarray, shape (N, 1 + spatial_dim)
        Cell centres, time first, in lexicographic (t, x, y, z) order.
    volumes : ndarray, shape (N,)
        Cell 4-volumes.
    slab : ndarray of int, shape (N,)
        Index of the time slab each cell belongs to.
    lam : float
        Collapse strength Lambda.
    w : ndarray, optional
        Noise values, one per cell.
    t_range : tuple
        ``(s0, s)``, the time extent of the slab.
    """

    centers: np.ndarray
    volumes: np.ndarray
    slab: np.ndarray
    lam: float
    w: np.ndarray | None = None
    t_range: tuple = (0.0, 0.0)

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.centers, dtype=float))
        v = np.asarray(self.volumes, dtype=float).reshape(-1)
        s = np.asarray(self.slab, dtype=int).reshape(-1)
        if c.shape[0] != v.size or s.size != v.size:
            raise ValueError("centers, volumes and slab must have one entry per cell")
        if np.any(v <= 0):
            raise ValueError("cell volumes must be positive")
        if np.any(np.diff(s) < 0):
            raise ValueError("cells must be ordered by slab")
        if not self.lam > 0:
            raise ValueError("Lambda must be positive")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "volumes", v)
        object.__setattr__(self, "slab", s)
        if self.w is not None:
            w = np.asarray(self.w, dtype=float).reshape(-1)
            if w.size != v.size:
                raise ValueError("need one noise value per cell")
            object.__setattr__(self, "w", w)

    @classmethod
    def regular(cls, t_edges: Sequence[float], space_edges: Sequence[Sequence[float]],
                lam: float) -> "NoiseLattice":
        """Product lattice from cell edges along t and each spatial axis."""
        te = np.asarray(t_edges, dtype=float)
        axes = [np.asarray(e, dtype=float) for e in space_edges]
        if te.size < 2 or any(a.size < 2 for a in axes):
            raise ValueError("each axis needs at least two edges")
        if np.any(np.diff(te) <= 0) or any(np.any(np.diff(a) <= 0) for a in axes):
            raise ValueError("edges must increase")
        mids = [0.5 * (te[1:] + te[:-1])] + [0.5 * (a[1:] + a[:-1]) for a in axes]
        widths = [np.diff(te)] + [np.diff(a) for a in axes]
        grids = np.meshgrid(*mids, indexing="ij")
        wgrid = np.meshgrid(*widths, indexing="ij")
        centers = np.stack([g.ravel() for g in grids], axis=1)
        vol = np.prod(np.stack([g.ravel() for g in wgrid], axis=1), axis=1)
        slab = np.repeat(np.arange(te.size - 1), centers.shape[0] // (te.size - 1))
        return cls(centers, vol, slab, lam, None, (float(te[0]), float(te[-1])))

    @property
    def n_cells(self) -> int:
        return self.volumes.size

    @property
    def n_slabs(self) -> int:
        return int(self.slab[-1]) + 1 if self.slab.size else 0

    def with_noise(self, w: np.ndarray) -> "NoiseLattice":
        return NoiseLattice(self.centers, self.volumes, self.slab, self.lam, w, self.t_range)


@dataclass(frozen=True)
class DensityMatrixLR:
    """Density matrix in a finite branch basis at time ``t``."""

    labels: tuple
    matrix: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] != len(self.labels):
            raise ValueError("matrix must be square with one label per branch")
        if not np.allclose(m, m.conj().T, atol=1e-12):
            raise ValueError("density matrix must be Hermitian")
        if abs(np.trace(m).real - 1.0) > 1e-9:
            raise ValueError("density matrix must have unit trace")
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_state(cls, state: BranchState, labels: Sequence[str] | None = None,
                   t: float = 0.0) -> "DensityMatrixLR":
        c = state.normalized().amplitudes
        names = tuple(labels) if labels is not None else tuple(f"b{i}" for i in range(c.size))
        return cls(names, np.outer(c, c.conj()), t)


@dataclass
class EnsembleResult:
    """Outcome statistics of a trajectory ensemble.

    Attributes
    ----------
    frequencies : ndarray
        Fraction of uncensored runs won by each branch.
    binomial_sigma : ndarray
        Binomial standard error of each frequency under the initial weights.
    win_counts : ndarray of int
    n_censored : int
        Runs whose dominant weight never passed the threshold.
    mean_weights, weight_sem : ndarray, shape (n_slabs + 1, B)
        Ensemble mean of the normalized branch weights after each slab, with
        standard errors. Row 0 is the initial state.
    ensemble_rho, ensemble_rho_sem : ndarray, shape (n_slabs + 1, B, B)
        Ensemble average of the normalized |psi><psi| and entrywise standard
        errors.
    predicted_rho : ndarray, shape (n_slabs + 1, B, B)
        Density matrix from the lattice exponent, for comparison.
    exponent : ndarray, shape (n_slabs + 1, B, B)
        Cumulative lattice exponent (Lambda / 2) sum dv (nu_b - nu_b')^2.
    final_weights : ndarray, shape (N, B)
    winners : ndarray of int, shape (N,)
        Index of the winning branch, or -1 when censored.
    censored : ndarray of bool, shape (N,)
    slab_weights : ndarray, shape (N, n_slabs + 1, B), optional
    """

    frequencies: np.ndarray
    binomial_sigma: np.ndarray
    win_counts: np.ndarray
    n_censored: int
    mean_weights: np.ndarray
    weight_sem: np.ndarray
    ensemble_rho: np.ndarray
    ensemble_rho_sem: np.ndarray
    predicted_rho: np.ndarray
    exponent: np.ndarray
    final_weights: np.ndarray
    winners: np.ndarray
    censored: np.ndarray
    slab_weights: np.ndarray | None = None
    threshold: float = 0.999

    @property
    def n_samples(self) -> int:
        return int(self.winners.size)


@dataclass(frozen=True)
class LindbladResidual:
    """Finite-difference residuals of the master equation.

    Attributes
    ----------
    offdiag_relative : float
        Largest relative residual over off-diagonal entries.
    diag_absolute : float
        Largest |d rho_bb / dt| over diagonal entries.
    """

    offdiag_relative: float
    diag_absolute: float

    @property
    def max(self) -> float:
        return max(self.offdiag_relative, self.diag_absolute)


# ------------------------------------------------------- trajectories

def branch_profiles(configs: Sequence[EventConfig], points: np.ndarray, k: SmearingKernel) -> np.ndarray:
    """Eigenvalue profiles nu_b at ``points``, shape (B, N)."""
    return np.stack([ntilde_eigenvalue(points, c, k) for c in configs])


def _check_lam(lam: float) -> None:
    if not lam > 0:
        raise ValueError("Lambda must be positive")


def evolve_trajectory(state: BranchState, lattice: NoiseLattice, k: SmearingKernel) -> BranchState:
    """Apply the collapse evolution for a given noise field.

    Returns the unnormalized state; its squared norm is the probability
    density of the noise field up to a factor independent of the noise.
    """
    _check_lam(lattice.lam)
    if lattice.w is None:
        raise ValueError("lattice has no noise values")
    lam = lattice.lam
    nu = branch_profiles(state.configs, lattice.centers, k)
    dev = lattice.w[None, :] - 2.0 * lam * nu
    log_m = np.array([-math.fsum(lattice.volumes * d**2) / (4.0 * lam) for d in dev])
    top = float(np.max(log_m))
    amp = state.amplitudes * np.exp(log_m - top)
    return BranchState(state.configs, amp, state.log_scale + top)


def _active_cells(nu: np.ndarray) -> np.ndarray:
    return np.flatnonzero(np.ptp(nu, axis=0) > 0)


def _simulate(logw0: np.ndarray, nu: np.ndarray, dv: np.ndarray, lam: float, U: np.ndarray,
              Z: np.ndarray, active: np.ndarray, record_at: np.ndarray | None):
    """Sequential mixture sampling for a batch of trajectories.

    ``U`` and ``Z`` hold per-trajectory uniforms and normals for the active
    cells, shape (batch, n_active). Returns final log-weights, the noise on
    active cells and, optionally, weights recorded after given cell counts.
    """
    nb, B = U.shape[0], nu.shape[0]
    logw = np.broadcast_to(logw0, (nb, B)).copy()
    w_out = np.empty((nb, active.size))
    recs = []
    rec_iter = iter([] if record_at is None else list(record_at))
    next_rec = next(rec_iter, None)
    while next_rec == 0:
        recs.append(_normalize(logw))
        next_rec = next(rec_iter, None)
    sd = np.sqrt(lam / dv[active])
    means = 2.0 * lam * nu[:, active]
    coef = dv[active] / (2.0 * lam)
    for j in range(active.size):
        p = np.exp(logw - logw.max(axis=1, keepdims=True))
        cum = np.cumsum(p, axis=1)
        b = np.sum(cum < (U[:, j] * cum[:, -1])[:, None], axis=1)
        b = np.minimum(b, B - 1)
        w = means[b, j] + sd[j] * Z[:, j]
        w_out[:, j] = w
        logw -= coef[j] * (w[:, None] - means[None, :, j]) ** 2
        logw -= logw.max(axis=1, keepdims=True)
        while next_rec is not None and next_rec == j + 1:
            recs.append(_normalize(logw))
            next_rec = next(rec_iter, None)
    return logw, w_out, recs


def _normalize(logw: np.ndarray) -> np.ndarray:
    p = np.exp(logw - logw.max(axis=1, keepdims=True))
    return p / p.sum(axis=1, keepdims=True)


def _trajectory_generators(seed: int, count: int) -> list[np.random.Generator]:
    return spawn_generators(seed, count, key=(7,))


def sample_noise(state: BranchState, lattice: NoiseLattice, k: SmearingKernel, seed: int) -> NoiseLattice:
    """Draw one noise field from the probability rule.

    Cells are visited in lattice order; each w_i is drawn from the mixture
    sum_b p_b Normal(2 Lambda nu_b(x_i), Lambda / dv_i) with the current
    branch weights p_b, which are then updated. Cells where every branch has
    the same eigenvalue do not change the weights and are drawn afterwards.
    The stream is the one trajectory 0 of :func:`run_ensemble` uses.
    """
    _check_lam(lattice.lam)
    lam = lattice.lam
    nu = branch_profiles(state.configs, lattice.centers, k)
    active = _active_cells(nu)
    rng = _trajectory_generators(seed, 1)[0]
    U = rng.random((1, active.size))
    Z = rng.standard_normal((1, active.size))
    inert = np.setdiff1d(np.arange(lattice.n_cells), active)
    z_inert = rng.standard_normal(inert.size)
    logw0 = np.log(np.maximum(state.weights, 1e-300))
    _, w_act, _ = _simulate(logw0, nu, lattice.volumes, lam, U, Z, active, None)
    w = np.empty(lattice.n_cells)
    w[active] = w_act[0]
    w[inert] = 2.0 * lam * nu[0, inert] + np.sqrt(lam / lattice.volumes[inert]) * z_inert
    return lattice.with_noise(w)


def lattice_exponent(lattice: NoiseLattice, configs: Sequence[EventConfig], k: SmearingKernel) -> np.ndarray:
    """Cumulative exponent (Lambda / 2) sum dv (nu_b - nu_b')^2 after each slab.

    Shape (n_slabs + 1, B, B); row 0 is zero.
    """
    nu = branch_profiles(configs, lattice.centers, k)
    B = nu.shape[0]
    out = np.zeros((lattice.n_slabs + 1, B, B))
    for b in range(B):
        for c in range(b + 1, B):
            per_cell = 0.5 * lattice.lam * lattice.volumes * (nu[b] - nu[c]) ** 2
            sums = np.array([math.fsum(per_cell[lattice.slab == s]) for s in range(lattice.n_slabs)])
            out[1:, b, c] = out[1:, c, b] = np.cumsum(sums)
    return out


def run_ensemble(initial: BranchState, lattice: NoiseLattice, k: SmearingKernel, samples: int,
                 seed: int, *, threshold: float = 0.999, batch: int = 1024,
                 record_slabs: bool = False) -> EnsembleResult:
    """Simulate independent collapse trajectories over a lattice.

    Trajectory j draws from its own Philox stream, derived from
    ``(seed, j)``, so results do not depend on batching. A run is won by the
    branch whose weight exceeds ``threshold`` after the last slab; otherwise
    it is censored.
    """
    if initial.n_branches < 2:
        raise ValueError("an ensemble needs at least two branches")
    _check_lam(lattice.lam)
    if samples < 1:
        raise ValueError("samples must be positive")
    lam = lattice.lam
    st = initial.normalized()
    B = st.n_branches
    nu = branch_profiles(st.configs, lattice.centers, k)
    active = _active_cells(nu)
    slab_of_active = lattice.slab[active]
    record_at = np.searchsorted(slab_of_active, np.arange(lattice.n_slabs), side="right")
    record_at = np.concatenate([[0], record_at])
    phases = np.angle(st.amplitudes)
    logw0 = np.log(np.maximum(st.weights, 1e-300))
    gens = _trajectory_generators(seed, samples)
    S = lattice.n_slabs + 1

    final = np.empty((samples, B))
    sum_p = np.zeros((S, B))
    sum_p2 = np.zeros((S, B))
    sum_rho = np.zeros((S, B, B), dtype=complex)
    sum_rho2 = np.zeros((S, B, B))
    slab_w = np.empty((samples, S, B)) if record_slabs else None
    pp = np.exp(1j * (phases[:, None] - phases[None, :]))
    for start in range(0, samples, batch):
        idx = range(start, min(start + batch, samples))
        U = np.empty((len(idx), active.size))
        Z = np.empty((len(idx), active.size))
        for row, j in enumerate(idx):
            U[row] = gens[j].random(active.size)
            Z[row] = gens[j].standard_normal(active.size)
        logw, _, recs = _simulate(logw0, nu, lattice.volumes, lam, U, Z, active, record_at)
        final[start:start + len(idx)] = _normalize(logw)
        for s, p in enumerate(recs):
            sum_p[s] += p.sum(axis=0)
            sum_p2[s] += (p**2).sum(axis=0)
            root = np.sqrt(p)
            r = root[:, :, None] * root[:, None, :]
            sum_rho[s] += r.sum(axis=0) * pp
            sum_rho2[s] += (r**2).sum(axis=0)
            if slab_w is not None:
                slab_w[start:start + len(idx), s] = p

    n = float(samples)
    mean_p = sum_p / n
    sem_p = np.sqrt(np.maximum(sum_p2 / n - mean_p**2, 0.0) / max(n - 1, 1))
    rho = sum_rho / n
    rho_sem = np.sqrt(np.maximum(sum_rho2 / n - np.abs(rho) ** 2, 0.0) / max(n - 1, 1))
    expo = lattice_exponent(lattice, st.configs, k)
    rho0 = np.outer(st.amplitudes, st.amplitudes.conj())
    predicted = rho0[None] * np.exp(-expo)

    top = final.max(axis=1)
    censored = top <= threshold
    winners = np.where(censored, -1, final.argmax(axis=1))
    wins = np.array([np.sum(winners == b) for b in range(B)])
    done = max(int(samples - censored.sum()), 1)
    freq = wins / done
    p0 = st.weights
    sigma = np.sqrt(p0 * (1.0 - p0) / done)
    return EnsembleResult(freq, sigma, wins, int(censored.sum()), mean_p, sem_p, rho, rho_sem,
                          predicted, expo, final, winners, censored, slab_w, threshold)


# ------------------------------------------------- density matrix

_NEG = 30.0  # kernel decay, in units of l^2, beyond which shells are ignored


def _unique_events(cfg: EventConfig) -> tuple[np.ndarray, np.ndarray]:
    if cfg.is_vacuum:
        return np.empty((0, cfg.events.shape[1])), np.empty(0)
    ev, counts = np.unique(cfg.events, axis=0, return_counts=True)
    return ev, counts.astype(float)


def pair_overlap_integral(a: EventConfig, b: EventConfig, t: np.ndarray, k: SmearingKernel) -> np.ndarray:
    """Spatial integral of nu_a(x, t) nu_b(x, t) at each time in ``t``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    ea, ca = _unique_events(a)
    eb, cb = _unique_events(b)
    if ea.size == 0 or eb.size == 0:
        return np.zeros(t.size)
    rho = np.linalg.norm(ea[:, None, 1:] - eb[None, :, 1:], axis=-1)
    mult = ca[:, None] * cb[None, :]
    ta = t[:, None, None] - ea[None, :, None, 0]
    tb = t[:, None, None] - eb[None, None, :, 0]
    ov = shell_overlap(np.broadcast_to(rho, ta.shape[:1] + rho.shape), ta, tb, k)
    return np.sum(ov * mult[None], axis=(1, 2))


def _separation_integral(profiles: Sequence[EventConfig], t: np.ndarray, k: SmearingKernel) -> np.ndarray:
    """int dx (nu_b - nu_b')^2 at times ``t``, shape (len(t), B, B)."""
    B = len(profiles)
    gram = np.empty((np.size(t), B, B))
    for i in range(B):
        for j in range(i, B):
            g = pair_overlap_integral(profiles[i], profiles[j], t, k)
            gram[:, i, j] = gram[:, j, i] = g
    diag = np.einsum("tii->ti", gram)
    out = diag[:, :, None] + diag[:, None, :] - 2.0 * gram
    idx = np.arange(B)
    out[:, idx, idx] = 0.0
    return np.maximum(out, 0.0)


def decoherence_matrix(profiles: Sequence[EventConfig], lam: float, t0: float, t1: float,
                       k: SmearingKernel, tol: float = 1e-10) -> tuple[np.ndarray, float]:
    """Exponents (Lambda / 2) int_t0^t1 dt int dx (nu_b - nu_b')^2.

    The spatial integral is exact up to one-dimensional quadrature (see
    :func:`rcsl.kernels.shell_overlap`); the time integral is adaptive, split
    at every event time. Returns the matrix and an absolute error estimate.
    """
    B = len(profiles)
    if lam == 0 or t0 == t1:
        return np.zeros((B, B)), 0.0
    times = np.unique(np.concatenate([c.events[:, 0] for c in profiles if not c.is_vacuum] or [np.empty(0)]))
    lo, hi = min(t0, t1), max(t0, t1)
    pts = [p for p in times if lo < p < hi]

    def fn(t):
        return _separation_integral(profiles, np.array([t]), k)[0]

    val, err = quad_vec(fn, lo, hi, epsabs=0.0, epsrel=tol, points=pts or None, limit=2000)
    sign = 1.0 if t1 >= t0 else -1.0
    return sign * 0.5 * lam * val, 0.5 * abs(lam) * float(err)


def density_matrix_evolve(rho0: DensityMatrixLR, profiles: Sequence[EventConfig], lam: float,
                          slab: tuple[float, float], k: SmearingKernel, tol: float = 1e-10) -> DensityMatrixLR:
    """Propagate a density matrix across the slab ``(t0, t1)``.

    Off-diagonal entries decay by exp[-(Lambda / 2) int dx (nu_b - nu_b')^2];
    diagonal entries are left untouched.
    """
    if len(profiles) != rho0.matrix.shape[0]:
        raise ValueError("need one profile per branch")
    if lam < 0:
        raise ValueError("Lambda must be non-negative")
    E, _ = decoherence_matrix(profiles, lam, slab[0], slab[1], k, tol)
    m = rho0.matrix * np.exp(-E)
    np.fill_diagonal(m, np.diag(rho0.matrix))
    return DensityMatrixLR(rho0.labels, m, float(slab[1]))


def lindblad_check(rho: DensityMatrixLR, profiles: Sequence[EventConfig], lam: float, t: float,
                   dt: float, k: SmearingKernel) -> LindbladResidual:
    """Compare a centred finite difference of rho with the master equation.

    The right-hand side in the branch basis is
    -(Lambda / 2) int dx (nu_b(x, t) - nu_b'(x, t))^2 rho_bb'.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    at_t = DensityMatrixLR(rho.labels, rho.matrix, t)
    fwd = density_matrix_evolve(at_t, profiles, lam, (t, t + dt), k, tol=1e-13).matrix
    bwd = density_matrix_evolve(at_t, profiles, lam, (t, t - dt), k, tol=1e-13).matrix
    fd = (fwd - bwd) / (2.0 * dt)
    rhs = -0.5 * lam * _separation_integral(profiles, np.array([t]), k)[0] * rho.matrix
    B = rho.matrix.shape[0]
    off = ~np.eye(B, dtype=bool)
    diag_abs = float(np.max(np.abs(np.diag(fd)))) if B else 0.0
    if lam == 0:
        return LindbladResidual(0.0, diag_abs)
    num = np.abs(fd - rhs)[off]
    den = np.abs(rhs)[off]
    scale = np.max(np.abs(rho.matrix)) * lam
    rel = np.where(den > 0, num / np.maximum(den, 1e-300), num / max(scale, 1e-300))
    return LindbladResidual(float(np.max(rel)) if rel.size else 0.0, diag_abs)


# ------------------------------------------------- decoherence exponent

_DECOHERENCE_METHODS = ("full", "small-ell", "large-ell", "direct", "overlap-approx")


def _overlap_time_integral(rho: np.ndarray, T: float, k: SmearingKernel, nt: int, nu: int) -> np.ndarray:
    """K(rho) = int_0^T dt O(rho, t, t) for an array of distances."""
    l = k.ell
    out = np.empty(rho.size)
    for i, r in enumerate(rho):
        scale = min(l, l * l / max(r, 1e-300)) / 4.0
        br = set(geometric_breaks(0.0, T, scale).tolist())
        for c in (0.5 * r, 0.5 * r + scale, max(0.5 * r - scale, 0.0)):
            if 0.0 < c < T:
                br.add(c)
        t, w = panel_rule(sorted(br), nt)
        out[i] = np.dot(w, shell_overlap(r, t, t, k, nodes=nu))
    return out


def _duffy_cube(func, lo: np.ndarray, hi: np.ndarray, corner: np.ndarray, n: int) -> float:
    """Integrate over a box with a possible 1/|z - corner| singularity at a corner."""
    x, w = gauss_legendre(n)
    W, A, B = (g.ravel() for g in np.meshgrid(x, x, x, indexing="ij"))
    ww = (w[:, None, None] * w[None, :, None] * w[None, None, :]).ravel()
    far = np.where(np.isclose(corner, lo), hi, lo)
    e = far - corner
    total = 0.0
    for axis in range(3):
        xi = np.empty((W.size, 3))
        others = [a for a in range(3) if a != axis]
        xi[:, axis] = W
        xi[:, others[0]] = W * A
        xi[:, others[1]] = W * B
        z = corner + xi * e
        total += abs(np.prod(e)) * np.sum(ww * W**2 * func(z))
    return total


def _tensor_cube(func, lo: np.ndarray, hi: np.ndarray, n: int) -> float:
    x, w = gauss_legendre(n)
    pts = [lo[i] + (hi[i] - lo[i]) * x for i in range(3)]
    wts = [(hi[i] - lo[i]) * w for i in range(3)]
    g = np.stack([a.ravel() for a in np.meshgrid(*pts, indexing="ij")], axis=1)
    ww = (wts[0][:, None, None] * wts[1][None, :, None] * wts[2][None, None, :]).ravel()
    return float(np.sum(ww * func(g)))


def _autocorrelation_integral(K, L: float, shift: np.ndarray, n: int) -> float:
    """int over [-L, L]^3 of prod(L - |z_i|) K(|z + shift|)."""
    p = -np.asarray(shift, dtype=float)

    def func(z):
        return np.prod(L - np.abs(z), axis=1) * K(np.linalg.norm(z - p, axis=1))

    splits = []
    for i in range(3):
        s = {-L, 0.0, L}
        if -L < p[i] < L:
            s.add(float(p[i]))
        splits.append(sorted(s))
    total = 0.0
    for a0, a1 in zip(splits[0][:-1], splits[0][1:]):
        for b0, b1 in zip(splits[1][:-1], splits[1][1:]):
            for c0, c1 in zip(splits[2][:-1], splits[2][1:]):
                lo = np.array([a0, b0, c0])
                hi = np.array([a1, b1, c1])
                corners = np.array([[u, v, s] for u in (a0, a1) for v in (b0, b1) for s in (c0, c1)])
                hit = np.all(np.isclose(corners, p), axis=1)
                if np.any(hit):
                    total += _duffy_cube(func, lo, hi, corners[np.argmax(hit)], n)
                else:
                    total += _tensor_cube(func, lo, hi, n)
    return total


def _k_spline(rmin: float, rmax: float, d: float, L: float, T: float, k: SmearingKernel,
              per_decade: int, nt: int, nu: int):
    lo = max(rmin, 1e-12)
    grid = np.geomspace(lo, rmax, max(8, int(per_decade * math.log10(rmax / lo)) + 1))
    if d > 0:
        a = max(d - math.sqrt(3.0) * L, lo)
        grid = np.union1d(grid, np.linspace(a, d + math.sqrt(3.0) * L, 4 * per_decade))
    vals = _overlap_time_integral(grid, T, k, nt, nu)
    spline = CubicSpline(np.log(grid), grid * vals)
    K0 = vals[0]

    def K(r):
        r = np.asarray(r, dtype=float)
        rc = np.clip(r, lo, rmax)
        out = spline(np.log(rc)) / rc
        return np.where(r < lo, K0, out)

    return K, grid.size


def _full_adaptive(clump: ClumpSpec, k: SmearingKernel, T: float, lam: float, tol: float) -> QuadResult:
    L = clump.side
    d = clump.distance
    D = clump.density
    rmax = d + math.sqrt(3.0) * L
    rmin = 1e-4 * min(k.ell, k.ell**2 / T, L)
    levels = [(16, 12, 16, 10), (24, 16, 24, 14)]
    values, evals = [], 0
    for per_decade, nt, nu, nbox in levels:
        K, npts = _k_spline(rmin, rmax, d, L, T, k, per_decade, nt, nu)
        self_term = _autocorrelation_integral(K, L, np.zeros(3), nbox)
        cross = _autocorrelation_integral(K, L, clump.separation, nbox)
        values.append(lam * D**2 * (self_term - cross))
        evals += npts * nt * 40 * nu + 2 * 8 * 3 * nbox**3
    value = values[-1]
    err = abs(values[-1] - values[-2])
    out = QuadResult(value, err, evals, "adaptive", {"levels": len(levels)})
    if value != 0 and err > max(tol, 1e-3) * abs(value):
        raise ConvergenceError("clump decoherence refinement did not settle", out)
    return out


def _check_budget(budget: int | None) -> int:
    b = DEFAULT_MC_BUDGET if budget is None else int(budget)
    if b < 2:
        raise ValueError("budget must be at least 2")
    return b


def _full_mc(clump: ClumpSpec, k: SmearingKernel, T: float, lam: float, seed: int,
             budget: int | None, threads: int) -> QuadResult:
    """Monte Carlo over (t, z1, z2, u1, u2) of the exact pair reduction."""
    b = _check_budget(budget)
    L, D, V = clump.side, clump.density, clump.volume
    l2 = k.ell**2
    sep = clump.separation
    sizes = [MC_CHUNK] * (b // MC_CHUNK) + ([b % MC_CHUNK] if b % MC_CHUNK else [])
    gens = spawn_generators(seed, len(sizes), key=(11,))

    def chunk(i):
        rng, n = gens[i], sizes[i]
        t = T * rng.random(n)
        z = L * (rng.random((n, 3)) - rng.random((n, 3)))
        u1 = rng.gamma(2.0, l2, n)
        u2 = rng.gamma(2.0, l2, n)
        r1 = np.sqrt(u1 + t * t)
        r2 = np.sqrt(u2 + t * t)
        lo, hi = np.abs(r1 - r2), r1 + r2
        za = np.linalg.norm(z, axis=1)
        zb = np.linalg.norm(z + sep, axis=1)
        ga = np.where((za > lo) & (za < hi), 1.0 / np.maximum(za, 1e-300), 0.0)
        gb = np.where((zb > lo) & (zb < hi), 1.0 / np.maximum(zb, 1e-300), 0.0)
        v = ga - gb
        m = math.fsum(v) / n
        return m, math.fsum((v - m) ** 2) / max(n - 1, 1) / n, n

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            stats = list(pool.map(chunk, range(len(sizes))))
    else:
        stats = [chunk(i) for i in range(len(sizes))]
    n = sum(s[2] for s in stats)
    mean = math.fsum(s[0] * s[2] for s in stats) / n
    var = math.fsum(s[1] * s[2] ** 2 for s in stats) / n**2
    pref = lam * D**2 * T * V**2 * math.pi * l2**2 / 2.0
    return QuadResult(pref * mean, pref * math.sqrt(var), n, "monte-carlo", {"chunks": len(sizes)})


def _point_clump(clump: ClumpSpec, k: SmearingKernel, T: float, lam: float, tol: float) -> QuadResult:
    """Lambda n^2 int_0^T dt [N(t) - O(d, t, t)] for point-like clumps."""
    d = clump.distance
    nt = [0]

    def g(t):
        nt[0] += 1
        return float(shell_norm(t, k, nodes=32) - shell_overlap(d, t, t, k, nodes=32))

    from scipy.integrate import quad
    pts = [p for p in (0.5 * d,) if 0 < p < T]
    val, err = quad(g, 0.0, T, points=pts or None, epsabs=0.0, epsrel=tol, limit=400)
    pref = lam * clump.n**2
    return QuadResult(pref * val, pref * err, max(nt[0], 1), "adaptive", {})


def _self_term(clump: ClumpSpec, k: SmearingKernel, T: float, lam: float) -> QuadResult:
    L = clump.side
    rmax = math.sqrt(3.0) * L
    rmin = 1e-4 * min(k.ell, k.ell**2 / T, L)
    vals = []
    for per_decade, nt, nu, nbox in [(16, 12, 16, 10), (24, 16, 24, 14)]:
        K, _ = _k_spline(rmin, rmax, 0.0, L, T, k, per_decade, nt, nu)
        vals.append(lam * clump.density**2 * _autocorrelation_integral(K, L, np.zeros(3), nbox))
    return QuadResult(vals[-1], abs(vals[-1] - vals[-2]), 1, "adaptive", {"same_branch_only": True})


def _overlap_approx(clump: ClumpSpec, k: SmearingKernel, T: float, lam: float) -> QuadResult:
    """Same-branch term with the large-time shell overlap replaced by
    T (pi a^2 / 4)(z^2 + 2 a^2) exp(-z^2 / a^2) / z, integrated over the
    actual cube."""
    a2 = k.ell**2

    def K(r):
        r = np.maximum(r, 1e-300)
        return T * math.pi * a2 / 4.0 * (r * r + 2.0 * a2) * np.exp(-r * r / a2) / r

    val = lam * clump.density**2 * _autocorrelation_integral(K, clump.side, np.zeros(3), 24)
    return QuadResult(val, 1e-10 * abs(val), 1, "adaptive", {"same_branch_only": True})


def _direct(clump: ClumpSpec, k: SmearingKernel, T: float, lam: float, seed: int,
            budget: int | None, tol: float, threads: int) -> QuadResult:
    """(Lambda / 2) int dt dx (F_L - F_R)^2 with both profiles evaluated pointwise."""
    cL = 0.5 * clump.separation
    cR = -0.5 * clump.separation
    R = math.sqrt(T**2 + kernel_cutoff_sq(k, 1e-10)) + math.sqrt(3.0) * clump.side / 2.0
    lo = np.minimum(cL, cR) - R
    hi = np.maximum(cL, cR) + R
    dom = Domain4(T=T, box=tuple(zip(lo, hi)))
    # fixed order chosen so the kernel varies little across one node spacing
    nodes = int(min(24, max(6, math.ceil(4.0 * clump.side * (1.0 + T) / k.ell**2))))

    def f(t, x):
        pts = np.column_stack([t, x])
        FL = clump_profile(pts, clump, cL, k, nodes=nodes)
        FR = clump_profile(pts, clump, cR, k, nodes=nodes)
        return 0.5 * lam * (FL - FR) ** 2

    return integrate(f, dom, tol=tol, seed=seed, method="stratified-mc", budget=_check_budget(budget),
                     threads=threads, strict=False)


def decoherence_exponent(clump: ClumpSpec, k: SmearingKernel, T: float, lam: float, *,
                         method: str = "full", engine: str = "adaptive", tol: float = 1e-4,
                         seed: int = 0, budget: int | None = None, threads: int = 1,
                         strict: bool = False) -> QuadResult:
    """Decoherence exponent of a clump superposed at two locations.

    I(T) = (Lambda / 2) int_0^T dt int dx [F_L - F_R]^2, where F is the
    smeared density of the uniform cubic ``clump`` and the two copies are
    displaced by ``clump.separation``. Expanding the square and using the
    exact shell overlap O of two kernel shells,

        I = Lambda D^2 int_0^T dt int d^3z A(z) [O(|z|, t) - O(|z + d|, t)]

    with A(z) = prod_i (side - |z_i|)_+ the cube autocorrelation.

    Parameters
    ----------
    method : str
        ``full``: the expression above. With ``engine="adaptive"`` the time
        integral is tabulated as a function of distance and the z integral
        is done with singularity-adapted tensor rules, refined once for an
        error estimate; ``engine="monte-carlo"`` samples (t, z1, z2, u1, u2)
        directly. ``small-ell``: the same-branch term only, exact.
        ``large-ell``: both clumps shrunk to points, exact.
        ``overlap-approx``: same-branch term with the long-time asymptotic
        overlap kernel, for diagnosing where closed forms deviate.
        ``direct``: Monte Carlo of the (t, x) integral with pointwise clump
        profiles; feasible only at small scale.
    strict : bool
        For the sampling engines, raise :class:`BudgetExhausted` when the
        relative error after ``budget`` samples still exceeds ``tol``.
    """
    if k.spatial_dim != 3:
        raise ValueError("clump decoherence is defined in three spatial dimensions")
    if method not in _DECOHERENCE_METHODS:
        raise ValueError(f"method must be one of {_DECOHERENCE_METHODS}")
    if not T >= 0:
        raise ValueError("T must be non-negative")
    if lam < 0:
        raise ValueError("Lambda must be non-negative")
    if T == 0 or lam == 0 or (clump.distance == 0 and method not in ("small-ell", "overlap-approx")):
        return QuadResult(0.0, 0.0, 1, "adaptive", {})
    if method == "small-ell":
        if clump.side < 3.0 * k.ell or T < 10.0 * k.ell or clump.distance < 3.0 * clump.side:
            warnings.warn("same-branch reduction needs l << side << d and T >> l", RegimeWarning, stacklevel=2)
        return _self_term(clump, k, T, lam)
    if method == "overlap-approx":
        return _overlap_approx(clump, k, T, lam)
    if method == "large-ell":
        if clump.side > 0.1 * k.ell:
            warnings.warn("point-clump reduction needs side << l", RegimeWarning, stacklevel=2)
        return _point_clump(clump, k, T, lam, min(tol, 1e-8))
    if method == "direct":
        return _require(_direct(clump, k, T, lam, seed, budget, tol, threads), tol, strict)
    if engine == "adaptive":
        return _full_adaptive(clump, k, T, lam, tol)
    if engine == "monte-carlo":
        return _require(_full_mc(clump, k, T, lam, seed, budget, threads), tol, strict)
    raise ValueError("engine must be 'adaptive' or 'monte-carlo'")


def _require(res: QuadResult, tol: float, strict: bool) -> QuadResult:
    if strict and res.error_estimate > tol * abs(res.value):
        rel = res.error_estimate / abs(res.value) if res.value else math.inf
        raise BudgetExhausted(f"relative error {rel:.3g} after {res.evaluations} samples exceeds {tol:g}", res)
    return res
