"""Integration engines for integrands concentrated on light-cone shells.

Three engines share one result type, :class:`QuadResult`:

``adaptive``
    Deterministic adaptive cubature (Genz-Malik in two or more dimensions,
    Gauss-Kronrod in one) from :func:`scipy.integrate.cubature`. Radially
    symmetric integrands are integrated in shell coordinates (t, u) with
    u = r^2 - t^2, split at the light cone u = 0.
``monte-carlo``
    Plain or importance-sampled Monte Carlo. Samples are generated in fixed
    chunks, each chunk on its own Philox stream spawned from the master seed,
    so the result does not depend on how many worker threads run.
``stratified-mc``
    Monte Carlo stratified on a grid over the first two coordinates.

Partial sums are reduced with compensated summation, so results do not depend
on reduction order.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator, NamedTuple, Sequence

import numpy as np
from scipy.integrate import cubature
from scipy.special import gammainc, gammaincinv

from ._rules import spawn_generators
from .errors import BudgetExhausted, ConvergenceError
from .kernels import SmearingKernel, kernel_cutoff_sq

__all__ = [
    "QuadResult",
    "Domain4",
    "ShellSamples",
    "integrate",
    "hyperbolic_reduce",
    "lightcone_shell_sampler",
    "DEFAULT_ADAPTIVE_BUDGET",
    "DEFAULT_MC_BUDGET",
    "MC_CHUNK",
]

DEFAULT_ADAPTIVE_BUDGET = 10_000_000
DEFAULT_MC_BUDGET = 1_000_000
MC_CHUNK = 1 << 16
METHODS = ("adaptive", "monte-carlo", "stratified-mc")


@dataclass(frozen=True)
class QuadResult:
    """Outcome of a numerical integral.

    Attributes
    ----------
    value : float
    error_estimate : float
        One standard error for Monte Carlo, a heuristic bound for adaptive
        rules.
    evaluations : int
        Integrand evaluations (or samples) used.
    method : str
        One of ``adaptive``, ``monte-carlo``, ``stratified-mc``.
    meta : dict
        Extra scalar information such as the truncation radius.
    """

    value: float
    error_estimate: float
    evaluations: int
    method: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.error_estimate >= 0:
            raise ValueError("error_estimate must be non-negative")
        if self.evaluations < 1:
            raise ValueError("evaluations must be at least 1")
        if self.method not in METHODS:
            raise ValueError(f"unknown method tag {self.method!r}")

    @property
    def relative_error(self) -> float:
        return self.error_estimate / abs(self.value) if self.value else math.inf

    def scaled(self, factor: float) -> "QuadResult":
        """The same result multiplied by a constant."""
        return QuadResult(self.value * factor, self.error_estimate * abs(factor),
                          self.evaluations, self.method, dict(self.meta))


@dataclass(frozen=True)
class Domain4:
    """Integration region over time and space.

    Either ``box`` (per-axis spatial bounds) or ``r_max`` (a ball, for radially
    symmetric integrands) must be given. ``shell`` optionally restricts the
    signed interval |x|^2 - t^2 to ``[s2_min, s2_max]``.

    Integrands receive ``(t, x)`` with ``x`` of shape ``(N, spatial_dim)`` on
    box domains and ``(t, r)`` on radial domains.
    """

    T: float
    t0: float = 0.0
    spatial_dim: int = 3
    box: tuple | None = None
    r_max: float | None = None
    shell: tuple[float, float] | None = None

    def __post_init__(self):
        if not self.T > self.t0:
            raise ValueError("need T > t0")
        if self.spatial_dim not in (1, 3):
            raise ValueError("spatial_dim must be 1 or 3")
        if (self.box is None) == (self.r_max is None):
            raise ValueError("give exactly one of box or r_max")
        if self.box is not None:
            box = tuple((float(a), float(b)) for a, b in self.box)
            if len(box) != self.spatial_dim or any(b <= a for a, b in box):
                raise ValueError("box needs one increasing (lo, hi) pair per spatial axis")
            object.__setattr__(self, "box", box)
        elif not self.r_max > 0:
            raise ValueError("r_max must be positive")
        if self.shell is not None:
            lo, hi = (float(v) for v in self.shell)
            if not hi > lo:
                raise ValueError("shell needs s2_min < s2_max")
            object.__setattr__(self, "shell", (lo, hi))

    @property
    def radial(self) -> bool:
        return self.box is None

    @property
    def duration(self) -> float:
        return self.T - self.t0

    @classmethod
    def for_kernel(cls, T: float, k: SmearingKernel, *, t0: float = 0.0,
                   shell: tuple[float, float] | None = None, rel: float = 1e-12) -> "Domain4":
        """Radial domain whose cutoff clears every kernel shell up to time T."""
        tmax = max(abs(T), abs(t0))
        r = math.sqrt(tmax**2 + kernel_cutoff_sq(k, rel))
        return cls(T=T, t0=t0, spatial_dim=k.spatial_dim, r_max=r, shell=shell)

    def four_volume(self) -> float:
        """Exact 4-volume when no shell restriction is present."""
        if self.shell is not None:
            raise ValueError("four_volume ignores shells; integrate an indicator instead")
        if self.radial:
            ball = (4.0 / 3.0) * math.pi * self.r_max**3 if self.spatial_dim == 3 else 2.0 * self.r_max
            return self.duration * ball
        return self.duration * math.prod(b - a for a, b in self.box)

    def shell_mask(self, t: np.ndarray, r2: np.ndarray) -> np.ndarray:
        if self.shell is None:
            return np.ones(np.shape(t), dtype=bool)
        s2 = r2 - t**2
        return (s2 >= self.shell[0]) & (s2 <= self.shell[1])


class ShellSamples(NamedTuple):
    """A chunk of weighted space-time points (time first)."""

    t: np.ndarray
    x: np.ndarray
    weight: np.ndarray


def _measure(dim: int, r: np.ndarray) -> np.ndarray:
    return 4.0 * math.pi * r**2 if dim == 3 else np.full_like(r, 2.0)


# ---------------------------------------------------------------- adaptive

def _radial_pieces(dom: Domain4, t: np.ndarray):
    """Interior (r < |t|) and exterior (r > |t|) integration limits."""
    t2 = t**2
    s_lo = -np.inf if dom.shell is None else dom.shell[0]
    s_hi = np.inf if dom.shell is None else dom.shell[1]
    r2max = dom.r_max**2
    # interior, parametrized by r
    a_in = np.sqrt(np.clip(t2 + s_lo, 0.0, None)) if np.isfinite(s_lo) else np.zeros_like(t)
    b_in = np.sqrt(np.clip(np.minimum(t2 + min(s_hi, 0.0), r2max), 0.0, None))
    a_in = np.minimum(a_in, b_in)
    # exterior, parametrized by u = r^2 - t^2
    a_out = np.maximum(max(s_lo, 0.0), 0.0) * np.ones_like(t)
    b_out = np.clip(np.minimum(s_hi, r2max - t2), 0.0, None)
    a_out = np.minimum(a_out, b_out)
    return a_in, b_in, a_out, b_out


def _adaptive(f, dom: Domain4, tol: float, atol: float, budget: int, workers: int) -> QuadResult:
    count = [0]
    dim = dom.spatial_dim

    if dom.radial:
        def integrand(p):
            t, v = p[:, 0], p[:, 1]
            a_in, b_in, a_out, b_out = _radial_pieces(dom, t)
            r_in = a_in + (b_in - a_in) * v
            u = a_out + (b_out - a_out) * v
            r_out = np.sqrt(u + t**2)
            count[0] += 2 * t.size
            g_in = np.asarray(f(t, r_in), dtype=float) * _measure(dim, r_in) * (b_in - a_in)
            jac = 2.0 * math.pi * r_out if dim == 3 else 1.0 / np.maximum(r_out, 1e-300)
            g_out = np.asarray(f(t, r_out), dtype=float) * jac * (b_out - a_out)
            return np.where(b_in > a_in, g_in, 0.0) + np.where(b_out > a_out, g_out, 0.0)

        lo, hi = [dom.t0, 0.0], [dom.T, 1.0]
    else:
        def integrand(p):
            t, x = p[:, 0], p[:, 1:]
            count[0] += t.size
            val = np.asarray(f(t, x), dtype=float)
            return np.where(dom.shell_mask(t, np.sum(x**2, axis=1)), val, 0.0)

        lo = [dom.t0] + [a for a, _ in dom.box]
        hi = [dom.T] + [b for _, b in dom.box]

    ndim = len(lo)
    rule = "gk21" if ndim == 1 else "genz-malik"
    per_region = 21 if ndim == 1 else 2**ndim + 2 * ndim**2 + 2 * ndim + 1
    max_sub = max(1, budget // (per_region * 2**ndim))
    res = cubature(integrand, lo, hi, rule=rule, rtol=tol, atol=atol,
                   max_subdivisions=max_sub, workers=1 if workers <= 1 else workers)
    value = float(np.squeeze(res.estimate))
    err = float(np.squeeze(res.error))
    out = QuadResult(value, abs(err), max(1, count[0]), "adaptive",
                     {"regions": len(res.regions), "converged": res.status == "converged",
                      **({"r_max": dom.r_max} if dom.radial else {})})
    if res.status != "converged":
        raise ConvergenceError(f"adaptive cubature stopped at error {err:.3g} (target rtol {tol:g})", out)
    return out


# ------------------------------------------------------------ Monte Carlo

def _strata(n: int, dims: int = 2) -> int:
    return max(1, min(32, int((n / 4) ** (1.0 / dims))))


def _uniform_chunk(f, dom: Domain4, rng: np.random.Generator, n: int, stratified: bool):
    """Return (values, stratum ids, stratum volumes) for one chunk."""
    dim = dom.spatial_dim
    if stratified:
        K = _strata(n)
        n_per = n // (K * K)
        ids = np.repeat(np.arange(K * K), n_per)
        rest = n - ids.size
        if rest:
            ids = np.concatenate([ids, np.arange(rest) % (K * K)])
        a = (ids // K + rng.random(n)) / K
        b = (ids % K + rng.random(n)) / K
    else:
        K = 1
        ids = np.zeros(n, dtype=int)
        a, b = rng.random(n), rng.random(n)
    t = dom.t0 + dom.duration * a
    if dom.radial:
        t2 = t**2
        if dom.shell is None:
            r_lo = np.zeros(n)
            r_hi = np.full(n, dom.r_max)
        else:
            r_lo = np.sqrt(np.clip(t2 + dom.shell[0], 0.0, None))
            r_hi = np.sqrt(np.clip(np.minimum(t2 + dom.shell[1], dom.r_max**2), 0.0, None))
            r_lo = np.minimum(r_lo, r_hi)
        r = r_lo + (r_hi - r_lo) * b
        w = dom.duration * (r_hi - r_lo) * _measure(dim, r)
        vals = np.asarray(f(t, r), dtype=float) * w
    else:
        lo = np.array([p for p, _ in dom.box])
        hi = np.array([q for _, q in dom.box])
        x = lo + (hi - lo) * rng.random((n, dim))
        x[:, 0] = lo[0] + (hi[0] - lo[0]) * b
        vol = dom.duration * float(np.prod(hi - lo))
        vals = np.asarray(f(t, x), dtype=float) * vol
        vals = np.where(dom.shell_mask(t, np.sum(x**2, axis=1)), vals, 0.0)
    return vals, ids, K * K


def _chunk_stats(vals: np.ndarray, ids: np.ndarray, nstrata: int):
    """Stratified estimate and its variance for one chunk."""
    if nstrata == 1:
        n = vals.size
        mean = math.fsum(vals) / n
        var = math.fsum((vals - mean) ** 2) / max(n - 1, 1) / n
        return mean, var, n
    est, var = 0.0, 0.0
    parts_e, parts_v = [], []
    for s in range(nstrata):
        v = vals[ids == s]
        m = math.fsum(v) / v.size
        parts_e.append(m / nstrata)
        parts_v.append(math.fsum((v - m) ** 2) / max(v.size - 1, 1) / v.size / nstrata**2)
    est = math.fsum(parts_e)
    var = math.fsum(parts_v)
    return est, var, vals.size


def _chunk_sizes(budget: int) -> list[int]:
    full, rest = divmod(int(budget), MC_CHUNK)
    return [MC_CHUNK] * full + ([rest] if rest else [])


def _mc(f, dom: Domain4, tol: float, seed: int, budget: int, threads: int, stratified: bool,
        proposal: str, kernel: SmearingKernel | None, strict: bool, min_chunks: int) -> QuadResult:
    sizes = _chunk_sizes(budget)
    key = (2 if stratified else 1, 1 if proposal == "shell" else 0)
    gens = spawn_generators(seed, len(sizes), key=key)

    def run(i):
        rng = gens[i]
        if proposal == "shell":
            s = _shell_draw(dom, kernel, rng, sizes[i], None)
            if dom.radial:
                val = np.asarray(f(s.t, np.sqrt(np.sum(s.x**2, axis=1))), dtype=float)
                mask = np.sum(s.x**2, axis=1) <= dom.r_max**2
            else:
                val = np.asarray(f(s.t, s.x), dtype=float)
                lo = np.array([p for p, _ in dom.box])
                hi = np.array([q for _, q in dom.box])
                mask = np.all((s.x >= lo) & (s.x <= hi), axis=1)
            vals = np.where(mask, val * s.weight, 0.0)
            return _chunk_stats(vals, np.zeros(vals.size, dtype=int), 1)
        vals, ids, ns = _uniform_chunk(f, dom, rng, sizes[i], stratified)
        return _chunk_stats(vals, ids, ns)

    stats: list[tuple[float, float, int]] = []
    method = "stratified-mc" if stratified else "monte-carlo"

    def summary():
        n = sum(s[2] for s in stats)
        est = math.fsum(s[0] * s[2] for s in stats) / n
        var = math.fsum(s[1] * s[2] ** 2 for s in stats) / n**2
        return est, math.sqrt(max(var, 0.0)), n

    done = False
    batch = max(1, int(threads))
    pool = ThreadPoolExecutor(max_workers=batch) if batch > 1 else None
    try:
        for start in range(0, len(sizes), batch):
            idx = range(start, min(start + batch, len(sizes)))
            results = list(pool.map(run, idx)) if pool else [run(i) for i in idx]
            for r in results:
                stats.append(r)
                if len(stats) >= min_chunks:
                    est, err, _ = summary()
                    if err <= tol * abs(est):
                        done = True
                        break
            if done:
                break
    finally:
        if pool:
            pool.shutdown()
    est, err, n = summary()
    meta = {"converged": bool(done), "proposal": proposal, "chunks": len(stats)}
    if dom.radial:
        meta["r_max"] = dom.r_max
    out = QuadResult(est, err, n, method, meta)
    if not done and strict:
        raise BudgetExhausted(f"Monte Carlo relative error {err / abs(est) if est else math.inf:.3g} "
                               f"above {tol:g} after {n} samples", out)
    return out


def integrate(f: Callable, dom: Domain4, tol: float = 1e-6, seed: int = 0, *,
              method: str = "adaptive", budget: int | None = None, threads: int = 1,
              proposal: str = "uniform", kernel: SmearingKernel | None = None,
              atol: float = 0.0, strict: bool = True, min_chunks: int = 4) -> QuadResult:
    """Integrate ``f`` over ``dom``.

    Parameters
    ----------
    f : callable
        ``f(t, x)`` on box domains, ``f(t, r)`` on radial domains; vectorized.
    dom : Domain4
    tol : float
        Relative tolerance. Monte Carlo stops early once its standard error
        falls below ``tol * |value|``, checked after each chunk in a fixed
        order.
    seed : int
        Master seed for the Monte Carlo engines.
    method : {"adaptive", "monte-carlo", "stratified-mc"}
    budget : int, optional
        Evaluation budget; defaults to 10^7 (adaptive) or 10^6 (Monte Carlo).
    threads : int
        Worker threads. Does not change the result.
    proposal : {"uniform", "shell"}
        Monte Carlo proposal; ``shell`` draws from the kernel's light-cone
        shell and needs ``kernel``.
    atol : float
        Absolute tolerance for the adaptive engine.
    strict : bool
        Raise :class:`ConvergenceError` when the tolerance is missed. When
        false the result is returned with ``meta["converged"]`` set to False.

    Raises
    ------
    ConvergenceError
        Tolerance not met within budget; ``partial`` holds the estimate. The
        Monte Carlo engines raise the subclass :class:`BudgetExhausted`.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    if proposal not in ("uniform", "shell"):
        raise ValueError("proposal must be 'uniform' or 'shell'")
    if proposal == "shell" and kernel is None:
        raise ValueError("the shell proposal needs a kernel")
    if method == "adaptive":
        b = DEFAULT_ADAPTIVE_BUDGET if budget is None else int(budget)
        try:
            return _adaptive(f, dom, tol, atol, b, threads)
        except ConvergenceError as exc:
            if strict:
                raise
            return exc.partial
    b = DEFAULT_MC_BUDGET if budget is None else int(budget)
    if b < 2:
        raise ValueError("Monte Carlo budget must be at least 2")
    return _mc(f, dom, tol, seed, b, threads, method == "stratified-mc", proposal, kernel,
               strict, min_chunks)


# ---------------------------------------------------------- shell sampler

def _shell_range(dom: Domain4, k: SmearingKernel) -> tuple[float, float]:
    ucut = kernel_cutoff_sq(k, 1e-12)
    if dom.shell is None:
        return 0.0, ucut
    lo, hi = dom.shell
    return max(lo, 0.0), min(hi, ucut) if math.isfinite(hi) else ucut


def _u_density(u: np.ndarray, lo: float, hi: float, l2: float) -> np.ndarray:
    norm = gammainc(2.0, hi / l2) - gammainc(2.0, lo / l2)
    inside = (u > lo) & (u <= hi)
    return np.where(inside, u / l2**2 * np.exp(-u / l2) / norm, 0.0)


def _shell_draw(dom: Domain4, k: SmearingKernel, rng: np.random.Generator, n: int,
                centers: np.ndarray | None) -> ShellSamples:
    dim = dom.spatial_dim
    if k.spatial_dim != dim:
        raise ValueError("kernel and domain dimensions differ")
    l2 = k.ell**2
    lo, hi = _shell_range(dom, k)
    if not hi > lo:
        raise ValueError("shell restriction excludes the kernel support")
    c = np.zeros((1, 1 + dim)) if centers is None else np.atleast_2d(np.asarray(centers, dtype=float))
    pick = rng.integers(0, c.shape[0], size=n) if c.shape[0] > 1 else np.zeros(n, dtype=int)
    t = dom.t0 + dom.duration * rng.random(n)
    plo, phi = gammainc(2.0, lo / l2), gammainc(2.0, hi / l2)
    u = l2 * gammaincinv(2.0, plo + (phi - plo) * rng.random(n))
    u = np.clip(u, np.nextafter(lo, np.inf), hi)
    tau = t - c[pick, 0]
    r = np.sqrt(u + tau**2)
    if dim == 3:
        d = rng.standard_normal((n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
    else:
        d = np.where(rng.random(n) < 0.5, -1.0, 1.0)[:, None]
    x = c[pick, 1:] + r[:, None] * d
    # mixture density over all centres
    q = np.zeros(n)
    for ci in c:
        rel = x - ci[1:]
        rr = np.sqrt(np.sum(rel**2, axis=1))
        uu = rr**2 - (t - ci[0]) ** 2
        pu = _u_density(uu, lo, hi, l2)
        q += pu / (2.0 * math.pi * rr) if dim == 3 else pu * rr
    q /= c.shape[0] * dom.duration
    return ShellSamples(t, x, 1.0 / q)


def lightcone_shell_sampler(dom: Domain4, k: SmearingKernel, seed: int, *,
                            n: int = DEFAULT_MC_BUDGET, chunk: int = MC_CHUNK,
                            centers: Sequence[Sequence[float]] | None = None) -> Iterator[ShellSamples]:
    """Stream of importance-weighted points on the kernel's light-cone shells.

    Times are uniform on the domain's time range; the signed interval
    u = |x - x_c|^2 - (t - t_c)^2 to a centre event is drawn with density
    proportional to f(u) on (0, u_cut] (or the domain's shell restriction);
    the spatial direction is uniform. With several ``centers`` the proposal
    is their equal-weight mixture. Each point carries weight 1/q, so
    ``mean(g * weight)`` is an unbiased estimate of the integral of g over
    the proposal's support.

    Yields
    ------
    ShellSamples
        Chunks of at most ``chunk`` points.
    """
    sizes = [chunk] * (n // chunk) + ([n % chunk] if n % chunk else [])
    gens = spawn_generators(seed, len(sizes), key=(3,))
    c = None if centers is None else np.asarray(centers, dtype=float)
    for size, rng in zip(sizes, gens):
        yield _shell_draw(dom, k, rng, size, c)


# ----------------------------------------------------- hyperbolic reduce

def hyperbolic_reduce(g: Callable, T: float, k: SmearingKernel, *,
                      beta_max: float | Callable | None = None, s_max: float | None = None,
                      tol: float = 1e-9, budget: int | None = None) -> QuadResult:
    """Integrate over the future light-cone exterior in hyperbolic variables.

    With r = s cosh(beta) and t = s sinh(beta), so that dt dr = s ds dbeta,
    this computes

        int_0^s_max ds int_0^B(s) dbeta  g(s, beta) * s,

    where B(s) = asinh(T / s) covers 0 <= t <= T. ``g`` is the (t, r)
    integrand rewritten in (s, beta), vectorized. ``beta_max`` may replace
    B by a constant or by another callable of s. ``s_max`` defaults to the
    radius at which the kernel has fallen to 1e-12 of its peak.
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    smax = math.sqrt(kernel_cutoff_sq(k, 1e-12)) if s_max is None else float(s_max)
    meta = {"s_max": smax}
    if T == 0 and beta_max is None:
        return QuadResult(0.0, 0.0, 1, "adaptive", meta)
    if beta_max is None:
        def B(s):
            return np.arcsinh(T / np.maximum(s, 1e-300))
    elif callable(beta_max):
        B = beta_max
    else:
        const = float(beta_max)

        def B(s):
            return np.full_like(s, const)

    count = [0]

    def integrand(p):
        s, v = p[:, 0], p[:, 1]
        b = B(s)
        count[0] += s.size
        return np.asarray(g(s, v * b), dtype=float) * b * s

    b = DEFAULT_ADAPTIVE_BUDGET if budget is None else int(budget)
    res = cubature(integrand, [0.0, 0.0], [smax, 1.0], rule="genz-malik", rtol=tol,
                   max_subdivisions=max(1, b // (17 * 4)))
    out = QuadResult(float(res.estimate), abs(float(res.error)), max(1, count[0]), "adaptive",
                     {**meta, "converged": res.status == "converged"})
    if res.status != "converged":
        raise ConvergenceError("hyperbolic reduction did not converge", out)
    return out
