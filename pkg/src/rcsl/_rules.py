"""Fixed quadrature rules, compensated reductions and random streams.

Small shared helpers used by several modules. Nothing here knows about the
collapse model itself.
"""
from __future__ import annotations

import math
from functools import lru_cache
from typing import Sequence

import numpy as np


@lru_cache(maxsize=64)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def panel_rule(breaks: Sequence[float] | np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre rule over consecutive breakpoints.

    Breakpoints are sorted and de-duplicated; empty panels are dropped.
    """
    b = np.unique(np.asarray(breaks, dtype=float))
    x01, w01 = gauss_legendre(n)
    if b.size < 2:
        return np.empty(0), np.empty(0)
    lo, hi = b[:-1], b[1:]
    h = hi - lo
    nodes = lo[:, None] + h[:, None] * x01[None, :]
    weights = h[:, None] * w01[None, :]
    return nodes.ravel(), weights.ravel()


def batched_panels(lo: np.ndarray, hi: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes for a batch of intervals ``[lo_i, hi_i]``.

    Returns arrays of shape ``lo.shape + (n,)``. Reversed intervals get zero
    weight.
    """
    x01, w01 = gauss_legendre(n)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    h = np.maximum(hi - lo, 0.0)
    nodes = lo[..., None] + h[..., None] * x01
    weights = h[..., None] * w01
    return nodes, weights


def geometric_breaks(lo: float, hi: float, scale: float, ratio: float = 2.0) -> np.ndarray:
    """Breakpoints on ``[lo, hi]`` fine near ``lo`` and geometric beyond ``scale``."""
    pts = [lo]
    step = scale
    x = lo + step
    while x < hi:
        pts.append(x)
        step *= ratio
        x = lo + step
    pts.append(hi)
    return np.unique(np.asarray(pts, dtype=float))


def fsum(values) -> float:
    """Compensated sum, insensitive to summation order."""
    return math.fsum(np.asarray(values, dtype=float).ravel())


def spawn_generators(seed: int, count: int, key: Sequence[int] = ()) -> list[np.random.Generator]:
    """Independent Philox generators derived from a master seed.

    The ``key`` distinguishes unrelated consumers of one master seed, so
    different computations never share a stream.
    """
    root = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return [np.random.Generator(np.random.Philox(ss)) for ss in root.spawn(count)]
