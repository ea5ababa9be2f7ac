"""Command-line runner with machine-readable result envelopes.

Every subcommand takes ``key=value`` overrides on top of an optional flat
config file and prints one envelope::

    {"command": ..., "parameters": {...}, "results": [{"name", "value",
     "error_estimate", "provenance"}, ...], "seed": ..., "wall_time": ...,
     "version": ...}

The ``parameters`` block is itself a valid config: passing the envelope (or
a flat file with the same keys) to ``--config`` reproduces the run.

Exit codes: 0 success, 2 usage error, 3 numerical non-convergence, 4 budget
exhaustion.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
import warnings
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from . import analytics as an
from .collapse import (BranchState, NoiseLattice, decoherence_exponent, evolve_trajectory,
                       lattice_exponent, run_ensemble, sample_noise)
from .errors import BudgetExhausted, ConvergenceError, GridResolutionError
from .kernels import ClumpSpec, EventConfig, SmearingKernel
from .scattering import (PotentialSpec, RegionQuery, TwoParticleGrid, diamond_vertices,
                         outgoing_distribution, phase_evolve, region_volume, shoelace_area,
                         two_packet_state, volume_scaling_fit)
from .wavepackets import (PacketSpec, energy_spread, group_velocity, kg_residual,
                          mass_accuracy_tradeoff, time_translate_vs_evolve)

SEED_ENV = "RCSL_SEED"
PROVENANCES = (an.PAPER, an.EXACT, an.NUMERIC)
EXIT_OK, EXIT_USAGE, EXIT_CONVERGENCE, EXIT_BUDGET = 0, 2, 3, 4


class UsageError(ValueError):
    """Invalid command, parameter name or parameter value."""


# ----------------------------------------------------------- schema

@dataclass(frozen=True)
class Param:
    """One config key: type, default and constraint."""

    type: type
    default: Any
    check: str | tuple | None = None  # "pos", "nonneg" or a tuple of choices
    help: str = ""

    def parse(self, name: str, raw: Any) -> Any:
        try:
            if self.type is bool:
                value = raw if isinstance(raw, bool) else str(raw).strip().lower() in ("1", "true", "yes", "on")
                if not isinstance(raw, bool) and str(raw).strip().lower() not in (
                        "1", "0", "true", "false", "yes", "no", "on", "off"):
                    raise ValueError
            elif self.type is int:
                f = float(raw)
                if f != int(f):
                    raise ValueError
                value = int(f)
            elif self.type is float:
                value = float(raw)
            else:
                value = str(raw)
        except (TypeError, ValueError):
            raise UsageError(f"{name}: cannot read {raw!r} as {self.type.__name__}") from None
        if self.type in (int, float) and not math.isfinite(value):
            raise UsageError(f"{name}: must be finite")
        if self.check == "pos" and not value > 0:
            raise UsageError(f"{name}: must be positive, got {value}")
        if self.check == "nonneg" and not value >= 0:
            raise UsageError(f"{name}: must be non-negative, got {value}")
        if isinstance(self.check, tuple) and value not in self.check:
            raise UsageError(f"{name}: must be one of {', '.join(map(str, self.check))}")
        return value


P = Param

SCHEMAS: dict[str, dict[str, Param]] = {
    "decoherence": {
        "regime": P(str, "small-ell", ("small-ell", "large-ell", "full"), "which comparison to run"),
        "ell": P(float, 1.0, "pos", "kernel length"),
        "side": P(float, None, "pos", "clump edge length"),
        "n": P(float, None, "pos", "particles in the clump"),
        "d": P(float, None, "nonneg", "displacement of the second location"),
        "T": P(float, None, "nonneg", "duration"),
        "Lam": P(float, 1.0, "nonneg", "collapse strength"),
        "engine": P(str, "monte-carlo", ("adaptive", "monte-carlo"), "engine for the full integral"),
        "tol": P(float, 1e-4, "pos", "relative tolerance"),
        "budget": P(int, 1_000_000, "pos", "Monte Carlo sample budget"),
        "strict": P(bool, False, None, "fail when the sampling error exceeds tol after the budget"),
    },
    "mass-spread": {
        "regime": P(str, "small-ell", ("small-ell", "large-ell"), ""),
        "Lam": P(float, 1.0, "nonneg", ""),
        "ell": P(float, 1.0, "pos", ""),
        "T": P(float, None, "nonneg", "duration; default 100 l (small) or 0.01 l (large)"),
        "T_lab": P(float, 50.0, "pos", "laboratory duration (s) for the small-ell headline"),
        "tol": P(float, 1e-8, "pos", ""),
    },
    "energy-growth": {
        "Lam": P(float, 1.0, "nonneg", ""),
        "ell": P(float, 1.0, "pos", ""),
        "T": P(float, 0.01, "nonneg", ""),
        "tol": P(float, 1e-8, "pos", ""),
    },
    "trajectories": {
        "p_left": P(float, 0.5, "pos", "initial weight of the left branch"),
        "samples": P(int, 10_000, "pos", "number of trajectories"),
        "exponent": P(float, 3.0, "pos", "total lattice decoherence exponent"),
        "separation": P(float, 1.0, "pos", "distance between the branch events"),
        "ell": P(float, 1.0, "pos", ""),
        "t_max": P(float, 3.0, "pos", "lattice duration"),
        "slabs": P(int, 30, "pos", ""),
        "cells": P(int, 120, "pos", "spatial cells per slab"),
        "half_width": P(float, 6.0, "pos", "spatial half width of the lattice"),
        "threshold": P(float, 0.999, "pos", "win threshold on the branch weight"),
        "vacuum": P(bool, False, None, "evolve the vacuum instead"),
        "trajectory_csv": P(str, "", None, "path for per-trajectory rows"),
    },
    "scattering": {
        "delta": P(float, 2.0, "pos", "event separation for the region area"),
        "samples": P(int, 400_000, "pos", "Monte Carlo samples per region"),
        "W0": P(float, 5.0, None, "potential strength"),
        "b": P(float, 2.0, "pos", "potential range"),
        "grid_n": P(int, 512, "pos", ""),
        "grid_length": P(float, 80.0, "pos", ""),
        "p": P(float, 1.0, None, "packet momenta are +p and -p"),
        "sigma": P(float, 3.0, "pos", "packet width"),
    },
    "wavepacket": {
        "p": P(float, 1.0, None, ""),
        "sigma": P(float, 5.0, "pos", ""),
        "sigma_prime": P(float, 2.0, "pos", ""),
        "m": P(float, 1.0, "nonneg", ""),
        "s": P(float, 20.0, "nonneg", "evolution parameter"),
        "m_ev": P(float, 940e6, "pos", "rest energy (eV) for the tradeoff"),
        "target": P(float, 1e-7, "pos", "fractional mass accuracy"),
        "kg_p": P(float, 0.5, None, "momentum of the packet used for the residual check"),
        "kg_sigma": P(float, 1.0, "pos", "width of the packet used for the residual check"),
    },
    "constants": {},
}

_DECOHERENCE_DEFAULTS = {
    "small-ell": {"side": 10.0, "n": 1000.0, "d": 1000.0, "T": 1000.0},
    "full": {"side": 0.5, "n": 1.0, "d": 1.0, "T": 1.0},
    "large-ell": {"side": 1e-4, "n": 1.0, "d": 1e-2, "T": 1e-2},
}


def read_config(path: str) -> dict[str, Any]:
    """Read a flat ``key = value`` file, or a JSON object or envelope.

    Blank lines and ``#`` comments are ignored. A JSON envelope contributes
    its ``parameters`` block, ``seed`` and ``command``.
    """
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from None
        if "parameters" in data:
            out = dict(data["parameters"])
            for key in ("seed", "command"):
                if key in data:
                    out[key] = data[key]
            return out
        return dict(data)
    out: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def write_config(params: dict[str, Any], seed: int | None = None, command: str | None = None) -> str:
    """Flat config text that reproduces a run."""
    lines = []
    if command is not None:
        lines.append(f"command = {command}")
    if seed is not None:
        lines.append(f"seed = {seed}")
    lines += [f"{k} = {_fmt(v)}" for k, v in params.items()]
    return "\n".join(lines) + "\n"


def _fmt(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def resolve(command: str, raw: dict[str, Any]) -> dict[str, Any]:
    """Apply defaults and validate; unknown keys are rejected."""
    schema = SCHEMAS[command]
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise UsageError(f"unknown parameter(s) for {command}: {', '.join(unknown)}")
    out = {}
    for name, p in schema.items():
        out[name] = p.parse(name, raw[name]) if name in raw and raw[name] is not None else p.default
    if command == "decoherence":
        for name, value in _DECOHERENCE_DEFAULTS[out["regime"]].items():
            if out[name] is None:
                out[name] = value
    if command == "mass-spread" and out["T"] is None:
        out["T"] = 100.0 * out["ell"] if out["regime"] == "small-ell" else 0.01 * out["ell"]
    if command == "trajectories" and not out["p_left"] < 1:
        raise UsageError("p_left must lie in (0, 1)")
    return out


# ----------------------------------------------------------- results

class Results:
    """Collects (name, value, error_estimate, provenance) rows."""

    def __init__(self):
        self.rows: list[dict[str, Any]] = []

    def add(self, name: str, value: float, provenance: str, error: float = 0.0) -> None:
        if provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {provenance!r}")
        self.rows.append({"name": name, "value": _num(value), "error_estimate": _num(error),
                          "provenance": provenance})

    def ratio(self, name: str, num: float, den: float) -> None:
        self.add(name, num / den if den else math.nan, an.NUMERIC)


def _num(x: Any) -> float | None:
    x = float(x)
    return x if math.isfinite(x) else None


Ctx = dict[str, Any]


def cmd_decoherence(prm: dict, ctx: Ctx) -> Results:
    res = Results()
    k = SmearingKernel(prm["ell"])
    clump = ClumpSpec(prm["n"], prm["side"], prm["d"])
    lam, T, d, n = prm["Lam"], prm["T"], prm["d"], prm["n"]
    regime = prm["regime"]
    method = "large-ell" if regime == "large-ell" else "full"
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        num = decoherence_exponent(clump, k, T, lam, method=method, engine=prm["engine"], tol=prm["tol"],
                                   seed=ctx["seed"], budget=prm["budget"], threads=ctx["threads"],
                                   strict=prm["strict"])
        res.add("I_numeric", num.value, an.NUMERIC, num.error_estimate)
        if regime == "large-ell":
            paper = an.i_large_ell(lam, prm["ell"], n, T, d)
            exact = an.i_large_ell_exact(lam, prm["ell"], n, T, d)
            res.add("I_large_ell", paper, an.PAPER)
            res.add("I_large_ell", exact, an.EXACT)
            res.ratio("ratio_numeric_to_paper", num.value, paper)
            res.ratio("ratio_numeric_to_exact", num.value, exact)
        else:
            V = clump.volume
            paper = an.i_small_ell(lam, T, prm["ell"], n / V, V)
            lead = an.i_small_ell_leading(lam, T, prm["ell"], n, prm["side"])
            res.add("I_small_ell", paper, an.PAPER)
            res.add("I_small_ell_leading", lead, an.EXACT)
            res.ratio("ratio_numeric_to_paper", num.value, paper)
            res.ratio("ratio_numeric_to_leading", num.value, lead)
    return res


def cmd_mass_spread(prm: dict, ctx: Ctx) -> Results:
    res = Results()
    lam, ell, T = prm["Lam"], prm["ell"], prm["T"]
    num = an.mass_spread_quadrature(lam, ell, T, prm["tol"])
    if prm["regime"] == "small-ell":
        forms = an.mass_spread_small_ell(lam, T)
    else:
        forms = an.mass_spread_large_ell(lam, ell, T)
    res.add("mass_spread_sq", num.value, an.NUMERIC, num.error_estimate)
    for prov, r in forms.items():
        res.add("mass_spread_sq", r.value, prov)
    res.ratio("ratio_numeric_to_exact", num.value, forms[an.EXACT].value)
    res.ratio("ratio_numeric_to_paper", num.value, forms[an.PAPER].value)
    key = "small_ell_fractional_spread" if prm["regime"] == "small-ell" else "large_ell_fractional_spread"
    for h in an.headline_numbers(T_small=prm["T_lab"]):
        if h.name.startswith(key):
            res.add(h.name, h.value if lam > 0 else 0.0, h.provenance)
            if h.quoted is not None:
                res.ratio(h.name.replace("fractional_spread", "ratio_to_quoted"), h.value, h.quoted)
    return res


def cmd_energy_growth(prm: dict, ctx: Ctx) -> Results:
    res = Results()
    lam, ell, T = prm["Lam"], prm["ell"], prm["T"]
    num = an.energy_growth_quadrature(lam, ell, T, prm["tol"])
    forms = an.energy_growth_large_ell(lam, ell, T)
    res.add("energy_sq_growth", num.value, an.NUMERIC, num.error_estimate)
    for prov, r in forms.items():
        res.add("energy_sq_growth", r.value, prov)
    res.ratio("ratio_numeric_to_exact", num.value, forms[an.EXACT].value)
    res.ratio("ratio_numeric_to_paper", num.value, forms[an.PAPER].value)
    for h in an.headline_numbers():
        if h.name.startswith("energy_"):
            res.add(h.name, h.value, h.provenance)
            if h.quoted is not None:
                res.ratio(h.name.replace("energy_shift", "energy_shift_ratio_to_quoted"), h.value, h.quoted)
    return res


def trajectory_problem(prm: dict) -> tuple[BranchState, NoiseLattice, SmearingKernel, float]:
    """Two point events on a line and a lattice scaled to a target exponent.

    Returns the initial state, the lattice, the kernel and Lambda.
    """
    k = SmearingKernel(prm["ell"], spatial_dim=1)
    h = 0.5 * prm["separation"]
    left = EventConfig(np.array([[0.0, -h]]))
    right = EventConfig(np.array([[0.0, h]]))
    t_edges = np.linspace(0.0, prm["t_max"], prm["slabs"] + 1)
    x_edges = np.linspace(-prm["half_width"], prm["half_width"], prm["cells"] + 1)
    unit = NoiseLattice.regular(t_edges, [x_edges], 1.0)
    per_lam = lattice_exponent(unit, [left, right], k)[-1, 0, 1]
    lam = prm["exponent"] / per_lam
    state = BranchState.from_weights([left, right], [prm["p_left"], 1.0 - prm["p_left"]])
    return state, NoiseLattice.regular(t_edges, [x_edges], lam), k, lam


def cmd_trajectories(prm: dict, ctx: Ctx) -> Results:
    res = Results()
    state, lattice, k, lam = trajectory_problem(prm)
    res.add("Lambda", lam, an.NUMERIC)
    if prm["vacuum"]:
        vac = BranchState.from_weights([EventConfig.vacuum(1)], [1.0])
        drift = 0.0
        for j in range(prm["samples"]):
            noisy = sample_noise(vac, lattice, k, ctx["seed"] + j)
            out = evolve_trajectory(vac, noisy, k).normalized()
            drift = max(drift, float(np.max(np.abs(out.amplitudes - vac.amplitudes))))
        res.add("vacuum_max_amplitude_change", drift, an.NUMERIC)
        return res
    want_csv = bool(prm["trajectory_csv"])
    ens = run_ensemble(state, lattice, k, prm["samples"], ctx["seed"], threshold=prm["threshold"],
                       record_slabs=want_csv)
    for b, label in enumerate(("left", "right")):
        res.add(f"frequency_{label}", ens.frequencies[b], an.NUMERIC, ens.binomial_sigma[b])
        res.add(f"born_weight_{label}", state.weights[b], an.EXACT)
        res.add(f"final_mean_weight_{label}", ens.mean_weights[-1, b], an.NUMERIC, ens.weight_sem[-1, b])
    res.add("censored", ens.n_censored, an.NUMERIC)
    res.add("offdiag_final", abs(ens.ensemble_rho[-1, 0, 1]), an.NUMERIC, ens.ensemble_rho_sem[-1, 0, 1])
    res.add("offdiag_predicted", abs(ens.predicted_rho[-1, 0, 1]), an.EXACT)
    res.add("exponent_total", ens.exponent[-1, 0, 1], an.NUMERIC)
    if want_csv:
        with open(prm["trajectory_csv"], "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(["trajectory_id", "slab_index", "weight_left", "weight_right", "winner", "censored"])
            for j in range(ens.n_samples):
                for s in range(ens.slab_weights.shape[1]):
                    w = ens.slab_weights[j, s]
                    wr.writerow([j, s, repr(float(w[0])), repr(float(w[1])), int(ens.winners[j]),
                                 int(ens.censored[j])])
    return res


def cmd_scattering(prm: dict, ctx: Ctx) -> Results:
    res = Results()
    delta = prm["delta"]
    q = RegionQuery([0.0, 0.0], [0.0, delta])
    area = region_volume(q, prm["samples"], seed=ctx["seed"])
    res.add("region_area_1d", area.value, an.NUMERIC, area.error_estimate)
    res.add("region_area_1d", shoelace_area(diamond_vertices(delta)), an.EXACT)
    fit = volume_scaling_fit(n_samples=prm["samples"], seed=ctx["seed"])
    res.add("volume_scaling_slope_3d", fit.slope, an.NUMERIC, fit.slope_error)
    res.add("volume_scaling_prefactor_3d", fit.prefactor, an.NUMERIC)
    grid = TwoParticleGrid(prm["grid_n"], prm["grid_length"])
    pot = PotentialSpec(prm["W0"], prm["b"])
    chi0 = two_packet_state(grid, prm["p"], -prm["p"], prm["sigma"])
    chi = phase_evolve(chi0, grid, pot, pot.s_turnoff)
    res.add("density_change_max", float(np.max(np.abs(np.abs(chi) ** 2 - np.abs(chi0) ** 2))), an.NUMERIC)
    later = phase_evolve(chi0, grid, pot, 2.0 * pot.s_turnoff)
    res.add("turnoff_change_max", float(np.max(np.abs(later - chi))), an.NUMERIC)
    free = outgoing_distribution(grid, prm["p"], -prm["p"], prm["sigma"], PotentialSpec(0.0, prm["b"]))
    out = outgoing_distribution(grid, prm["p"], -prm["p"], prm["sigma"], pot)
    res.add("total_momentum_std_free", free.total_std, an.NUMERIC)
    res.add("total_momentum_std", out.total_std, an.NUMERIC)
    res.add("total_momentum_std_bound", math.sqrt(2.0) / prm["sigma"], an.EXACT)
    change = 0.5 * float(np.sum(np.abs(out.density - free.density))) * grid.dq**2
    res.add("momentum_distribution_change", change, an.NUMERIC)
    res.add("grid_leakage", out.leakage, an.NUMERIC)
    return res


def cmd_wavepacket(prm: dict, ctx: Ctx) -> Results:
    res = Results()
    spec = PacketSpec(prm["p"], prm["sigma"], prm["sigma_prime"], prm["m"])
    sig = prm["sigma"]
    kg = PacketSpec(prm["kg_p"], prm["kg_sigma"], prm["sigma_prime"], prm["m"])
    ks = prm["kg_sigma"]
    pts = np.array([[0.0, 0.0], [0.5 * ks, 0.3 * ks], [ks, -ks], [0.2 * ks, 2.0 * ks]])
    res.add("kg_residual_max", float(np.max(kg_residual(kg, pts))), an.NUMERIC)
    s = prm["s"]
    v = group_velocity(spec)
    span = 8.0 * sig + abs(v) * s + 6.0 * prm["sigma_prime"]
    x = np.linspace(-span, span + abs(v) * s, 1201)
    rep0 = time_translate_vs_evolve(spec, 0.0, x)
    rep = time_translate_vs_evolve(spec, s, x)
    res.add("translated_variance_ratio", rep["translated"]["variance"] / rep0["translated"]["variance"],
            an.NUMERIC)
    res.add("evolved_variance_ratio", rep["evolved"]["variance"] / rep0["evolved"]["variance"], an.NUMERIC)
    res.add("shape_distance", rep["shape_distance"], an.NUMERIC)
    if s > 0:
        res.add("drift_velocity", rep["velocity"], an.NUMERIC)
    res.add("group_velocity", v, an.NUMERIC)
    res.add("velocity_p_over_omega", prm["p"] / math.sqrt(prm["p"] ** 2 + prm["m"] ** 2), an.EXACT)
    res.add("energy_spread", energy_spread(spec), an.NUMERIC)
    res.add("energy_spread", 1.0 / (2.0 * prm["sigma_prime"]), an.EXACT)
    res.add("sigma_prime_required_s", mass_accuracy_tradeoff(prm["m_ev"], prm["target"]), an.EXACT)
    return res


def cmd_constants(prm: dict, ctx: Ctx) -> Results:
    res = Results()
    pc = an.PhysicalConstants()
    for name in ("lambda_grw", "a_grw", "mu", "m_nucleon", "c", "hbar", "T_universe", "initial_spread"):
        res.add(name, getattr(pc, name), an.PAPER)
    res.add("Lambda_small_ell", an.grw_mapping("small-ell", pc), an.NUMERIC)
    res.add("Lambda_large_ell", an.grw_mapping("large-ell", pc), an.NUMERIC)
    for name, value in an.PAPER_COEFFICIENTS.items():
        res.add(f"coefficient_{name}", value, an.PAPER)
    for name, value in an.COEFFICIENTS.items():
        res.add(f"coefficient_{name}", value, an.EXACT)
    for h in an.headline_numbers(pc):
        res.add(h.name, h.value, h.provenance)
    return res


COMMANDS: dict[str, Callable[[dict, Ctx], Results]] = {
    "decoherence": cmd_decoherence,
    "mass-spread": cmd_mass_spread,
    "energy-growth": cmd_energy_growth,
    "trajectories": cmd_trajectories,
    "scattering": cmd_scattering,
    "wavepacket": cmd_wavepacket,
    "constants": cmd_constants,
}


# ----------------------------------------------------------- driver

def run(command: str, overrides: dict[str, Any] | None = None, *, config: dict[str, Any] | None = None,
        seed: int | None = None, threads: int = 1) -> dict[str, Any]:
    """Resolve parameters, run a command and return its envelope.

    Precedence, highest first: ``overrides``, the ``seed`` argument (then the
    RCSL_SEED environment variable) for the seed, ``config``, defaults.
    """
    if command not in COMMANDS:
        raise UsageError(f"unknown command {command!r}")
    raw = dict(config or {})
    cfg_command = raw.pop("command", command)
    if cfg_command != command:
        raise UsageError(f"config is for {cfg_command!r}, not {command!r}")
    cfg_seed = raw.pop("seed", None)
    raw.update(overrides or {})
    if "seed" in raw:
        cfg_seed = raw.pop("seed")
    params = resolve(command, raw)
    if seed is None:
        env = os.environ.get(SEED_ENV)
        seed = env if env is not None else cfg_seed
    seed = Param(int, 0, "nonneg").parse("seed", 0 if seed is None else seed)
    if threads < 1:
        raise UsageError("threads must be at least 1")
    start = time.perf_counter()
    results = COMMANDS[command](params, {"seed": seed, "threads": threads})
    return {
        "command": command,
        "parameters": params,
        "results": results.rows,
        "seed": seed,
        "wall_time": time.perf_counter() - start,
        "version": __version__,
    }


def to_json(envelope: dict) -> str:
    return json.dumps(envelope, sort_keys=True, indent=2) + "\n"


def to_csv(envelope: dict) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["name", "value", "error_estimate", "provenance"])
    for row in envelope["results"]:
        wr.writerow([row["name"], "" if row["value"] is None else repr(row["value"]),
                     "" if row["error_estimate"] is None else repr(row["error_estimate"]), row["provenance"]])
    return buf.getvalue()


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rcsl", description="Relativistic collapse model computations.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, schema in SCHEMAS.items():
        keys = ", ".join(f"{k} (default {v.default})" for k, v in schema.items()) or "none"
        sp = sub.add_parser(name, help=f"run {name}", description=f"Parameters: {keys}.")
        sp.add_argument("overrides", nargs="*", metavar="key=value")
        sp.add_argument("--config", metavar="PATH")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--out", metavar="PATH")
        sp.add_argument("--format", choices=("json", "csv"), default="json")
    return ap


def _overrides(items: Sequence[str]) -> dict[str, str]:
    out = {}
    for item in items:
        if "=" not in item:
            raise UsageError(f"expected key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        config = read_config(args.config) if args.config else None
        env = run(args.command, _overrides(args.overrides), config=config, seed=args.seed, threads=args.threads)
    except BudgetExhausted as exc:
        print(f"rcsl: budget exhausted: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (ConvergenceError, GridResolutionError) as exc:
        print(f"rcsl: numerical failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (UsageError, ValueError, OSError) as exc:
        print(f"rcsl: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    text = to_json(env) if args.format == "json" else to_csv(env)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
