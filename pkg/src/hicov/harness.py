"""Monte Carlo driver for family-wise error rates and average powers.

An experiment sweeps a grid of sample sizes and within-block residual
correlations.  Each cell runs M replications: simulate a path, compute all
pair statistics, run the stepdown test once per method (the methods share
the replication's statistics), and score the rejections against the
simulation truth.  The family-wise error rate of a cell is the fraction of
replications that rejected at least one true null pair; the average power is
the mean fraction of false nulls rejected.

Reproducibility is by construction: every replication draws from a
counter-based stream keyed by (seed, cell, replication index), replications
are dispatched in fixed-size batches whose partial sums are combined in a
fixed order, and worker BLAS pools are pinned to one thread, so the result
is byte-identical for any degree of parallelism.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed
from threadpoolctl import threadpool_limits

from .config import ConfigError, parse_bool, parse_list
from .estimators import IncrementMatrix, compute_factor_stats
from .bootstrap import bootstrap_group_maxima
from .multitest import (
    HolmProvider,
    RomanoWolfProvider,
    group_statistics,
    pairwise_partition,
    stepdown,
)
from .simulate import (
    DEFAULT_HESTON,
    HestonParams,
    draw_residual_structure,
    make_scenario,
    simulate_paths,
)

__all__ = [
    "ExperimentSpec",
    "CellResult",
    "ExperimentTable",
    "ReplicationRecord",
    "run_replication",
    "run_experiment",
    "experiment_from_config",
    "experiment_to_config",
    "DESK_DEFAULTS",
    "PAPER_SCALE",
]

METHODS = ("holm", "rw")

# Tags separating the seed-derivation namespaces.
_STRUCT_STREAM = 1
_REP_STREAM = 2

_BATCH_SIZE = 25  # fixed batch size so reduction order is independent of --jobs


@dataclass(frozen=True)
class ExperimentSpec:
    """Grid, scale and method settings of one Monte Carlo experiment."""

    n_grid: tuple[int, ...] = (78, 195, 390)
    rho_gamma_grid: tuple[float, ...] = (0.25, 0.5, 0.75)
    d_under: int = 20
    num_blocks: int = 10
    heston: HestonParams = DEFAULT_HESTON
    methods: tuple[str, ...] = METHODS
    alpha: float = 0.05
    m_reps: int = 1000
    b_resamples: int = 199
    seed: int = 0
    jobs: int = 1
    redraw_structure: bool = False
    fine_factor: int = 10

    def __post_init__(self):
        if self.m_reps < 1 or self.b_resamples < 1:
            raise ValueError("m_reps and b_resamples must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; valid: {METHODS}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


#: Default desk-scale configuration (runs in minutes on a workstation).
DESK_DEFAULTS = ExperimentSpec()

#: The full-scale study design; expect hours of runtime.
PAPER_SCALE = ExperimentSpec(
    n_grid=(26, 39, 78, 130, 195, 390),
    d_under=100,
    num_blocks=10,
    m_reps=10_000,
    b_resamples=999,
)


@dataclass(frozen=True)
class ReplicationRecord:
    """Outcome of one replication: per-method rejection scores."""

    false_reject: dict
    alt_rejected: dict
    n_true_nulls: int
    n_alternatives: int
    clamped_pairs: int


def run_replication(scenario, methods, alpha, B, rep_seed, redraw=None):
    """Simulate one path and score every method's stepdown decisions.

    ``rep_seed`` is an int or SeedSequence; the simulation and the bootstrap
    use separate children of it.  With ``redraw`` set to (num_blocks,
    rho_gamma), the residual structure and loadings are redrawn from the
    replication's own stream instead of reusing the scenario's.
    """
    ss = rep_seed if isinstance(rep_seed, np.random.SeedSequence) else np.random.SeedSequence(rep_seed)
    sim_ss, boot_ss = ss.spawn(2)
    rng = np.random.Generator(np.random.Philox(sim_ss))
    if redraw is not None:
        num_blocks, rho_gamma = redraw
        structure = draw_residual_structure(scenario.d_under, num_blocks, rho_gamma, rng)
        betas = rng.uniform(0.25, 2.25, size=scenario.d_under)
        scenario = replace(scenario, structure=structure, betas=betas)
    grid = simulate_paths(scenario, rng)
    inc = IncrementMatrix.from_prices(grid.prices)
    stats = compute_factor_stats(inc)
    part = pairwise_partition(scenario.d_under)
    gstats = group_statistics(stats.t, part)
    pi, pj = part.pairs[:, 0], part.pairs[:, 1]
    null_pairs = grid.truth.null_truth[pi, pj]
    n_true = int(null_pairs.sum())
    n_alt = int((~null_pairs).sum())

    false_reject, alt_rejected = {}, {}
    for method in methods:
        if method == "holm":
            provider = HolmProvider(part)
        else:
            draws = bootstrap_group_maxima(inc, part, stats.vhat, B, boot_ss)
            provider = RomanoWolfProvider(draws)
        res = stepdown(gstats, provider, alpha)
        false_reject[method] = bool(np.any(res.rejected & null_pairs))
        alt_rejected[method] = int(np.sum(res.rejected & ~null_pairs))
    clamped = int(stats.clamped[pi, pj].sum())
    return ReplicationRecord(
        false_reject=false_reject,
        alt_rejected=alt_rejected,
        n_true_nulls=n_true,
        n_alternatives=n_alt,
        clamped_pairs=clamped,
    )


def _run_batch(scenario, methods, alpha, B, seed, cell_index, rep_lo, rep_hi, redraw):
    """Aggregate a contiguous block of replications for one cell."""
    agg = {
        m: {"fwe": 0, "power_sum": 0.0, "power_sq": 0.0} for m in methods
    }
    clamp_reps = 0
    with threadpool_limits(limits=1):
        for rep in range(rep_lo, rep_hi):
            rep_ss = np.random.SeedSequence((seed, _REP_STREAM, cell_index, rep))
            rec = run_replication(scenario, methods, alpha, B, rep_ss, redraw=redraw)
            for m in methods:
                agg[m]["fwe"] += int(rec.false_reject[m])
                if rec.n_alternatives > 0:
                    frac = rec.alt_rejected[m] / rec.n_alternatives
                    agg[m]["power_sum"] += frac
                    agg[m]["power_sq"] += frac * frac
            clamp_reps += int(rec.clamped_pairs > 0)
    return agg, clamp_reps


@dataclass(frozen=True)
class CellResult:
    n: int
    rho_gamma: float
    method: str
    m_reps: int
    fwer: float
    avg_power: float
    mc_se_fwer: float
    mc_se_power: float
    clamped_reps: int


@dataclass
class ExperimentTable:
    """Cell results plus run metadata; renders the paper-style CSV layout."""

    spec: ExperimentSpec
    cells: list = field(default_factory=list)
    wall_clock_s: float = 0.0

    def cell(self, n, rho_gamma, method) -> CellResult:
        for c in self.cells:
            if c.n == n and c.rho_gamma == rho_gamma and c.method == method:
                return c
        raise KeyError((n, rho_gamma, method))

    def to_csv(self, metric) -> str:
        """Rows rho_gamma x method, columns n; values formatted to 6 decimals."""
        if metric not in ("fwer", "avg_power"):
            raise ValueError(f"unknown metric {metric!r}")
        header = ["rho_gamma", "method"] + [f"n={n}" for n in self.spec.n_grid]
        lines = [",".join(header)]
        for rho in self.spec.rho_gamma_grid:
            for method in self.spec.methods:
                row = [f"{rho:g}", method]
                for n in self.spec.n_grid:
                    try:
                        val = getattr(self.cell(n, rho, method), metric)
                        row.append("" if math.isnan(val) else f"{val:.6f}")
                    except KeyError:
                        row.append("")
                lines.append(",".join(row))
        return "\n".join(lines) + "\n"

    def sidecar(self) -> dict:
        """JSON-ready metadata: standard errors, clamp counts, timing, seed."""
        return {
            "spec": experiment_to_config(self.spec),
            "wall_clock_s": self.wall_clock_s,
            "cells": [
                {
                    "n": c.n,
                    "rho_gamma": c.rho_gamma,
                    "method": c.method,
                    "m_reps": c.m_reps,
                    "fwer": c.fwer,
                    "avg_power": None if math.isnan(c.avg_power) else c.avg_power,
                    "mc_se_fwer": None if math.isnan(c.mc_se_fwer) else c.mc_se_fwer,
                    "mc_se_power": None if math.isnan(c.mc_se_power) else c.mc_se_power,
                    "clamped_reps": c.clamped_reps,
                }
                for c in self.cells
            ],
        }


def run_experiment(spec: ExperimentSpec, on_cell_done=None) -> ExperimentTable:
    """Run the full grid; replications are parallel, results deterministic.

    ``on_cell_done(table)`` is invoked after each (n, rho_gamma) cell with
    the partially filled table, letting callers flush partial results.
    """
    t0 = time.perf_counter()
    table = ExperimentTable(spec=spec)
    m = spec.m_reps
    batches = [(lo, min(lo + _BATCH_SIZE, m)) for lo in range(0, m, _BATCH_SIZE)]
    with Parallel(n_jobs=spec.jobs, backend="loky", inner_max_num_threads=1) as pool:
        for i_rho, rho in enumerate(spec.rho_gamma_grid):
            struct_rng = np.random.Generator(
                np.random.Philox(np.random.SeedSequence((spec.seed, _STRUCT_STREAM, i_rho)))
            )
            structure = draw_residual_structure(
                spec.d_under, spec.num_blocks, rho, struct_rng
            )
            betas = struct_rng.uniform(0.25, 2.25, size=spec.d_under)
            redraw = (spec.num_blocks, rho) if spec.redraw_structure else None
            for i_n, n in enumerate(spec.n_grid):
                scenario = make_scenario(
                    n=n,
                    d_under=spec.d_under,
                    num_blocks=spec.num_blocks,
                    rho_gamma=rho,
                    heston=spec.heston,
                    fine_factor=spec.fine_factor,
                    seed=spec.seed,
                    structure=structure,
                    betas=betas,
                )
                cell_index = i_rho * len(spec.n_grid) + i_n
                results = pool(
                    delayed(_run_batch)(
                        scenario, spec.methods, spec.alpha, spec.b_resamples,
                        spec.seed, cell_index, lo, hi, redraw,
                    )
                    for lo, hi in batches
                )
                for method in spec.methods:
                    fwe = sum(r[0][method]["fwe"] for r in results)
                    psum = sum(r[0][method]["power_sum"] for r in results)
                    psq = sum(r[0][method]["power_sq"] for r in results)
                    clamp_reps = sum(r[1] for r in results)
                    fwer = fwe / m
                    power = psum / m
                    se_f = math.sqrt(fwer * (1.0 - fwer) / m) if m > 1 else float("nan")
                    var_p = max(psq / m - power * power, 0.0)
                    se_p = math.sqrt(var_p / m) if m > 1 else float("nan")
                    table.cells.append(
                        CellResult(
                            n=n,
                            rho_gamma=rho,
                            method=method,
                            m_reps=m,
                            fwer=fwer,
                            avg_power=power,
                            mc_se_fwer=se_f,
                            mc_se_power=se_p,
                            clamped_reps=clamp_reps,
                        )
                    )
                table.wall_clock_s = time.perf_counter() - t0
                if on_cell_done is not None:
                    on_cell_done(table)
    table.wall_clock_s = time.perf_counter() - t0
    return table


_EXPERIMENT_FIELDS = {
    "n_grid": lambda v: tuple(parse_list(v, int)),
    "rho_gamma_grid": lambda v: tuple(parse_list(v, float)),
    "d_under": int,
    "num_blocks": int,
    "mu": float,
    "kappa": float,
    "theta": float,
    "eta": float,
    "rho": float,
    "methods": lambda v: tuple(parse_list(v, str)),
    "alpha": float,
    "m_reps": int,
    "b_resamples": int,
    "seed": int,
    "jobs": int,
    "redraw_structure": parse_bool,
    "fine_factor": int,
}


def experiment_from_config(mapping, base=None) -> ExperimentSpec:
    """Build a spec from a flat mapping on top of ``base`` (or desk defaults)."""
    base = base if base is not None else DESK_DEFAULTS
    unknown = set(mapping) - set(_EXPERIMENT_FIELDS)
    if unknown:
        raise ConfigError(f"unknown experiment fields: {sorted(unknown)}")
    kwargs = {}
    heston_kwargs = {}
    for key, value in mapping.items():
        parsed = _EXPERIMENT_FIELDS[key](value)
        if key in ("mu", "kappa", "theta", "eta", "rho"):
            heston_kwargs[key] = parsed
        else:
            kwargs[key] = parsed
    if heston_kwargs:
        hp = base.heston
        kwargs["heston"] = HestonParams(
            mu=heston_kwargs.get("mu", hp.mu),
            kappa=heston_kwargs.get("kappa", hp.kappa),
            theta=heston_kwargs.get("theta", hp.theta),
            eta=heston_kwargs.get("eta", hp.eta),
            rho=heston_kwargs.get("rho", hp.rho),
        )
    return replace(base, **kwargs)


def experiment_to_config(spec: ExperimentSpec) -> dict:
    """Flatten a spec for the resolved-config echo."""
    hp = spec.heston
    return {
        "n_grid": ",".join(str(n) for n in spec.n_grid),
        "rho_gamma_grid": ",".join(f"{r:g}" for r in spec.rho_gamma_grid),
        "d_under": spec.d_under,
        "num_blocks": spec.num_blocks,
        "mu": hp.mu,
        "kappa": hp.kappa,
        "theta": hp.theta,
        "eta": hp.eta,
        "rho": hp.rho,
        "methods": ",".join(spec.methods),
        "alpha": spec.alpha,
        "m_reps": spec.m_reps,
        "b_resamples": spec.b_resamples,
        "seed": spec.seed,
        "jobs": spec.jobs,
        "redraw_structure": spec.redraw_structure,
        "fine_factor": spec.fine_factor,
    }
