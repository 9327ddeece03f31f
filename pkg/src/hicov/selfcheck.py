"""Fast built-in invariant checks for the CLI selftest (no Monte Carlo tables).

Each check re-derives its expected values by an independent route (brute
force, closed form, or an alternative transcription), so a pass means the
production code agrees with something other than itself.
"""

from __future__ import annotations

import math

import numpy as np

from .bootstrap import bootstrap_group_maxima, gen_multipliers, multiplier_matrix
from .estimators import AsyCovOracle, IncrementMatrix, compute_factor_stats
from .multitest import (
    HolmProvider,
    RomanoWolfProvider,
    holm_critical,
    pairwise_partition,
    rw_critical,
    stepdown,
)

__all__ = ["run_selftest", "CHECKS"]


def brute_force_entry(dy, ij, kl):
    """Double sum with the lag weights (1, -1/2, 0, ...) built explicitly."""
    n = dy.shape[1]
    x = dy[ij[0]] * dy[ij[1]]
    y = dy[kl[0]] * dy[kl[1]]
    w = np.zeros((n, n))
    for h in range(n):
        for hp in range(n):
            lag = abs(h - hp)
            if lag == 0:
                w[h, hp] = 1.0
            elif lag == 1:
                w[h, hp] = -0.5
    return n * float(x @ w @ y)


def _rel_err(a, b):
    scale = max(abs(a), abs(b), 1e-300)
    return abs(a - b) / scale


def check_oracle_vs_brute_force():
    rng = np.random.default_rng(101)
    for _ in range(10):
        d = int(rng.integers(1, 4))
        n = int(rng.integers(2, 20))
        dy = rng.normal(0.0, 1.0 / math.sqrt(n), size=(d, n))
        oracle = AsyCovOracle(IncrementMatrix(dy))
        for i in range(d):
            for j in range(i, d):
                for k in range(d):
                    for l in range(k, d):
                        got = oracle.entry((i, j), (k, l))
                        want = brute_force_entry(dy, (i, j), (k, l))
                        assert _rel_err(got, want) < 1e-12, (got, want)


def check_multiplier_moments():
    ee = multiplier_matrix(30, 20_000, np.random.SeedSequence(7))
    v = ee[:, 10].var()
    c1 = np.cov(ee[:, 10], ee[:, 11])[0, 1]
    c2 = np.cov(ee[:, 10], ee[:, 12])[0, 1]
    assert abs(v - 1.0) < 4 * math.sqrt(2 / 20_000), v
    assert abs(c1 + 0.5) < 4 * math.sqrt(1.25 / 20_000), c1
    assert abs(c2) < 4 * math.sqrt(1.0 / 20_000), c2


def check_scale_invariance():
    rng = np.random.default_rng(77)
    for _ in range(10):
        dy = rng.normal(0.0, 0.05, size=(4, 40))
        base = compute_factor_stats(IncrementMatrix(dy))
        for c in (0.5, 2.0, 10.0):
            dy2 = dy.copy()
            dy2[0] *= c
            scaled = compute_factor_stats(IncrementMatrix(dy2))
            assert np.all(
                np.abs(scaled.t[0, 1:3] - base.t[0, 1:3])
                <= 1e-10 * np.abs(base.t[0, 1:3])
            )


def check_holm_vs_classic():
    rng = np.random.default_rng(5)
    part = pairwise_partition(5)  # 10 singleton groups
    for _ in range(200):
        stats = np.abs(rng.normal(0.0, 1.6, size=part.n_groups))
        res = stepdown(stats, HolmProvider(part), 0.05)
        pvals = np.array([math.erfc(s / math.sqrt(2.0)) for s in stats])
        order = np.argsort(pvals, kind="stable")
        want = np.zeros(len(pvals), dtype=bool)
        for k, idx in enumerate(order):
            if pvals[idx] <= 0.05 / (len(pvals) - k):
                want[idx] = True
            else:
                break
        assert np.array_equal(res.rejected, want)


def check_condition_i():
    rng = np.random.default_rng(13)
    part = pairwise_partition(6)
    dy = rng.normal(0.0, 0.05, size=(7, 60))
    inc = IncrementMatrix(dy)
    stats = compute_factor_stats(inc)
    draws = bootstrap_group_maxima(inc, part, stats.vhat, 99, 3)
    for _ in range(200):
        size = int(rng.integers(1, part.n_groups))
        small = sorted(rng.choice(part.n_groups, size=size, replace=False).tolist())
        extra = [g for g in range(part.n_groups) if g not in small]
        big = sorted(small + list(rng.choice(extra, size=1)))
        assert holm_critical(part, small, 0.05) <= holm_critical(part, big, 0.05)
        assert rw_critical(draws, small, 0.05) <= rw_critical(draws, big, 0.05)


def check_rw_degenerate():
    part = pairwise_partition(4)
    stats = np.abs(np.random.default_rng(3).normal(size=part.n_groups)) + 0.5

    class _Draws:
        maxima = np.tile(stats, (50, 1))
        B = 50

    res = stepdown(stats, RomanoWolfProvider(_Draws()), 0.2)
    assert res.n_rejected == 0


def check_bootstrap_determinism():
    rng = np.random.default_rng(9)
    dy = rng.normal(0.0, 0.05, size=(5, 30))
    inc = IncrementMatrix(dy)
    part = pairwise_partition(4)
    stats = compute_factor_stats(inc)
    a = bootstrap_group_maxima(inc, part, stats.vhat, 25, 42)
    b = bootstrap_group_maxima(inc, part, stats.vhat, 25, 42)
    assert np.array_equal(a.maxima, b.maxima)


def check_multiplier_telescoping():
    rng = np.random.default_rng(21)
    sums = np.array([gen_multipliers(40, rng).sum() for _ in range(5000)])
    assert abs(sums.var() - 1.0) < 4 * math.sqrt(2 / 5000)


CHECKS = [
    ("oracle entries match the brute-force double sum", check_oracle_vs_brute_force),
    ("multiplier autocovariance is (1, -1/2, 0)", check_multiplier_moments),
    ("multiplier sums telescope to unit variance", check_multiplier_telescoping),
    ("pair statistics are scale invariant", check_scale_invariance),
    ("stepdown-Holm matches classic Holm", check_holm_vs_classic),
    ("critical values are subset-monotone", check_condition_i),
    ("degenerate bootstrap draws reject nothing", check_rw_degenerate),
    ("bootstrap draws are seed-deterministic", check_bootstrap_determinism),
]


def run_selftest(out=print):
    """Run all checks; returns the number of failures."""
    failures = 0
    for name, fn in CHECKS:
        try:
            fn()
        except Exception as exc:  # noqa: BLE001 - report and count any failure
            failures += 1
            out(f"[FAIL] {name}: {exc!r}")
        else:
            out(f"[ok]   {name}")
    return failures
