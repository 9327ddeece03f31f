"""Wild multiplier bootstrap with MA(1)-dependent Gaussian weights.

The multipliers e_1..e_n are built as differences of n+1 iid centered
Gaussians with variance 1/2, so their autocovariance is exactly
(1, -1/2, 0, 0, ...).  This matches the lag structure of the asymptotic
covariance estimator: conditionally on the data, the bootstrapped realized
covariance entries

    rc_star[i, j] = sqrt(n) * sum_h e_h * dy[i, h] * dy[j, h]

have covariance equal, as an algebraic identity, to the corresponding
oracle entries.  Because ``rc_star`` already carries the sqrt(n) scaling of
the estimation error, the bootstrapped Studentized statistic is the
four-term contrast below divided by the *same* variance estimate as the
observed statistic, with no further scaling (its conditional variance is
then exactly 1 at the matching variance entry).

Resamples draw their multipliers from independently seeded substreams keyed
by the resample index, so results do not depend on scheduling.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .estimators import IncrementMatrix, realized_cov

__all__ = [
    "BootstrapDraws",
    "gen_multipliers",
    "multiplier_matrix",
    "bootstrap_rc",
    "tstar",
    "bootstrap_group_maxima",
    "draws_key",
    "save_draws",
    "load_draws",
]


def gen_multipliers(n, rng):
    """One multiplier vector of length n (differences of N(0, 1/2) draws)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    eta = rng.normal(0.0, math.sqrt(0.5), size=n + 1)
    return eta[1:] - eta[:-1]


def _seed_sequence(seed):
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def multiplier_matrix(n, B, seed):
    """B multiplier vectors, row b drawn from substream b of ``seed``."""
    children = _seed_sequence(seed).spawn(B)
    out = np.empty((B, n))
    for b, child in enumerate(children):
        out[b] = gen_multipliers(n, np.random.Generator(np.random.Philox(child)))
    return out


def bootstrap_rc(inc: IncrementMatrix, e, rows=None):
    """Multiplier-weighted realized covariance, scaled by sqrt(n).

    Computed as one weighted Gram product over the requested asset rows.
    Returns a full d x d matrix with NaN outside ``rows`` x ``rows``; the
    factor (last asset) must be included in ``rows``.
    """
    dy = inc.dy
    e = np.asarray(e, dtype=float)
    if e.shape != (inc.n,):
        raise ValueError(f"multiplier vector must have length n={inc.n}")
    if rows is None:
        sub = dy
        out = math.sqrt(inc.n) * ((sub * e) @ sub.T)
        return out
    rows = np.asarray(sorted(set(int(r) for r in rows)), dtype=int)
    if rows.size == 0 or rows.min() < 0 or rows.max() >= inc.d:
        raise ValueError("rows out of range")
    if inc.d - 1 not in rows:
        raise ValueError("rows must include the factor (last asset)")
    sub = dy[rows]
    block = math.sqrt(inc.n) * ((sub * e) @ sub.T)
    out = np.full((inc.d, inc.d), np.nan)
    out[np.ix_(rows, rows)] = block
    return out


def tstar(rc, rc_star, vhat_ij, i, j):
    """Bootstrapped Studentized statistic for pair (i, j).

    The numerator replaces one realized-covariance factor at a time by its
    bootstrapped (already sqrt(n)-scaled) counterpart; the denominator is the
    observed variance estimate, not re-estimated.
    """
    f = rc.shape[0] - 1
    num = (
        rc_star[i, f] * rc[j, f]
        + rc[i, f] * rc_star[j, f]
        - rc_star[i, j] * rc[f, f]
        - rc[i, j] * rc_star[f, f]
    )
    return float(num / math.sqrt(vhat_ij))


@dataclass(frozen=True)
class BootstrapDraws:
    """Group maxima of the bootstrapped statistics: B rows, one column per group."""

    maxima: np.ndarray
    partition_id: str
    n: int
    key: str = ""

    @property
    def B(self) -> int:
        return self.maxima.shape[0]

    @property
    def n_groups(self) -> int:
        return self.maxima.shape[1]


def draws_key(inc: IncrementMatrix, seed, B):
    """Cache key tying draws to the data, the seed and the resample count."""
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(inc.dy).tobytes())
    entropy = _seed_sequence(seed).entropy
    h.update(json.dumps([B, entropy], default=str).encode())
    return h.hexdigest()


def bootstrap_group_maxima(inc, partition, vhats, B, seed, mode="factor", chunk=64):
    """Bootstrap the group maxima shared by every stepdown step.

    For each resample: fresh multipliers from substream b, one weighted Gram
    product over the union of assets the partition touches, the Studentized
    bootstrap statistic for every pair, then the per-group maximum of the
    absolute values.  ``vhats`` is the (floored) variance matrix of the
    observed statistics and is held fixed across resamples.

    Parameters
    ----------
    inc : IncrementMatrix
    partition : HypothesisPartition
        Supplies the flat pair array and group boundaries.
    vhats : ndarray
        m x m variance estimates (m = d-1 in factor mode, d in entry mode).
    B : int
        Number of resamples.
    seed : int or numpy.random.SeedSequence
        Root of the per-resample substreams.
    mode : {"factor", "entry"}
        Statistic family; see :mod:`hicov.estimators`.
    """
    if B < 1:
        raise ValueError(f"B must be >= 1, got {B}")
    if mode not in ("factor", "entry"):
        raise ValueError(f"unknown mode {mode!r}")
    dy = inc.dy
    n, d = inc.n, inc.d
    pi = partition.pairs[:, 0]
    pj = partition.pairs[:, 1]
    m = d - 1 if mode == "factor" else d
    if pj.max(initial=-1) >= m:
        raise ValueError("partition pairs out of range for this mode")
    if vhats.shape != (m, m):
        raise ValueError(f"vhats must be {m}x{m}")

    assets = np.unique(partition.pairs)
    if mode == "factor":
        assets = np.union1d(assets, [d - 1])
    pos = np.full(d, -1, dtype=int)
    pos[assets] = np.arange(assets.size)
    qi, qj = pos[pi], pos[pj]
    sub = np.ascontiguousarray(dy[assets])
    sqn = math.sqrt(n)
    denom = np.sqrt(vhats[pi, pj])

    rc = realized_cov(inc)
    if mode == "factor":
        floc = pos[d - 1]
        rcf = rc[assets, d - 1]
        rc_ff = rc[d - 1, d - 1]
        rc_sub = rc[np.ix_(assets, assets)]

    ee = multiplier_matrix(n, B, seed)
    starts = partition.starts[:-1]
    maxima = np.empty((B, partition.n_groups))
    for lo in range(0, B, chunk):
        hi = min(lo + chunk, B)
        weighted = sub[None, :, :] * ee[lo:hi, None, :]
        g = sqn * (weighted @ sub.T)
        if mode == "factor":
            gf = g[:, :, floc]
            gff = g[:, floc, floc]
            num = (
                gf[:, :, None] * rcf[None, None, :]
                + rcf[None, :, None] * gf[:, None, :]
                - g * rc_ff
                - rc_sub[None, :, :] * gff[:, None, None]
            )
            vals = np.abs(num[:, qi, qj]) / denom[None, :]
        else:
            vals = np.abs(g[:, qi, qj]) / denom[None, :]
        maxima[lo:hi] = np.maximum.reduceat(vals, starts, axis=1)
    return BootstrapDraws(
        maxima=maxima,
        partition_id=partition.partition_id,
        n=n,
        key=draws_key(inc, seed, B),
    )


def save_draws(draws: BootstrapDraws, path):
    """Persist draws so stepdown reruns can skip resampling."""
    np.savez(
        path,
        maxima=draws.maxima,
        n=draws.n,
        partition_id=np.asarray(draws.partition_id),
        key=np.asarray(draws.key),
    )


def load_draws(path, expected_key=None):
    """Load persisted draws; with ``expected_key`` a mismatch returns None."""
    with np.load(path, allow_pickle=False) as z:
        key = str(z["key"])
        if expected_key is not None and key != expected_key:
            return None
        return BootstrapDraws(
            maxima=z["maxima"],
            partition_id=str(z["partition_id"]),
            n=int(z["n"]),
            key=key,
        )
