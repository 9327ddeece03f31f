"""Stepdown multiple testing with Holm and bootstrap (Romano-Wolf) critical values.

Hypotheses are grouped by a partition of the pair set; the group statistic is
the maximum absolute pair statistic within the group.  The stepdown walk
sorts the group statistics in descending order and, at each step, compares
the top remaining statistic to a critical value computed over the remaining
set: the Holm value is a normal quantile shrinking with the number of
remaining elementary pairs, the Romano-Wolf value an empirical quantile of
the bootstrapped maximum over the remaining groups.  Both providers are
monotone in the subset order, which is what guarantees family-wise error
control; the walk verifies this on its trace and refuses to proceed
otherwise.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .estimators import T_SENTINEL

__all__ = [
    "MonotonicityError",
    "HypothesisPartition",
    "pairwise_partition",
    "sector_partition",
    "normal_quantile",
    "holm_critical",
    "rw_critical",
    "HolmProvider",
    "RomanoWolfProvider",
    "group_statistics",
    "StepdownResult",
    "stepdown",
    "stepdown_records",
]


class MonotonicityError(RuntimeError):
    """A critical-value provider violated subset monotonicity."""


@dataclass(frozen=True)
class HypothesisPartition:
    """Disjoint non-empty groups of asset pairs (i < j), stored flat.

    ``pairs`` concatenates the groups' pair lists; group g owns the slice
    ``pairs[starts[g]:starts[g+1]]``.
    """

    pairs: np.ndarray
    starts: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=int)
        starts = np.asarray(self.starts, dtype=int)
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "starts", starts)
        if pairs.ndim != 2 or pairs.shape[1] != 2:
            raise ValueError("pairs must be a (P, 2) array")
        if np.any(pairs[:, 0] >= pairs[:, 1]) or np.any(pairs[:, 0] < 0):
            raise ValueError("pairs must satisfy 0 <= i < j")
        if starts[0] != 0 or starts[-1] != len(pairs) or np.any(np.diff(starts) < 1):
            raise ValueError("groups must be non-empty and cover the pair array")
        if len(self.labels) != len(starts) - 1:
            raise ValueError("one label per group required")
        seen = set(map(tuple, pairs))
        if len(seen) != len(pairs):
            raise ValueError("groups must be disjoint (a pair appears twice)")

    @property
    def n_groups(self) -> int:
        return len(self.starts) - 1

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    @property
    def group_sizes(self) -> np.ndarray:
        return np.diff(self.starts)

    @property
    def partition_id(self) -> str:
        h = hashlib.sha1()
        h.update(self.pairs.tobytes())
        h.update(self.starts.tobytes())
        h.update("\x1f".join(self.labels).encode())
        return h.hexdigest()[:16]

    def group_pairs(self, g):
        return self.pairs[self.starts[g] : self.starts[g + 1]]


def pairwise_partition(m, names=None) -> HypothesisPartition:
    """Singleton groups, one per pair (i, j) with 0 <= i < j < m."""
    if m < 2:
        raise ValueError(f"need at least 2 assets, got {m}")
    if names is None:
        names = [str(i + 1) for i in range(m)]
    pairs = [(i, j) for i in range(m) for j in range(i + 1, m)]
    labels = tuple(f"{names[i]}:{names[j]}" for i, j in pairs)
    starts = np.arange(len(pairs) + 1)
    return HypothesisPartition(np.asarray(pairs), starts, labels)


def sector_partition(sector_labels, names=None) -> HypothesisPartition:
    """One group per unordered sector pair, in first-appearance order.

    Within-sector groups of single-asset sectors are empty and dropped;
    between-sector groups always contain at least one pair.
    """
    sector_labels = list(sector_labels)
    if any(s is None or str(s).strip() == "" for s in sector_labels):
        raise ValueError("every asset needs a non-empty sector label")
    sectors = list(dict.fromkeys(sector_labels))
    members = {s: [i for i, lab in enumerate(sector_labels) if lab == s] for s in sectors}
    pair_blocks, labels = [], []
    for a, sk in enumerate(sectors):
        for sl in sectors[a:]:
            ik, il = members[sk], members[sl]
            if sk == sl:
                block = [(i, j) for x, i in enumerate(ik) for j in ik[x + 1 :]]
            else:
                block = sorted(
                    (min(i, j), max(i, j)) for i in ik for j in il
                )
            if block:
                pair_blocks.append(np.asarray(block))
                labels.append(f"{sk}:{sl}")
    starts = np.concatenate([[0], np.cumsum([len(b) for b in pair_blocks])])
    return HypothesisPartition(np.concatenate(pair_blocks), starts, tuple(labels))


def normal_quantile(p) -> float:
    """Standard normal quantile (inverse cdf), accurate to double precision."""
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    return float(ndtri(p))


def holm_critical(partition, subset, alpha) -> float:
    """Normal quantile at 1 - alpha/(2m), m = pairs in the remaining groups."""
    subset = np.asarray(list(subset), dtype=int)
    if subset.size == 0:
        raise ValueError("subset must be non-empty")
    m = int(partition.group_sizes[subset].sum())
    return normal_quantile(1.0 - alpha / (2.0 * m))


def _quantile_rank(B, alpha):
    # order-statistic rank ceil((1-alpha)(B+1)), clamped to [1, B]
    rank = int(np.ceil((1.0 - alpha) * (B + 1) - 1e-9))
    return min(max(rank, 1), B)


def rw_critical(draws, subset, alpha) -> float:
    """Empirical quantile of the bootstrapped maximum over the subset's groups."""
    subset = np.asarray(list(subset), dtype=int)
    if subset.size == 0:
        raise ValueError("subset must be non-empty")
    col = draws.maxima[:, subset].max(axis=1)
    rank = _quantile_rank(col.size, alpha)
    return float(np.partition(col, rank - 1)[rank - 1])


class HolmProvider:
    """Bonferroni-Holm critical values for a fixed partition."""

    kind = "holm"

    def __init__(self, partition):
        self._sizes = partition.group_sizes.astype(float)

    def critical(self, subset, alpha):
        subset = np.asarray(list(subset), dtype=int)
        m = self._sizes[subset].sum()
        return float(ndtri(1.0 - alpha / (2.0 * m)))

    def critical_for_steps(self, order, alpha):
        m_suffix = np.cumsum(self._sizes[order][::-1])[::-1]
        return ndtri(1.0 - alpha / (2.0 * m_suffix))

    def step_alphas(self, order, sorted_stats):
        m_suffix = np.cumsum(self._sizes[order][::-1])[::-1]
        return 2.0 * m_suffix * ndtr(-sorted_stats)


class RomanoWolfProvider:
    """Bootstrap-quantile critical values sharing one set of resamples."""

    kind = "rw"

    def __init__(self, draws):
        self._maxima = draws.maxima
        self._B = draws.B

    def critical(self, subset, alpha):
        subset = np.asarray(list(subset), dtype=int)
        col = self._maxima[:, subset].max(axis=1)
        rank = _quantile_rank(self._B, alpha)
        return float(np.partition(col, rank - 1)[rank - 1])

    def _suffix_maxima(self, order):
        rev = self._maxima[:, order[::-1]]
        return np.maximum.accumulate(rev, axis=1)[:, ::-1]

    def critical_for_steps(self, order, alpha):
        sfx = self._suffix_maxima(order)
        rank = _quantile_rank(self._B, alpha)
        return np.partition(sfx, rank - 1, axis=0)[rank - 1, :]

    def step_alphas(self, order, sorted_stats):
        sfx = self._suffix_maxima(order)
        counts = (sfx >= sorted_stats[None, :]).sum(axis=0)
        return (1.0 + counts) / (self._B + 1.0)


def group_statistics(t_matrix, partition):
    """Per-group maxima of |T| over the partition's pairs."""
    vals = np.abs(t_matrix[partition.pairs[:, 0], partition.pairs[:, 1]])
    return np.maximum.reduceat(vals, partition.starts[:-1])


@dataclass(frozen=True)
class StepdownResult:
    """Outcome of one stepdown walk.

    ``order`` sorts groups by statistic, descending (ties by group index);
    ``critical_trace[k]`` is the critical value faced at step k of that
    order; rejections are always a prefix of the order.  ``adjusted_p`` is
    the running-maximum inversion of the provider: a group is rejected at
    level a exactly when its adjusted p-value is <= a.
    """

    order: np.ndarray
    rejected: np.ndarray
    critical_trace: np.ndarray
    adjusted_p: np.ndarray
    sentinel: np.ndarray
    n_steps: int

    @property
    def n_rejected(self) -> int:
        return int(self.rejected.sum())


def stepdown(group_stats, provider, alpha) -> StepdownResult:
    """Run the stepdown procedure at level ``alpha``.

    At each step the largest remaining group statistic is compared with the
    provider's critical value for the remaining set; a win rejects the group
    and shrinks the set, a loss accepts everything left and stops.  The
    critical trace must be non-increasing along the walk (subsets shrink);
    a violation raises :class:`MonotonicityError`.
    """
    stats = np.asarray(group_stats, dtype=float)
    if stats.ndim != 1 or stats.size == 0:
        raise ValueError("group_stats must be a non-empty vector")
    if np.any(np.isnan(stats)):
        raise ValueError("group_stats contain NaN")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    L = stats.size
    order = np.lexsort((np.arange(L), -stats))
    trace = np.asarray(provider.critical_for_steps(order, alpha), dtype=float)
    if trace.shape != (L,):
        raise ValueError("provider returned a malformed critical trace")
    if np.any(trace[1:] > trace[:-1]):
        raise MonotonicityError(
            "critical values increased along the stepdown walk; "
            "the provider violates subset monotonicity"
        )
    sorted_stats = stats[order]
    exceed = sorted_stats > trace
    n_rej = L if exceed.all() else int(np.argmax(~exceed))
    rejected = np.zeros(L, dtype=bool)
    rejected[order[:n_rej]] = True
    p_steps = np.minimum(
        np.maximum.accumulate(np.asarray(provider.step_alphas(order, sorted_stats))),
        1.0,
    )
    adjusted = np.empty(L)
    adjusted[order] = p_steps
    return StepdownResult(
        order=order,
        rejected=rejected,
        critical_trace=trace,
        adjusted_p=adjusted,
        sentinel=stats >= T_SENTINEL,
        n_steps=min(n_rej + 1, L),
    )


def stepdown_records(result, partition, group_stats, clamped=None):
    """Flatten a stepdown result into JSON-ready per-group records.

    ``clamped``, when given, is the boolean pair-level clamp matrix; a
    group's ``clamped_members`` lists its pairs whose variance was floored.
    """
    stats = np.asarray(group_stats, dtype=float)
    rank_of = np.empty(partition.n_groups, dtype=int)
    rank_of[result.order] = np.arange(partition.n_groups)
    records = []
    for g in range(partition.n_groups):
        rec = {
            "label": partition.labels[g],
            "statistic": float(stats[g]),
            "critical": float(result.critical_trace[rank_of[g]]),
            "rejected": bool(result.rejected[g]),
            "adjusted_p": float(result.adjusted_p[g]),
        }
        if clamped is not None:
            gp = partition.group_pairs(g)
            rec["clamped_members"] = [
                [int(i), int(j)] for i, j in gp if clamped[i, j]
            ]
        records.append(rec)
    return records
