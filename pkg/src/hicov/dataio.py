"""Price-panel ingestion and the real-data analysis pipeline.

A panel is a rectangular CSV of log-prices: one header row of asset ids,
one row per bar.  An optional session column marks trading sessions;
increments that straddle a session boundary (overnight returns) are dropped
by stitching the sessions together, so the loaded panel's increments are
exactly the within-session increments.

``analyze`` runs the full pipeline on a panel: increments, pair statistics,
bootstrap draws, stepdown decisions, and a masked realized correlation
matrix in which pairs whose null was not rejected are blanked.  With a
factor column the statistics test residual sparsity; with no factor (or an
identically zero factor column) they test the sparsity of the realized
covariance itself.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bootstrap import bootstrap_group_maxima
from .estimators import IncrementMatrix, compute_entry_stats, compute_factor_stats
from .multitest import (
    HolmProvider,
    RomanoWolfProvider,
    group_statistics,
    pairwise_partition,
    sector_partition,
    stepdown,
    stepdown_records,
)

__all__ = [
    "DataError",
    "PricePanel",
    "AnalysisReport",
    "load_price_csv",
    "load_sector_csv",
    "analyze",
    "write_report",
]


class DataError(ValueError):
    """Malformed input data, with row/column location where known."""


@dataclass(frozen=True)
class PricePanel:
    """Log-price panel; when a factor is designated it is the last column."""

    prices: np.ndarray
    asset_ids: tuple[str, ...]
    factor_id: str | None = None

    def __post_init__(self):
        prices = np.asarray(self.prices, dtype=float)
        object.__setattr__(self, "prices", prices)
        if prices.ndim != 2:
            raise DataError("prices must be a 2-D array (assets x times)")
        if len(self.asset_ids) != prices.shape[0]:
            raise DataError("one asset id per price row required")
        if self.factor_id is not None and self.asset_ids[-1] != self.factor_id:
            raise DataError("factor must be stored as the last asset")

    @property
    def d(self) -> int:
        return self.prices.shape[0]

    @property
    def n(self) -> int:
        return self.prices.shape[1] - 1


def _parse_cell(value, row, col_name):
    try:
        return float(value)
    except ValueError:
        raise DataError(
            f"row {row}, column {col_name!r}: could not parse {value!r} as a number"
        ) from None


def load_price_csv(path, factor_col=None, session_col=None, drop_overnight=True):
    """Load a log-price panel from CSV.

    Parameters
    ----------
    path : str or Path
        Rectangular CSV with a header row of asset ids.
    factor_col : str, optional
        Header name of the factor; moved to the last column.  Omitting it
        puts the analysis into the direct (no-factor) sparsity mode.
    session_col : str, optional
        Header name of a session-id column.  With ``drop_overnight`` the
        panel is stitched so that increments across session boundaries
        disappear: n = sum over sessions of (rows - 1).
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            raise DataError(f"{path}: duplicate column names in header")
        rows = []
        for r, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {r} has {len(row)} fields, expected {len(header)}"
                )
            rows.append(row)
    if len(rows) < 2:
        raise DataError(f"{path}: need at least 2 data rows, got {len(rows)}")

    session_idx = None
    if session_col is not None:
        if session_col not in header:
            raise DataError(f"{path}: session column {session_col!r} not in header")
        session_idx = header.index(session_col)
    asset_cols = [c for c in range(len(header)) if c != session_idx]
    ids = [header[c] for c in asset_cols]
    if factor_col is not None:
        if factor_col not in ids:
            raise DataError(
                f"{path}: factor column {factor_col!r} not found; "
                f"available columns: {', '.join(ids)}"
            )
        order = [c for c in asset_cols if header[c] != factor_col]
        order.append(asset_cols[ids.index(factor_col)])
        asset_cols = order
        ids = [header[c] for c in asset_cols]

    raw = np.empty((len(rows), len(asset_cols)))
    for r, row in enumerate(rows):
        for k, c in enumerate(asset_cols):
            raw[r, k] = _parse_cell(row[c], r + 2, header[c])

    if session_idx is not None and drop_overnight:
        sessions = [row[session_idx] for row in rows]
        bounds = [0] + [
            r for r in range(1, len(sessions)) if sessions[r] != sessions[r - 1]
        ] + [len(sessions)]
        chunks = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            if hi - lo >= 2:
                chunks.append(np.diff(raw[lo:hi], axis=0))
        if not chunks:
            raise DataError(f"{path}: no session has at least 2 rows")
        increments = np.concatenate(chunks, axis=0)
        prices = np.concatenate(
            [raw[0:1], raw[0:1] + np.cumsum(increments, axis=0)], axis=0
        )
    else:
        prices = raw

    return PricePanel(
        prices=prices.T, asset_ids=tuple(ids), factor_id=factor_col
    )


def load_sector_csv(path):
    """Read an asset,sector file into a mapping."""
    path = Path(path)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip().lower() for h in next(reader, [])]
        if "asset" not in header or "sector" not in header:
            raise DataError(f"{path}: header must contain 'asset' and 'sector' columns")
        ai, si = header.index("asset"), header.index("sector")
        mapping = {}
        for r, row in enumerate(reader, start=2):
            if len(row) <= max(ai, si):
                raise DataError(f"{path}: row {r} is too short")
            asset, sector = row[ai].strip(), row[si].strip()
            if not asset or not sector:
                raise DataError(f"{path}: row {r}: empty asset or sector")
            mapping[asset] = sector
    return mapping


@dataclass
class AnalysisReport:
    """Everything the report writer needs, JSON-shaped where possible."""

    correlation: np.ndarray
    mask: np.ndarray
    asset_ids: tuple[str, ...]
    group_records: dict
    pair_records: dict
    meta: dict
    sector_names: tuple[str, ...] | None = None
    sector_pvalues: np.ndarray | None = None
    sector_of: tuple[str, ...] | None = None
    clamped: np.ndarray | None = field(default=None, repr=False)


def _safe_correlation(cov):
    sd = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = cov / np.outer(sd, sd)
    corr[~np.isfinite(corr)] = 0.0
    np.fill_diagonal(corr, 1.0)
    return corr


def analyze(panel, sectors=None, alpha=0.05, B=999, methods=("rw",), seed=0):
    """Run the residual-sparsity (or direct sparsity) analysis of a panel.

    Pairwise stepdown decisions always feed the correlation mask; when
    ``sectors`` maps asset ids to sector names, the partitioned sector test
    is run as well (sharing the same resamples) and its per-group records
    become the report's group table.

    Returns an :class:`AnalysisReport`.
    """
    if B < 1:
        raise ValueError("B must be >= 1")
    methods = tuple(methods)
    inc_full = IncrementMatrix.from_prices(panel.prices)
    factor_live = (
        panel.factor_id is not None and np.any(inc_full.dy[-1] != 0.0)
    )
    if factor_live:
        mode = "factor"
        inc = inc_full
        stats = compute_factor_stats(inc)
        names = panel.asset_ids[:-1]
        rc = stats.rc
        du = len(names)
        with np.errstate(divide="ignore", invalid="ignore"):
            resid_cov = rc[:du, :du] - np.outer(rc[:du, du], rc[:du, du]) / rc[du, du]
        correlation = _safe_correlation(resid_cov)
    else:
        mode = "entry"
        keep = panel.prices[:-1] if panel.factor_id is not None else panel.prices
        names = panel.asset_ids[:-1] if panel.factor_id is not None else panel.asset_ids
        inc = IncrementMatrix.from_prices(keep)
        stats = compute_entry_stats(inc)
        correlation = _safe_correlation(stats.rc)

    m = stats.m
    if m < 2:
        raise DataError("need at least 2 tested assets")
    pairwise = pairwise_partition(m, names=list(names))
    g_pw = group_statistics(stats.t, pairwise)
    seed_seq = np.random.SeedSequence((int(seed), 11))
    draws_pw = None
    if "rw" in methods:
        draws_pw = bootstrap_group_maxima(
            inc, pairwise, stats.vhat, B, seed_seq, mode=mode
        )

    def _provider(method, partition, draws):
        if method == "holm":
            return HolmProvider(partition)
        if method == "rw":
            return RomanoWolfProvider(draws)
        raise ValueError(f"unknown method {method!r}")

    pair_records, results_pw = {}, {}
    for method in methods:
        res = stepdown(g_pw, _provider(method, pairwise, draws_pw), alpha)
        results_pw[method] = res
        pair_records[method] = stepdown_records(res, pairwise, g_pw, stats.clamped)

    lead = results_pw[methods[0]]
    mask = np.ones((m, m), dtype=bool)
    pi, pj = pairwise.pairs[:, 0], pairwise.pairs[:, 1]
    mask[pi, pj] = ~lead.rejected
    mask[pj, pi] = ~lead.rejected
    np.fill_diagonal(mask, False)

    group_records = pair_records
    sector_names = sector_pvalues = sector_of = None
    if sectors is not None:
        if isinstance(sectors, dict):
            missing = [a for a in names if a not in sectors]
            if missing:
                raise DataError(f"assets without sector label: {', '.join(missing)}")
            sector_of = tuple(str(sectors[a]) for a in names)
        else:
            sector_of = tuple(str(s) for s in sectors)
            if len(sector_of) != m:
                raise DataError("sector list length must match tested assets")
        spart = sector_partition(sector_of)
        g_sec = group_statistics(stats.t, spart)
        draws_sec = None
        if "rw" in methods:
            draws_sec = bootstrap_group_maxima(
                inc, spart, stats.vhat, B, seed_seq, mode=mode
            )
        group_records = {}
        sec_results = {}
        for method in methods:
            res = stepdown(g_sec, _provider(method, spart, draws_sec), alpha)
            sec_results[method] = res
            group_records[method] = stepdown_records(res, spart, g_sec, stats.clamped)
        sector_names = tuple(dict.fromkeys(sector_of))
        ns = len(sector_names)
        sector_pvalues = np.full((ns, ns), np.nan)
        pos = {s: k for k, s in enumerate(sector_names)}
        lead_sec = sec_results[methods[0]]
        for g, label in enumerate(spart.labels):
            sk, sl = label.split(":", 1)
            a, b = pos[sk], pos[sl]
            sector_pvalues[a, b] = lead_sec.adjusted_p[g]
            sector_pvalues[b, a] = lead_sec.adjusted_p[g]

    n_pairs = pairwise.n_pairs
    meta = {
        "mode": mode,
        "n": inc.n,
        "d": panel.d,
        "tested_assets": m,
        "alpha": alpha,
        "B": B,
        "seed": int(seed),
        "methods": list(methods),
        "factor_id": panel.factor_id,
        "clamped_pairs": int(stats.clamped[pi, pj].sum()),
        "rejected_pairs": {
            method: int(results_pw[method].rejected.sum()) for method in methods
        },
        "share_rejected": {
            method: results_pw[method].rejected.sum() / n_pairs for method in methods
        },
    }
    return AnalysisReport(
        correlation=correlation,
        mask=mask,
        asset_ids=tuple(names),
        group_records=group_records,
        pair_records=pair_records,
        meta=meta,
        sector_names=sector_names,
        sector_pvalues=sector_pvalues,
        sector_of=sector_of,
        clamped=stats.clamped,
    )


def _masked_matrix_csv(report):
    lines = ["," + ",".join(report.asset_ids)]
    m = len(report.asset_ids)
    for i in range(m):
        cells = [report.asset_ids[i]]
        for j in range(m):
            if report.mask[i, j]:
                cells.append("")
            else:
                cells.append(f"{report.correlation[i, j]:.6f}")
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _sector_pvalue_csv(report):
    names = report.sector_names
    lines = ["," + ",".join(names)]
    for a, name in enumerate(names):
        cells = [name]
        for b in range(len(names)):
            v = report.sector_pvalues[a, b]
            cells.append("" if (b < a or np.isnan(v)) else f"{v:.6f}")
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def write_report(report, outdir, formats=("csv", "json", "png")):
    """Write the report artifacts; returns the list of written paths.

    csv  -> matrix.csv (masked correlations) and, for sector analyses,
            sector_pvalues.csv
    json -> groups.json (per-method group records) and meta.json
    png  -> matrix.png, a heatmap of the masked correlation matrix
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in formats:
        p = outdir / "matrix.csv"
        p.write_text(_masked_matrix_csv(report), encoding="utf-8")
        written.append(p)
        if report.sector_pvalues is not None:
            p = outdir / "sector_pvalues.csv"
            p.write_text(_sector_pvalue_csv(report), encoding="utf-8")
            written.append(p)
    if "json" in formats:
        p = outdir / "groups.json"
        with open(p, "w", encoding="utf-8") as fh:
            json.dump(report.group_records, fh, indent=2, sort_keys=True)
            fh.write("\n")
        written.append(p)
        p = outdir / "meta.json"
        with open(p, "w", encoding="utf-8") as fh:
            json.dump(report.meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
        written.append(p)
    if "png" in formats:
        from .figures import correlation_heatmap

        p = outdir / "matrix.png"
        correlation_heatmap(
            report.correlation,
            mask=report.mask,
            labels=report.asset_ids,
            sector_of=report.sector_of,
            path=p,
        )
        written.append(p)
    return written
