"""Benchmark metrics: per-chain rows, CSV persistence, and summary reports.

One MetricsRow records one parameter of one method on one replication.
Posterior moments are computed over the most recent 75% of retained draws so
early transient still present after warmup does not leak into the summaries.
Reports aggregate rows into per-parameter tables of mean log posterior
variance with 95% quantile intervals and variance ratios against an oracle
method, pairing replications; ratios print as NA when the oracle is absent.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .sgld import Chain

METRICS_HEADER = [
    "design",
    "n",
    "s",
    "delta",
    "method",
    "parameter",
    "replication",
    "posterior_mean",
    "log_posterior_variance",
    "ppd_log_variance_ratio",
    "wall_clock_seconds",
]
METHODS = ("sgld", "sgld-corrected", "gibbs", "closed-form")
TAIL_FRACTION = 0.75


@dataclass(frozen=True)
class MetricsRow:
    """One parameter of one method on one replication."""

    design: str
    n: int
    s: int
    delta: float
    method: str
    parameter: str
    replication: int
    posterior_mean: float
    log_posterior_variance: float
    ppd_log_variance_ratio: float | None
    wall_clock_seconds: float

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected {METHODS}")
        if not math.isfinite(self.log_posterior_variance):
            raise ValueError(
                f"log posterior variance must be finite, got "
                f"{self.log_posterior_variance!r} for {self.parameter}"
            )


def parameter_name(label) -> str:
    block, coord = label
    return f"{block}_{coord}"


def rows_from_chain(
    chain: Chain,
    *,
    design: str,
    n: int,
    s: int,
    delta: float,
    method: str,
    replication: int,
    ppd_log_variance_ratio: float | None = None,
    wall_clock_seconds: float | None = None,
    tail: float = TAIL_FRACTION,
) -> list[MetricsRow]:
    """Summarize the recent-window moments of a chain, one row per coordinate."""
    window = chain.tail(tail)
    if window.shape[0] < 2:
        raise ValueError("need at least 2 retained draws to report a variance")
    means = window.mean(axis=0)
    variances = window.var(axis=0, ddof=1)
    wall = chain.runtime_seconds if wall_clock_seconds is None else wall_clock_seconds
    return [
        MetricsRow(
            design=design,
            n=n,
            s=s,
            delta=delta,
            method=method,
            parameter=parameter_name(chain.labels[j]),
            replication=replication,
            posterior_mean=float(means[j]),
            log_posterior_variance=float(np.log(variances[j])),
            ppd_log_variance_ratio=ppd_log_variance_ratio,
            wall_clock_seconds=float(wall),
        )
        for j in range(window.shape[1])
    ]


def rows_from_moments(
    mean: np.ndarray,
    cov: np.ndarray,
    labels,
    *,
    design: str,
    n: int,
    method: str,
    replication: int,
    s: int = 0,
    delta: float = float("nan"),
    wall_clock_seconds: float = 0.0,
) -> list[MetricsRow]:
    """Rows for a method that yields exact moments (the closed-form oracle)."""
    mean = np.asarray(mean, dtype=float)
    variances = np.diag(np.asarray(cov, dtype=float))
    return [
        MetricsRow(
            design=design,
            n=n,
            s=s,
            delta=delta,
            method=method,
            parameter=parameter_name(labels[j]),
            replication=replication,
            posterior_mean=float(mean[j]),
            log_posterior_variance=float(np.log(variances[j])),
            ppd_log_variance_ratio=None,
            wall_clock_seconds=wall_clock_seconds,
        )
        for j in range(mean.shape[0])
    ]


# ---------------------------------------------------------------------------
# CSV


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def save_metrics(path, rows, *, append: bool = False) -> None:
    path = Path(path)
    fresh = not (append and path.exists())
    with open(path, "a" if not fresh else "w", newline="") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(METRICS_HEADER)
        for row in rows:
            writer.writerow([_cell(getattr(row, f.name)) for f in fields(MetricsRow)])


def load_metrics(path) -> list[MetricsRow]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != METRICS_HEADER:
            raise ValueError(f"{path}: unexpected metrics header {reader.fieldnames}")
        for rec in reader:
            out.append(
                MetricsRow(
                    design=rec["design"],
                    n=int(rec["n"]),
                    s=int(rec["s"]),
                    delta=float(rec["delta"]) if rec["delta"] else float("nan"),
                    method=rec["method"],
                    parameter=rec["parameter"],
                    replication=int(rec["replication"]),
                    posterior_mean=float(rec["posterior_mean"]),
                    log_posterior_variance=float(rec["log_posterior_variance"]),
                    ppd_log_variance_ratio=(
                        float(rec["ppd_log_variance_ratio"])
                        if rec["ppd_log_variance_ratio"]
                        else None
                    ),
                    wall_clock_seconds=float(rec["wall_clock_seconds"]),
                )
            )
    return out


# ---------------------------------------------------------------------------
# summaries


def quantile_interval(values, level: float = 0.95) -> tuple[float, float]:
    """Central quantile interval with linear order-statistic interpolation."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    values = np.asarray(list(values), dtype=float)
    if values.size == 0:
        raise ValueError("no values to summarize")
    alpha = 0.5 * (1.0 - level)
    lo, hi = np.quantile(values, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


@dataclass(frozen=True)
class SummaryRow:
    design: str
    n: int
    s: int
    delta: float
    method: str
    parameter: str
    replications: int
    mean_posterior_mean: float
    mean_log_variance: float
    log_variance_lo: float
    log_variance_hi: float
    variance_ratio_vs_oracle: float | None
    mean_ppd_log_variance_ratio: float | None
    mean_wall_clock_seconds: float


def _delta_key(delta: float):
    return None if math.isnan(delta) else round(float(delta), 12)


def summarize(rows, *, oracle_method: str = "closed-form", level: float = 0.95):
    """Aggregate rows across replications into one SummaryRow per cell.

    Variance ratios pair each row with the oracle row of the same design, n,
    parameter, and replication (the oracle does not depend on S or delta) and
    average exp(log-variance difference); cells without oracle rows get None.
    """
    oracle_lv: dict[tuple, float] = {}
    for row in rows:
        if row.method == oracle_method:
            oracle_lv[(row.design, row.n, row.parameter, row.replication)] = (
                row.log_posterior_variance
            )

    cells: dict[tuple, list[MetricsRow]] = {}
    for row in rows:
        key = (row.design, row.n, row.s, _delta_key(row.delta), row.method, row.parameter)
        cells.setdefault(key, []).append(row)

    out = []
    for key in sorted(cells, key=lambda k: tuple(str(part) for part in k)):
        group = cells[key]
        lvs = [r.log_posterior_variance for r in group]
        lo, hi = quantile_interval(lvs, level)
        ratios = [
            math.exp(r.log_posterior_variance - oracle_lv[k])
            for r in group
            if (k := (r.design, r.n, r.parameter, r.replication)) in oracle_lv
        ]
        ppds = [
            r.ppd_log_variance_ratio
            for r in group
            if r.ppd_log_variance_ratio is not None
        ]
        out.append(
            SummaryRow(
                design=group[0].design,
                n=group[0].n,
                s=group[0].s,
                delta=group[0].delta,
                method=group[0].method,
                parameter=group[0].parameter,
                replications=len(group),
                mean_posterior_mean=float(np.mean([r.posterior_mean for r in group])),
                mean_log_variance=float(np.mean(lvs)),
                log_variance_lo=lo,
                log_variance_hi=hi,
                variance_ratio_vs_oracle=(
                    float(np.mean(ratios)) if ratios else None
                ),
                mean_ppd_log_variance_ratio=(
                    float(np.mean(ppds)) if ppds else None
                ),
                mean_wall_clock_seconds=float(
                    np.mean([r.wall_clock_seconds for r in group])
                ),
            )
        )
    return out


def format_report(summary) -> str:
    """Plain-text table of the summary rows."""
    header = [
        "design",
        "n",
        "S",
        "delta",
        "method",
        "parameter",
        "reps",
        "mean-log-var",
        "95%-interval",
        "var-ratio",
        "ppd-log-ratio",
        "seconds",
    ]
    table = [header]
    for s in summary:
        table.append(
            [
                s.design,
                str(s.n),
                str(s.s),
                "NA" if math.isnan(s.delta) else f"{s.delta:g}",
                s.method,
                s.parameter,
                str(s.replications),
                f"{s.mean_log_variance:+.4f}",
                f"[{s.log_variance_lo:+.4f}, {s.log_variance_hi:+.4f}]",
                "NA" if s.variance_ratio_vs_oracle is None else f"{s.variance_ratio_vs_oracle:.4f}",
                "NA" if s.mean_ppd_log_variance_ratio is None else f"{s.mean_ppd_log_variance_ratio:+.4f}",
                f"{s.mean_wall_clock_seconds:.2f}",
            ]
        )
    widths = [max(len(row[j]) for row in table) for j in range(len(header))]
    lines = [
        "  ".join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip()
        for row in table
    ]
    lines.insert(1, "  ".join("-" * width for width in widths))
    return "\n".join(lines) + "\n"


def save_report_csv(path, summary) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f.name for f in fields(SummaryRow)])
        for s in summary:
            writer.writerow([_cell(getattr(s, f.name)) for f in fields(SummaryRow)])
