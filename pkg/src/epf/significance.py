"""Giacomini-White test of conditional predictive ability.

Losses are absolute errors summed over the 24 hours of each day, giving one
loss differential ``d_t = sum_h |e_A| - sum_h |e_B|`` per day. The test
regresses on the instruments ``[1, d_{t-1}]``:

    z_t = [d_t, d_{t-1} d_t],   T = n zbar' S^-1 zbar  ~  chi2(2)

with ``S`` the sample covariance of ``z``. A small one-sided p-value says
model B (the second argument) is more accurate than model A.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

MIN_DAYS = 30
COND_LIMIT = 1e12


@dataclass(frozen=True)
class GwResult:
    statistic: float
    p_one_sided: float
    p_two_sided: float
    n: int
    instrument_dim: int = 2
    degenerate: bool = False


def daily_loss_differential(err_a, err_b) -> np.ndarray:
    a = np.asarray(err_a, dtype=float)
    b = np.asarray(err_b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"error arrays differ in shape: {a.shape} vs {b.shape}")
    if a.ndim != 2 or a.shape[1] != 24:
        raise ValueError("errors must be shaped (days, 24)")
    return np.abs(a).sum(axis=1) - np.abs(b).sum(axis=1)


def gw_test(err_a, err_b) -> GwResult:
    """One-sided test that B beats A, from per-(day, hour) forecast errors."""
    d = daily_loss_differential(err_a, err_b)
    if d.size < MIN_DAYS:
        raise ValueError(f"GW test needs at least {MIN_DAYS} days, got {d.size}")
    z = np.column_stack([d[1:], d[:-1] * d[1:]])
    n = z.shape[0]
    zbar = z.mean(axis=0)
    S = np.cov(z, rowvar=False)
    if not np.all(np.isfinite(S)) or np.linalg.cond(S) > COND_LIMIT:
        return GwResult(float("nan"), 1.0, 1.0, n, z.shape[1], degenerate=True)
    stat = float(n * zbar @ np.linalg.solve(S, zbar))
    p_two = float(stats.chi2.sf(stat, z.shape[1]))
    p_one = p_two / 2 if d.mean() > 0 else 1.0 - p_two / 2
    return GwResult(stat, p_one, p_two, n, z.shape[1])


def gw_matrix(forecasts, actual) -> tuple[list[str], np.ndarray]:
    """P-values for every ordered pair; rows are benchmarks, columns competitors.

    Cell ``(r, c)`` is small when column model ``c`` is significantly more
    accurate than row model ``r``. The diagonal is NaN.
    """
    forecasts = list(forecasts)
    if len(forecasts) < 2:
        raise ValueError("need at least two forecasts")
    a = np.asarray(actual, dtype=float)
    errs = []
    for f in forecasts:
        v = np.asarray(f.values, dtype=float)
        if v.shape != a.shape:
            raise ValueError(f"{f.label}: shape {v.shape} does not match actuals {a.shape}")
        errs.append(a - v)
    k = len(forecasts)
    out = np.full((k, k), np.nan)
    for r in range(k):
        for c in range(k):
            if r != c:
                out[r, c] = gw_test(errs[r], errs[c]).p_one_sided
    return [f.label for f in forecasts], out


def matrix_to_csv(labels, pvals) -> str:
    lines = ["benchmark," + ",".join(labels)]
    for lab, row in zip(labels, pvals):
        lines.append(lab + "," + ",".join("" if np.isnan(v) else repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def matrix_to_json(labels, pvals) -> str:
    rows = [[None if np.isnan(v) else float(v) for v in row] for row in pvals]
    return json.dumps({"schema_version": 1, "labels": list(labels), "p_values": rows,
                       "rows": "benchmark", "columns": "competitor"}, indent=1) + "\n"


def matrix_to_text(labels, pvals, alpha: float = 0.05) -> str:
    """Aligned table; ``*`` marks cells where the column model wins at ``alpha``."""
    w = max(8, max(len(l) for l in labels))
    lines = [" " * w + " " + " ".join(f"{l[:w]:>{w}}" for l in labels)]
    for lab, row in zip(labels, pvals):
        cells = []
        for v in row:
            if np.isnan(v):
                cells.append(f"{'-':>{w}}")
            else:
                cells.append(f"{v:>{w - 1}.3f}{'*' if v < alpha else ' '}")
        lines.append(f"{lab:<{w}} " + " ".join(cells))
    return "\n".join(lines) + "\n"
