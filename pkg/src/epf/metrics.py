"""Point-forecast accuracy metrics and extreme-price slices.

All functions take actual prices first and forecasts second, as flat or
``(days, 24)`` arrays; every (day, hour) cell counts once.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

SLICES = ("all", "bottom5", "top5")


class UndefinedMetricError(ValueError):
    pass


def _pair(p, p_hat):
    p = np.asarray(p, dtype=float).reshape(-1)
    p_hat = np.asarray(p_hat, dtype=float).reshape(-1)
    if p.shape != p_hat.shape:
        raise ValueError(f"length mismatch: {p.size} actual vs {p_hat.size} forecast values")
    if p.size == 0:
        raise ValueError("no cells to evaluate")
    return p, p_hat


def mae(p, p_hat) -> float:
    p, p_hat = _pair(p, p_hat)
    return float(np.mean(np.abs(p - p_hat)))


def rmse(p, p_hat) -> float:
    p, p_hat = _pair(p, p_hat)
    return float(np.sqrt(np.mean((p - p_hat) ** 2)))


def rmae(p, p_hat, p_naive) -> float:
    """MAE relative to the weekly persistence forecast on the same cells."""
    denom = mae(p, p_naive)
    if denom == 0:
        raise UndefinedMetricError("naive benchmark has zero MAE; rMAE is undefined")
    return mae(p, p_hat) / denom


def smape(p, p_hat) -> float:
    """Symmetric MAPE in percent, in [0, 200]. A cell with p = p_hat = 0 contributes 0."""
    p, p_hat = _pair(p, p_hat)
    num = np.abs(p - p_hat)
    den = (np.abs(p) + np.abs(p_hat)) / 2.0
    terms = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return float(100.0 * np.mean(terms))


def r2(p, p_hat) -> float:
    """``1 - SSR/SST`` around the mean actual price; negative when worse than the mean."""
    p, p_hat = _pair(p, p_hat)
    if p.size < 2:
        raise UndefinedMetricError("R^2 needs at least two cells")
    sst = float(np.sum((p - p.mean()) ** 2))
    if sst == 0:
        raise UndefinedMetricError("actual prices have zero variance; R^2 is undefined")
    return 1.0 - float(np.sum((p - p_hat) ** 2)) / sst


def percentile_slice(actual, which: str) -> np.ndarray:
    """Boolean mask of cells at or below the 5th / at or above the 95th percentile.

    Percentiles use linear interpolation over all test-range hourly prices.
    With all prices equal both masks select every cell.
    """
    a = np.asarray(actual, dtype=float)
    if which == "all":
        return np.ones(a.shape, dtype=bool)
    if which == "bottom5":
        return a <= np.percentile(a, 5)
    if which == "top5":
        return a >= np.percentile(a, 95)
    raise ValueError(f"unknown slice {which!r}; expected one of {SLICES}")


@dataclass(frozen=True)
class MetricsReport:
    label: str
    slice: str
    mae: float
    rmse: float
    rmae: float
    smape_percent: float
    r2: float
    n_hours: int

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(forecast, actual, naive, mask=None, label: str = "", slice_name: str = "all") -> MetricsReport:
    """All five metrics on the masked cells; rMAE uses the naive forecast on the same cells."""
    f = np.asarray(forecast, dtype=float)
    a = np.asarray(actual, dtype=float)
    n = np.asarray(naive, dtype=float)
    if not (f.shape == a.shape == n.shape):
        raise ValueError(f"shape mismatch: forecast {f.shape}, actual {a.shape}, naive {n.shape}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        f, a, n = f[mask], a[mask], n[mask]
    try:
        rel = rmae(a, f, n)
    except UndefinedMetricError:
        rel = float("nan")
    try:
        det = r2(a, f)
    except UndefinedMetricError:
        det = float("nan")
    return MetricsReport(label, slice_name, mae(a, f), rmse(a, f), rel, smape(a, f), det, int(a.size))


def pearson(a, b) -> float:
    a, b = _pair(a, b)
    if a.size < 2:
        raise UndefinedMetricError("Pearson correlation needs at least two values")
    ac, bc = a - a.mean(), b - b.mean()
    sa, sb = float(np.sqrt(ac @ ac)), float(np.sqrt(bc @ bc))
    if sa == 0 or sb == 0:
        raise UndefinedMetricError("Pearson correlation is undefined for a constant input")
    return float(np.clip((ac @ bc) / (sa * sb), -1.0, 1.0))


def reports_to_csv(reports) -> str:
    cols = ["label", "slice", "mae", "rmse", "rmae", "smape_percent", "r2", "n_hours"]
    lines = [",".join(cols)]
    for r in reports:
        d = r.to_dict()
        lines.append(",".join(repr(d[c]) if isinstance(d[c], float) else str(d[c]) for c in cols))
    return "\n".join(lines) + "\n"


def reports_to_json(reports) -> str:
    return json.dumps({"schema_version": 1, "metrics": [r.to_dict() for r in reports]}, indent=1) + "\n"


def format_table(reports) -> str:
    """Plain-text table in the layout of the accuracy tables."""
    head = f"{'model':<32} {'slice':<8} {'MAE':>8} {'RMSE':>8} {'rMAE':>7} {'sMAPE':>8} {'R2':>8}"
    lines = [head, "-" * len(head)]
    for r in reports:
        lines.append(f"{r.label:<32} {r.slice:<8} {r.mae:8.2f} {r.rmse:8.2f} {r.rmae:7.2f} "
                     f"{r.smape_percent:7.2f}% {r.r2:8.2f}")
    return "\n".join(lines) + "\n"
