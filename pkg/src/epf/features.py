"""Day-ahead design matrices with lagged prices, fundamentals and calendar dummies.

Layout for target day ``D`` (one row per delivery hour, pooled over hours):

==========================  ============  ==========================
block                        columns       group
==========================  ============  ==========================
own price, D-1/D-2/D-3/D-7   4 x 24        ``price D-k``
each base variable, D/D-1/D-7  3 x 24      ``<var> D`` / ``<var> D-k``
each neighbour price, D      24            ``price <zone> D``
day-of-week one-hot          7             ``Calendar``
holiday flag                 1             ``Holiday``
target-hour one-hot          24            ``Hour``
==========================  ============  ==========================
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Iterable, Sequence

import numpy as np

from .timeseries import MarketDataset, date_range

PRICE_LAGS = (1, 2, 3, 7)
EXOG_LAGS = (0, 1, 7)
NEIGHBOR_ZONES = ("AT", "DE-LU", "CH")
MAX_LAG = max(max(PRICE_LAGS), max(EXOG_LAGS))


class InsufficientHistoryError(ValueError):
    pass


class MissingDataError(ValueError):
    pass


class ScalerMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class CovariateConfig:
    target_zone: str
    base_variables: tuple[str, ...]
    neighbor_price_zones: tuple[str, ...] = ()
    label: str = "base"

    def __post_init__(self):
        object.__setattr__(self, "base_variables", tuple(self.base_variables))
        object.__setattr__(self, "neighbor_price_zones", tuple(self.neighbor_price_zones))
        if self.target_zone in self.neighbor_price_zones:
            raise ValueError(f"target zone {self.target_zone} cannot be its own neighbour")
        if len(set(self.neighbor_price_zones)) != len(self.neighbor_price_zones):
            raise ValueError("duplicate neighbour zones")

    @property
    def n_features(self) -> int:
        return (24 * len(PRICE_LAGS) + 24 * len(EXOG_LAGS) * len(self.base_variables)
                + 24 * len(self.neighbor_price_zones) + 7 + 1 + 24)

    @classmethod
    def from_dict(cls, doc: dict, target_zone: str | None = None) -> "CovariateConfig":
        return cls(
            target_zone=doc.get("target_zone", target_zone),
            base_variables=tuple(doc["base_variables"]),
            neighbor_price_zones=tuple(doc.get("neighbor_price_zones", ())),
            label=doc.get("label", "base"),
        )

    def to_dict(self) -> dict:
        return {"target_zone": self.target_zone, "base_variables": list(self.base_variables),
                "neighbor_price_zones": list(self.neighbor_price_zones), "label": self.label}


# ---------------------------------------------------------------------------
# scaling


@dataclass(frozen=True)
class ScalerState:
    """Min-max scaling. ``Norm`` maps to [0, 1], ``Norm1`` to [-1, 1]."""

    kind: str
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        if self.kind not in ("Norm", "Norm1"):
            raise ValueError(f"unknown transform {self.kind!r}")
        lo = np.asarray(self.lo, dtype=float).copy()
        hi = np.asarray(self.hi, dtype=float).copy()
        if lo.shape != hi.shape or np.any(hi < lo):
            raise ValueError("scaler needs hi >= lo per column")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def fit(cls, x: np.ndarray, kind: str = "Norm") -> "ScalerState":
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        return cls(kind, x.min(axis=0), x.max(axis=0))

    def select(self, idx) -> "ScalerState":
        return ScalerState(self.kind, self.lo[idx], self.hi[idx])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "min": self.lo.tolist(), "max": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalerState":
        return cls(d["kind"], np.array(d["min"], dtype=float), np.array(d["max"], dtype=float))

    def __eq__(self, other):
        if not isinstance(other, ScalerState):
            return NotImplemented
        return self.kind == other.kind and np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi)

    __hash__ = None


def norm_transform(x, state: ScalerState) -> np.ndarray:
    """Scale with training min/max; constant columns map to 0."""
    x = np.asarray(x, dtype=float)
    width = state.hi - state.lo
    const = width == 0
    out = (x - state.lo) / np.where(const, 1.0, width)
    if state.kind == "Norm1":
        out = 2.0 * out - 1.0
    return np.where(const, 0.0, out)


def norm_inverse(z, state: ScalerState) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if state.kind == "Norm1":
        z = (z + 1.0) / 2.0
    return state.lo + z * (state.hi - state.lo)


# ---------------------------------------------------------------------------
# design matrices


def _lag_label(k: int) -> str:
    return "D" if k == 0 else f"D-{k}"


def feature_layout(config: CovariateConfig) -> tuple[list[str], dict[str, str]]:
    """Column names and their ANC groups, in matrix order."""
    cols, groups = [], {}

    def block(group, n=24, fmt="{g} h{i:02d}"):
        for i in range(n):
            c = fmt.format(g=group, i=i)
            cols.append(c)
            groups[c] = group

    for k in PRICE_LAGS:
        block(f"price {_lag_label(k)}")
    for var in config.base_variables:
        for k in EXOG_LAGS:
            block(f"{var} {_lag_label(k)}")
    for z in config.neighbor_price_zones:
        block(f"price {z} D")
    block("Calendar", 7, "dow {i}")
    block("Holiday", 1, "holiday")
    block("Hour", 24, "hour {i:02d}")
    return cols, groups


@dataclass(frozen=True)
class RawDesign:
    """Unscaled features for a run of consecutive target days.

    ``day_X`` holds the per-day block (everything except the hour one-hot),
    shape ``(n_days, p_day)``; ``y`` is ``(n_days, 24)``.
    """

    config: CovariateConfig
    days: tuple[date, ...]
    columns: tuple[str, ...]
    groups: dict
    day_X: np.ndarray
    y: np.ndarray

    @property
    def p_day(self) -> int:
        return self.day_X.shape[1]

    def index_of(self, d: date) -> int:
        return (d - self.days[0]).days

    def rows(self, days: Sequence[date]) -> tuple[np.ndarray, np.ndarray]:
        """Pooled ``(24 * len(days), p)`` matrix and flat target vector."""
        idx = np.array([self.index_of(d) for d in days], dtype=int)
        if idx.size and (idx.min() < 0 or idx.max() >= len(self.days)):
            raise KeyError("requested day outside the raw design range")
        return pooled(self.day_X[idx]), self.y[idx].reshape(-1)


def pooled(day_X: np.ndarray) -> np.ndarray:
    """Expand per-day features to one row per hour with an hour one-hot block."""
    n, p = day_X.shape
    out = np.empty((n * 24, p + 24))
    out[:, :p] = np.repeat(day_X, 24, axis=0)
    out[:, p:] = np.tile(np.eye(24), (n, 1))
    return out


def earliest_feasible_day(dataset: MarketDataset) -> date:
    return dataset.span[0] + timedelta(days=MAX_LAG)


def build_raw(dataset: MarketDataset, config: CovariateConfig, first: date, last: date) -> RawDesign:
    days = date_range(first, last)
    if not days:
        raise ValueError("empty target range")
    earliest = earliest_feasible_day(dataset)
    if first < earliest:
        raise InsufficientHistoryError(
            f"target day {first} needs {MAX_LAG} days of history; earliest feasible day is {earliest}")
    if last > dataset.span[1]:
        raise InsufficientHistoryError(f"target day {last} is after dataset end {dataset.span[1]}")

    i0 = dataset.day_index(first)
    idx = np.arange(i0, i0 + len(days))
    blocks = []
    needed = []  # (series name, zone, lag) per block, for error messages

    own = dataset.day_matrix("price", config.target_zone)
    for k in PRICE_LAGS:
        blocks.append(own[idx - k])
        needed.append(("price", config.target_zone, k))
    for var in config.base_variables:
        m = dataset.day_matrix(var, config.target_zone)
        for k in EXOG_LAGS:
            blocks.append(m[idx - k])
            needed.append((var, config.target_zone, k))
    for z in config.neighbor_price_zones:
        blocks.append(dataset.day_matrix("price", z)[idx])
        needed.append(("price", z, 0))

    for b, (name, zone, k) in zip(blocks, needed):
        bad = np.argwhere(np.isnan(b))
        if bad.size:
            r, h = bad[0]
            ts = dataset.get(name, zone).timestamp(int((idx[r] - k) * 24 + h))
            raise MissingDataError(f"{name}/{zone} is missing at {ts.isoformat()}")

    hol = dataset.holiday_set(config.target_zone)
    cal = np.zeros((len(days), 8))
    for r, d in enumerate(days):
        cal[r, d.weekday()] = 1.0
        cal[r, 7] = 1.0 if d in hol else 0.0

    day_X = np.hstack(blocks + [cal])
    y = own[idx].copy()
    cols, groups = feature_layout(config)
    assert day_X.shape[1] + 24 == len(cols)
    return RawDesign(config, tuple(days), tuple(cols), groups, day_X, y)


@dataclass(frozen=True)
class DesignMatrix:
    """Scaled pooled design: one row per (day, hour), scalers fitted on the calibration days."""

    days: tuple[date, ...]
    columns: tuple[str, ...]
    groups: dict
    X: np.ndarray
    y: np.ndarray
    x_scaler: ScalerState
    y_scaler: ScalerState
    config: CovariateConfig | None = None

    @property
    def n_days(self) -> int:
        return len(self.days)

    @property
    def hours(self) -> np.ndarray:
        return np.tile(np.arange(24), self.n_days)

    @property
    def row_days(self) -> list[date]:
        return [d for d in self.days for _ in range(24)]

    def day_view(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-day inputs (hour one-hot dropped) and ``(n_days, 24)`` targets."""
        p_day = len(self.columns) - 24
        return self.X[::24, :p_day], self.y.reshape(-1, 24)

    def subset(self, days: Iterable[date]) -> "DesignMatrix":
        pos = {d: i for i, d in enumerate(self.days)}
        sel = [pos[d] for d in days]
        rows = (np.asarray(sel)[:, None] * 24 + np.arange(24)).reshape(-1)
        return DesignMatrix(tuple(self.days[i] for i in sel), self.columns, self.groups,
                            self.X[rows], self.y[rows], self.x_scaler, self.y_scaler, self.config)


def fit_scalers(raw: RawDesign, calib_days: Sequence[date], kind: str) -> tuple[ScalerState, ScalerState]:
    idx = np.array([raw.index_of(d) for d in calib_days], dtype=int)
    if idx.size == 0:
        raise ValueError("calibration window is empty")
    day_X = raw.day_X[idx]
    lo = np.concatenate([day_X.min(axis=0), np.zeros(24)])
    hi = np.concatenate([day_X.max(axis=0), np.ones(24)])
    y = raw.y[idx]
    return ScalerState(kind, lo, hi), ScalerState(kind, [np.nanmin(y)], [np.nanmax(y)])


def scale(raw: RawDesign, days: Sequence[date], x_scaler: ScalerState, y_scaler: ScalerState) -> DesignMatrix:
    if x_scaler.lo.size != len(raw.columns):
        raise ScalerMismatchError(f"scaler has {x_scaler.lo.size} columns, design has {len(raw.columns)}")
    X, y = raw.rows(days)
    return DesignMatrix(tuple(days), raw.columns, raw.groups, norm_transform(X, x_scaler),
                        norm_transform(y[:, None], y_scaler)[:, 0], x_scaler, y_scaler, raw.config)


def build_design(dataset: MarketDataset, config: CovariateConfig, target_days: tuple[date, date],
                 transform_kind: str = "Norm", calib_days: tuple[date, date] | None = None) -> DesignMatrix:
    """Scaled design for ``target_days`` (inclusive range).

    Scalers are fitted on ``calib_days`` (default: the target days themselves).
    """
    first, last = target_days
    cfirst, clast = calib_days or target_days
    raw = build_raw(dataset, config, min(first, cfirst), max(last, clast))
    xs, ys = fit_scalers(raw, date_range(cfirst, clast), transform_kind)
    return scale(raw, date_range(first, last), xs, ys)
