"""Rolling-origin backtests, the weekly naive benchmark and ensembles."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Sequence

import numpy as np

from . import dnn as dnn_mod
from . import lear as lear_mod
from .features import CovariateConfig, RawDesign, build_raw, fit_scalers, scale, MAX_LAG
from .timeseries import MarketDataset, date_range

RECALIBRATION_FREQUENCIES = ("daily", "weekly", "monthly", "once")
STANDARD_WINDOWS = (56, 112, 365, 730)
LEAR_TOL = 1e-3  # relative to lambda_max, see lear.fit_lear


class BacktestError(RuntimeError):
    pass


class EnsembleError(ValueError):
    pass


@dataclass(frozen=True)
class DnnSettings:
    n_trials: int = 20
    epochs_max: int = 1000
    patience: int = 30
    hyper: dnn_mod.HyperConfig | None = None  # skip the search when given

    @classmethod
    def from_dict(cls, d: dict) -> "DnnSettings":
        d = dict(d)
        if d.get("hyper"):
            d["hyper"] = dnn_mod.HyperConfig.from_dict(d["hyper"])
        return cls(**d)


@dataclass(frozen=True)
class BacktestConfig:
    model: str
    cw_days: int
    rf: str
    covariates: CovariateConfig
    test_range: tuple[date, date]
    seed: int = 0
    dnn: DnnSettings = DnnSettings()
    lear_tol: float = LEAR_TOL

    def __post_init__(self):
        if self.model not in ("LEAR", "DNN"):
            raise ValueError(f"model must be LEAR or DNN, got {self.model!r}")
        if self.rf not in RECALIBRATION_FREQUENCIES:
            raise ValueError(f"rf must be one of {RECALIBRATION_FREQUENCIES}, got {self.rf!r}")
        if self.cw_days < 8:
            raise ValueError("calibration window must hold at least 8 days")
        if self.test_range[1] < self.test_range[0]:
            raise ValueError("empty test range")

    @property
    def label(self) -> str:
        return f"{self.model} CW{self.cw_days} {self.covariates.label}"

    def check_against(self, dataset: MarketDataset) -> None:
        need = self.test_range[0] - timedelta(days=self.cw_days + MAX_LAG)
        if need < dataset.span[0]:
            raise BacktestError(f"{self.label}: needs data from {need}, dataset starts {dataset.span[0]}")
        if self.test_range[1] > dataset.span[1]:
            raise BacktestError(f"{self.label}: test range ends after dataset end {dataset.span[1]}")


@dataclass(frozen=True)
class RuntimeReport:
    total_wall_seconds: float
    per_day_average_seconds: float
    recalibration_count: int
    sum_wall_seconds: float | None = None  # ensembles: members' total
    tuning_seconds: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ForecastSet:
    label: str
    days: tuple[date, ...]
    values: np.ndarray  # (n_days, 24), EUR/MWh
    runtime: RuntimeReport | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(len(self.days), 24)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "days", tuple(self.days))
        if any((b - a).days != 1 for a, b in zip(self.days, self.days[1:])):
            raise ValueError(f"{self.label}: days are not contiguous")

    def __len__(self):
        return len(self.days)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("day,hour,value,label\n")
        for d, row in zip(self.days, self.values):
            ds = d.isoformat()
            for h, v in enumerate(row):
                buf.write(f"{ds},{h},{float(v)!r},{self.label}\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        _atomic_write(Path(path), self.to_csv())

    def restrict(self, days: Sequence[date]) -> "ForecastSet":
        pos = {d: i for i, d in enumerate(self.days)}
        try:
            idx = [pos[d] for d in days]
        except KeyError as exc:
            raise ValueError(f"{self.label}: no forecast for {exc.args[0]}") from None
        return ForecastSet(self.label, tuple(days), self.values[idx], self.runtime)


def read_forecast_csv(path, label: str | None = None) -> ForecastSet:
    """Parse ``day,hour,value,label`` rows back into a :class:`ForecastSet`."""
    rows = {}
    labels = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"day", "hour", "value"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for lineno, r in enumerate(reader, start=2):
            if label is not None and r.get("label") != label:
                continue
            try:
                d, h, v = date.fromisoformat(r["day"]), int(r["hour"]), float(r["value"])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if not 0 <= h <= 23:
                raise ValueError(f"{path}:{lineno}: hour {h} outside 0-23")
            rows.setdefault(d, [math.nan] * 24)[h] = v
            labels.add(r.get("label", ""))
    if not rows:
        raise ValueError(f"{path}: no forecast rows")
    if len(labels) > 1:
        raise ValueError(f"{path}: several labels {sorted(labels)}; pass one explicitly")
    days = sorted(rows)
    values = np.array([rows[d] for d in days])
    if np.isnan(values).any():
        raise ValueError(f"{path}: incomplete days (missing hours)")
    return ForecastSet(labels.pop(), tuple(days), values)


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


# ---------------------------------------------------------------------------
# schedule


def recalibrates(d: date, first: date, rf: str) -> bool:
    if d == first:
        return True
    if rf == "daily":
        return True
    if rf == "weekly":
        return d.weekday() == 0
    if rf == "monthly":
        return d.day == 1
    if rf == "once":
        return False
    raise ValueError(f"unknown recalibration frequency {rf!r}")


def recalibration_days(test_range: tuple[date, date], rf: str) -> list[date]:
    days = date_range(*test_range)
    return [d for d in days if recalibrates(d, days[0], rf)]


# ---------------------------------------------------------------------------
# engine


@dataclass
class BacktestResult:
    forecast: ForecastSet
    fits: list = field(default_factory=list)  # (model state, first day, last day)
    hyper: dnn_mod.HyperConfig | None = None


def _day_seed(seed: int, d: date) -> int:
    return int(np.random.SeedSequence([seed, d.toordinal()]).generate_state(1)[0])


def run_backtest(dataset: MarketDataset, config: BacktestConfig, keep_fits: bool = False,
                 raw: RawDesign | None = None):
    """Forecast every test day in order, refitting when the schedule fires.

    Wall time covers recalibration, input scaling and prediction. With
    ``keep_fits`` a :class:`BacktestResult` carrying every fitted model and
    the days it served is returned instead of the bare :class:`ForecastSet`.
    """
    config.check_against(dataset)
    first, last = config.test_range
    days = date_range(first, last)
    transform = "Norm"
    hyper = None
    tuning = 0.0
    if config.model == "DNN" and config.dnn.hyper is not None:
        hyper = config.dnn.hyper
        transform = hyper.transform

    t0 = time.perf_counter()
    if raw is None:
        raw = build_raw(dataset, config.covariates, first - timedelta(days=config.cw_days), last)
    out = np.empty((len(days), 24))
    fits = []
    model = None
    scalers = None
    n_recal = 0
    for i, d in enumerate(days):
        try:
            if recalibrates(d, first, config.rf):
                window = date_range(d - timedelta(days=config.cw_days), d - timedelta(days=1))
                scalers = fit_scalers(raw, window, transform)
                design = scale(raw, window, *scalers)
                if config.model == "LEAR":
                    model = lear_mod.fit_lear(design, seed=config.seed, tol=config.lear_tol, relative_tol=True)
                else:
                    if hyper is None:
                        t_tune = time.perf_counter()
                        hyper = dnn_mod.tpe_optimize(design, n_trials=config.dnn.n_trials, seed=config.seed,
                                                     epochs_max=config.dnn.epochs_max,
                                                     patience=config.dnn.patience)
                        tuning = time.perf_counter() - t_tune
                    model = dnn_mod.train(design, hyper, seed=_day_seed(config.seed, d))
                n_recal += 1
                if keep_fits:
                    fits.append([model, d, d])
            rows = scale(raw, [d], *scalers)
            if config.model == "LEAR":
                out[i] = lear_mod.predict_lear(model, rows)
            else:
                out[i] = dnn_mod.predict_dnn(model, rows)
            if keep_fits:
                fits[-1][2] = d
        except Exception as exc:
            raise BacktestError(f"{config.label}: failed on {d}: {exc}") from exc
    total = time.perf_counter() - t0 - tuning
    if not np.all(np.isfinite(out)):
        raise BacktestError(f"{config.label}: non-finite forecasts")
    runtime = RuntimeReport(total, total / len(days), n_recal, tuning_seconds=tuning)
    fc = ForecastSet(config.label, tuple(days), out, runtime)
    if keep_fits:
        return BacktestResult(fc, [tuple(f) for f in fits], hyper)
    return fc


def naive_forecast(dataset: MarketDataset, test_range: tuple[date, date], zone: str) -> ForecastSet:
    """Weekly persistence: the price observed exactly seven days earlier."""
    first, last = test_range
    if first - timedelta(days=7) < dataset.span[0]:
        raise BacktestError(f"naive forecast for {first} needs prices from {first - timedelta(days=7)}")
    if last > dataset.span[1] + timedelta(days=7):
        raise BacktestError(f"naive forecast for {last} needs prices up to {last - timedelta(days=7)}")
    prices = dataset.day_matrix("price", zone)
    idx = np.array([dataset.day_index(d) - 7 for d in date_range(first, last)])
    return ForecastSet("naive", tuple(date_range(first, last)), prices[idx].copy())


def actual_prices(dataset: MarketDataset, test_range: tuple[date, date], zone: str) -> ForecastSet:
    prices = dataset.day_matrix("price", zone)
    days = date_range(*test_range)
    idx = np.array([dataset.day_index(d) for d in days])
    return ForecastSet("actual", tuple(days), prices[idx].copy())


def _exact_mean(stack: np.ndarray) -> np.ndarray:
    """Correctly rounded member mean; independent of member order."""
    m = stack.shape[0]
    flat = stack.reshape(m, -1)
    sums = np.array([math.fsum(col) for col in flat.T])
    return (sums / m).reshape(stack.shape[1:])


def ensemble(members: Sequence[ForecastSet], label: str = "ensemble", strict: bool = False) -> ForecastSet:
    """Pointwise arithmetic mean of member forecasts.

    Runtime is the slowest member's (members run in parallel); the sum is kept
    alongside. ``strict`` requires the 8-member LEAR/DNN x 4-window layout.
    """
    members = list(members)
    if not members:
        raise EnsembleError("no members")
    if strict and len(members) != 8:
        raise EnsembleError(f"strict ensemble needs exactly 8 members, got {len(members)}")
    days = members[0].days
    for m in members[1:]:
        if m.days != days:
            raise EnsembleError(f"member {m.label!r} covers {m.days[0]}..{m.days[-1]}, "
                                f"expected {days[0]}..{days[-1]}")
    values = _exact_mean(np.stack([m.values for m in members]))
    runtimes = [m.runtime for m in members if m.runtime is not None]
    rt = None
    if runtimes:
        slowest = max(runtimes, key=lambda r: r.total_wall_seconds)
        total_sum = math.fsum(r.total_wall_seconds for r in runtimes)
        rt = RuntimeReport(slowest.total_wall_seconds, slowest.total_wall_seconds / len(days),
                           sum(r.recalibration_count for r in runtimes), total_sum,
                           math.fsum(r.tuning_seconds for r in runtimes))
    return ForecastSet(label, days, values, rt)
