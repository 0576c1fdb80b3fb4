"""Reading market exports and generating synthetic coupled markets.

Two file formats are understood:

* ENTSO-E style CSV: a header row then ``timestamp,value`` (or ``MTU;Value``)
  rows, one per interval start. Timestamps are ISO-8601 with an explicit
  offset; an interval ``start/end`` is accepted and its start is used.
* Open-Meteo style JSON: ``{"hourly": {"time": [...], "<var>": [...]},
  "hourly_units": {"<var>": "<unit>"}}``. ``utc_offset_seconds`` is honoured
  when present, otherwise times are taken as UTC.

Holiday files hold one ISO date per line (``#`` starts a comment).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable

import numpy as np

from .timeseries import (
    HOUR,
    QUARTER,
    AlignmentError,
    HourlySeries,
    MalformedSeriesError,
    MarketDataset,
    align,
    date_range,
    fill_gaps,
    nan_runs,
    resample_quarter_to_hour,
)

DEFAULT_MAX_GAP = 3


class IngestError(ValueError):
    pass


class TimestampParseError(IngestError):
    def __init__(self, path, line, text):
        super().__init__(f"{path}:{line}: cannot parse timestamp {text!r}")
        self.path = str(path)
        self.line = line


class VariableNotFoundError(KeyError):
    pass


# ---------------------------------------------------------------------------
# parsers


def _parse_ts(text: str) -> datetime:
    text = text.strip()
    if "/" in text:
        text = text.split("/", 1)[0]
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        raise ValueError("timestamp lacks an explicit UTC offset")
    return ts.astimezone(timezone.utc)


def _parse_value(text: str) -> float:
    text = text.strip()
    if text == "" or text.lower() in {"nan", "n/e", "-", "null"}:
        return math.nan
    return float(text)


def _infer_step(times: list[datetime], path) -> timedelta:
    if len(times) < 2:
        return HOUR
    diffs = {b - a for a, b in zip(times, times[1:])}
    step = min(diffs)
    if step <= timedelta(0):
        raise MalformedSeriesError(f"{path}: timestamps are not strictly increasing")
    if step not in (HOUR, QUARTER):
        raise MalformedSeriesError(f"{path}: unsupported resolution {step}")
    if any(d % step for d in diffs):
        raise MalformedSeriesError(f"{path}: inconsistent step between rows (base step {step})")
    return step


def _to_series(times, values, step, name, zone, unit, path) -> HourlySeries:
    start = times[0]
    if start.minute or start.second:
        raise MalformedSeriesError(f"{path}: first timestamp {start.isoformat()} is not on an hour boundary")
    n = int((times[-1] - start) / step) + 1
    per_hour = int(HOUR / step)
    n += (-n) % per_hour
    out = np.full(n, np.nan)
    for t, v in zip(times, values):
        out[int((t - start) / step)] = v
    return HourlySeries(name, zone, unit, start, step, out)


def parse_entsoe_csv(path, name: str, zone: str, unit: str) -> HourlySeries:
    """Read an ENTSO-E style export at its native resolution.

    Missing rows become NaN slots; a trailing partial hour is NaN-padded.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8-sig")
    lines = text.splitlines()
    if not lines:
        raise MalformedSeriesError(f"{path}: empty file")
    delim = ";" if ";" in lines[0] else ","
    reader = csv.reader(io.StringIO(text), delimiter=delim)
    header = [h.strip().lower() for h in next(reader)]
    if len(header) < 2:
        raise MalformedSeriesError(f"{path}: header needs a timestamp and a value column, got {header}")
    ts_col = next((i for i, h in enumerate(header) if h in {"timestamp", "mtu", "time", "datetime"}), 0)
    val_col = next((i for i, h in enumerate(header) if h in {"value", "price", "quantity"}), 1)

    times, values = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            ts = _parse_ts(row[ts_col])
        except (ValueError, IndexError):
            raise TimestampParseError(path, lineno, row[ts_col] if len(row) > ts_col else "") from None
        try:
            v = _parse_value(row[val_col]) if len(row) > val_col else math.nan
        except ValueError:
            raise MalformedSeriesError(f"{path}:{lineno}: cannot parse value {row[val_col]!r}") from None
        times.append(ts)
        values.append(v)
    if not times:
        raise MalformedSeriesError(f"{path}: no data rows")
    step = _infer_step(times, path)
    return _to_series(times, values, step, name, zone, unit, path)


def parse_openmeteo_json(path, variable: str, zone: str, name: str | None = None) -> HourlySeries:
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    hourly = doc.get("hourly")
    if not isinstance(hourly, dict) or "time" not in hourly:
        raise MalformedSeriesError(f"{path}: no hourly block with a time array")
    if variable not in hourly:
        present = sorted(k for k in hourly if k != "time")
        raise VariableNotFoundError(f"{path}: variable {variable!r} not found; available: {present}")
    raw_t, raw_v = hourly["time"], hourly[variable]
    if len(raw_t) != len(raw_v):
        raise MalformedSeriesError(f"{path}: time has {len(raw_t)} entries but {variable} has {len(raw_v)}")
    if not raw_t:
        raise MalformedSeriesError(f"{path}: empty hourly block")
    offset = timedelta(seconds=int(doc.get("utc_offset_seconds", 0)))
    times = []
    for i, t in enumerate(raw_t):
        try:
            ts = datetime.fromisoformat(str(t).replace("Z", "+00:00"))
        except ValueError:
            raise TimestampParseError(path, i, t) from None
        if ts.tzinfo is None:
            ts = ts.replace(tzinfo=timezone.utc) - offset
        times.append(ts.astimezone(timezone.utc))
    values = [math.nan if v is None else float(v) for v in raw_v]
    unit = str(doc.get("hourly_units", {}).get(variable, ""))
    step = _infer_step(times, path)
    if step != HOUR:
        raise MalformedSeriesError(f"{path}: expected hourly data, got step {step}")
    return _to_series(times, values, step, name or variable, zone, unit, path)


def parse_holiday_file(path) -> frozenset:
    days = set()
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            days.add(date.fromisoformat(line))
        except ValueError:
            raise IngestError(f"{path}:{lineno}: not an ISO date: {line!r}") from None
    return frozenset(days)


def write_entsoe_csv(series: HourlySeries, path) -> None:
    """Write ``timestamp,value`` rows; gaps are omitted so re-parsing restores them."""
    lines = ["timestamp,value"]
    for i, v in enumerate(series.values):
        if math.isnan(v):
            continue
        lines.append(f"{series.timestamp(i).isoformat()},{float(v)!r}")
    _atomic_write(Path(path), "\n".join(lines) + "\n")


def write_openmeteo_json(series_list: Iterable[HourlySeries], path) -> None:
    series_list = list(series_list)
    ref = series_list[0]
    hourly = {"time": [ref.timestamp(i).strftime("%Y-%m-%dT%H:%M") for i in range(len(ref))]}
    units = {"time": "iso8601"}
    for s in series_list:
        if s.start != ref.start or len(s) != len(ref):
            raise ValueError("open-meteo documents need series on a common time axis")
        hourly[s.name] = [None if math.isnan(v) else float(v) for v in s.values]
        units[s.name] = s.unit
    doc = {"utc_offset_seconds": 0, "timezone": "GMT", "hourly_units": units, "hourly": hourly}
    _atomic_write(Path(path), json.dumps(doc) + "\n")


def write_holiday_file(days: Iterable[date], path) -> None:
    _atomic_write(Path(path), "".join(f"{d.isoformat()}\n" for d in sorted(days)))


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


# ---------------------------------------------------------------------------
# manifest loading


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    kind: str  # "entsoe-csv" | "openmeteo-json"
    name: str
    zone: str
    unit: str = ""
    variable: str | None = None  # open-meteo variable key, defaults to name


@dataclass(frozen=True)
class IngestManifest:
    entries: tuple[ManifestEntry, ...]
    holiday_files: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: dict, base_dir=None) -> "IngestManifest":
        base = Path(base_dir) if base_dir else None

        def resolve(p):
            p = Path(p)
            return str(base / p) if base is not None and not p.is_absolute() else str(p)

        entries = []
        for i, e in enumerate(doc.get("entries", [])):
            missing = {"path", "kind", "name", "zone"} - set(e)
            if missing:
                raise IngestError(f"entries[{i}]: missing keys {sorted(missing)}")
            entries.append(ManifestEntry(resolve(e["path"]), e["kind"], e["name"], e["zone"],
                                         e.get("unit", ""), e.get("variable")))
        hol = {z: resolve(p) for z, p in doc.get("holiday_files", {}).items()}
        return cls(tuple(entries), hol)

    def validate(self) -> None:
        if not self.entries:
            raise IngestError("manifest has no entries")
        seen = set()
        for e in self.entries:
            if e.kind not in {"entsoe-csv", "openmeteo-json"}:
                raise IngestError(f"{e.name}/{e.zone}: unknown kind {e.kind!r}")
            if not Path(e.path).exists():
                raise IngestError(f"{e.name}/{e.zone}: file not found: {e.path}")
            if (e.name, e.zone) in seen:
                raise IngestError(f"duplicate series {e.name}/{e.zone} in manifest")
            seen.add((e.name, e.zone))
        for z, p in self.holiday_files.items():
            if not Path(p).exists():
                raise IngestError(f"holiday file for {z} not found: {p}")


def load(manifest: IngestManifest, max_gap: int = DEFAULT_MAX_GAP) -> MarketDataset:
    """Parse, resample, gap-fill and align every manifest entry."""
    manifest.validate()
    series = []
    for e in manifest.entries:
        try:
            if e.kind == "entsoe-csv":
                s = parse_entsoe_csv(e.path, e.name, e.zone, e.unit)
            else:
                s = parse_openmeteo_json(e.path, e.variable or e.name, e.zone, name=e.name)
                if e.unit:
                    s = HourlySeries(s.name, s.zone, e.unit, s.start, s.step, s.values)
        except (MalformedSeriesError, IngestError, KeyError) as exc:
            raise IngestError(f"{e.name}/{e.zone} ({e.path}): {exc}") from exc
        if s.step == QUARTER:
            s = resample_quarter_to_hour(s)
        s = fill_gaps(s, max_gap)
        series.append(s)
    holidays = {z: parse_holiday_file(p) for z, p in manifest.holiday_files.items()}
    try:
        ds = align(series, holidays, allow_nan=True)
    except AlignmentError as exc:
        raise IngestError(str(exc)) from exc
    for s in ds.series.values():
        runs = nan_runs(s.values)
        if runs:
            i, n = runs[0]
            raise IngestError(f"{s.name}/{s.zone}: gap of {n} h at {s.timestamp(i).isoformat()} "
                              f"exceeds the {max_gap} h fill limit")
    return ds


# ---------------------------------------------------------------------------
# synthetic coupled markets


@dataclass(frozen=True)
class Fundamentals:
    load_mean: float = 10_000.0  # MW
    load_annual_amp: float = 0.15
    load_noise: float = 0.04  # relative sd of the AR(1) load deviation
    load_ar: float = 0.5  # hourly persistence of the load deviation
    wind_ar: float = 0.8  # hourly persistence of the unit-variance wind driver
    wind_capacity: float = 3_000.0  # MW
    solar_capacity: float = 4_000.0  # MW
    load_coef: float = 0.0025  # EUR/MWh per MW of load deviation
    wind_coef: float = 0.004
    solar_coef: float = 0.0025


@dataclass(frozen=True)
class ZoneSpec:
    name: str
    coupling: float = 30.0  # loading on the shared factor, EUR/MWh per unit
    noise_sd: float = 5.0
    spike_prob: float = 0.0
    spike_scale: float = 0.0
    base_level: float = 40.0
    fundamentals: Fundamentals = Fundamentals()
    mirror_of: str | None = None  # price = mirror_weight * price[mirror_of] + noise
    mirror_weight: float = 0.9


@dataclass(frozen=True)
class RegimeShift:
    day: int  # first affected day index
    level_shift: float = 0.0
    load_coef_scale: float = 1.0
    coupling_scale: float = 1.0


@dataclass(frozen=True)
class SyntheticConfig:
    seed: int
    n_days: int
    zones: tuple[ZoneSpec, ...]
    start: date = date(2022, 1, 1)
    level_ar: float = 0.85
    level_sd: float = 0.3
    hourly_factor_sd: float = 0.03
    regime_shift: RegimeShift | None = None

    def validate(self) -> None:
        if self.n_days < 30:
            raise ValueError(f"n_days must be >= 30, got {self.n_days}")
        if not self.zones:
            raise ValueError("at least one zone required")
        names = [z.name for z in self.zones]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate zone names: {names}")
        for z in self.zones:
            if not 0.0 <= z.spike_prob <= 1.0:
                raise ValueError(f"zone {z.name}: spike_prob {z.spike_prob} outside [0, 1]")
            if not z.noise_sd > 0:
                raise ValueError(f"zone {z.name}: noise_sd must be > 0")
            if z.mirror_of is not None and z.mirror_of not in names:
                raise ValueError(f"zone {z.name}: mirror_of {z.mirror_of!r} is not a zone")
        if not 0 <= abs(self.level_ar) < 1:
            raise ValueError("level_ar must lie in (-1, 1)")

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticConfig":
        zones = []
        for z in doc["zones"]:
            z = dict(z)
            if "factor_loading" in z:
                z.setdefault("coupling", z.pop("factor_loading"))
            z["fundamentals"] = Fundamentals(**z.get("fundamentals", {}))
            zones.append(ZoneSpec(**z))
        kw = {k: v for k, v in doc.items() if k not in {"zones", "start", "regime_shift"}}
        if "start" in doc:
            kw["start"] = date.fromisoformat(doc["start"])
        if doc.get("regime_shift"):
            kw["regime_shift"] = RegimeShift(**doc["regime_shift"])
        return cls(zones=tuple(zones), **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["start"] = self.start.isoformat()
        return d


UNITS = {"price": "EUR/MWh", "load": "MW", "wind": "MW", "solar": "MW", "temperature": "°C", "humidity": "%"}


def synthetic_holidays(first: date, last: date) -> frozenset:
    """Fixed-date holidays used by the generator (New Year, 1 May, Christmas)."""
    out = set()
    for y in range(first.year, last.year + 1):
        for m, d in ((1, 1), (5, 1), (12, 25), (12, 26)):
            day = date(y, m, d)
            if first <= day <= last:
                out.add(day)
    return frozenset(out)


def _bump(h, centre, width):
    return np.exp(-((h - centre) ** 2) / width)


def daily_profile(offday: np.ndarray) -> np.ndarray:
    """Shared price shape, ``(n_days, 24)``; weekends/holidays get a flatter curve."""
    h = np.arange(24.0)
    work = 1.0 + 0.35 * _bump(h, 8, 4) + 0.45 * _bump(h, 19, 6) - 0.30 * _bump(h, 3, 6)
    rest = 0.85 + 0.20 * _bump(h, 11, 8) + 0.30 * _bump(h, 19, 6) - 0.30 * _bump(h, 4, 6)
    return np.where(offday[:, None], rest[None, :], work[None, :])


def solar_elevation(hours: np.ndarray) -> np.ndarray:
    """Clear-sky bell: zero outside 06:00-18:00 UTC."""
    return np.where((hours > 6) & (hours < 18), np.sin(np.pi * (hours - 6) / 12.0), 0.0)


def _ar1(rng, n, phi, sd, x0=0.0):
    eps = rng.standard_normal(n) * sd
    out = np.empty(n)
    x = x0
    for i in range(n):
        x = phi * x + eps[i]
        out[i] = x
    return out


def generate_synthetic(config: SyntheticConfig) -> MarketDataset:
    """Deterministic coupled multi-zone market.

    Every zone price loads on a shared factor (daily profile plus an AR(1)
    daily level) and on the stochastic part of its own load/wind/solar.
    Spikes are drawn once for the whole system and passed to each zone with
    its own probability and amplitude, so a neighbour's same-day price carries
    information that the target zone's own fundamentals do not.
    """
    config.validate()
    rng = np.random.Generator(np.random.Philox(config.seed))
    n = config.n_days
    days = date_range(config.start, config.start + timedelta(days=n - 1))
    holidays = synthetic_holidays(days[0], days[-1])
    dow = np.array([d.weekday() for d in days])
    offday = (dow >= 5) | np.array([d in holidays for d in days])
    doy = np.array([d.timetuple().tm_yday for d in days], dtype=float)
    hours = np.arange(24.0)

    level = _ar1(rng, n, config.level_ar, config.level_sd)
    factor = daily_profile(offday) + level[:, None]
    factor = factor + config.hourly_factor_sd * rng.standard_normal((n, 24))

    # shared spike events; each zone keeps an event with prob spike_prob / p_max
    p_max = max(z.spike_prob for z in config.zones)
    event_u = rng.random((n, 24))
    events = event_u < p_max
    magnitude = rng.exponential(1.0, (n, 24)) * np.where(rng.random((n, 24)) < 0.7, 1.0, -1.0)

    season = np.cos(2 * np.pi * (doy - 15) / 365.25)
    load_shape = 1.0 + 0.12 * _bump(hours, 9, 8) + 0.15 * _bump(hours, 19, 8) - 0.15 * _bump(hours, 3, 8)
    elev = solar_elevation(hours)
    solar_season = 0.55 + 0.45 * np.cos(2 * np.pi * (doy - 172) / 365.25)

    shift = config.regime_shift
    after = np.zeros(n, dtype=bool)
    if shift is not None:
        after[shift.day:] = True

    t0 = datetime(days[0].year, days[0].month, days[0].day, tzinfo=timezone.utc)
    series = []
    prices = {}
    for z in config.zones:
        f = z.fundamentals
        expected_load = f.load_mean * (1 + f.load_annual_amp * season)[:, None] * load_shape[None, :]
        expected_load = expected_load * np.where(offday, 0.9, 1.0)[:, None]
        load_dev = _ar1(rng, n * 24, f.load_ar, f.load_noise * np.sqrt(1 - f.load_ar ** 2)).reshape(n, 24)
        load = expected_load * (1 + load_dev)

        wind_latent = _ar1(rng, n * 24, f.wind_ar, np.sqrt(1 - f.wind_ar ** 2)).reshape(n, 24)
        wind = f.wind_capacity / (1 + np.exp(-(1.5 * wind_latent - 0.3)))
        wind_expected = f.wind_capacity / (1 + np.exp(0.3))

        cloud = rng.beta(2.0, 1.5, n)
        clear = f.solar_capacity * solar_season[:, None] * elev[None, :]
        solar = clear * cloud[:, None]
        solar_expected = clear * (2.0 / 3.5)

        temp = (10 - 8 * season)[:, None] + 4 * np.sin(np.pi * (hours - 9) / 12)[None, :]
        temp = temp + _ar1(rng, n * 24, 0.95, 0.6).reshape(n, 24)
        humid = np.clip(70 - 0.8 * (temp - 10) + 5 * rng.standard_normal((n, 24)), 5, 100)

        noise = z.noise_sd * rng.standard_normal((n, 24))
        keep = event_u < z.spike_prob
        spikes = np.where(events & keep, z.spike_scale * magnitude, 0.0)

        coupling = np.where(after, z.coupling * (shift.coupling_scale if shift else 1.0), z.coupling)
        load_coef = np.where(after, f.load_coef * (shift.load_coef_scale if shift else 1.0), f.load_coef)
        level_shift = np.where(after, shift.level_shift if shift else 0.0, 0.0)
        price = (
            z.base_level
            + level_shift[:, None]
            + coupling[:, None] * factor
            + load_coef[:, None] * (load - expected_load)
            - f.wind_coef * (wind - wind_expected)
            - f.solar_coef * (solar - solar_expected)
            + noise
            + spikes
        )
        prices[z.name] = price
        for name, vals in (("load", load), ("wind", wind), ("solar", solar),
                           ("temperature", temp), ("humidity", humid)):
            series.append(HourlySeries(name, z.name, UNITS[name], t0, HOUR, vals.reshape(-1)))

    for z in config.zones:
        if z.mirror_of is not None:
            prices[z.name] = z.mirror_weight * prices[z.mirror_of] + z.noise_sd * rng.standard_normal((n, 24))
        series.append(HourlySeries("price", z.name, UNITS["price"], t0, HOUR, prices[z.name].reshape(-1)))

    return MarketDataset({s.key: s for s in series}, (days[0], days[-1]),
                         {z.name: holidays for z in config.zones})


def write_dataset(ds: MarketDataset, out_dir) -> dict:
    """Export a dataset as CSV/JSON files plus a manifest dict that :func:`load` accepts."""
    out = Path(out_dir)
    entries, holiday_files = [], {}
    for zone in ds.zones():
        weather = []
        for (name, z), s in sorted(ds.series.items()):
            if z != zone:
                continue
            if name in {"temperature", "humidity"}:
                weather.append(s)
                continue
            fname = f"{name}_{zone}.csv"
            write_entsoe_csv(s, out / fname)
            entries.append({"path": fname, "kind": "entsoe-csv", "name": name, "zone": zone, "unit": s.unit})
        if weather:
            fname = f"weather_{zone}.json"
            write_openmeteo_json(weather, out / fname)
            for s in weather:
                entries.append({"path": fname, "kind": "openmeteo-json", "name": s.name, "zone": zone,
                                "unit": s.unit})
        hfile = f"holidays_{zone}.txt"
        write_holiday_file(ds.holiday_set(zone), out / hfile)
        holiday_files[zone] = hfile
    manifest = {"entries": entries, "holiday_files": holiday_files}
    _atomic_write(out / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    return manifest
