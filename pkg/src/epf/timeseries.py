"""Hourly series containers, calendar helpers and gap handling.

Everything here works in UTC. A "day" is a UTC calendar day of 24 hourly
slots; local market conventions (gate closure at noon CET and so on) are
left to documentation and CLI labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from typing import Iterable, Mapping

import numpy as np

HOUR = timedelta(hours=1)
QUARTER = timedelta(minutes=15)


class MalformedSeriesError(ValueError):
    pass


class AlignmentError(ValueError):
    pass


def _as_utc(ts: datetime) -> datetime:
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


@dataclass(frozen=True)
class HourlySeries:
    """A named, fixed-resolution series starting on an hour boundary.

    ``values`` is stored as a read-only float64 array; NaN marks a gap.
    Timestamps are implicit: ``t_i = start + i * step``.
    """

    name: str
    zone: str
    unit: str
    start: datetime
    step: timedelta
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        start = _as_utc(self.start)
        if start.minute or start.second or start.microsecond:
            raise MalformedSeriesError(f"{self.name}/{self.zone}: start {start} is not on an hour boundary")
        if self.step <= timedelta(0) or HOUR % self.step != timedelta(0):
            raise MalformedSeriesError(f"{self.name}/{self.zone}: step {self.step} must divide one hour")
        values = np.array(self.values, dtype=np.float64, copy=True).reshape(-1)
        values.setflags(write=False)
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.size

    @property
    def key(self) -> tuple[str, str]:
        return (self.name, self.zone)

    @property
    def end(self) -> datetime:
        """Exclusive end timestamp."""
        return self.start + self.step * len(self)

    def timestamp(self, i: int) -> datetime:
        return self.start + self.step * i

    def replace_values(self, values) -> "HourlySeries":
        return HourlySeries(self.name, self.zone, self.unit, self.start, self.step, values)

    def __eq__(self, other):
        if not isinstance(other, HourlySeries):
            return NotImplemented
        return (
            self.key == other.key
            and self.unit == other.unit
            and self.start == other.start
            and self.step == other.step
            and np.array_equal(self.values, other.values, equal_nan=True)
        )

    __hash__ = None


@dataclass(frozen=True)
class DayHourIndex:
    day: date
    hour: int

    def __post_init__(self):
        if not 0 <= self.hour <= 23:
            raise ValueError(f"hour {self.hour} outside [0, 23]")


def resample_quarter_to_hour(s: HourlySeries) -> HourlySeries:
    """Average each block of four quarter-hour values into one hourly value.

    A gap in any of the four quarters makes the whole hour a gap.
    """
    if s.step != QUARTER:
        raise MalformedSeriesError(f"{s.name}/{s.zone}: expected 15-minute step, got {s.step}")
    if len(s) % 4:
        raise MalformedSeriesError(f"{s.name}/{s.zone}: {len(s)} quarter values is not a whole number of hours")
    hourly = s.values.reshape(-1, 4).mean(axis=1)
    return HourlySeries(s.name, s.zone, s.unit, s.start, HOUR, hourly)


def fill_gaps(s: HourlySeries, max_run: int = 3) -> HourlySeries:
    """Linearly interpolate interior NaN runs of length ``<= max_run``."""
    v = s.values.copy()
    isnan = np.isnan(v)
    if not isnan.any():
        return s
    n = v.size
    i = 0
    while i < n:
        if not isnan[i]:
            i += 1
            continue
        j = i
        while j < n and isnan[j]:
            j += 1
        # run is [i, j)
        if i > 0 and j < n and (j - i) <= max_run:
            left, right = v[i - 1], v[j]
            frac = np.arange(1, j - i + 1) / (j - i + 1)
            v[i:j] = left + (right - left) * frac
        i = j
    return s.replace_values(v)


def nan_runs(values: np.ndarray) -> list[tuple[int, int]]:
    """Return ``(start, length)`` of every NaN run."""
    isnan = np.isnan(values)
    if not isnan.any():
        return []
    padded = np.concatenate([[False], isnan, [False]]).astype(np.int8)
    edges = np.diff(padded)
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    return [(int(a), int(b - a)) for a, b in zip(starts, stops)]


def day_of_week(d: date) -> int:
    """Monday is 0."""
    return d.weekday()


def is_public_holiday(d: date, calendar: Iterable[date]) -> bool:
    return d in calendar


def date_range(first: date, last: date) -> list[date]:
    """Inclusive list of calendar days."""
    if last < first:
        return []
    return [first + timedelta(days=i) for i in range((last - first).days + 1)]


def _midnight(d: date) -> datetime:
    return datetime(d.year, d.month, d.day, tzinfo=timezone.utc)


@dataclass(frozen=True)
class MarketDataset:
    """Aligned hourly series covering a common whole-day ``span``.

    ``series`` is keyed by ``(name, zone)``; the spot price of a zone is the
    series named ``"price"``. ``holidays`` maps a zone to its holiday dates.
    """

    series: Mapping[tuple[str, str], HourlySeries]
    span: tuple[date, date]
    holidays: Mapping[str, frozenset] = field(default_factory=dict)

    @property
    def n_days(self) -> int:
        return (self.span[1] - self.span[0]).days + 1

    @property
    def days(self) -> list[date]:
        return date_range(*self.span)

    def get(self, name: str, zone: str) -> HourlySeries:
        try:
            return self.series[(name, zone)]
        except KeyError:
            have = ", ".join(f"{n}/{z}" for n, z in sorted(self.series))
            raise KeyError(f"series {name}/{zone} not in dataset (have: {have})") from None

    def price(self, zone: str) -> HourlySeries:
        return self.get("price", zone)

    def day_matrix(self, name: str, zone: str) -> np.ndarray:
        """Values as an ``(n_days, 24)`` array, row 0 = ``span[0]``."""
        return self.get(name, zone).values.reshape(-1, 24)

    def day_index(self, d: date) -> int:
        return (d - self.span[0]).days

    def holiday_set(self, zone: str) -> frozenset:
        return self.holidays.get(zone, frozenset())

    def zones(self) -> list[str]:
        return sorted({z for _, z in self.series})


def align(series_list: Iterable[HourlySeries], holidays: Mapping[str, Iterable[date]] | None = None,
          allow_nan: bool = False) -> MarketDataset:
    """Truncate hourly series to their common span of whole UTC days.

    Raises :class:`AlignmentError` when the overlap holds no full day or when
    a truncated series still contains NaN (unless ``allow_nan``).
    """
    series_list = list(series_list)
    if not series_list:
        raise AlignmentError("no series to align")
    keys = [s.key for s in series_list]
    if len(set(keys)) != len(keys):
        raise AlignmentError(f"duplicate (name, zone) pairs: {sorted(k for k in set(keys) if keys.count(k) > 1)}")
    for s in series_list:
        if s.step != HOUR:
            raise AlignmentError(f"{s.name}/{s.zone} is not hourly (step {s.step}); resample first")

    lo = max(s.start for s in series_list)
    hi = min(s.end for s in series_list)
    first_day = lo.date() if lo == _midnight(lo.date()) else lo.date() + timedelta(days=1)
    last_day = hi.date() - timedelta(days=1)
    if last_day < first_day:
        spans = "; ".join(f"{s.name}/{s.zone} [{s.start.isoformat()} .. {s.end.isoformat()})" for s in series_list)
        raise AlignmentError(f"series share no full UTC day: {spans}")

    t0 = _midnight(first_day)
    n_hours = ((last_day - first_day).days + 1) * 24
    out = {}
    for s in series_list:
        offset = int((t0 - s.start) / HOUR)
        vals = s.values[offset:offset + n_hours]
        if not allow_nan and np.isnan(vals).any():
            i = int(np.flatnonzero(np.isnan(vals))[0])
            raise AlignmentError(f"{s.name}/{s.zone} has a gap at {(t0 + i * HOUR).isoformat()}")
        out[s.key] = HourlySeries(s.name, s.zone, s.unit, t0, HOUR, vals)
    hol = {z: frozenset(v) for z, v in (holidays or {}).items()}
    return MarketDataset(out, (first_day, last_day), hol)
