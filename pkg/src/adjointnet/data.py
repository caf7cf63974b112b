"""Building-climate series: schema, CSV I/O, synthetic generation, windowing and splits."""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import DataFormatError, DomainError, ValidationError

STEP = np.timedelta64(15, "m")
STEPS_PER_DAY = 96
TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%S"


@dataclass(frozen=True)
class FeatureSchema:
    """Column layout of an input CSV.

    Main columns feed the main network together with the target history and
    derived clock encodings; ancillary columns must be 0/1 indicators.
    """

    main: tuple = (
        "outdoor_temp",
        "humidity",
        "dew_point",
        "wind_speed",
        "wind_dir",
        "pressure",
        "fog",
        "rain",
        "snow",
        "occupancy",
    )
    ancillary: tuple = ("is_weekend", "is_major_holiday", "is_minor_holiday")
    target: str = "indoor_temp"
    timestamp: str = "timestamp"
    bounds: tuple = (40.0, 100.0)

    @property
    def columns(self):
        return (self.timestamp, *self.main, *self.ancillary, self.target)


DEFAULT_SCHEMA = FeatureSchema()


@dataclass
class RawSeries:
    """A uniformly sampled (15 minute) multivariate series."""

    timestamps: np.ndarray
    main: np.ndarray
    ancillary: np.ndarray
    target: np.ndarray
    schema: FeatureSchema = DEFAULT_SCHEMA
    imputed_rows: int = 0

    def __post_init__(self):
        n = len(self.timestamps)
        if self.main.shape[0] != n or self.ancillary.shape[0] != n or self.target.shape[0] != n:
            raise ValidationError("series columns have unequal lengths")

    def __len__(self):
        return len(self.timestamps)

    def column(self, name):
        s = self.schema
        if name == s.target:
            return self.target
        if name in s.main:
            return self.main[:, s.main.index(name)]
        if name in s.ancillary:
            return self.ancillary[:, s.ancillary.index(name)]
        raise KeyError(name)


def validate_series(series: RawSeries) -> None:
    """Check spacing, binary ancillary values, finiteness and target bounds."""
    ts = series.timestamps
    if len(ts) >= 2:
        gaps = np.diff(ts)
        bad = np.flatnonzero(gaps != STEP)
        if bad.size:
            k = int(bad[0])
            raise DataFormatError(
                f"row {k + 2}: timestamp {_fmt(ts[k + 1])} is {gaps[k]} after {_fmt(ts[k])}, expected 15 minutes"
            )
    anc = series.ancillary
    bad = np.argwhere((anc != 0) & (anc != 1))
    if bad.size:
        r, c = bad[0]
        raise ValidationError(
            f"row {r + 1}: ancillary column {series.schema.ancillary[c]!r} has non-binary value {anc[r, c]}"
        )
    for name, arr in (("main", series.main), ("target", series.target)):
        if not np.all(np.isfinite(arr)):
            r = int(np.argwhere(~np.isfinite(arr))[0][0])
            raise ValidationError(f"row {r + 1}: non-finite {name} value")
    lo, hi = series.schema.bounds
    out = np.flatnonzero((series.target < lo) | (series.target > hi))
    if out.size:
        r = int(out[0])
        raise ValidationError(f"row {r + 1}: target {series.target[r]} outside [{lo}, {hi}]")


def _fmt(ts):
    return _to_datetime(ts).strftime(TIMESTAMP_FORMAT)


def _to_datetime(ts):
    return dt.datetime(1970, 1, 1) + dt.timedelta(minutes=int(ts.astype("datetime64[m]").astype(np.int64)))


def _parse_float(text, row, col):
    try:
        return float(text)
    except ValueError:
        raise DataFormatError(f"row {row}: column {col!r} has unparseable number {text!r}") from None


def ingest_csv(path, schema: FeatureSchema = DEFAULT_SCHEMA, impute=False) -> RawSeries:
    """Read and validate a series CSV.

    Parameters
    ----------
    path : path-like
        UTF-8 file with a header row naming exactly ``schema.columns``.
    impute : bool, default=False
        Forward-fill missing 15-minute rows instead of rejecting the file.
        The number of inserted rows is stored in ``imputed_rows``.
    """
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataFormatError(f"{path}: empty file")
        if tuple(header) != schema.columns:
            raise DataFormatError(f"{path}: header {header} does not match schema {list(schema.columns)}")
        times, values = [], []
        for r, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataFormatError(f"row {r}: expected {len(header)} fields, got {len(row)}")
            try:
                times.append(np.datetime64(dt.datetime.fromisoformat(row[0]), "m"))
            except ValueError:
                raise DataFormatError(f"row {r}: bad timestamp {row[0]!r}") from None
            values.append([_parse_float(v, r, header[c + 1]) for c, v in enumerate(row[1:])])
    if not times:
        raise DataFormatError(f"{path}: no data rows")
    ts = np.array(times, dtype="datetime64[m]")
    vals = np.array(values, dtype=np.float64)
    nm, na = len(schema.main), len(schema.ancillary)
    imputed = 0
    if impute:
        ts, vals, imputed = _forward_fill(ts, vals)
    series = RawSeries(ts, vals[:, :nm], vals[:, nm:nm + na], vals[:, nm + na], schema, imputed)
    validate_series(series)
    return series


def _forward_fill(ts, vals):
    offsets = ((ts - ts[0]) // STEP).astype(np.int64)
    if np.any(np.diff(offsets) <= 0) or np.any((ts - ts[0]) % STEP != np.timedelta64(0, "m")):
        raise DataFormatError("timestamps are not increasing on the 15-minute grid; cannot impute")
    n = int(offsets[-1]) + 1
    src = np.zeros(n, dtype=np.int64)
    src[offsets] = np.arange(len(ts))
    have = np.zeros(n, dtype=bool)
    have[offsets] = True
    src = np.maximum.accumulate(np.where(have, src, 0))
    full_ts = ts[0] + np.arange(n) * STEP
    return full_ts, vals[src], int(n - len(ts))


def _format_value(v, binary):
    if binary:
        return str(int(v))
    return repr(float(v))


def export_csv(series: RawSeries, path) -> None:
    """Write ``series`` in the layout read by :func:`ingest_csv`."""
    s = series.schema
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(s.columns)
        for k in range(len(series)):
            w.writerow(
                [_fmt(series.timestamps[k])]
                + [_format_value(v, False) for v in series.main[k]]
                + [_format_value(v, True) for v in series.ancillary[k]]
                + [_format_value(series.target[k], False)]
            )


def read_holidays(path) -> list:
    """Parse ``YYYY-MM-DD,major|minor`` lines into ``(date, kind)`` tuples."""
    out = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 2 or parts[1] not in ("major", "minor"):
            raise DataFormatError(f"holiday file line {n}: expected 'YYYY-MM-DD,major|minor', got {line!r}")
        try:
            day = dt.date.fromisoformat(parts[0])
        except ValueError:
            raise DataFormatError(f"holiday file line {n}: bad date {parts[0]!r}") from None
        out.append((day, parts[1]))
    return out


def write_holidays(holidays, path) -> None:
    Path(path).write_text("".join(f"{d.isoformat()},{k}\n" for d, k in holidays), encoding="utf-8")


def calendar_indicators(timestamps, holidays, schema: FeatureSchema = DEFAULT_SCHEMA) -> np.ndarray:
    """Ancillary indicators for arbitrary (e.g. future) timestamps from a holiday list."""
    days = np.asarray(timestamps, dtype="datetime64[m]").astype("datetime64[D]")
    weekday = (days.astype(np.int64) + 3) % 7  # 1970-01-01 was a Thursday
    kinds = {np.datetime64(d, "D"): k for d, k in holidays}
    cols = {
        "is_weekend": (weekday >= 5).astype(np.float64),
        "is_major_holiday": np.array([kinds.get(d) == "major" for d in days], dtype=np.float64),
        "is_minor_holiday": np.array([kinds.get(d) == "minor" for d in days], dtype=np.float64),
    }
    missing = [c for c in schema.ancillary if c not in cols]
    if missing:
        raise DomainError(f"no calendar rule for ancillary columns {missing}")
    return np.column_stack([cols[c] for c in schema.ancillary]).reshape(len(days), -1)


# ---------------------------------------------------------------------------
# synthetic data

DEFAULT_HOLIDAYS = (
    ("2014-06-20", "minor"),
    ("2014-07-03", "minor"),
    ("2014-07-04", "major"),
    ("2014-07-25", "minor"),
    ("2014-08-15", "minor"),
    ("2014-09-01", "major"),
    ("2014-09-25", "minor"),
    ("2014-10-13", "major"),
    ("2014-10-24", "minor"),
    ("2014-11-04", "minor"),
)


@dataclass
class SynthConfig:
    """Knobs of the synthetic office-building generator.

    Indoor temperature is ``base + hvac + weekend + holiday + weather + noise``
    where ``hvac`` is a daytime cooling dip on working days, and a holiday
    adds back a scaled copy of the dip shape whose daily mean equals the
    holiday offset. ``None`` offsets cancel the dip fully (major) or halfway
    (minor).
    """

    days: int = 160
    seed: int = 7
    start: str = "2014-06-02"
    holidays: Sequence = field(default_factory=lambda: [(dt.date.fromisoformat(d), k) for d, k in DEFAULT_HOLIDAYS])
    noise_sigma: float = 0.25
    base_temp: float = 77.0
    hvac_amplitude: float = 7.0
    weekend_offset: float = 1.0
    major_holiday_offset: float | None = None
    minor_holiday_offset: float | None = None
    weather_coupling: float = 0.12
    weather_sigma: float = 5.0
    seasonal_amplitude: float = 12.0
    diurnal_amplitude: float = 7.0


def hvac_shape(minute_of_day):
    """Cooling-schedule profile in [0, 1]: ramps down 06-08h, holds, recovers 17-20h."""
    h = np.asarray(minute_of_day, dtype=np.float64) / 60.0
    down = np.clip((h - 6.0) / 2.0, 0.0, 1.0)
    up = np.clip((20.0 - h) / 3.0, 0.0, 1.0)
    return np.minimum(down, up)


def _ar1(rng, n, sigma, corr_steps):
    if sigma == 0:
        return np.zeros(n)
    phi = math.exp(-1.0 / corr_steps)
    eps = rng.normal(0.0, sigma * math.sqrt(1 - phi * phi), n)
    out = np.empty(n)
    out[0] = rng.normal(0.0, sigma)
    for k in range(1, n):
        out[k] = phi * out[k - 1] + eps[k]
    return out


def generate_synthetic(cfg: SynthConfig = SynthConfig(), schema: FeatureSchema = DEFAULT_SCHEMA) -> RawSeries:
    """Generate a deterministic synthetic building series from ``cfg``."""
    if cfg.days < 2:
        raise DomainError(f"synthetic series needs at least 2 days, got {cfg.days}")
    rng = np.random.default_rng(cfg.seed)
    n = cfg.days * STEPS_PER_DAY
    start = np.datetime64(cfg.start, "m")
    ts = start + np.arange(n) * STEP
    minute = (np.arange(n) % STEPS_PER_DAY) * 15
    day_idx = np.arange(n) // STEPS_PER_DAY
    dates = [dt.date.fromisoformat(cfg.start) + dt.timedelta(days=int(d)) for d in range(cfg.days)]
    weekday = np.array([d.weekday() for d in dates])[day_idx]
    kinds = {d: k for d, k in cfg.holidays}
    major = np.array([kinds.get(d) == "major" for d in dates], dtype=float)[day_idx]
    minor = np.array([kinds.get(d) == "minor" for d in dates], dtype=float)[day_idx]
    weekend = (weekday >= 5).astype(float)

    frac_year = np.arange(n) / (STEPS_PER_DAY * 365.0)
    seasonal = 72.0 + cfg.seasonal_amplitude * np.cos(2 * np.pi * (frac_year - 0.1))
    diurnal = cfg.diurnal_amplitude * np.cos(2 * np.pi * (minute / 1440.0 - 15.0 / 24.0))
    anomaly = _ar1(rng, n, cfg.weather_sigma, corr_steps=STEPS_PER_DAY * 1.5)
    outdoor = seasonal + diurnal + anomaly
    humidity = np.clip(60 + 0.8 * _ar1(rng, n, 12.0, 48) - 0.6 * diurnal, 10, 100)
    dew_point = outdoor - (100 - humidity) / 5.0
    wind_speed = np.abs(8 + _ar1(rng, n, 4.0, 24))
    wind_dir = np.mod(200 + np.cumsum(rng.normal(0, 3.0, n)) if cfg.weather_sigma else np.full(n, 200.0), 360)
    pressure = 30.0 + _ar1(rng, n, 0.2, 96)
    rain = ((humidity > 85) & (rng.random(n) < 0.6)).astype(float) if cfg.weather_sigma else np.zeros(n)
    fog = ((humidity > 92) & (wind_speed < 6)).astype(float)
    snow = (rain * (outdoor < 34)).astype(float)
    rain = rain * (1 - snow)

    shape = hvac_shape(minute)
    working = (1 - weekend) * (1 - np.maximum(major, minor))
    occupancy = np.round(
        np.maximum(0, 900 * shape * working + 360 * shape * minor + 25 + rng.normal(0, 15, n) * (cfg.noise_sigma > 0))
    )
    mean_shape = float(hvac_shape(np.arange(0, 1440, 15)).mean())
    dip = cfg.hvac_amplitude * shape * (1 - weekend)
    major_off = cfg.hvac_amplitude * mean_shape if cfg.major_holiday_offset is None else cfg.major_holiday_offset
    minor_off = 0.5 * cfg.hvac_amplitude * mean_shape if cfg.minor_holiday_offset is None else cfg.minor_holiday_offset
    holiday = (major * major_off + minor * minor_off) * shape / mean_shape * (1 - weekend)
    weather = cfg.weather_coupling * (outdoor - 72.0)
    noise = rng.normal(0.0, cfg.noise_sigma, n) if cfg.noise_sigma > 0 else np.zeros(n)
    indoor = cfg.base_temp - dip + cfg.weekend_offset * weekend + holiday + weather + noise

    cols = {
        "outdoor_temp": outdoor,
        "humidity": humidity,
        "dew_point": dew_point,
        "wind_speed": wind_speed,
        "wind_dir": wind_dir,
        "pressure": pressure,
        "fog": fog,
        "rain": rain,
        "snow": snow,
        "occupancy": occupancy,
        "is_weekend": weekend,
        "is_major_holiday": major,
        "is_minor_holiday": minor,
    }
    main = np.column_stack([np.round(cols[c], 4) for c in schema.main])
    anc = np.column_stack([cols[c] for c in schema.ancillary])
    series = RawSeries(ts, main, anc, np.round(indoor, 4), schema)
    validate_series(series)
    return series


# ---------------------------------------------------------------------------
# windowing


def clock_features(timestamps) -> np.ndarray:
    """Hour-of-day sin/cos pair followed by a day-of-week one-hot (Monday first)."""
    ts = np.asarray(timestamps, dtype="datetime64[m]")
    mod = (ts.astype(np.int64) % 1440) / 1440.0
    dow = (ts.astype("datetime64[D]").astype(np.int64) + 3) % 7  # 1970-01-01 was a Thursday
    return np.column_stack([np.sin(2 * np.pi * mod), np.cos(2 * np.pi * mod), np.eye(7)[dow]])


def main_design(series: RawSeries) -> np.ndarray:
    """Per-timestamp main-network inputs: target history, main columns, clock encodings."""
    return np.column_stack([series.target, series.main, clock_features(series.timestamps)])


def main_feature_names(schema: FeatureSchema = DEFAULT_SCHEMA):
    return [schema.target, *schema.main, "hour_sin", "hour_cos", *[f"dow_{d}" for d in range(7)]]


@dataclass
class WindowedDataset:
    """Sliding windows over a series.

    Window ``i`` reads inputs from rows ``start[i] .. start[i]+L-1`` and
    targets from the following ``H`` rows. Ancillary indicators are taken over
    the target rows, since calendars are known ahead of time.
    Arrays may be read-only strided views of ``series`` data.
    """

    inputs: np.ndarray
    ancillary: np.ndarray
    targets: np.ndarray
    start: np.ndarray
    timestamps: np.ndarray
    lookback: int
    horizon: int

    def __len__(self):
        return len(self.start)

    @property
    def input_end_times(self):
        return self.timestamps[self.start + self.lookback - 1]

    def target_times(self):
        """``(S, H)`` timestamps of every target step."""
        idx = self.start[:, None] + self.lookback + np.arange(self.horizon)[None, :]
        return self.timestamps[idx]

    def subset(self, idx):
        idx = np.asarray(idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        if idx.size and np.all(np.diff(idx) == 1):
            sl = slice(int(idx[0]), int(idx[-1]) + 1)
            return replace(self, inputs=self.inputs[sl], ancillary=self.ancillary[sl],
                           targets=self.targets[sl], start=self.start[sl])
        return replace(self, inputs=self.inputs[idx], ancillary=self.ancillary[idx],
                       targets=self.targets[idx], start=self.start[idx])

    def fingerprint(self) -> str:
        """Stable hash of window placement and target values."""
        import hashlib

        h = hashlib.sha256()
        h.update(np.asarray([self.lookback, self.horizon, len(self)], dtype=np.int64).tobytes())
        h.update(self.timestamps[self.start].astype(np.int64).tobytes())
        h.update(np.ascontiguousarray(self.targets).tobytes())
        return h.hexdigest()[:16]


def work_hours_indicator(timestamps, hours=(7, 19)) -> np.ndarray:
    """1.0 where the clock time lies in ``[hours[0], hours[1])``, else 0.0."""
    lo, hi = hours
    if not 0 <= lo < hi <= 24:
        raise DomainError(f"work hours must satisfy 0 <= start < end <= 24, got {hours}")
    minute = np.asarray(timestamps, dtype="datetime64[m]").astype(np.int64) % 1440
    return ((minute >= lo * 60) & (minute < hi * 60)).astype(np.float64)


def ancillary_design(series: RawSeries, work_hours=None) -> np.ndarray:
    """Per-timestamp ancillary indicators, optionally followed by a work-hours flag."""
    if work_hours is None:
        return series.ancillary
    return np.column_stack([series.ancillary, work_hours_indicator(series.timestamps, work_hours)])


def window(series: RawSeries, lookback: int, horizon: int, work_hours=None) -> WindowedDataset:
    """Cut ``series`` into every stride-1 (input, ancillary, target) triple.

    ``work_hours`` as ``(start_hour, end_hour)`` appends a binary clock
    indicator to the ancillary inputs.
    """
    if lookback < 1 or horizon < 1:
        raise DomainError("lookback and horizon must be positive")
    n = len(series)
    if n < lookback + horizon:
        raise DomainError(f"series of length {n} is too short: need at least {lookback + horizon} rows")
    s = n - lookback - horizon + 1
    design = main_design(series)
    view = np.lib.stride_tricks.sliding_window_view
    inputs = view(design, lookback, axis=0)[:s].transpose(0, 2, 1)
    anc = view(ancillary_design(series, work_hours), horizon, axis=0)[lookback:lookback + s].transpose(0, 2, 1)
    targets = view(series.target, horizon)[lookback:lookback + s]
    return WindowedDataset(inputs, anc, targets, np.arange(s), series.timestamps, lookback, horizon)


@dataclass(frozen=True)
class SplitSpec:
    """Chronological split ratios.

    ``train_ratio`` of timestamps precede the test span; the last
    ``validation_fraction`` of those training timestamps are held out for
    early stopping.
    """

    train_ratio: float = 0.8
    validation_fraction: float = 0.2

    def counts(self, n_timestamps: int):
        """Return ``(train_fit, validation, test)`` timestamp counts."""
        if not 0.0 < self.train_ratio < 1.0:
            raise DomainError(f"train_ratio must lie strictly between 0 and 1, got {self.train_ratio}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise DomainError(f"validation_fraction must lie in [0, 1), got {self.validation_fraction}")
        n_train = math.floor(n_timestamps * self.train_ratio)
        n_val = math.floor(n_train * self.validation_fraction)
        return n_train - n_val, n_val, n_timestamps - n_train


def split(ds: WindowedDataset, spec: SplitSpec = SplitSpec()):
    """Partition windows into (train, validation, test) by timestamp span.

    A window joins a split only if all of its input and target rows fall in
    that split's span; windows straddling a boundary are dropped.
    """
    n = len(ds.timestamps)
    n_fit, n_val, n_test = spec.counts(n)
    bounds = np.cumsum([0, n_fit, n_val, n_test])
    first = ds.start
    last = ds.start + ds.lookback + ds.horizon - 1
    parts = []
    for name, lo, hi in zip(("train", "validation", "test"), bounds[:-1], bounds[1:]):
        if name == "validation" and spec.validation_fraction == 0.0:
            parts.append(ds.subset(np.array([], dtype=np.int64)))
            continue
        mask = (first >= lo) & (last < hi)
        if not mask.any():
            raise DomainError(
                f"{name} split has no complete window ({hi - lo} timestamps, window needs {ds.lookback + ds.horizon})"
            )
        parts.append(ds.subset(mask))
    return tuple(parts)
