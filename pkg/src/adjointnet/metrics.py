"""Forecast error metrics, extremum windows and evaluation reports.

Three perspectives are scored: error over all predictions, error restricted
to +-2 steps around each day's ground-truth maximum and minimum, and the rate
at which ground truth falls outside the 68% and 95% Monte-Carlo intervals.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ContractError, DimensionError, DomainError
from .uncertainty import LEVELS, half_width

REPORT_SCHEMA = "adjointnet.evaluation/1"
EVAL_MODES = ("one_step", "multi_step")
EXTREMUM_RADIUS = 2
METRIC_FIELDS = ("rmse", "mae", "mape", "ext_rmse", "ext_mae", "ext_mape", "nc68", "nc95")


def _aligned(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DimensionError(f"prediction {pred.shape} is not aligned with truth {truth.shape}")
    if pred.size == 0:
        raise DomainError("error of an empty set")
    return pred.ravel(), truth.ravel()


def mape_with_exclusions(pred, truth):
    """Return ``(mape, n_excluded)``; entries with zero truth are skipped."""
    pred, truth = _aligned(pred, truth)
    keep = truth != 0.0
    if not keep.any():
        raise DomainError("MAPE is undefined when every truth value is zero")
    return float(100.0 * np.mean(np.abs(pred[keep] - truth[keep]) / np.abs(truth[keep]))), int(np.sum(~keep))


def error_all(pred, truth):
    """RMSE, MAE and MAPE (percent) over every aligned pair.

    Examples
    --------
    >>> error_all([11.0], [10.0])
    (1.0, 1.0, 10.0)
    """
    p, t = _aligned(pred, truth)
    err = p - t
    mape, _ = mape_with_exclusions(p, t)
    return float(np.sqrt(np.mean(err * err))), float(np.mean(np.abs(err))), mape


@dataclass(frozen=True)
class ExtremumWindow:
    """Steps within +-2 of one day's ground-truth maximum or minimum.

    ``members`` index the series passed to :func:`extremum_windows`; windows
    are clipped at day boundaries. ``partial`` marks days with fewer than a
    full day of steps.
    """

    date: np.datetime64
    kind: str
    center: int
    members: tuple
    partial: bool = False


def extremum_windows(truth, timestamps=None, steps_per_day=96, radius=EXTREMUM_RADIUS):
    """One max and one min window per calendar day of ``truth``.

    Ties go to the earliest step. Without ``timestamps`` the series is cut
    into consecutive blocks of ``steps_per_day``.
    """
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if truth.size == 0:
        return []
    if timestamps is None:
        day_key = np.arange(truth.size) // steps_per_day
        dates = day_key.astype("datetime64[D]")
    else:
        dates = np.asarray(timestamps).astype("datetime64[D]")
        if dates.shape != truth.shape:
            raise DimensionError(f"{dates.size} timestamps for {truth.size} values")
        day_key = dates.astype(np.int64)
    cuts = np.flatnonzero(np.diff(day_key)) + 1
    out = []
    for lo, hi in zip(np.r_[0, cuts], np.r_[cuts, truth.size]):
        day = truth[lo:hi]
        partial = (hi - lo) < steps_per_day
        for kind, c in (("max", int(np.argmax(day))), ("min", int(np.argmin(day)))):
            a, b = max(0, c - radius), min(hi - lo, c + radius + 1)
            out.append(ExtremumWindow(dates[lo], kind, lo + c, tuple(range(lo + a, lo + b)), partial))
    return out


def window_mask(n, windows):
    mask = np.zeros(n, dtype=bool)
    for w in windows:
        mask[list(w.members)] = True
    return mask


def error_extremum(pred, truth, windows):
    """:func:`error_all` restricted to the union of window members."""
    p, t = _aligned(pred, truth)
    mask = window_mask(p.size, windows)
    if not mask.any():
        raise DomainError("extremum windows cover no points")
    return error_all(p[mask], t[mask])


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class CIConfig:
    """Monte-Carlo interval settings used during evaluation."""

    n_samples: int = 100
    seed: int = 0
    interval_mode: str = "predictive"


@dataclass
class MetricRow:
    """Errors and non-coverage over one group of (window, step) pairs."""

    n: int
    rmse: float
    mae: float
    mape: float
    mape_excluded: int
    ext_n: int
    ext_rmse: float | None
    ext_mae: float | None
    ext_mape: float | None
    nc68: float
    nc95: float


@dataclass
class EvaluationReport:
    model_tag: str
    mode: str
    split_hash: str
    interval_mode: str
    n_samples: int
    overall: MetricRow
    monthly: dict
    per_step: dict | None = None
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "schema": REPORT_SCHEMA,
            "model_tag": self.model_tag,
            "mode": self.mode,
            "split_hash": self.split_hash,
            "interval_mode": self.interval_mode,
            "n_samples": self.n_samples,
            "overall": asdict(self.overall),
            "monthly": {k: asdict(v) for k, v in self.monthly.items()},
            "per_step": self.per_step,
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("schema") != REPORT_SCHEMA:
            raise ContractError(f"unsupported report schema {d.get('schema')!r}")
        return cls(
            d["model_tag"], d["mode"], d["split_hash"], d["interval_mode"], d["n_samples"],
            MetricRow(**d["overall"]), {k: MetricRow(**v) for k, v in d["monthly"].items()},
            d.get("per_step"), d.get("config", {}),
        )

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write(self, directory, stem=None):
        """Write ``<stem>.json``, ``<stem>_monthly.csv`` and, for multi-step, ``<stem>_per_step.csv``."""
        directory = Path(directory)
        stem = stem or f"{self.model_tag}_{self.mode}"
        (directory / f"{stem}.json").write_text(self.to_json(), encoding="utf-8")
        with (directory / f"{stem}_monthly.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            cols = list(MetricRow.__dataclass_fields__)
            w.writerow(["month", *cols])
            for month, row in [*self.monthly.items(), ("all", self.overall)]:
                w.writerow([month, *[_cell(getattr(row, c)) for c in cols]])
        if self.per_step:
            with (directory / f"{stem}_per_step.csv").open("w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                keys = sorted(self.per_step)
                w.writerow(["step", *keys])
                for k in range(len(self.per_step[keys[0]])):
                    w.writerow([k + 1, *[_cell(self.per_step[c][k]) for c in keys]])


def _cell(v):
    if v is None:
        return ""
    return repr(float(v)) if isinstance(v, float) else str(v)


def _row(pred, truth, lo68, hi68, lo95, hi95, ext_mask):
    rmse, mae, _ = error_all(pred, truth)
    mape, excl = mape_with_exclusions(pred, truth)
    ext = (None, None, None)
    if ext_mask.any():
        ext = error_all(pred[ext_mask], truth[ext_mask])
    return MetricRow(
        n=int(pred.size), rmse=rmse, mae=mae, mape=mape, mape_excluded=excl, ext_n=int(ext_mask.sum()),
        ext_rmse=ext[0], ext_mae=ext[1], ext_mape=ext[2],
        nc68=float(np.mean((truth < lo68) | (truth > hi68))),
        nc95=float(np.mean((truth < lo95) | (truth > hi95))),
    )


def truth_series(test):
    """Unique ground-truth series ``(times, values)`` covered by a contiguous test split."""
    if len(test) == 0:
        raise DomainError("empty test split")
    if np.any(np.diff(test.start) != 1):
        raise ContractError("test windows must be contiguous")
    values = np.concatenate([test.targets[:, 0], test.targets[-1, 1:]])
    first = test.start[0] + test.lookback
    return test.timestamps[first:first + values.size], values


def predictions(model, test, ci: CIConfig):
    """Point forecasts and Monte-Carlo moments for every test window.

    The model needs ``predict(X, X_anc)`` and
    ``predict_moments(X, X_anc, n_samples, seed)``.
    """
    anc = test.ancillary if getattr(model, "use_ancillary", False) else None
    point = model.predict(test.inputs, anc)
    mean, std = model.predict_moments(test.inputs, anc, n_samples=ci.n_samples, seed=ci.seed)
    return point, mean, std


def evaluate(model, test, mode="multi_step", ci: CIConfig = CIConfig(), model_tag="model", cache=None, config=None):
    """Score ``model`` on ``test`` in ``one_step`` or ``multi_step`` mode.

    ``one_step`` splices step 0 of every window into one series;
    ``multi_step`` scores every (window, step) pair. Results are grouped by
    the calendar month of the target timestamp. ``cache`` may hold the output
    of :func:`predictions` to share Monte-Carlo passes between modes.
    """
    if mode not in EVAL_MODES:
        raise DomainError(f"mode must be one of {EVAL_MODES}, got {mode!r}")
    point, mean, std = cache if cache is not None else predictions(model, test, ci)
    n = ci.n_samples
    h68 = half_width(std, n, LEVELS[68], ci.interval_mode)
    h95 = half_width(std, n, LEVELS[95], ci.interval_mode)
    times = test.target_times()
    truth = np.asarray(test.targets, dtype=np.float64)
    if mode == "one_step":
        sel = (slice(None), slice(0, 1))
        point, mean, h68, h95, times, truth = (a[sel] for a in (point, mean, h68, h95, times, truth))

    series_t, series_v = truth_series(test)
    windows = extremum_windows(series_v, series_t)
    ext_times = series_t[window_mask(series_v.size, windows)]
    ext = np.isin(times, ext_times)

    months = times.astype("datetime64[M]")
    lo68, hi68, lo95, hi95 = mean - h68, mean + h68, mean - h95, mean + h95
    arrays = (point, truth, lo68, hi68, lo95, hi95, ext)
    overall = _row(*(a.ravel() for a in arrays))
    monthly = {}
    for m in np.unique(months):
        sel = months == m
        monthly[str(m)] = _row(*(a[sel] for a in arrays))
    per_step = None
    if mode == "multi_step":
        err = point - truth
        per_step = {
            "rmse": [float(v) for v in np.sqrt(np.mean(err * err, axis=0))],
            "nc68": [float(v) for v in np.mean((truth < lo68) | (truth > hi68), axis=0)],
            "nc95": [float(v) for v in np.mean((truth < lo95) | (truth > hi95), axis=0)],
        }
    return EvaluationReport(
        model_tag, mode, test.fingerprint(), ci.interval_mode, n, overall, monthly, per_step, dict(config or {})
    )


@dataclass
class Comparison:
    """Side-by-side metrics of an adjoint and a plain model.

    ``rows`` hold ``(scope, metric, adjoint, plain, delta, improved)`` where
    ``delta = adjoint - plain`` and lower is better for every metric.
    """

    mode: str
    split_hash: str
    rows: list

    def improved(self, metric, scope="all"):
        for s, m, *_, imp in self.rows:
            if s == scope and m == metric:
                return imp
        raise KeyError((scope, metric))

    def delta(self, metric, scope="all"):
        for s, m, _, _, d, _ in self.rows:
            if s == scope and m == metric:
                return d
        raise KeyError((scope, metric))

    def write_csv(self, path):
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["mode", "scope", "metric", "adjoint", "plain", "delta", "improved"])
            for r in self.rows:
                w.writerow([self.mode, r[0], r[1], *[_cell(v) for v in r[2:5]], int(r[5]) if r[5] is not None else ""])

    def to_dict(self):
        return {"mode": self.mode, "split_hash": self.split_hash,
                "rows": [dict(zip(("scope", "metric", "adjoint", "plain", "delta", "improved"), r)) for r in self.rows]}


def compare(adjoint: EvaluationReport, plain: EvaluationReport) -> Comparison:
    """Per-metric deltas for two reports on the same split and mode."""
    if adjoint.split_hash != plain.split_hash:
        raise ContractError(f"reports come from different splits ({adjoint.split_hash} vs {plain.split_hash})")
    if adjoint.mode != plain.mode:
        raise ContractError(f"reports use different modes ({adjoint.mode} vs {plain.mode})")
    rows = []
    scopes = [("all", adjoint.overall, plain.overall)]
    scopes += [(m, adjoint.monthly[m], plain.monthly[m]) for m in adjoint.monthly if m in plain.monthly]
    for scope, a, p in scopes:
        for metric in METRIC_FIELDS:
            va, vp = getattr(a, metric), getattr(p, metric)
            if va is None or vp is None:
                rows.append((scope, metric, va, vp, None, None))
            else:
                d = va - vp
                rows.append((scope, metric, va, vp, d, bool(d < 0)))
    return Comparison(adjoint.mode, adjoint.split_hash, rows)
