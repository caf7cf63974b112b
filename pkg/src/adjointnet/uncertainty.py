"""Monte-Carlo dropout sampling and confidence intervals."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .autograd import no_grad
from .exceptions import DimensionError, DomainError
from .layers import DropoutSpec, dense_forward, lstm_encode

INTERVAL_MODES = ("predictive", "mean_ci")
LEVELS = {68: 0.32, 95: 0.05}
FORECAST_COLUMNS = ("timestamp", "step", "point", "mean", "std", "lo68", "hi68", "lo95", "hi95")


@dataclass
class SampleSet:
    """Forecast samples from repeated dropout passes, shape ``(n, ..., horizon)``."""

    samples: np.ndarray
    seed: int

    def __post_init__(self):
        if self.samples.shape[0] < 2:
            raise DomainError("a sample set needs at least 2 samples")

    @property
    def n_samples(self):
        return self.samples.shape[0]


@dataclass
class ForecastWithCI:
    """Point forecast with per-step mean, std and 68%/95% bounds."""

    point: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    lo68: np.ndarray
    hi68: np.ndarray
    lo95: np.ndarray
    hi95: np.ndarray
    mode: str
    n_samples: int
    degenerate: bool = False

    def bounds(self, level):
        if level == 68:
            return self.lo68, self.hi68
        if level == 95:
            return self.lo95, self.hi95
        raise DomainError(f"level must be 68 or 95, got {level}")


def critical_value(alpha, n, mode="predictive"):
    """Two-sided critical value: ``z_{1-a/2}`` or Student ``t_{1-a/2, n-1}``."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    if mode == "predictive":
        return float(stats.norm.ppf(1.0 - alpha / 2.0))
    if mode == "mean_ci":
        if n < 2:
            raise DomainError("mean_ci needs at least 2 samples")
        return float(stats.t.ppf(1.0 - alpha / 2.0, n - 1))
    raise DomainError(f"interval mode must be one of {INTERVAL_MODES}, got {mode!r}")


def half_width(std, n, alpha, mode="predictive"):
    """Interval half-width for sample std ``std`` from ``n`` samples."""
    std = np.asarray(std, dtype=np.float64)
    c = critical_value(alpha, n, mode)
    return c * std if mode == "predictive" else c * std / np.sqrt(n)


def intervals_from_moments(mean, std, n, mode="predictive", point=None):
    """Build a :class:`ForecastWithCI` from per-step sample moments."""
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    h68 = half_width(std, n, LEVELS[68], mode)
    h95 = half_width(std, n, LEVELS[95], mode)
    return ForecastWithCI(
        point=mean.copy() if point is None else np.asarray(point, dtype=np.float64),
        mean=mean,
        std=std,
        lo68=mean - h68,
        hi68=mean + h68,
        lo95=mean - h95,
        hi95=mean + h95,
        mode=mode,
        n_samples=int(n),
        degenerate=bool(np.any(std == 0.0)),
    )


def derive_ci(samples: SampleSet, mode="predictive", point=None) -> ForecastWithCI:
    """Mean, std (ddof=1) and 68%/95% intervals over the sample axis.

    ``predictive`` intervals are ``mean +- z * std``; ``mean_ci`` intervals
    are ``mean +- t * std / sqrt(n)``. Zero spread yields zero-width
    intervals with ``degenerate`` set.
    """
    s = samples.samples
    n = s.shape[0]
    mean = s.mean(axis=0)
    std = s.std(axis=0, ddof=1)
    return intervals_from_moments(mean, std, n, mode, point)


def coverage(truth, ci: ForecastWithCI, level=95) -> float:
    """Fraction of entries where ``truth`` falls strictly outside the interval.

    This is the non-coverage rate: lower is better.
    """
    truth = np.asarray(truth, dtype=np.float64)
    lo, hi = ci.bounds(level)
    if truth.shape != lo.shape:
        raise DimensionError(f"truth {truth.shape} is not aligned with intervals {lo.shape}")
    if truth.size == 0:
        raise DomainError("coverage of an empty set")
    return float(np.mean((truth < lo) | (truth > hi)))


# ---------------------------------------------------------------------------
# sampling


def _encodings(model, X, X_anc):
    X, flat = model._check_main(X)
    with no_grad():
        z_main = lstm_encode(model.main_lstm_, model._norm_x(X))
        z_anc = None
        if model.use_ancillary:
            if X_anc is None:
                raise DomainError("anc_window is required by a model with an ancillary network")
            A, _ = model._check_anc(X_anc)
            if len(A) != len(X):
                raise DimensionError(f"{len(A)} ancillary windows for {len(X)} main windows")
            z_anc = model._anc_input(A)
    return z_main, z_anc, flat


def _one_pass(model, z_main, z_anc, spec, rng):
    with no_grad():
        m = dense_forward(model.main_net_, z_main, spec, rng).data * model.y_scale_ + model.y_mean_
        if z_anc is None:
            return m
        a = dense_forward(model.anc_net_, z_anc, spec, rng).data * model.y_scale_ + model.y_mean_
    return model.combine(m, a)


def _pass_rng(seed, k):
    return np.random.default_rng([int(seed), int(k)])


def mc_sample(model, window, anc_window=None, n=10_000, seed=0) -> SampleSet:
    """Draw ``n`` forecasts with dropout active at inference.

    Pass ``k`` uses its own generator seeded by ``(seed, k)``, so any subset of
    passes can be recomputed independently. The LSTM encoder carries no
    dropout, so it is evaluated once.
    """
    if n < 2:
        raise DomainError(f"need at least 2 samples, got {n}")
    z_main, z_anc, flat = _encodings(model, window, anc_window)
    spec = DropoutSpec(float(model.dropout), "mc_inference")
    out = np.stack([_one_pass(model, z_main, z_anc, spec, _pass_rng(seed, k)) for k in range(n)])
    return SampleSet(out[:, 0] if flat else out, int(seed))


def mc_moments(model, X, X_anc=None, n=100, seed=0, chunk=1024):
    """Per-window, per-step sample mean and std (ddof=1) without storing samples.

    Returns ``(mean, std)`` each of shape ``(len(X), horizon)``. Windows are
    processed in chunks of ``chunk``; pass ``k`` of chunk ``c`` draws from
    ``(seed, k, c)``.
    """
    if n < 2:
        raise DomainError(f"need at least 2 samples, got {n}")
    X = np.asarray(X)
    spec = DropoutSpec(float(model.dropout), "mc_inference")
    mean = np.empty((len(X), model.horizon))
    std = np.empty_like(mean)
    for c, s in enumerate(range(0, len(X), chunk)):
        sl = slice(s, s + chunk)
        z_main, z_anc, _ = _encodings(model, X[sl], None if X_anc is None else np.asarray(X_anc)[sl])
        mu = np.zeros((z_main.shape[0], model.horizon))
        m2 = np.zeros_like(mu)
        for k in range(n):
            x = _one_pass(model, z_main, z_anc, spec, np.random.default_rng([int(seed), k, c]))
            d = x - mu
            mu += d / (k + 1)
            m2 += d * (x - mu)
        mean[sl] = mu
        std[sl] = np.sqrt(m2 / (n - 1))
    return mean, std


def forecast_with_ci(model, window, anc_window=None, n=10_000, seed=0, mode="predictive") -> ForecastWithCI:
    """Dropout-off point forecast plus Monte-Carlo intervals for one window."""
    samples = mc_sample(model, window, anc_window, n, seed)
    point = model.predict(np.asarray(window)[None], None if anc_window is None else np.asarray(anc_window)[None])[0]
    return derive_ci(samples, mode, point)


def write_forecast_csv(path, timestamps, ci: ForecastWithCI) -> None:
    """Write one row per horizon step with the columns in ``FORECAST_COLUMNS``."""
    from .data import _fmt

    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FORECAST_COLUMNS)
        for k in range(len(ci.point)):
            w.writerow(
                [_fmt(timestamps[k]), k + 1]
                + [repr(float(v[k])) for v in (ci.point, ci.mean, ci.std, ci.lo68, ci.hi68, ci.lo95, ci.hi95)]
            )
