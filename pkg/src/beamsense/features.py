"""Per-trace and ensemble statistics of received-power traces.

Variances are population variances (divide by ``n``) throughout, including
the ensemble standard deviation.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.signal import lfilter

from .channel import PowerTrace

EWMA_GAMMA = 0.001  # display smoothing of the published traces
FALL_GAMMA = 0.2  # smoothing used before threshold-crossing detection
STFT_LEN = 32
STFT_HOP = 16
FEATURE_NAMES = ("slope", "mean", "variance", "v100", "stft_sum", "lag1")


@dataclass(frozen=True)
class WindowSpec:
    """Closed time window ``[start, end]`` in milliseconds."""

    start: float
    end: float

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise ValueError("window needs 0 <= start < end")

    def mask(self, t: np.ndarray) -> np.ndarray:
        return (t >= self.start - 1e-9) & (t <= self.end + 1e-9)

    def label(self) -> str:
        return f"{self.start:g}-{self.end:g}ms"


def _window(trace: PowerTrace, window: WindowSpec):
    t = trace.t
    m = window.mask(t)
    return t[m], trace.samples[m]


def ewma(trace: PowerTrace, gamma: float = EWMA_GAMMA) -> PowerTrace:
    """``s_0 = x_0``, ``s_k = gamma x_k + (1 - gamma) s_{k-1}``."""
    if not (0 < gamma <= 1):
        raise ValueError("gamma must lie in (0, 1]")
    x = trace.samples
    if gamma == 1:
        return PowerTrace(x.copy(), trace.dt, trace.app_id)
    s, _ = lfilter([gamma], [1.0, -(1.0 - gamma)], x, zi=[(1.0 - gamma) * x[0]])
    return PowerTrace(s, trace.dt, trace.app_id)


def lsf_slope(trace: PowerTrace, window: WindowSpec) -> float:
    """Least-squares slope (dB/ms) of power against time inside ``window``."""
    t, p = _window(trace, window)
    if t.size < 2:
        raise ValueError("window must contain at least 2 samples")
    tc = t - t.mean()
    sxx = float(np.dot(tc, tc))
    if sxx == 0:
        raise ValueError("window has zero time variance")
    return float(np.dot(tc, p - p.mean()) / sxx)


def hann(length: int) -> np.ndarray:
    """Periodic Hann window of ``length`` samples."""
    n = np.arange(length)
    return 0.5 - 0.5 * np.cos(2 * np.pi * n / length)


def stft_sum(trace: PowerTrace, window: WindowSpec, fft_len: int = STFT_LEN,
             hop: int = STFT_HOP, taper: np.ndarray | str | None = "hann") -> float:
    """Sum of STFT magnitudes over all frames and frequency bins.

    Each frame holds ``fft_len + 1`` samples ``f[m + n]``, ``n = 0..fft_len``,
    multiplied by the taper and transformed at the ``fft_len + 1`` DFT
    frequencies ``2 pi k / (fft_len + 1)``.  Frames start every ``hop`` samples.
    """
    if hop < 1:
        raise ValueError("hop must be >= 1")
    _, f = _window(trace, window)
    if f.size < fft_len + 1:
        raise ValueError(f"window must contain at least fft_len + 1 = {fft_len + 1} samples")
    w = _taper(taper, fft_len + 1)
    frames = np.lib.stride_tricks.sliding_window_view(f, fft_len + 1)[::hop]
    return float(np.abs(np.fft.fft(frames * w, axis=1)).sum())


def _taper(taper, length):
    if taper is None or (isinstance(taper, str) and taper == "rect"):
        return np.ones(length)
    if isinstance(taper, str):
        if taper != "hann":
            raise ValueError(f"unknown taper {taper!r}")
        return hann(length)
    w = np.asarray(taper, dtype=float)
    if w.shape != (length,):
        raise ValueError(f"taper must have {length} samples")
    return w


def lag1_autocorr(x) -> float | None:
    """Mean-removed lag-1 autocorrelation normalised by the lag-0 sum.

    Returns ``None`` for a constant sequence.
    """
    x = np.asarray(x, dtype=float)
    if x.size < 2 or np.ptp(x) == 0:
        return None
    a = x - x.mean()
    den = float(np.dot(a, a))
    return float(np.dot(a[:-1], a[1:]) / den)


@dataclass(frozen=True)
class FeatureVector:
    slope: float
    mean: float
    variance: float
    v100: float
    stft_sum: float
    lag1: float
    lag1_defined: bool = field(default=True, compare=False)

    def __post_init__(self):
        vals = self.as_array()
        if not np.all(np.isfinite(vals)):
            raise ValueError("features must be finite")
        if self.variance < 0:
            raise ValueError("variance must be non-negative")
        if not -1.0 <= self.lag1 <= 1.0:
            raise ValueError("lag1 must lie in [-1, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in FEATURE_NAMES], dtype=float)


def extract_features(trace: PowerTrace, window: WindowSpec, *, v_at_ms: float = 100.0,
                     fft_len: int = STFT_LEN, hop: int = STFT_HOP) -> FeatureVector:
    """The six classification features over ``window``.

    ``v100`` is the raw sample nearest to ``v_at_ms``.  A constant window has
    no defined lag-1 autocorrelation; it is reported as 0 with
    ``lag1_defined=False`` and a warning.
    """
    t, p = _window(trace, window)
    if t.size < 3:
        raise ValueError("window must contain at least 3 samples")
    if not (t[0] - trace.dt / 2 <= v_at_ms <= t[-1] + trace.dt / 2):
        raise ValueError(f"window does not cover t = {v_at_ms:g} ms")
    r1 = lag1_autocorr(p)
    if r1 is None:
        warnings.warn("zero-variance window: lag-1 autocorrelation set to 0", RuntimeWarning,
                      stacklevel=2)
    v = p[int(np.argmin(np.abs(t - v_at_ms)))]
    return FeatureVector(
        slope=lsf_slope(trace, window),
        mean=float(p.mean()),
        variance=0.0 if r1 is None else float(p.var()),
        v100=float(v),
        stft_sum=stft_sum(trace, window, fft_len, hop),
        lag1=0.0 if r1 is None else min(1.0, max(-1.0, r1)),
        lag1_defined=r1 is not None,
    )


def feature_matrix(traces: Sequence[PowerTrace], window: WindowSpec, **kw) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.vstack([extract_features(tr, window, **kw).as_array() for tr in traces])


def write_feature_csv(path, apps: Sequence[str], X: np.ndarray) -> None:
    """Write ``app,slope,mean,variance,v100,stft_sum,lag1`` rows."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("app",) + FEATURE_NAMES)
        for a, row in zip(apps, X):
            w.writerow([a] + [f"{v:.10g}" for v in row])


def read_feature_csv(path) -> tuple[list[str], np.ndarray]:
    with Path(path).open() as fh:
        r = csv.reader(fh)
        header = next(r)
        if tuple(header) != ("app",) + FEATURE_NAMES:
            raise ValueError(f"{path}: unexpected header {header}")
        apps, rows = [], []
        for line in r:
            apps.append(line[0])
            rows.append([float(v) for v in line[1:]])
    return apps, np.array(rows, dtype=float).reshape(-1, len(FEATURE_NAMES))


def ensemble_stats(traces: Sequence[PowerTrace], t_grid) -> tuple[np.ndarray, np.ndarray]:
    """Across-trace mean and (population) standard deviation at each time."""
    traces = list(traces)
    if not traces:
        raise ValueError("need at least one trace")
    dts = {tr.dt for tr in traces}
    if len(dts) != 1:
        raise ValueError("traces must share dt")
    dt = dts.pop()
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    idx = np.rint(t_grid / dt).astype(np.int64)
    shortest = min(len(tr) for tr in traces)
    if idx.min() < 0 or idx.max() >= shortest:
        raise ValueError("t_grid extends beyond the trace duration")
    vals = np.vstack([tr.samples[idx] for tr in traces])
    return vals.mean(axis=0), vals.std(axis=0)


def time_to_fall(trace: PowerTrace, threshold_db: float, gamma: float = FALL_GAMMA) -> float | None:
    """First time (ms) the smoothed power is ``threshold_db`` below its t=0 value."""
    if not threshold_db > 0:
        raise ValueError("threshold_db must be positive")
    s = ewma(trace, gamma).samples
    hit = np.flatnonzero(s <= s[0] - threshold_db)
    if hit.size == 0:
        return None
    return float(hit[0] * trace.dt)


def fall_times(traces: Iterable[PowerTrace], threshold_db: float, gamma: float = FALL_GAMMA
               ) -> np.ndarray:
    """Fall times with ``nan`` for traces that never cross."""
    out = [time_to_fall(tr, threshold_db, gamma) for tr in traces]
    return np.array([np.nan if v is None else v for v in out], dtype=float)


def survival_quantile(times, x: float) -> float | None:
    """Largest observed fall time ``t`` with ``P(fall time > t) >= x``.

    Non-crossing traces (``nan``) count as surviving forever.  When no observed
    time qualifies the earliest one is returned; ``None`` if nothing crossed.
    """
    times = np.asarray(times, dtype=float)
    if not 0 < x < 1:
        raise ValueError("x must lie in (0, 1)")
    obs = np.sort(times[np.isfinite(times)])
    if obs.size == 0:
        return None
    n = times.size
    surv = np.array([(np.sum(~np.isfinite(times)) + np.sum(obs > t)) / n for t in obs])
    ok = np.flatnonzero(surv >= x - 1e-12)
    return float(obs[ok[-1]] if ok.size else obs[0])


@dataclass(frozen=True)
class FallTimeRow:
    label: str
    threshold_db: float
    times: np.ndarray = field(repr=False)
    quantiles: Mapping[float, float | None] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return int(self.times.size)

    @property
    def crossing_fraction(self) -> float:
        return float(np.mean(np.isfinite(self.times))) if self.times.size else 0.0

    @property
    def min(self) -> float | None:
        obs = self.times[np.isfinite(self.times)]
        return float(obs.min()) if obs.size else None

    @property
    def mean(self) -> float | None:
        if self.times.size == 0 or self.crossing_fraction < 1:
            return None
        return float(self.times.mean())

    @property
    def max(self) -> float | None:
        if self.times.size == 0 or self.crossing_fraction < 1:
            return None
        return float(self.times.max())

    def survival_quantile(self, x: float) -> float | None:
        return survival_quantile(self.times, x)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "threshold_db": self.threshold_db,
            "n_traces": self.n,
            "crossing_fraction": self.crossing_fraction,
            "min_ms": self.min,
            "mean_ms": self.mean,
            "max_ms": self.max,
            "survival_quantiles_ms": {f"{k:g}": v for k, v in self.quantiles.items()},
        }


@dataclass(frozen=True)
class FallTimeSummary:
    rows: Mapping[tuple[str, float], FallTimeRow]

    def row(self, label: str, threshold_db: float) -> FallTimeRow:
        try:
            return self.rows[(label, float(threshold_db))]
        except KeyError:
            raise KeyError(f"no fall-time row for {label!r} at {threshold_db:g} dB") from None

    @property
    def labels(self) -> list[str]:
        return list(dict.fromkeys(k[0] for k in self.rows))

    @property
    def thresholds(self) -> list[float]:
        return sorted({k[1] for k in self.rows})

    def to_json(self) -> str:
        """Table-2 layout: one object per threshold with per-label statistics."""
        doc = []
        for th in self.thresholds:
            doc.append({"threshold_db": th,
                        "labels": {lab: self.rows[(lab, th)].to_dict()
                                   for lab in self.labels if (lab, th) in self.rows}})
        return json.dumps(doc, indent=2)

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold_db", "label", "stat", "value_ms"])
            for th in self.thresholds:
                for lab in self.labels:
                    r = self.rows.get((lab, th))
                    if r is None:
                        continue
                    for stat, v in (("min", r.min), ("mean", r.mean), ("max", r.max)):
                        w.writerow([f"{th:g}", lab, stat, "N/A" if v is None else f"{v:.6g}"])
                    w.writerow([f"{th:g}", lab, "crossing_fraction", f"{r.crossing_fraction:.6g}"])


def fall_time_summary(traces: Sequence[PowerTrace], thresholds: Sequence[float], *,
                      labels: Sequence[str] | None = None,
                      quantile_levels: Sequence[float] = (0.5, 0.9, 0.95),
                      gamma: float = FALL_GAMMA) -> FallTimeSummary:
    """Fall-time statistics per label and threshold.

    ``labels`` defaults to each trace's ``app_id``.  Mean and max are left
    undefined unless every trace of the group crosses.
    """
    thresholds = [float(t) for t in thresholds]
    if not thresholds:
        raise ValueError("need at least one threshold")
    traces = list(traces)
    labels = [tr.app_id for tr in traces] if labels is None else list(labels)
    if len(labels) != len(traces):
        raise ValueError("labels and traces differ in length")
    rows = {}
    for lab in dict.fromkeys(labels):
        group = [tr for tr, l in zip(traces, labels) if l == lab]
        for th in thresholds:
            times = fall_times(group, th, gamma)
            q = {x: survival_quantile(times, x) for x in quantile_levels}
            rows[(lab, th)] = FallTimeRow(lab, th, times, q)
    return FallTimeSummary(rows)


class ConstantColumnError(ValueError):
    """A column has zero variance and cannot be standardised."""


@dataclass(frozen=True)
class PCAResult:
    projection: np.ndarray  # (n, 2)
    components: np.ndarray  # (2, d), rows orthonormal
    explained_variance: np.ndarray  # (2,)
    explained_ratio: np.ndarray  # (2,)
    center: np.ndarray
    scale: np.ndarray


def pca2(rows) -> PCAResult:
    """Two-component PCA of column-standardised data.

    Columns are centred and divided by their sample standard deviation; the
    components are the leading eigenvectors of the sample covariance, each
    signed so that its first non-zero entry is positive.
    """
    X = np.asarray(rows, dtype=float)
    if X.ndim != 2 or X.shape[0] < 3:
        raise ValueError("need a 2-D array with at least 3 rows")
    if X.shape[1] < 2:
        raise ValueError("need at least 2 columns")
    center = X.mean(axis=0)
    scale = X.std(axis=0, ddof=1)
    const = np.flatnonzero(scale <= 1e-12 * np.maximum(1.0, np.abs(center)))
    if const.size:
        raise ConstantColumnError(f"constant column(s) {const.tolist()} cannot be standardised")
    Z = (X - center) / scale
    cov = Z.T @ Z / (Z.shape[0] - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:2]
    vals = np.clip(vals[order], 0.0, None)
    comps = vecs[:, order].T
    for i in range(2):
        nz = np.flatnonzero(np.abs(comps[i]) > 1e-12)
        if nz.size and comps[i, nz[0]] < 0:
            comps[i] = -comps[i]
    total = float(np.trace(cov))
    return PCAResult(Z @ comps.T, comps, vals, vals / total, center, scale)
