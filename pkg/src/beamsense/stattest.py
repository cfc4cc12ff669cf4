"""Two-sample Mann-Whitney U test and pairwise p-value matrices."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import norm, rankdata

from .channel import PowerTrace
from .features import WindowSpec, lsf_slope

ALPHA = 0.05
EXACT_MAX_NM = 400


@dataclass(frozen=True)
class MWResult:
    u_statistic: float
    p_value: float
    method: str  # "exact" or "normal-approximation"

    def __post_init__(self):
        if self.method not in ("exact", "normal-approximation"):
            raise ValueError(f"unknown method {self.method!r}")
        if not 0 < self.p_value <= 1:
            raise ValueError("p_value must lie in (0, 1]")

    @property
    def significant(self) -> bool:
        return self.p_value < ALPHA


@lru_cache(maxsize=None)
def u_distribution(n: int, m: int) -> tuple[int, ...]:
    """Number of rank assignments giving each ``U = 0 .. n m`` (no ties).

    Uses the recurrence ``c(n, m, u) = c(n-1, m, u-m) + c(n, m-1, u)``: the
    largest observation belongs either to ``x`` (and beats all ``m`` values of
    ``y``) or to ``y``.
    """
    if n == 0 or m == 0:
        return (1,)
    with_x = u_distribution(n - 1, m)
    with_y = u_distribution(n, m - 1)
    out = [0] * (n * m + 1)
    for u, c in enumerate(with_x):
        out[u + m] += c
    for u, c in enumerate(with_y):
        out[u] += c
    return tuple(out)


def u_statistic(x, y) -> float:
    """``U_x = R_x - n (n + 1) / 2`` with midranks for ties."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    ranks = rankdata(np.concatenate([x, y]))
    return float(ranks[: x.size].sum() - x.size * (x.size + 1) / 2)


def _exact_p(u: float, n: int, m: int) -> float:
    counts = u_distribution(n, m)
    k = int(round(u))
    total = sum(counts)
    le = sum(counts[: k + 1])
    ge = sum(counts[k:])
    return min(1.0, 2 * min(le, ge) / total)


def _normal_p(u: float, n: int, m: int, pooled: np.ndarray) -> float:
    N = n + m
    _, t = np.unique(pooled, return_counts=True)
    tie = float(np.sum(t ** 3 - t))
    var = n * m / 12.0 * ((N + 1) - tie / (N * (N - 1))) if N > 1 else 0.0
    mu = n * m / 2.0
    if var <= 0:
        return 1.0
    z = (abs(u - mu) - 0.5) / math.sqrt(var)
    if z <= 0:
        return 1.0
    return float(min(1.0, 2 * norm.sf(z)))


def mann_whitney_u(x, y) -> MWResult:
    """Two-sided Mann-Whitney test of ``x`` against ``y``.

    Exact when ``n m <= 400`` and there are no ties, otherwise the normal
    approximation with tie-corrected variance and a 0.5 continuity correction.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size == 0 or y.size == 0:
        raise ValueError("both samples must be non-empty")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("samples must be finite")
    n, m = x.size, y.size
    pooled = np.concatenate([x, y])
    u = u_statistic(x, y)
    ties = np.unique(pooled).size < pooled.size
    if n * m <= EXACT_MAX_NM and not ties:
        return MWResult(u, _exact_p(u, n, m), "exact")
    return MWResult(u, _normal_p(u, n, m, pooled), "normal-approximation")


@dataclass(frozen=True)
class PValueMatrix:
    labels: tuple[str, ...]
    p: np.ndarray

    def __getitem__(self, pair: tuple[str, str]) -> float:
        i, j = (self.labels.index(a) for a in pair)
        return float(self.p[i, j])

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([""] + list(self.labels))
            for lab, row in zip(self.labels, self.p):
                w.writerow([lab] + [f"{v:.6g}" for v in row])

    @classmethod
    def from_csv(cls, path) -> "PValueMatrix":
        with Path(path).open() as fh:
            rows = list(csv.reader(fh))
        labels = tuple(rows[0][1:])
        p = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
        return cls(labels, p)


def _slopes(items, window: WindowSpec | None) -> np.ndarray:
    items = list(items)
    if items and isinstance(items[0], PowerTrace):
        if window is None:
            raise ValueError("a window is needed to compute slopes from traces")
        return np.array([lsf_slope(tr, window) for tr in items])
    return np.asarray(items, dtype=float)


def pairwise_slope_matrix(groups: Mapping[str, Sequence], window: WindowSpec | None,
                          n_series: int, seed=0) -> PValueMatrix:
    """Symmetric matrix of Mann-Whitney p-values between labelled groups.

    ``groups`` maps a label to power traces (slopes are taken over ``window``)
    or directly to slope values.  Each group contributes one random subsample
    of ``n_series`` slopes; off-diagonal cells compare two groups' subsamples
    and each diagonal cell compares the two disjoint halves of one subsample.
    """
    if n_series < 2:
        raise ValueError("n_series must be >= 2")
    rng = np.random.default_rng(seed)
    labels = tuple(groups)
    sub = {}
    for lab in labels:
        s = _slopes(groups[lab], window)
        if s.size < n_series:
            raise ValueError(f"group {lab!r} has {s.size} slopes, fewer than n_series={n_series}")
        sub[lab] = s[rng.permutation(s.size)[:n_series]]
    k = len(labels)
    p = np.ones((k, k))
    half = n_series // 2
    for i, a in enumerate(labels):
        p[i, i] = mann_whitney_u(sub[a][:half], sub[a][half:2 * half]).p_value
        for j in range(i + 1, k):
            p[i, j] = p[j, i] = mann_whitney_u(sub[a], sub[labels[j]]).p_value
    return PValueMatrix(labels, p)
