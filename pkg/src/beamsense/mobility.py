"""Beam-centre micromobility traces.

Three generators are provided:

* :func:`synth_walk` / :func:`synth_corpus` -- the two-axis drift walk driven by
  an :class:`~beamsense.profiles.ApplicationProfile`;
* :func:`sample_decomposed` -- per-axis independent walks (``markov1d``) or a
  driftless Gaussian diffusion (``brownian``);
* :func:`fit_markov2d` / :func:`sample_markov2d` -- an N x N grid Markov chain
  fitted to observed traces.

The drift walk is a velocity-jump process on angular coordinates.  The beam
centre moves along a straight "run" whose per-axis length is exponential with
mean ``run_deg``.  At the start of every run each axis picks a direction: with
probability ``drift(d)`` it heads back to the origin, otherwise it tosses a
fair coin, so the toward-origin probability is ``0.5 + drift(d) / 2``.
Each run also draws a speed multiplier uniform on ``[1 - s, 1 + s]``, so the
ensemble speed follows the profile while single runs vary.  With
probability ``|axis_corr|`` the y direction copies the x direction (negated for
negative correlation).  The beam moves at ``speed(d) * plane_to_angle`` deg/s.
An axis that reaches zero stops there and ends the run; walks reflect at the
field-of-view edge.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy import sparse

from .profiles import ApplicationProfile

FOV_DEG = 20.0
RUN_DEG = 24.0  # mean run length between direction changes, deg
SPEED_SPREAD = 0.8  # per-run speed multiplier is uniform on [1 - s, 1 + s]
_CHUNK = 256


class AngularOffset(NamedTuple):
    """Beam-centre offset from perfect alignment, in degrees."""

    x: float
    y: float

    @property
    def r(self) -> float:
        return float(np.hypot(self.x, self.y))


@dataclass(frozen=True)
class BeamCenterTrace:
    """Angular offset of the beam centre sampled every ``dt`` milliseconds."""

    x: np.ndarray
    y: np.ndarray
    dt: float
    app_id: str = ""

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.ndim != 1 or x.shape != y.shape or x.size == 0:
            raise ValueError("x and y must be non-empty 1-D arrays of equal length")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("offsets must be finite")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.x.size

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.x.size) * self.dt

    @property
    def r(self) -> np.ndarray:
        return np.hypot(self.x, self.y)

    @property
    def samples(self) -> np.ndarray:
        """``(n, 2)`` array of (x, y) offsets."""
        return np.column_stack([self.x, self.y])

    def offset(self, k: int) -> AngularOffset:
        return AngularOffset(float(self.x[k]), float(self.y[k]))


def _check_timing(duration: float, dt: float) -> int:
    if not dt > 0:
        raise ValueError("dt must be positive")
    if duration < dt:
        raise ValueError("duration must be at least dt")
    return int(np.floor(duration / dt + 1e-9))


def _seed_sequences(seed, n: int) -> list[np.random.SeedSequence]:
    if isinstance(seed, np.random.SeedSequence):
        base = seed
    else:
        base = np.random.SeedSequence(seed)
    return [np.random.SeedSequence(base.entropy, spawn_key=base.spawn_key + (i,)) for i in range(n)]


class _RunTable:
    """Per-trace pre-drawn randomness, consumed one row per run.

    Rows are drawn from each trace's own generator in fixed-size chunks, so a
    trace depends only on its own seed (not on the corpus size) and a longer
    duration extends the same trajectory.
    """

    def __init__(self, seqs: Sequence[np.random.SeedSequence], ncols: int):
        self.gens = [np.random.Generator(np.random.PCG64(s)) for s in seqs]
        self.ncols = ncols
        self.u = np.empty((len(seqs), 0, ncols))
        self.e = np.empty((len(seqs), 0))
        self.next = np.zeros(len(seqs), dtype=np.int64)
        self._grow()

    def _grow(self):
        u = np.stack([g.random((_CHUNK, self.ncols)) for g in self.gens])
        e = np.stack([g.standard_exponential(_CHUNK) for g in self.gens])
        self.u = np.concatenate([self.u, u], axis=1)
        self.e = np.concatenate([self.e, e], axis=1)

    def take(self, rows: np.ndarray):
        idx = self.next[rows]
        while idx.size and idx.max() >= self.u.shape[1]:
            self._grow()
        self.next[rows] += 1
        return self.u[rows, idx], self.e[rows, idx]


def _toward(pos: np.ndarray) -> np.ndarray:
    return -np.sign(pos)


def _speed_factor(u: np.ndarray, spread: float) -> np.ndarray:
    return 1.0 + spread * (2.0 * u - 1.0)


def _draw_sign(pos, drift, u_det, u_coin):
    coin = np.where(u_coin < 0.5, -1.0, 1.0)
    return np.where(u_det < drift, _toward(pos), coin)


def _reflect(pos, sign, fov):
    over = np.abs(pos) > fov
    if over.any():
        pos = pos.copy()
        sign = sign.copy()
        pos[over] = np.sign(pos[over]) * (2 * fov - np.abs(pos[over]))
        sign[over] = -sign[over]
    return pos, sign


def _validate_profile(profile) -> None:
    if not isinstance(profile, ApplicationProfile):
        raise TypeError("profile must be an ApplicationProfile")


def synth_corpus(profile: ApplicationProfile, n: int, duration: float, dt: float = 1.0,
                 seed=0, *, start: tuple[float, float] = (0.0, 0.0),
                 run_deg: float = RUN_DEG, fov: float = FOV_DEG,
                 speed_spread: float = SPEED_SPREAD) -> list[BeamCenterTrace]:
    """Generate ``n`` independent drift-walk traces.

    Trace ``i`` is a function of ``(profile, duration, dt, seed, i)`` only.
    """
    _validate_profile(profile)
    steps = _check_timing(duration, dt)
    if n < 1:
        raise ValueError("n must be >= 1")
    if not run_deg > 0:
        raise ValueError("run_deg must be positive")
    _check_spread(speed_spread)
    xs, ys = _joint_walk(profile, n, steps, dt, _seed_sequences(seed, n), start, run_deg, fov,
                         speed_spread)
    return [BeamCenterTrace(xs[:, i], ys[:, i], dt, profile.name) for i in range(n)]


def synth_walk(profile: ApplicationProfile, duration: float, dt: float = 1.0, seed=0, **kw
               ) -> BeamCenterTrace:
    """Single drift-walk trace of ``floor(duration / dt) + 1`` samples."""
    return synth_corpus(profile, 1, duration, dt, seed, **kw)[0]


def _check_spread(spread):
    if not 0.0 <= spread <= 1.0:
        raise ValueError("speed_spread must lie in [0, 1]")


def _joint_walk(profile, n, steps, dt, seqs, start, run_deg, fov, speed_spread):
    k = profile.plane_to_angle
    rho = profile.axis_corr
    x = np.full(n, float(start[0]))
    y = np.full(n, float(start[1]))
    sx = np.zeros(n)
    sy = np.zeros(n)
    ell = np.zeros(n)
    gain = np.ones(n)
    xs = np.empty((steps + 1, n))
    ys = np.empty((steps + 1, n))
    xs[0], ys[0] = x, y
    table = _RunTable(seqs, 6)
    all_rows = np.arange(n)
    scale = k * dt * 1e-3
    for t in range(steps):
        d = np.hypot(x, y)
        new = ell <= 0
        if new.any():
            rows = all_rows[new]
            u, e = table.take(rows)
            drift = profile.drift_curve(d[new])
            nx = _draw_sign(x[new], drift, u[:, 0], u[:, 1])
            ny = _draw_sign(y[new], drift, u[:, 2], u[:, 3])
            if rho != 0.0:
                ny = np.where(u[:, 4] < abs(rho), np.sign(rho) * nx, ny)
            sx[new] = nx
            sy[new] = ny
            ell[new] = e * run_deg
            gain[new] = _speed_factor(u[:, 5], speed_spread)
        moving = np.abs(sx) + np.abs(sy)
        step = profile.speed_curve(d) * scale
        # keep the path speed when one axis is parked at zero
        c = np.where(moving > 0, gain * step / np.sqrt(np.maximum(moving, 1.0)), 0.0)
        nx = x + sx * c
        ny = y + sy * c
        cx = nx * x < 0
        cy = ny * y < 0
        nx[cx] = 0.0
        ny[cy] = 0.0
        rx = np.abs(nx) > fov
        ry = np.abs(ny) > fov
        nx, sx = _reflect(nx, sx, fov)
        ny, sy = _reflect(ny, sy, fov)
        hit = cx | cy | rx | ry
        if hit.any():
            # an axis that reaches zero stops there and draws a fresh direction;
            # an axis turned back at the edge keeps its new sign and the other
            # axis re-couples to it; the run keeps its speed and duration
            rows = all_rows[hit]
            u, _ = table.take(rows)
            hx, hy = sx[hit], sy[hit]
            couple = u[:, 4] < abs(rho)
            hy = np.where(couple & rx[hit] & ~ry[hit], np.sign(rho) * hx, hy)
            hx = np.where(couple & ry[hit] & ~rx[hit], np.sign(rho) * hy, hx)
            drift = profile.drift_curve(np.hypot(nx[hit], ny[hit]))
            ax = _draw_sign(nx[hit], drift, u[:, 0], u[:, 1])
            ay = _draw_sign(ny[hit], drift, u[:, 2], u[:, 3])
            ax = np.where(couple & (hy != 0), np.sign(rho) * hy, ax)
            ay = np.where(couple & (hx != 0), np.sign(rho) * hx, ay)
            sx[hit] = np.where(cx[hit], ax, hx)
            sy[hit] = np.where(cy[hit], ay, hy)
        # runs last a fixed time whatever their speed; a parked beam still uses
        # up its run, so it cannot stall forever
        ell -= step
        x, y = nx, ny
        xs[t + 1], ys[t + 1] = x, y
    return xs, ys


def _axis_walk(speed, drift, k, steps, dt, seqs, run_deg, fov, speed_spread):
    n = len(seqs)
    pos = np.zeros(n)
    sign = np.zeros(n)
    ell = np.zeros(n)
    gain = np.ones(n)
    out = np.empty((steps + 1, n))
    out[0] = 0.0
    table = _RunTable(seqs, 3)
    rows_all = np.arange(n)
    scale = k * dt * 1e-3
    for t in range(steps):
        a = np.abs(pos)
        new = ell <= 0
        if new.any():
            rows = rows_all[new]
            u, e = table.take(rows)
            sign[new] = _draw_sign(pos[new], drift(a[new]), u[:, 0], u[:, 1])
            ell[new] = e * run_deg
            gain[new] = _speed_factor(u[:, 2], speed_spread)
        c = speed(a) * scale
        npos = pos + sign * gain * c
        cross = npos * pos < 0
        npos[cross] = 0.0
        npos, sign = _reflect(npos, sign, fov)
        if cross.any():
            # same rule as the joint walk: stop at zero, redraw, keep the run
            rows = rows_all[cross]
            u, _ = table.take(rows)
            sign[cross] = _draw_sign(npos[cross], drift(np.zeros(rows.size)), u[:, 0], u[:, 1])
        ell -= c
        pos = npos
        out[t + 1] = pos
    return out


def _gauss_axis(speed, k, steps, dt, seqs, run_deg, fov):
    n = len(seqs)
    z = np.stack([np.random.Generator(np.random.PCG64(s)).standard_normal(steps) for s in seqs], axis=1)
    pos = np.zeros(n)
    out = np.empty((steps + 1, n))
    out[0] = 0.0
    scale = k * dt * 1e-3
    for t in range(steps):
        c = speed(np.abs(pos)) * scale
        # same long-run diffusivity as a run-and-tumble walk at this speed
        sigma = np.sqrt(2.0 * c * run_deg)
        pos = pos + sigma * z[t]
        over = np.abs(pos) > fov
        pos[over] = np.sign(pos[over]) * (2 * fov - np.abs(pos[over]))
        out[t + 1] = pos
    return out


def sample_decomposed(profile: ApplicationProfile, mode: str, duration: float, dt: float = 1.0,
                      seed=0, *, n: int | None = None, run_deg: float = RUN_DEG,
                      fov: float = FOV_DEG, speed_spread: float = SPEED_SPREAD):
    """Per-axis independent trace(s).

    ``markov1d`` runs one drift walk per axis using the per-axis speed and
    drift curves (distance is the absolute offset on that axis).
    ``brownian`` uses Gaussian increments with no drift, their variance
    matched to the diffusivity of a run-and-tumble walk with the same
    per-axis speed.  Returns one trace, or a list when ``n`` is given.
    """
    _validate_profile(profile)
    steps = _check_timing(duration, dt)
    if mode not in ("markov1d", "brownian"):
        raise ValueError("mode must be 'markov1d' or 'brownian'")
    count = 1 if n is None else int(n)
    if count < 1:
        raise ValueError("n must be >= 1")
    seqs = _seed_sequences(seed, count)
    sx = [np.random.SeedSequence(s.entropy, spawn_key=s.spawn_key + (0,)) for s in seqs]
    sy = [np.random.SeedSequence(s.entropy, spawn_key=s.spawn_key + (1,)) for s in seqs]
    xsp = profile.x_speed_curve or profile.speed_curve
    ysp = profile.y_speed_curve or profile.speed_curve
    k = profile.plane_to_angle
    if mode == "markov1d":
        xdr = profile.x_drift_curve or profile.drift_curve
        ydr = profile.y_drift_curve or profile.drift_curve
        _check_spread(speed_spread)
        xs = _axis_walk(xsp, xdr, k, steps, dt, sx, run_deg, fov, speed_spread)
        ys = _axis_walk(ysp, ydr, k, steps, dt, sy, run_deg, fov, speed_spread)
    else:
        xs = _gauss_axis(xsp, k, steps, dt, sx, run_deg, fov)
        ys = _gauss_axis(ysp, k, steps, dt, sy, run_deg, fov)
    traces = [BeamCenterTrace(xs[:, i], ys[:, i], dt, profile.name) for i in range(count)]
    return traces[0] if n is None else traces


# ---------------------------------------------------------------------------
# Grid Markov chain


@dataclass(frozen=True)
class MarkovModel2D:
    """Row-stochastic chain over ``grid_n**2`` cells of an angular box.

    Cells are numbered ``iy * grid_n + ix``.  ``transition`` is a CSR matrix.
    """

    grid_n: int
    bounds: tuple[float, float, float, float]  # xmin, xmax, ymin, ymax
    transition: sparse.csr_matrix
    initial_cell: int
    dt: float = 1.0

    def __post_init__(self):
        if self.grid_n < 2:
            raise ValueError("grid_n must be >= 2")
        xmin, xmax, ymin, ymax = self.bounds
        if not (xmax > xmin and ymax > ymin):
            raise ValueError("bounds must be non-degenerate")
        m = self.grid_n ** 2
        T = sparse.csr_matrix(self.transition, dtype=float)
        if T.shape != (m, m):
            raise ValueError(f"transition must be {m} x {m}")
        if T.data.size and T.data.min() < 0:
            raise ValueError("transition probabilities must be non-negative")
        rows = np.asarray(T.sum(axis=1)).ravel()
        if np.max(np.abs(rows - 1.0)) > 1e-12:
            raise ValueError("transition rows must sum to 1")
        if not 0 <= self.initial_cell < m:
            raise ValueError("initial_cell out of range")
        T.sort_indices()
        object.__setattr__(self, "transition", T)

    @property
    def cell_width(self) -> tuple[float, float]:
        xmin, xmax, ymin, ymax = self.bounds
        return (xmax - xmin) / self.grid_n, (ymax - ymin) / self.grid_n

    def cell_of(self, x, y) -> np.ndarray:
        return cell_index(np.asarray(x, float), np.asarray(y, float), self.grid_n, self.bounds)

    def cell_center(self, cell) -> tuple[np.ndarray, np.ndarray]:
        cell = np.asarray(cell)
        wx, wy = self.cell_width
        ix = cell % self.grid_n
        iy = cell // self.grid_n
        return self.bounds[0] + (ix + 0.5) * wx, self.bounds[2] + (iy + 0.5) * wy


def default_bounds(fov: float = FOV_DEG) -> tuple[float, float, float, float]:
    return (-fov, fov, -fov, fov)


def cell_index(x, y, grid_n, bounds) -> np.ndarray:
    xmin, xmax, ymin, ymax = bounds
    if np.any((x < xmin) | (x > xmax) | (y < ymin) | (y > ymax)):
        raise ValueError("samples outside the grid bounds")
    ix = np.minimum(((x - xmin) / (xmax - xmin) * grid_n).astype(np.int64), grid_n - 1)
    iy = np.minimum(((y - ymin) / (ymax - ymin) * grid_n).astype(np.int64), grid_n - 1)
    return iy * grid_n + ix


def fit_markov2d(traces: Iterable[BeamCenterTrace], grid_n: int = 100,
                 bounds: tuple[float, float, float, float] | None = None) -> MarkovModel2D:
    """Count cell-to-cell transitions and normalise each row.

    Cells never left (never visited, or only as a trace's last sample) get a
    self-loop.
    """
    traces = list(traces)
    if not traces:
        raise ValueError("need at least one trace")
    if grid_n < 2:
        raise ValueError("grid_n must be >= 2")
    bounds = default_bounds() if bounds is None else tuple(float(b) for b in bounds)
    m = grid_n * grid_n
    src, dst = [], []
    dts = {tr.dt for tr in traces}
    for tr in traces:
        cells = cell_index(tr.x, tr.y, grid_n, bounds)
        src.append(cells[:-1])
        dst.append(cells[1:])
    src = np.concatenate(src)
    dst = np.concatenate(dst)
    counts = sparse.coo_matrix((np.ones(src.size), (src, dst)), shape=(m, m)).tocsr()
    counts.sum_duplicates()
    out_deg = np.asarray(counts.sum(axis=1)).ravel()
    unvisited = np.flatnonzero(out_deg == 0)
    counts = counts + sparse.csr_matrix((np.ones(unvisited.size), (unvisited, unvisited)), shape=(m, m))
    out_deg[unvisited] = 1.0
    T = sparse.diags(1.0 / out_deg) @ counts
    T = sparse.csr_matrix(T)
    origin = int(cell_index(np.array([0.0]), np.array([0.0]), grid_n, bounds)[0]) \
        if bounds[0] <= 0 <= bounds[1] and bounds[2] <= 0 <= bounds[3] else 0
    dt = dts.pop() if len(dts) == 1 else traces[0].dt
    return MarkovModel2D(grid_n, bounds, T, origin, dt)


def _row_sampler(T: sparse.csr_matrix):
    indptr, indices, data = T.indptr, T.indices, T.data
    row_of = np.repeat(np.arange(T.shape[0]), np.diff(indptr))
    csum = np.cumsum(data)
    start = np.concatenate([[0.0], csum])[indptr[:-1]]
    key = row_of + (csum - start[row_of])
    return indptr, indices, key


def sample_markov2d(model: MarkovModel2D, duration: float, dt: float | None = None, seed=0,
                    *, n: int | None = None):
    """Walk the chain from ``initial_cell``; each cell maps to its centre."""
    if not isinstance(model, MarkovModel2D):
        raise TypeError("model must be a MarkovModel2D")
    dt = model.dt if dt is None else dt
    steps = _check_timing(duration, dt)
    count = 1 if n is None else int(n)
    seqs = _seed_sequences(seed, count)
    u = np.stack([np.random.Generator(np.random.PCG64(s)).random(steps) for s in seqs], axis=1)
    indptr, indices, key = _row_sampler(model.transition)
    cells = np.empty((steps + 1, count), dtype=np.int64)
    cur = np.full(count, model.initial_cell, dtype=np.int64)
    cells[0] = cur
    for t in range(steps):
        pos = np.searchsorted(key, cur + u[t], side="right")
        pos = np.clip(pos, indptr[cur], indptr[cur + 1] - 1)
        cur = indices[pos]
        cells[t + 1] = cur
    cx, cy = model.cell_center(cells)
    traces = [BeamCenterTrace(cx[:, i], cy[:, i], dt, "markov2d") for i in range(count)]
    return traces[0] if n is None else traces


def occupancy(traces: Iterable[BeamCenterTrace], grid_n: int = 100, bounds=None) -> np.ndarray:
    """Normalised cell-occupancy histogram over all samples."""
    bounds = default_bounds() if bounds is None else bounds
    cells = np.concatenate([cell_index(tr.x, tr.y, grid_n, bounds) for tr in traces])
    h = np.bincount(cells, minlength=grid_n * grid_n).astype(float)
    return h / h.sum()


# ---------------------------------------------------------------------------
# CSV


def write_beam_csv(trace: BeamCenterTrace, path) -> None:
    """Write ``t_ms,x_deg,y_deg`` rows."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write("t_ms,x_deg,y_deg\n")
        np.savetxt(fh, np.column_stack([trace.t, trace.x, trace.y]), delimiter=",", fmt="%.10g")


def read_beam_csv(path, app_id: str = "") -> BeamCenterTrace:
    path = Path(path)
    with path.open() as fh:
        header = next(csv.reader(fh))
        if [h.strip() for h in header] != ["t_ms", "x_deg", "y_deg"]:
            raise ValueError(f"{path}: expected header t_ms,x_deg,y_deg")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    t = data[:, 0]
    dt = float(t[1] - t[0]) if t.size > 1 else 1.0
    return BeamCenterTrace(data[:, 1], data[:, 2], dt, app_id)
