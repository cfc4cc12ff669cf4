"""Adaptive beam-tracking interval controller and its closed-loop simulator.

The controller starts in a warm-up phase, measuring the received power over
``warmup_n`` beam-tracking intervals of ``default_interval`` ms.  A detector
then compares those measurements with a labelled reference population.  Once
a mobility class is identified the interval is raised to a conservative
quantile of that class's time-to-outage, capped at ``max_interval``.  An
outage, or the detector positively identifying another class, sends the
controller back to warm-up.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .channel import GainModel, PowerTrace, power_corpus
from .features import (STFT_LEN, FallTimeSummary, WindowSpec, extract_features,
                       fall_time_summary, lsf_slope, time_to_fall)
from .mobility import synth_corpus
from .profiles import ApplicationProfile, class_of
from .stattest import ALPHA, mann_whitney_u

DETECTORS = ("mann-whitney", "classifier")
QUANTILE_MODES = ("survival", "cdf")
ACTIONS = ("maintain", "increase", "realign-now", "reset-to-warmup")


@dataclass(frozen=True)
class TrackerConfig:
    default_interval: float = 20.0
    max_interval: float = 320.0
    warmup_n: int = 10
    quantile_x: float = 0.95
    outage_threshold: float = 10.0
    detector: str = "mann-whitney"
    quantile_mode: str = "survival"
    disagreement_window: int = 5
    discard_first: bool = True
    alpha: float = ALPHA
    # labels of any other class must be rejected at this stricter level
    exclude_alpha: float = 1e-3

    def __post_init__(self):
        if not 0 < self.default_interval <= self.max_interval:
            raise ValueError("need 0 < default_interval <= max_interval")
        if self.warmup_n < 2:
            raise ValueError("warmup_n must be >= 2")
        if not 0.5 < self.quantile_x < 1:
            raise ValueError("quantile_x must lie in (0.5, 1)")
        if not self.outage_threshold > 0:
            raise ValueError("outage_threshold must be positive")
        if self.detector not in DETECTORS:
            raise ValueError(f"detector must be one of {DETECTORS}")
        if self.quantile_mode not in QUANTILE_MODES:
            raise ValueError(f"quantile_mode must be one of {QUANTILE_MODES}")
        if self.disagreement_window < 2:
            raise ValueError("disagreement_window must be >= 2")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0 < self.exclude_alpha <= self.alpha:
            raise ValueError("exclude_alpha must lie in (0, alpha]")

    @property
    def probe_window(self) -> WindowSpec:
        """Leading part of every measurement that the detector looks at."""
        return WindowSpec(0.0, self.default_interval)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class Detection:
    label: str
    class_label: str
    confidence: float  # p-value (Mann-Whitney) or vote share (classifier)


@dataclass(frozen=True)
class Record:
    """What the controller keeps from one interval's measurement."""

    slope: float
    features: np.ndarray | None = None


@dataclass(frozen=True)
class TrackerState:
    phase: str = "warmup"
    collected: tuple[Record, ...] = ()
    current_interval: float = 20.0
    detected: Detection | None = None
    recent: tuple[Record, ...] = ()  # active-phase records for re-testing
    skip_next: bool = True

    def __post_init__(self):
        if self.phase not in ("warmup", "active"):
            raise ValueError("phase must be 'warmup' or 'active'")
        if self.phase == "active" and self.detected is None:
            raise ValueError("an active tracker needs a detection")

    @classmethod
    def initial(cls, config: TrackerConfig) -> "TrackerState":
        return cls(current_interval=config.default_interval, skip_next=config.discard_first)


def estimate_interval(summary: FallTimeSummary, label: str, config: TrackerConfig) -> float:
    """Interval for ``label``: the ``quantile_x`` time-to-outage, clamped to
    ``[default_interval, max_interval]``.

    In ``survival`` mode this is the largest fall time that at least a
    fraction ``quantile_x`` of traces outlast; labels that reach the outage
    level in fewer than ``1 - quantile_x`` of traces get ``max_interval``.
    ``cdf`` mode uses the plain ``quantile_x`` order statistic instead.
    """
    try:
        row = summary.row(label, config.outage_threshold)
    except KeyError as exc:
        raise ValueError(str(exc.args[0])) from None
    if row.n == 0:
        raise ValueError(f"no fall-time samples for {label!r}")
    x = config.quantile_x
    if config.quantile_mode == "survival":
        if row.crossing_fraction < 1 - x:
            q = config.max_interval
        else:
            q = row.survival_quantile(x)
    else:
        t = np.sort(np.where(np.isfinite(row.times), row.times, np.inf))
        q = float(t[int(np.ceil(x * t.size)) - 1])
    return float(min(config.max_interval, max(config.default_interval, q)))


class Population:
    """Labelled reference measurements the detector tests against.

    Built from aligned-at-zero reference power traces per application; keeps
    per-label probe-window slopes (applications and their classes) and the
    fall-time summary used by :func:`estimate_interval`.
    """

    def __init__(self, traces: Mapping[str, Sequence[PowerTrace]], config: TrackerConfig,
                 *, granularity: str = "app", model=None):
        if granularity not in ("app", "class"):
            raise ValueError("granularity must be 'app' or 'class'")
        short = [a for a, ts in traces.items() if any(t.duration < config.max_interval for t in ts)]
        if short:
            raise ValueError(f"reference traces shorter than max_interval for {short}")
        self.config = config
        self.granularity = granularity
        apps = list(traces)
        all_traces = [t for a in apps for t in traces[a]]
        app_labels = [a for a in apps for _ in traces[a]]
        class_labels = [class_of(a) for a in app_labels]
        win = config.probe_window
        slopes = np.array([lsf_slope(t, win) for t in all_traces])
        group = app_labels if granularity == "app" else class_labels
        self.labels = tuple(dict.fromkeys(group))
        self.slopes = {lab: slopes[np.array(group) == lab] for lab in self.labels}
        th = [config.outage_threshold]
        apps_summary = fall_time_summary(all_traces, th, labels=app_labels)
        class_summary = fall_time_summary(all_traces, th, labels=class_labels)
        self.summary = FallTimeSummary({**apps_summary.rows, **class_summary.rows})
        self.model = model

    def class_of(self, label: str) -> str:
        return label if label in ("slow", "fast") else class_of(label)


def probe_features(trace: PowerTrace, config: TrackerConfig) -> np.ndarray:
    """Feature vector over the probe window, with the STFT frame shortened to fit."""
    n = int(round(config.default_interval / trace.dt)) + 1
    fft_len = min(STFT_LEN, n - 1)
    return extract_features(trace, config.probe_window, v_at_ms=config.default_interval,
                            fft_len=fft_len, hop=max(1, fft_len // 2)).as_array()


def detect(records: Sequence[Record], population: Population) -> Detection | None:
    """Positive detection, or ``None`` when the evidence is ambiguous.

    Mann-Whitney: every label whose reference slopes are not rejected
    (``p >= alpha``) is a candidate; detection needs at least one candidate,
    all candidates in one mobility class, and every label of the other
    classes rejected with ``p < exclude_alpha``.  A single candidate is
    reported by name, several by their class.  Classifier: majority vote of the
    population model over the records, positive when the winning class holds
    a strict majority.
    """
    cfg = population.config
    if cfg.detector == "classifier":
        if population.model is None:
            raise ValueError("classifier detector needs a trained population model")
        X = np.vstack([r.features for r in records])
        pred = population.model.predict(X)
        classes = [population.class_of(p) for p in pred]
        best = max(dict.fromkeys(classes), key=classes.count)
        share = classes.count(best) / len(classes)
        if share <= 0.5:
            return None
        names = [p for p in pred if population.class_of(p) == best]
        label = max(dict.fromkeys(names), key=names.count)
        label = label if names.count(label) / len(names) > 0.5 else best
        return Detection(label, best, share)
    x = np.array([r.slope for r in records])
    pvals = {lab: mann_whitney_u(x, population.slopes[lab]).p_value for lab in population.labels}
    accepted = [lab for lab, p in pvals.items() if p >= cfg.alpha]
    if not accepted:
        return None
    classes = {population.class_of(lab) for lab in accepted}
    if len(classes) != 1:
        return None
    cls = classes.pop()
    if any(p >= cfg.exclude_alpha for lab, p in pvals.items() if population.class_of(lab) != cls):
        return None
    if len(accepted) == 1:
        return Detection(accepted[0], cls, pvals[accepted[0]])
    return Detection(cls, cls, max(pvals[lab] for lab in accepted))


def _record(measurement: PowerTrace, config: TrackerConfig, need_features: bool) -> Record:
    slope = lsf_slope(measurement, config.probe_window)
    feats = probe_features(measurement, config) if need_features else None
    return Record(slope, feats)


def step(state: TrackerState, config: TrackerConfig, measurement: PowerTrace,
         population: Population) -> tuple[TrackerState, str, Detection | None]:
    """Advance the controller by one beam-tracking interval.

    ``measurement`` is the power since the last realignment; it must span the
    current interval.  Returns the new state, the action taken and the
    detection that drove it (if any).
    """
    if measurement.duration + 1e-9 < state.current_interval:
        raise ValueError(f"measurement covers {measurement.duration:g} ms, "
                         f"interval is {state.current_interval:g} ms")
    need_features = config.detector == "classifier"
    outage = time_to_fall(measurement.segment(0, state.current_interval),
                          config.outage_threshold)
    reset = TrackerState.initial(config)
    if state.phase == "warmup":
        if state.skip_next:
            return replace(state, skip_next=False), "maintain", None
        if outage is not None:
            return state, "realign-now", None
        collected = state.collected + (_record(measurement, config, need_features),)
        if len(collected) < config.warmup_n:
            return replace(state, collected=collected), "maintain", None
        collected = collected[-config.warmup_n:]
        det = detect(collected, population)
        if det is None:
            # slide the window and keep measuring
            return replace(state, collected=collected[1:]), "maintain", None
        interval = estimate_interval(population.summary, det.label, config)
        new = TrackerState("active", collected, interval, det, (), False)
        return new, "increase", det
    # active phase
    if outage is not None:
        return reset, "reset-to-warmup", None
    recent = (state.recent + (_record(measurement, config, need_features),))
    recent = recent[-config.disagreement_window:]
    if len(recent) == config.disagreement_window:
        det = detect(recent, population)
        if det is not None and det.class_label != state.detected.class_label:
            return reset, "reset-to-warmup", det
    return replace(state, recent=recent), "maintain", None


@dataclass(frozen=True)
class LogEntry:
    t_ms: float
    phase: str
    interval_ms: float
    action: str
    detected_label: str | None
    p_value_or_confidence: float | None
    app: str = ""
    outage: bool = False
    fall_time_ms: float | None = None

    def to_json(self) -> str:
        return json.dumps({
            "t_ms": self.t_ms, "phase": self.phase, "interval_ms": self.interval_ms,
            "action": self.action, "detected_label": self.detected_label,
            "p_value_or_confidence": self.p_value_or_confidence,
        }, sort_keys=False)


class IntervalSource:
    """Fresh post-alignment power traces, generated in seeded batches.

    Every call to :meth:`next` returns a new trace of ``length_ms`` starting
    at perfect alignment for the requested application.
    """

    def __init__(self, profiles: Mapping[str, ApplicationProfile], model: GainModel,
                 length_ms: float, seed=0, batch: int = 256, dt: float = 1.0):
        self.profiles = dict(profiles)
        self.model = model
        self.length = float(length_ms)
        self.batch = int(batch)
        self.dt = dt
        self.base = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        self._buf: dict[str, list[PowerTrace]] = {}
        self._count: dict[str, int] = {}

    def next(self, app: str) -> PowerTrace:
        buf = self._buf.setdefault(app, [])
        if not buf:
            i = self._count.get(app, 0)
            self._count[app] = i + 1
            idx = list(self.profiles).index(app)
            key = self.base.spawn_key + (idx, i)
            beams = synth_corpus(self.profiles[app], self.batch, self.length, self.dt,
                                 np.random.SeedSequence(self.base.entropy, spawn_key=key))
            buf.extend(reversed(power_corpus(
                beams, self.model,
                np.random.SeedSequence(self.base.entropy, spawn_key=key + (1,)))))
        return buf.pop()


@dataclass
class SimulationResult:
    log: list[LogEntry] = field(default_factory=list)
    final_state: TrackerState | None = None

    @property
    def outages(self) -> int:
        """Outages that hit the controller in the active phase."""
        return sum(e.outage for e in self.log if e.phase == "active")

    def fall_times(self, app: str | None = None) -> np.ndarray:
        v = [e.fall_time_ms for e in self.log if app is None or e.app == app]
        return np.array([np.nan if t is None else t for t in v], dtype=float)

    def first_index(self, pred: Callable[[LogEntry], bool], start: int = 0) -> int | None:
        for i in range(start, len(self.log)):
            if pred(self.log[i]):
                return i
        return None

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for e in self.log:
                fh.write(e.to_json() + "\n")


def simulate(config: TrackerConfig, population: Population, source: IntervalSource,
             schedule: Callable[[int], str] | str, n_intervals: int) -> SimulationResult:
    """Run the controller for ``n_intervals`` beam-tracking intervals.

    ``schedule(i)`` names the application active during interval ``i``.  Each
    interval draws a fresh trace of ``source.length`` ms (so the uncensored
    time-to-outage is logged too) and shows the controller its first
    ``current_interval`` ms.
    """
    sched = (lambda i: schedule) if isinstance(schedule, str) else schedule
    state = TrackerState.initial(config)
    out = SimulationResult()
    t = 0.0
    for i in range(n_intervals):
        app = sched(i)
        trace = source.next(app)
        phase, interval = state.phase, state.current_interval
        ft = time_to_fall(trace, config.outage_threshold)
        outage = ft is not None and ft <= interval
        state, action, det = step(state, config, trace.segment(0, interval), population)
        det = det or state.detected
        out.log.append(LogEntry(
            t_ms=t, phase=phase, interval_ms=interval, action=action,
            detected_label=None if det is None else det.label,
            p_value_or_confidence=None if det is None else float(det.confidence),
            app=app, outage=outage, fall_time_ms=ft))
        t += interval
    out.final_state = state
    return out
