"""End-to-end experiment: calibration, corpus synthesis, statistics, tests,
classification, closed-loop tracking and the report bundle.

Every stage reads and writes plain files inside the output directory, so
stages can be re-run one at a time.  All randomness flows from the master
seed: stage ``s`` uses child ``STAGE_KEYS[s]`` of it.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np
import yaml

from . import classify as clf
from .channel import (DEFAULT_HPBW_DEG, LOSS_FLOOR_DB, NOISE_SIGMA_DB, P0_DB, CalibrationConfig,
                      CalibrationError, CalibrationTargets, GainModel, calibrate_channel,
                      power_corpus, read_power_csv, write_power_csv)
from .features import (STFT_HOP, STFT_LEN, ConstantColumnError, WindowSpec, ensemble_stats,
                       fall_time_summary, feature_matrix, lsf_slope, pca2, read_feature_csv,
                       write_feature_csv)
from .mobility import synth_corpus, write_beam_csv
from .profiles import APPS, ApplicationProfile, class_of, dump_profiles, load_profiles, table_profiles
from .stattest import PValueMatrix, pairwise_slope_matrix
from .tracker import IntervalSource, Population, TrackerConfig, simulate

STAGES = ("calibrate", "synth", "features", "mwtest", "classify", "track", "report")
STAGE_KEYS = {s: i for i, s in enumerate(STAGES)}


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage


# ---------------------------------------------------------------- config


@dataclass(frozen=True)
class ChannelSection:
    hpbw: float = DEFAULT_HPBW_DEG
    loss_floor: float = LOSS_FLOOR_DB
    p0: float = P0_DB
    noise_sigma: float = NOISE_SIGMA_DB
    flat_ms: float = 0.0


@dataclass(frozen=True)
class CalibrationSection:
    mode: str = "fit"  # "fit" runs the search, "fixed" keeps the given parameters
    n_traces: int = 200
    hpbw_grid: tuple[float, ...] = CalibrationConfig().hpbw_grid
    max_residual: float = 1.5

    def __post_init__(self):
        if self.mode not in ("fit", "fixed"):
            raise ValueError("calibration.mode must be 'fit' or 'fixed'")


@dataclass(frozen=True)
class CorpusSection:
    traces_per_app: int = 30
    duration_ms: float = 1000.0
    dt: float = 1.0

    def __post_init__(self):
        if self.traces_per_app < 2:
            raise ValueError("corpus.traces_per_app must be >= 2")


@dataclass(frozen=True)
class DynamicsSection:
    n_traces: int = 100
    horizon_ms: float = 30000.0
    thresholds: tuple[float, ...] = (3.0, 10.0, 20.0)
    t_grid_ms: tuple[float, ...] = (0, 100, 200, 500, 1000, 2000, 3000, 4000, 5000, 6000,
                                    10000, 20000, 30000)
    quantiles: tuple[float, ...] = (0.5, 0.9, 0.95)


@dataclass(frozen=True)
class FeaturesSection:
    windows: tuple[tuple[float, float], ...] = ((0.0, 100.0), (50.0, 150.0), (0.0, 300.0))
    v_at_ms: float = 100.0
    stft_len: int = STFT_LEN
    stft_hop: int = STFT_HOP
    slope_window_ends_ms: tuple[float, ...] = (50, 100, 150, 200, 250, 300, 400, 500)


@dataclass(frozen=True)
class MwSection:
    windows: tuple[tuple[float, float], ...] = ((0.0, 100.0), (50.0, 150.0))
    n_series: tuple[int, ...] = (10, 30)


@dataclass(frozen=True)
class ClassifySection:
    window: tuple[float, float] = (0.0, 300.0)
    repetitions: int = 20
    train_fraction: float = 0.5
    tree_depth: int = 3
    n_trees: int = 100
    knn_k: int = 3


@dataclass(frozen=True)
class TrackSection:
    default_interval: float = 20.0
    max_interval: float = 320.0
    warmup_n: int = 10
    quantile_x: float = 0.95
    outage_threshold: float = 10.0
    detector: str = "mann-whitney"
    quantile_mode: str = "survival"
    disagreement_window: int = 5
    discard_first: bool = True
    reference_traces: int = 400
    n_intervals: int = 2000
    switch_from: str = "video"
    switch_to: str = "racing"

    def tracker_config(self) -> TrackerConfig:
        keys = {f.name for f in dataclasses.fields(TrackerConfig)}
        return TrackerConfig(**{k: v for k, v in dataclasses.asdict(self).items() if k in keys})


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 7
    out: str = "beamsense-report"
    profiles: tuple[dict, ...] | None = None
    channel: ChannelSection = ChannelSection()
    calibration: CalibrationSection = CalibrationSection()
    corpus: CorpusSection = CorpusSection()
    dynamics: DynamicsSection = DynamicsSection()
    features: FeaturesSection = FeaturesSection()
    mwtest: MwSection = MwSection()
    classify: ClassifySection = ClassifySection()
    track: TrackSection = TrackSection()

    def __post_init__(self):
        wins = [tuple(float(v) for v in w) for w in self.features.windows]
        if tuple(float(v) for v in self.classify.window) not in wins:
            raise ValueError("classify.window must be one of features.windows")
        for w in wins + [tuple(w) for w in self.mwtest.windows]:
            WindowSpec(*w)

    def base_profiles(self) -> dict[str, ApplicationProfile]:
        if self.profiles is None:
            return table_profiles()
        return load_profiles(yaml.safe_dump({"profiles": list(self.profiles)}))

    def gain_model(self) -> GainModel:
        c = self.channel
        return GainModel(c.hpbw, c.loss_floor, c.p0, c.noise_sigma)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_dict(cls, doc: Mapping | None) -> "ExperimentConfig":
        return _build(cls, doc or {}, "")

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def _tupleize(v):
    if isinstance(v, list):
        return tuple(_tupleize(x) for x in v)
    return v


def _build(cls, doc: Mapping, where: str):
    if not isinstance(doc, Mapping):
        raise ValueError(f"config section {where or '<root>'} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(doc) - set(fields)
    if unknown:
        raise ValueError(f"unknown config keys in {where or '<root>'}: {sorted(unknown)}")
    kw = {}
    for name, value in doc.items():
        default = getattr(cls(), name) if name in fields else None
        if dataclasses.is_dataclass(default):
            kw[name] = _build(type(default), value, f"{where}{name}.")
        elif name == "profiles":
            kw[name] = None if value is None else tuple(value)
        else:
            kw[name] = _tupleize(value)
    return cls(**kw)


def default_config_text() -> str:
    return ("# beamsense experiment configuration; every key is optional.\n"
            + ExperimentConfig().dump())


# ---------------------------------------------------------------- helpers


def _seed(cfg: ExperimentConfig, stage: str, *extra: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(cfg.seed), spawn_key=(STAGE_KEYS[stage],) + tuple(extra))


def _int_seed(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(1, np.uint64)[0])


def _win_name(w) -> str:
    return f"{w[0]:g}-{w[1]:g}ms"


def _fmt(v) -> str:
    return "N/A" if v is None else f"{v:.10g}"


class _Writer:
    """Creates files for one stage, refusing to clobber unless forced."""

    def __init__(self, out: Path, stage: str, force: bool):
        self.out, self.stage, self.force = out, stage, force
        self.created: list[Path] = []

    def path(self, rel: str) -> Path:
        p = self.out / rel
        if p.exists() and not self.force:
            raise StageError(self.stage, f"{p} exists; pass --force to overwrite")
        p.parent.mkdir(parents=True, exist_ok=True)
        self.created.append(p)
        return p

    def text(self, rel: str, text: str) -> None:
        self.path(rel).write_text(text)

    def json(self, rel: str, doc) -> None:
        self.text(rel, json.dumps(doc, indent=2) + "\n")

    def csv(self, rel: str, header, rows) -> None:
        with self.path(rel).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)

    def remove_created(self) -> None:
        for p in self.created:
            if p.is_file():
                p.unlink()


def _need(out: Path, rel: str, stage: str, producer: str) -> Path:
    p = out / rel
    if not p.exists():
        raise StageError(stage, f"missing {p}; run the '{producer}' stage first")
    return p


def _load_calibrated(out: Path, stage: str, cfg: ExperimentConfig):
    prof_text = _need(out, "profiles.yaml", stage, "calibrate").read_text()
    cal = json.loads(_need(out, "calibration.json", stage, "calibrate").read_text())
    base = cfg.gain_model()
    model = GainModel(cal["hpbw_deg"], base.loss_floor, base.p0, base.noise_sigma)
    return load_profiles(prof_text), model


def _load_corpus(out: Path, stage: str):
    index = _need(out, "corpus/index.csv", stage, "synth")
    traces, apps = [], []
    with index.open() as fh:
        for row in csv.DictReader(fh):
            traces.append(read_power_csv(out / "corpus" / row["power_file"], row["app"]))
            apps.append(row["app"])
    if not traces:
        raise StageError(stage, "corpus index is empty")
    return traces, apps


# ---------------------------------------------------------------- stages


def stage_calibrate(cfg: ExperimentConfig, w: _Writer) -> None:
    base = cfg.base_profiles()
    if cfg.calibration.mode == "fixed":
        doc = {"hpbw_deg": cfg.channel.hpbw,
               "plane_to_angle_deg_per_m": {n: p.plane_to_angle for n, p in base.items()},
               "mode": "fixed"}
        w.json("calibration.json", doc)
        w.text("profiles.yaml", dump_profiles(base))
        return
    cc = CalibrationConfig(hpbw_grid=tuple(cfg.calibration.hpbw_grid),
                           n_traces=cfg.calibration.n_traces,
                           seed=_int_seed(_seed(cfg, "calibrate")),
                           dt=cfg.corpus.dt, max_residual=cfg.calibration.max_residual)
    try:
        result = calibrate_channel(base, CalibrationTargets(), cfg.gain_model(), cc)
    except CalibrationError as exc:
        w.text("calibration.json", exc.result.to_json() + "\n")
        raise StageError("calibrate", str(exc)) from None
    w.text("calibration.json", result.to_json() + "\n")
    w.text("profiles.yaml", dump_profiles(result.profiles(base)))


def synth_power_corpus(cfg: ExperimentConfig, profiles, model: GainModel):
    """The analysis corpus: ``(beams, powers, apps)`` seeded from the master seed."""
    c = cfg.corpus
    beams, powers, apps = [], [], []
    for a, app in enumerate(APPS):
        b = synth_corpus(profiles[app], c.traces_per_app, c.duration_ms, c.dt,
                         _seed(cfg, "synth", a, 0))
        beams += b
        powers += power_corpus(b, model, _seed(cfg, "synth", a, 1), flat_ms=cfg.channel.flat_ms)
        apps += [app] * len(b)
    return beams, powers, apps


def stage_synth(cfg: ExperimentConfig, w: _Writer) -> None:
    profiles, model = _load_calibrated(w.out, "synth", cfg)
    beams, powers, apps = synth_power_corpus(cfg, profiles, model)
    rows = []
    count: dict[str, int] = {}
    for app, b, p in zip(apps, beams, powers):
        i = count[app] = count.get(app, -1) + 1
        stem = f"{app}_{i:03d}"
        write_beam_csv(b, w.path(f"corpus/{stem}_beam.csv"))
        write_power_csv(p, w.path(f"corpus/{stem}_power.csv"))
        rows.append([app, class_of(app), i, f"{stem}_beam.csv", f"{stem}_power.csv"])
    w.csv("corpus/index.csv", ["app", "class", "trace", "beam_file", "power_file"], rows)


def stage_features(cfg: ExperimentConfig, w: _Writer) -> None:
    traces, apps = _load_corpus(w.out, "features")
    f = cfg.features
    for win in f.windows:
        spec = WindowSpec(*win)
        try:
            X = feature_matrix(traces, spec, v_at_ms=f.v_at_ms, fft_len=f.stft_len, hop=f.stft_hop)
        except ValueError as exc:
            raise StageError("features", f"window {_win_name(win)}: {exc}") from None
        write_feature_csv(w.path(f"features_{_win_name(win)}.csv"), apps, X)
        try:
            pc = pca2(X)
        except ConstantColumnError as exc:
            raise StageError("features", f"PCA over {_win_name(win)}: {exc}") from None
        w.csv(f"plots/pca_{_win_name(win)}.csv", ["app", "pc1", "pc2"],
              [[a, _fmt(p[0]), _fmt(p[1])] for a, p in zip(apps, pc.projection)])
        w.json(f"plots/pca_{_win_name(win)}_components.json",
               {"components": pc.components.tolist(),
                "explained_variance": pc.explained_variance.tolist(),
                "explained_ratio": pc.explained_ratio.tolist()})
    # slope against window length, per trace and averaged per application
    rows, means = [], []
    for end in f.slope_window_ends_ms:
        spec = WindowSpec(0.0, float(end))
        s = np.array([lsf_slope(t, spec) for t in traces])
        rows += [[a, i, f"{end:g}", _fmt(v)] for i, (a, v) in enumerate(zip(apps, s))]
        means += [[app, f"{end:g}", _fmt(float(s[np.array(apps) == app].mean()))]
                  for app in dict.fromkeys(apps)]
    w.csv("slopes_vs_window.csv", ["app", "trace", "window_end_ms", "slope_db_per_ms"], rows)
    w.csv("plots/slope_vs_window_mean.csv", ["app", "window_end_ms", "mean_slope_db_per_ms"], means)
    _dynamics(cfg, w)


def _dynamics(cfg: ExperimentConfig, w: _Writer) -> None:
    """Long-horizon ensemble: fall-time table and ensemble mean/std curves."""
    profiles, model = _load_calibrated(w.out, "features", cfg)
    d = cfg.dynamics
    all_traces, labels, ens_rows = [], [], []
    t_grid = [t for t in d.t_grid_ms if t <= d.horizon_ms]
    for a, app in enumerate(APPS):
        beams = synth_corpus(profiles[app], d.n_traces, d.horizon_ms, cfg.corpus.dt,
                             _seed(cfg, "features", a, 0))
        powers = power_corpus(beams, model, _seed(cfg, "features", a, 1),
                              flat_ms=cfg.channel.flat_ms)
        mean, std = ensemble_stats(powers, t_grid)
        ens_rows += [[app, f"{t:g}", _fmt(m), _fmt(s)] for t, m, s in zip(t_grid, mean, std)]
        all_traces += powers
        labels += [app] * len(powers)
    summary = fall_time_summary(all_traces, d.thresholds, labels=labels, quantile_levels=d.quantiles)
    w.text("fall_times.json", summary.to_json() + "\n")
    summary.to_csv(w.path("fall_times.csv"))
    w.csv("ensemble.csv", ["app", "t_ms", "mean_db", "std_db"], ens_rows)


def mw_matrices(cfg: ExperimentConfig, traces, apps) -> dict[str, PValueMatrix]:
    """Every configured p-value matrix, keyed by its report file stem."""
    m = cfg.mwtest
    by_app = {a: [t for t, x in zip(traces, apps) if x == a] for a in dict.fromkeys(apps)}
    by_class = {}
    for a, ts in by_app.items():
        by_class.setdefault(class_of(a), []).extend(ts)
    by_class = {c: by_class[c] for c in ("slow", "fast") if c in by_class}
    out = {}
    for wi, win in enumerate(m.windows):
        for ni, n in enumerate(m.n_series):
            for gi, (name, groups) in enumerate((("app", by_app), ("class", by_class))):
                if min(len(v) for v in groups.values()) < n:
                    continue
                out[f"mw_{name}_{_win_name(win)}_n{n}"] = pairwise_slope_matrix(
                    groups, WindowSpec(*win), n, _seed(cfg, "mwtest", wi, ni, gi))
    return out


def stage_mwtest(cfg: ExperimentConfig, w: _Writer) -> None:
    traces, apps = _load_corpus(w.out, "mwtest")
    for stem, mat in mw_matrices(cfg, traces, apps).items():
        mat.to_csv(w.path(f"{stem}.csv"))


def stage_classify(cfg: ExperimentConfig, w: _Writer) -> None:
    c = cfg.classify
    path = _need(w.out, f"features_{_win_name(c.window)}.csv", "classify", "features")
    apps, X = read_feature_csv(path)
    trainers = {
        "tree": lambda ds, s: clf.train_tree(ds, max_depth=c.tree_depth),
        "forest": lambda ds, s: clf.train_forest(ds, n_trees=c.n_trees, seed=s),
        "knn": lambda ds, s: clf.train_knn(ds, k=c.knn_k),
        "gnb": lambda ds, s: clf.train_gnb(ds),
    }
    datasets = {
        "class": clf.Dataset(X, [class_of(a) for a in apps], ("slow", "fast")),
        "app": clf.Dataset(X, apps, tuple(a for a in APPS if a in apps)),
    }
    report, rows = {}, []
    for gi, (gran, ds) in enumerate(datasets.items()):
        report[gran] = {}
        for ci, (name, trainer) in enumerate(trainers.items()):
            res = clf.repeated_holdout(ds, trainer, c.repetitions, c.train_fraction,
                                       _seed(cfg, "classify", gi, ci), name)
            s = res.summary()
            report[gran][name] = {**s, "runs": [m.to_dict() for m in res.runs]}
            rows.append([gran, name] + [_fmt(s[k][stat]) for k in ("accuracy", "macro_recall",
                                                                   "macro_f1")
                                        for stat in ("mean", "std")])
            model = trainer(ds, _int_seed(_seed(cfg, "classify", gi, ci, 99)))
            w.text(f"models/{gran}_{name}.json", clf.dumps(model) + "\n")
            if name == "forest":
                imp = clf.feature_importance(model)
                w.csv(f"feature_importance_{gran}.csv", ["feature", "importance"],
                      [[f, _fmt(v)] for f, v in zip(ds.feature_names, imp)])
    w.json("metrics.json", report)
    w.csv("metrics.csv", ["labels", "classifier", "accuracy_mean", "accuracy_std",
                          "recall_mean", "recall_std", "f1_mean", "f1_std"], rows)


def stage_track(cfg: ExperimentConfig, w: _Writer) -> None:
    profiles, model = _load_calibrated(w.out, "track", cfg)
    t = cfg.track
    try:
        tc = t.tracker_config()
    except ValueError as exc:
        raise StageError("track", str(exc)) from None
    for app in (t.switch_from, t.switch_to):
        if app not in profiles:
            raise StageError("track", f"unknown application {app!r} in the switch scenario")
    ref_source = IntervalSource(profiles, model, tc.max_interval, _seed(cfg, "track", 0),
                                batch=t.reference_traces)
    population = Population({a: [ref_source.next(a) for _ in range(t.reference_traces)]
                             for a in profiles}, tc)
    if tc.detector == "classifier":
        population.model = _probe_forest(population, ref_source, profiles, tc, cfg)
    summary = {}
    for a, app in enumerate(profiles):
        src = IntervalSource(profiles, model, tc.max_interval, _seed(cfg, "track", 1, a))
        res = simulate(tc, population, src, app, t.n_intervals)
        summary[app] = _track_summary(res, tc, app)
    half = t.n_intervals // 2
    src = IntervalSource(profiles, model, tc.max_interval, _seed(cfg, "track", 2))
    res = simulate(tc, population, src,
                   lambda i: t.switch_from if i < half else t.switch_to, t.n_intervals)
    res.write_jsonl(w.path("tracking_log.jsonl"))
    reset = res.first_index(lambda e: e.action == "reset-to-warmup", half)
    summary["switch"] = {
        "from": t.switch_from, "to": t.switch_to, "switch_interval": half,
        "phase_at_switch": res.log[half].phase if half < len(res.log) else None,
        "reset_interval": reset,
        "intervals_to_reset": None if reset is None else reset - half + 1,
    }
    w.json("tracking_summary.json", {"config": tc.to_dict(), "runs": summary})


def _probe_forest(population, source, profiles, tc, cfg):
    from .tracker import probe_features
    rows, labels = [], []
    for app in profiles:
        for _ in range(100):
            rows.append(probe_features(source.next(app), tc))
            labels.append(app)
    ds = clf.Dataset(np.vstack(rows), labels)
    return clf.train_forest(ds, n_trees=cfg.classify.n_trees,
                            seed=_int_seed(_seed(cfg, "track", 3)))


def _track_summary(res, tc: TrackerConfig, app: str) -> dict:
    from .features import survival_quantile
    active = [e for e in res.log if e.phase == "active"]
    fs = res.final_state
    return {
        "app": app,
        "final_phase": fs.phase,
        "final_interval_ms": fs.current_interval,
        "detected": None if fs.detected is None else fs.detected.label,
        "active_intervals": len(active),
        "active_outages": res.outages,
        "resets": sum(e.action == "reset-to-warmup" for e in res.log),
        "max_active_interval_ms": max((e.interval_ms for e in active), default=None),
        "empirical_survival_quantile_ms": survival_quantile(res.fall_times(), tc.quantile_x),
    }


def stage_report(cfg: ExperimentConfig, w: _Writer) -> None:
    """Manifest of the bundle: every file with its size and SHA-256."""
    files = sorted(p for p in w.out.rglob("*") if p.is_file() and p.name != "manifest.json")
    entries = []
    for p in files:
        data = p.read_bytes()
        entries.append({"file": p.relative_to(w.out).as_posix(), "bytes": len(data),
                        "sha256": hashlib.sha256(data).hexdigest()})
    # the output directory is left out so a bundle does not depend on where it was written
    config = {k: v for k, v in cfg.to_dict().items() if k != "out"}
    w.json("manifest.json", {"seed": cfg.seed, "config": config, "files": entries})


STAGE_FUNCS: dict[str, Callable[[ExperimentConfig, _Writer], None]] = {
    "calibrate": stage_calibrate, "synth": stage_synth, "features": stage_features,
    "mwtest": stage_mwtest, "classify": stage_classify, "track": stage_track,
    "report": stage_report,
}


def run_stage(stage: str, cfg: ExperimentConfig, out: Path, force: bool = False) -> list[Path]:
    """Run one stage; on failure every file it created is removed."""
    if stage not in STAGE_FUNCS:
        raise StageError(stage, f"unknown stage; choose from {STAGES}")
    out.mkdir(parents=True, exist_ok=True)
    w = _Writer(out, stage, force)
    try:
        STAGE_FUNCS[stage](cfg, w)
    except StageError:
        w.remove_created()
        raise
    except (ValueError, KeyError, OSError) as exc:
        w.remove_created()
        raise StageError(stage, f"{type(exc).__name__}: {exc}") from exc
    return w.created


def run_pipeline(cfg: ExperimentConfig, out: Path | None = None, stages=STAGES,
                 force: bool = False, log: Callable[[str], None] | None = None) -> Path:
    """Run ``stages`` in pipeline order into ``out`` (default ``cfg.out``).

    A fresh run refuses a non-empty output directory unless ``force``; a
    failed run removes the files it created.
    """
    out = Path(out or cfg.out)
    unknown = [s for s in stages if s not in STAGES]
    if unknown:
        raise StageError(unknown[0], f"unknown stage; choose from {STAGES}")
    if out.exists() and any(out.iterdir()) and not force:
        raise StageError(stages[0] if stages else "report",
                         f"output directory {out} is not empty; pass --force to overwrite")
    fresh = not out.exists()
    created: list[Path] = []
    try:
        for s in STAGES:
            if s in stages:
                if log:
                    log(f"[{s}]")
                created += run_stage(s, cfg, out, force)
    except StageError:
        for p in created:
            if p.is_file():
                p.unlink()
        if fresh and out.exists():
            shutil.rmtree(out, ignore_errors=True)
        raise
    return out
