"""Per-application micromobility profiles.

The numbers come from the published micromobility summary for four smartphone
applications (video, phone call, VR, racing game).  Every curve is a
piecewise-linear function of the angular distance of the beam centre from
perfect alignment, spanning ``0 .. span_deg`` and held constant beyond.

``plane_to_angle`` converts the tabulated capture-plane speeds (m/s) into
angular speeds (deg/m); it is fitted by :func:`beamsense.channel.calibrate_channel`.
The defaults below are the output of that calibration with the default
channel settings.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import yaml

APPS = ("video", "call", "vr", "racing")
FAST_APPS = ("vr", "racing")
CLASSES = ("slow", "fast")


def class_of(app: str) -> str:
    """Mobility class of an application name."""
    if app not in APPS:
        raise ValueError(f"unknown application {app!r}")
    return "fast" if app in FAST_APPS else "slow"


@dataclass(frozen=True)
class Curve:
    """Piecewise-linear function on ``[0, span]``, constant outside."""

    knots: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.knots) != len(self.values) or len(self.knots) < 1:
            raise ValueError("knots and values must be non-empty and the same length")
        if np.any(np.diff(self.knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("curve values must be finite")

    @classmethod
    def linear(cls, start: float, stop: float, span: float) -> "Curve":
        return cls((0.0, float(span)), (float(start), float(stop)))

    @classmethod
    def constant(cls, value: float) -> "Curve":
        return cls((0.0,), (float(value),))

    def __call__(self, d):
        return np.interp(d, self.knots, self.values)

    @property
    def min(self) -> float:
        return min(self.values)

    @property
    def max(self) -> float:
        return max(self.values)

    def to_dict(self) -> dict:
        return {"knots": list(self.knots), "values": list(self.values)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Curve":
        return cls(tuple(float(k) for k in d["knots"]), tuple(float(v) for v in d["values"]))


@dataclass(frozen=True)
class ApplicationProfile:
    """Mobility statistics of one application.

    Speeds are in m/s in the capture plane, drifts are dimensionless
    probabilities of a step heading back to the origin (in excess of a fair
    coin), ``axis_corr`` is the correlation of x/y increments.
    """

    name: str
    speed_curve: Curve
    drift_curve: Curve
    axis_corr: float
    plane_to_angle: float
    x_speed_curve: Curve | None = None
    y_speed_curve: Curve | None = None
    x_drift_curve: Curve | None = None
    y_drift_curve: Curve | None = None

    def __post_init__(self):
        if self.name not in APPS:
            raise ValueError(f"unknown application {self.name!r}; expected one of {APPS}")
        for c in self._drifts():
            if c.min < 0 or c.max > 1:
                raise ValueError(f"{self.name}: drift probabilities must lie in [0, 1]")
        for c in self._speeds():
            if c.min < 0:
                raise ValueError(f"{self.name}: speeds must be non-negative")
        if not -1.0 <= self.axis_corr <= 1.0:
            raise ValueError(f"{self.name}: axis_corr must lie in [-1, 1]")
        if not (np.isfinite(self.plane_to_angle) and self.plane_to_angle >= 0):
            raise ValueError(f"{self.name}: plane_to_angle must be finite and >= 0")

    def _drifts(self):
        return [c for c in (self.drift_curve, self.x_drift_curve, self.y_drift_curve) if c is not None]

    def _speeds(self):
        return [c for c in (self.speed_curve, self.x_speed_curve, self.y_speed_curve) if c is not None]

    @property
    def class_label(self) -> str:
        return class_of(self.name)

    def with_plane_to_angle(self, value: float) -> "ApplicationProfile":
        return replace(self, plane_to_angle=float(value))

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "class_label": self.class_label,
            "axis_corr": self.axis_corr,
            "plane_to_angle": self.plane_to_angle,
        }
        for key in ("speed_curve", "drift_curve", "x_speed_curve", "y_speed_curve",
                    "x_drift_curve", "y_drift_curve"):
            c = getattr(self, key)
            if c is not None:
                out[key] = c.to_dict()
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "ApplicationProfile":
        if "class_label" in d and d["class_label"] != class_of(d["name"]):
            raise ValueError(f"{d['name']}: class_label must be {class_of(d['name'])!r}")
        curves = {}
        for key in ("speed_curve", "drift_curve", "x_speed_curve", "y_speed_curve",
                    "x_drift_curve", "y_drift_curve"):
            if d.get(key) is not None:
                curves[key] = Curve.from_dict(d[key])
        return cls(name=d["name"], axis_corr=float(d["axis_corr"]),
                   plane_to_angle=float(d["plane_to_angle"]), **curves)


# Angular distance (deg) over which the tabulated "as a function of distance"
# trends play out.
CURVE_SPAN_DEG = 5.0

# (speed, drift, axis corr, x speed, y speed, x drift, y drift); speeds in m/s.
_TABLE = {
    "video": ((3, 10), (0.17, 0.11), 0.0, (1, 6), (2, 8), (0.17, 0.05), (0.17, 0.21)),
    "call": ((7, 7), (0.17, 0.30), -0.2, (3, 6), (3, 5), (0.17, 0.13), (0.17, 0.25)),
    "vr": ((9, 13), (0.17, 0.17), 0.0, (6, 9), (5, 8), (0.17, 0.17), (0.17, 0.17)),
    "racing": ((9, 5), (0.17, 0.17), -0.4, (7, 4), (3, 2), (0.13, 0.21), (0.19, 0.14)),
}

# deg per metre of capture-plane displacement, from calibrate_channel() with
# the default GainModel settings (see DEFAULT_HPBW_DEG).
CALIBRATED_PLANE_TO_ANGLE = {
    "video": 0.0067,
    "call": 0.815063,
    "vr": 2.151743,
    "racing": 10.469729,
}


def table_profiles(plane_to_angle: Mapping[str, float] | None = None,
                   span_deg: float = CURVE_SPAN_DEG) -> dict[str, ApplicationProfile]:
    """Build the four application profiles from the tabulated statistics."""
    k = dict(CALIBRATED_PLANE_TO_ANGLE)
    if plane_to_angle:
        k.update(plane_to_angle)
    out = {}
    for name in APPS:
        sp, dr, corr, xs, ys, xd, yd = _TABLE[name]
        lin = lambda pair: Curve.linear(pair[0], pair[1], span_deg)  # noqa: E731
        out[name] = ApplicationProfile(
            name=name,
            speed_curve=lin(sp),
            drift_curve=lin(dr),
            axis_corr=corr,
            plane_to_angle=k[name],
            x_speed_curve=lin(xs),
            y_speed_curve=lin(ys),
            x_drift_curve=lin(xd),
            y_drift_curve=lin(yd),
        )
    return out


def dump_profiles(profiles: Mapping[str, ApplicationProfile]) -> str:
    """Serialize profiles to the YAML key-value layout read by :func:`load_profiles`."""
    return yaml.safe_dump({"profiles": [p.to_dict() for p in profiles.values()]},
                          sort_keys=False)


def load_profiles(text: str) -> dict[str, ApplicationProfile]:
    """Parse a YAML document with a top-level ``profiles`` list.

    Each entry carries ``name``, ``axis_corr``, ``plane_to_angle`` and curve
    mappings ``{knots: [...], values: [...]}`` for ``speed_curve`` and
    ``drift_curve`` (per-axis curves optional).
    """
    doc = yaml.safe_load(text)
    if not isinstance(doc, dict) or "profiles" not in doc:
        raise ValueError("profile config needs a top-level 'profiles' list")
    out = {}
    for entry in doc["profiles"]:
        p = ApplicationProfile.from_dict(entry)
        out[p.name] = p
    return out


def profile_list(profiles: Mapping[str, ApplicationProfile] | Sequence[ApplicationProfile]):
    if isinstance(profiles, Mapping):
        return list(profiles.values())
    return list(profiles)
