"""Timestamped measurement records and their JSONL representation.

Every record serializes to one JSON object ``{"t": ..., "kind": ..., ...}``.
Feature records carry the virtual-measurement fields (``virtual``,
``source``, ``alpha``, ``kappa``) only when they were synthesized.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import ClassVar, Iterable, Optional

import numpy as np

from .geometry import Pose


def _floats(a) -> list:
    return [float(v) for v in np.asarray(a, dtype=float).ravel()]


@dataclass(frozen=True, eq=False)
class OdomDelta:
    """Measured relative body motion over ``(t0, t]`` with per-axis twist sigmas."""

    kind: ClassVar[str] = "OdomDelta"
    t: float
    t0: float
    delta: Pose
    sigmas: tuple  # (rot, rot, rot, trans, trans, trans)

    def to_json(self) -> dict:
        return {"t": self.t, "kind": self.kind, "t0": self.t0,
                "delta": _floats(self.delta.to_vector7()), "sigmas": _floats(self.sigmas)}

    @classmethod
    def from_json(cls, d: dict) -> "OdomDelta":
        return cls(d["t"], d["t0"], Pose.from_vector7(d["delta"]), tuple(d["sigmas"]))

    @property
    def covariance(self) -> np.ndarray:
        return np.diag(np.square(self.sigmas))


@dataclass(frozen=True, eq=False)
class Gyro:
    """Yaw rate averaged over ``(t - 1/gyro_hz, t]``."""

    kind: ClassVar[str] = "Gyro"
    t: float
    dt: float
    omega_z: float
    sigma: float

    def to_json(self) -> dict:
        return {"t": self.t, "kind": self.kind, "dt": self.dt, "omega_z": self.omega_z, "sigma": self.sigma}

    @classmethod
    def from_json(cls, d: dict) -> "Gyro":
        return cls(d["t"], d["dt"], d["omega_z"], d["sigma"])


@dataclass(frozen=True, eq=False)
class Uwb:
    kind: ClassVar[str] = "Uwb"
    t: float
    range: float

    def to_json(self) -> dict:
        return {"t": self.t, "kind": self.kind, "range": self.range}

    @classmethod
    def from_json(cls, d: dict) -> "Uwb":
        return cls(d["t"], d["range"])


@dataclass(frozen=True, eq=False)
class Feature:
    kind: ClassVar[str] = "Feature"
    t: float
    landmark_id: int
    u: float
    v: float
    virtual: bool = False
    source: Optional[tuple] = None
    alpha: Optional[float] = None
    kappa: float = 1.0

    def to_json(self) -> dict:
        d = {"t": self.t, "kind": self.kind, "landmark_id": self.landmark_id, "u": self.u, "v": self.v}
        if self.virtual:
            d.update(virtual=True, source=list(self.source), alpha=self.alpha, kappa=self.kappa)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Feature":
        if d.get("virtual", False):
            return cls(d["t"], d["landmark_id"], d["u"], d["v"], True, tuple(d["source"]), d["alpha"], d["kappa"])
        return cls(d["t"], d["landmark_id"], d["u"], d["v"])


@dataclass(frozen=True, eq=False)
class LanderDepthPoint:
    kind: ClassVar[str] = "LanderDepthPoint"
    t: float
    point: np.ndarray
    model_point_id: int

    def to_json(self) -> dict:
        return {"t": self.t, "kind": self.kind, "point": _floats(self.point), "model_point_id": self.model_point_id}

    @classmethod
    def from_json(cls, d: dict) -> "LanderDepthPoint":
        return cls(d["t"], np.array(d["point"], dtype=float), d["model_point_id"])


@dataclass(frozen=True, eq=False)
class LanderMask:
    """Segmentation-mask summary: camera-frame bearing and angular extent."""

    kind: ClassVar[str] = "LanderMask"
    t: float
    bearing: np.ndarray
    extent: float

    def to_json(self) -> dict:
        return {"t": self.t, "kind": self.kind, "bearing": _floats(self.bearing), "extent": self.extent}

    @classmethod
    def from_json(cls, d: dict) -> "LanderMask":
        return cls(d["t"], np.array(d["bearing"], dtype=float), d["extent"])


@dataclass(frozen=True, eq=False)
class PosePrior:
    """A priori pose knowledge: ``target`` is ``"rover"`` (start pose) or ``"lander"``."""

    kind: ClassVar[str] = "PosePrior"
    t: float
    target: str
    pose: Pose
    sigmas: tuple = field(default=(0.1,) * 6)

    def to_json(self) -> dict:
        return {"t": self.t, "kind": self.kind, "target": self.target,
                "pose": _floats(self.pose.to_vector7()), "sigmas": _floats(self.sigmas)}

    @classmethod
    def from_json(cls, d: dict) -> "PosePrior":
        return cls(d["t"], d["target"], Pose.from_vector7(d["pose"]), tuple(d["sigmas"]))


RECORD_TYPES = {c.kind: c for c in (OdomDelta, Gyro, Uwb, Feature, LanderDepthPoint, LanderMask, PosePrior)}
# tie-break order for records sharing a timestamp
KIND_ORDER = {k: i for i, k in enumerate(("PosePrior", "OdomDelta", "Gyro", "Uwb", "Feature",
                                          "LanderDepthPoint", "LanderMask"))}


def record_from_json(d: dict):
    try:
        return RECORD_TYPES[d["kind"]].from_json(d)
    except KeyError as exc:
        raise ValueError(f"unknown or incomplete record: {d!r}") from exc


def sort_records(records: Iterable) -> list:
    """Stable sort by (t, kind); generation order breaks remaining ties."""
    return sorted(records, key=lambda r: (r.t, KIND_ORDER[r.kind], getattr(r, "virtual", False)))


def dumps_record(r) -> str:
    return json.dumps(r.to_json())
