"""Virtual camera frames between adjacent real frames.

This is a classical stand-in for learned frame interpolation: feature tracks
are interpolated linearly in pixel space, which is exact for constant image
velocity. Virtual observations carry an inflation factor ``kappa`` on their
pixel noise so they never claim the precision of real measurements.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .config import ScenarioConfig
from .lander import to_camera
from .records import Feature, sort_records

DEFAULT_KAPPA = 1.5


@dataclass(frozen=True)
class FeatureFrame:
    """All (real) feature observations sharing one timestamp."""

    t: float
    tracks: dict  # landmark_id -> (u, v)

    @classmethod
    def from_records(cls, records: Sequence[Feature]) -> "FeatureFrame":
        ts = {r.t for r in records}
        if len(ts) != 1:
            raise ValueError("a frame needs records with one common timestamp")
        return cls(ts.pop(), {r.landmark_id: (r.u, r.v) for r in records})


def camera_frames(measurements: Sequence) -> list[FeatureFrame]:
    """Real feature frames in time order (virtual records are ignored)."""
    groups = defaultdict(list)
    for r in measurements:
        if r.kind == "Feature" and not r.virtual:
            groups[r.t].append(r)
    return [FeatureFrame.from_records(groups[t]) for t in sorted(groups)]


def interpolate_tracks(frame0: FeatureFrame, frame1: FeatureFrame, alpha: float, kappa: float = DEFAULT_KAPPA,
                       frame_times: Optional[Sequence[float]] = None) -> list[Feature]:
    """Virtual features at ``t0 + alpha (t1 - t0)`` for landmarks seen in both frames.

    ``frame_times`` lists every real frame time; when given, the two frames
    must be neighbours in it.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if kappa < 1.0:
        raise ValueError("kappa must be >= 1")
    t0, t1 = frame0.t, frame1.t
    if not t1 > t0:
        raise ValueError("frames must be in increasing time order")
    if frame_times is not None and any(t0 < t < t1 for t in frame_times):
        raise ValueError(f"frames at {t0} and {t1} are not adjacent")
    t = t0 + alpha * (t1 - t0)
    out = []
    for lid in sorted(set(frame0.tracks) & set(frame1.tracks)):
        (u0, v0), (u1, v1) = frame0.tracks[lid], frame1.tracks[lid]
        out.append(Feature(t, lid, u0 + alpha * (u1 - u0), v0 + alpha * (v1 - v0), True, (t0, t1), alpha,
                           float(kappa)))
    return out


def synthesize_stream(measurements: Sequence, n_virtual: int = 1, kappa: float = DEFAULT_KAPPA) -> list:
    """Insert ``n_virtual`` interpolated frames into every gap between real frames.

    Existing records are passed through untouched (same objects); the result
    is time-sorted.
    """
    if n_virtual < 1:
        raise ValueError("n_virtual must be >= 1")
    frames = camera_frames(measurements)
    virtual = []
    for f0, f1 in zip(frames, frames[1:]):
        for j in range(1, n_virtual + 1):
            virtual.extend(interpolate_tracks(f0, f1, j / (n_virtual + 1), kappa))
    real = [r for r in measurements if not getattr(r, "virtual", False)]
    return sort_records(real + virtual)


def interpolation_error(truth, config: ScenarioConfig, n_virtual: int = 1) -> np.ndarray:
    """Pixel errors of noiseless virtual features against the true projection.

    Returns an ``(N, 2)`` array over all virtual observations of the mission
    described by ``truth`` and ``config`` (camera noise is ignored).
    """
    from .scenario import in_image, project, simulate_camera

    frames = camera_frames(simulate_camera(truth, config.noiseless()))
    errs = []
    for f0, f1 in zip(frames, frames[1:]):
        for j in range(1, n_virtual + 1):
            feats = interpolate_tracks(f0, f1, j / (n_virtual + 1), 1.0)
            if not feats:
                continue
            ids = np.array([f.landmark_id for f in feats])
            pc = to_camera(truth.landmarks[ids], truth.pose_at(feats[0].t))
            ok = pc[:, 2] > 0.1
            uv = project(pc[ok], config)
            keep = in_image(uv, config)
            got = np.array([(f.u, f.v) for f in feats])[ok][keep]
            errs.append(got - uv[keep])
    return np.concatenate(errs) if errs else np.zeros((0, 2))


def calibrate_kappa(config: ScenarioConfig, n_virtual: int = 1, seeds: Sequence[int] = (1000, 1001, 1002),
                    pixel_sigma: Optional[float] = None) -> float:
    """Noise inflation that makes virtual features statistically honest.

    A virtual pixel carries the interpolated real noise (variance
    ``((1 - a)^2 + a^2) sigma^2``) plus the interpolation error, whose RMS is
    measured against ground truth on calibration seeds disjoint from any
    evaluation seeds. ``kappa`` is the ratio of that total to ``sigma``,
    never below 1.
    """
    from .scenario import generate_truth

    sigma = config.pixel_sigma if pixel_sigma is None else pixel_sigma
    if sigma <= 0:
        raise ValueError("pixel sigma must be positive to calibrate kappa")
    errs = np.concatenate([interpolation_error(generate_truth(config.replace(seed=int(s))), config, n_virtual)
                           for s in seeds])
    interp_var = float(np.mean(errs**2)) if len(errs) else 0.0
    alphas = np.arange(1, n_virtual + 1) / (n_virtual + 1)
    mix = float(np.mean((1 - alphas) ** 2 + alphas**2))
    return float(max(1.0, np.sqrt(mix + interp_var / sigma**2)))
