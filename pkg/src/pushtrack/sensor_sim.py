"""Synthetic sensor streams from ground-truth simulation output.

Produces the two measurement streams the estimators consume: noisy object
poses at camera rate with scripted occlusion windows, and per-finger
force/position samples at tactile rate with threshold contact detection.
All randomness is driven by a single seed, with independent substreams for
the visual and tactile channels, so identical seeds give bit-identical
streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geom2d import Pose2, wrap_angle
from .pushing_physics import SimLog

__all__ = [
    "VisualSample",
    "TactileSample",
    "FingerReading",
    "NoiseSpec",
    "OcclusionSchedule",
    "render_visual",
    "render_tactile",
]


@dataclass(frozen=True)
class VisualSample:
    """Camera pose measurement; pose is meaningless when available is False."""

    t: float
    pose: Pose2
    available: bool


@dataclass(frozen=True)
class FingerReading:
    """One finger's tactile data: sensed force (N), center position (m), contact flag."""

    force: np.ndarray
    position: np.ndarray
    contact: bool

    def __post_init__(self):
        object.__setattr__(self, "force", np.asarray(self.force, dtype=float))
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))


@dataclass(frozen=True)
class TactileSample:
    t: float
    fingers: tuple

    @property
    def n_contacts(self) -> int:
        return sum(1 for f in self.fingers if f.contact)

    def contacting(self):
        return [f for f in self.fingers if f.contact]


@dataclass(frozen=True)
class NoiseSpec:
    """Sensor noise configuration.

    visual_sigma is per-axis (m, m, rad); visual_bias is a constant offset
    emulating calibration error.  tau is the contact-detection force
    threshold in newtons.
    """

    visual_sigma: tuple = (0.01, 0.01, math.radians(3.0))
    force_sigma: float = 0.005
    finger_pos_sigma: float = 0.0005
    tau: float = 0.05
    seed: int = 0
    visual_bias: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if any(s < 0 for s in self.visual_sigma):
            raise ValueError("visual sigmas must be non-negative")
        if self.force_sigma < 0 or self.finger_pos_sigma < 0:
            raise ValueError("tactile sigmas must be non-negative")
        if self.tau <= 0:
            raise ValueError("contact threshold tau must be positive")

    def zeroed(self) -> "NoiseSpec":
        """Copy with all noise and bias removed (tau and seed kept)."""
        return NoiseSpec((0.0, 0.0, 0.0), 0.0, 0.0, self.tau, self.seed, (0.0, 0.0, 0.0))


class OcclusionSchedule:
    """Sorted, non-overlapping half-open [t_start, t_end) occlusion intervals."""

    def __init__(self, intervals=()):
        ivals = [(float(a), float(b)) for a, b in intervals]
        for a, b in ivals:
            if b <= a:
                raise ValueError("occlusion intervals must have t_end > t_start")
        for (_, b0), (a1, _) in zip(ivals, ivals[1:]):
            if a1 < b0:
                raise ValueError("occlusion intervals must be sorted and non-overlapping")
        self.intervals = ivals

    def occluded(self, t: float) -> bool:
        for a, b in self.intervals:
            if a <= t < b:
                return True
        return False

    def total(self) -> float:
        return sum(b - a for a, b in self.intervals)

    @staticmethod
    def always() -> "OcclusionSchedule":
        return OcclusionSchedule([(0.0, math.inf)])


def _substream(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream,)))


def render_visual(gt: SimLog, noise: NoiseSpec, occ: OcclusionSchedule, rate: float):
    """Noisy camera stream at `rate` Hz: one sample per 1/rate s starting at t=0."""
    if rate <= 0:
        raise ValueError("rate must be positive")
    rng = _substream(noise.seed, 0)
    sig = np.asarray(noise.visual_sigma)
    bias = np.asarray(noise.visual_bias)
    n = int(math.floor(gt.t_end * rate + 1e-9)) + 1
    samples = []
    for k in range(n):
        t = k / rate
        eps = rng.standard_normal(3) * sig + bias
        p = gt.pose_at(t)
        pose = Pose2(p.x + eps[0], p.y + eps[1], wrap_angle(p.theta + eps[2]))
        samples.append(VisualSample(t=t, pose=pose, available=not occ.occluded(t)))
    return samples


def render_tactile(gt: SimLog, noise: NoiseSpec, rate: float):
    """Noisy tactile stream at `rate` Hz, starting at t = 1/rate.

    Per finger: force = true object-on-pusher force + noise, position = true
    finger center + noise, contact = (||noisy force|| >= tau).
    """
    if rate <= 0:
        raise ValueError("rate must be positive")
    rng = _substream(noise.seed, 1)
    nf = gt.n_fingers
    n = int(math.floor(gt.t_end * rate + 1e-9))
    samples = []
    for k in range(1, n + 1):
        t = k / rate
        seg = gt.segment_ending_at(t)
        fingers = []
        for j in range(nf):
            if seg is None:
                f_true = np.zeros(2)
                p_true = np.zeros(2)
            else:
                f_true = seg.force_world[j] if seg.active[j] else np.zeros(2)
                p_true = seg.centers_at(t)[j]
            f = f_true + rng.standard_normal(2) * noise.force_sigma
            p = p_true + rng.standard_normal(2) * noise.finger_pos_sigma
            fingers.append(FingerReading(force=f, position=p, contact=bool(np.hypot(f[0], f[1]) >= noise.tau)))
        samples.append(TactileSample(t=t, fingers=tuple(fingers)))
    return samples
