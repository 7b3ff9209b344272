"""Scenario configuration and ground-truth generation.

A scenario bundles everything needed for a reproducible run: shape, friction,
pusher parameters, a pushing script, sensor noise, an occlusion schedule, and
estimator settings.  Scenarios load from YAML (key-value tree mirroring the
Scenario fields) or from the builtin catalog.

Pushing scripts are generated segment by segment relative to the object's
current ground-truth pose, so pushes land on the intended faces regardless of
how far the object has drifted; the pusher re-positions between segments
while out of contact.  The standard procedure covers straight two-finger
pushes on all four faces, two diagonal corner pushes, two off-center
one-finger pushes, and ends with the pushers withdrawn and the object at
rest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np
import yaml

from .geom2d import Polygon, Pose2
from .pushing_physics import PusherScript, PusherState, ShapeModel, SimLog, simulate_push
from .sensor_sim import NoiseSpec, OcclusionSchedule
from .shapes import SHAPE_MASSES, make_polygon, surface_catalog

__all__ = ["Scenario", "builtin_scenario", "builtin_names", "build_ground_truth", "build_occlusion"]

_PARK = np.array([[1.0, 1.0], [1.0, 1.1]])


@dataclass
class Scenario:
    name: str = "custom"
    shape: object = "rect1"  # catalog name or vertex list
    mass: float | None = None
    surface: object = "plywood"  # catalog name or mu value
    mu_pusher: float = 0.25
    pusher_radius: float = 0.003125
    pusher_speed: float = 0.06
    pusher_spacing: float = 0.04
    approach_clearance: float = 0.012
    script: dict = field(default_factory=lambda: {"kind": "fig5", "tail": 2.0})
    sim_dt: float = 0.004
    x0: tuple = (0.0, 0.0, 0.0)
    noise: dict = field(default_factory=dict)
    seed: int = 0
    occlusion: object = "none"  # none | auto fraction dict | push-window dict | interval list
    rates: dict = field(default_factory=lambda: {"visual": 30.0, "tactile": 250.0, "estimator": 100.0})
    estimators: tuple = ("smoother", "ekf", "baseline")
    smoother: dict = field(default_factory=lambda: {"window": 200, "max_iters": 3})
    covariances: object = None  # None (defaults) or dict of matrices

    def shape_model(self) -> ShapeModel:
        poly = make_polygon(self.shape)
        mass = self.mass
        if mass is None:
            mass = SHAPE_MASSES.get(self.shape, 1.0) if isinstance(self.shape, str) else 1.0
        mu_s = surface_catalog[self.surface] if isinstance(self.surface, str) else float(self.surface)
        return ShapeModel.from_polygon(poly, self.mu_pusher, mu_s, mass)

    def noise_spec(self, seed: int | None = None) -> NoiseSpec:
        n = dict(self.noise)
        return NoiseSpec(
            visual_sigma=tuple(n.get("visual_sigma", (0.01, 0.01, math.radians(3.0)))),
            force_sigma=float(n.get("force_sigma", 0.005)),
            finger_pos_sigma=float(n.get("finger_pos_sigma", 0.0005)),
            tau=float(n.get("tau", 0.05)),
            seed=self.seed if seed is None else seed,
            visual_bias=tuple(n.get("visual_bias", (0.0, 0.0, 0.0))),
        )

    def x0_pose(self) -> Pose2:
        return Pose2(*self.x0)

    def with_seed(self, seed: int) -> "Scenario":
        d = self.to_dict()
        d["seed"] = int(seed)
        return Scenario.from_dict(d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["x0"] = list(self.x0)
        d["estimators"] = list(self.estimators)
        if isinstance(d["shape"], np.ndarray):
            d["shape"] = d["shape"].tolist()
        return d

    @staticmethod
    def from_dict(d: dict) -> "Scenario":
        d = dict(d)
        if "x0" in d:
            d["x0"] = tuple(d["x0"])
        if "estimators" in d:
            d["estimators"] = tuple(d["estimators"])
        return Scenario(**d)

    @staticmethod
    def from_yaml(path) -> "Scenario":
        with open(path) as fh:
            return Scenario.from_dict(yaml.safe_load(fh))

    def to_yaml(self, path):
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=True)


def builtin_names():
    return ["fig5-default", "fig5-zero-noise", "fig5-calibration", "occlusion-hold"]


def builtin_scenario(name: str) -> Scenario:
    """Catalog of standard scenarios used by the acceptance suite and CLI."""
    if name == "fig5-default":
        return Scenario(
            name=name,
            noise={
                "visual_sigma": [0.01, 0.01, math.radians(3.0)],
                "visual_bias": [0.01, 0.0, 0.0],
                "force_sigma": 0.005,
                "finger_pos_sigma": 0.0005,
                "tau": 0.05,
            },
            occlusion={"mode": "auto", "fraction": 0.30},
        )
    if name == "fig5-zero-noise":
        # frictionless pusher: sensed force direction coincides with the
        # contact normal, so the contact-point reconstruction is exact and
        # the streams are model-consistent to solver precision
        return Scenario(
            name=name,
            mu_pusher=0.0,
            noise={
                "visual_sigma": [0.0, 0.0, 0.0],
                "visual_bias": [0.0, 0.0, 0.0],
                "force_sigma": 0.0,
                "finger_pos_sigma": 0.0,
                "tau": 0.05,
            },
            occlusion="none",
        )
    if name == "fig5-calibration":
        s = builtin_scenario("fig5-default")
        s.name = name
        s.occlusion = "none"
        return s
    if name == "occlusion-hold":
        return Scenario(
            name=name,
            script={"kind": "straight", "depth": 0.62, "tail": 1.5},
            noise={
                "visual_sigma": [0.01, 0.01, math.radians(3.0)],
                "visual_bias": [0.01, 0.0, 0.0],
                "force_sigma": 0.005,
                "finger_pos_sigma": 0.0005,
                "tau": 0.05,
            },
            occlusion={"mode": "push-window", "start_after": 0.5, "duration": 10.0},
        )
    raise ValueError(f"unknown builtin scenario {name!r}; known: {builtin_names()}")


def load_scenario(spec) -> Scenario:
    """Scenario from a builtin name or a YAML file path."""
    if isinstance(spec, Scenario):
        return spec
    if isinstance(spec, str) and spec in builtin_names():
        return builtin_scenario(spec)
    return Scenario.from_yaml(spec)


# ---- pushing-script generation ---------------------------------------------


@dataclass
class _PushSegment:
    direction: tuple  # push direction, object frame at segment start
    offset: float  # TCP line offset perpendicular to the push direction
    fingers: int  # 1 or 2
    depth: float  # travel past first possible touch
    spacing: float | None = None


def _fig5_segments(depth: float) -> list:
    s2 = math.sqrt(0.5)
    return [
        _PushSegment((1, 0), 0.0, 2, depth),
        _PushSegment((-1, 0), 0.0, 2, depth),
        _PushSegment((0, 1), 0.0, 2, depth),
        _PushSegment((0, -1), 0.0, 2, depth),
        _PushSegment((s2, s2), 0.0, 2, 0.8 * depth, spacing=0.05),
        _PushSegment((-s2, -s2), 0.0, 2, 0.8 * depth, spacing=0.05),
        _PushSegment((1, 0), 0.018, 1, 0.7 * depth),
        _PushSegment((0, -1), -0.014, 1, 0.55 * depth),
    ]


def _script_segments(script: dict) -> list:
    kind = script.get("kind", "fig5")
    if kind == "fig5":
        return _fig5_segments(script.get("depth", 0.05))
    if kind == "straight":
        return [_PushSegment((1, 0), 0.0, 2, script.get("depth", 0.3))]
    raise ValueError(f"unknown script kind {kind!r}")


def _quantize_up(t: float, dt: float) -> float:
    return math.ceil(t / dt - 1e-9) * dt


def _segment_chunk(shape: ShapeModel, pose: Pose2, seg: _PushSegment, scn: Scenario) -> PusherScript:
    """One push chunk (approach + push + retreat) aimed at the current pose."""
    r = scn.pusher_radius
    speed = scn.pusher_speed
    dt = scn.sim_dt
    d_l = np.asarray(seg.direction, dtype=float)
    d_l /= np.linalg.norm(d_l)
    R = pose.rotation()
    d_w = R @ d_l
    t_w = np.array([-d_w[1], d_w[0]])
    verts_w = shape.polygon.vertices @ R.T + pose.xy
    extent = float(np.max((verts_w - pose.xy) @ (-d_w)))
    base = pose.xy + seg.offset * t_w - (extent + r + scn.approach_clearance) * d_w

    spacing = seg.spacing if seg.spacing is not None else scn.pusher_spacing
    if seg.fingers == 2:
        centers = np.stack([base + 0.5 * spacing * t_w, base - 0.5 * spacing * t_w])
        moving = np.array([True, True])
    else:
        centers = np.stack([base, _PARK[1]])
        moving = np.array([True, False])

    travel = scn.approach_clearance + seg.depth
    t_push = _quantize_up(travel / speed, dt)
    v_push = (travel / t_push) * d_w
    back = travel + 0.008
    t_back = _quantize_up(back / speed, dt)
    v_back = -(back / t_back) * d_w

    vel_push = np.where(moving[:, None], v_push[None, :], 0.0)
    vel_back = np.where(moving[:, None], v_back[None, :], 0.0)
    centers_mid = centers + vel_push * t_push
    waypoints = [
        (0.0, PusherState(centers, r, vel_push)),
        (t_push, PusherState(centers_mid, r, vel_back)),
    ]
    return PusherScript(waypoints, t_end=t_push + t_back)


def _rest_chunk(scn: Scenario, duration: float) -> PusherScript:
    dur = _quantize_up(max(duration, scn.sim_dt), scn.sim_dt)
    state = PusherState(_PARK.copy(), scn.pusher_radius, np.zeros((2, 2)))
    return PusherScript([(0.0, state)], t_end=dur)


def build_ground_truth(scn: Scenario) -> SimLog:
    """Simulate the scenario's full pushing procedure; deterministic."""
    shape = scn.shape_model()
    x = scn.x0_pose()
    dt = scn.sim_dt
    segments = []
    base_steps = 0

    def run_chunk(script):
        nonlocal x, base_steps
        log = simulate_push(shape, script, x, dt)
        offset = base_steps * dt
        for s in log.segments:
            s.t0 += offset
            s.t1 += offset
            segments.append(s)
        base_steps += int(round(script.t_end / dt))
        x = Pose2.from_array(log.segments[-1].x1)

    for seg in _script_segments(scn.script):
        run_chunk(_segment_chunk(shape, x, seg, scn))
    tail = scn.script.get("tail", 2.0)
    if tail > 0:
        run_chunk(_rest_chunk(scn, tail))
    return SimLog(segments, shape, scn.pusher_radius, dt, scn.x0_pose())


# ---- occlusion materialization ----------------------------------------------


def contact_intervals(log: SimLog, merge_gap: float = 0.1) -> list:
    """Maximal [t0, t1] intervals with any finger in contact."""
    out = []
    for seg in log.segments:
        if not seg.active.any():
            continue
        if out and seg.t0 - out[-1][1] <= merge_gap:
            out[-1][1] = seg.t1
        else:
            out.append([seg.t0, seg.t1])
    return [tuple(iv) for iv in out]


def build_occlusion(scn: Scenario, log: SimLog) -> OcclusionSchedule:
    spec = scn.occlusion
    if spec in (None, "none"):
        return OcclusionSchedule([])
    if isinstance(spec, (list, tuple)):
        return OcclusionSchedule(spec)
    mode = spec.get("mode")
    if mode == "auto":
        return _auto_occlusion(log, float(spec.get("fraction", 0.30)))
    if mode == "push-window":
        ivals = contact_intervals(log)
        if not ivals:
            raise ValueError("push-window occlusion needs a contact phase")
        t0 = ivals[0][0] + float(spec.get("start_after", 0.5))
        return OcclusionSchedule([(t0, t0 + float(spec.get("duration", 10.0)))])
    raise ValueError(f"unknown occlusion spec {spec!r}")


def _auto_occlusion(log: SimLog, fraction: float) -> OcclusionSchedule:
    """Occlusion windows centered on the contact-rich phases, ~fraction of T."""
    T = log.t_end
    target = fraction * T
    ivals = [list(iv) for iv in contact_intervals(log)]
    if not ivals:
        return OcclusionSchedule([(0.25 * T, 0.25 * T + target)])
    current = sum(b - a for a, b in ivals)
    if current > target:
        scale = target / current
        out = []
        for a, b in ivals:
            mid, half = 0.5 * (a + b), 0.5 * (b - a) * scale
            out.append((mid - half, mid + half))
        return OcclusionSchedule(out)
    widen = (target - current) / (2.0 * len(ivals))
    out = []
    for a, b in ivals:
        a2, b2 = max(a - widen, 0.0), min(b + widen, T)
        if out and a2 <= out[-1][1]:
            out[-1] = (out[-1][0], b2)
        else:
            out.append((a2, b2))
    return OcclusionSchedule(out)
