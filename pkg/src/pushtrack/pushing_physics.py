"""Quasi-static planar pushing under the ellipsoid limit-surface model.

The force-to-motion map follows the classic analytic pushing model: the
support friction wrench lies on an ellipsoid limit surface with semi-axes
(f_max, f_max, f_max * c) and the object twist is proportional to
(c^2 * Fx, c^2 * Fy, m) for the applied wrench (Fx, Fy, m).

The simulator advances on a fixed time grid.  Each step solves a small
implicit contact problem whose unknowns are the world contact forces, the
twist scale, and the end pose, with end-of-step conditions: contact
maintenance, stick/slide friction-cone complementarity, wrench magnitude on
the limit surface, and the first-order pose update itself.  Because the
conditions hold at the end state, the logged per-step (pose, twist, wrench)
triples satisfy the model equations to solver precision, which the
estimation layer relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations, product

import numpy as np

from .geom2d import Polygon, Pose2, Twist2, wrap_angle

__all__ = [
    "GRAVITY",
    "Wrench2",
    "ShapeModel",
    "PusherState",
    "PusherScript",
    "SimSegment",
    "SimLog",
    "SimulationError",
    "compute_c",
    "twist_from_wrench",
    "simulate_push",
]

GRAVITY = 9.81

# pusher speeds above this are no longer quasi-static
MAX_QUASISTATIC_SPEED = 0.1


class SimulationError(RuntimeError):
    """Raised when the contact solver cannot produce a consistent step."""


@dataclass(frozen=True)
class Wrench2:
    """Planar wrench: force (N) and moment (N*m) about the object frame origin."""

    fx: float
    fy: float
    m: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.fx, self.fy, self.m)):
            raise ValueError("wrench components must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.m])


def compute_c(poly: Polygon) -> float:
    """Limit-surface constant: mean distance of the support area to the centroid.

    c = (1/A) * integral of ||r|| dA over the polygon, r measured from the
    centroid, evaluated exactly per centroid-fan triangle in polar form.
    """
    centroid = poly.centroid()
    v = poly.vertices - centroid
    total = 0.0
    n = len(v)
    for i in range(n):
        total += _triangle_radial_integral(v[i], v[(i + 1) % n])
    return total / poly.area()


def _triangle_radial_integral(a, b) -> float:
    """Signed integral of ||r|| dA over the triangle (origin, a, b).

    In polar form the integral is (h^3 / 6) * [sec(phi) tan(phi) +
    ln(sec(phi) + tan(phi))] between the endpoint angles measured from the
    foot of the perpendicular, with h the origin-to-line distance.  The sign
    follows the orientation of (a, b) around the origin.
    """
    cross = a[0] * b[1] - a[1] * b[0]
    scale2 = max(a @ a, b @ b)
    if abs(cross) < 1e-18 * max(scale2, 1e-30):
        return 0.0
    e = b - a
    nrm = np.array([e[1], -e[0]])
    nrm /= np.linalg.norm(nrm)
    h = float(nrm @ a)
    if h < 0.0:
        nrm = -nrm
        h = -h
    alpha = math.atan2(nrm[1], nrm[0])
    phi_a = wrap_angle(math.atan2(a[1], a[0]) - alpha)
    phi_b = wrap_angle(math.atan2(b[1], b[0]) - alpha)

    def F(phi):
        sec = 1.0 / math.cos(phi)
        tan = math.tan(phi)
        return sec * tan + math.log(sec + tan)

    return (h ** 3 / 6.0) * (F(phi_b) - F(phi_a))


@dataclass(frozen=True)
class ShapeModel:
    """Pushed-object model: support polygon (centroid at origin) and friction."""

    polygon: Polygon
    c: float
    mu_pusher: float
    mu_surface: float
    mass: float

    def __post_init__(self):
        if self.c <= 0.0:
            raise ValueError("limit-surface constant c must be positive")
        if self.mu_pusher < 0.0:
            raise ValueError("mu_pusher must be non-negative")
        if self.mu_surface <= 0.0:
            raise ValueError("mu_surface must be positive")
        if self.mass <= 0.0:
            raise ValueError("mass must be positive")
        if np.linalg.norm(self.polygon.centroid()) > 1e-9:
            raise ValueError("shape polygon centroid must be at the origin")

    @staticmethod
    def from_polygon(polygon: Polygon, mu_pusher: float, mu_surface: float, mass: float) -> "ShapeModel":
        poly = polygon.recentered()
        return ShapeModel(poly, compute_c(poly), mu_pusher, mu_surface, mass)

    @property
    def f_max(self) -> float:
        """Largest support friction force magnitude (N)."""
        return self.mu_surface * self.mass * GRAVITY

    @property
    def m_max(self) -> float:
        """Largest support friction moment magnitude (N*m)."""
        return self.f_max * self.c


def twist_from_wrench(shape: ShapeModel, w: Wrench2) -> Twist2:
    """Unit twist direction (c^2 fx, c^2 fy, m) for a wrench in the object frame."""
    v = np.array([shape.c ** 2 * w.fx, shape.c ** 2 * w.fy, w.m])
    n = np.linalg.norm(v)
    if n < 1e-15:
        raise ValueError("zero wrench has no motion direction")
    v /= n
    return Twist2(v[0], v[1], v[2])


@dataclass(frozen=True)
class PusherState:
    """All pusher fingers at one instant: world centers, shared radius, velocities."""

    centers: np.ndarray  # (nf, 2)
    radius: float
    velocities: np.ndarray  # (nf, 2)

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.centers, dtype=float))
        v = np.atleast_2d(np.asarray(self.velocities, dtype=float))
        if c.shape != v.shape or c.shape[1] != 2:
            raise ValueError("centers and velocities must both be (nf, 2)")
        if self.radius <= 0.0:
            raise ValueError("pusher radius must be positive")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "velocities", v)

    @property
    def n_fingers(self) -> int:
        return len(self.centers)


class PusherScript:
    """Piecewise-constant-velocity finger trajectory.

    Waypoints are (t, PusherState); finger centers move with the waypoint
    velocities until the next waypoint.  Waypoint positions may jump between
    segments (re-positioning while out of contact).
    """

    def __init__(self, waypoints, t_end: float):
        if not waypoints:
            raise ValueError("script needs at least one waypoint")
        times = [t for t, _ in waypoints]
        if any(t1 <= t0 for t0, t1 in zip(times, times[1:])):
            raise ValueError("waypoint times must be strictly increasing")
        if abs(times[0]) > 1e-12:
            raise ValueError("script must start at t = 0")
        if t_end < times[-1] - 1e-12:
            raise ValueError("t_end must not precede the last waypoint")
        nf = waypoints[0][1].n_fingers
        if any(s.n_fingers != nf for _, s in waypoints):
            raise ValueError("finger count must be constant over the script")
        self.waypoints = list(waypoints)
        self.t_end = float(t_end)
        self.radius = waypoints[0][1].radius
        self.n_fingers = nf
        self._times = np.array(times)

    def max_speed(self) -> float:
        return max(float(np.max(np.linalg.norm(s.velocities, axis=1))) for _, s in self.waypoints)

    def state_at(self, t: float):
        """(centers, velocities) at time t."""
        i = int(np.searchsorted(self._times, t + 1e-12) - 1)
        i = max(i, 0)
        t0, s = self.waypoints[i]
        return s.centers + s.velocities * (t - t0), s.velocities


@dataclass
class SimSegment:
    """One integration segment with model-consistent start/end states."""

    t0: float
    t1: float
    x0: np.ndarray  # (3,) pose at t0
    x1: np.ndarray  # (3,) pose at t1
    twist: np.ndarray  # (3,) in the frame of x0
    active: np.ndarray  # (nf,) bool
    force_world: np.ndarray  # (nf, 2) object-on-pusher force
    contact_point: np.ndarray  # (nf, 2) world contact points (end state)
    centers0: np.ndarray  # (nf, 2) finger centers at t0
    centers1: np.ndarray  # (nf, 2) finger centers at t1
    wrench_obj: np.ndarray  # (3,) applied wrench, frame of x0, moment about x0

    @property
    def dt(self) -> float:
        return self.t1 - self.t0

    def centers_at(self, t: float) -> np.ndarray:
        if self.dt <= 0:
            return self.centers1
        frac = (t - self.t0) / self.dt
        return self.centers0 + (self.centers1 - self.centers0) * frac


class SimLog:
    """Simulation output: exact piecewise-twist trajectory plus contact data."""

    def __init__(self, segments, shape: ShapeModel, radius: float, dt: float, x0: Pose2):
        self.segments = segments
        self.shape = shape
        self.radius = radius
        self.dt = dt
        self.x0 = x0
        self._t0s = np.array([s.t0 for s in segments]) if segments else np.zeros(0)

    @property
    def t_end(self) -> float:
        return self.segments[-1].t1 if self.segments else 0.0

    @property
    def n_fingers(self) -> int:
        return self.segments[0].active.shape[0] if self.segments else 0

    def pose_at(self, t: float) -> Pose2:
        """Exact pose at any time in [0, t_end] (twists are constant per segment)."""
        if not self.segments:
            return self.x0
        if t <= self.segments[0].t0:
            return Pose2.from_array(self.segments[0].x0)
        if t >= self.segments[-1].t1 - 1e-12:
            return Pose2.from_array(self.segments[-1].x1)
        i = int(np.searchsorted(self._t0s, t + 1e-12) - 1)
        i = max(i, 0)
        seg = self.segments[i]
        if t >= seg.t1 - 1e-12:
            return Pose2.from_array(seg.x1)
        return Pose2.from_array(_step_pose(seg.x0, seg.twist, t - seg.t0))

    def segment_ending_at(self, t: float):
        """Segment whose end time is t (the force felt 'now'), or None at t <= 0."""
        if not self.segments or t <= self.segments[0].t0 + 1e-12:
            return None
        i = int(np.searchsorted(self._t0s, t - 1e-12) - 1)
        i = min(max(i, 0), len(self.segments) - 1)
        return self.segments[i]

    def trajectory(self):
        """Per-segment (Pose2, per-finger reaction Wrench2, per-finger contact point)."""
        out = []
        for seg in self.segments:
            pose = Pose2.from_array(seg.x1)
            wrenches = []
            for j in range(seg.active.shape[0]):
                f = seg.force_world[j]
                arm = seg.contact_point[j] - seg.x1[:2]
                mom = float(arm[0] * f[1] - arm[1] * f[0]) if seg.active[j] else 0.0
                wrenches.append(Wrench2(f[0], f[1], mom))
            out.append((pose, wrenches, seg.contact_point.copy()))
        return out


def _rot(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def _step_pose(x: np.ndarray, twist: np.ndarray, h: float) -> np.ndarray:
    """First-order pose update with the twist in the frame of x."""
    c, s = math.cos(x[2]), math.sin(x[2])
    return np.array(
        [
            x[0] + (c * twist[0] - s * twist[1]) * h,
            x[1] + (s * twist[0] + c * twist[1]) * h,
            wrap_angle(x[2] + twist[2] * h),
        ]
    )


def _gap_full(poly: Polygon, x, center, radius):
    """Signed gap, world contact point, outward normal, supporting feature.

    The normal points from the object boundary toward the circle center; the
    gap is negative when the circle overlaps the object.
    """
    c, s = math.cos(x[2]), math.sin(x[2])
    dx, dy = center[0] - x[0], center[1] - x[1]
    q_l = np.array([c * dx + s * dy, -s * dx + c * dy])
    point_l, dist, feat_normal, edge_idx, t = poly.closest_point_local(q_l)
    if dist > 1e-12:
        n_l = (q_l - point_l) / dist
        if float(n_l @ feat_normal) < 0.0:  # circle center on the inside
            n_l = -n_l
            dist = -dist
    else:
        n_l = feat_normal
    if t <= 1e-12:
        feature = ("vertex", edge_idx)
    elif t >= 1.0 - 1e-12:
        feature = ("vertex", (edge_idx + 1) % poly.n_vertices)
    else:
        feature = ("edge", edge_idx)
    R = np.array([[c, -s], [s, c]])
    return dist - radius, R @ point_l + x[:2], R @ n_l, feature


def _gap_on_feature(poly: Polygon, feature, x, center, radius):
    """Closed-form gap/point/normal against one cached edge or vertex feature."""
    c, s = math.cos(x[2]), math.sin(x[2])
    dx, dy = center[0] - x[0], center[1] - x[1]
    qx, qy = c * dx + s * dy, -s * dx + c * dy
    kind, idx = feature
    if kind == "edge":
        v0 = poly._v0[idx]
        n = poly._normals[idx]
        phi = (qx - v0[0]) * n[0] + (qy - v0[1]) * n[1]
        ax, ay = qx - phi * n[0], qy - phi * n[1]
        nx, ny = n[0], n[1]
        gap = phi - radius
    else:
        v = poly.vertices[idx]
        ux, uy = qx - v[0], qy - v[1]
        d = math.hypot(ux, uy)
        if d < 1e-15:
            raise SimulationError("circle center coincides with a polygon vertex")
        nx, ny = ux / d, uy / d
        ax, ay = v[0], v[1]
        gap = d - radius
    point_w = np.array([c * ax - s * ay + x[0], s * ax + c * ay + x[1]])
    normal_w = np.array([c * nx - s * ny, s * nx + c * ny])
    return gap, point_w, normal_w


class _QuasiStaticStepper:
    """Per-segment implicit contact solve for simulate_push."""

    def __init__(self, shape: ShapeModel, radius: float):
        self.shape = shape
        self.radius = radius
        self.fscale = shape.f_max
        self._warm = None  # (subset, modes, forces, k, twist)

    def solve_segment(self, x0, t0, centers0, vels, h, depth=0):
        """Advance [t0, t0+h]; returns a list of SimSegment (bisection may split)."""
        if depth > 30:
            raise SimulationError(f"contact solve failed to converge near t={t0:.6f}")
        centers1 = centers0 + vels * h
        nf = len(centers0)

        # candidate contacts: fingers that would penetrate if the object stayed put
        candidates = [
            j
            for j in range(nf)
            if _gap_full(self.shape.polygon, x0, centers1[j], self.radius)[0] < 1e-12
        ]

        if not candidates:
            seg = SimSegment(
                t0=t0, t1=t0 + h, x0=x0.copy(), x1=x0.copy(), twist=np.zeros(3),
                active=np.zeros(nf, bool), force_world=np.zeros((nf, 2)),
                contact_point=np.full((nf, 2), np.nan), centers0=centers0.copy(),
                centers1=centers1, wrench_obj=np.zeros(3),
            )
            self._warm = None
            return [seg]

        solution = self._solve_contacts(x0, centers0, centers1, h, candidates, nf)
        if solution is None:
            half = h / 2.0
            left = self.solve_segment(x0, t0, centers0, vels, half, depth + 1)
            right = self.solve_segment(
                left[-1].x1, t0 + half, centers0 + vels * half, vels, half, depth + 1
            )
            return left + right

        return [
            SimSegment(
                t0=t0, t1=t0 + h, x0=x0.copy(), x1=solution["x1"],
                twist=solution["twist"], active=solution["active"],
                force_world=-solution["f_app"], contact_point=solution["contact_pts"],
                centers0=centers0.copy(), centers1=centers1,
                wrench_obj=solution["wrench_obj"],
            )
        ]

    def _solve_contacts(self, x0, centers0, centers1, h, candidates, nf):
        mu = self.shape.mu_pusher
        per_contact_modes = ("push",) if mu == 0.0 else ("stick", "slide+", "slide-")

        start_geom = {
            j: _gap_full(self.shape.polygon, x0, centers0[j], self.radius)
            for j in candidates
        }

        combos = []
        if self._warm is not None and set(self._warm[0]) <= set(candidates):
            combos.append((self._warm[0], self._warm[1]))
        for size in range(len(candidates), 0, -1):
            for subset in combinations(candidates, size):
                for modes in product(per_contact_modes, repeat=size):
                    if not combos or (subset, modes) != combos[0]:
                        combos.append((subset, modes))

        for subset, modes in combos:
            result = self._solve_mode_combo(x0, centers1, h, subset, modes, start_geom, candidates)
            if result is not None:
                self._warm = (subset, modes, result["f_app"], result["k"], result["twist"])
                return result
        self._warm = None
        return None

    def _solve_mode_combo(self, x0, centers1, h, subset, modes, start_geom, candidates):
        poly = self.shape.polygon
        nc = len(subset)
        n_unknowns = 2 * nc + 4  # forces, twist scale, end pose

        # initial guess, warm-started when the mode combo repeats
        z = np.zeros(n_unknowns)
        warm = self._warm
        if warm is not None and warm[0] == subset and warm[1] == modes:
            for i, j in enumerate(subset):
                z[2 * i: 2 * i + 2] = warm[2][j]
            z[2 * nc] = warm[3]
            z[2 * nc + 1:] = _step_pose(x0, warm[4], h)
        else:
            for i, j in enumerate(subset):
                z[2 * i: 2 * i + 2] = -0.3 * self.fscale * start_geom[j][2]
            z[2 * nc] = 0.05
            z[2 * nc + 1:] = x0
        # stick anchors: material points advected from the start closest points
        anchors = {j: start_geom[j][1] for j in subset}
        features = {j: start_geom[j][3] for j in subset}

        for _refresh in range(4):
            def residual(zz):
                return self._mode_residual(zz, x0, centers1, h, subset, modes, anchors, features)

            z, ok = _damped_newton(residual, z, self.fscale, max_iter=60, tol=1e-11)
            if not ok:
                return None
            # the supporting feature may switch as the object moves; re-solve
            # against the feature seen by a full query at the end pose
            x1 = z[2 * nc + 1:]
            stale = []
            for j in subset:
                feat_now = _gap_full(poly, x1, centers1[j], self.radius)[3]
                if feat_now != features[j]:
                    stale.append((j, feat_now))
            if not stale:
                return self._finalize(z, x0, centers1, h, subset, modes, anchors, features, candidates)
            for j, feat in stale:
                features[j] = feat
        return None

    def _mode_residual(self, z, x0, centers1, h, subset, modes, anchors, features):
        shape = self.shape
        poly = shape.polygon
        mu = shape.mu_pusher
        r = self.radius
        nc = len(subset)
        f = z[: 2 * nc].reshape(nc, 2)
        k = z[2 * nc]
        x1 = z[2 * nc + 1:]

        res = np.empty(2 * nc + 4)
        F = f.sum(axis=0)
        m = 0.0
        lenscale = r
        for i, j in enumerate(subset):
            gap, A, n_hat = _gap_on_feature(poly, features[j], x1, centers1[j], r)
            t_hat = np.array([-n_hat[1], n_hat[0]])
            m += (A[0] - x0[0]) * f[i, 1] - (A[1] - x0[1]) * f[i, 0]
            mode = modes[i]
            if mode == "stick":
                adv = _advect(x0, x1, anchors[j])
                target = centers1[j] - r * n_hat
                res[2 * i] = adv[0] - target[0]
                res[2 * i + 1] = adv[1] - target[1]
            elif mode == "push":
                res[2 * i] = gap
                res[2 * i + 1] = float(f[i] @ t_hat) * (lenscale / self.fscale)
            else:
                sigma = 1.0 if mode == "slide+" else -1.0
                a_n = -float(f[i] @ n_hat)
                b_t = float(f[i] @ t_hat)
                res[2 * i] = gap
                res[2 * i + 1] = (b_t - sigma * mu * a_n) * (lenscale / self.fscale)

        c0, s0 = math.cos(x0[2]), math.sin(x0[2])
        F_obj = np.array([c0 * F[0] + s0 * F[1], -s0 * F[0] + c0 * F[1]])
        L = np.array([shape.c ** 2 * F_obj[0], shape.c ** 2 * F_obj[1], m])
        nL = math.sqrt(L[0] ** 2 + L[1] ** 2 + L[2] ** 2)
        Lscale = shape.c ** 2 * self.fscale
        if nL > 1e-12 * Lscale:
            twist = (k / nL) * L
        else:
            twist = np.zeros(3)
        x1_pred = _step_pose(x0, twist, h)
        res[2 * nc] = (
            (F_obj[0] ** 2 + F_obj[1] ** 2) / shape.f_max ** 2
            + m ** 2 / shape.m_max ** 2
            - 1.0
        ) * lenscale
        res[2 * nc + 1] = x1[0] - x1_pred[0]
        res[2 * nc + 2] = x1[1] - x1_pred[1]
        res[2 * nc + 3] = wrap_angle(x1[2] - x1_pred[2]) * lenscale
        return res

    def _finalize(self, z, x0, centers1, h, subset, modes, anchors, features, candidates):
        """Validate a converged solve; returns the accepted step or None."""
        shape = self.shape
        poly = shape.polygon
        mu = shape.mu_pusher
        r = self.radius
        nc = len(subset)
        nf = len(centers1)
        f = z[: 2 * nc].reshape(nc, 2)
        k = z[2 * nc]

        if k < -1e-10:
            return None
        k = max(k, 0.0)

        # recompute the wrench/twist pair exactly as logged
        F = f.sum(axis=0)
        x1_unk = z[2 * nc + 1:]
        m = 0.0
        geom = []
        for i, j in enumerate(subset):
            gap, A, n_hat = _gap_on_feature(poly, features[j], x1_unk, centers1[j], r)
            geom.append((gap, A, n_hat))
            m += (A[0] - x0[0]) * f[i, 1] - (A[1] - x0[1]) * f[i, 0]
        c0, s0 = math.cos(x0[2]), math.sin(x0[2])
        F_obj = np.array([c0 * F[0] + s0 * F[1], -s0 * F[0] + c0 * F[1]])
        wrench_obj = np.array([F_obj[0], F_obj[1], m])
        L = np.array([shape.c ** 2 * F_obj[0], shape.c ** 2 * F_obj[1], m])
        nL = np.linalg.norm(L)
        twist = (k / nL) * L if nL > 0 else np.zeros(3)
        x1 = _step_pose(x0, twist, h)

        f_app = np.zeros((nf, 2))
        contact_pts = np.full((nf, 2), np.nan)
        active = np.zeros(nf, bool)
        for i, j in enumerate(subset):
            gap, A, n_hat = geom[i]
            # supporting feature must agree with a full query at the end pose
            gap_chk, A_chk, n_chk, feat_chk = _gap_full(poly, x1, centers1[j], r)
            if abs(gap_chk - gap) > 1e-9:
                return None
            t_hat = np.array([-n_hat[1], n_hat[0]])
            a_n = -float(f[i] @ n_hat)
            b_t = float(f[i] @ t_hat)
            if a_n < -1e-9 * self.fscale:
                return None
            mode = modes[i]
            if mode == "stick":
                if abs(b_t) > mu * max(a_n, 0.0) * (1.0 + 1e-8) + 1e-12 * self.fscale:
                    return None
            elif mode in ("slide+", "slide-"):
                sigma = 1.0 if mode == "slide+" else -1.0
                adv = _advect(x0, x1, anchors[j])
                s_rel = float((adv - (centers1[j] - r * n_hat)) @ t_hat)
                if sigma * s_rel > 1e-10:
                    return None
            f_app[j] = f[i]
            contact_pts[j] = A_chk
            active[j] = True

        # contacts left out of the subset must genuinely separate
        for j in candidates:
            if j not in subset:
                if _gap_full(poly, x1, centers1[j], r)[0] < -1e-9:
                    return None

        return {
            "x1": x1, "twist": twist, "f_app": f_app, "contact_pts": contact_pts,
            "active": active, "wrench_obj": wrench_obj, "k": k,
        }


def _advect(x0, x1, point_world):
    """Where the object material point at `point_world` (state x0) ends up at x1."""
    c0, s0 = math.cos(x0[2]), math.sin(x0[2])
    c1, s1 = math.cos(x1[2]), math.sin(x1[2])
    dx, dy = point_world[0] - x0[0], point_world[1] - x0[1]
    lx, ly = c0 * dx + s0 * dy, -s0 * dx + c0 * dy
    return np.array([c1 * lx - s1 * ly + x1[0], s1 * lx + c1 * ly + x1[1]])


def _damped_newton(residual, z0, fscale, max_iter=60, tol=1e-11):
    """Small dense Newton with finite-difference Jacobians and step halving."""
    z = z0.copy()
    r = residual(z)
    rn = np.max(np.abs(r))
    n = len(z)
    steps = np.empty(n)
    steps[: n - 4] = 1e-6 * fscale
    steps[n - 4] = 1e-7  # twist scale
    steps[n - 3:] = 1e-8  # end pose
    for _ in range(max_iter):
        if rn < tol:
            return z, True
        J = np.empty((len(r), n))
        for i in range(n):
            dz = steps[i]
            zp = z.copy(); zp[i] += dz
            zm = z.copy(); zm[i] -= dz
            J[:, i] = (residual(zp) - residual(zm)) / (2.0 * dz)
        try:
            step = np.linalg.lstsq(J, -r, rcond=None)[0]
        except np.linalg.LinAlgError:
            return z, False
        if not np.all(np.isfinite(step)):
            return z, False
        alpha = 1.0
        improved = False
        for _ in range(10):
            z_new = z + alpha * step
            r_new = residual(z_new)
            rn_new = np.max(np.abs(r_new))
            if rn_new < rn:
                z, r, rn = z_new, r_new, rn_new
                improved = True
                break
            alpha *= 0.5
        if not improved:
            return z, rn < tol
    return z, rn < tol


def simulate_push(shape: ShapeModel, pusher_script: PusherScript, x0: Pose2, dt: float) -> SimLog:
    """Ground-truth pushing simulation on a fixed time grid.

    Raises ValueError for non-quasi-static scripts or dt <= 0, and
    SimulationError if a pusher starts inside the object or a step cannot be
    resolved.  When no finger is in contact the object does not move.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if pusher_script.max_speed() > MAX_QUASISTATIC_SPEED + 1e-12:
        raise ValueError(
            f"pusher speed exceeds quasi-static limit {MAX_QUASISTATIC_SPEED} m/s"
        )
    for t_wp, _ in pusher_script.waypoints:
        if abs(t_wp / dt - round(t_wp / dt)) > 1e-6:
            raise ValueError("script waypoint times must align to the dt grid")

    x = np.array(x0.as_array())
    centers, _ = pusher_script.state_at(0.0)
    for j in range(pusher_script.n_fingers):
        gap = _gap_full(shape.polygon, x, centers[j], pusher_script.radius)[0]
        if gap < -1e-9:
            raise SimulationError(f"pusher finger {j} starts inside the object")

    stepper = _QuasiStaticStepper(shape, pusher_script.radius)
    n_steps = int(round(pusher_script.t_end / dt))
    segments = []
    for kstep in range(n_steps):
        t0 = kstep * dt
        centers0, vels = pusher_script.state_at(t0)
        segments.extend(stepper.solve_segment(x, t0, centers0, vels, dt))
        x = segments[-1].x1
    return SimLog(segments, shape, pusher_script.radius, dt, x0)
