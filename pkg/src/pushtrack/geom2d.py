"""Planar geometry primitives: SE(2) poses, polygons, closest-point queries.

Angles are always kept in the half-open interval [-pi, pi).  Polygons are
simple, counter-clockwise vertex lists in meters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Pose2",
    "Twist2",
    "Polygon",
    "wrap_angle",
    "pose_diff",
    "transform_point",
    "closest_point_on_polygon",
]

_TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap an angle into [-pi, pi).

    Raises ValueError on non-finite input.
    """
    if not math.isfinite(a):
        raise ValueError(f"angle must be finite, got {a!r}")
    return (a + math.pi) % _TWO_PI - math.pi


def wrap_angle_array(a):
    """Vectorized wrap into [-pi, pi)."""
    a = np.asarray(a, dtype=float)
    return (a + math.pi) % _TWO_PI - math.pi


@dataclass(frozen=True)
class Pose2:
    """Planar pose (x, y, theta); theta normalized to [-pi, pi)."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("pose translation must be finite")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    @staticmethod
    def from_array(v) -> "Pose2":
        return Pose2(float(v[0]), float(v[1]), float(v[2]))

    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s], [s, c]])

    def compose(self, other: "Pose2") -> "Pose2":
        """this * other: apply `other` in this pose's frame."""
        p = self.rotation() @ other.xy + self.xy
        return Pose2(p[0], p[1], self.theta + other.theta)

    def inverse(self) -> "Pose2":
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2(-(c * self.x + s * self.y), -(-s * self.x + c * self.y), -self.theta)


@dataclass(frozen=True)
class Twist2:
    """Planar velocity (vx, vy, omega)."""

    vx: float
    vy: float
    omega: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.vx, self.vy, self.omega)):
            raise ValueError("twist components must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.vx, self.vy, self.omega])


def pose_diff(a: Pose2, b: Pose2) -> np.ndarray:
    """Componentwise difference a - b with the angle wrapped."""
    return np.array([a.x - b.x, a.y - b.y, wrap_angle(a.theta - b.theta)])


def transform_point(pose: Pose2, p_local) -> np.ndarray:
    """Map a point from the pose's local frame to the world frame."""
    p_local = np.asarray(p_local, dtype=float)
    return pose.rotation() @ p_local + pose.xy


class Polygon:
    """Simple CCW polygon with precomputed edge data for closest-point queries.

    Vertices are in meters.  Construction rejects polygons with fewer than
    3 vertices, non-positive signed area (wrong winding or degenerate), and
    self-intersections.
    """

    def __init__(self, vertices):
        v = np.asarray(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise ValueError("polygon needs an (n>=3, 2) vertex array")
        if not np.all(np.isfinite(v)):
            raise ValueError("polygon vertices must be finite")
        area2 = _signed_area2(v)
        if area2 <= 1e-16:
            raise ValueError("polygon must be counter-clockwise with positive area")
        if _self_intersects(v):
            raise ValueError("polygon must be simple (non-self-intersecting)")
        self.vertices = v
        self._v0 = v
        self._v1 = np.roll(v, -1, axis=0)
        self._edges = self._v1 - self._v0
        self._edge_len2 = np.einsum("ij,ij->i", self._edges, self._edges)
        if np.any(self._edge_len2 < 1e-24):
            raise ValueError("polygon has a zero-length edge")
        # outward normals for CCW winding: rotate edge direction by -90 deg
        n = np.stack([self._edges[:, 1], -self._edges[:, 0]], axis=1)
        self._normals = n / np.linalg.norm(n, axis=1, keepdims=True)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def area(self) -> float:
        return 0.5 * _signed_area2(self.vertices)

    def centroid(self) -> np.ndarray:
        v0, v1 = self._v0, self._v1
        cr = v0[:, 0] * v1[:, 1] - v1[:, 0] * v0[:, 1]
        return (v0 + v1).T @ cr / (3.0 * _signed_area2(self.vertices))

    def recentered(self) -> "Polygon":
        """Copy with the centroid shifted to the origin."""
        return Polygon(self.vertices - self.centroid())

    def scaled(self, s: float) -> "Polygon":
        return Polygon(self.vertices * float(s))

    def contains(self, q) -> bool:
        """Even-odd point-in-polygon test; boundary points count as inside."""
        q = np.asarray(q, dtype=float)
        v0, v1 = self._v0, self._v1
        inside = False
        for (x0, y0), (x1, y1) in zip(v0, v1):
            if (y0 > q[1]) != (y1 > q[1]):
                xc = x0 + (q[1] - y0) * (x1 - x0) / (y1 - y0)
                if q[0] < xc:
                    inside = not inside
        return inside or self.closest_point_local(q)[1] < 1e-12

    def closest_point_local(self, q):
        """Closest boundary point to q in the polygon's own frame.

        Returns (point, distance, outward_normal, edge_index, t) where t is
        the normalized parameter along the supporting edge.  Ties between
        equidistant edges go to the lowest edge index; a closest point at a
        vertex gets the normalized bisector of the adjacent edge normals.
        """
        q = np.asarray(q, dtype=float)
        d = q[None, :] - self._v0
        t = np.einsum("ij,ij->i", d, self._edges) / self._edge_len2
        t = np.clip(t, 0.0, 1.0)
        proj = self._v0 + t[:, None] * self._edges
        dist2 = np.einsum("ij,ij->i", q[None, :] - proj, q[None, :] - proj)
        dmin = dist2.min()
        # tolerance keeps the tie-break deterministic under float noise
        idx = int(np.flatnonzero(dist2 <= dmin + 1e-24)[0])
        point = proj[idx]
        dist = math.sqrt(dist2[idx])
        normal, _ = self._feature_normal(idx, t[idx])
        return point, dist, normal, idx, float(t[idx])

    def _feature_normal(self, edge_idx: int, t: float):
        """Outward normal of the supporting feature (edge or vertex bisector)."""
        n = self.n_vertices
        eps = 1e-12
        if t <= eps:
            prev = (edge_idx - 1) % n
            bis = self._normals[prev] + self._normals[edge_idx]
            return bis / np.linalg.norm(bis), ("vertex", edge_idx)
        if t >= 1.0 - eps:
            nxt = (edge_idx + 1) % n
            bis = self._normals[edge_idx] + self._normals[nxt]
            return bis / np.linalg.norm(bis), ("vertex", nxt)
        return self._normals[edge_idx], ("edge", edge_idx)

    def closest_points_local_batch(self, Q):
        """Vectorized closest-point query for an (m, 2) array of points.

        Returns (points (m,2), distances (m,), edge_idx (m,), t (m,)).
        Normals are not bisector-corrected here; use closest_point_local when
        the vertex-case normal matters.
        """
        Q = np.asarray(Q, dtype=float)
        d = Q[:, None, :] - self._v0[None, :, :]
        t = np.einsum("mij,ij->mi", d, self._edges) / self._edge_len2
        t = np.clip(t, 0.0, 1.0)
        proj = self._v0[None, :, :] + t[..., None] * self._edges[None, :, :]
        diff = Q[:, None, :] - proj
        dist2 = np.einsum("mij,mij->mi", diff, diff)
        idx = np.argmin(dist2, axis=1)
        rows = np.arange(len(Q))
        return proj[rows, idx], np.sqrt(dist2[rows, idx]), idx, t[rows, idx]


def closest_point_on_polygon(poly: Polygon, pose: Pose2, q):
    """Closest point on the world-posed polygon boundary to world point q.

    Returns (point, distance, outward_normal), all in the world frame.
    Interior queries are allowed and return the nearest boundary point with
    its positive distance; sign semantics belong to the caller.
    """
    q = np.asarray(q, dtype=float)
    if not np.all(np.isfinite(q)):
        raise ValueError("query point must be finite")
    R = pose.rotation()
    q_local = R.T @ (q - pose.xy)
    point_l, dist, normal_l, _, _ = poly.closest_point_local(q_local)
    return R @ point_l + pose.xy, dist, R @ normal_l


def perp(v):
    """Rotate a 2-vector by +90 degrees."""
    v = np.asarray(v, dtype=float)
    return np.array([-v[1], v[0]])


def _signed_area2(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _self_intersects(v: np.ndarray) -> bool:
    """O(n^2) segment intersection test over non-adjacent edge pairs."""
    n = len(v)
    segs = [(v[i], v[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            if _segments_cross(*segs[i], *segs[j]):
                return True
    return False


def _segments_cross(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(p3, p4, p1)
    d2 = orient(p3, p4, p2)
    d3 = orient(p1, p2, p3)
    d4 = orient(p1, p2, p4)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))
