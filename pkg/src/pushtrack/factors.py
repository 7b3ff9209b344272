"""Residuals and Jacobians for the four cost terms of the pose smoother.

Four factor kinds connect the pose states:

* M (motion): the finite-difference twist between consecutive poses must be
  parallel to the limit-surface direction (c^2 Fx, c^2 Fy, m) of the sensed
  wrench.  Implemented as the 3-D cross product of the two vectors, which is
  algebraically equivalent to the classic ratio form where that form is
  defined, but stays finite in pure translation (omega = 0) and for centered
  pushes (m = 0).  The cross product is also invariant to the overall sign of
  the wrench, so the sensed reaction force can be used directly.
* C (contact): sensed contact point B = finger_position - radius * f_hat
  (f_hat = unit sensed force) must lie on the object boundary; the residual
  is closest_boundary_point(B) - B expressed in the contact frame (axes along
  the sensed force and its perpendicular).
* V (visual): pose minus camera pose, angle wrapped.
* S (stationary/anchor): pose minus previous pose (or a fixed target), angle
  wrapped.

Conventions for M, shared with the simulator: the twist is the finite
difference of the two poses expressed in the frame of the earlier pose; the
wrench is expressed in the same frame with its moment taken about the earlier
pose's position.
"""

from __future__ import annotations

import math

import numpy as np

from .geom2d import Polygon, Pose2, pose_diff, wrap_angle, wrap_angle_array
from .pushing_physics import ShapeModel, Wrench2

__all__ = [
    "motion_residual",
    "contact_residual",
    "visual_residual",
    "prior_residual",
    "Factor",
    "VisualFactor",
    "PriorFactor",
    "AnchorFactor",
    "ContactFactor",
    "MotionFactor",
    "jacobian",
    "finite_difference_jacobian",
]

_J90 = np.array([[0.0, -1.0], [1.0, 0.0]])


def _rotm(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def _skew3(a) -> np.ndarray:
    return np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])


def motion_residual(x_prev: Pose2, x_curr: Pose2, wrench: Wrench2, c: float, dt: float) -> np.ndarray:
    """Cross product of the finite-difference twist with (c^2 fx, c^2 fy, m).

    `wrench` must already be in the frame of x_prev with moment about x_prev.
    Zero iff the twist is parallel (or anti-parallel) to the limit-surface
    direction; zero twist with zero wrench also gives zero.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    R = _rotm(-x_prev.theta)
    v = R @ (x_curr.xy - x_prev.xy) / dt
    om = wrap_angle(x_curr.theta - x_prev.theta) / dt
    twist = np.array([v[0], v[1], om])
    L = np.array([c * c * wrench.fx, c * c * wrench.fy, wrench.m])
    return np.cross(twist, L)


def contact_residual(x: Pose2, finger, shape: ShapeModel, pusher_radius: float) -> np.ndarray:
    """Contact-frame mismatch between the object boundary and the sensed contact.

    B = finger.position - pusher_radius * f_hat sits on the pusher circle
    opposite the sensed reaction; A is the closest point of the posed polygon
    boundary to B.  Returns (A - B) in the frame (f_hat, perp(f_hat)).
    """
    if not finger.contact:
        raise ValueError("contact factor requires an in-contact finger")
    f = np.asarray(finger.force, dtype=float)
    fn = math.hypot(f[0], f[1])
    if fn < 1e-12:
        raise ValueError("in-contact finger carries zero force")
    f_hat = f / fn
    B = np.asarray(finger.position, dtype=float) - pusher_radius * f_hat
    r_w, _ = _boundary_gap_vector(shape.polygon, x, B)
    frame = np.stack([f_hat, _J90 @ f_hat], axis=1)
    return frame.T @ r_w


def visual_residual(x: Pose2, w: Pose2) -> np.ndarray:
    """x - w with the angle wrapped."""
    return pose_diff(x, w)


def prior_residual(x_curr: Pose2, x_prev: Pose2) -> np.ndarray:
    """x_curr - x_prev with the angle wrapped."""
    return pose_diff(x_curr, x_prev)


def _boundary_gap_vector(poly: Polygon, x: Pose2, B: np.ndarray):
    """(A - B) in world frame plus the supporting-feature data for Jacobians."""
    R = x.rotation()
    q_l = R.T @ (B - x.xy)
    point_l, _, _, edge_idx, t = poly.closest_point_local(q_l)
    r_w = R @ (point_l - q_l)
    if t <= 1e-12:
        feature = ("vertex", edge_idx)
    elif t >= 1.0 - 1e-12:
        feature = ("vertex", (edge_idx + 1) % poly.n_vertices)
    else:
        feature = ("edge", edge_idx)
    return r_w, feature


class Factor:
    """Base class: kind, connected state indices, covariance, residual dim."""

    kind = "?"

    def __init__(self, state_indices, covariance):
        self.state_indices = tuple(state_indices)
        cov = np.asarray(covariance, dtype=float)
        if cov.shape != (self.dim, self.dim):
            raise ValueError(f"covariance must be {self.dim}x{self.dim}")
        if np.linalg.norm(cov - cov.T) > 1e-12 * max(1.0, np.linalg.norm(cov)):
            raise ValueError("covariance must be symmetric")
        if np.any(np.linalg.eigvalsh(cov) <= 0):
            raise ValueError("covariance must be positive definite")
        self.covariance = cov
        # whitener W with W^T W = cov^-1 (upper Cholesky of the inverse)
        self.sqrt_info = np.linalg.cholesky(np.linalg.inv(cov)).T

    def residual(self, *states):
        raise NotImplementedError

    def jacobian(self, *states):
        raise NotImplementedError


class VisualFactor(Factor):
    kind = "V"
    dim = 3

    def __init__(self, idx: int, w: Pose2, covariance):
        super().__init__((idx,), covariance)
        self.w = w

    def residual(self, x):
        return visual_residual(x, self.w)

    def jacobian(self, x):
        return [np.eye(3)]


class PriorFactor(Factor):
    """Stationary prior between consecutive poses: x_curr - x_prev."""

    kind = "S"
    dim = 3

    def __init__(self, idx_prev: int, idx_curr: int, covariance):
        super().__init__((idx_prev, idx_curr), covariance)

    def residual(self, x_prev, x_curr):
        return prior_residual(x_curr, x_prev)

    def jacobian(self, x_prev, x_curr):
        return [-np.eye(3), np.eye(3)]


class AnchorFactor(Factor):
    """Unary prior fixing a pose near a target (used after trimming)."""

    kind = "S"
    dim = 3

    def __init__(self, idx: int, target: Pose2, covariance):
        super().__init__((idx,), covariance)
        self.target = target

    def residual(self, x):
        return prior_residual(x, self.target)

    def jacobian(self, x):
        return [np.eye(3)]


class ContactFactor(Factor):
    kind = "C"
    dim = 2

    def __init__(self, idx: int, finger, shape: ShapeModel, pusher_radius: float, covariance):
        super().__init__((idx,), covariance)
        if not finger.contact:
            raise ValueError("contact factor requires an in-contact finger")
        f = np.asarray(finger.force, dtype=float)
        fn = math.hypot(f[0], f[1])
        if fn < 1e-12:
            raise ValueError("in-contact finger carries zero force")
        self.f_hat = f / fn
        self.B = np.asarray(finger.position, dtype=float) - pusher_radius * self.f_hat
        self.frame = np.stack([self.f_hat, _J90 @ self.f_hat], axis=1)
        self.shape = shape

    def residual(self, x):
        r_w, _ = _boundary_gap_vector(self.shape.polygon, x, self.B)
        return self.frame.T @ r_w

    def jacobian(self, x):
        """Analytic derivative through the supporting feature of the closest point."""
        poly = self.shape.polygon
        R = x.rotation()
        _, feature = _boundary_gap_vector(poly, x, self.B)
        kind, idx = feature
        J_w = np.empty((2, 3))
        if kind == "edge":
            n_w = R @ poly._normals[idx]
            e0_w = R @ poly._v0[idx] + x.xy
            phi = float((self.B - e0_w) @ n_w)
            dphi_dt = -n_w
            dn_dth = _J90 @ n_w
            de_dth = _J90 @ (e0_w - x.xy)
            dphi_dth = float(-(de_dth @ n_w) + (self.B - e0_w) @ dn_dth)
            # r_w = -phi * n_w
            J_w[:, :2] = -np.outer(n_w, dphi_dt)
            J_w[:, 2] = -dphi_dth * n_w - phi * dn_dth
        else:
            v_w = R @ poly.vertices[idx] + x.xy
            J_w[:, :2] = np.eye(2)
            J_w[:, 2] = _J90 @ (v_w - x.xy)
        return [self.frame.T @ J_w]


class MotionFactor(Factor):
    """Limit-surface motion constraint between consecutive poses.

    Carries the world-frame measurement (total sensed force F_w and the
    moment sum S0 = sum_i cross(pos_i, f_i)); the object-frame wrench about
    the earlier pose is reconstructed from the earlier state inside the
    residual, so the factor stays consistent as estimates move.
    """

    kind = "M"
    dim = 3

    def __init__(self, idx_prev: int, idx_curr: int, F_w, S0: float, c: float, dt: float, covariance):
        super().__init__((idx_prev, idx_curr), covariance)
        self.F_w = np.asarray(F_w, dtype=float)
        self.S0 = float(S0)
        self.c = float(c)
        self.dt = float(dt)

    @staticmethod
    def from_fingers(idx_prev, idx_curr, fingers, c, dt, covariance):
        """Build from the in-contact finger readings of one tactile sample."""
        F = np.zeros(2)
        S0 = 0.0
        for fg in fingers:
            if fg.contact:
                F += fg.force
                S0 += float(fg.position[0] * fg.force[1] - fg.position[1] * fg.force[0])
        return MotionFactor(idx_prev, idx_curr, F, S0, c, dt, covariance)

    def object_wrench(self, x_prev: Pose2) -> Wrench2:
        R = _rotm(-x_prev.theta)
        F_o = R @ self.F_w
        m = self.S0 - (x_prev.x * self.F_w[1] - x_prev.y * self.F_w[0])
        return Wrench2(F_o[0], F_o[1], m)

    def residual(self, x_prev, x_curr):
        return motion_residual(x_prev, x_curr, self.object_wrench(x_prev), self.c, self.dt)

    def jacobian(self, x_prev, x_curr):
        R = _rotm(-x_prev.theta)
        v = R @ (x_curr.xy - x_prev.xy) / self.dt
        om = wrap_angle(x_curr.theta - x_prev.theta) / self.dt
        twist = np.array([v[0], v[1], om])
        F_o = R @ self.F_w
        m = self.S0 - (x_prev.x * self.F_w[1] - x_prev.y * self.F_w[0])
        c2 = self.c * self.c
        L = np.array([c2 * F_o[0], c2 * F_o[1], m])
        sk_t = _skew3(twist)
        sk_L = _skew3(L)

        # d(twist)/d(states)
        dT_prev = np.zeros((3, 3))
        dT_prev[:2, :2] = -R / self.dt
        dT_prev[:2, 2] = -_J90 @ v
        dT_prev[2, 2] = -1.0 / self.dt
        dT_curr = np.zeros((3, 3))
        dT_curr[:2, :2] = R / self.dt
        dT_curr[2, 2] = 1.0 / self.dt

        # d(L)/d(states): only x_prev enters
        dL_prev = np.zeros((3, 3))
        dL_prev[2, 0] = -self.F_w[1]
        dL_prev[2, 1] = self.F_w[0]
        dL_prev[:2, 2] = -c2 * (_J90 @ F_o)

        J_prev = sk_t @ dL_prev - sk_L @ dT_prev
        J_curr = -sk_L @ dT_curr
        return [J_prev, J_curr]


def finite_difference_jacobian(factor: Factor, states, step: float = 1e-6):
    """Central-difference Jacobians, one (dim x 3) block per connected state."""
    blocks = []
    for si in range(len(states)):
        J = np.empty((factor.dim, 3))
        for k in range(3):
            sp = list(states)
            sm = list(states)
            vp = states[si].as_array()
            vm = vp.copy()
            vp[k] += step
            vm[k] -= step
            sp[si] = Pose2.from_array(vp)
            sm[si] = Pose2.from_array(vm)
            J[:, k] = (factor.residual(*sp) - factor.residual(*sm)) / (2.0 * step)
        blocks.append(J)
    return blocks


def jacobian(factor: Factor, states) -> np.ndarray:
    """Stacked (dim x 3n) Jacobian; analytic with finite-difference fallback."""
    try:
        blocks = factor.jacobian(*states)
    except NotImplementedError:
        blocks = finite_difference_jacobian(factor, states)
    return np.hstack(blocks)


def batch_motion_jacobians(xp, xc, F_w, S0, dt, c):
    """Vectorized MotionFactor Jacobians: (m,3,3) blocks for x_prev and x_curr.

    Same math as MotionFactor.jacobian over stacked state/measurement arrays.
    """
    m_count = len(S0)
    cth, sth = np.cos(xp[:, 2]), np.sin(xp[:, 2])
    dx = (xc[:, 0] - xp[:, 0]) / dt
    dy = (xc[:, 1] - xp[:, 1]) / dt
    vx = cth * dx + sth * dy
    vy = -sth * dx + cth * dy
    om = wrap_angle_array(xc[:, 2] - xp[:, 2]) / dt
    Fx, Fy = F_w[:, 0], F_w[:, 1]
    Fox = cth * Fx + sth * Fy
    Foy = -sth * Fx + cth * Fy
    mm = S0 - (xp[:, 0] * Fy - xp[:, 1] * Fx)
    c2 = c * c
    Lx, Ly = c2 * Fox, c2 * Foy

    def skew(ax, ay, az):
        S = np.zeros((m_count, 3, 3))
        S[:, 0, 1] = -az; S[:, 0, 2] = ay
        S[:, 1, 0] = az; S[:, 1, 2] = -ax
        S[:, 2, 0] = -ay; S[:, 2, 1] = ax
        return S

    sk_t = skew(vx, vy, om)
    sk_L = skew(Lx, Ly, mm)

    dT_prev = np.zeros((m_count, 3, 3))
    dT_prev[:, 0, 0] = -cth / dt; dT_prev[:, 0, 1] = -sth / dt
    dT_prev[:, 1, 0] = sth / dt; dT_prev[:, 1, 1] = -cth / dt
    dT_prev[:, 0, 2] = vy; dT_prev[:, 1, 2] = -vx
    dT_prev[:, 2, 2] = -1.0 / dt
    dT_curr = np.zeros((m_count, 3, 3))
    dT_curr[:, 0, 0] = cth / dt; dT_curr[:, 0, 1] = sth / dt
    dT_curr[:, 1, 0] = -sth / dt; dT_curr[:, 1, 1] = cth / dt
    dT_curr[:, 2, 2] = 1.0 / dt

    dL_prev = np.zeros((m_count, 3, 3))
    dL_prev[:, 2, 0] = -Fy; dL_prev[:, 2, 1] = Fx
    dL_prev[:, 0, 2] = c2 * Foy; dL_prev[:, 1, 2] = -c2 * Fox

    J_prev = sk_t @ dL_prev - sk_L @ dT_prev
    J_curr = -sk_L @ dT_curr
    return J_prev, J_curr


def batch_contact_jacobians(poly: Polygon, B, frame, x):
    """Vectorized ContactFactor Jacobians: (m,2,3) contact-frame blocks.

    Same math as ContactFactor.jacobian over stacked measurements; `x` holds
    one pose row per factor.
    """
    m_count = len(B)
    th = x[:, 2]
    cth, sth = np.cos(th), np.sin(th)
    d = B - x[:, :2]
    q = np.stack([cth * d[:, 0] + sth * d[:, 1], -sth * d[:, 0] + cth * d[:, 1]], axis=1)
    _, _, edge_idx, t = poly.closest_points_local_batch(q)

    J_w = np.zeros((m_count, 2, 3))
    vert_idx = np.where(t <= 1e-12, edge_idx, (edge_idx + 1) % poly.n_vertices)
    is_vertex = (t <= 1e-12) | (t >= 1.0 - 1e-12)

    if np.any(is_vertex):
        vl = poly.vertices[vert_idx[is_vertex]]
        cthv, sthv = cth[is_vertex], sth[is_vertex]
        rel = np.stack([cthv * vl[:, 0] - sthv * vl[:, 1],
                        sthv * vl[:, 0] + cthv * vl[:, 1]], axis=1)  # v_w - t
        J_w[is_vertex, 0, 0] = 1.0
        J_w[is_vertex, 1, 1] = 1.0
        J_w[is_vertex, 0, 2] = -rel[:, 1]
        J_w[is_vertex, 1, 2] = rel[:, 0]
    ed = ~is_vertex
    if np.any(ed):
        n_l = poly._normals[edge_idx[ed]]
        e0_l = poly._v0[edge_idx[ed]]
        cthe, sthe = cth[ed], sth[ed]
        n_w = np.stack([cthe * n_l[:, 0] - sthe * n_l[:, 1],
                        sthe * n_l[:, 0] + cthe * n_l[:, 1]], axis=1)
        e0_rel = np.stack([cthe * e0_l[:, 0] - sthe * e0_l[:, 1],
                           sthe * e0_l[:, 0] + cthe * e0_l[:, 1]], axis=1)  # e0_w - t
        u = B[ed] - x[ed, :2] - e0_rel  # B - e0_w
        phi = np.einsum("kj,kj->k", u, n_w)
        dn = np.stack([-n_w[:, 1], n_w[:, 0]], axis=1)  # J90 n_w
        de = np.stack([-e0_rel[:, 1], e0_rel[:, 0]], axis=1)  # J90 (e0_w - t)
        dphi_dth = -np.einsum("kj,kj->k", de, n_w) + np.einsum("kj,kj->k", u, dn)
        J_w[ed, :, 0] = n_w * n_w[:, 0:1]
        J_w[ed, :, 1] = n_w * n_w[:, 1:2]
        J_w[ed, :, 2] = -dphi_dth[:, None] * n_w - phi[:, None] * dn
    return np.einsum("kji,kjl->kil", frame, J_w)
