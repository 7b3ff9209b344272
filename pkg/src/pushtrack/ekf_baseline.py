"""Extended Kalman Filter and raw-visual baselines for the smoother comparison.

The EKF carries a single Gaussian pose belief.  Prediction keeps the mean
(stationary process) and grows the covariance by the stationary-prior
covariance.  Updates are applied sequentially in a fixed order: visual pose,
per-finger contact, then the motion constraint as a pseudo-measurement
against the pre-update mean (the filter has no second state to couple, so
the previous mean stands in as a constant).  Covariance updates use the
Joseph form; the angle is wrapped after every mean update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .factors import ContactFactor, MotionFactor, VisualFactor
from .geom2d import Pose2, pose_diff, wrap_angle
from .pushing_physics import ShapeModel
from .smoother import CovarianceSet

__all__ = ["GaussianBelief", "ekf_step", "ContactEkf", "raw_visual_baseline"]


@dataclass
class GaussianBelief:
    """Gaussian pose belief; covariance kept symmetric PSD."""

    mean: Pose2
    covariance: np.ndarray
    was_projected: bool = False

    def __post_init__(self):
        P = np.asarray(self.covariance, dtype=float)
        if P.shape != (3, 3):
            raise ValueError("covariance must be 3x3")
        if np.max(np.abs(P - P.T)) > 1e-12 * max(1.0, np.max(np.abs(P))):
            raise ValueError("covariance must be symmetric")
        if np.min(np.linalg.eigvalsh(P)) < -1e-12:
            raise ValueError("covariance must be positive semi-definite")
        self.covariance = 0.5 * (P + P.T)


def _joseph_update(mean: np.ndarray, P: np.ndarray, innovation, H, R):
    """One sequential EKF update; returns (mean, P, projected_flag)."""
    S = H @ P @ H.T + R
    K = P @ H.T @ np.linalg.inv(S)
    mean = mean + K @ innovation
    mean[2] = wrap_angle(mean[2])
    IKH = np.eye(3) - K @ H
    P = IKH @ P @ IKH.T + K @ R @ K.T
    P = 0.5 * (P + P.T)
    projected = False
    w, V = np.linalg.eigh(P)
    if w.min() < -1e-12:
        P = V @ np.diag(np.clip(w, 0.0, None)) @ V.T
        P = 0.5 * (P + P.T)
        projected = True
    return mean, P, projected


def ekf_step(belief: GaussianBelief, tactile, visual, shape: ShapeModel, dt: float,
             pusher_radius: float, covs: CovarianceSet | None = None) -> GaussianBelief:
    """One predict-update cycle; `tactile`/`visual` may be None when absent."""
    if covs is None:
        covs = CovarianceSet()
    prev_mean = belief.mean  # anchor for the motion pseudo-measurement
    mean = belief.mean.as_array()
    P = belief.covariance + covs.stationary  # stationary prediction
    projected = False

    if visual is not None and visual.available:
        innov = -pose_diff(Pose2.from_array(mean), visual.pose)
        mean, P, pj = _joseph_update(mean, P, innov, np.eye(3), covs.visual)
        projected |= pj

    in_contact = [fg for fg in tactile.fingers if fg.contact] if tactile is not None else []
    for fg in in_contact:
        factor = ContactFactor(0, fg, shape, pusher_radius, covs.contact)
        x = Pose2.from_array(mean)
        innov = -factor.residual(x)
        H = factor.jacobian(x)[0]
        mean, P, pj = _joseph_update(mean, P, innov, H, covs.contact)
        projected |= pj

    if in_contact:
        factor = MotionFactor.from_fingers(0, 1, in_contact, shape.c, dt, covs.motion)
        x = Pose2.from_array(mean)
        innov = -factor.residual(prev_mean, x)
        H = factor.jacobian(prev_mean, x)[1]
        mean, P, pj = _joseph_update(mean, P, innov, H, covs.motion)
        projected |= pj

    return GaussianBelief(Pose2.from_array(mean), P, was_projected=projected)


class ContactEkf:
    """Stateful wrapper around ekf_step with projection diagnostics."""

    def __init__(self, shape: ShapeModel, pusher_radius: float, covs: CovarianceSet | None = None,
                 x0: Pose2 = Pose2(0.0, 0.0, 0.0), P0: np.ndarray | None = None):
        self.shape = shape
        self.pusher_radius = pusher_radius
        self.covs = covs if covs is not None else CovarianceSet()
        P0 = P0 if P0 is not None else np.diag([0.05 ** 2, 0.05 ** 2, math.radians(20.0) ** 2])
        self.belief = GaussianBelief(x0, P0)
        self.n_projections = 0

    def step(self, tactile, visual, dt: float) -> GaussianBelief:
        self.belief = ekf_step(self.belief, tactile, visual, self.shape, dt,
                               self.pusher_radius, self.covs)
        if self.belief.was_projected:
            self.n_projections += 1
        return self.belief


def raw_visual_baseline(stream, query_times):
    """Zero-order hold over the available visual samples.

    Returns one Pose2 per query time (the latest available sample at or
    before it).  Raises ValueError if a query precedes every available
    sample.
    """
    available = [s for s in stream if s.available]
    if not available:
        raise ValueError("no available visual samples in the stream")
    times = np.array([s.t for s in available])
    out = []
    for t in query_times:
        i = int(np.searchsorted(times, t + 1e-12)) - 1
        if i < 0:
            raise ValueError(f"query at t={t} precedes the first available visual sample")
        out.append(available[i].pose)
    return out
