"""Tactile-visual pose tracking for planar pushed objects."""

from .geom2d import Pose2, Twist2, Polygon, wrap_angle, pose_diff, transform_point, closest_point_on_polygon
from .pushing_physics import (
    Wrench2, ShapeModel, PusherState, PusherScript, SimLog, SimulationError,
    compute_c, twist_from_wrench, simulate_push,
)
from .sensor_sim import (
    VisualSample, TactileSample, FingerReading, NoiseSpec, OcclusionSchedule,
    render_visual, render_tactile,
)
from .factors import motion_residual, contact_residual, visual_residual, prior_residual
from .smoother import CovarianceSet, WindowConfig, SolverConfig, SlidingWindowSmoother, UnderdeterminedError
from .ekf_baseline import GaussianBelief, ekf_step, ContactEkf, raw_visual_baseline
from .scenarios import Scenario, builtin_scenario, build_ground_truth
from .harness import rmse, identify_covariance, normality_report, run_scenario, RunReport

__all__ = [
    "Pose2", "Twist2", "Polygon", "wrap_angle", "pose_diff", "transform_point",
    "closest_point_on_polygon",
    "Wrench2", "ShapeModel", "PusherState", "PusherScript", "SimLog", "SimulationError",
    "compute_c", "twist_from_wrench", "simulate_push",
    "VisualSample", "TactileSample", "FingerReading", "NoiseSpec", "OcclusionSchedule",
    "render_visual", "render_tactile",
    "motion_residual", "contact_residual", "visual_residual", "prior_residual",
    "CovarianceSet", "WindowConfig", "SolverConfig", "SlidingWindowSmoother", "UnderdeterminedError",
    "GaussianBelief", "ekf_step", "ContactEkf", "raw_visual_baseline",
    "Scenario", "builtin_scenario", "build_ground_truth",
    "rmse", "identify_covariance", "normality_report", "run_scenario", "RunReport",
]
