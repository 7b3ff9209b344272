"""Evaluation pipeline: metrics, noise characterization, scenario runs, CSV I/O.

`run_scenario` wires the full loop: simulate ground truth, render sensor
streams, drive the configured estimators at the estimation rate, and collect
a RunReport with per-tick records, RMSE summaries, and timing statistics.
Reports serialize to the trajectory CSV schema

    t, gt_x, gt_y, gt_theta, est_x, est_y, est_theta, method,
    n_contacts, visual_available, step_ms

with one row per tick per method; residual dumps use `t, kind,
component_index, value`.  Everything is deterministic given the scenario
seed, so a rerun produces byte-identical CSVs.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import yaml

from .ekf_baseline import ContactEkf, raw_visual_baseline
from .factors import MotionFactor, contact_residual, motion_residual, pose_diff
from .geom2d import Pose2, wrap_angle
from .sensor_sim import render_tactile, render_visual
from .scenarios import Scenario, build_ground_truth, build_occlusion, load_scenario
from .smoother import CovarianceSet, SlidingWindowSmoother, SolverConfig, WindowConfig

__all__ = [
    "rmse",
    "identify_covariance",
    "normality_report",
    "RunReport",
    "run_scenario",
    "residuals_at_truth",
    "identify_covariances",
    "write_trajectory_csv",
    "write_residuals_csv",
    "benchmark_smoother",
]


def rmse(est, gt):
    """Translation/rotation RMSE (mm, deg) with stds of the per-step errors.

    est/gt are (n, 3) pose arrays with aligned timestamps.
    """
    est = np.asarray(est, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if est.shape != gt.shape:
        raise ValueError("trajectory length mismatch")
    terr = np.linalg.norm(est[:, :2] - gt[:, :2], axis=1) * 1e3
    rerr = np.degrees(np.abs((est[:, 2] - gt[:, 2] + math.pi) % (2 * math.pi) - math.pi))
    return {
        "trans_rmse_mm": float(np.sqrt(np.mean(terr ** 2))),
        "trans_std_mm": float(np.std(terr, ddof=1)) if len(terr) > 1 else 0.0,
        "rot_rmse_deg": float(np.sqrt(np.mean(rerr ** 2))),
        "rot_std_deg": float(np.std(rerr, ddof=1)) if len(rerr) > 1 else 0.0,
    }


def identify_covariance(residuals) -> np.ndarray:
    """Unbiased sample covariance of k-vector residuals ((n, k) array)."""
    r = np.atleast_2d(np.asarray(residuals, dtype=float))
    n, k = r.shape
    if n < k + 1:
        raise ValueError(f"need at least {k + 1} samples for a {k}x{k} covariance, got {n}")
    return np.cov(r.T, ddof=1).reshape(k, k)


def normality_report(residuals, bins: int = 40):
    """Per-axis histogram, ML Gaussian fit, QQ pairs, and a KS diagnostic.

    The KS statistic compares standardized samples against the standard
    normal CDF; `ks_pass` uses the asymptotic 99% critical value.
    """
    r = np.atleast_2d(np.asarray(residuals, dtype=float))
    n, k = r.shape
    if n < 30:
        raise ValueError("need at least 30 samples for a normality report")
    out = []
    for ax in range(k):
        x = np.sort(r[:, ax])
        mu = float(np.mean(x))
        sigma = float(np.std(x))  # ML fit
        counts, edges = np.histogram(x, bins=bins)
        zero_var = sigma < 1e-15
        if zero_var:
            qq = np.stack([np.zeros(n), x - mu], axis=1)
            ks = 1.0
        else:
            probs = (np.arange(1, n + 1) - 0.5) / n
            theo = mu + sigma * _norm_ppf(probs)
            qq = np.stack([theo, x], axis=1)
            z = (x - mu) / sigma
            cdf = 0.5 * (1.0 + np.vectorize(math.erf)(z / math.sqrt(2.0)))
            ks = float(
                np.max(
                    np.maximum(np.arange(1, n + 1) / n - cdf, cdf - (np.arange(n)) / n)
                )
            )
        crit = 1.62762 / math.sqrt(n)  # asymptotic 99% Kolmogorov critical value
        out.append(
            {
                "axis": ax,
                "hist_counts": counts,
                "bin_edges": edges,
                "mu": mu,
                "sigma": sigma,
                "qq": qq,
                "ks_stat": ks,
                "ks_critical_99": crit,
                "ks_pass": bool(ks <= crit),
                "zero_variance": bool(zero_var),
            }
        )
    return out


def _norm_ppf(p):
    """Standard normal quantile (Acklam's rational approximation, vectorized)."""
    p = np.asarray(p, dtype=float)
    a = [-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
         1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00]
    b = [-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
         6.680131188771972e+01, -1.328068155288572e+01]
    c = [-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
         -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00]
    d = [7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
         3.754408661907416e+00]
    plow, phigh = 0.02425, 1 - 0.02425
    x = np.empty_like(p)
    lo = p < plow
    hi = p > phigh
    mid = ~(lo | hi)
    if np.any(mid):
        q = p[mid] - 0.5
        r = q * q
        x[mid] = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q / (
            ((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1
        )
    if np.any(lo):
        q = np.sqrt(-2 * np.log(p[lo]))
        x[lo] = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / (
            (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1
        )
    if np.any(hi):
        q = np.sqrt(-2 * np.log(1 - p[hi]))
        x[hi] = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / (
            (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1
        )
    return x


# ---- scenario running --------------------------------------------------------


@dataclass
class RunReport:
    scenario_name: str
    seed: int
    times: np.ndarray
    gt: np.ndarray
    estimates: dict
    n_contacts: np.ndarray
    visual_available: np.ndarray
    step_ms: dict
    rmse: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "scenario": self.scenario_name,
            "seed": int(self.seed),
            "rmse": {m: {k: float(v) for k, v in r.items()} for m, r in self.rmse.items()},
            "timing_ms": {m: {k: float(v) for k, v in t.items()} for m, t in self.timing.items()},
        }


def _covariances_from_spec(spec) -> CovarianceSet:
    if spec is None:
        return CovarianceSet()
    if isinstance(spec, CovarianceSet):
        return spec
    if isinstance(spec, str):
        with open(spec) as fh:
            spec = yaml.safe_load(fh)
    return CovarianceSet(
        visual=np.asarray(spec["visual"], dtype=float),
        contact=np.asarray(spec["contact"], dtype=float),
        stationary=np.asarray(spec["stationary"], dtype=float),
        motion=np.asarray(spec["motion"], dtype=float),
    )


def run_scenario(scenario, streams=None) -> RunReport:
    """Simulate, render sensors, and drive every configured estimator.

    `streams` may carry a pre-built (gt_log, visual, tactile) triple to rerun
    estimation on identical data.
    """
    scn = load_scenario(scenario)
    shape = scn.shape_model()
    if streams is None:
        gt_log = build_ground_truth(scn)
        occ = build_occlusion(scn, gt_log)
        noise = scn.noise_spec()
        visual = render_visual(gt_log, noise, occ, scn.rates["visual"])
        tactile = render_tactile(gt_log, noise, scn.rates["tactile"])
    else:
        gt_log, visual, tactile = streams

    est_rate = scn.rates["estimator"]
    vis_rate = scn.rates["visual"]
    tac_rate = scn.rates["tactile"]
    n_ticks = int(math.floor(gt_log.t_end * est_rate + 1e-9)) + 1
    tick_times = np.array([k / est_rate for k in range(n_ticks)])
    gt = np.array([gt_log.pose_at(t).as_array() for t in tick_times])

    covs = _covariances_from_spec(scn.covariances)
    methods = list(scn.estimators)
    estimates = {m: np.zeros((n_ticks, 3)) for m in methods}
    step_ms = {m: np.zeros(n_ticks) for m in methods}
    n_contacts = np.zeros(n_ticks, dtype=int)
    vis_flags = np.zeros(n_ticks, dtype=bool)

    first_pose = visual[0].pose if visual and visual[0].available else scn.x0_pose()

    smoother = None
    if "smoother" in methods:
        wcfg = WindowConfig.for_window(int(scn.smoother.get("window", 200)))
        scfg = SolverConfig(max_iters_per_update=int(scn.smoother.get("max_iters", 3)))
        smoother = SlidingWindowSmoother(shape, scn.pusher_radius, covs, wcfg, scfg,
                                         initial_pose=scn.x0_pose())
    ekf = ContactEkf(shape, scn.pusher_radius, covs, x0=first_pose) if "ekf" in methods else None

    if "baseline" in methods:
        t0 = time.perf_counter()
        held = raw_visual_baseline(visual, tick_times)
        estimates["baseline"] = np.array([p.as_array() for p in held])
        step_ms["baseline"][:] = (time.perf_counter() - t0) * 1e3 / max(n_ticks, 1)

    prev_vi = -1
    for k in range(n_ticks):
        t = tick_times[k]
        vi = int(math.floor(t * vis_rate + 1e-9))
        vis_sample = None
        if vi != prev_vi and vi < len(visual):
            vis_sample = visual[vi]
            prev_vi = vi
        ti = int(math.floor(t * tac_rate + 1e-9))
        tac_sample = tactile[ti - 1] if 1 <= ti <= len(tactile) else None
        n_contacts[k] = tac_sample.n_contacts if tac_sample is not None else 0
        vis_flags[k] = bool(vis_sample is not None and vis_sample.available)

        if smoother is not None:
            t0 = time.perf_counter()
            smoother.add_step(t, tac_sample, vis_sample)
            pose = smoother.update()
            step_ms["smoother"][k] = (time.perf_counter() - t0) * 1e3
            estimates["smoother"][k] = pose.as_array()
        if ekf is not None:
            t0 = time.perf_counter()
            belief = ekf.step(tac_sample, vis_sample, 1.0 / est_rate)
            step_ms["ekf"][k] = (time.perf_counter() - t0) * 1e3
            estimates["ekf"][k] = belief.mean.as_array()

    report = RunReport(
        scenario_name=scn.name, seed=scn.seed, times=tick_times, gt=gt,
        estimates=estimates, n_contacts=n_contacts, visual_available=vis_flags,
        step_ms=step_ms,
    )
    for m in methods:
        report.rmse[m] = rmse(estimates[m], gt)
        sm = step_ms[m]
        report.timing[m] = {
            "mean_ms": float(np.mean(sm)),
            "std_ms": float(np.std(sm, ddof=1)) if len(sm) > 1 else 0.0,
            "max_ms": float(np.max(sm)),
        }
    return report


# ---- noise characterization ----------------------------------------------------


def residuals_at_truth(scn, gt_log=None, visual=None, tactile=None):
    """Factor residuals evaluated at ground truth, for covariance identification.

    Returns {"V": {...}, "S": {...}, "C": {...}, "M": {...}} where each entry
    holds "t" (n,) timestamps and "r" (n, k) residual samples.
    """
    scn = load_scenario(scn)
    shape = scn.shape_model()
    if gt_log is None:
        gt_log = build_ground_truth(scn)
        occ = build_occlusion(scn, gt_log)
        noise = scn.noise_spec()
        visual = render_visual(gt_log, noise, occ, scn.rates["visual"])
        tactile = render_tactile(gt_log, noise, scn.rates["tactile"])

    Vt, V = [], []
    for s in visual:
        if s.available:
            Vt.append(s.t)
            V.append(pose_diff(gt_log.pose_at(s.t), s.pose))

    est_rate = scn.rates["estimator"]
    tac_rate = scn.rates["tactile"]
    n_ticks = int(math.floor(gt_log.t_end * est_rate + 1e-9)) + 1
    St, S, Mt, M = [], [], [], []
    prev_pose = None
    prev_t = None
    for k in range(n_ticks):
        t = k / est_rate
        pose = gt_log.pose_at(t)
        if prev_pose is not None:
            St.append(t)
            S.append(pose_diff(pose, prev_pose))
            ti = int(math.floor(t * tac_rate + 1e-9))
            tac = tactile[ti - 1] if 1 <= ti <= len(tactile) else None
            if tac is not None and tac.n_contacts > 0:
                mf = MotionFactor.from_fingers(0, 1, tac.contacting(), shape.c, t - prev_t,
                                               np.eye(3))
                Mt.append(t)
                M.append(mf.residual(prev_pose, pose))
        prev_pose, prev_t = pose, t

    Ct, C = [], []
    for tac in tactile:
        pose = gt_log.pose_at(tac.t)
        for fg in tac.fingers:
            if fg.contact:
                Ct.append(tac.t)
                C.append(contact_residual(pose, fg, shape, scn.pusher_radius))

    def pack(ts, rs, k):
        return {"t": np.array(ts), "r": np.array(rs) if rs else np.zeros((0, k))}

    return {"V": pack(Vt, V, 3), "S": pack(St, S, 3), "C": pack(Ct, C, 2), "M": pack(Mt, M, 3)}


def identify_covariances(scn) -> tuple:
    """CovarianceSet identified from a calibration run, plus the raw residuals."""
    res = residuals_at_truth(scn)
    covs = CovarianceSet(
        visual=identify_covariance(res["V"]["r"]),
        contact=identify_covariance(res["C"]["r"]),
        stationary=identify_covariance(res["S"]["r"]),
        motion=identify_covariance(res["M"]["r"]),
    )
    return covs, res


# ---- file output ----------------------------------------------------------------


def _fmt(v) -> str:
    return repr(float(v))


def write_trajectory_csv(path, report: RunReport):
    cols = "t,gt_x,gt_y,gt_theta,est_x,est_y,est_theta,method,n_contacts,visual_available,step_ms"
    with open(path, "w") as fh:
        fh.write(cols + "\n")
        for method in sorted(report.estimates):
            est = report.estimates[method]
            ms = report.step_ms[method]
            for k in range(len(report.times)):
                row = [
                    _fmt(report.times[k]),
                    _fmt(report.gt[k, 0]), _fmt(report.gt[k, 1]), _fmt(report.gt[k, 2]),
                    _fmt(est[k, 0]), _fmt(est[k, 1]), _fmt(est[k, 2]),
                    method,
                    str(int(report.n_contacts[k])),
                    str(int(report.visual_available[k])),
                    _fmt(ms[k]),
                ]
                fh.write(",".join(row) + "\n")


class ReplayLog:
    """Ground-truth stand-in reloaded from a gt.csv tick table.

    Provides the two things the estimation loop needs (`t_end`, `pose_at`),
    so estimation runs replay from serialized streams without re-simulation.
    Poses are exact at the recorded tick times.
    """

    def __init__(self, times, poses):
        self._times = np.asarray(times, dtype=float)
        self._poses = np.asarray(poses, dtype=float)
        if len(self._times) != len(self._poses):
            raise ValueError("times and poses must align")

    @property
    def t_end(self) -> float:
        return float(self._times[-1])

    def pose_at(self, t: float) -> Pose2:
        i = int(np.argmin(np.abs(self._times - t)))
        if abs(self._times[i] - t) > 1e-6:
            raise ValueError(f"replay table has no pose near t={t}")
        return Pose2.from_array(self._poses[i])


def load_streams(outdir):
    """(ReplayLog, visual samples, tactile samples) from a simulate output dir."""
    import csv
    from pathlib import Path

    from .sensor_sim import FingerReading, TactileSample, VisualSample

    outdir = Path(outdir)
    times, poses = [], []
    with open(outdir / "gt.csv") as fh:
        for rec in csv.DictReader(fh):
            times.append(float(rec["t"]))
            poses.append([float(rec["x"]), float(rec["y"]), float(rec["theta"])])
    gt = ReplayLog(times, poses)

    visual = []
    with open(outdir / "visual.csv") as fh:
        for rec in csv.DictReader(fh):
            visual.append(
                VisualSample(
                    t=float(rec["t"]),
                    pose=Pose2(float(rec["x"]), float(rec["y"]), float(rec["theta"])),
                    available=bool(int(rec["available"])),
                )
            )

    tactile = []
    with open(outdir / "tactile.csv") as fh:
        reader = csv.DictReader(fh)
        nf = sum(1 for c in reader.fieldnames if c.endswith("_fx"))
        for rec in reader:
            fingers = tuple(
                FingerReading(
                    force=np.array([float(rec[f"f{j}_fx"]), float(rec[f"f{j}_fy"])]),
                    position=np.array([float(rec[f"f{j}_px"]), float(rec[f"f{j}_py"])]),
                    contact=bool(int(rec[f"f{j}_contact"])),
                )
                for j in range(nf)
            )
            tactile.append(TactileSample(t=float(rec["t"]), fingers=fingers))
    return gt, visual, tactile


def strip_timing_column(csv_text: str) -> str:
    """Trajectory CSV with the wall-clock step_ms column removed.

    Every other column is deterministic for a fixed seed; timing is not.
    """
    lines = csv_text.splitlines()
    return "\n".join(line.rsplit(",", 1)[0] for line in lines) + "\n"


def write_residuals_csv(path, residuals: dict):
    with open(path, "w") as fh:
        fh.write("t,kind,component_index,value\n")
        for kind in sorted(residuals):
            ts = residuals[kind]["t"]
            arr = residuals[kind]["r"]
            for i in range(arr.shape[0]):
                for j in range(arr.shape[1]):
                    fh.write(f"{_fmt(ts[i])},{kind},{j},{_fmt(arr[i, j])}\n")


def write_covariances_yaml(path, covs: CovarianceSet):
    data = {
        "visual": covs.visual.tolist(),
        "contact": covs.contact.tolist(),
        "stationary": covs.stationary.tolist(),
        "motion": covs.motion.tolist(),
    }
    with open(path, "w") as fh:
        yaml.safe_dump(data, fh, sort_keys=True)


def model_consistency_report(gt_log, shape=None, pusher_radius=None) -> dict:
    """Worst-case motion/contact residuals of a simulation against the factor model.

    Reconstructs the measurement-side wrench from per-finger forces and
    centers exactly as the estimator does; with a frictionless pusher both
    residuals vanish to solver precision.
    """
    from .sensor_sim import FingerReading

    shape = shape if shape is not None else gt_log.shape
    radius = pusher_radius if pusher_radius is not None else gt_log.radius
    worst_motion = 0.0
    worst_contact = 0.0
    n_checked = 0
    for seg in gt_log.segments:
        if not seg.active.any():
            continue
        n_checked += 1
        x0 = Pose2.from_array(seg.x0)
        x1 = Pose2.from_array(seg.x1)
        fingers = [
            FingerReading(force=seg.force_world[j], position=seg.centers1[j], contact=True)
            for j in range(len(seg.active))
            if seg.active[j]
        ]
        mf = MotionFactor.from_fingers(0, 1, fingers, shape.c, seg.dt, np.eye(3))
        worst_motion = max(worst_motion, float(np.linalg.norm(mf.residual(x0, x1))))
        for fg in fingers:
            r = contact_residual(x1, fg, shape, radius)
            worst_contact = max(worst_contact, float(np.linalg.norm(r)))
    return {
        "n_contact_segments": n_checked,
        "max_motion_residual": worst_motion,
        "max_contact_residual_m": worst_contact,
    }


def benchmark_smoother(scenario, window: int | None = None) -> dict:
    """Per-step smoother timing on a scenario (relinearization steps included)."""
    scn = load_scenario(scenario)
    if window is not None:
        scn.smoother = dict(scn.smoother)
        scn.smoother["window"] = int(window)
    scn.estimators = ("smoother",)
    report = run_scenario(scn)
    ms = report.step_ms["smoother"]
    return {
        "window": int(scn.smoother.get("window", 200)),
        "n_steps": int(len(ms)),
        "mean_ms": float(np.mean(ms)),
        "std_ms": float(np.std(ms, ddof=1)),
        "max_ms": float(np.max(ms)),
        "p99_ms": float(np.percentile(ms, 99)),
    }
