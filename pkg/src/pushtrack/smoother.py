"""Sliding-window nonlinear least-squares smoother over the pushing factor graph.

Each estimation step appends one pose node plus its factors (stationary
prior, visual, contact, motion).  Updates run damped Gauss-Newton on the
whole window: factor Jacobians are cached at their linearization points and
reused with freshly evaluated residuals; every `relin_every` steps (and after
every trim) all factors are relinearized.  The normal equations are
block-tridiagonal because factors couple at most consecutive nodes, so the
solve is a banded Cholesky, O(window length).

Trimming drops the oldest nodes and their factors once the window reaches
`trim_at` nodes and anchors the oldest surviving node at its current
estimate, replacing the information carried by the removed factors.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solveh_banded

from .factors import (
    AnchorFactor,
    ContactFactor,
    MotionFactor,
    PriorFactor,
    VisualFactor,
    batch_contact_jacobians,
    batch_motion_jacobians,
)
from .geom2d import Pose2, wrap_angle_array
from .pushing_physics import ShapeModel

__all__ = [
    "CovarianceSet",
    "WindowConfig",
    "SolverConfig",
    "SlidingWindowSmoother",
    "UnderdeterminedError",
    "DEFAULT_MOTION_COV",
]


class UnderdeterminedError(RuntimeError):
    """The window's normal equations are singular (e.g., priors disabled)."""


# Motion-constraint covariance identified from simulated pushing data with the
# default noise configuration (characterize-noise, fig5 calibration, seed 0).
DEFAULT_MOTION_COV = np.diag([2.0e-9, 2.5e-9, 2.5e-13])


@dataclass
class CovarianceSet:
    """Measurement covariances for the four factor kinds."""

    visual: np.ndarray = field(default_factory=lambda: np.diag([0.01 ** 2, 0.01 ** 2, math.radians(3.0) ** 2]))
    contact: np.ndarray = field(default_factory=lambda: np.diag([0.002 ** 2, 0.002 ** 2]))
    stationary: np.ndarray = field(default_factory=lambda: np.diag([0.001 ** 2, 0.001 ** 2, math.radians(0.3) ** 2]))
    motion: np.ndarray = field(default_factory=lambda: DEFAULT_MOTION_COV.copy())

    def __post_init__(self):
        self.visual = np.asarray(self.visual, dtype=float)
        self.contact = np.asarray(self.contact, dtype=float)
        self.stationary = np.asarray(self.stationary, dtype=float)
        self.motion = np.asarray(self.motion, dtype=float)


@dataclass
class WindowConfig:
    """Sliding-window geometry: steady size, trim trigger, relinearization cadence."""

    window_len: int = 200
    trim_at: int = 300
    trim_count: int = 100
    relin_every: int = 100

    def __post_init__(self):
        if self.window_len < 1 or self.trim_count < 0 or self.relin_every < 1:
            raise ValueError("window parameters must be positive")
        if self.trim_at != self.window_len + self.trim_count:
            raise ValueError("trim_at must equal window_len + trim_count")
        if self.trim_count % self.relin_every != 0:
            raise ValueError("relin_every must divide trim_count (keeps trims on relinearization boundaries)")

    @staticmethod
    def for_window(window_len: int) -> "WindowConfig":
        """Window of the given length keeping the standard relinearization cadence."""
        relin = min(100, max(1, window_len // 2))
        trim = max((window_len // 2) // relin, 1) * relin
        return WindowConfig(window_len, window_len + trim, trim, relin)

    @staticmethod
    def unbounded(relin_every: int = 100) -> "WindowConfig":
        big = 10 ** 9
        return WindowConfig(big, 2 * big, big, relin_every)


@dataclass
class SolverConfig:
    max_iters_per_update: int = 3
    step_tolerance: float = 1e-9
    damping_lambda0: float = 0.0
    damping_growth: float = 10.0
    max_damping_retries: int = 3
    # estimates drifting this far from their linearization points force a full
    # relinearization ahead of the periodic one (bounds linearization error
    # after large corrections, e.g. the first contact after an occlusion)
    relin_drift_xy: float = 1e-4
    relin_drift_theta: float = 1e-3

    def __post_init__(self):
        if self.max_iters_per_update < 1:
            raise ValueError("max_iters_per_update must be >= 1")


class _KindPack:
    """Per-factor-kind storage: record lists plus lazily stacked arrays."""

    def __init__(self, fields):
        self.fields = fields  # (name, trailing_shape) pairs
        self.lists = {name: [] for name, _ in fields}
        self.arrays = None
        self.stacked = 0

    def append(self, **kw):
        for name, _ in self.fields:
            self.lists[name].append(kw[name])

    def clear(self):
        for lst in self.lists.values():
            lst.clear()
        self.arrays = None
        self.stacked = 0

    def __len__(self):
        return len(self.lists[self.fields[0][0]])

    def get(self):
        """Stacked arrays, extending the cache with any newly appended rows."""
        n = len(self)
        if self.arrays is None or self.stacked == 0:
            self.arrays = {
                name: (np.array(self.lists[name]) if n else np.zeros((0, *shape)))
                for name, shape in self.fields
            }
        elif self.stacked < n:
            for name, shape in self.fields:
                tail = np.array(self.lists[name][self.stacked:])
                self.arrays[name] = np.concatenate([self.arrays[name], tail])
        self.stacked = n
        return self.arrays


class SlidingWindowSmoother:
    """Incremental pose smoother; one owner calls add_step/update in time order."""

    def __init__(self, shape: ShapeModel, pusher_radius: float, covariances: CovarianceSet | None = None,
                 window: WindowConfig | None = None, solver: SolverConfig | None = None,
                 initial_pose: Pose2 = Pose2(0.0, 0.0, 0.0)):
        self.shape = shape
        self.pusher_radius = pusher_radius
        self.covs = covariances if covariances is not None else CovarianceSet()
        self.window = window if window is not None else WindowConfig()
        self.solver = solver if solver is not None else SolverConfig()
        self.initial_pose = initial_pose
        self.times: list[float] = []
        self.estimates = np.zeros((0, 3))
        self.factors = []
        self.step_count = 0
        self.n_trims = 0
        self.last_update_ms = 0.0
        self.last_cost = 0.0
        self._needs_relin = True
        self._cap = 0
        self._D = np.zeros((0, 3, 3))
        self._O = np.zeros((0, 3, 3))
        self._packs = {
            "un": _KindPack([("idx", ()), ("tgt", (3,)), ("W", (3, 3)), ("J", (3, 3))]),
            "st": _KindPack([("ip", ()), ("W", (3, 3)), ("Jp", (3, 3)), ("Jc", (3, 3))]),
            "ct": _KindPack([("idx", ()), ("B", (2,)), ("frame", (2, 2)), ("W", (2, 2)), ("J", (2, 3))]),
            "mo": _KindPack([("ip", ()), ("F", (2,)), ("S0", ()), ("dt", ()), ("c", ()),
                             ("W", (3, 3)), ("Jp", (3, 3)), ("Jc", (3, 3))]),
        }

    # ---- graph construction ---------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.times)

    def pose(self, i: int) -> Pose2:
        return Pose2.from_array(self.estimates[i])

    def add_step(self, t: float, tactile=None, visual=None):
        """Append one estimation step's node and factors; trims when due."""
        if self.times and t <= self.times[-1]:
            raise ValueError(f"timestamps must be strictly increasing (got {t} after {self.times[-1]})")
        i = self.n_nodes
        first_unobserved = False
        if i == 0:
            if visual is not None and visual.available:
                est = visual.pose.as_array()
            else:
                est = self.initial_pose.as_array()
                first_unobserved = True
        else:
            est = self.estimates[i - 1].copy()
        self.times.append(t)
        self.estimates = np.vstack([self.estimates, est[None, :]])
        snap = getattr(self, "_lin_snapshot", None)
        if snap is not None and snap.shape[0] == i:
            self._lin_snapshot = np.vstack([snap, est[None, :]])
        self._ensure_capacity(i + 1)
        if first_unobserved:
            # keep the system determined until the first measurement arrives
            self._add_factor(AnchorFactor(0, self.initial_pose, self.covs.stationary))

        if i > 0:
            self._add_factor(PriorFactor(i - 1, i, self.covs.stationary))
        if visual is not None and visual.available:
            self._add_factor(VisualFactor(i, visual.pose, self.covs.visual))
        in_contact = [fg for fg in tactile.fingers if fg.contact] if tactile is not None else []
        for fg in in_contact:
            self._add_factor(ContactFactor(i, fg, self.shape, self.pusher_radius, self.covs.contact))
        if i > 0 and in_contact:
            dt = t - self.times[i - 1]
            self._add_factor(
                MotionFactor.from_fingers(i - 1, i, in_contact, self.shape.c, dt, self.covs.motion)
            )

        self.step_count += 1
        if self.step_count % self.window.relin_every == 0:
            self._needs_relin = True
        if self.n_nodes >= self.window.trim_at:
            self.trim(self.window.trim_count)

    def _ensure_capacity(self, n: int):
        if n <= self._cap:
            return
        cap = max(2 * self._cap, n, 256)
        if self.window.trim_at < 10 ** 8:
            cap = max(cap, self.window.trim_at + 1)
        D = np.zeros((cap, 3, 3))
        O = np.zeros((cap, 3, 3))
        D[: self._cap] = self._D[: self._cap]
        O[: self._cap] = self._O[: self._cap]
        self._D, self._O, self._cap = D, O, cap

    def _add_factor(self, factor):
        states = [self.pose(j) for j in factor.state_indices]
        blocks = factor.jacobian(*states)
        factor._Jw = [factor.sqrt_info @ b for b in blocks]
        self.factors.append(factor)
        self._pack_factor(factor)
        self._scatter_normal(factor)

    def _pack_factor(self, f):
        if isinstance(f, VisualFactor):
            self._packs["un"].append(idx=f.state_indices[0], tgt=f.w.as_array(), W=f.sqrt_info, J=f._Jw[0])
        elif isinstance(f, AnchorFactor):
            self._packs["un"].append(idx=f.state_indices[0], tgt=f.target.as_array(), W=f.sqrt_info, J=f._Jw[0])
        elif isinstance(f, PriorFactor):
            ip, ic = f.state_indices
            if ic != ip + 1:
                raise AssertionError("stationary factors must couple consecutive nodes")
            self._packs["st"].append(ip=ip, W=f.sqrt_info, Jp=f._Jw[0], Jc=f._Jw[1])
        elif isinstance(f, ContactFactor):
            self._packs["ct"].append(idx=f.state_indices[0], B=f.B, frame=f.frame, W=f.sqrt_info, J=f._Jw[0])
        elif isinstance(f, MotionFactor):
            ip, ic = f.state_indices
            if ic != ip + 1:
                raise AssertionError("motion factors must couple consecutive nodes")
            self._packs["mo"].append(ip=ip, F=f.F_w, S0=f.S0, dt=f.dt, c=f.c,
                                     W=f.sqrt_info, Jp=f._Jw[0], Jc=f._Jw[1])
        else:
            raise AssertionError(f"unknown factor type {type(f)!r}")

    def _scatter_normal(self, f):
        idx = f.state_indices
        Jw = f._Jw
        self._D[idx[0]] += Jw[0].T @ Jw[0]
        if len(idx) == 2:
            self._D[idx[1]] += Jw[1].T @ Jw[1]
            self._O[idx[0]] += Jw[0].T @ Jw[1]

    def trim(self, count: int):
        """Drop the oldest `count` nodes, anchor the new oldest, relinearize."""
        if count == 0:
            return
        if count >= self.n_nodes:
            raise ValueError("cannot trim the whole window")
        self.times = self.times[count:]
        self.estimates = self.estimates[count: self.n_nodes + count].copy()
        kept = []
        for f in self.factors:
            if min(f.state_indices) < count:
                continue
            f.state_indices = tuple(j - count for j in f.state_indices)
            kept.append(f)
        self.factors = kept
        anchor = AnchorFactor(0, self.pose(0), self.covs.stationary)
        anchor._Jw = [anchor.sqrt_info @ np.eye(3)]
        self.factors.insert(0, anchor)
        self.n_trims += 1
        self._needs_relin = True

    def _relinearize(self):
        """Recompute all nonlinear-factor Jacobians at the current estimates.

        Contact and motion Jacobians are evaluated in batch; visual, anchor,
        and stationary Jacobians are state-independent and keep their cache.
        """
        est = self.estimates
        for p in self._packs.values():
            p.clear()
        self._D[:] = 0.0
        self._O[:] = 0.0

        un_f, st_f, ct_f, mo_f = [], [], [], []
        for f in self.factors:
            if isinstance(f, (VisualFactor, AnchorFactor)):
                un_f.append(f)
            elif isinstance(f, PriorFactor):
                st_f.append(f)
            elif isinstance(f, ContactFactor):
                ct_f.append(f)
            elif isinstance(f, MotionFactor):
                mo_f.append(f)
            else:
                raise AssertionError(f"unknown factor type {type(f)!r}")

        un = self._packs["un"]
        for f in un_f:
            target = f.w if isinstance(f, VisualFactor) else f.target
            un.append(idx=f.state_indices[0], tgt=target.as_array(), W=f.sqrt_info, J=f._Jw[0])
        st = self._packs["st"]
        for f in st_f:
            st.append(ip=f.state_indices[0], W=f.sqrt_info, Jp=f._Jw[0], Jc=f._Jw[1])

        ct = self._packs["ct"]
        if ct_f:
            idx = np.array([f.state_indices[0] for f in ct_f])
            B = np.array([f.B for f in ct_f])
            frame = np.array([f.frame for f in ct_f])
            W2 = np.array([f.sqrt_info for f in ct_f])
            J = batch_contact_jacobians(self.shape.polygon, B, frame, est[idx])
            Jw = W2 @ J
            for k, f in enumerate(ct_f):
                f._Jw = [Jw[k]]
                ct.append(idx=idx[k], B=B[k], frame=frame[k], W=W2[k], J=Jw[k])

        mo = self._packs["mo"]
        if mo_f:
            ip = np.array([f.state_indices[0] for f in mo_f])
            F = np.array([f.F_w for f in mo_f])
            S0 = np.array([f.S0 for f in mo_f])
            dt = np.array([f.dt for f in mo_f])
            c = np.array([f.c for f in mo_f])
            W3 = np.array([f.sqrt_info for f in mo_f])
            Jp, Jc = batch_motion_jacobians(est[ip], est[ip + 1], F, S0, dt, c)
            Jwp, Jwc = W3 @ Jp, W3 @ Jc
            for k, f in enumerate(mo_f):
                f._Jw = [Jwp[k], Jwc[k]]
                mo.append(ip=ip[k], F=F[k], S0=S0[k], dt=dt[k], c=c[k],
                          W=W3[k], Jp=Jwp[k], Jc=Jwc[k])

        # rebuild the block-tridiagonal normal matrix from the fresh caches
        a = un.get()
        if len(a["idx"]):
            np.add.at(self._D, a["idx"].astype(int), np.einsum("kij,kil->kjl", a["J"], a["J"]))
        a = st.get()
        if len(a["ip"]):
            i0 = a["ip"].astype(int)
            np.add.at(self._D, i0, np.einsum("kij,kil->kjl", a["Jp"], a["Jp"]))
            np.add.at(self._D, i0 + 1, np.einsum("kij,kil->kjl", a["Jc"], a["Jc"]))
            np.add.at(self._O, i0, np.einsum("kij,kil->kjl", a["Jp"], a["Jc"]))
        a = ct.get()
        if len(a["idx"]):
            np.add.at(self._D, a["idx"].astype(int), np.einsum("kij,kil->kjl", a["J"], a["J"]))
        a = mo.get()
        if len(a["ip"]):
            i0 = a["ip"].astype(int)
            np.add.at(self._D, i0, np.einsum("kij,kil->kjl", a["Jp"], a["Jp"]))
            np.add.at(self._D, i0 + 1, np.einsum("kij,kil->kjl", a["Jc"], a["Jc"]))
            np.add.at(self._O, i0, np.einsum("kij,kil->kjl", a["Jp"], a["Jc"]))

        self._lin_snapshot = est.copy()
        self._needs_relin = False

    def _drifted_from_linearization(self) -> bool:
        snap = getattr(self, "_lin_snapshot", None)
        if snap is None or snap.shape[0] != self.estimates.shape[0]:
            return False
        d = self.estimates - snap
        if np.max(np.abs(d[:, :2])) > self.solver.relin_drift_xy:
            return True
        return bool(np.max(np.abs(wrap_angle_array(d[:, 2]))) > self.solver.relin_drift_theta)

    # ---- batched evaluation ---------------------------------------------

    def _whitened_residuals(self, est):
        """Per-kind whitened residual arrays at the given estimates."""
        out = {}
        un = self._packs["un"].get()
        if len(un["idx"]):
            idx = un["idx"].astype(int)
            r = est[idx] - un["tgt"]
            r[:, 2] = wrap_angle_array(r[:, 2])
            out["un"] = (un["W"] @ r[:, :, None])[:, :, 0]
        st = self._packs["st"].get()
        if len(st["ip"]):
            ip = st["ip"].astype(int)
            r = est[ip + 1] - est[ip]
            r[:, 2] = wrap_angle_array(r[:, 2])
            out["st"] = (st["W"] @ r[:, :, None])[:, :, 0]
        ct = self._packs["ct"].get()
        if len(ct["idx"]):
            idx = ct["idx"].astype(int)
            th = est[idx, 2]
            cth, sth = np.cos(th), np.sin(th)
            d = ct["B"] - est[idx, :2]
            q = np.stack([cth * d[:, 0] + sth * d[:, 1], -sth * d[:, 0] + cth * d[:, 1]], axis=1)
            A_l, _, _, _ = self.shape.polygon.closest_points_local_batch(q)
            dl = A_l - q
            r_w = np.stack([cth * dl[:, 0] - sth * dl[:, 1], sth * dl[:, 0] + cth * dl[:, 1]], axis=1)
            r = (r_w[:, None, :] @ ct["frame"])[:, 0, :]
            out["ct"] = (ct["W"] @ r[:, :, None])[:, :, 0]
        mo = self._packs["mo"].get()
        if len(mo["ip"]):
            ip = mo["ip"].astype(int)
            xp = est[ip]
            xc = est[ip + 1]
            cth, sth = np.cos(xp[:, 2]), np.sin(xp[:, 2])
            dx = (xc[:, 0] - xp[:, 0]) / mo["dt"]
            dy = (xc[:, 1] - xp[:, 1]) / mo["dt"]
            vx = cth * dx + sth * dy
            vy = -sth * dx + cth * dy
            om = wrap_angle_array(xc[:, 2] - xp[:, 2]) / mo["dt"]
            Fx, Fy = mo["F"][:, 0], mo["F"][:, 1]
            Fox = cth * Fx + sth * Fy
            Foy = -sth * Fx + cth * Fy
            m = mo["S0"] - (xp[:, 0] * Fy - xp[:, 1] * Fx)
            c2 = mo["c"] ** 2
            Lx, Ly = c2 * Fox, c2 * Foy
            r = np.stack([vy * m - om * Ly, om * Lx - vx * m, vx * Ly - vy * Lx], axis=1)
            out["mo"] = (mo["W"] @ r[:, :, None])[:, :, 0]
        return out

    def _cost_of(self, res: dict) -> float:
        return float(sum((r ** 2).sum() for r in res.values()))

    def _rhs_of(self, res: dict) -> np.ndarray:
        """Gradient-side vector sum_f Jw^T r_w from precomputed residuals."""
        n = self.n_nodes
        g = np.zeros((n, 3))
        un = self._packs["un"].get()
        if len(un["idx"]):
            np.add.at(g, un["idx"].astype(int), (res["un"][:, None, :] @ un["J"])[:, 0, :])
        st = self._packs["st"].get()
        if len(st["ip"]):
            ip = st["ip"].astype(int)
            np.add.at(g, ip, (res["st"][:, None, :] @ st["Jp"])[:, 0, :])
            np.add.at(g, ip + 1, (res["st"][:, None, :] @ st["Jc"])[:, 0, :])
        ct = self._packs["ct"].get()
        if len(ct["idx"]):
            np.add.at(g, ct["idx"].astype(int), (res["ct"][:, None, :] @ ct["J"])[:, 0, :])
        mo = self._packs["mo"].get()
        if len(mo["ip"]):
            ip = mo["ip"].astype(int)
            np.add.at(g, ip, (res["mo"][:, None, :] @ mo["Jp"])[:, 0, :])
            np.add.at(g, ip + 1, (res["mo"][:, None, :] @ mo["Jc"])[:, 0, :])
        return g.ravel()

    def _banded(self) -> np.ndarray:
        """Pack the block-tridiagonal normal matrix into scipy lower banded form."""
        n = self.n_nodes
        D = self._D[:n]
        O = self._O[: max(n - 1, 0)]
        ab = np.zeros((6, 3 * n))
        for r in range(3):
            for c in range(3):
                if r >= c:
                    ab[r - c, c::3] = D[:, r, c]
                if n > 1:
                    ab[3 + r - c, c::3][: n - 1] = O[:, c, r]
        return ab

    # ---- solving ----------------------------------------------------------

    def update(self) -> Pose2:
        """Run damped Gauss-Newton on the window; returns the newest estimate."""
        if self.n_nodes == 0:
            raise UnderdeterminedError("no nodes in the window")
        t_start = time.perf_counter()
        if self._needs_relin or self._drifted_from_linearization():
            self._relinearize()
        ab = self._banded()

        est = self.estimates[: self.n_nodes]
        res = self._whitened_residuals(est)
        cost = self._cost_of(res)
        for _ in range(self.solver.max_iters_per_update):
            g = self._rhs_of(res)
            lam = self.solver.damping_lambda0
            accepted = False
            for _retry in range(self.solver.max_damping_retries + 1):
                ab_try = ab if lam == 0.0 else ab.copy()
                if lam != 0.0:
                    ab_try[0] = ab[0] * (1.0 + lam)
                try:
                    delta = solveh_banded(ab_try, -g, lower=True)
                except np.linalg.LinAlgError as exc:
                    raise UnderdeterminedError(
                        "window normal equations are singular; are stationary priors disabled?"
                    ) from exc
                cand = est + delta.reshape(-1, 3)
                cand[:, 2] = wrap_angle_array(cand[:, 2])
                res_new = self._whitened_residuals(cand)
                cost_new = self._cost_of(res_new)
                if cost_new <= cost * (1.0 + 1e-12) + 1e-15:
                    est = cand
                    res = res_new
                    cost = cost_new
                    accepted = True
                    break
                lam = max(lam * self.solver.damping_growth, 1e-6)
            if not accepted:
                break
            if np.max(np.abs(delta)) < self.solver.step_tolerance:
                break
        self.estimates = est
        self.last_cost = cost
        self.last_update_ms = (time.perf_counter() - t_start) * 1e3
        return self.pose(self.n_nodes - 1)

    def batch_solve(self, step_tol: float = 1e-10, max_iters: int = 100):
        """Full nonlinear least squares to convergence over the current window.

        Relinearizes every iteration (Levenberg-damped Gauss-Newton).  Returns
        (timestamps, estimates array); also leaves the window at the solution.
        """
        if self.n_nodes == 0:
            raise UnderdeterminedError("no nodes in the window")
        lam = 0.0
        for _ in range(max_iters):
            self._relinearize()
            ab = self._banded()
            est = self.estimates[: self.n_nodes]
            res = self._whitened_residuals(est)
            cost = self._cost_of(res)
            g = self._rhs_of(res)
            accepted = False
            for _retry in range(12):
                ab_try = ab.copy()
                ab_try[0] = ab[0] * (1.0 + lam)
                try:
                    delta = solveh_banded(ab_try, -g, lower=True)
                except np.linalg.LinAlgError as exc:
                    raise UnderdeterminedError(
                        "batch normal equations are singular; are stationary priors disabled?"
                    ) from exc
                cand = est + delta.reshape(-1, 3)
                cand[:, 2] = wrap_angle_array(cand[:, 2])
                cost_new = self._cost_of(self._whitened_residuals(cand))
                if cost_new <= cost * (1.0 + 1e-12) + 1e-15:
                    self.estimates = cand
                    lam = lam / 3.0 if lam > 1e-9 else 0.0
                    accepted = True
                    break
                lam = max(lam * 10.0, 1e-6)
            if not accepted or np.max(np.abs(delta)) < step_tol:
                break
        self.last_cost = self._cost_of(self._whitened_residuals(self.estimates[: self.n_nodes]))
        return list(self.times), self.estimates[: self.n_nodes].copy()
