import math

import numpy as np
import pytest

from pushtrack.factors import (
    AnchorFactor,
    ContactFactor,
    MotionFactor,
    PriorFactor,
    VisualFactor,
    contact_residual,
    finite_difference_jacobian,
    jacobian,
    motion_residual,
    prior_residual,
    visual_residual,
)
from pushtrack.geom2d import Polygon, Pose2
from pushtrack.pushing_physics import PusherScript, PusherState, ShapeModel, Wrench2, simulate_push
from pushtrack.sensor_sim import FingerReading

RECT1 = [[-0.045, -0.045], [0.045, -0.045], [0.045, 0.045], [-0.045, 0.045]]
R_PUSH = 0.003125


@pytest.fixture(scope="module")
def shape():
    return ShapeModel.from_polygon(Polygon(RECT1), 0.0, 0.28, 0.837)


@pytest.fixture(scope="module")
def push_log(shape):
    centers = np.array([[-0.045 - R_PUSH - 0.012, 0.02], [-0.045 - R_PUSH - 0.012, -0.02]])
    vel = np.array([[0.06, 0.0], [0.06, 0.0]])
    script = PusherScript([(0.0, PusherState(centers, R_PUSH, vel))], t_end=0.8)
    return simulate_push(shape, script, Pose2(0, 0, 0), dt=0.004)


def test_motion_residual_parallel_is_zero():
    w = Wrench2(1.2, -0.3, 0.02)
    c = 0.0344
    L = np.array([c * c * w.fx, c * c * w.fy, w.m])
    dt = 0.01
    for k in (0.3, 1.0, 5.0):
        x_prev = Pose2(0.1, -0.2, 0.4)
        step = k * L * dt
        R = x_prev.rotation()
        x_curr = Pose2(*(x_prev.xy + R @ step[:2]), x_prev.theta + step[2])
        r = motion_residual(x_prev, x_curr, w, c, dt)
        assert np.linalg.norm(r) < 1e-12


def test_motion_residual_rest_case():
    x = Pose2(0.3, 0.1, -1.0)
    assert np.all(motion_residual(x, x, Wrench2(0, 0, 0), 0.0344, 0.01) == 0.0)


def test_motion_residual_hand_cross_product():
    # twist (1,0,0) x wrench-direction (0,1,0) with c=1 -> (0,0,1)
    x_prev = Pose2(0, 0, 0)
    x_curr = Pose2(1.0 * 0.01, 0, 0)  # twist (1, 0, 0) over dt=0.01
    r = motion_residual(x_prev, x_curr, Wrench2(0, 1, 0), 1.0, 0.01)
    assert np.allclose(r, [0, 0, 1], atol=1e-12)


def test_motion_residual_linear_in_wrench_scale():
    x_prev = Pose2(0.02, -0.01, 0.3)
    x_curr = Pose2(0.021, -0.009, 0.31)
    c = 0.0344
    base = motion_residual(x_prev, x_curr, Wrench2(0.8, 0.1, 0.005), c, 0.01)
    for k in (-2.0, 0.5, 3.0):
        scaled = motion_residual(x_prev, x_curr, Wrench2(0.8 * k, 0.1 * k, 0.005 * k), c, 0.01)
        assert np.allclose(scaled, k * base, rtol=1e-12)


def test_motion_residual_sign_invariant_zero_set():
    # flipping the wrench sign (reaction vs applied) keeps the zero
    w = Wrench2(1.0, 0.2, 0.01)
    c = 0.0344
    L = np.array([c * c * w.fx, c * c * w.fy, w.m]) * 0.01
    x_prev = Pose2(0, 0, 0)
    x_curr = Pose2(L[0], L[1], L[2])
    r_pos = motion_residual(x_prev, x_curr, w, c, 0.01)
    r_neg = motion_residual(x_prev, x_curr, Wrench2(-w.fx, -w.fy, -w.m), c, 0.01)
    assert np.linalg.norm(r_pos) < 1e-12
    assert np.linalg.norm(r_neg) < 1e-12


def test_contact_residual_simulator_consistency(shape, push_log):
    worst = 0.0
    for seg in push_log.segments:
        if not seg.active.any():
            continue
        pose = Pose2.from_array(seg.x1)
        for j in range(2):
            if seg.active[j]:
                fg = FingerReading(force=seg.force_world[j], position=seg.centers1[j], contact=True)
                r = contact_residual(pose, fg, shape, R_PUSH)
                worst = max(worst, float(np.linalg.norm(r)))
    assert worst < 1e-8


def test_contact_residual_normal_translation(shape):
    # object moved +0.005 m along the outward contact normal away from B:
    # the residual reports ~0.005 in the sensed-force (normal) component
    fg = FingerReading(force=np.array([1.0, 0.0]), position=np.array([0.045 + R_PUSH, 0.0]),
                       contact=True)
    r0 = contact_residual(Pose2(0, 0, 0), fg, shape, R_PUSH)
    assert np.linalg.norm(r0) < 1e-12
    r = contact_residual(Pose2(0.005, 0, 0), fg, shape, R_PUSH)
    assert r[0] == pytest.approx(0.005, abs=1e-12)
    assert abs(r[1]) < 1e-12
    # and the opposite translation flips the sign (penetrating B)
    r = contact_residual(Pose2(-0.005, 0, 0), fg, shape, R_PUSH)
    assert r[0] == pytest.approx(-0.005, abs=1e-12)


def test_contact_residual_b_on_boundary(shape):
    fg = FingerReading(force=np.array([0.7, 0.0]), position=np.array([0.045 + R_PUSH, 0.01]),
                       contact=True)
    r = contact_residual(Pose2(0, 0, 0), fg, shape, R_PUSH)
    assert np.allclose(r, 0.0, atol=1e-12)


def test_contact_residual_input_validation(shape):
    with pytest.raises(ValueError):
        contact_residual(Pose2(0, 0, 0),
                         FingerReading(np.zeros(2), np.array([0.05, 0.0]), True), shape, R_PUSH)
    with pytest.raises(ValueError):
        contact_residual(Pose2(0, 0, 0),
                         FingerReading(np.array([1.0, 0.0]), np.array([0.05, 0.0]), False),
                         shape, R_PUSH)


def test_visual_prior_residuals():
    x = Pose2(0.01, 0, 0)
    assert np.allclose(visual_residual(x, Pose2(0, 0, 0)), [0.01, 0, 0])
    assert np.all(visual_residual(x, x) == 0.0)
    r = visual_residual(Pose2(0, 0, 3.0), Pose2(0, 0, -3.0))
    assert r[2] == pytest.approx(6.0 - 2 * math.pi, abs=1e-12)
    r = prior_residual(Pose2(0, 0, 3.1), Pose2(0, 0, -3.1))
    assert r[2] == pytest.approx(6.2 - 2 * math.pi, abs=1e-12)
    assert np.allclose(prior_residual(Pose2(0.001, 0, 0.01), Pose2(0, 0, 0)), [0.001, 0, 0.01])


def test_angle_components_always_wrapped():
    rng = np.random.default_rng(8)
    for _ in range(200):
        a = Pose2(0, 0, rng.uniform(-math.pi, math.pi))
        b = Pose2(0, 0, rng.uniform(-math.pi, math.pi))
        assert -math.pi <= visual_residual(a, b)[2] < math.pi
        assert -math.pi <= prior_residual(a, b)[2] < math.pi


def test_mahalanobis_scale_invariance():
    r = np.array([0.01, -0.02, 0.005])
    cov = np.diag([1e-4, 2e-4, 3e-5])
    base = r @ np.linalg.inv(cov) @ r
    for s in (0.1, 7.0):
        scaled = (s * r) @ np.linalg.inv(s * s * cov) @ (s * r)
        assert scaled == pytest.approx(base, rel=1e-12)


def test_covariance_validation():
    with pytest.raises(ValueError):
        VisualFactor(0, Pose2(0, 0, 0), np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValueError):
        VisualFactor(0, Pose2(0, 0, 0), np.eye(2))


def _rel_err(Ja, Jf):
    return np.linalg.norm(np.hstack(Ja) - np.hstack(Jf)) / max(np.linalg.norm(np.hstack(Jf)), 1e-9)


def test_trivial_jacobians():
    vf = VisualFactor(0, Pose2(0.1, 0.2, 0.3), np.eye(3))
    assert np.array_equal(vf.jacobian(Pose2(0, 0, 0))[0], np.eye(3))
    pf = PriorFactor(0, 1, np.eye(3))
    Jp, Jc = pf.jacobian(Pose2(0, 0, 0), Pose2(0, 0, 0))
    assert np.array_equal(Jp, -np.eye(3))
    assert np.array_equal(Jc, np.eye(3))


def _random_contact_factor(rng, shape):
    fdir = rng.standard_normal(2)
    fdir /= np.linalg.norm(fdir)
    fg = FingerReading(force=fdir * rng.uniform(0.2, 2.0),
                       position=rng.uniform(-0.08, 0.08, 2), contact=True)
    return ContactFactor(0, fg, shape, R_PUSH, np.eye(2))


def _near_feature_switch(shape, factor, pose, margin=1e-4):
    """Reject linearization points near equidistant-edge boundaries."""
    poly = shape.polygon
    q = pose.rotation().T @ (factor.B - pose.xy)
    t = np.clip(((q - poly._v0) * poly._edges).sum(1) / poly._edge_len2, 0.0, 1.0)
    proj = poly._v0 + t[:, None] * poly._edges
    d = np.sort(np.linalg.norm(q - proj, axis=1))
    _, _, _, _, t_star = poly.closest_point_local(q)
    return (d[1] - d[0]) < margin or min(t_star, 1.0 - t_star) < 1e-3


def test_contact_jacobian_vs_finite_differences(shape):
    rng = np.random.default_rng(9)
    checked = 0
    while checked < 120:
        cf = _random_contact_factor(rng, shape)
        x = Pose2(*rng.uniform(-0.05, 0.05, 2), rng.uniform(-3.0, 3.0))
        if _near_feature_switch(shape, cf, x):
            continue
        err = _rel_err(cf.jacobian(x), finite_difference_jacobian(cf, [x]))
        assert err < 1e-5
        checked += 1


def test_motion_jacobian_vs_finite_differences():
    rng = np.random.default_rng(10)
    for _ in range(120):
        mf = MotionFactor(0, 1, rng.standard_normal(2), float(rng.standard_normal()),
                          0.0344, 0.01, np.eye(3))
        xp = Pose2(*rng.uniform(-0.1, 0.1, 2), rng.uniform(-2.5, 2.5))
        xc = Pose2(xp.x + rng.uniform(-0.002, 0.002), xp.y + rng.uniform(-0.002, 0.002),
                   xp.theta + rng.uniform(-0.03, 0.03))
        err = _rel_err(mf.jacobian(xp, xc), finite_difference_jacobian(mf, [xp, xc]))
        assert err < 1e-5


def test_jacobian_dispatcher_stacks_blocks():
    mf = MotionFactor(0, 1, np.array([1.0, 0.2]), 0.01, 0.0344, 0.01, np.eye(3))
    xp, xc = Pose2(0, 0, 0), Pose2(0.001, 0, 0.01)
    J = jacobian(mf, [xp, xc])
    assert J.shape == (3, 6)
    blocks = mf.jacobian(xp, xc)
    assert np.array_equal(J, np.hstack(blocks))
