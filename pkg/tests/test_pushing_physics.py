import math

import numpy as np
import pytest

from pushtrack.geom2d import Polygon, Pose2
from pushtrack.pushing_physics import (
    PusherScript,
    PusherState,
    ShapeModel,
    SimulationError,
    Wrench2,
    _gap_full,
    compute_c,
    simulate_push,
    twist_from_wrench,
)

UNIT_SQUARE = [[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]]
RECT1 = [[-0.045, -0.045], [0.045, -0.045], [0.045, 0.045], [-0.045, 0.045]]
R_PUSH = 0.003125


def make_shape(mu_pusher=0.25, verts=RECT1, mass=0.837, mu_surface=0.28):
    return ShapeModel.from_polygon(Polygon(verts), mu_pusher, mu_surface, mass)


def test_compute_c_unit_square():
    # frozen from a 2e6-point Monte-Carlo oracle of the mean centroid distance
    # (oracle value 0.38252 +/- 3e-4); the analytic integral gives 0.3825979
    assert compute_c(Polygon(UNIT_SQUARE)) == pytest.approx(0.3825978582321064, abs=1e-12)


def test_compute_c_circle_approximation():
    th = np.linspace(0, 2 * math.pi, 257)[:-1]
    poly = Polygon(np.stack([np.cos(th), np.sin(th)], axis=1))
    assert compute_c(poly) == pytest.approx(2.0 / 3.0, abs=1e-4)


def test_compute_c_scaling():
    base = compute_c(Polygon(UNIT_SQUARE))
    rng = np.random.default_rng(5)
    for s in (0.09, 2.5, 17.0):
        assert compute_c(Polygon(np.array(UNIT_SQUARE) * s)) == pytest.approx(s * base, rel=1e-12)
    # also on an irregular polygon
    verts = [[0.0, 0.0], [0.08, 0.01], [0.05, 0.05], [0.01, 0.06]]
    c1 = compute_c(Polygon(verts))
    assert compute_c(Polygon(np.array(verts) * 3.0)) == pytest.approx(3.0 * c1, rel=1e-12)


def test_compute_c_monte_carlo_oracle():
    verts = [[0.0, 0.0], [0.08, 0.01], [0.05, 0.05], [0.01, 0.06]]
    poly = Polygon(verts).recentered()
    rng = np.random.default_rng(6)
    # rejection-sample the polygon via its bounding box
    lo, hi = poly.vertices.min(0), poly.vertices.max(0)
    pts = rng.uniform(lo, hi, size=(400_000, 2))
    inside = np.array([poly.contains(p) for p in pts[:40_000]])
    sample = pts[:40_000][inside]
    mc = np.linalg.norm(sample, axis=1).mean()
    assert compute_c(poly) == pytest.approx(mc, rel=0.02)


def test_twist_from_wrench():
    shape = make_shape()
    t = twist_from_wrench(shape, Wrench2(1, 0, 0)).as_array()
    assert np.allclose(t, [1, 0, 0])
    t = twist_from_wrench(shape, Wrench2(0, 0, 1)).as_array()
    assert np.allclose(t, [0, 0, 1])
    c = 0.0344
    shape2 = ShapeModel(shape.polygon, c, 0.25, 0.28, 0.837)
    t = twist_from_wrench(shape2, Wrench2(1, 0, 0.02)).as_array()
    expect = np.array([c ** 2, 0, 0.02])
    expect /= np.linalg.norm(expect)
    assert np.allclose(t, expect, atol=1e-15)
    with pytest.raises(ValueError):
        twist_from_wrench(shape, Wrench2(0, 0, 0))


def test_twist_wrench_ratio_identity():
    # vx / omega == c^2 Fx / m whenever omega != 0
    shape = make_shape()
    w = Wrench2(1.3, -0.4, 0.017)
    t = twist_from_wrench(shape, w).as_array()
    assert t[0] / t[2] == pytest.approx(shape.c ** 2 * w.fx / w.m, rel=1e-12)
    assert t[1] / t[2] == pytest.approx(shape.c ** 2 * w.fy / w.m, rel=1e-12)


def test_shape_model_validation():
    poly = Polygon(RECT1)
    with pytest.raises(ValueError):
        ShapeModel(poly, -1.0, 0.25, 0.28, 1.0)
    with pytest.raises(ValueError):
        ShapeModel(poly, 0.03, -0.1, 0.28, 1.0)
    with pytest.raises(ValueError):
        ShapeModel(poly, 0.03, 0.25, 0.0, 1.0)
    off = Polygon(np.array(RECT1) + 0.01)
    with pytest.raises(ValueError):
        ShapeModel(off, 0.03, 0.25, 0.28, 1.0)


def two_finger_script(y_offsets=(0.02, -0.02), speed=0.06, t_end=1.0, vel_dir=(1.0, 0.0),
                      start_x=None):
    start_x = start_x if start_x is not None else -0.045 - R_PUSH - 0.012
    centers = np.array([[start_x, y_offsets[0]], [start_x, y_offsets[1]]])
    d = np.asarray(vel_dir) / np.linalg.norm(vel_dir)
    vel = np.tile(speed * d, (2, 1))
    return PusherScript([(0.0, PusherState(centers, R_PUSH, vel))], t_end=t_end)


def test_head_on_push_pure_translation():
    shape = make_shape(mu_pusher=0.0)
    log = simulate_push(shape, two_finger_script(), Pose2(0, 0, 0), dt=0.004)
    xf = log.segments[-1].x1
    # displacement equals pusher travel beyond first contact
    assert xf[0] == pytest.approx(0.06 * 1.0 - 0.012, abs=1e-9)
    assert abs(xf[1]) < 1e-9
    assert abs(xf[2]) < 1e-9


def test_off_center_push_rotation_sign():
    shape = make_shape()
    centers = np.array([[-0.045 - R_PUSH - 0.012, 0.018], [0.5, 0.5]])
    vel = np.array([[0.06, 0.0], [0.0, 0.0]])
    script = PusherScript([(0.0, PusherState(centers, R_PUSH, vel))], t_end=0.6)
    log = simulate_push(shape, script, Pose2(0, 0, 0), dt=0.004)
    for seg in log.segments:
        if seg.active.any():
            # applied moment and angular velocity share a sign at every step
            if abs(seg.wrench_obj[2]) > 1e-12:
                assert seg.twist[2] * seg.wrench_obj[2] >= 0
    assert log.segments[-1].x1[2] < -0.05  # contact above center line: clockwise


@pytest.mark.parametrize("mu", [0.0, 0.25])
def test_friction_cone_and_limit_surface(mu):
    shape = make_shape(mu_pusher=mu)
    log = simulate_push(shape, two_finger_script(), Pose2(0, 0, 0), dt=0.004)
    checked = 0
    for seg in log.segments:
        if not seg.active.any():
            continue
        checked += 1
        L = np.array([shape.c ** 2 * seg.wrench_obj[0], shape.c ** 2 * seg.wrench_obj[1],
                      seg.wrench_obj[2]])
        nt, nL = np.linalg.norm(seg.twist), np.linalg.norm(L)
        if nt > 0 and nL > 0:
            cross = np.cross(seg.twist / nt, L / nL)
            assert np.linalg.norm(cross) < 1e-8
        for j in range(2):
            if not seg.active[j]:
                continue
            gap, _, n_hat, _ = _gap_full(shape.polygon, seg.x1, seg.centers1[j], R_PUSH)
            assert gap > -1e-6  # penetration stays within the projection tolerance
            f = -seg.force_world[j]  # force applied to the object
            a = -f @ n_hat
            b = f @ np.array([-n_hat[1], n_hat[0]])
            assert a >= -1e-9
            assert abs(b) <= mu * a + 1e-9
    assert checked > 100


def test_sticking_contact_follows_pusher():
    # straight centered two-finger push with friction: contacts stick
    shape = make_shape(mu_pusher=0.25)
    log = simulate_push(shape, two_finger_script(t_end=0.8), Pose2(0, 0, 0), dt=0.004)
    prev = None
    for seg in log.segments:
        if seg.active.all() and prev is not None and prev.active.all():
            for j in range(2):
                # material point at the previous contact advected by the step
                x0, x1 = Pose2.from_array(seg.x0), Pose2.from_array(seg.x1)
                local = x0.rotation().T @ (prev.contact_point[j] - x0.xy)
                adv = x1.rotation() @ local + x1.xy
                assert np.linalg.norm(adv - seg.contact_point[j]) < 1e-6
        prev = seg


def test_zero_velocity_rest():
    shape = make_shape()
    centers = np.array([[-0.06, 0.02], [-0.06, -0.02]])
    script = PusherScript([(0.0, PusherState(centers, R_PUSH, np.zeros((2, 2))))], t_end=0.2)
    log = simulate_push(shape, script, Pose2(0, 0, 0), dt=0.004)
    for seg in log.segments:
        assert not seg.active.any()
        assert np.all(seg.twist == 0.0)
        assert np.all(seg.force_world == 0.0)
        assert np.all(seg.x1 == seg.x0)


def test_determinism_bit_identical():
    shape = make_shape()
    a = simulate_push(shape, two_finger_script(), Pose2(0, 0, 0), dt=0.004)
    b = simulate_push(shape, two_finger_script(), Pose2(0, 0, 0), dt=0.004)
    for sa, sb in zip(a.segments, b.segments):
        assert np.array_equal(sa.x1, sb.x1)
        assert np.array_equal(sa.force_world, sb.force_world)


def test_pusher_inside_object_rejected():
    shape = make_shape()
    centers = np.array([[0.0, 0.0], [0.5, 0.5]])
    script = PusherScript([(0.0, PusherState(centers, R_PUSH, np.zeros((2, 2))))], t_end=0.1)
    with pytest.raises(SimulationError):
        simulate_push(shape, script, Pose2(0, 0, 0), dt=0.004)


def test_non_quasistatic_speed_rejected():
    shape = make_shape()
    with pytest.raises(ValueError):
        simulate_push(shape, two_finger_script(speed=0.5, t_end=0.1), Pose2(0, 0, 0), dt=0.004)


def test_pose_interpolation_exact():
    shape = make_shape()
    log = simulate_push(shape, two_finger_script(t_end=0.5), Pose2(0, 0, 0), dt=0.004)
    seg = log.segments[60]
    t_mid = 0.5 * (seg.t0 + seg.t1)
    p = log.pose_at(t_mid).as_array()
    # halfway along the segment's constant twist
    from pushtrack.pushing_physics import _step_pose

    expect = _step_pose(seg.x0, seg.twist, t_mid - seg.t0)
    assert np.allclose(p, expect, atol=1e-15)


def test_script_validation():
    state = PusherState(np.zeros((2, 2)), R_PUSH, np.zeros((2, 2)))
    with pytest.raises(ValueError):
        PusherScript([], t_end=1.0)
    with pytest.raises(ValueError):
        PusherScript([(0.5, state)], t_end=1.0)  # must start at t=0
    with pytest.raises(ValueError):
        PusherScript([(0.0, state), (0.0, state)], t_end=1.0)
