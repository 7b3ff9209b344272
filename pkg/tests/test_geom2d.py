import math

import numpy as np
import pytest

from pushtrack.geom2d import (
    Polygon,
    Pose2,
    closest_point_on_polygon,
    pose_diff,
    transform_point,
    wrap_angle,
)

SQUARE = [[-0.045, -0.045], [0.045, -0.045], [0.045, 0.045], [-0.045, 0.045]]


def test_wrap_angle_examples():
    assert wrap_angle(0.0) == 0.0
    assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2, abs=1e-15)
    assert wrap_angle(6.5) == pytest.approx(6.5 - 2 * math.pi, abs=1e-12)


def test_wrap_angle_half_open_interval():
    # pi maps to -pi: the interval is [-pi, pi)
    assert wrap_angle(math.pi) == pytest.approx(-math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(-math.pi)
    rng = np.random.default_rng(1)
    for a in rng.uniform(-50, 50, 500):
        w = wrap_angle(a)
        assert -math.pi <= w < math.pi
        # congruent mod 2*pi
        assert abs((w - a) / (2 * math.pi) - round((w - a) / (2 * math.pi))) < 1e-9


def test_wrap_angle_idempotent_and_periodic():
    rng = np.random.default_rng(2)
    for a in rng.uniform(-10, 10, 200):
        assert wrap_angle(wrap_angle(a)) == wrap_angle(a)
        for k in (-10, -3, 1, 10):
            assert wrap_angle(a + 2 * math.pi * k) == pytest.approx(wrap_angle(a), abs=1e-12)


def test_wrap_angle_rejects_non_finite():
    for bad in (math.nan, math.inf, -math.inf):
        with pytest.raises(ValueError):
            wrap_angle(bad)


def test_pose_diff():
    a = Pose2(1, 2, math.pi / 2)
    assert np.all(pose_diff(a, a) == 0.0)
    d = pose_diff(Pose2(0, 0, 3.0), Pose2(0, 0, -3.0))
    assert d[2] == pytest.approx(6.0 - 2 * math.pi, abs=1e-12)
    assert np.allclose(pose_diff(Pose2(1, 0, 0), Pose2(0, 0, 0)), [1, 0, 0])


def test_pose2_theta_always_wrapped():
    assert Pose2(0, 0, math.pi).theta == pytest.approx(-math.pi)
    p = Pose2(0, 0, 2.0).compose(Pose2(0, 0, 2.0))
    assert -math.pi <= p.theta < math.pi
    assert p.theta == pytest.approx(4.0 - 2 * math.pi, abs=1e-12)


def test_transform_point_examples():
    assert np.allclose(transform_point(Pose2(0, 0, 0), [1, 2]), [1, 2])
    assert np.allclose(transform_point(Pose2(0, 0, math.pi / 2), [1, 0]), [0, 1], atol=1e-15)
    assert np.allclose(transform_point(Pose2(3, 4, math.pi), [1, 1]), [2, 3], atol=1e-15)


def test_transform_point_inverse_roundtrip():
    rng = np.random.default_rng(3)
    for _ in range(100):
        pose = Pose2(*rng.uniform(-5, 5, 2), rng.uniform(-4, 4))
        p = rng.uniform(-2, 2, 2)
        back = transform_point(pose.inverse(), transform_point(pose, p))
        assert np.allclose(back, p, atol=1e-12)


def test_polygon_validation():
    with pytest.raises(ValueError):
        Polygon([[0, 0], [1, 0]])
    with pytest.raises(ValueError):
        Polygon([[0, 0], [0, 1], [1, 0]])  # clockwise
    with pytest.raises(ValueError):
        Polygon([[0, 0], [1, 1], [1, 0], [0, 1]])  # bowtie
    sq = Polygon(SQUARE)
    assert sq.area() == pytest.approx(0.09 ** 2)
    assert np.allclose(sq.centroid(), [0, 0], atol=1e-15)


def test_closest_point_square_examples():
    sq = Polygon(SQUARE)
    eye = Pose2(0, 0, 0)
    p, d, n = closest_point_on_polygon(sq, eye, [0.10, 0.0])
    assert np.allclose(p, [0.045, 0.0], atol=1e-12)
    assert d == pytest.approx(0.055, abs=1e-12)
    assert np.allclose(n, [1, 0])

    p, d, n = closest_point_on_polygon(sq, eye, [0.10, 0.10])
    assert np.allclose(p, [0.045, 0.045], atol=1e-12)
    assert np.allclose(n, [math.sqrt(0.5), math.sqrt(0.5)], atol=1e-12)

    p, d, n = closest_point_on_polygon(sq, eye, [0.0, 0.010])
    assert np.allclose(p, [0.0, 0.045], atol=1e-12)
    assert d == pytest.approx(0.035, abs=1e-12)


def test_closest_point_tie_breaks_to_lowest_edge():
    sq = Polygon(SQUARE)
    _, _, _, edge_idx, _ = sq.closest_point_local(np.zeros(2))
    assert edge_idx == 0


def test_closest_point_posed_query():
    sq = Polygon(SQUARE)
    pose = Pose2(0.3, -0.2, 0.7)
    q = np.array([0.41, -0.13])
    p, d, n = closest_point_on_polygon(sq, pose, q)
    # returned point is on the posed boundary
    q_local = pose.rotation().T @ (p - pose.xy)
    assert abs(max(abs(q_local)) - 0.045) < 1e-12
    assert d == pytest.approx(np.linalg.norm(q - p), abs=1e-12)


def _brute_force_closest(poly, q, n_samples=100_000):
    v0 = poly.vertices
    v1 = np.roll(v0, -1, axis=0)
    lengths = np.linalg.norm(v1 - v0, axis=1)
    total = lengths.sum()
    s = np.linspace(0.0, total, n_samples, endpoint=False)
    cuts = np.concatenate([[0.0], np.cumsum(lengths)])
    edge = np.clip(np.searchsorted(cuts, s, side="right") - 1, 0, len(v0) - 1)
    frac = (s - cuts[edge]) / lengths[edge]
    pts = v0[edge] + frac[:, None] * (v1[edge] - v0[edge])
    d = np.linalg.norm(pts - q, axis=1)
    i = d.argmin()
    return pts[i], d[i]


@pytest.mark.parametrize(
    "verts",
    [
        SQUARE,
        [[0.0, 0.0], [0.08, 0.01], [0.05, 0.05], [0.01, 0.06]],
        # non-convex arrowhead
        [[0.0, 0.0], [0.06, 0.0], [0.02, 0.02], [0.0, 0.06]],
    ],
)
def test_closest_point_matches_brute_force(verts):
    poly = Polygon(verts)
    rng = np.random.default_rng(4)
    perimeter = np.linalg.norm(np.roll(poly.vertices, -1, axis=0) - poly.vertices, axis=1).sum()
    res = perimeter / 100_000  # boundary sampling resolution
    for _ in range(40):
        q = rng.uniform(-0.1, 0.15, 2)
        p, d, _, _, _ = poly.closest_point_local(q)
        p_bf, d_bf = _brute_force_closest(poly, q)
        assert abs(d - d_bf) <= res
        assert np.linalg.norm(p - q) == pytest.approx(d, abs=1e-12)
