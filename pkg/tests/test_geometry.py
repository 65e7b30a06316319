"""Geometric primitive tests: pose algebra, rotated-box GIoU against an
independent voxel oracle, and ray intersections against brute-force checks."""

import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from oanav.geometry import (OrientedBox3, Pose3, YawPose, box_giou3d,
                            box_intersection_volume, compose, ray_aabb_hit,
                            ray_triangle_hit, wrap_angle)


def random_pose(rng) -> Pose3:
    rot = Rotation.random(random_state=int(rng.integers(0, 2**31))).as_matrix()
    return Pose3(rot, rng.uniform(-5, 5, 3))


class TestPoseAlgebra:
    def test_identity_compose(self):
        rng = np.random.default_rng(0)
        p = random_pose(rng)
        q = compose(Pose3.identity(), p)
        assert np.allclose(q.rotation, p.rotation, atol=1e-12)
        assert np.allclose(q.translation, p.translation, atol=1e-12)

    def test_inverse_law(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            p = random_pose(rng)
            ident = compose(p, p.inverse())
            assert np.abs(ident.rotation - np.eye(3)).max() < 1e-9
            assert np.abs(ident.translation).max() < 1e-9

    def test_group_laws_random(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            a, b = random_pose(rng), random_pose(rng)
            pt = rng.uniform(-2, 2, 3)
            lhs = compose(a, b).apply(pt)
            rhs = a.apply(b.apply(pt))
            assert np.abs(lhs - rhs).max() < 1e-9
            assert compose(a, b).is_valid(1e-9)

    def test_yaw_rotation_axis(self):
        p = Pose3.from_yaw(math.pi / 2)
        assert np.allclose(p.apply(np.array([1.0, 0, 0])), [0, 1, 0],
                           atol=1e-12)

    def test_yawpose_roundtrip(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            yp = YawPose(*rng.uniform(-4, 4, 3), rng.uniform(-math.pi, math.pi))
            back = YawPose.from_pose3(yp.to_pose3())
            assert abs(back.x - yp.x) < 1e-9
            assert abs(back.y - yp.y) < 1e-9
            assert abs(back.z - yp.z) < 1e-9
            assert abs(wrap_angle(back.yaw - yp.yaw)) < 1e-9

    def test_wrap_angle_range(self):
        for a in np.linspace(-20, 20, 1001):
            w = wrap_angle(a)
            assert -math.pi <= w < math.pi
            assert abs(math.sin(w - a)) < 1e-9


class TestOrientedBox:
    def test_corners_reconstruct(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            box = OrientedBox3(rng.uniform(-3, 3, 3), rng.uniform(0.2, 2, 3),
                               rng.uniform(-math.pi, math.pi))
            cs = box.corners()
            assert np.abs(cs.mean(axis=0) - box.center).max() < 1e-9
            assert abs(cs[:, 2].max() - cs[:, 2].min() - box.size[2]) < 1e-9
            assert abs(box.volume - np.prod(box.size)) < 1e-9

    def test_positive_size_required(self):
        with pytest.raises(ValueError):
            OrientedBox3([0, 0, 0], [1, 0, 1], 0.0)


# ---------------------------------------------------------------------------
# GIoU with voxel oracle
# ---------------------------------------------------------------------------

def _voxel_intersection(a: OrientedBox3, b: OrientedBox3,
                        resolution: float = 0.005) -> float:
    """Intersection volume by testing voxel centers inside both boxes."""
    lo = np.maximum(a.aabb()[0], b.aabb()[0])
    hi = np.minimum(a.aabb()[1], b.aabb()[1])
    if np.any(hi <= lo):
        return 0.0
    span = hi - lo
    # Cap the grid so worst-case pairs stay tractable.
    res = max(resolution, float((np.prod(span) / 4e6) ** (1 / 3)))
    ns = np.maximum((span / res).astype(int), 1)
    axes = [lo[k] + (np.arange(ns[k]) + 0.5) * span[k] / ns[k]
            for k in range(3)]
    xs, ys, zs = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([xs.ravel(), ys.ravel(), zs.ravel()], axis=1)
    inside = a.contains(pts) & b.contains(pts)
    cell = np.prod(span / ns)
    return float(inside.sum() * cell)


def _oracle_giou(a: OrientedBox3, b: OrientedBox3) -> float:
    inter = _voxel_intersection(a, b)
    union = a.volume + b.volume - inter

    def enclosing(frame):
        rot = np.array([[math.cos(-frame.yaw), -math.sin(-frame.yaw)],
                        [math.sin(-frame.yaw), math.cos(-frame.yaw)]])
        pts = np.vstack([a.corners(), b.corners()])
        xy = (pts[:, :2] - frame.center[:2]) @ rot.T
        ext = xy.max(axis=0) - xy.min(axis=0)
        return ext[0] * ext[1] * (pts[:, 2].max() - pts[:, 2].min())

    vc = min(enclosing(a), enclosing(b))
    return inter / union - (vc - union) / vc


class TestGiou3d:
    def test_identical_is_exactly_one(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            box = OrientedBox3(rng.uniform(-3, 3, 3), rng.uniform(0.3, 2, 3),
                               rng.uniform(-math.pi, math.pi))
            assert box_giou3d(box, box) == 1.0

    def test_far_apart_unit_cubes(self):
        a = OrientedBox3([0, 0, 0.5], [1, 1, 1], 0.0)
        b = OrientedBox3([100, 0, 0.5], [1, 1, 1], 0.0)
        # enclosing box volume 101, union 2
        expected = 0.0 - (101.0 - 2.0) / 101.0
        assert abs(box_giou3d(a, b) - expected) < 1e-12
        assert abs(_oracle_giou(a, b) - expected) < 0.02

    def test_half_shifted_unit_cube(self):
        a = OrientedBox3([0, 0, 0.5], [1, 1, 1], 0.0)
        b = OrientedBox3([0.5, 0, 0.5], [1, 1, 1], 0.0)
        # IoU = 1/3 and the enclosing box (1.5 x 1 x 1) equals the union hull
        assert abs(box_giou3d(a, b) - 1.0 / 3.0) < 1e-12
        assert abs(_oracle_giou(a, b) - 1.0 / 3.0) < 0.02

    def test_voxel_oracle_agreement(self):
        # Acceptance: |giou - oracle| <= 0.02 on 50 random rotated pairs.
        rng = np.random.default_rng(6)
        for _ in range(50):
            a = OrientedBox3(rng.uniform(-0.3, 0.3, 3), rng.uniform(0.3, 2, 3),
                             rng.uniform(-math.pi, math.pi))
            b = OrientedBox3(a.center + rng.uniform(-1.0, 1.0, 3),
                             rng.uniform(0.3, 2, 3),
                             rng.uniform(-math.pi, math.pi))
            assert abs(box_giou3d(a, b) - _oracle_giou(a, b)) <= 0.02

    def test_symmetry(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            a = OrientedBox3(rng.uniform(-1, 1, 3), rng.uniform(0.3, 2, 3),
                             rng.uniform(-math.pi, math.pi))
            b = OrientedBox3(rng.uniform(-1, 1, 3), rng.uniform(0.3, 2, 3),
                             rng.uniform(-math.pi, math.pi))
            assert abs(box_giou3d(a, b) - box_giou3d(b, a)) < 1e-9

    def test_giou_never_exceeds_iou(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            a = OrientedBox3(rng.uniform(-1, 1, 3), rng.uniform(0.3, 1.5, 3),
                             rng.uniform(-math.pi, math.pi))
            b = OrientedBox3(rng.uniform(-1, 1, 3), rng.uniform(0.3, 1.5, 3),
                             rng.uniform(-math.pi, math.pi))
            inter = box_intersection_volume(a, b)
            iou = inter / (a.volume + b.volume - inter)
            assert box_giou3d(a, b) <= iou + 1e-12

    def test_monotone_to_minus_one_with_distance(self):
        a = OrientedBox3([0, 0, 0.5], [1, 1, 1], 0.3)
        prev = 1.0
        for d in (1.0, 3.0, 10.0, 50.0, 300.0):
            g = box_giou3d(a, OrientedBox3([d, 0, 0.5], [1, 1, 1], 0.3))
            assert g < prev
            assert g > -1.0
            prev = g
        assert prev < -0.99

    def test_degenerate_size_errors(self):
        a = OrientedBox3([0, 0, 0], [1, 1, 1], 0.0)
        bad = OrientedBox3([0, 0, 0], [1e-7, 1, 1], 0.0)
        with pytest.raises(ValueError):
            box_giou3d(a, bad)


class TestRayAabb:
    def test_axis_hit(self):
        d = ray_aabb_hit(np.zeros(3), np.array([1.0, 0, 0]),
                         np.array([4.5, -0.5, -0.5]), np.array([5.5, 0.5, 0.5]))
        assert abs(d - 4.5) < 1e-12

    def test_pointing_away(self):
        d = ray_aabb_hit(np.zeros(3), np.array([-1.0, 0, 0]),
                         np.array([4.5, -0.5, -0.5]), np.array([5.5, 0.5, 0.5]))
        assert d is None

    def test_origin_inside_returns_zero(self):
        d = ray_aabb_hit(np.array([5.0, 0, 0]), np.array([1.0, 0, 0]),
                         np.array([4.5, -0.5, -0.5]), np.array([5.5, 0.5, 0.5]))
        assert d == 0.0


def _oracle_ray_triangle(origin, direction, tri):
    """Plane intersection followed by barycentric containment."""
    v0, v1, v2 = tri
    n = np.cross(v1 - v0, v2 - v0)
    denom = float(n @ direction)
    if abs(denom) < 1e-12:
        return None
    t = float(n @ (v0 - origin)) / denom
    if t < 0:
        return None
    p = origin + t * direction
    # barycentric coordinates
    u = v1 - v0
    v = v2 - v0
    w = p - v0
    uu, uv, vv = u @ u, u @ v, v @ v
    wu, wv = w @ u, w @ v
    denom2 = uv * uv - uu * vv
    s = (uv * wv - vv * wu) / denom2
    r = (uv * wu - uu * wv) / denom2
    if s < -1e-12 or r < -1e-12 or s + r > 1 + 1e-12:
        return None
    return t


class TestRayTriangle:
    def test_perpendicular_through_centroid(self):
        tri = np.array([[1.0, 0, 2], [0, 1, 2], [-1, -1, 2]])
        centroid = tri.mean(axis=0)
        origin = np.array([centroid[0], centroid[1], 0.0])
        d = ray_triangle_hit(origin, np.array([0, 0, 1.0]), tri)
        assert abs(d - 2.0) < 1e-12

    def test_parallel_ray_misses(self):
        tri = np.array([[1.0, 0, 2], [0, 1, 2], [-1, -1, 2]])
        assert ray_triangle_hit(np.zeros(3), np.array([1.0, 0, 0]), tri) is None

    def test_against_barycentric_oracle(self):
        rng = np.random.default_rng(9)
        tri = np.array([[0.5, -0.4, 1.1], [-0.3, 0.6, 0.9], [0.1, 0.1, 1.6]])
        centroid = tri.mean(axis=0)
        hits = misses = 0
        for k in range(1000):
            origin = rng.uniform(-1, 1, 3)
            if k % 2 == 0:
                # aim at the triangle neighborhood so both outcomes occur
                target = centroid + rng.normal(0.0, 0.4, 3)
                direction = target - origin
            else:
                direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            got = ray_triangle_hit(origin, direction, tri)
            want = _oracle_ray_triangle(origin, direction, tri)
            assert (got is None) == (want is None)
            if got is not None:
                assert abs(got - want) < 1e-9
                hits += 1
            else:
                misses += 1
        assert hits > 50 and misses > 50
