import math

import numpy as np
import pytest

from scanloc.core import Box2, LidarParams, Pose2, Ray, pose_compose
from scanloc.motion import MotionNoise
from scanloc.sim import (
    TrajectorySpec,
    WorldMap,
    WorldScanSource,
    builtin_worlds,
    cast_ray_exact,
    cast_rays,
    generate_log,
    load_world,
    save_world,
    scan_at,
)

PARAMS = LidarParams(36, -math.pi, math.pi * (1 - 2 / 36), 0.05, 20.0)


def brute_force_range(world, origin, direction, m_min, m_max):
    """Independent oracle: per-segment intersection with naive scalar math."""
    best = None
    ox, oy = origin
    dx, dy = direction
    for x0, y0, x1, y1 in world.segments:
        sx, sy = x1 - x0, y1 - y0
        denom = dx * sy - dy * sx
        qx, qy = x0 - ox, y0 - oy
        if abs(denom) > 1e-12:
            t = (qx * sy - qy * sx) / denom
            u = (qx * dy - qy * dx) / denom
            if 0.0 <= u <= 1.0 and m_min <= t <= m_max:
                if best is None or t < best:
                    best = t
        elif abs(qx * dy - qy * dx) <= 1e-12:
            for ex, ey in ((x0, y0), (x1, y1)):
                t = (ex - ox) * dx + (ey - oy) * dy
                if m_min <= t <= m_max and (best is None or t < best):
                    best = t
    return best


class TestCastRay:
    def test_axis_aligned_wall(self):
        world = WorldMap(np.array([[5.0, -1.0, 5.0, 1.0]]), Box2(-1, -2, 6, 2))
        r = cast_ray_exact(world, Ray([0, 0], [1, 0]), 0.05, 30.0)
        assert r == pytest.approx(5.0)

    def test_miss_is_no_return(self):
        world = WorldMap(np.array([[5.0, -1.0, 5.0, 1.0]]), Box2(-1, -2, 6, 2))
        r = cast_ray_exact(world, Ray([0, 0], [-1, 0]), 0.05, 30.0)
        assert math.isnan(r)

    def test_diagonal_hit(self):
        # 45 degree ray onto the wall x=5 crosses it at (5, 5).
        world = WorldMap(np.array([[5.0, -1.0, 5.0, 6.0]]), Box2(-1, -2, 6, 7))
        d = 1 / math.sqrt(2)
        r = cast_ray_exact(world, Ray([0, 0], [d, d]), 0.05, 30.0)
        assert r == pytest.approx(5 * math.sqrt(2))

    def test_blind_zone_does_not_block(self):
        world = WorldMap(np.array([[1.0, -1.0, 1.0, 1.0],
                                   [5.0, -1.0, 5.0, 1.0]]), Box2(0, -2, 6, 2))
        r = cast_ray_exact(world, Ray([0, 0], [1, 0]), 2.0, 30.0)
        assert r == pytest.approx(5.0)

    def test_collinear_returns_nearest_endpoint(self):
        world = WorldMap(np.array([[2.0, 0.0, 4.0, 0.0]]), Box2(-1, -1, 5, 1))
        r = cast_ray_exact(world, Ray([0, 0], [1, 0]), 0.05, 30.0)
        assert r == pytest.approx(2.0)

    def test_agrees_with_brute_force_on_random_rays(self):
        world = builtin_worlds()["office"]
        rng = np.random.default_rng(11)
        for _ in range(300):
            o = rng.uniform([0.5, 0.5], [9.5, 7.5])
            ang = rng.uniform(-math.pi, math.pi)
            d = np.array([math.cos(ang), math.sin(ang)])
            got = cast_ray_exact(world, Ray(o, d), 0.05, 30.0)
            want = brute_force_range(world, o, d, 0.05, 30.0)
            if want is None:
                assert math.isnan(got)
            else:
                assert got == pytest.approx(want, abs=1e-9)

    def test_batched_matches_scalar(self):
        world = builtin_worlds()["room"]
        rng = np.random.default_rng(5)
        origins = rng.uniform([1, 1], [9, 7], size=(64, 2))
        angs = rng.uniform(-math.pi, math.pi, size=64)
        dirs = np.stack([np.cos(angs), np.sin(angs)], axis=1)
        batch = cast_rays(world, origins, dirs, 0.05, 30.0)
        for i in range(64):
            single = cast_ray_exact(world, Ray(origins[i], dirs[i]), 0.05, 30.0)
            if math.isnan(single):
                assert math.isnan(batch[i])
            else:
                assert batch[i] == pytest.approx(single)


class TestBuiltinWorlds:
    def test_room_has_four_segments(self):
        assert builtin_worlds()["room"].segments.shape[0] == 4

    def test_expected_names(self):
        assert set(builtin_worlds()) == {"room", "office", "corridor-loop"}

    def test_all_segments_inside_bounds(self):
        for world in builtin_worlds().values():
            b = world.bounds
            segs = world.segments
            for x, y in ((segs[:, 0], segs[:, 1]), (segs[:, 2], segs[:, 3])):
                assert np.all(x >= b.x_min) and np.all(x <= b.x_max)
                assert np.all(y >= b.y_min) and np.all(y <= b.y_max)

    def test_room_center_min_range_is_half_short_side(self):
        params = LidarParams(360, -math.pi, math.pi * (1 - 2 / 360), 0.05, 30.0)
        frame = scan_at(builtin_worlds()["room"], Pose2(5, 4, 0), params)
        assert np.nanmin(frame.ranges) == pytest.approx(4.0, abs=1e-6)

    def test_office_doorway_is_open(self):
        # Looking through the 1 m doorway from the left room reaches the far
        # wall (y=4.2 clears the interior wall that starts at y=4).
        world = builtin_worlds()["office"]
        r = cast_ray_exact(world, Ray([2.0, 4.2], [1.0, 0.0]), 0.05, 30.0)
        assert r == pytest.approx(8.0)


class TestWorldValidation:
    def test_rejects_zero_length_segment(self):
        with pytest.raises(ValueError):
            WorldMap(np.array([[1.0, 1.0, 1.0, 1.0]]), Box2(0, 0, 2, 2))

    def test_rejects_out_of_bounds_segment(self):
        with pytest.raises(ValueError):
            WorldMap(np.array([[0.0, 0.0, 5.0, 0.0]]), Box2(0, 0, 2, 2))


class TestGenerateLog:
    def spec(self, **kw):
        defaults = dict(
            waypoints=[Pose2(2, 2, 0), Pose2(8, 2, 0), Pose2(8, 6, math.pi / 2)],
            speed=1.0, scan_rate=5.0)
        defaults.update(kw)
        return TrajectorySpec(**defaults)

    def test_zero_noise_odometry_composes_to_truth(self):
        log = generate_log(builtin_worlds()["room"], self.spec(), PARAMS,
                           np.random.default_rng(0))
        pose = log.true_poses[0]
        for k in range(1, len(log.true_poses)):
            pose = pose_compose(pose, log.odometry[k])
            assert pose.x == pytest.approx(log.true_poses[k].x, abs=1e-9)
            assert pose.y == pytest.approx(log.true_poses[k].y, abs=1e-9)

    def test_zero_range_noise_matches_oracle(self):
        world = builtin_worlds()["room"]
        log = generate_log(world, self.spec(), PARAMS, np.random.default_rng(0))
        for pose, frame in zip(log.true_poses, log.frames):
            oracle = scan_at(world, pose, PARAMS)
            np.testing.assert_array_equal(frame.ranges, oracle.ranges)

    def test_range_noise_std_is_calibrated(self):
        world = builtin_worlds()["room"]
        log = generate_log(world, self.spec(range_noise_std=0.02, scan_rate=20.0),
                           PARAMS, np.random.default_rng(1))
        residuals = []
        for pose, frame in zip(log.true_poses, log.frames):
            oracle = scan_at(world, pose, PARAMS)
            m = frame.valid & oracle.valid
            residuals.append(frame.ranges[m] - oracle.ranges[m])
        std = np.concatenate(residuals).std()
        assert std == pytest.approx(0.02, rel=0.10)

    def test_waypoint_outside_bounds_raises(self):
        with pytest.raises(ValueError):
            generate_log(builtin_worlds()["room"],
                         self.spec(waypoints=[Pose2(2, 2, 0), Pose2(20, 2, 0)]),
                         PARAMS, np.random.default_rng(0))

    def test_deterministic_under_seed(self):
        world = builtin_worlds()["room"]
        spec = self.spec(range_noise_std=0.05, odom_noise=MotionNoise())
        a = generate_log(world, spec, PARAMS, np.random.default_rng(9))
        b = generate_log(world, spec, PARAMS, np.random.default_rng(9))
        for fa, fb in zip(a.frames, b.frames):
            np.testing.assert_array_equal(fa.ranges, fb.ranges)
        for oa, ob in zip(a.odometry, b.odometry):
            assert (oa.x, oa.y, oa.theta) == (ob.x, ob.y, ob.theta)


class TestWorldScanSource:
    def test_matches_scan_at(self):
        world = builtin_worlds()["office"]
        src = WorldScanSource(world, PARAMS)
        poses = np.array([[2.0, 2.0, 0.3], [7.0, 6.0, -1.2]])
        ranges, valid = src.render_poses(poses)
        for i, p in enumerate(poses):
            frame = scan_at(world, Pose2(*p), PARAMS)
            np.testing.assert_array_equal(ranges[i], frame.ranges)
            np.testing.assert_array_equal(valid[i], frame.valid)


class TestWorldFile:
    def test_round_trip_byte_identical(self, tmp_path):
        world = builtin_worlds()["office"]
        p1 = tmp_path / "w1.json"
        p2 = tmp_path / "w2.json"
        save_world(str(p1), world)
        loaded = load_world(str(p1))
        save_world(str(p2), loaded)
        assert p1.read_bytes() == p2.read_bytes()
        np.testing.assert_array_equal(loaded.segments, world.segments)

    def test_rejects_foreign_file(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{"format": "something-else"}')
        with pytest.raises(ValueError):
            load_world(str(p))
