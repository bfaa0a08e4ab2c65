import json
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from marl_nav.worldmap import (
    BUNDLED_MAPS,
    LidarConfig,
    MapError,
    Point2,
    Rect,
    WorldMap,
    collides,
    load_map,
    map_from_dict,
    raycast,
    sample_tasks,
    save_map,
    scan,
)
from marl_nav.uavenv import Pose
from oracles import grid_march_raycast

CELLS = (Point2(3, 3), Point2(27, 3), Point2(3, 27), Point2(27, 27))


def empty(size=30.0, cells=CELLS):
    return WorldMap(size, size, (), cells, "empty")


def with_box(*rects):
    return WorldMap(30.0, 30.0, tuple(rects), CELLS, "boxes")


def doc(**overrides):
    d = {
        "name": "t",
        "width": 30,
        "height": 30,
        "obstacles": [{"x_min": 10, "y_min": 10, "x_max": 12, "y_max": 12}],
        "spawn_cells": [{"x": p.x, "y": p.y} for p in CELLS],
    }
    d.update(overrides)
    return d


class TestLoadMap:
    def test_stage1(self):
        m = load_map("stage1_free")
        assert (m.width, m.height, len(m.obstacles), len(m.spawn_cells)) == (30, 30, 0, 8)

    def test_stage2_shares_spawn_cells(self):
        m1, m2 = load_map("stage1_free"), load_map("stage2_obstacles")
        assert (m2.width, m2.height) == (30, 30)
        assert len(m2.obstacles) >= 6
        assert m2.spawn_cells == m1.spawn_cells

    def test_desk_maps_are_15m(self):
        for name in ("desk_free", "desk_obstacles"):
            m = load_map(name)
            assert (m.width, m.height) == (15, 15)
            assert len(m.spawn_cells) == 8

    def test_obstacle_out_of_bounds(self):
        bad = doc(obstacles=[{"x_min": 28, "y_min": 10, "x_max": 31, "y_max": 12}])
        with pytest.raises(MapError, match="out of bounds"):
            map_from_dict(bad)

    @pytest.mark.parametrize(
        "bad,msg",
        [
            (doc(spawn_cells=[{"x": 3, "y": 3}, {"x": 27, "y": 3}, {"x": 3, "y": 27}]), "at least 4"),
            (doc(spawn_cells=[{"x": 11, "y": 11}, {"x": 27, "y": 3}, {"x": 3, "y": 27}, {"x": 27, "y": 27}]), "clearance"),
            (doc(spawn_cells=[{"x": 12.5, "y": 11}, {"x": 27, "y": 3}, {"x": 3, "y": 27}, {"x": 27, "y": 27}]), "clearance"),
            (doc(spawn_cells=[{"x": 0.5, "y": 15}, {"x": 27, "y": 3}, {"x": 3, "y": 27}, {"x": 27, "y": 27}]), "clearance"),
            (doc(extra=1), "unknown top-level"),
            (doc(width=-5), "positive"),
            (doc(obstacles=[{"x_min": 12, "y_min": 10, "x_max": 10, "y_max": 12}]), "degenerate"),
            (doc(obstacles=[{"x_min": 10, "y_min": 10}]), "malformed"),
            (doc(width="thirty"), "number"),
        ],
    )
    def test_invariant_violations(self, bad, msg):
        with pytest.raises(MapError, match=msg):
            map_from_dict(bad)

    def test_missing_file(self, tmp_path):
        with pytest.raises(MapError, match="cannot read"):
            load_map(tmp_path / "nope.json")

    def test_malformed_json(self, tmp_path):
        p = tmp_path / "m.json"
        p.write_text("{not json")
        with pytest.raises(MapError, match="malformed JSON"):
            load_map(p)

    @pytest.mark.parametrize("name", BUNDLED_MAPS)
    def test_round_trip(self, name, tmp_path):
        m = load_map(name)
        save_map(m, tmp_path / "m.json")
        again = load_map(tmp_path / "m.json")
        assert again == m
        assert again.to_dict() == m.to_dict()
        assert json.loads((tmp_path / "m.json").read_text()) == m.to_dict()


class TestRaycast:
    cfg20 = LidarConfig(24, 20.0)

    def test_east_wall(self):
        assert raycast(empty(), Point2(15, 15), 0.0, self.cfg20) == 15.0

    def test_cap(self):
        assert raycast(empty(), Point2(15, 15), 0.0, LidarConfig(24, 10.0)) == 10.0

    def test_obstacle(self):
        m = with_box(Rect(20, 14, 22, 16))
        assert raycast(m, Point2(15, 15), 0.0, self.cfg20) == 5.0

    def test_diagonal_corner(self):
        d = raycast(empty(), Point2(15, 15), math.pi / 4, LidarConfig(24, 30.0))
        assert d == pytest.approx(15 * math.sqrt(2), rel=1e-12)

    def test_axis_parallel_ray_beside_box_misses(self):
        m = with_box(Rect(20, 16, 22, 18))
        assert raycast(m, Point2(15, 15), 0.0, self.cfg20) == 15.0

    def test_box_behind_origin_ignored(self):
        m = with_box(Rect(5, 14, 8, 16))
        assert raycast(m, Point2(15, 15), 0.0, self.cfg20) == 15.0

    def test_origin_outside_arena(self):
        with pytest.raises(ValueError, match="outside"):
            raycast(empty(), Point2(31, 15), 0.0, self.cfg20)

    def test_origin_inside_obstacle(self):
        with pytest.raises(ValueError, match="inside an obstacle"):
            raycast(with_box(Rect(10, 10, 12, 12)), Point2(11, 11), 0.0, self.cfg20)

    def test_matches_grid_march_oracle(self):
        m = load_map("stage2_obstacles")
        rng = np.random.default_rng(7)
        cfg = LidarConfig(24, 10.0)
        origins, angles = [], []
        while len(origins) < 500:
            x, y = rng.uniform(0, 30, 2)
            if not any(r.x_min <= x <= r.x_max and r.y_min <= y <= r.y_max for r in m.obstacles):
                origins.append((x, y))
                angles.append(rng.uniform(-math.pi, math.pi))
        origins = np.array(origins)
        expected = grid_march_raycast(m, origins[:, 0], origins[:, 1], np.array(angles), cfg.max_range)
        got = [raycast(m, Point2(x, y), a, cfg) for (x, y), a in zip(origins, angles)]
        assert np.abs(np.array(got) - expected).max() <= 5e-3

    @settings(max_examples=150, deadline=None)
    @given(
        x=st.floats(0.5, 29.5),
        y=st.floats(0.5, 29.5),
        angle=st.floats(-math.pi, math.pi),
        box=st.tuples(st.floats(1, 25), st.floats(1, 25), st.floats(0.2, 4), st.floats(0.2, 4)),
    )
    def test_adding_obstacle_never_increases_range(self, x, y, angle, box):
        bx, by, w, h = box
        rect = Rect(bx, by, bx + w, by + h)
        if rect.x_min <= x <= rect.x_max and rect.y_min <= y <= rect.y_max:
            return
        cfg = LidarConfig(24, 10.0)
        before = raycast(empty(), Point2(x, y), angle, cfg)
        after = raycast(with_box(rect), Point2(x, y), angle, cfg)
        assert after <= before

    @settings(max_examples=150, deadline=None)
    @given(x=st.floats(0.5, 29.5), y=st.floats(0.5, 29.5), angle=st.floats(-math.pi, math.pi),
           max_range=st.floats(0.5, 50))
    def test_cap_rule(self, x, y, angle, max_range):
        uncapped = raycast(empty(), Point2(x, y), angle, LidarConfig(24, 1e6))
        capped = raycast(empty(), Point2(x, y), angle, LidarConfig(24, max_range))
        assert 0 < capped <= max_range
        assert capped == min(uncapped, max_range)


class TestScan:
    def test_symmetric_room(self):
        r = scan(empty(), Pose(15, 15, 0), LidarConfig(4, 20.0, 2 * math.pi))
        assert list(r) == [15.0, 15.0, 15.0, 15.0]

    def test_single_beam(self):
        cfg = LidarConfig(1, 10.0, math.pi)
        r = scan(empty(), Pose(15, 15, 0.3), cfg)
        assert len(r) == 1
        assert r[0] == raycast(empty(), Point2(15, 15), 0.3 - math.pi / 2, cfg)

    def test_beam_angles(self):
        cfg = LidarConfig(8, 10.0, math.pi)
        offs = cfg.beam_offsets()
        assert offs[0] == -math.pi / 2
        assert np.allclose(np.diff(offs), math.pi / 8)

    def test_equals_per_beam_raycast(self):
        m = load_map("stage2_obstacles")
        cfg = LidarConfig()
        rng = np.random.default_rng(3)
        checked = 0
        while checked < 50:
            x, y = rng.uniform(0.5, 29.5, 2)
            if collides(m, Point2(x, y), 0.0):
                continue
            pose = Pose(x, y, rng.uniform(-math.pi, math.pi))
            ranges = scan(m, pose, cfg)
            for k in range(cfg.n_beams):
                ang = pose.yaw + cfg.fov * (k / cfg.n_beams) - cfg.fov / 2
                assert ranges[k] == raycast(m, Point2(x, y), ang, cfg)
            checked += 1


class TestCollides:
    def test_open_space(self):
        assert not collides(empty(), Point2(15, 15), 0.3)

    def test_wall(self):
        assert collides(empty(), Point2(0.1, 15), 0.3)

    def test_gap_smaller_than_radius(self):
        m = with_box(Rect(20, 14, 22, 16))
        assert collides(m, Point2(20 - 0.29, 15), 0.3)
        assert not collides(m, Point2(20 - 0.31, 15), 0.3)

    def test_corner_distance(self):
        m = with_box(Rect(20, 20, 22, 22))
        assert not collides(m, Point2(19.75, 19.75), 0.3)  # 0.354 m from the corner
        assert collides(m, Point2(19.8, 19.8), 0.3)

    def test_negative_radius(self):
        with pytest.raises(ValueError):
            collides(empty(), Point2(15, 15), -1)


class TestSampleTasks:
    def test_four_cells_permutation(self):
        (s1, g1), (s2, g2) = sample_tasks(empty(), np.random.default_rng(0))
        assert sorted([s1, g1, s2, g2], key=lambda p: (p.x, p.y)) == sorted(CELLS, key=lambda p: (p.x, p.y))

    def test_three_cells_rejected(self):
        m = WorldMap(30, 30, (), CELLS[:3], "x")
        with pytest.raises(MapError):
            sample_tasks(m, np.random.default_rng(0))

    def test_deterministic(self):
        m = load_map("stage1_free")
        a = [sample_tasks(m, np.random.default_rng(5)) for _ in range(2)]
        assert a[0] == a[1]

    def test_uniform_roles(self):
        m = load_map("stage1_free")
        rng = np.random.default_rng(11)
        counts = [Counter() for _ in range(4)]
        n = 10_000
        for _ in range(n):
            (s1, g1), (s2, g2) = sample_tasks(m, rng)
            assert len({s1, g1, s2, g2}) == 4
            for role, cell in enumerate((s1, g1, s2, g2)):
                counts[role][cell] += 1
        for role in counts:
            assert len(role) == 8
            for c in role.values():
                assert abs(c / n - 1 / 8) <= 0.02
