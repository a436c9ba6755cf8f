"""Tests for BEV pillar voxelization and feature-grid coordinates."""

import numpy as np
import pytest

from monovote.bev_grid import (
    GridConfig,
    cell_index,
    cell_indices,
    feature_cell_center,
    feature_coords,
    voxelize,
)
from monovote.errors import ValidationError
from monovote.pointcloud import PointCloud, PseudoPoint


class TestGridConfig:
    def test_default_cell_counts(self):
        cfg = GridConfig()
        assert (cfg.n_x, cfg.n_z) == (500, 440)

    def test_extent_division_is_exact(self):
        # 0.16 has an exact binary quotient against both default extents
        assert 80.0 / 0.16 == 500.0
        assert 70.4 / 0.16 == 440.0

    def test_overrides_shrink_to_stride_friendly_shape(self):
        cfg = GridConfig(n_x_override=496, n_z_override=432)
        assert (cfg.n_x, cfg.n_z) == (496, 432)
        assert cfg.feature_shape == (248, 216)

    def test_default_feature_shape(self):
        assert GridConfig().feature_shape == (250, 220)

    def test_invalid_cell_size_rejected(self):
        with pytest.raises(ValidationError):
            GridConfig(cell_x=0.0)

    def test_inverted_range_rejected(self):
        with pytest.raises(ValidationError):
            GridConfig(z_min=10.0, z_max=5.0)

    def test_nonint_stride_rejected(self):
        with pytest.raises(ValidationError):
            GridConfig(downsample_rate=1.5)


class TestCellIndex:
    def test_first_cell(self):
        cfg = GridConfig()
        p = PseudoPoint(cfg.x_min + 0.08, 0.0, cfg.z_min + 0.08)
        assert cell_index(p, cfg) == (0, 0)

    def test_center_point(self):
        assert cell_index(PseudoPoint(0.0, 0.0, 35.2), GridConfig()) == (250, 220)

    def test_upper_edge_out_of_range(self):
        cfg = GridConfig()
        assert cell_index(PseudoPoint(cfg.x_max, 0.0, 35.2), cfg) is None

    def test_below_range_out(self):
        cfg = GridConfig()
        assert cell_index(PseudoPoint(0.0, 0.0, -0.01), cfg) is None

    def test_vectorized_matches_scalar(self):
        cfg = GridConfig()
        rng = np.random.default_rng(31)
        pts = np.zeros((500, 4))
        pts[:, 0] = rng.uniform(-45, 45, 500)
        pts[:, 1] = rng.uniform(-2, 4, 500)
        pts[:, 2] = rng.uniform(-5, 75, 500)
        i_x, i_z, ok = cell_indices(pts, cfg)
        for k in range(500):
            scalar = cell_index(PseudoPoint(*pts[k, :3]), cfg)
            y_in = cfg.y_min <= pts[k, 1] < cfg.y_max
            if scalar is None or not y_in:
                assert not ok[k]
            else:
                assert ok[k] and (i_x[k], i_z[k]) == scalar


class TestVoxelize:
    def test_empty_cloud(self):
        grid = voxelize(PointCloud.empty(), GridConfig())
        assert len(grid.occupied_cells()) == 0
        assert grid.point_count() == 0

    def test_cap_keeps_exact_subset(self):
        pts = np.tile([0.01, 0.0, 0.01, 0.0], (3, 1))
        pts[:, 1] = [0.1, 0.2, 0.3]  # distinguishable rows
        grid = voxelize(PointCloud(pts), GridConfig(max_points_per_pillar=2))
        (key,) = grid.occupied_cells()
        kept = grid.cell_points(key)
        assert len(kept) == 2
        originals = {tuple(r) for r in pts}
        assert all(tuple(r) in originals for r in kept)

    def test_conservation_and_oracle(self):
        cfg = GridConfig()
        rng = np.random.default_rng(101)
        n = 10_000
        pts = np.zeros((n, 4))
        pts[:, 0] = rng.uniform(cfg.x_min, cfg.x_max - 1e-9, n)
        pts[:, 1] = rng.uniform(cfg.y_min, cfg.y_max - 1e-9, n)
        pts[:, 2] = rng.uniform(cfg.z_min, cfg.z_max - 1e-9, n)
        grid = voxelize(PointCloud(pts), cfg)
        assert grid.point_count() == n
        expected: dict = {}
        for row in pts:
            key = (int(np.floor((row[0] - cfg.x_min) / cfg.cell_x)),
                   int(np.floor((row[2] - cfg.z_min) / cfg.cell_z)))
            expected.setdefault(key, []).append(row)
        assert set(grid.occupied_cells()) == set(expected)
        for key, rows in expected.items():
            np.testing.assert_array_equal(
                np.sort(grid.cell_points(key), axis=0), np.sort(np.asarray(rows), axis=0)
            )

    def test_out_of_height_window_dropped(self):
        pts = np.array([
            [0.0, -1.0, 35.0, 0.0],  # closed lower y edge: kept
            [0.0, 3.0, 35.0, 0.0],  # open upper y edge: dropped
            [0.0, 5.0, 35.0, 0.0],
        ])
        grid = voxelize(PointCloud(pts), GridConfig())
        assert grid.point_count() == 1

    def test_seed_determinism(self):
        rng = np.random.default_rng(5)
        pts = np.zeros((600, 4))
        pts[:, 0] = rng.uniform(0.0, 0.15, 600)
        pts[:, 2] = rng.uniform(0.0, 0.15, 600)
        cfg = GridConfig(max_points_per_pillar=128)
        a = voxelize(PointCloud(pts), cfg, seed=3)
        b = voxelize(PointCloud(pts), cfg, seed=3)
        (key,) = a.occupied_cells()
        assert len(a.cell_points(key)) == 128
        np.testing.assert_array_equal(a.cell_points(key), b.cell_points(key))


class TestFeatureCoords:
    def test_identity_stride(self):
        assert feature_coords((250, 220), 1) == (250, 220)

    def test_stride_two(self):
        assert feature_coords((250, 220), 2) == (125, 110)

    def test_stride_four_floors(self):
        assert feature_coords((499, 439), 4) == (124, 109)

    def test_invalid_stride_rejected(self):
        with pytest.raises(ValidationError):
            feature_coords((0, 0), 0)

    def test_cell_center_round_trips_through_indexing(self):
        cfg = GridConfig()
        for j in [(0, 0), (125, 110), (249, 219)]:
            x, z = feature_cell_center(j, cfg)
            ix = int(np.floor((x - cfg.x_min) / cfg.cell_x))
            iz = int(np.floor((z - cfg.z_min) / cfg.cell_z))
            assert feature_coords((ix, iz), cfg.downsample_rate) == j

    def test_first_center_position(self):
        cfg = GridConfig()
        x, z = feature_cell_center((0, 0), cfg)
        np.testing.assert_allclose([x, z], [cfg.x_min + 0.16, cfg.z_min + 0.16])
