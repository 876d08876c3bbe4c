import numpy as np
import pytest
from scipy import ndimage

from clickseg3d.errors import InvalidInput, NoErrors
from clickseg3d.scene import PointCloud, SceneSample, voxelize
from clickseg3d.simulator import (
    _boundary_depths,
    error_clusters,
    initial_center_clicks,
    next_click,
    sample_training_clicks,
    simulate_session,
)


def _grid_from_keys(keys):
    """Build a grid whose voxel keys are exactly `keys` (unit-ish points)."""
    keys = np.asarray(keys, dtype=np.int64)
    pts = (keys + 0.5) * 0.05
    grid = voxelize(PointCloud(pts, pts.copy()), 0.05)
    # one point per cell, so voxels biject with keys
    assert grid.num_voxels == len(keys)
    return grid


def flood_fill_oracle(keys, error_mask, gt, pred):
    """Count clusters with scipy's 26-connected labeling per (gt, pred) pair."""
    keys = np.asarray(keys)
    total = 0
    sizes = []
    for pair in {(int(g), int(p)) for g, p, e in zip(gt, pred, error_mask) if e}:
        sel = error_mask & (gt == pair[0]) & (pred == pair[1])
        sub = keys[sel]
        span = sub.max(axis=0) - sub.min(axis=0) + 1
        dense = np.zeros(span, dtype=bool)
        for k in sub - sub.min(axis=0):
            dense[tuple(k)] = True
        labeled, n = ndimage.label(dense, structure=np.ones((3, 3, 3)))
        total += n
        for c in range(1, n + 1):
            sizes.append((labeled == c).sum())
    return total, sorted(sizes, reverse=True)


class TestErrorClusters:
    def test_matches_scipy_flood_fill_oracle(self):
        rng = np.random.default_rng(0)
        keys = np.unique(rng.integers(0, 6, size=(150, 3)), axis=0)
        grid = _grid_from_keys(keys)
        gt = rng.integers(0, 3, grid.num_voxels)
        pred = gt.copy()
        flip = rng.random(grid.num_voxels) < 0.4
        pred[flip] = (pred[flip] + rng.integers(1, 3, flip.sum())) % 3
        clusters = error_clusters(pred, gt, grid)
        err = pred != gt
        n_oracle, sizes_oracle = flood_fill_oracle(grid.voxel_keys, err, gt, pred)
        assert len(clusters) == n_oracle
        assert sorted((c.size for c in clusters), reverse=True) == sizes_oracle
        covered = np.concatenate([c.voxel_indices for c in clusters]) if clusters else []
        assert sorted(covered) == sorted(np.flatnonzero(err))

    def test_same_blob_different_pairs_splits(self):
        # one physically connected line of errors, but two (true, pred) pairs
        keys = [[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]]
        grid = _grid_from_keys(keys)
        gt = np.array([1, 1, 2, 2])
        pred = np.array([0, 0, 0, 0])
        clusters = error_clusters(pred, gt, grid)
        assert len(clusters) == 2
        assert {(c.true_region, c.predicted_region) for c in clusters} == {
            (1, 0), (2, 0)
        }

    def test_sorted_by_size_then_min_index(self):
        keys = [[0, 0, 0], [1, 0, 0],       # blob A (size 2)
                [5, 5, 5],                   # blob B (size 1)
                [9, 0, 0], [10, 0, 0]]       # blob C (size 2)
        grid = _grid_from_keys(keys)
        order = np.argsort([tuple(k) for k in grid.voxel_keys])  # identity here
        gt = np.ones(5, dtype=int)
        pred = np.zeros(5, dtype=int)
        clusters = error_clusters(pred, gt, grid)
        assert [c.size for c in clusters] == [2, 2, 1]
        assert clusters[0].voxel_indices.min() < clusters[1].voxel_indices.min()

    def test_center_is_member_nearest_centroid(self):
        keys = [[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0], [4, 0, 0]]
        grid = _grid_from_keys(keys)
        clusters = error_clusters(np.zeros(5, int), np.ones(5, int), grid)
        c = clusters[0]
        centers = grid.voxel_centers[c.voxel_indices]
        d = np.linalg.norm(centers - centers.mean(axis=0), axis=1)
        assert np.linalg.norm(c.center - centers.mean(axis=0)) == d.min()
        assert c.center_index in c.voxel_indices

    def test_mismatched_lengths_rejected(self):
        grid = _grid_from_keys([[0, 0, 0]])
        with pytest.raises(InvalidInput):
            error_clusters(np.zeros(2), np.zeros(1), grid)


class TestNextClick:
    def test_targets_largest_cluster_true_region(self):
        keys = [[0, 0, 0], [3, 0, 0], [4, 0, 0]]
        grid = _grid_from_keys(keys)
        gt = np.array([1, 2, 2])
        clusters = error_clusters(np.zeros(3, int), gt, grid)
        click = next_click(clusters, timestamp=4)
        assert click.region == 2 and click.timestamp == 4

    def test_no_errors_raises(self):
        with pytest.raises(NoErrors):
            next_click([], timestamp=1)


class TestBoundaryDepths:
    def test_line_depth_zero_everywhere(self):
        keys = [[i, 0, 0] for i in range(5)]
        grid = _grid_from_keys(keys)
        clusters = error_clusters(np.zeros(5, int), np.ones(5, int), grid)
        depth = _boundary_depths(clusters[0], grid)
        np.testing.assert_array_equal(depth, 0)

    def test_cube_interior_is_deeper(self):
        keys = [[x, y, z] for x in range(5) for y in range(5) for z in range(5)]
        grid = _grid_from_keys(keys)
        clusters = error_clusters(
            np.zeros(125, int), np.ones(125, int), grid
        )
        c = clusters[0]
        depth = _boundary_depths(c, grid)
        # chebyshev-distance-to-boundary oracle on the 5^3 cube
        k = grid.voxel_keys[c.voxel_indices]
        expect = np.minimum(k, 4 - k).min(axis=1)
        np.testing.assert_array_equal(depth, expect)


class TestSampleTrainingClicks:
    def _setup(self):
        keys = ([[i, 0, 0] for i in range(6)] + [[0, 5, 5], [0, 5, 6]]
                + [[9, 9, 9]])
        grid = _grid_from_keys(keys)
        gt = np.array([1] * 6 + [2] * 2 + [3])
        clusters = error_clusters(np.zeros(9, int), gt, grid)
        return grid, clusters

    def test_deterministic_centers_and_timestamps(self):
        grid, clusters = self._setup()
        clicks = sample_training_clicks(clusters, 2, start_timestamp=7, grid=grid)
        assert len(clicks) == 2
        assert [c.timestamp for c in clicks] == [7, 8]
        assert clicks[0].region == 1  # biggest cluster first
        np.testing.assert_allclose(clicks[0].position, clusters[0].center)

    def test_truncates_to_cluster_count(self):
        grid, clusters = self._setup()
        clicks = sample_training_clicks(clusters, 10, 1, grid)
        assert len(clicks) == len(clusters)

    def test_stochastic_click_is_deep_member(self):
        grid, clusters = self._setup()
        rng = np.random.default_rng(1)
        for _ in range(10):
            clicks = sample_training_clicks(clusters[:1], 1, 1, grid, rng=rng)
            c = clusters[0]
            depth = _boundary_depths(c, grid)
            cutoff = np.quantile(depth, 0.9)
            deep_centers = grid.voxel_centers[c.voxel_indices[depth >= cutoff]]
            assert any(
                np.allclose(clicks[0].position, dc) for dc in deep_centers
            )

    def test_quantile_zero_reaches_boundary_members(self):
        # A 5^3 cube has a strict interior; with depth_quantile=0 the sampler
        # must draw boundary voxels too, while 0.9 never does.
        keys = [[x, y, z] for x in range(5) for y in range(5) for z in range(5)]
        grid = _grid_from_keys(keys)
        clusters = error_clusters(np.zeros(125, int), np.ones(125, int), grid)
        c = clusters[0]
        depth = _boundary_depths(c, grid)
        boundary = {
            tuple(p) for p in grid.voxel_centers[c.voxel_indices[depth == 0]]
        }
        rng = np.random.default_rng(0)
        hits = sum(
            tuple(
                sample_training_clicks(
                    [c], 1, 1, grid, rng=rng, depth_quantile=0.0
                )[0].position
            )
            in boundary
            for _ in range(50)
        )
        assert hits > 0
        for _ in range(20):
            click = sample_training_clicks(
                [c], 1, 1, grid, rng=rng, depth_quantile=0.9
            )[0]
            assert tuple(click.position) not in boundary

    def test_invalid_count(self):
        grid, clusters = self._setup()
        with pytest.raises(InvalidInput):
            sample_training_clicks(clusters, 0, 1, grid)


class TestInitialClicks:
    def test_one_click_per_region_near_centroid(self):
        keys = [[i, 0, 0] for i in range(4)] + [[0, 8, 0], [1, 8, 0]]
        grid = _grid_from_keys(keys)
        regions = np.array([1, 1, 1, 1, 2, 2])
        clicks = initial_center_clicks(grid, regions, 2)
        assert [c.region for c in clicks] == [1, 2]
        assert [c.timestamp for c in clicks] == [1, 2]
        for click in clicks:
            members = grid.voxel_centers[regions == click.region]
            d = np.linalg.norm(members - members.mean(axis=0), axis=1)
            assert np.linalg.norm(
                click.position - members.mean(axis=0)
            ) == pytest.approx(d.min())

    def test_missing_region_rejected(self):
        grid = _grid_from_keys([[0, 0, 0]])
        with pytest.raises(InvalidInput):
            initial_center_clicks(grid, np.array([1]), 2)


class TestSimulateSession:
    def test_rounds_budget_and_backbone_once(self, tiny_model, small_scene):
        sample = small_scene
        trajectory, labels = simulate_session(tiny_model, sample, budget=5)
        assert tiny_model.backbone_calls == 1
        assert trajectory.rounds[0].total_clicks == sample.M
        totals = [r.total_clicks for r in trajectory.rounds]
        assert totals == sorted(totals)
        assert totals[-1] <= 5
        assert len(labels) == len(sample.cloud)

    def test_timestamps_strictly_increase(self, tiny_model, small_scene):
        trajectory, _ = simulate_session(tiny_model, small_scene, budget=5)
        ts = [c.timestamp for c in trajectory.rounds[-1].clicks]
        assert ts == sorted(set(ts))

    def test_budget_must_cover_initial_clicks(self, tiny_model, small_scene):
        with pytest.raises(InvalidInput):
            simulate_session(tiny_model, small_scene, budget=1)

    def test_iou_recorded_each_round(self, tiny_model, small_scene):
        trajectory, _ = simulate_session(tiny_model, small_scene, budget=4)
        for r in trajectory.rounds:
            assert len(r.per_object_iou) == small_scene.M
            assert 0.0 <= r.mean_iou <= 1.0
            assert r.decode_seconds >= 0.0
