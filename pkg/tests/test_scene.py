import numpy as np
import pytest

from clickseg3d.errors import EmptyScene, GenerationError, InvalidInput, ParseError
from clickseg3d.scene import (
    GeneratorSpec,
    PointCloud,
    devoxelize_labels,
    generate_synthetic_scene,
    load_ply,
    load_scene,
    save_ply,
    save_scene,
    voxel_majority_labels,
    voxelize,
)


class TestVoxelize:
    def test_single_point_single_voxel(self):
        cloud = PointCloud([[0.02, 0.02, 0.02]], [[1.0]])
        grid = voxelize(cloud, 0.05)
        assert grid.num_voxels == 1
        np.testing.assert_array_equal(grid.voxel_keys[0], [0, 0, 0])

    def test_in_cell_mean(self):
        cloud = PointCloud([[0.01, 0, 0], [0.04, 0, 0]], [[1.0], [3.0]])
        grid = voxelize(cloud, 0.05)
        assert grid.num_voxels == 1
        np.testing.assert_allclose(grid.voxel_features[0], [2.0])

    def test_random_cube_matches_hash_set_oracle(self):
        rng = np.random.default_rng(42)
        pts = rng.uniform(0, 1, (1000, 3))
        grid = voxelize(PointCloud(pts, pts.copy()), 0.05)
        # independent oracle: count distinct floor((p - min)/size) keys in a
        # set; the grid normalizes by the scene minimum corner, so the oracle
        # quantizes in the same frame
        lo = pts.min(axis=0)
        keys = {tuple(np.floor((p - lo) / 0.05).astype(int)) for p in pts}
        assert grid.num_voxels == len(keys)
        assert grid.num_voxels <= 8000

    def test_empty_cloud_rejected(self):
        cloud = PointCloud(np.zeros((0, 3)), np.zeros((0, 3)))
        with pytest.raises(EmptyScene):
            voxelize(cloud, 0.05)

    def test_non_finite_coordinate_rejected(self):
        with pytest.raises(InvalidInput):
            PointCloud([[np.nan, 0, 0]], [[0.0]])

    def test_partition_property(self):
        rng = np.random.default_rng(1)
        pts = rng.uniform(-1, 1, (500, 3))
        grid = voxelize(PointCloud(pts, pts.copy()), 0.1)
        counts = np.bincount(grid.point_to_voxel, minlength=grid.num_voxels)
        assert counts.sum() == 500
        assert np.all(counts >= 1)

    def test_idempotence_on_voxel_centers(self):
        rng = np.random.default_rng(2)
        pts = rng.uniform(0, 1, (300, 3))
        grid = voxelize(PointCloud(pts, pts.copy()), 0.05)
        regrid = voxelize(
            PointCloud(grid.voxel_centers, grid.voxel_centers.copy()), 0.05
        )
        assert regrid.num_voxels == grid.num_voxels


class TestDevoxelize:
    def test_all_zero(self, random_cloud):
        grid = voxelize(random_cloud, 0.05)
        out = devoxelize_labels(grid, np.zeros(grid.num_voxels, dtype=int))
        assert np.all(out == 0)

    def test_single_voxel_three_points(self):
        cloud = PointCloud(
            [[0.01, 0, 0], [0.02, 0, 0], [0.03, 0, 0]], np.zeros((3, 1))
        )
        grid = voxelize(cloud, 0.05)
        out = devoxelize_labels(grid, [2])
        np.testing.assert_array_equal(out, [2, 2, 2])

    def test_matches_lookup_oracle(self, random_cloud):
        grid = voxelize(random_cloud, 0.05)
        rng = np.random.default_rng(3)
        vlabels = rng.integers(0, 4, grid.num_voxels)
        out = devoxelize_labels(grid, vlabels)
        for i in range(len(random_cloud)):
            assert out[i] == vlabels[grid.point_to_voxel[i]]

    def test_length_mismatch(self, random_cloud):
        grid = voxelize(random_cloud, 0.05)
        with pytest.raises(InvalidInput):
            devoxelize_labels(grid, np.zeros(grid.num_voxels + 1))


def test_majority_labels_tie_breaks_to_smaller_id():
    cloud = PointCloud(
        [[0.01, 0, 0], [0.02, 0, 0]], np.zeros((2, 1)), labels=[2, 1]
    )
    grid = voxelize(cloud, 0.05)
    assert voxel_majority_labels(grid, cloud.labels)[0] == 1


class TestPlyIO:
    def test_minimal_ascii_ply(self, tmp_path):
        p = tmp_path / "one.ply"
        p.write_text(
            "ply\nformat ascii 1.0\nelement vertex 1\n"
            "property float32 x\nproperty float32 y\nproperty float32 z\n"
            "end_header\n1.0 2.0 3.0\n"
        )
        cloud = load_ply(p)
        assert len(cloud) == 1
        assert cloud.features.shape[1] == 3
        np.testing.assert_allclose(cloud.points[0], [1, 2, 3])

    def test_rgb_uchar_scaled(self, tmp_path):
        p = tmp_path / "rgb.ply"
        p.write_text(
            "ply\nformat ascii 1.0\nelement vertex 1\n"
            "property float32 x\nproperty float32 y\nproperty float32 z\n"
            "property uchar red\nproperty uchar green\nproperty uchar blue\n"
            "end_header\n0 0 0 255 0 51\n"
        )
        cloud = load_ply(p)
        np.testing.assert_allclose(cloud.features[0, 3:], [1.0, 0.0, 0.2])

    @pytest.mark.parametrize("binary", [True, False])
    def test_round_trip_preserves_coordinates(self, tmp_path, binary, random_cloud):
        p = tmp_path / "rt.ply"
        save_ply(random_cloud, p, binary=binary)
        back = load_ply(p)
        np.testing.assert_allclose(back.points, random_cloud.points, atol=1e-6)
        np.testing.assert_array_equal(back.labels, random_cloud.labels)

    def test_malformed_field_count(self, tmp_path):
        p = tmp_path / "bad.ply"
        p.write_text(
            "ply\nformat ascii 1.0\nelement vertex 1\n"
            "property float32 x\nproperty float32 y\nproperty float32 z\n"
            "end_header\n1.0 2.0\n"
        )
        with pytest.raises(ParseError):
            load_ply(p)

    def test_not_a_ply(self, tmp_path):
        p = tmp_path / "junk.ply"
        p.write_bytes(b"nonsense")
        with pytest.raises(ParseError):
            load_ply(p)

    def test_json_round_trip(self, tmp_path, random_cloud):
        p = tmp_path / "scene.json"
        save_scene(random_cloud, p)
        back = load_scene(p)
        np.testing.assert_allclose(back.points, random_cloud.points)
        np.testing.assert_array_equal(back.labels, random_cloud.labels)


class TestGenerator:
    def test_deterministic_for_seed(self):
        a = generate_synthetic_scene(7)
        b = generate_synthetic_scene(7)
        np.testing.assert_array_equal(a.cloud.points, b.cloud.points)
        np.testing.assert_array_equal(a.cloud.features, b.cloud.features)
        np.testing.assert_array_equal(a.cloud.labels, b.cloud.labels)

    def test_zero_objects_rejected(self):
        with pytest.raises(GenerationError):
            generate_synthetic_scene(0, GeneratorSpec(object_count=0))

    def test_object_counts_and_min_points(self):
        spec = GeneratorSpec(object_count=4, min_points=100)
        sample = generate_synthetic_scene(3, spec)
        labels = sample.cloud.labels
        # count oracle over labels
        present = sorted(set(labels.tolist()) - {0})
        assert present == [1, 2, 3, 4]
        for oid in present:
            assert (labels == oid).sum() >= spec.min_points

    def test_every_point_labeled(self):
        sample = generate_synthetic_scene(11)
        assert sample.cloud.labels is not None
        assert len(sample.cloud.labels) == len(sample.cloud)

    def test_label_round_trip_on_pure_scene(self):
        # z_clearance one voxel keeps object voxels disjoint from the floor
        sample = generate_synthetic_scene(
            5, GeneratorSpec(object_count=2, adjacency_prob=0.0, points_per_m2=400)
        )
        grid = voxelize(sample.cloud, 0.05)
        vlabels = voxel_majority_labels(grid, sample.cloud.labels)
        per_voxel_sets = {}
        for i, v in enumerate(grid.point_to_voxel):
            per_voxel_sets.setdefault(v, set()).add(int(sample.cloud.labels[i]))
        pure = all(len(s) == 1 for s in per_voxel_sets.values())
        if pure:
            back = devoxelize_labels(grid, vlabels)
            np.testing.assert_array_equal(back, sample.cloud.labels)
