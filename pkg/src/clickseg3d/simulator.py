"""Simulated user: error-cluster extraction and click sampling.

Mislabeled voxels are grouped into connected components (26-neighborhood
over voxel keys), split by their (true, predicted) label pair so that one
physical blob confusing two objects yields per-object clicks. The next
click lands at the center of the largest cluster and carries the cluster's
true region index.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .encoding import Click
from .errors import InvalidInput, NoErrors
from .metrics import iou
from .model import InteractiveSegmentationModel, region_labels_for_sample
from .scene import SceneSample, VoxelGrid, devoxelize_labels, voxel_majority_labels

_NEIGHBOR_OFFSETS = np.array(
    [(dx, dy, dz)
     for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)
     if (dx, dy, dz) != (0, 0, 0)],
    dtype=np.int64,
)


@dataclass
class ErrorCluster:
    voxel_indices: np.ndarray
    true_region: int
    predicted_region: int
    center_index: int           # member voxel nearest the cluster centroid
    center: np.ndarray          # that voxel's center, meters

    @property
    def size(self) -> int:
        return len(self.voxel_indices)


def _connected_components(keys: np.ndarray) -> list[np.ndarray]:
    """26-connected components of a voxel key set; hash-set BFS."""
    lookup = {tuple(k): i for i, k in enumerate(keys)}
    seen = np.zeros(len(keys), dtype=bool)
    components = []
    for start in range(len(keys)):
        if seen[start]:
            continue
        stack = [start]
        seen[start] = True
        members = []
        while stack:
            i = stack.pop()
            members.append(i)
            for off in _NEIGHBOR_OFFSETS:
                j = lookup.get(tuple(keys[i] + off))
                if j is not None and not seen[j]:
                    seen[j] = True
                    stack.append(j)
        components.append(np.array(sorted(members)))
    return components


def error_clusters(
    pred_labels: np.ndarray, gt_labels: np.ndarray, grid: VoxelGrid
) -> list[ErrorCluster]:
    """Clusters of mislabeled voxels, sorted by size desc then min index."""
    pred_labels = np.asarray(pred_labels)
    gt_labels = np.asarray(gt_labels)
    if len(pred_labels) != grid.num_voxels or len(gt_labels) != grid.num_voxels:
        raise InvalidInput("label arrays must align with the grid")
    wrong = np.flatnonzero(pred_labels != gt_labels)
    clusters = []
    pairs = {(int(gt_labels[i]), int(pred_labels[i])) for i in wrong}
    for true_r, pred_r in sorted(pairs):
        subset = wrong[(gt_labels[wrong] == true_r) & (pred_labels[wrong] == pred_r)]
        for comp in _connected_components(grid.voxel_keys[subset]):
            members = subset[comp]
            centers = grid.voxel_centers[members]
            centroid = centers.mean(axis=0)
            local = int(np.argmin(np.sum((centers - centroid) ** 2, axis=1)))
            clusters.append(
                ErrorCluster(
                    voxel_indices=members,
                    true_region=true_r,
                    predicted_region=pred_r,
                    center_index=int(members[local]),
                    center=centers[local],
                )
            )
    clusters.sort(key=lambda c: (-c.size, int(c.voxel_indices.min())))
    return clusters


def next_click(clusters: list[ErrorCluster], timestamp: int) -> Click:
    """Click at the largest cluster's center, labeled with its true region."""
    if not clusters:
        raise NoErrors("prediction matches ground truth")
    top = clusters[0]
    return Click(position=top.center, region=top.true_region, timestamp=timestamp)


def _boundary_depths(cluster: ErrorCluster, grid: VoxelGrid) -> np.ndarray:
    """Graph distance of each member to the cluster boundary (26-adjacency)."""
    members = cluster.voxel_indices
    keys = grid.voxel_keys[members]
    lookup = {tuple(k): i for i, k in enumerate(keys)}
    depth = np.full(len(members), -1, dtype=np.int64)
    frontier = []
    for i, k in enumerate(keys):
        for off in _NEIGHBOR_OFFSETS:
            if tuple(k + off) not in lookup:
                depth[i] = 0
                frontier.append(i)
                break
    d = 0
    while frontier:
        nxt = []
        for i in frontier:
            for off in _NEIGHBOR_OFFSETS:
                j = lookup.get(tuple(keys[i] + off))
                if j is not None and depth[j] < 0:
                    depth[j] = d + 1
                    nxt.append(j)
        frontier = nxt
        d += 1
    return depth


def sample_training_clicks(
    clusters: list[ErrorCluster],
    n_clicks: int,
    start_timestamp: int,
    grid: VoxelGrid,
    rng: np.random.Generator | None = None,
    depth_quantile: float = 0.9,
) -> list[Click]:
    """One click from each of the top min(n_clicks, |clusters|) clusters.

    With an rng (stochastic training mode) the click is a uniformly random
    member from the part of the cluster at or above `depth_quantile` of the
    distance-to-boundary field (0 = anywhere in the cluster, 0.9 = deepest
    decile); without an rng, the exact center.
    """
    if n_clicks < 1:
        raise InvalidInput("n_clicks must be >= 1")
    clicks = []
    ts = start_timestamp
    for cluster in clusters[:n_clicks]:
        if rng is None:
            pos = cluster.center
        else:
            depth = _boundary_depths(cluster, grid)
            cutoff = np.quantile(depth, depth_quantile)
            deep = cluster.voxel_indices[depth >= cutoff]
            pos = grid.voxel_centers[rng.choice(deep)]
        clicks.append(Click(position=pos, region=cluster.true_region, timestamp=ts))
        ts += 1
    return clicks


def initial_center_clicks(
    grid: VoxelGrid, voxel_regions: np.ndarray, num_targets: int
) -> list[Click]:
    """One click per target at the region voxel nearest the region centroid."""
    clicks = []
    for region in range(1, num_targets + 1):
        members = np.flatnonzero(voxel_regions == region)
        if len(members) == 0:
            raise InvalidInput(f"region {region} has no voxels")
        centers = grid.voxel_centers[members]
        centroid = centers.mean(axis=0)
        local = int(np.argmin(np.sum((centers - centroid) ** 2, axis=1)))
        clicks.append(Click(position=centers[local], region=region, timestamp=region))
    return clicks


@dataclass
class SessionRound:
    round_index: int
    total_clicks: int
    clicks: list
    per_object_iou: list
    mean_iou: float
    decode_seconds: float

    def to_json(self) -> dict:
        return {
            "round": self.round_index,
            "clicks": [c.to_json() for c in self.clicks],
            "per_object_iou": [float(v) for v in self.per_object_iou],
            "mean_iou": float(self.mean_iou),
            "decode_ms": self.decode_seconds * 1000.0,
        }


@dataclass
class SessionTrajectory:
    scene_id: str
    num_targets: int
    rounds: list
    backbone_seconds: float

    @property
    def final_mean_iou(self) -> float:
        return self.rounds[-1].mean_iou if self.rounds else 0.0


def simulate_session(
    model: InteractiveSegmentationModel,
    sample: SceneSample,
    budget: int | None = None,
    stop_iou: float = 1.0,
) -> tuple[SessionTrajectory, np.ndarray]:
    """Run one deterministic annotation session against ground truth.

    Backbone features are computed exactly once; every later round only
    reruns the decoder. Returns the trajectory and the final per-point
    labels (region space).
    """
    m = sample.M
    budget = m * 20 if budget is None else budget
    if budget < m:
        raise InvalidInput("budget must cover the initial clicks")
    point_regions = region_labels_for_sample(sample.cloud, sample.target_object_ids)
    with ad.no_grad():
        grid = model.voxelize(sample.cloud)
        voxel_regions = voxel_majority_labels(grid, point_regions)
        t0 = time.perf_counter()
        features = model.forward_backbone(grid)
        backbone_seconds = time.perf_counter() - t0
        scene_pos = model.scene_positional(grid)

        clicks = initial_center_clicks(grid, voxel_regions, m)
        region_ids = list(range(m + 1))
        rounds = []
        point_labels = None
        round_index = 0
        while True:
            result = model.decode(
                grid, features, clicks, region_ids=region_ids,
                scene_positional=scene_pos,
            )
            point_labels = devoxelize_labels(grid, result.mask.labels)
            per_obj = [
                iou(point_labels, point_regions, region) for region in range(1, m + 1)
            ]
            rounds.append(
                SessionRound(
                    round_index=round_index,
                    total_clicks=len(clicks),
                    clicks=list(clicks),
                    per_object_iou=per_obj,
                    mean_iou=float(np.mean(per_obj)),
                    decode_seconds=result.decode_seconds,
                )
            )
            round_index += 1
            if len(clicks) >= budget or all(v >= stop_iou for v in per_obj):
                break
            clusters = error_clusters(result.mask.labels, voxel_regions, grid)
            if not clusters:
                break
            clicks = clicks + [next_click(clusters, timestamp=len(clicks) + 1)]
    trajectory = SessionTrajectory(
        scene_id=sample.scene_id,
        num_targets=m,
        rounds=rounds,
        backbone_seconds=backbone_seconds,
    )
    return trajectory, point_labels
