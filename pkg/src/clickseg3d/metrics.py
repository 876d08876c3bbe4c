"""Evaluation: IoU@k / NoC@q and their multi-object averages, plus
benchmark sample construction.

Multi-object sessions run under a total budget of M x 20 clicks; k-bar is
total clicks divided by M and objects need not share clicks equally. Every
reported NoC is capped at 20.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInput
from .scene import PointCloud, SceneSample

NOC_CAP = 20
DEFAULT_CLICK_CHECKPOINTS = (1, 2, 3, 5, 10, 15)
DEFAULT_QUALITY_TARGETS = (80, 85, 90)


@dataclass
class EvalProtocol:
    mode: str = "multi"   # single | multi
    per_object_cap: int = NOC_CAP
    quality_targets: tuple = DEFAULT_QUALITY_TARGETS
    click_checkpoints: tuple = DEFAULT_CLICK_CHECKPOINTS

    def __post_init__(self):
        if self.per_object_cap <= 0:
            raise InvalidInput("per-object cap must be positive")


def iou(pred_labels: np.ndarray, gt_labels: np.ndarray, object_id: int) -> float:
    """Binary IoU of one object's mask; empty union counts as 1."""
    pred = np.asarray(pred_labels) == object_id
    gt = np.asarray(gt_labels) == object_id
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def noc_from_trajectory(
    click_counts, ious, quality: float, cap: int = NOC_CAP
) -> int:
    """Smallest click count reaching quality% IoU; `cap` when never reached."""
    click_counts = list(click_counts)
    if any(b <= a for a, b in zip(click_counts, click_counts[1:])):
        raise InvalidInput("click counts must be strictly increasing")
    threshold = quality / 100.0
    for k, v in zip(click_counts, ious):
        if v >= threshold:
            return min(int(k), cap)
    return cap


@dataclass
class MetricTables:
    iou_at_k: dict        # k -> mean IoU-bar over trajectories
    noc_at_q: dict        # q -> mean NoC-bar over trajectories
    per_trajectory: list  # raw per-trajectory entries

    def to_csv(self) -> str:
        ks = sorted(self.iou_at_k)
        qs = sorted(self.noc_at_q)
        header = [f"IoU@{k}" for k in ks] + [f"NoC@{q}" for q in qs]
        values = [f"{self.iou_at_k[k]:.4f}" for k in ks] + [
            f"{self.noc_at_q[q]:.4f}" for q in qs
        ]
        return ",".join(header) + "\n" + ",".join(values) + "\n"

    def report(self) -> str:
        lines = ["Evaluation summary", "------------------"]
        for k in sorted(self.iou_at_k):
            lines.append(f"mean IoU after avg {k} clicks/object: {self.iou_at_k[k]:.4f}")
        for q in sorted(self.noc_at_q):
            lines.append(f"mean clicks/object to reach {q}% IoU: {self.noc_at_q[q]:.4f}")
        lines.append(f"trajectories: {len(self.per_trajectory)}")
        return "\n".join(lines)


def _trajectory_arrays(trajectory):
    counts = np.array([r.total_clicks for r in trajectory.rounds])
    means = np.array([r.mean_iou for r in trajectory.rounds])
    return counts, means


def multi_object_curves(
    trajectories,
    click_checkpoints=DEFAULT_CLICK_CHECKPOINTS,
    quality_targets=DEFAULT_QUALITY_TARGETS,
) -> MetricTables:
    """Aggregate session trajectories into IoU@k-bar and NoC@q-bar tables.

    IoU@k-bar reads the last round with total clicks <= k*M (sessions may
    stop early); NoC@q-bar is the smallest total click count whose mean IoU
    reaches q%, divided by M and capped at 20.
    """
    if not trajectories:
        raise InvalidInput("no trajectories to aggregate")
    per_traj = []
    for t in trajectories:
        counts, means = _trajectory_arrays(t)
        m = t.num_targets
        entry = {"scene_id": t.scene_id, "M": m, "iou_at_k": {}, "noc_at_q": {}}
        for k in click_checkpoints:
            eligible = np.flatnonzero(counts <= k * m)
            entry["iou_at_k"][k] = float(means[eligible[-1]]) if len(eligible) else 0.0
        for q in quality_targets:
            reached = np.flatnonzero(means >= q / 100.0)
            if len(reached):
                entry["noc_at_q"][q] = min(float(counts[reached[0]]) / m, float(NOC_CAP))
            else:
                entry["noc_at_q"][q] = float(NOC_CAP)
        per_traj.append(entry)
    iou_at_k = {
        k: float(np.mean([e["iou_at_k"][k] for e in per_traj]))
        for k in click_checkpoints
    }
    noc_at_q = {
        q: float(np.mean([e["noc_at_q"][q] for e in per_traj]))
        for q in quality_targets
    }
    return MetricTables(iou_at_k=iou_at_k, noc_at_q=noc_at_q, per_trajectory=per_traj)


def build_benchmark(
    scenes: list,
    seed: int,
    max_targets: int = 10,
    nearby_radius: float = 3.0,
) -> tuple[list[SceneSample], list[dict]]:
    """Select up to `max_targets` nearby objects per labeled scene.

    "Nearby" means object centroids within `nearby_radius` meters of a
    randomly chosen seed object. Returns samples plus a manifest suitable
    for release ({scene_id, object_ids, M, seed}).
    """
    rng = np.random.default_rng(seed)
    samples, manifest = [], []
    for idx, scene in enumerate(scenes):
        if isinstance(scene, SceneSample):
            cloud, scene_id = scene.cloud, scene.scene_id or f"scene-{idx}"
        else:
            cloud, scene_id = scene, f"scene-{idx}"
        if cloud.labels is None or cloud.num_objects == 0:
            import warnings

            warnings.warn(f"skipping scene {scene_id}: no labeled objects")
            continue
        object_ids = [int(v) for v in np.unique(cloud.labels) if v > 0]
        centroids = {
            oid: cloud.points[cloud.labels == oid].mean(axis=0) for oid in object_ids
        }
        anchor = object_ids[rng.integers(len(object_ids))]
        nearby = [
            oid for oid in object_ids
            if np.linalg.norm(centroids[oid] - centroids[anchor]) <= nearby_radius
        ]
        m = int(rng.integers(1, min(max_targets, len(nearby)) + 1))
        chosen = sorted(rng.choice(nearby, size=m, replace=False).tolist())
        samples.append(SceneSample(cloud=cloud, target_object_ids=chosen, scene_id=scene_id))
        manifest.append(
            {"scene_id": scene_id, "object_ids": chosen, "M": m, "seed": int(seed)}
        )
    return samples, manifest


def save_manifest(manifest: list[dict], path):
    Path(path).write_text(json.dumps(manifest, indent=2))


def load_manifest(path) -> list[dict]:
    return json.loads(Path(path).read_text())
