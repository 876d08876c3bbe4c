"""Walk through one interactive annotation session, click by click.

The expensive part (sparse U-Net backbone) runs once when the session
starts; every click afterwards only reruns the lightweight decoder. The
simulated user always clicks the center of the largest connected blob of
mislabeled voxels, tagging it with the true region -- the same policy a
careful human approximates.

Run after demo 02 (or any `clickseg3d train` run):
    python3 demos/03_interactive_session.py /tmp/demo_model.npz
"""

import sys

import numpy as np

import clickseg3d.autodiff as ad
from clickseg3d.metrics import iou
from clickseg3d.model import InteractiveSegmentationModel, region_labels_for_sample
from clickseg3d.scene import GeneratorSpec, generate_synthetic_scene, voxel_majority_labels, devoxelize_labels
from clickseg3d.simulator import error_clusters, initial_center_clicks, next_click

ckpt = sys.argv[1] if len(sys.argv) > 1 else "/tmp/demo_model.npz"
model = InteractiveSegmentationModel.load(ckpt)

sample = generate_synthetic_scene(
    123, GeneratorSpec(object_count=3, points_per_m2=400, floor_extent=1.6)
)
m = sample.M
point_regions = region_labels_for_sample(sample.cloud, sample.target_object_ids)

with ad.no_grad():
    grid = model.voxelize(sample.cloud)
    voxel_regions = voxel_majority_labels(grid, point_regions)
    features = model.forward_backbone(grid)          # once per session
    clicks = initial_center_clicks(grid, voxel_regions, m)

    for round_index in range(10):
        result = model.decode(grid, features, clicks, region_ids=list(range(m + 1)))
        labels = devoxelize_labels(grid, result.mask.labels)
        per_obj = [iou(labels, point_regions, r) for r in range(1, m + 1)]
        print(
            f"round {round_index}: {len(clicks):2d} clicks, "
            f"per-object IoU {[f'{v:.2f}' for v in per_obj]}, "
            f"decode {result.decode_seconds * 1000:.0f} ms"
        )
        clusters = error_clusters(result.mask.labels, voxel_regions, grid)
        if not clusters:
            print("prediction matches ground truth -- done")
            break
        click = next_click(clusters, timestamp=len(clicks) + 1)
        print(
            f"  -> user corrects region {click.region} at "
            f"{np.round(click.position, 2)}"
        )
        clicks = clicks + [click]
