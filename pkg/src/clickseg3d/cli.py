"""Operator command line: generate data, train, evaluate, simulate, serve,
and export feature visualizations.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
Commands that produce files write them under --out together with a
manifest.json recording config, seed and checkpoint hash.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict
from pathlib import Path

import click
import numpy as np

from . import autodiff as ad
from .errors import ClickSegError, ParseError
from .metrics import build_benchmark, multi_object_curves, save_manifest
from .model import InteractiveSegmentationModel, ModelConfig
from .scene import (
    GeneratorSpec,
    devoxelize_labels,
    generate_synthetic_scene,
    load_scene,
    save_ply,
    save_scene,
)
from .simulator import simulate_session
from .training import IterTrainConfig, LossConfig, train

EXIT_DATA_ERROR = 3
EXIT_NUMERIC_ERROR = 4


def _checkpoint_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def _write_run_manifest(out_dir: Path, record: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(json.dumps(record, indent=2, default=str))


def _load_samples(spec: GeneratorSpec, seeds) -> list:
    return [generate_synthetic_scene(s, spec) for s in seeds]


@click.group()
def main():
    """Interactive 3D segmentation toolkit."""


@main.command()
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Generator spec JSON.")
@click.option("--out", "out_path", type=click.Path(), required=True)
def generate(seed, config_path, out_path):
    """Generate one synthetic labeled scene (PLY or JSON by extension)."""
    try:
        spec = GeneratorSpec.from_json(config_path) if config_path else GeneratorSpec()
        sample = generate_synthetic_scene(seed, spec)
        save_scene(sample.cloud, out_path)
    except ClickSegError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_DATA_ERROR)
    click.echo(
        f"wrote {out_path}: {len(sample.cloud)} points, "
        f"{sample.cloud.num_objects} objects"
    )


@main.command(name="train")
@click.argument("config_path", type=click.Path(exists=True))
@click.option("--out", "out_dir", type=click.Path(), default="train_out",
              show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--ablation", type=click.Choice(
    ["none", "no-c2s", "no-c2c", "no-s2c", "no-masked-attention",
     "random-clicks", "no-spatial", "no-temporal"]),
    default="none", show_default=True)
def cmd_train(config_path, out_dir, seed, ablation):
    """Train a model from a JSON config with model/train/data blocks."""
    out_dir = Path(out_dir)
    try:
        cfg = json.loads(Path(config_path).read_text())
    except json.JSONDecodeError as e:
        click.echo(f"error: bad config JSON: {e}", err=True)
        sys.exit(EXIT_DATA_ERROR)
    model_cfg = ModelConfig.from_dict(
        {**ModelConfig().to_dict(), **cfg.get("model", {})}
    )
    train_block = dict(cfg.get("train", {}))
    loss_block = train_block.pop("loss", {})
    train_cfg = IterTrainConfig(**train_block, loss=LossConfig(**loss_block))
    if ablation == "no-c2s":
        model_cfg.use_c2s = False
    elif ablation == "no-c2c":
        model_cfg.use_c2c = False
    elif ablation == "no-s2c":
        model_cfg.use_s2c = False
    elif ablation == "no-masked-attention":
        model_cfg.masked_attention = False
    elif ablation == "no-spatial":
        model_cfg.spatial_weight = 0.0
    elif ablation == "no-temporal":
        model_cfg.temporal_weight = 0.0
    elif ablation == "random-clicks":
        train_cfg.random_clicks = True

    data = cfg.get("data", {})
    gen_spec = GeneratorSpec(**data.get("generator", {}))
    train_seeds = range(data.get("train_scenes", 50))
    val_seeds = range(10_000, 10_000 + data.get("val_scenes", 10))
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / "checkpoint.npz"
    try:
        result = train(
            _load_samples(gen_spec, train_seeds),
            train_cfg,
            model=InteractiveSegmentationModel(model_cfg, seed=seed),
            val_samples=_load_samples(gen_spec, val_seeds),
            seed=seed,
            checkpoint_path=ckpt,
            log_path=out_dir / "metrics.jsonl",
        )
    except FloatingPointError as e:
        click.echo(f"error: training diverged: {e}", err=True)
        sys.exit(EXIT_NUMERIC_ERROR)
    except ClickSegError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_DATA_ERROR)
    _write_run_manifest(out_dir, {
        "command": "train",
        "seed": seed,
        "ablation": ablation,
        "config": cfg,
        "model_config": model_cfg.to_dict(),
        "best_iou_at_5": result.best_iou_at_5,
        "checkpoint": str(ckpt),
        "checkpoint_hash": _checkpoint_hash(ckpt) if ckpt.exists() else None,
    })
    click.echo(f"checkpoint: {ckpt} (best IoU@5-bar {result.best_iou_at_5:.3f})")


@main.command(name="eval")
@click.argument("checkpoint", type=click.Path(exists=True))
@click.option("--scenes", type=int, default=20, show_default=True,
              help="Number of held-out synthetic scenes.")
@click.option("--seed", type=int, default=20_000, show_default=True)
@click.option("--objects", type=int, default=3, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), default="eval_out",
              show_default=True)
def cmd_eval(checkpoint, scenes, seed, objects, out_dir):
    """Evaluate a checkpoint: IoU@k-bar and NoC@q-bar tables."""
    out_dir = Path(out_dir)
    try:
        model = InteractiveSegmentationModel.load(checkpoint)
    except (ValueError, OSError) as e:
        click.echo(f"error: cannot load checkpoint: {e}", err=True)
        sys.exit(EXIT_DATA_ERROR)
    spec = GeneratorSpec(object_count=objects)
    samples = _load_samples(spec, range(seed, seed + scenes))
    trajectories = [simulate_session(model, s)[0] for s in samples]
    tables = multi_object_curves(trajectories)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "results.csv").write_text(tables.to_csv())
    (out_dir / "report.txt").write_text(tables.report() + "\n")
    _write_run_manifest(out_dir, {
        "command": "eval",
        "seed": seed,
        "checkpoint": str(checkpoint),
        "checkpoint_hash": _checkpoint_hash(checkpoint),
        "scenes": scenes,
    })
    click.echo(tables.report())


@main.command(name="simulate")
@click.argument("checkpoint", type=click.Path(exists=True))
@click.argument("scene_path", type=click.Path(exists=True))
@click.option("--budget", type=int, default=None, help="Total click budget.")
@click.option("--targets", type=str, default=None,
              help="Comma-separated object ids; default: all objects.")
@click.option("--out", "out_dir", type=click.Path(), default="simulate_out",
              show_default=True)
@click.option("--mask-ply/--no-mask-ply", default=False, show_default=True)
def cmd_simulate(checkpoint, scene_path, budget, targets, out_dir, mask_ply):
    """Run a simulated annotation session; writes a trajectory JSONL."""
    out_dir = Path(out_dir)
    try:
        model = InteractiveSegmentationModel.load(checkpoint)
        cloud = load_scene(scene_path)
        if cloud.labels is None:
            raise ParseError("scene carries no ground-truth labels")
        from .scene import SceneSample

        if targets:
            ids = [int(t) for t in targets.split(",")]
        else:
            ids = [int(v) for v in np.unique(cloud.labels) if v > 0][:10]
        sample = SceneSample(cloud=cloud, target_object_ids=ids,
                             scene_id=Path(scene_path).stem)
        trajectory, labels = simulate_session(model, sample, budget=budget)
    except ClickSegError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_DATA_ERROR)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "trajectory.jsonl", "w") as f:
        for r in trajectory.rounds:
            f.write(json.dumps(r.to_json()) + "\n")
    if mask_ply:
        save_ply(cloud, out_dir / "mask.ply", binary=True, labels=labels)
    _write_run_manifest(out_dir, {
        "command": "simulate",
        "checkpoint": str(checkpoint),
        "checkpoint_hash": _checkpoint_hash(checkpoint),
        "scene": str(scene_path),
        "budget": budget,
        "final_mean_iou": trajectory.final_mean_iou,
        "backbone_ms": trajectory.backbone_seconds * 1000.0,
    })
    click.echo(
        f"{len(trajectory.rounds)} rounds, final mean IoU "
        f"{trajectory.final_mean_iou:.3f}"
    )


@main.command(name="features-pca")
@click.argument("checkpoint", type=click.Path(exists=True))
@click.argument("scene_path", type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path(), required=True)
def cmd_features_pca(checkpoint, scene_path, out_path):
    """Color a scene by the top-3 PCA directions of its backbone features."""
    try:
        model = InteractiveSegmentationModel.load(checkpoint)
        cloud = load_scene(scene_path)
        with ad.no_grad():
            grid = model.voxelize(cloud)
            features = model.forward_backbone(grid).data
    except ClickSegError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_DATA_ERROR)
    centered = features - features.mean(axis=0)
    # SVD principal components; constant features degrade to a single color
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    proj = centered @ vt[:3].T
    span = proj.max(axis=0) - proj.min(axis=0)
    span[span == 0] = 1.0
    rgb = (proj - proj.min(axis=0)) / span
    point_rgb = rgb[grid.point_to_voxel]
    from .scene import PointCloud

    colored = PointCloud(cloud.points, np.hstack([cloud.points, point_rgb]))
    save_ply(colored, out_path, binary=True)
    click.echo(f"wrote {out_path} ({len(colored)} points)")


@main.command(name="bench-manifest")
@click.option("--scenes", type=int, default=20, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--objects", type=int, default=6, show_default=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
def cmd_bench_manifest(scenes, seed, objects, out_path):
    """Build a benchmark manifest over synthetic scenes."""
    spec = GeneratorSpec(object_count=objects)
    clouds = [generate_synthetic_scene(s, spec) for s in range(seed, seed + scenes)]
    _, manifest = build_benchmark(clouds, seed=seed)
    save_manifest(manifest, out_path)
    click.echo(f"wrote {out_path}: {len(manifest)} samples")


@main.command(name="serve")
@click.argument("checkpoint", type=click.Path(exists=True))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--max-points", type=int, default=500_000, show_default=True)
def cmd_serve(checkpoint, host, port, max_points):
    """Serve the annotation HTTP API for the browser UI."""
    from .service import serve

    serve(checkpoint, host=host, port=port, max_points=max_points)


if __name__ == "__main__":
    main()
