"""Loss, optimizer, and the multi-object iterative training loop.

Each training step simulates a short annotation session against the
current model: initial center clicks, a few frozen refinement iterations
that sample clicks from the model's own error regions, and one final
iteration with gradients and deep supervision over all decoder layers.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .encoding import Click, nearest_voxel
from .errors import InvalidInput, InvalidLabel
from .fusion import fuse_regions
from .metrics import multi_object_curves
from .model import InteractiveSegmentationModel, region_labels_for_sample
from .scene import SceneSample, devoxelize_labels, voxel_majority_labels
from .simulator import (
    error_clusters,
    initial_center_clicks,
    sample_training_clicks,
    simulate_session,
)


@dataclass
class LossConfig:
    ce_weight: float = 1.0
    dice_weight: float = 2.0
    click_sigma: float = 0.3     # meters; spread of the click-proximity bump
    click_weight_max: float = 2.0
    dice_smoothing: float = 1.0
    deep_supervision: bool = True
    # Extra weight on voxels near a contact boundary between two nonzero
    # regions. Adjacent objects are where label flips are cheapest (small
    # logit margins); upweighting these voxels trains larger margins there.
    # 1.0 disables.
    boundary_weight_max: float = 1.0
    boundary_sigma: float = 0.1  # meters
    # Coefficient of the auxiliary per-click mask loss (0 disables): each
    # user click's raw logit column is supervised as a binary mask of its
    # own region. Max fusion hides a column that overshoots into a
    # neighboring region whenever a sibling column already covers the same
    # area; direct per-column supervision penalizes the overshoot itself.
    per_click_weight: float = 0.0
    # Weight multiplier for voxels that were labeled correctly before the
    # newest clicks were added and wrongly after ("churn"): adding a click
    # must not break what was already right. 1.0 disables.
    churn_weight: float = 1.0

    def __post_init__(self):
        if self.ce_weight < 0 or self.dice_weight < 0:
            raise InvalidInput("loss weights must be non-negative")
        if self.click_sigma <= 0 or self.boundary_sigma <= 0:
            raise InvalidInput("click_sigma and boundary_sigma must be positive")


@dataclass
class IterTrainConfig:
    max_iterations: int = 4               # N_iter
    max_clicks_per_iteration: int = 5     # iteration i samples min(i, this)
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    epochs: int = 10
    lr_decay_factor: float = 0.1
    lr_decay_epoch: int | None = None     # decay after this epoch; None = never
    random_clicks: bool = False           # ablation: uniform object-surface clicks
    stochastic_clicks: bool = True        # perturb sampled click positions
    # Fraction of steps that use the simulated user's deterministic
    # cluster-center click rule instead of stochastic sampling, aligning
    # training with how the simulator actually places clicks at evaluation.
    center_click_prob: float = 0.5
    # Stochastic clicks sample uniformly from cluster members at or above
    # this distance-to-boundary quantile. 0 exposes the model to clicks right
    # at region boundaries, which teaches boundary-precise click responses.
    click_depth_quantile: float = 0.0
    # Probability of supervising the initial center-click round alone
    # (n_iters = 1). A uniform draw over 1..max_iterations trains the
    # one-click-per-object round only 1/max_iterations of the time, yet
    # evaluation sessions spend their cheapest, most valuable clicks there.
    first_round_prob: float = 0.0
    # Curriculum mixing: fraction of steps trained on uniform object-surface
    # clicks (single iteration) instead of a simulated session. Error-driven
    # sessions concentrate supervision on deep, many-click states; mixing in
    # surface-click steps keeps the shallow few-click regime equally well
    # trained. The `random_clicks` ablation is the 1.0 extreme of this.
    surface_click_prob: float = 0.0
    eval_every_epochs: int = 0            # 0 = only at the end
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InvalidInput("max_iterations must be >= 1")

    def clicks_for_iteration(self, i: int) -> int:
        return min(i, self.max_clicks_per_iteration)


def point_weights(clicks: list[Click], grid, config: LossConfig) -> np.ndarray:
    """Per-voxel loss weights: a Gaussian bump around each click.

    w = 1 + (w_max - 1) * exp(-d^2 / sigma^2) with d the distance to the
    nearest click; all ones when there are no clicks.
    """
    n = grid.num_voxels
    if not clicks:
        return np.ones(n)
    positions = np.stack([c.position for c in clicks])
    d2 = np.min(
        np.sum((grid.voxel_centers[:, None, :] - positions[None, :, :]) ** 2, axis=2),
        axis=1,
    )
    return 1.0 + (config.click_weight_max - 1.0) * np.exp(-d2 / config.click_sigma**2)


def contact_boundary_weights(grid, voxel_regions, config: LossConfig) -> np.ndarray:
    """Per-voxel multiplier peaking where two nonzero regions touch.

    A contact voxel is a region voxel with a 26-neighbor belonging to a
    different nonzero region. Weight = 1 + (b_max - 1) * exp(-d^2 / sigma^2)
    with d the distance to the nearest contact voxel center; all ones when
    disabled (b_max = 1) or when no regions touch.
    """
    n = grid.num_voxels
    if config.boundary_weight_max == 1.0:
        return np.ones(n)
    regions = np.asarray(voxel_regions)
    lookup = {tuple(k): i for i, k in enumerate(grid.voxel_keys)}
    offsets = [
        (dx, dy, dz)
        for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)
        if (dx, dy, dz) != (0, 0, 0)
    ]
    contact = []
    for i in np.flatnonzero(regions > 0):
        key = grid.voxel_keys[i]
        for off in offsets:
            j = lookup.get((key[0] + off[0], key[1] + off[1], key[2] + off[2]))
            if j is not None and regions[j] > 0 and regions[j] != regions[i]:
                contact.append(i)
                break
    if not contact:
        return np.ones(n)
    centers = grid.voxel_centers[np.array(contact)]
    d2 = np.min(
        np.sum((grid.voxel_centers[:, None, :] - centers[None, :, :]) ** 2, axis=2),
        axis=1,
    )
    return 1.0 + (config.boundary_weight_max - 1.0) * np.exp(
        -d2 / config.boundary_sigma**2
    )


def segmentation_loss(
    region_logits: ad.Tensor,
    voxel_labels: np.ndarray,
    weights: np.ndarray,
    config: LossConfig,
) -> ad.Tensor:
    """Distance-weighted cross-entropy plus multi-class soft Dice.

    `voxel_labels` index the logits columns (0..M). Dice is one-vs-rest per
    region, averaged, with the click weights applied inside the sums.
    """
    n, r = region_logits.shape
    voxel_labels = np.asarray(voxel_labels)
    if voxel_labels.min(initial=0) < 0 or voxel_labels.max(initial=0) >= r:
        raise InvalidLabel(f"labels must lie in 0..{r - 1}")
    onehot = np.zeros((n, r))
    onehot[np.arange(n), voxel_labels] = 1.0
    w = np.asarray(weights, dtype=np.float64).reshape(n, 1)

    logp = ad.log_softmax(region_logits)
    ce = -(logp * ad.constant(onehot)).sum(axis=1, keepdims=True)
    ce_term = (ad.constant(w) * ce).sum() / float(n)

    probs = ad.softmax(region_logits)
    wp = ad.constant(w) * probs
    eps = config.dice_smoothing
    inter = (wp * ad.constant(onehot)).sum(axis=0)
    den = wp.sum(axis=0) + ad.constant((w * onehot).sum(axis=0))
    dice = 1.0 - ((2.0 * inter + eps) / (den + eps))
    dice_term = dice.mean()

    return config.ce_weight * ce_term + config.dice_weight * dice_term


def per_click_mask_loss(
    logits: ad.Tensor,
    query_regions: np.ndarray,
    num_user: int,
    voxel_regions: np.ndarray,
    weights: np.ndarray,
) -> ad.Tensor:
    """Weighted binary cross-entropy of each user click's raw logit column
    against its own region's ground-truth mask (softplus form, stable for
    large logits)."""
    cols = ad.take_columns(logits, np.arange(num_user))
    regions = np.asarray(query_regions)[:num_user]
    targets = (np.asarray(voxel_regions)[:, None] == regions[None, :]).astype(
        np.float64
    )
    t = ad.constant(targets)
    w = ad.constant(np.asarray(weights, dtype=np.float64).reshape(-1, 1))
    absx = ad.relu(cols) + ad.relu(-cols)
    bce = ad.relu(cols) - cols * t + ad.log(ad.exp(-absx) + 1.0)
    n = targets.shape[0]
    return (w * bce).sum() / float(n * num_user)


def segmentation_loss_with_grad(region_logits_data, voxel_labels, weights, config):
    """Contract helper: scalar loss and its analytic gradient w.r.t. logits."""
    t = ad.Tensor(region_logits_data, requires_grad=True)
    loss = segmentation_loss(t, voxel_labels, weights, config)
    loss.backward()
    return float(loss.data), t.grad


class AdamW:
    """Decoupled weight decay Adam over a name->Tensor parameter dict."""

    def __init__(self, params: dict, lr=1e-4, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=1e-4):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        self.t += 1
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g**2
            mhat = self.m[k] / (1 - self.b1**self.t)
            vhat = self.v[k] / (1 - self.b2**self.t)
            p.data -= self.lr * (
                mhat / (np.sqrt(vhat) + self.eps) + self.weight_decay * p.data
            )

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()


def _sample_cache(model, sample: SceneSample):
    """Voxelization and ground-truth relabeling are pure; cache per sample."""
    cache = getattr(sample, "_train_cache", None)
    if cache is None or cache["voxel_size"] != model.config.voxel_size:
        grid = model.voxelize(sample.cloud)
        point_regions = region_labels_for_sample(sample.cloud, sample.target_object_ids)
        voxel_regions = voxel_majority_labels(grid, point_regions)
        cache = {
            "voxel_size": model.config.voxel_size,
            "grid": grid,
            "voxel_regions": voxel_regions,
        }
        sample._train_cache = cache
    return cache["grid"], cache["voxel_regions"]


def _random_surface_clicks(grid, voxel_regions, num_targets, rng):
    """Ablation path: uniform clicks on object voxels instead of error regions."""
    clicks = []
    ts = 1
    for region in range(1, num_targets + 1):
        members = np.flatnonzero(voxel_regions == region)
        clicks.append(
            Click(position=grid.voxel_centers[rng.choice(members)],
                  region=region, timestamp=ts)
        )
        ts += 1
    extra = rng.integers(0, 2 * num_targets + 1)
    for _ in range(extra):
        region = int(rng.integers(0, num_targets + 1))
        members = np.flatnonzero(voxel_regions == region)
        if len(members) == 0:
            continue
        clicks.append(
            Click(position=grid.voxel_centers[rng.choice(members)],
                  region=region, timestamp=ts)
        )
        ts += 1
    return clicks


def iterative_training_step(
    model: InteractiveSegmentationModel,
    sample: SceneSample,
    config: IterTrainConfig,
    optimizer: AdamW,
    rng: np.random.Generator,
) -> dict:
    """One optimizer step on one scene; returns a log record."""
    grid, voxel_regions = _sample_cache(model, sample)
    m = sample.M
    region_ids = list(range(m + 1))

    n_iters = int(rng.integers(1, config.max_iterations + 1))
    prev_labels = None
    use_surface = config.random_clicks or (
        config.surface_click_prob > 0.0
        and rng.random() < config.surface_click_prob
    )
    if use_surface:
        clicks = _random_surface_clicks(grid, voxel_regions, m, rng)
        n_iters = 1
    else:
        if config.first_round_prob > 0.0 and rng.random() < config.first_round_prob:
            n_iters = 1
        clicks = initial_center_clicks(grid, voxel_regions, m)
        use_center_clicks = (
            not config.stochastic_clicks or rng.random() < config.center_click_prob
        )
        with ad.no_grad():
            if n_iters > 1:
                features = model.forward_backbone(grid)
                scene_pos = model.scene_positional(grid)
            for i in range(1, n_iters):
                result = model.decode(
                    grid, features, clicks, region_ids=region_ids,
                    scene_positional=scene_pos,
                )
                prev_labels = result.mask.labels
                clusters = error_clusters(result.mask.labels, voxel_regions, grid)
                if not clusters:
                    break
                new = sample_training_clicks(
                    clusters,
                    config.clicks_for_iteration(i),
                    start_timestamp=len(clicks) + 1,
                    grid=grid,
                    rng=None if use_center_clicks else rng,
                    depth_quantile=config.click_depth_quantile,
                )
                clicks = clicks + new

    # final iteration: gradients on
    optimizer.zero_grad()
    features = model.forward_backbone(grid)
    result = model.decode(grid, features, clicks, region_ids=region_ids)
    weights = point_weights(clicks, grid, config.loss)
    if config.loss.boundary_weight_max != 1.0:
        cache = sample._train_cache
        bkey = (config.loss.boundary_weight_max, config.loss.boundary_sigma)
        if cache.get("boundary_key") != bkey:
            cache["boundary_key"] = bkey
            cache["boundary_weights"] = contact_boundary_weights(
                grid, voxel_regions, config.loss
            )
        weights = weights * cache["boundary_weights"]
    if config.loss.churn_weight != 1.0 and prev_labels is not None:
        churned = (prev_labels == voxel_regions) & (
            result.mask.labels != voxel_regions
        )
        weights = weights * np.where(churned, config.loss.churn_weight, 1.0)
    layer_logits = (
        result.decoder_output.layer_logits
        if config.loss.deep_supervision
        else result.decoder_output.layer_logits[-1:]
    )
    losses = []
    for logits in layer_logits:
        fused = fuse_regions(
            logits, result.query_regions, region_ids, model.config.fusion_mode
        )
        losses.append(segmentation_loss(fused, voxel_regions, weights, config.loss))
    loss = losses[0]
    for extra in losses[1:]:
        loss = loss + extra
    loss = loss / float(len(losses))
    if config.loss.per_click_weight > 0.0 and clicks and not model.config.early_fusion:
        loss = loss + config.loss.per_click_weight * per_click_mask_loss(
            result.decoder_output.layer_logits[-1],
            result.query_regions,
            len(clicks),
            voxel_regions,
            weights,
        )
    loss.backward()
    optimizer.step()
    return {
        "loss": float(loss.data),
        "num_clicks": len(clicks),
        "iterations": n_iters,
        "num_voxels": grid.num_voxels,
        "M": m,
    }


@dataclass
class TrainResult:
    model: InteractiveSegmentationModel
    history: list
    best_iou_at_5: float
    best_checkpoint: str | None


def evaluate_on_samples(model, samples, budget_per_object=20):
    trajectories = []
    for s in samples:
        traj, _ = simulate_session(model, s, budget=s.M * budget_per_object)
        trajectories.append(traj)
    return multi_object_curves(trajectories)


def train(
    dataset: list[SceneSample],
    config: IterTrainConfig,
    model: InteractiveSegmentationModel | None = None,
    val_samples: list[SceneSample] | None = None,
    seed: int = 0,
    checkpoint_path=None,
    log_path=None,
) -> TrainResult:
    """Epoch loop with shuffling; keeps the checkpoint best by mean IoU@5-bar."""
    if not dataset:
        raise InvalidInput("training dataset is empty")
    if model is None:
        model = InteractiveSegmentationModel(seed=seed)
    rng = np.random.default_rng(seed)
    optimizer = AdamW(
        model.parameters(),
        lr=config.learning_rate,
        betas=config.betas,
        eps=config.eps,
        weight_decay=config.weight_decay,
    )
    history = []
    best_iou = -1.0
    best_path = None
    log_file = open(log_path, "a") if log_path else None
    step = 0
    try:
        for epoch in range(config.epochs):
            if config.lr_decay_epoch is not None and epoch == config.lr_decay_epoch:
                optimizer.lr *= config.lr_decay_factor
            order = rng.permutation(len(dataset))
            for idx in order:
                t0 = time.perf_counter()
                record = iterative_training_step(
                    model, dataset[idx], config, optimizer, rng
                )
                if not np.isfinite(record["loss"]):
                    raise FloatingPointError(
                        f"loss diverged at step {step} (scene {idx}): {record}"
                    )
                record.update(
                    step=step, epoch=epoch, scene=int(idx),
                    seconds=time.perf_counter() - t0,
                )
                history.append(record)
                if log_file:
                    log_file.write(json.dumps(record) + "\n")
                step += 1
            run_eval = val_samples and (
                (config.eval_every_epochs and (epoch + 1) % config.eval_every_epochs == 0)
                or epoch == config.epochs - 1
            )
            if run_eval:
                tables = evaluate_on_samples(model, val_samples)
                iou5 = tables.iou_at_k.get(5, 0.0)
                record = {"epoch": epoch, "val_iou_at_5": iou5,
                          "val_noc_at_85": tables.noc_at_q.get(85)}
                history.append(record)
                if log_file:
                    log_file.write(json.dumps(record) + "\n")
                if iou5 > best_iou:
                    best_iou = iou5
                    if checkpoint_path:
                        model.save(checkpoint_path)
                        best_path = str(checkpoint_path)
        if val_samples is None and checkpoint_path:
            model.save(checkpoint_path)
            best_path = str(checkpoint_path)
    finally:
        if log_file:
            log_file.close()
    return TrainResult(
        model=model, history=history, best_iou_at_5=best_iou, best_checkpoint=best_path
    )
