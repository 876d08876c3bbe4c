"""Full model assembly: backbone + click queries + decoder + fusion,
plus checkpoint I/O.

The model keeps its parameters in flat name->Tensor dicts so one backward
pass covers every trainable group (backbone, decoder, mask head, learnable
background queries). `forward_backbone` is instrumented with a call
counter so the precompute-once property is testable.
"""

from __future__ import annotations

import io
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .backbone import BackboneConfig, backbone_forward, init_backbone_params
from .decoder import DecoderConfig, DecoderOutput, decoder_forward, init_decoder_params
from .encoding import Click, QueryConfig, build_queries, fourier_spatial_batch
from .fusion import (
    HolisticMask,
    early_fuse_queries,
    fuse_regions,
    holistic_mask,
    init_mask_head_params,
    per_click_logits,
)
from .scene import PointCloud, VoxelGrid, devoxelize_labels, voxelize

CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    """All architecture hyperparameters and ablation switches."""

    voxel_size: float = 0.05
    in_channels: int = 6
    backbone_widths: tuple = (16, 32, 64)
    backbone_dim: int = 96
    dim: int = 128
    num_heads: int = 8
    ffn_dim: int = 1024
    num_layers: int = 3
    num_background_queries: int = 10
    fusion_mode: str = "max"          # max | mean (late fusion)
    early_fusion: bool = False
    masked_attention: bool = True
    use_c2s: bool = True
    use_c2c: bool = True
    use_s2c: bool = True
    spatial_weight: float = 1.0
    temporal_weight: float = 1.0
    # A click is ground truth at its own location: each user click adds a
    # Gaussian bump to its own mask-logit column so the clicked voxel and
    # its immediate neighborhood reliably adopt the clicked region. 0
    # disables the prior.
    click_prior_scale: float = 8.0
    click_prior_radius: float = 0.2   # meters
    # Bilateral term: the bump is signed by appearance similarity between
    # each voxel and the clicked voxel (+1 identical color, -1 very
    # different), so a click near a contact boundary cannot annex the
    # differently-colored neighbor. 0 disables (purely spatial bump); also
    # inactive when the scene has no color channels.
    click_color_sigma: float = 0.3
    # Far-field decay: a click's mask logits are additionally penalized with
    # distance so its influence stays local and cannot annex far-away voxels
    # through max fusion. 0 disables.
    click_far_scale: float = 0.0
    click_far_radius: float = 0.35    # meters
    freq_min: float = 0.125
    freq_max: float = 20.0
    use_norm: bool = True

    def backbone_config(self) -> BackboneConfig:
        return BackboneConfig(
            in_channels=self.in_channels,
            level_widths=tuple(self.backbone_widths),
            feature_dim=self.backbone_dim,
            out_dim=self.dim,
            use_norm=self.use_norm,
        )

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(
            dim=self.dim,
            num_heads=self.num_heads,
            ffn_dim=self.ffn_dim,
            num_layers=self.num_layers,
            masked_attention=self.masked_attention,
            use_c2s=self.use_c2s,
            use_c2c=self.use_c2c,
            use_s2c=self.use_s2c,
        )

    def query_config(self) -> QueryConfig:
        return QueryConfig(
            dim=self.dim,
            num_background_queries=self.num_background_queries,
            freq_min=self.freq_min,
            freq_max=self.freq_max,
            spatial_weight=self.spatial_weight,
            temporal_weight=self.temporal_weight,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["backbone_widths"] = list(self.backbone_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["backbone_widths"] = tuple(d["backbone_widths"])
        return cls(**d)


@dataclass
class DecodeResult:
    mask: HolisticMask                 # voxel-level labels/probabilities
    region_logits: ad.Tensor           # (N', R) final fused logits
    decoder_output: DecoderOutput
    region_ids: np.ndarray
    query_regions: np.ndarray
    decode_seconds: float


class InteractiveSegmentationModel:
    """Trainable interactive multi-object segmentation model."""

    def __init__(self, config: ModelConfig | None = None, seed: int = 0):
        self.config = config or ModelConfig()
        rng = np.random.default_rng(seed)
        self.backbone_params = init_backbone_params(self.config.backbone_config(), rng)
        self.decoder_params = init_decoder_params(self.config.decoder_config(), rng)
        self.mask_head_params = init_mask_head_params(
            self.config.dim, rng, in_channels=self.config.in_channels
        )
        self.background_bank = ad.parameter(
            rng.normal(0.0, 1.0 / np.sqrt(self.config.dim),
                       size=(self.config.num_background_queries, self.config.dim))
        )
        self.backbone_calls = 0
        self.checkpoint_id = "untrained"

    # -- parameter plumbing --------------------------------------------

    def parameters(self) -> dict:
        params = {}
        for name, t in self.backbone_params.items():
            params[f"backbone.{name}"] = t
        for name, t in self.decoder_params.items():
            params[f"decoder.{name}"] = t
        for name, t in self.mask_head_params.items():
            params[f"fusion.{name}"] = t
        params["queries.background_bank"] = self.background_bank
        return params

    def zero_grad(self):
        for t in self.parameters().values():
            t.zero_grad()

    # -- forward pieces -------------------------------------------------

    def voxelize(self, cloud: PointCloud) -> VoxelGrid:
        return voxelize(cloud, self.config.voxel_size)

    def forward_backbone(self, grid: VoxelGrid) -> ad.Tensor:
        self.backbone_calls += 1
        return backbone_forward(grid, self.backbone_params, self.config.backbone_config())

    def scene_positional(self, grid: VoxelGrid) -> np.ndarray:
        return fourier_spatial_batch(grid.voxel_centers, self.config.query_config())

    def _click_prior(self, grid: VoxelGrid, clicks: list[Click], queries) -> np.ndarray:
        """(N', K_total) additive mask-logit prior for user clicks (zero for
        the background bank): a Gaussian bump around the click plus an
        optional far-field distance penalty that keeps a click's influence
        local under max fusion. With early fusion, region queries take the
        max over their member clicks' contributions."""
        n_vox = grid.num_voxels
        total = len(queries.regions)
        prior = np.zeros((n_vox, total))
        scale = self.config.click_prior_scale
        far = self.config.click_far_scale
        if not clicks or (scale == 0.0 and far == 0.0):
            return prior
        positions = np.stack([c.position for c in clicks])
        d2 = ((grid.voxel_centers[:, None, :] - positions[None, :, :]) ** 2).sum(
            axis=2
        )
        radius = self.config.click_prior_radius
        bumps = scale * np.exp(-d2 / radius**2)
        sigma_c = self.config.click_color_sigma
        if sigma_c > 0.0 and grid.voxel_features.shape[1] >= 6:
            colors = grid.voxel_features[:, 3:6]
            nearest = np.argmin(d2, axis=0)
            c2 = ((colors[:, None, :] - colors[nearest][None, :, :]) ** 2).sum(axis=2)
            # Sign the bump by appearance similarity: +1 for an identical
            # color, -1 for a very different one.
            bumps = bumps * (2.0 * np.exp(-c2 / sigma_c**2) - 1.0)
        if far != 0.0:
            bumps = bumps - far * (1.0 - np.exp(-d2 / self.config.click_far_radius**2))
        if not self.config.early_fusion:
            prior[:, : len(clicks)] = bumps
            return prior
        click_regions = np.array([c.region for c in clicks])
        for qi in range(queries.num_user):
            members = click_regions == queries.regions[qi]
            if members.any():
                prior[:, qi] = bumps[:, members].max(axis=1)
        return prior

    def decode(
        self,
        grid: VoxelGrid,
        features: ad.Tensor,
        clicks: list[Click],
        region_ids=None,
        scene_positional: np.ndarray | None = None,
    ) -> DecodeResult:
        """One decoder pass over cached backbone features."""
        t0 = time.perf_counter()
        queries = build_queries(
            clicks, grid, features, self.background_bank, self.config.query_config()
        )
        if self.config.early_fusion:
            queries = early_fuse_queries(queries, self.config.fusion_mode)
        if scene_positional is None:
            scene_positional = self.scene_positional(grid)
        # The mask head sees position-augmented scene features so a click can
        # carve out a spatially local mask even where backbone features are
        # near-identical across an object boundary, plus a learned lift of the
        # raw (un-smoothed) voxel features so appearance can disambiguate
        # contact boundaries between adjacent objects.
        pos = ad.constant(scene_positional)
        if "mask_raw_w" in self.mask_head_params:
            pos = pos + ad.constant(grid.voxel_features) @ self.mask_head_params[
                "mask_raw_w"
            ]
        prior = ad.constant(self._click_prior(grid, clicks, queries))
        out = decoder_forward(
            features,
            scene_positional,
            queries,
            self.decoder_params,
            self.config.decoder_config(),
            lambda f_c, q_c: per_click_logits(f_c + pos, q_c, self.mask_head_params)
            + prior,
        )
        if region_ids is None:
            region_ids = sorted({0} | {c.region for c in clicks})
        fused = fuse_regions(
            out.layer_logits[-1], queries.regions, region_ids, self.config.fusion_mode
        )
        mask = holistic_mask(fused.data, region_ids)
        return DecodeResult(
            mask=mask,
            region_logits=fused,
            decoder_output=out,
            region_ids=np.asarray(region_ids),
            query_regions=queries.regions,
            decode_seconds=time.perf_counter() - t0,
        )

    def segment(self, cloud: PointCloud, clicks: list[Click]) -> np.ndarray:
        """Convenience inference path: per-point labels for a fresh scene."""
        with ad.no_grad():
            grid = self.voxelize(cloud)
            features = self.forward_backbone(grid)
            result = self.decode(grid, features, clicks)
        return devoxelize_labels(grid, result.mask.labels)

    # -- checkpoints ----------------------------------------------------

    def save(self, path):
        arrays = {name: t.data for name, t in self.parameters().items()}
        meta = {
            "format_version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
        }
        arrays["__meta__"] = np.frombuffer(
            json.dumps(meta).encode("utf-8"), dtype=np.uint8
        )
        np.savez_compressed(path, **arrays)

    @classmethod
    def load(cls, path) -> "InteractiveSegmentationModel":
        with np.load(path) as archive:
            meta = json.loads(bytes(archive["__meta__"]).decode("utf-8"))
            if meta.get("format_version") != CHECKPOINT_VERSION:
                raise ValueError(
                    f"unsupported checkpoint version {meta.get('format_version')}"
                )
            model = cls(ModelConfig.from_dict(meta["config"]))
            params = model.parameters()
            for name in archive.files:
                if name == "__meta__":
                    continue
                if name not in params:
                    raise ValueError(f"unknown parameter {name!r} in checkpoint")
                if params[name].data.shape != archive[name].shape:
                    raise ValueError(f"shape mismatch for parameter {name!r}")
                params[name].data = archive[name].astype(np.float64)
        model.checkpoint_id = str(path)
        return model


def region_labels_for_sample(cloud: PointCloud, target_object_ids) -> np.ndarray:
    """Map ground-truth instance ids to session regions 0..M.

    Targets become regions 1..M in the given order; everything else
    (background and non-target objects) becomes region 0.
    """
    labels = np.zeros(len(cloud), dtype=np.int64)
    for region, oid in enumerate(target_object_ids, start=1):
        labels[cloud.labels == oid] = region
    return labels
