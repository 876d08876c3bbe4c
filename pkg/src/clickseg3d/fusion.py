"""Query fusion: per-click mask logits, per-region aggregation, and the
holistic mask where regions compete through a row softmax.

Default pipeline is late fusion with max aggregation; mean aggregation and
early query fusion are kept behind flags for ablation runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .encoding import QuerySet
from .errors import MissingRegion


def init_mask_head_params(
    dim: int, rng: np.random.Generator, in_channels: int = 0
) -> dict:
    """Shared MLP (two hidden ReLU layers, all widths = decoder dim).

    With in_channels > 0 the head also owns a zero-initialized linear lift
    of the raw voxel input features into its input space. Raw features
    (colors in particular) keep a crisp object boundary that convolution
    smooths away, so the lift lets a click's mask discriminate which side
    of a contact boundary a voxel belongs to.
    """
    p = {}
    scale = np.sqrt(2.0 / (2 * dim))
    for i in range(3):
        p[f"mask_mlp{i}_w"] = ad.parameter(rng.normal(0.0, scale, size=(dim, dim)))
        p[f"mask_mlp{i}_b"] = ad.parameter(np.zeros(dim))
    if in_channels > 0:
        p["mask_raw_w"] = ad.parameter(np.zeros((in_channels, dim)))
    return p


def mask_embeddings(query_content: ad.Tensor, head: dict) -> ad.Tensor:
    h = ad.relu(query_content @ head["mask_mlp0_w"] + head["mask_mlp0_b"])
    h = ad.relu(h @ head["mask_mlp1_w"] + head["mask_mlp1_b"])
    return h @ head["mask_mlp2_w"] + head["mask_mlp2_b"]


def per_click_logits(
    scene_content: ad.Tensor, query_content: ad.Tensor, head: dict
) -> ad.Tensor:
    """(N', K_total) logits: dot product of point features and mask embeddings."""
    return scene_content @ mask_embeddings(query_content, head).T


def fuse_regions(
    logits: ad.Tensor,
    query_regions: np.ndarray,
    region_ids: list[int],
    mode: str = "max",
) -> ad.Tensor:
    """Aggregate per-click columns into one column per region id.

    Every requested region must have at least one query (region 0 always
    does via the learnable background bank).
    """
    if mode not in ("max", "mean"):
        raise ValueError(f"unknown fusion mode {mode!r}")
    query_regions = np.asarray(query_regions)
    cols = []
    for rid in region_ids:
        members = np.flatnonzero(query_regions == rid)
        if len(members) == 0:
            raise MissingRegion(f"region {rid} has no queries")
        sub = ad.take_columns(logits, members)
        if mode == "max":
            col = sub.max(axis=1)
        else:
            col = sub.mean(axis=1)
        cols.append(col.reshape(-1, 1))
    return ad.concat(cols, axis=1)


@dataclass
class HolisticMask:
    """Per-voxel competition result over the session's regions."""

    region_ids: np.ndarray      # (R,) actual region indices, ascending, 0 first
    logits: np.ndarray          # (N', R)
    probabilities: np.ndarray   # (N', R), rows sum to 1
    labels: np.ndarray          # (N',) entries drawn from region_ids


def holistic_mask(region_logits: np.ndarray, region_ids) -> HolisticMask:
    """Row softmax + argmax; ties resolve to the smaller region id."""
    z = np.asarray(region_logits, dtype=np.float64)
    region_ids = np.asarray(region_ids, dtype=np.int64)
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    probs = e / e.sum(axis=1, keepdims=True)
    labels = region_ids[np.argmax(z, axis=1)]  # argmax returns first max: smaller id
    return HolisticMask(region_ids=region_ids, logits=z, probabilities=probs, labels=labels)


def early_fuse_queries(queries: QuerySet, mode: str = "max") -> QuerySet:
    """Ablation path: collapse same-region user queries before decoding.

    Content and positional parts are aggregated per region; the learnable
    background bank is kept as-is.
    """
    if mode not in ("max", "mean"):
        raise ValueError(f"unknown fusion mode {mode!r}")
    user_regions = queries.regions[: queries.num_user]
    uniq = sorted(set(user_regions.tolist()))
    contents, positionals, regions = [], [], []
    for rid in uniq:
        members = np.flatnonzero(user_regions == rid)
        rows = ad.gather_rows(queries.content, members)
        if mode == "max":
            fused = rows.max(axis=0).reshape(1, -1)
            pos = queries.positional[members].max(axis=0)
        else:
            fused = rows.mean(axis=0).reshape(1, -1)
            pos = queries.positional[members].mean(axis=0)
        contents.append(fused)
        positionals.append(pos)
        regions.append(rid)
    bank = ad.gather_rows(
        queries.content, np.arange(queries.num_user, queries.total)
    )
    n_bg = queries.total - queries.num_user
    content = ad.concat(contents + [bank], axis=0) if contents else bank
    positional = np.vstack(
        positionals + [np.zeros((n_bg, queries.positional.shape[1]))]
    ) if positionals else queries.positional[queries.num_user:]
    return QuerySet(
        content=content,
        positional=positional,
        regions=np.array(regions + [0] * n_bg, dtype=np.int64),
        num_user=len(regions),
    )
