"""Desk-scale sparse voxel U-Net producing per-voxel features.

Three resolution levels with one residual block each. Sparse 3x3x3
convolutions gather occupied neighbors through precomputed index maps;
downsampling halves voxel keys and mean-pools children, upsampling copies
the coarse feature to all children and concatenates the skip features.
Clicks are never an input here: features depend only on the scene.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import EmptyScene
from .scene import VoxelGrid

# all 27 offsets of the 3x3x3 neighborhood, center first (deterministic layout)
OFFSETS = np.array(
    sorted(
        [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)],
        key=lambda o: (o != (0, 0, 0), o),
    ),
    dtype=np.int64,
)


@dataclass
class BackboneConfig:
    in_channels: int = 6
    level_widths: tuple = (16, 32, 64)
    feature_dim: int = 96      # width before the final projection
    out_dim: int = 128         # decoder width after the 1x1 projection
    use_norm: bool = True

    @property
    def num_levels(self) -> int:
        return len(self.level_widths)


class GridStructure:
    """Per-level neighbor maps and child->parent pooling maps for one grid.

    Keys are re-normalized to a zero minimum at every level, which makes
    the whole structure invariant to constant key shifts.
    """

    def __init__(self, grid: VoxelGrid, num_levels: int):
        keys = grid.voxel_keys - grid.voxel_keys.min(axis=0)
        self.level_keys = [keys]
        self.pool_maps = []  # pool_maps[l]: child index at level l -> parent at l+1
        for _ in range(num_levels - 1):
            coarse = self.level_keys[-1] // 2
            uniq, inverse = np.unique(coarse, axis=0, return_inverse=True)
            self.pool_maps.append(inverse.astype(np.int64))
            self.level_keys.append(uniq - uniq.min(axis=0))
        self.neighbor_maps = [self._neighbors(k) for k in self.level_keys]

    @staticmethod
    def _neighbors(keys: np.ndarray) -> np.ndarray:
        """(27, N) array of neighbor indices per offset; -1 where unoccupied."""
        span = keys.max(axis=0) + 3
        def encode(k):
            return (k[:, 0] * span[1] + k[:, 1]) * span[2] + k[:, 2]

        enc = encode(keys + 1)  # +1 margin keeps shifted keys non-negative
        order = np.argsort(enc)
        enc_sorted = enc[order]
        maps = np.full((len(OFFSETS), len(keys)), -1, dtype=np.int64)
        for i, off in enumerate(OFFSETS):
            q = encode(keys + 1 + off)
            pos = np.searchsorted(enc_sorted, q)
            pos = np.clip(pos, 0, len(enc_sorted) - 1)
            hit = enc_sorted[pos] == q
            maps[i, hit] = order[pos[hit]]
        return maps


def grid_structure(grid: VoxelGrid, num_levels: int) -> GridStructure:
    """Build (or reuse) the cached structure for a grid."""
    cached = getattr(grid, "_structure", None)
    if cached is None or len(cached.level_keys) != num_levels:
        cached = GridStructure(grid, num_levels)
        grid._structure = cached
    return cached


def sparse_conv(
    x: ad.Tensor, neighbor_map: np.ndarray, weight: ad.Tensor, bias: ad.Tensor
) -> ad.Tensor:
    """out[v] = sum over offsets o of x[neighbor(v, o)] @ W_o + b.

    `weight` is (27 * C_in, C_out): per-offset kernels stacked row-wise;
    missing neighbors contribute zero.
    """
    gathered = ad.concat(
        [ad.gather_rows(x, neighbor_map[i]) for i in range(len(neighbor_map))],
        axis=1,
    )
    return gathered @ weight + bias


def _glorot(rng, fan_in, fan_out):
    scale = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, scale, size=(fan_in, fan_out))


def init_backbone_params(config: BackboneConfig, rng: np.random.Generator) -> dict:
    """Named parameter tensors for the whole U-Net."""
    p = {}

    def conv(name, cin, cout):
        p[f"{name}_w"] = ad.parameter(_glorot(rng, 27 * cin, cout))
        p[f"{name}_b"] = ad.parameter(np.zeros(cout))

    def linear(name, cin, cout):
        p[f"{name}_w"] = ad.parameter(_glorot(rng, cin, cout))
        p[f"{name}_b"] = ad.parameter(np.zeros(cout))

    def norm(name, c):
        p[f"{name}_g"] = ad.parameter(np.ones(c))
        p[f"{name}_b"] = ad.parameter(np.zeros(c))

    w = config.level_widths
    conv("stem", config.in_channels, w[0])
    norm("stem_ln", w[0])
    for lvl, width in enumerate(w):
        for blk in ("a", "b"):
            conv(f"res{lvl}{blk}", width, width)
            norm(f"res{lvl}{blk}_ln", width)
    for lvl in range(len(w) - 1):
        linear(f"down{lvl}", w[lvl], w[lvl + 1])
        norm(f"down{lvl}_ln", w[lvl + 1])
    for lvl in range(len(w) - 2, -1, -1):
        linear(f"up{lvl}", w[lvl] + w[lvl + 1], w[lvl])
        norm(f"up{lvl}_ln", w[lvl])
        for blk in ("a", "b"):
            conv(f"dres{lvl}{blk}", w[lvl], w[lvl])
            norm(f"dres{lvl}{blk}_ln", w[lvl])
    linear("head", w[0], config.feature_dim)
    norm("head_ln", config.feature_dim)
    linear("proj", config.feature_dim, config.out_dim)
    return p


def _maybe_norm(x, p, name, config):
    if not config.use_norm:
        return x
    return ad.layer_norm(x, p[f"{name}_g"], p[f"{name}_b"])


def _res_block(x, p, name, nmap, config):
    h = sparse_conv(x, nmap, p[f"{name}a_w"], p[f"{name}a_b"])
    h = ad.relu(_maybe_norm(h, p, f"{name}a_ln", config))
    h = sparse_conv(h, nmap, p[f"{name}b_w"], p[f"{name}b_b"])
    h = _maybe_norm(h, p, f"{name}b_ln", config)
    return ad.relu(h + x)


def backbone_forward(
    grid: VoxelGrid, params: dict, config: BackboneConfig
) -> ad.Tensor:
    """Per-voxel features (N', out_dim). The autodiff graph is the tape."""
    if grid.num_voxels == 0:
        raise EmptyScene("backbone requires a non-empty grid")
    struct = grid_structure(grid, config.num_levels)
    nmaps = struct.neighbor_maps

    x = ad.constant(grid.voxel_features)
    x = sparse_conv(x, nmaps[0], params["stem_w"], params["stem_b"])
    x = ad.relu(_maybe_norm(x, params, "stem_ln", config))
    x = _res_block(x, params, "res0", nmaps[0], config)

    skips = [x]
    for lvl in range(config.num_levels - 1):
        pooled = ad.segment_mean(x, struct.pool_maps[lvl], len(struct.level_keys[lvl + 1]))
        x = pooled @ params[f"down{lvl}_w"] + params[f"down{lvl}_b"]
        x = ad.relu(_maybe_norm(x, params, f"down{lvl}_ln", config))
        x = _res_block(x, params, f"res{lvl + 1}", nmaps[lvl + 1], config)
        skips.append(x)

    for lvl in range(config.num_levels - 2, -1, -1):
        up = ad.gather_rows(x, struct.pool_maps[lvl])  # copy parent to children
        x = ad.concat([skips[lvl], up], axis=1)
        x = x @ params[f"up{lvl}_w"] + params[f"up{lvl}_b"]
        x = ad.relu(_maybe_norm(x, params, f"up{lvl}_ln", config))
        x = _res_block(x, params, f"dres{lvl}", nmaps[lvl], config)

    x = x @ params["head_w"] + params["head_b"]
    x = ad.relu(_maybe_norm(x, params, "head_ln", config))
    return x @ params["proj_w"] + params["proj_b"]


def backbone_backward(output: ad.Tensor, grad_out: np.ndarray) -> None:
    """Reverse sweep from `output`; gradients land on the parameter tensors."""
    output.backward(np.asarray(grad_out, dtype=np.float64))
