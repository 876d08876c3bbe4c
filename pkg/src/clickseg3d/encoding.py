"""Click-to-query conversion: content, spatial and temporal encodings.

Each user click becomes a query with three parts: content from the nearest
voxel's backbone feature, a spatial part from Fourier encoding of its
coordinates, and a temporal part from a sinusoidal encoding of its
timestamp. A fixed bank of learnable background queries is appended.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import InvalidInput, InvalidRegion
from .scene import VoxelGrid


@dataclass
class Click:
    """One user click: 3D position, region index, 1-based timestamp."""

    position: np.ndarray
    region: int
    timestamp: int

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(self.position)):
            raise InvalidInput("click position must be finite")
        if self.region < 0:
            raise InvalidRegion("region index must be >= 0")
        if self.timestamp < 1:
            raise InvalidInput("timestamps are 1-based")

    def to_json(self) -> dict:
        x, y, z = self.position
        return {"x": x, "y": y, "z": z, "region": int(self.region),
                "timestamp": int(self.timestamp)}

    @classmethod
    def from_json(cls, payload: dict) -> "Click":
        return cls(
            position=[payload["x"], payload["y"], payload["z"]],
            region=int(payload["region"]),
            timestamp=int(payload["timestamp"]),
        )


def validate_sequence(clicks: list[Click]):
    ts = [c.timestamp for c in clicks]
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise InvalidInput("click timestamps must be strictly increasing")


@dataclass
class QueryConfig:
    """Encoding hyperparameters and the positional-part ablation switches."""

    dim: int = 128
    num_background_queries: int = 10
    freq_min: float = 0.125   # cycles per meter; one period covers 8 m
    freq_max: float = 20.0    # one period covers 0.05 m, the voxel scale
    spatial_weight: float = 1.0
    temporal_weight: float = 1.0

    @property
    def bands(self) -> int:
        return self.dim // 6

    def frequencies(self) -> np.ndarray:
        b = self.bands
        if b == 1:
            return np.array([self.freq_min])
        return self.freq_min * (self.freq_max / self.freq_min) ** (
            np.arange(b) / (b - 1)
        )


def nearest_voxel(position: np.ndarray, grid: VoxelGrid) -> int:
    """Index of the voxel center nearest the click; ties go to the smallest index."""
    d2 = np.sum((grid.voxel_centers - np.asarray(position)) ** 2, axis=1)
    return int(np.argmin(d2))


def content_init(click: Click, grid: VoxelGrid, features: ad.Tensor) -> ad.Tensor:
    """Content part: the backbone feature of the nearest voxel."""
    idx = nearest_voxel(click.position, grid)
    return ad.gather_rows(features, np.array([idx]))


def fourier_spatial(position: np.ndarray, config: QueryConfig) -> np.ndarray:
    """Fourier features of a 3D position, zero-padded to the decoder width.

    Layout per axis: [sin(2*pi*f_0 x), cos(2*pi*f_0 x), ..., sin(2*pi*f_{B-1} x),
    cos(2*pi*f_{B-1} x)], axes concatenated, then padding.
    """
    position = np.asarray(position, dtype=np.float64).reshape(3)
    freqs = config.frequencies()
    phase = 2.0 * np.pi * position[:, None] * freqs[None, :]  # (3, B)
    parts = np.stack([np.sin(phase), np.cos(phase)], axis=-1).reshape(-1)
    out = np.zeros(config.dim)
    out[: parts.size] = parts
    return out


def fourier_spatial_batch(positions: np.ndarray, config: QueryConfig) -> np.ndarray:
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    freqs = config.frequencies()
    phase = 2.0 * np.pi * positions[:, :, None] * freqs[None, None, :]
    parts = np.stack([np.sin(phase), np.cos(phase)], axis=-1).reshape(len(positions), -1)
    out = np.zeros((len(positions), config.dim))
    out[:, : parts.shape[1]] = parts
    return out


def temporal_encoding(k: int, dim: int) -> np.ndarray:
    """Transformer-style sin/cos encoding of the click timestamp."""
    i = np.arange(dim // 2)
    rate = 1.0 / 10000.0 ** (2.0 * i / dim)
    out = np.zeros(dim)
    out[0::2] = np.sin(k * rate)
    out[1::2] = np.cos(k * rate)
    return out


@dataclass
class QuerySet:
    """Queries for one decode pass: K user clicks then the learnable bank.

    `content` is a Tensor (rows participate in gradients); `positional` is a
    plain array (pure encodings, zero rows for the learnable bank).
    """

    content: ad.Tensor          # (K_total, D)
    positional: np.ndarray      # (K_total, D)
    regions: np.ndarray         # (K_total,) region tag per query
    num_user: int

    @property
    def total(self) -> int:
        return len(self.regions)


def build_queries(
    clicks: list[Click],
    grid: VoxelGrid,
    features: ad.Tensor,
    background_bank: ad.Tensor,
    config: QueryConfig,
    max_region: int | None = None,
) -> QuerySet:
    """Assemble user click queries plus the learnable background bank.

    Positional part is spatial_weight * s_k + temporal_weight * t_k; the
    learnable background queries carry a zero positional part. Setting a
    weight to 0 is the ablation switch for that term.
    """
    validate_sequence(clicks)
    if max_region is not None:
        for c in clicks:
            if c.region > max_region:
                raise InvalidRegion(
                    f"click region {c.region} exceeds session max {max_region}"
                )
    n_bg = background_bank.shape[0]
    regions = np.array([c.region for c in clicks] + [0] * n_bg, dtype=np.int64)
    positional = np.zeros((len(clicks) + n_bg, config.dim))
    if clicks:
        spatial = fourier_spatial_batch(
            np.stack([c.position for c in clicks]), config
        )
        temporal = np.stack(
            [temporal_encoding(c.timestamp, config.dim) for c in clicks]
        )
        positional[: len(clicks)] = (
            config.spatial_weight * spatial + config.temporal_weight * temporal
        )
        idx = np.array([nearest_voxel(c.position, grid) for c in clicks])
        user_content = ad.gather_rows(features, idx)
        content = ad.concat([user_content, background_bank], axis=0)
    else:
        content = background_bank
    return QuerySet(
        content=content,
        positional=positional,
        regions=regions,
        num_user=len(clicks),
    )
