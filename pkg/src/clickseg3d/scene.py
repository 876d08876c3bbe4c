"""Point-cloud data model, voxelization, scene I/O and synthetic scenes.

Scenes are desk-scale: a floor slab plus a handful of primitive objects
(boxes, cylinders, L-shapes), some touching, so that shared-boundary
click situations actually occur in tests and demos.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyScene, GenerationError, InvalidInput, ParseError

DEFAULT_VOXEL_SIZE = 0.05


@dataclass
class PointCloud:
    """A raw scene: N points, C feature channels, optional instance labels.

    Features are [x, y, z] (C=3) or [x, y, z, r, g, b] with rgb in [0, 1]
    (C=6). Label 0 is background; labels >= 1 are object instances.
    """

    points: np.ndarray
    features: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim == 1:
            self.features = self.features[:, None]
        if len(self.features) != len(self.points):
            raise InvalidInput("features length must equal points length")
        if not np.all(np.isfinite(self.points)):
            raise InvalidInput("non-finite coordinate in point cloud")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if len(self.labels) != len(self.points):
                raise InvalidInput("labels length must equal points length")

    def __len__(self):
        return len(self.points)

    @property
    def num_objects(self) -> int:
        if self.labels is None:
            return 0
        return int(self.labels.max(initial=0))


@dataclass
class VoxelGrid:
    """Quantization of a PointCloud at a fixed voxel size.

    Keys are floor((p - origin) / voxel_size); the scene minimum corner is
    subtracted first so keys are non-negative. Per-voxel features are the
    mean of the member points' features.
    """

    voxel_size: float
    origin: np.ndarray
    voxel_keys: np.ndarray       # (N', 3) int64, unique
    voxel_features: np.ndarray   # (N', C)
    point_to_voxel: np.ndarray   # (N,) int64
    voxel_centers: np.ndarray    # (N', 3) meters, original frame

    @property
    def num_voxels(self) -> int:
        return len(self.voxel_keys)


@dataclass
class SceneSample:
    """A scene plus the target objects selected for annotation."""

    cloud: PointCloud
    target_object_ids: list[int]
    scene_id: str = ""

    def __post_init__(self):
        if not 1 <= len(self.target_object_ids) <= 10:
            raise InvalidInput("benchmark samples carry between 1 and 10 targets")
        labels = self.cloud.labels
        if labels is not None:
            present = set(np.unique(labels).tolist())
            for oid in self.target_object_ids:
                if oid not in present:
                    raise InvalidInput(f"target id {oid} not present in labels")

    @property
    def M(self) -> int:
        return len(self.target_object_ids)


def voxelize(cloud: PointCloud, voxel_size: float = DEFAULT_VOXEL_SIZE) -> VoxelGrid:
    """Quantize a cloud into voxels with mean-reduced features."""
    if voxel_size <= 0:
        raise InvalidInput("voxel_size must be positive")
    if len(cloud) == 0:
        raise EmptyScene("cannot voxelize an empty cloud")
    origin = cloud.points.min(axis=0)
    # the small bias keeps points reconstructed exactly on a cell boundary
    # (e.g. re-voxelized voxel centers) from flooring into the lower cell
    keys = np.floor((cloud.points - origin) / voxel_size + 1e-9).astype(np.int64)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    n_vox = len(uniq)
    feats = np.zeros((n_vox, cloud.features.shape[1]))
    np.add.at(feats, inverse, cloud.features)
    counts = np.bincount(inverse, minlength=n_vox).astype(np.float64)
    feats /= counts[:, None]
    centers = origin + (uniq + 0.5) * voxel_size
    return VoxelGrid(
        voxel_size=float(voxel_size),
        origin=origin,
        voxel_keys=uniq,
        voxel_features=feats,
        point_to_voxel=inverse.astype(np.int64),
        voxel_centers=centers,
    )


def devoxelize_labels(grid: VoxelGrid, voxel_labels: np.ndarray) -> np.ndarray:
    """Broadcast per-voxel region labels back to the original points."""
    voxel_labels = np.asarray(voxel_labels)
    if len(voxel_labels) != grid.num_voxels:
        raise InvalidInput(
            f"expected {grid.num_voxels} voxel labels, got {len(voxel_labels)}"
        )
    return voxel_labels[grid.point_to_voxel]


def voxel_majority_labels(grid: VoxelGrid, point_labels: np.ndarray) -> np.ndarray:
    """Per-voxel ground truth: majority vote, ties broken by smallest id."""
    point_labels = np.asarray(point_labels, dtype=np.int64)
    if len(point_labels) != len(grid.point_to_voxel):
        raise InvalidInput("point_labels length mismatch")
    n_vox = grid.num_voxels
    n_lab = int(point_labels.max(initial=0)) + 1
    votes = np.zeros((n_vox, n_lab), dtype=np.int64)
    np.add.at(votes, (grid.point_to_voxel, point_labels), 1)
    # argmax picks the smallest label on ties
    return votes.argmax(axis=1)


# ----------------------------------------------------------------------
# PLY I/O (ascii and binary little endian; x,y,z float32, optional rgb
# uchar, optional label int32)
# ----------------------------------------------------------------------

_PLY_TYPES = {
    "float": ("f", 4), "float32": ("f", 4),
    "double": ("d", 8), "float64": ("d", 8),
    "uchar": ("B", 1), "uint8": ("B", 1),
    "char": ("b", 1), "int8": ("b", 1),
    "short": ("h", 2), "int16": ("h", 2),
    "ushort": ("H", 2), "uint16": ("H", 2),
    "int": ("i", 4), "int32": ("i", 4),
    "uint": ("I", 4), "uint32": ("I", 4),
}


def load_scene(path, fmt: str | None = None) -> PointCloud:
    """Load a scene from PLY or internal JSON (chosen by extension)."""
    path = Path(path)
    if fmt is None:
        fmt = "json" if path.suffix.lower() == ".json" else "ply"
    if fmt == "json":
        return _load_json(path)
    if fmt == "ply":
        return load_ply(path)
    raise InvalidInput(f"unknown scene format {fmt!r}")


def save_scene(cloud: PointCloud, path, fmt: str | None = None, binary: bool = True):
    path = Path(path)
    if fmt is None:
        fmt = "json" if path.suffix.lower() == ".json" else "ply"
    if fmt == "json":
        _save_json(cloud, path)
    elif fmt == "ply":
        save_ply(cloud, path, binary=binary)
    else:
        raise InvalidInput(f"unknown scene format {fmt!r}")


def _load_json(path: Path) -> PointCloud:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"bad scene JSON: {e.msg}", offset=e.pos) from e
    return cloud_from_payload(payload)


def cloud_from_payload(payload: dict) -> PointCloud:
    if "points" not in payload:
        raise ParseError("scene JSON missing 'points'")
    points = np.asarray(payload["points"], dtype=np.float64)
    colors = payload.get("colors")
    if colors is not None:
        features = np.hstack([points, np.asarray(colors, dtype=np.float64)])
    else:
        features = points.copy()
    labels = payload.get("labels")
    return PointCloud(points, features, labels)


def _save_json(cloud: PointCloud, path: Path):
    payload = {"points": cloud.points.tolist()}
    if cloud.features.shape[1] >= 6:
        payload["colors"] = cloud.features[:, 3:6].tolist()
    if cloud.labels is not None:
        payload["labels"] = cloud.labels.tolist()
    Path(path).write_text(json.dumps(payload))


def load_ply(path) -> PointCloud:
    raw = Path(path).read_bytes()
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply") or end < 0:
        raise ParseError("not a PLY file", offset=0)
    header = raw[: end + len(b"end_header\n")]
    body = raw[len(header):]
    fmt = None
    n_vertex = None
    props = []  # (name, type) for the vertex element
    in_vertex = False
    for line in header.decode("ascii", errors="replace").splitlines():
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                n_vertex = int(tok[2])
        elif tok[0] == "property" and in_vertex:
            if tok[1] == "list":
                raise ParseError("list properties unsupported on vertices", offset=0)
            props.append((tok[2], tok[1]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise ParseError(f"unsupported PLY format {fmt!r}", offset=0)
    if n_vertex is None:
        raise ParseError("PLY header missing vertex element", offset=0)
    names = [p[0] for p in props]
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise ParseError(f"PLY vertex element missing property {axis!r}", offset=0)

    if fmt == "ascii":
        rows = np.zeros((n_vertex, len(props)))
        text = body.decode("ascii", errors="replace").splitlines()
        if len(text) < n_vertex:
            raise ParseError("truncated PLY body", offset=len(header))
        for i in range(n_vertex):
            vals = text[i].split()
            if len(vals) != len(props):
                raise ParseError(
                    f"vertex {i}: expected {len(props)} fields, got {len(vals)}",
                    offset=len(header),
                )
            rows[i] = [float(v) for v in vals]
    else:
        fmt_str = "<" + "".join(_PLY_TYPES[t][0] for _, t in props)
        stride = struct.calcsize(fmt_str)
        need = stride * n_vertex
        if len(body) < need:
            raise ParseError("truncated PLY body", offset=len(header) + len(body))
        rows = np.array(
            [struct.unpack_from(fmt_str, body, i * stride) for i in range(n_vertex)]
        )
        if n_vertex == 0:
            rows = rows.reshape(0, len(props))

    col = {name: rows[:, i] for i, (name, _) in enumerate(props)}
    points = np.stack([col["x"], col["y"], col["z"]], axis=1)
    if all(c in col for c in ("red", "green", "blue")):
        rgb = np.stack([col["red"], col["green"], col["blue"]], axis=1) / 255.0
        features = np.hstack([points, rgb])
    else:
        features = points.copy()
    labels = col["label"].astype(np.int64) if "label" in col else None
    return PointCloud(points, features, labels)


def save_ply(cloud: PointCloud, path, binary: bool = True, labels: np.ndarray | None = None):
    """Write x,y,z (float32), rgb (uchar) when present, label (int32) when present."""
    if labels is None:
        labels = cloud.labels
    has_rgb = cloud.features.shape[1] >= 6
    lines = [
        "ply",
        "format binary_little_endian 1.0" if binary else "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property float32 x",
        "property float32 y",
        "property float32 z",
    ]
    if has_rgb:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    if labels is not None:
        lines.append("property int32 label")
    lines.append("end_header")
    header = ("\n".join(lines) + "\n").encode("ascii")

    pts = cloud.points.astype(np.float32)
    rgb = (
        np.clip(cloud.features[:, 3:6] * 255.0, 0, 255).round().astype(np.uint8)
        if has_rgb
        else None
    )
    with open(path, "wb") as f:
        f.write(header)
        if binary:
            fmt = "<fff" + ("BBB" if has_rgb else "") + ("i" if labels is not None else "")
            for i in range(len(cloud)):
                vals = list(pts[i])
                if rgb is not None:
                    vals += list(rgb[i])
                if labels is not None:
                    vals.append(int(labels[i]))
                f.write(struct.pack(fmt, *vals))
        else:
            for i in range(len(cloud)):
                parts = [f"{v:.6f}" for v in pts[i]]
                if rgb is not None:
                    parts += [str(int(v)) for v in rgb[i]]
                if labels is not None:
                    parts.append(str(int(labels[i])))
                f.write((" ".join(parts) + "\n").encode("ascii"))


# ----------------------------------------------------------------------
# Synthetic scene generation
# ----------------------------------------------------------------------


@dataclass
class GeneratorSpec:
    """Controls for the synthetic scene generator (JSON-serializable)."""

    object_count: int = 4
    floor_extent: float = 2.0          # square floor side, meters
    size_range: tuple = (0.2, 0.6)     # object footprint/height range
    points_per_m2: float = 2000.0
    min_points: int = 80
    adjacency_prob: float = 0.3        # chance an object is placed touching another
    z_clearance: float = DEFAULT_VOXEL_SIZE  # lift objects one voxel above floor
    with_color: bool = True
    max_retries: int = 200

    @classmethod
    def from_json(cls, path) -> "GeneratorSpec":
        payload = json.loads(Path(path).read_text())
        payload.pop("seed", None)
        if "size_range" in payload:
            payload["size_range"] = tuple(payload["size_range"])
        return cls(**payload)


def _sample_box_surface(rng, size, n):
    """Uniform samples on the 5 visible faces of an axis-aligned box."""
    sx, sy, sz = size
    areas = np.array([sy * sz, sy * sz, sx * sz, sx * sz, sx * sy])  # no bottom
    face = rng.choice(5, size=n, p=areas / areas.sum())
    u, v = rng.uniform(size=(2, n))
    pts = np.zeros((n, 3))
    pts[face == 0] = np.stack([np.zeros((face == 0).sum()), u[face == 0] * sy, v[face == 0] * sz], 1)
    pts[face == 1] = np.stack([np.full((face == 1).sum(), sx), u[face == 1] * sy, v[face == 1] * sz], 1)
    pts[face == 2] = np.stack([u[face == 2] * sx, np.zeros((face == 2).sum()), v[face == 2] * sz], 1)
    pts[face == 3] = np.stack([u[face == 3] * sx, np.full((face == 3).sum(), sy), v[face == 3] * sz], 1)
    pts[face == 4] = np.stack([u[face == 4] * sx, v[face == 4] * sy, np.full((face == 4).sum(), sz)], 1)
    return pts


def _sample_cylinder_surface(rng, radius, height, n):
    lateral = 2 * np.pi * radius * height
    top = np.pi * radius**2
    on_top = rng.uniform(size=n) < top / (lateral + top)
    theta = rng.uniform(0, 2 * np.pi, size=n)
    pts = np.zeros((n, 3))
    r_top = radius * np.sqrt(rng.uniform(size=n))
    pts[on_top] = np.stack(
        [r_top[on_top] * np.cos(theta[on_top]), r_top[on_top] * np.sin(theta[on_top]),
         np.full(on_top.sum(), height)], 1)
    side = ~on_top
    pts[side] = np.stack(
        [radius * np.cos(theta[side]), radius * np.sin(theta[side]),
         rng.uniform(0, height, size=side.sum())], 1)
    pts[:, :2] += radius  # shift so the footprint starts at (0, 0)
    return pts


def _object_surface_area(kind, size):
    sx, sy, sz = size
    if kind == "cylinder":
        r, h = sx / 2, sz
        return 2 * np.pi * r * h + np.pi * r**2
    if kind == "lshape":
        return 1.5 * (2 * sy * sz + 2 * sx * sz + sx * sy)
    return 2 * sy * sz + 2 * sx * sz + sx * sy


def generate_synthetic_scene(seed: int, spec: GeneratorSpec | None = None) -> SceneSample:
    """Deterministic floor + primitives scene with every point labeled."""
    spec = spec or GeneratorSpec()
    if not 1 <= spec.object_count <= 10:
        raise GenerationError("object_count must be in 1..10")
    rng = np.random.default_rng(seed)
    half = spec.floor_extent / 2

    placed = []  # (xmin, ymin, xmax, ymax)
    all_pts, all_rgb, all_lab = [], [], []

    # floor slab at z = 0
    n_floor = int(spec.points_per_m2 * spec.floor_extent**2)
    floor = np.zeros((n_floor, 3))
    floor[:, 0] = rng.uniform(-half, half, n_floor)
    floor[:, 1] = rng.uniform(-half, half, n_floor)
    all_pts.append(floor)
    all_rgb.append(np.full((n_floor, 3), 0.5) + rng.normal(0, 0.02, (n_floor, 3)))
    all_lab.append(np.zeros(n_floor, dtype=np.int64))

    kinds = ["box", "cylinder", "lshape"]
    for obj_id in range(1, spec.object_count + 1):
        kind = kinds[rng.integers(len(kinds))]
        size = rng.uniform(spec.size_range[0], spec.size_range[1], size=3)
        for attempt in range(spec.max_retries):
            touch = placed and rng.uniform() < spec.adjacency_prob
            if touch:
                bx = placed[rng.integers(len(placed))]
                side = rng.integers(4)
                if side == 0:
                    x0, y0 = bx[2], rng.uniform(bx[1] - size[1] / 2, bx[3])
                elif side == 1:
                    x0, y0 = bx[0] - size[0], rng.uniform(bx[1] - size[1] / 2, bx[3])
                elif side == 2:
                    x0, y0 = rng.uniform(bx[0] - size[0] / 2, bx[2]), bx[3]
                else:
                    x0, y0 = rng.uniform(bx[0] - size[0] / 2, bx[2]), bx[1] - size[1]
            else:
                x0 = rng.uniform(-half, half - size[0])
                y0 = rng.uniform(-half, half - size[1])
            box = (x0, y0, x0 + size[0], y0 + size[1])
            if box[0] < -half or box[1] < -half or box[2] > half or box[3] > half:
                continue
            overlap = any(
                box[0] < b[2] and b[0] < box[2] and box[1] < b[3] and b[1] < box[3]
                for b in placed
            )
            if not overlap:
                break
        else:
            raise GenerationError(
                f"could not place object {obj_id} after {spec.max_retries} retries"
            )
        placed.append(box)

        area = _object_surface_area(kind, size)
        n_obj = max(spec.min_points, int(spec.points_per_m2 * area))
        if kind == "cylinder":
            pts = _sample_cylinder_surface(rng, size[0] / 2, size[2], n_obj)
        elif kind == "lshape":
            n1 = n_obj // 2
            p1 = _sample_box_surface(rng, size, n1)
            wing = np.array([size[0] * 1.2, size[1] * 0.5, size[2] * 0.5])
            p2 = _sample_box_surface(rng, wing, n_obj - n1)
            p2[:, 1] += size[1]
            pts = np.vstack([p1, p2])
        else:
            pts = _sample_box_surface(rng, size, n_obj)
        pts[:, 0] += x0
        pts[:, 1] += y0
        pts[:, 2] += spec.z_clearance
        color = rng.uniform(0.1, 1.0, size=3)
        all_pts.append(pts)
        all_rgb.append(np.tile(color, (len(pts), 1)) + rng.normal(0, 0.02, (len(pts), 3)))
        all_lab.append(np.full(len(pts), obj_id, dtype=np.int64))

    points = np.vstack(all_pts)
    labels = np.concatenate(all_lab)
    if spec.with_color:
        rgb = np.clip(np.vstack(all_rgb), 0.0, 1.0)
        features = np.hstack([points, rgb])
    else:
        features = points.copy()
    cloud = PointCloud(points, features, labels)
    return SceneSample(
        cloud=cloud,
        target_object_ids=list(range(1, spec.object_count + 1)),
        scene_id=f"synthetic-{seed}",
    )
