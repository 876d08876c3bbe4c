import numpy as np
import pytest

# acceptance tests append (criterion, passed, detail) tuples here; the
# terminal-summary hook below prints one line per criterion after the run
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_RESULTS:
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {name}: {detail}")

from clickseg3d.model import InteractiveSegmentationModel, ModelConfig
from clickseg3d.scene import GeneratorSpec, PointCloud, generate_synthetic_scene


TINY_MODEL = dict(
    backbone_widths=(3, 4),
    backbone_dim=5,
    dim=12,
    num_heads=2,
    ffn_dim=8,
    num_layers=2,
    num_background_queries=2,
)

SMALL_MODEL = dict(
    backbone_widths=(8, 16, 32),
    backbone_dim=32,
    dim=64,
    num_heads=4,
    ffn_dim=128,
    num_layers=2,
    num_background_queries=10,
)


@pytest.fixture
def tiny_model():
    return InteractiveSegmentationModel(ModelConfig(**TINY_MODEL), seed=1)


@pytest.fixture
def small_model():
    return InteractiveSegmentationModel(ModelConfig(**SMALL_MODEL), seed=0)


@pytest.fixture
def small_scene():
    return generate_synthetic_scene(
        7, GeneratorSpec(object_count=2, points_per_m2=500, floor_extent=1.4)
    )


@pytest.fixture
def random_cloud():
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 0.4, (30, 3))
    labels = np.clip(
        (pts[:, 0] > 0.2).astype(int) + (pts[:, 1] > 0.3).astype(int), 0, 2
    )
    feats = np.hstack([pts, rng.uniform(0, 1, (30, 3))])
    return PointCloud(pts, feats, labels)
