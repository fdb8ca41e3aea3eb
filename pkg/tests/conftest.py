import numpy as np
import pytest

from landslide_ensemble.matrix import enumerate_matrix, run_matrix
from landslide_ensemble.scenes import N_BANDS, Dataset, Scene
from landslide_ensemble.synth import synth_dataset

# tiny training knobs so end-to-end plumbing tests run in seconds
TINY = dict(iters_per_epoch=2, max_epochs=2, width=4, depth=2, crop_size=64)


def random_scene(h=32, w=32, seed=0, n_pos=20, scene_id=None, valid_frac=1.0) -> Scene:
    rng = np.random.default_rng(seed)
    bands = rng.normal(size=(N_BANDS, h, w)).astype(np.float32)
    bands[11] = rng.integers(1, 30, size=(h, w))
    bands[13] = rng.integers(10, 100, size=(h, w))
    label = np.zeros((h, w), np.uint8)
    idx = rng.choice(h * w, size=min(n_pos, h * w), replace=False)
    label.flat[idx] = 1
    valid = (rng.random((h, w)) < valid_frac).astype(np.uint8)
    valid.flat[idx] = 1
    return Scene(scene_id or f"rand_{seed}", bands, label, valid)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory) -> Dataset:
    root = tmp_path_factory.mktemp("tiny_ds")
    return Dataset(synth_dataset(root, n_scenes=7, seed=3, size=(64, 64)))


@pytest.fixture(scope="session")
def tiny_runs(tmp_path_factory, tiny_dataset):
    """A 2x2 S2 grid trained for a couple of steps each: (dataset, runs_root, manifest)."""
    root = tmp_path_factory.mktemp("tiny_runs")
    cfgs = enumerate_matrix("S2", ["FPN", "Linknet"], ["BCELoss", "DiceLoss"], [0.01], **TINY)
    manifest = run_matrix(cfgs, tiny_dataset, root, out=None)
    return tiny_dataset, root, manifest


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
