from pathlib import Path

import numpy as np
import pytest

from streamcnn.model import load_manifest, make_synthetic_weights, save_model

DATA_DIR = Path(__file__).resolve().parents[1] / "src" / "streamcnn" / "data"
SVHN_MANIFEST = DATA_DIR / "svhn_baseline.json"
HETERO_CONFIG = DATA_DIR / "heterogeneous_precision.json"
ENERGY_TABLE = DATA_DIR / "energy_45nm.json"


@pytest.fixture(scope="session")
def svhn_graph():
    g, _ = load_manifest(SVHN_MANIFEST)
    return make_synthetic_weights(g, seed=7)


@pytest.fixture()
def svhn_files(tmp_path, svhn_graph):
    manifest = tmp_path / "svhn.json"
    weights = tmp_path / "svhn.bin"
    save_model(svhn_graph, manifest, weights)
    return manifest, weights


@pytest.fixture()
def svhn_image(tmp_path, svhn_graph):
    rng = np.random.default_rng(11)
    img = tmp_path / "img.u8"
    img.write_bytes(rng.integers(0, 256, size=32 * 32 * 3, dtype=np.uint8).tobytes())
    return img
