import struct

import numpy as np

from driftclust.backbone import BackboneSpec
from driftclust.dataio import gen_blobs
from driftclust.tensor import SeededRng
from driftclust.trainer import TrainerConfig


def write_idx_fixture(tmp_path, pixels, labels=None):
    """Independent byte-level IDX writer used as the parsing oracle."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    n, rows, cols = pixels.shape
    img_path = tmp_path / "images.idx"
    body = struct.pack(">IIII", 0x00000803, n, rows, cols) + pixels.tobytes()
    img_path.write_bytes(body)
    lab_path = None
    if labels is not None:
        lab_path = tmp_path / "labels.idx"
        lab_path.write_bytes(struct.pack(">II", 0x00000801, len(labels))
                             + bytes(int(v) for v in labels))
    return img_path, lab_path


def small_blob_setup(seed=0, k=4, points=50, dim=8, separation=25.0, sigma=0.5,
                     **config_overrides):
    """Tiny, crisply separated benchmark for fast trainer-level tests."""
    dataset = gen_blobs(k=k, points_per_cluster=points, dim=dim,
                        separation=separation, noise_sigma=sigma, rng=SeededRng(seed))
    spec = BackboneSpec("flatten", dataset.shape, dim, seed=seed + 1)
    defaults = dict(k=k, n_m=20, k_m=5, eta=0.001, epochs=3, mode="full",
                    seed=seed, hidden_dim=16)
    defaults.update(config_overrides)
    return dataset, spec, TrainerConfig(**defaults)


def acceptance_blob_setup(seed, **config_overrides):
    """The 10-blob benchmark at its pinned parameters (5000 points, dim 50,
    separation 10, sigma 1), wired exactly like the CLI does it."""
    dataset = gen_blobs(k=10, points_per_cluster=500, dim=50, separation=10.0,
                        noise_sigma=1.0, rng=SeededRng(seed))
    spec = BackboneSpec("flatten", dataset.shape, 50, seed=seed + 1)
    defaults = dict(k=10, mode="full", seed=seed)
    defaults.update(config_overrides)
    return dataset, spec, TrainerConfig(**defaults)
