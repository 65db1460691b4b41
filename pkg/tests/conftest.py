import numpy as np
import pytest
import torch

from mentor.config import TrainConfig
from mentor.ingest import FeatureMatrix, RawInteractions, build_split
from mentor.model import ModelDims, init_parameters
from mentor.train import make_bundle, sample_triples


def random_interactions(n_users, n_items, per_user, seed):
    rng = np.random.default_rng(seed)
    records = []
    for u in range(n_users):
        for i in rng.choice(n_items, size=per_user, replace=False):
            records.append((f"u{u:02d}", f"i{i:02d}"))
    return RawInteractions(records=records)


@pytest.fixture(scope="session")
def tiny():
    """5 users / 8 items / d=4 fixture in float64; used by gradient checks."""
    rng = np.random.default_rng(3)
    split = build_split(random_interactions(5, 8, 5, seed=3), seed=1)
    fv = FeatureMatrix("v", rng.standard_normal((8, 6)).astype(np.float32))
    ft = FeatureMatrix("t", rng.standard_normal((8, 5)).astype(np.float32))
    config = TrainConfig(embed_dim=4, knn_k=2, batch_size=16, nce_negatives="all")
    bundle = make_bundle(split, fv, ft, config).cast(torch.float64)
    dims = ModelDims(split.n_users, split.n_items, 4, 6, 5)
    state = init_parameters(dims, 0, torch.float64)
    batch = sample_triples(split, 16, np.random.default_rng(0))
    return {"split": split, "config": config, "bundle": bundle,
            "dims": dims, "state": state, "batch": batch,
            "features": {"v": fv, "t": ft}}


@pytest.fixture(scope="session")
def synthetic():
    from mentor.synthetic import make_block_dataset

    split, fv, ft = make_block_dataset(seed=7)
    config = TrainConfig(
        embed_dim=16, knn_k=3, batch_size=512, ui_layers=2,
        learning_rate=1e-2, epochs=60, early_stop_patience=60,
        mask_ratio=0.3, lambda_f=0.5, lambda_g=1e-3, lambda_align=1.0,
        tau=0.2, seed=7,
    )
    bundle = make_bundle(split, fv, ft, config)
    return {"split": split, "config": config, "bundle": bundle,
            "features": {"v": fv, "t": ft}}
