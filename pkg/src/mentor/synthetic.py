"""Block-structured synthetic dataset: two user groups preferring disjoint
item blocks, with modality features that indicate the block plus small noise.
Used by the test suite and the bundled demo scripts."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .ingest import FeatureMatrix, RawInteractions, build_split, write_mmf1


def make_block_interactions(n_users=20, n_items=30, per_user=12, seed=7) -> RawInteractions:
    """Users in block b interact with `per_user` random items from item block b."""
    rng = np.random.default_rng(seed)
    half_u, half_i = n_users // 2, n_items // 2
    records = []
    for u in range(n_users):
        block_items = np.arange(0, half_i) if u < half_u else np.arange(half_i, n_items)
        items = rng.choice(block_items, size=min(per_user, len(block_items)), replace=False)
        for i in items:
            records.append((f"u{u:03d}", f"i{i:03d}"))
    return RawInteractions(records=records)


def make_block_features(n_items=30, dim=8, noise=0.1, seed=7, modality="v") -> FeatureMatrix:
    """Block indicator spread over the first/second half of the feature dims,
    plus Gaussian noise."""
    rng = np.random.default_rng(seed)
    half_i = n_items // 2
    base = np.zeros((n_items, dim), dtype=np.float32)
    base[:half_i, : dim // 2] = 1.0
    base[half_i:, dim // 2:] = 1.0
    values = base + noise * rng.standard_normal((n_items, dim)).astype(np.float32)
    return FeatureMatrix(modality=modality, values=values.astype(np.float32))


def make_block_dataset(n_users=20, n_items=30, per_user=12, noise=0.1, seed=7,
                       d_visual=8, d_textual=6):
    """Returns (split, features_v, features_t) ready for graph construction."""
    raw = make_block_interactions(n_users, n_items, per_user, seed)
    split = build_split(raw, seed=seed)
    # token order is sorted, so item token i{k} maps to index k
    fv = make_block_features(n_items, d_visual, noise, seed + 1, "v")
    ft = make_block_features(n_items, d_textual, noise, seed + 2, "t")
    return split, fv, ft


def write_block_dataset(data_dir, n_users=20, n_items=30, per_user=12,
                        noise=0.1, seed=7, d_visual=8, d_textual=6):
    """Writes raw input files (interactions.tsv, visual/textual MMF1 + sidecars)
    for exercising the CLI end to end."""
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    raw = make_block_interactions(n_users, n_items, per_user, seed)
    with (data_dir / "interactions.tsv").open("w", encoding="utf-8") as fh:
        fh.write("# synthetic block dataset\n")
        for u, i in raw.records:
            fh.write(f"{u}\t{i}\n")
    tokens = [f"i{k:03d}" for k in range(n_items)]
    fv = make_block_features(n_items, d_visual, noise, seed + 1, "v")
    ft = make_block_features(n_items, d_textual, noise, seed + 2, "t")
    write_mmf1(data_dir / "visual.mmf1", fv.values, tokens)
    write_mmf1(data_dir / "textual.mmf1", ft.values, tokens)
    return data_dir
