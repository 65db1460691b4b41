"""Full-ranking top-K evaluation, ablation orchestration, embedding export."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from .config import TrainConfig
from .ingest import SplitDataset
from .model import export_embedding_rows, forward

ABLATION_ALIGN = ("base", "L1", "L2", "L3", "full")
ABLATION_ENHANCE = ("fg", "f", "g", "full")

# variant names follow the convention of naming what is removed: "f" drops the
# feature-masking term, "g" drops the graph-perturbation term, "fg" drops both
_LEVELS_BY_VARIANT = {
    "base": "",
    "L1": "L1",
    "L2": "L1,L2",
    "L3": "L1,L2,L3",
    "full": "L1,L2,L3,L4",
}


def variant_config(config: TrainConfig, name: str) -> TrainConfig:
    if name in _LEVELS_BY_VARIANT:
        return replace(config, align_levels=_LEVELS_BY_VARIANT[name])
    if name == "fg":
        return replace(config, lambda_f=0.0, lambda_g=0.0)
    if name == "f":
        return replace(config, lambda_f=0.0)
    if name == "g":
        return replace(config, lambda_g=0.0)
    raise ValueError(f"unknown ablation variant {name!r}")


@dataclass
class MetricsReport:
    recall10: float
    recall20: float
    ndcg10: float
    ndcg20: float
    per_user: dict  # user -> {"recall10": ..., ...}

    def row(self):
        return (self.recall10, self.recall20, self.ndcg10, self.ndcg20)


def rank_topk(fused: torch.Tensor, split: SplitDataset, k: int,
              target: str = "test", chunk: int = 1024) -> dict:
    """Per-user top-k item indices by fused-embedding dot product, train items
    masked out, ties broken by ascending item index. Users with an empty
    target set are skipped."""
    n_users = split.n_users
    target_sets = {u: items for u, items in split.user_items(target).items() if items}
    users = sorted(target_sets)
    train_sets = split.user_items("train")
    emb = fused.detach().cpu().numpy()
    user_emb, item_emb = emb[:n_users], emb[n_users:]

    ranked = {}
    for start in range(0, len(users), chunk):
        block = users[start:start + chunk]
        scores = user_emb[block] @ item_emb.T
        for row, u in enumerate(block):
            s = scores[row]
            s[list(train_sets.get(u, ()))] = -np.inf
            ranked[u] = np.argsort(-s, kind="stable")[:k].tolist()
    return ranked


def recall_at_k(ranked: dict, test_sets: dict, k: int) -> float:
    """Mean over users of |top-k hits| / |test set|."""
    users = [u for u in ranked if test_sets.get(u)]
    if not users:
        return 0.0
    total = 0.0
    for u in users:
        hits = sum(1 for item in ranked[u][:k] if item in test_sets[u])
        total += hits / len(test_sets[u])
    return total / len(users)


def ndcg_at_k(ranked: dict, test_sets: dict, k: int) -> float:
    users = [u for u in ranked if test_sets.get(u)]
    if not users:
        return 0.0
    total = 0.0
    for u in users:
        dcg = sum(
            1.0 / math.log2(pos + 2)
            for pos, item in enumerate(ranked[u][:k])
            if item in test_sets[u]
        )
        ideal = sum(1.0 / math.log2(j + 2) for j in range(min(k, len(test_sets[u]))))
        total += dcg / ideal
    return total / len(users)


def evaluate_model(state, bundle, config: TrainConfig, split: SplitDataset,
                   target: str = "test") -> MetricsReport:
    with torch.no_grad():
        fwd = forward(state, bundle.adj, bundle.item_graphs, bundle.features,
                      config.ui_layers, config.item_graph_layers, config.fusion)
    target_sets = {u: items for u, items in split.user_items(target).items() if items}
    ranked = rank_topk(fwd.fused, split, 20, target=target)
    per_user = {}
    for u in ranked:
        top = ranked[u]
        test = target_sets[u]
        per_user[u] = {
            "recall10": sum(1 for i in top[:10] if i in test) / len(test),
            "recall20": sum(1 for i in top[:20] if i in test) / len(test),
        }
    return MetricsReport(
        recall10=recall_at_k(ranked, target_sets, 10),
        recall20=recall_at_k(ranked, target_sets, 20),
        ndcg10=ndcg_at_k(ranked, target_sets, 10),
        ndcg20=ndcg_at_k(ranked, target_sets, 20),
        per_user=per_user,
    )


def run_ablation(config: TrainConfig, variants, split: SplitDataset, bundle,
                 target: str = "test", dtype=torch.float32, log_dir=None):
    """Train each variant with shared seed/data; rows of
    (variant, R@10, R@20, N@10, N@20)."""
    from .train import train_loop

    rows = []
    for name in variants:
        cfg = variant_config(config, name)
        log_path = Path(log_dir) / f"{name}.log.jsonl" if log_dir else None
        result = train_loop(cfg, split, bundle, dtype=dtype, log_path=log_path)
        report = evaluate_model(result.state, bundle.cast(dtype), cfg, split, target=target)
        rows.append((name, *report.row()))
    return rows


def write_metrics_tsv(rows, path):
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("variant\tR@10\tR@20\tN@10\tN@20\n")
        for name, r10, r20, n10, n20 in rows:
            fh.write(f"{name}\t{r10:.6f}\t{r20:.6f}\t{n10:.6f}\t{n20:.6f}\n")


def export_embeddings(state, bundle, config: TrainConfig, modalities, path,
                      sample: int = 500, seed: int = 0):
    """Seeded random sample of enhanced item-row embeddings per modality,
    written in the TSV export format."""
    with torch.no_grad():
        fwd = forward(state, bundle.adj, bundle.item_graphs, bundle.features,
                      config.ui_layers, config.item_graph_layers, config.fusion)
    n_users = state.dims.n_users
    n_items = state.dims.n_items
    rng = np.random.default_rng(seed)
    if sample >= n_items:
        indices = np.arange(n_items)
    else:
        indices = np.sort(rng.choice(n_items, size=sample, replace=False))
    with Path(path).open("w", encoding="utf-8") as fh:
        for m in modalities:
            matrix = (fwd.fused if m == "fused" else fwd.e_enh[m]).detach().cpu().numpy()
            export_embedding_rows(fh, f"item_{m}", indices, matrix[n_users:])
    return indices
