"""Training: BPR triple sampling, the total objective, autograd-backed exact
gradients, Adam updates, and the early-stopped training loop."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import TrainConfig
from .errors import (
    DimensionMismatch,
    Diverged,
    NoNegativesAvailable,
    NonFiniteLoss,
    NonFiniteUpdate,
)
from .graphs import NormAdjacency
from .ingest import SplitDataset
from .model import (
    MODALITIES,
    ModelDims,
    ModelState,
    REG_PARAMS,
    forward,
    init_parameters,
    modality_input,
    propagate_ui,
)
from .ssl_tasks import alignment_loss, enhancement_loss


@dataclass
class GraphBundle:
    """Immutable per-dataset inputs for the forward pass."""
    adj: NormAdjacency
    item_graphs: dict   # "v"/"t" -> ItemItemGraph
    features: dict      # "v"/"t" -> torch.Tensor (n_items x d_raw)

    def cast(self, dtype) -> "GraphBundle":
        return GraphBundle(
            adj=self.adj,
            item_graphs=self.item_graphs,
            features={m: f.to(dtype) for m, f in self.features.items()},
        )


@dataclass
class TripleBatch:
    users: np.ndarray
    pos: np.ndarray
    neg: np.ndarray

    def __len__(self):
        return len(self.users)


@dataclass
class LossBreakdown:
    bpr: float
    align_l1: float
    align_l2: float
    align_l3: float
    align_l4: float
    align_total: float
    enhance_feature: float
    enhance_graph: float
    enhance_total: float
    l2_reg: float
    total: float

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class TrainResult:
    state: ModelState
    best_epoch: int
    best_valid_recall20: float
    log: list = field(default_factory=list)


def sample_triples(split: SplitDataset, batch_size: int, rng: np.random.Generator) -> TripleBatch:
    """Positives uniform over train pairs; negatives rejection-sampled from
    items the user has no train interaction with."""
    train = split.train
    user_items = split.user_items("train")
    n_items = split.n_items
    idx = rng.integers(0, len(train), size=batch_size)
    users = np.empty(batch_size, dtype=np.int64)
    pos = np.empty(batch_size, dtype=np.int64)
    neg = np.empty(batch_size, dtype=np.int64)
    for out, j in enumerate(idx):
        u, p = train[j]
        interacted = user_items[u]
        if len(interacted) >= n_items:
            raise NoNegativesAvailable(u)
        n = int(rng.integers(0, n_items))
        while n in interacted:
            n = int(rng.integers(0, n_items))
        users[out], pos[out], neg[out] = u, p, n
    return TripleBatch(users=users, pos=pos, neg=neg)


def bpr_loss(pos_scores: torch.Tensor, neg_scores: torch.Tensor) -> torch.Tensor:
    """Mean over triples of -log sigmoid(pos - neg)."""
    if pos_scores.shape != neg_scores.shape:
        raise DimensionMismatch(tuple(pos_scores.shape), tuple(neg_scores.shape))
    return torch.nn.functional.softplus(neg_scores - pos_scores).mean()


def _loss_tensors(state: ModelState, bundle: GraphBundle, batch: TripleBatch,
                  config: TrainConfig, step_seed: int, mask_targets=None) -> dict:
    """All loss terms as tensors on the autograd graph, keyed by name."""
    n_users = state.dims.n_users
    fwd = forward(state, bundle.adj, bundle.item_graphs, bundle.features,
                  config.ui_layers, config.item_graph_layers, config.fusion)
    fused = fwd.fused

    users = torch.from_numpy(batch.users)
    pos = torch.from_numpy(batch.pos) + n_users
    neg = torch.from_numpy(batch.neg) + n_users
    u_rows = fused[users]
    bpr = bpr_loss((u_rows * fused[pos]).sum(1), (u_rows * fused[neg]).sum(1))

    if config.fusion == "concat":
        # compare per-half distributions against the d-wide modality embeddings
        d = state.dims.embed_dim
        fused_for_align = torch.cat([fused[:, :d], fused[:, d:]], dim=0)
    else:
        fused_for_align = fused
    align = alignment_loss(fused_for_align, fwd.e_enh["id"], fwd.e_enh["v"], fwd.e_enh["t"],
                           config.lambda_align, config.level_mask())

    if config.nce_negatives == "all":
        batch_users = np.arange(n_users)
        batch_items = np.arange(state.dims.n_items)
    else:
        batch_users = np.unique(batch.users)
        batch_items = np.unique(batch.pos)
    mod_inputs = {m: modality_input(state, m, bundle.features.get(m)) for m in MODALITIES}
    enh = enhancement_loss(
        bundle.adj, mod_inputs, fused, state.params["w_pred"], state.params["b_pred"],
        lambda_g=config.lambda_g, lambda_f=config.lambda_f, tau=config.tau,
        p=config.mask_ratio, eps=config.noise_scale, ui_layers=config.ui_layers,
        batch_users=batch_users, batch_items=batch_items, step_seed=step_seed,
        mask_targets=mask_targets,
    )

    reg = fused.new_zeros(())
    for name in REG_PARAMS:
        reg = reg + (state.params[name] ** 2).sum()
    reg = config.lambda_reg * reg

    terms = {
        "bpr": bpr,
        "align_l1": align.l1, "align_l2": align.l2,
        "align_l3": align.l3, "align_l4": align.l4,
        "align_total": align.total,
        "enhance_feature": enh.feature, "enhance_graph": enh.graph,
        "enhance_total": enh.total,
        "l2_reg": reg,
    }
    terms["total"] = bpr + align.total + enh.total + reg
    for name, value in terms.items():
        if not torch.isfinite(value):
            raise NonFiniteLoss(name)
    return terms


def total_loss(state: ModelState, bundle: GraphBundle, batch: TripleBatch,
               config: TrainConfig, step_seed: int = 0, mask_targets=None) -> LossBreakdown:
    with torch.no_grad():
        terms = _loss_tensors(state, bundle, batch, config, step_seed, mask_targets)
    return LossBreakdown(**{k: float(v) for k, v in terms.items()})


def frozen_mask_targets(state: ModelState, bundle: GraphBundle, batch: TripleBatch,
                        config: TrainConfig, step_seed: int = 0):
    """Masked stop-gradient views evaluated at the current parameters, for
    finite-difference oracles that must hold the constant branch fixed."""
    from .model import forward as _forward
    from .ssl_tasks import masked_views, substream

    with torch.no_grad():
        fwd = _forward(state, bundle.adj, bundle.item_graphs, bundle.features,
                       config.ui_layers, config.item_graph_layers, config.fusion)
        n_users = state.dims.n_users
        return masked_views(fwd.fused[:n_users], fwd.fused[n_users:],
                            config.mask_ratio, substream(step_seed, "mask"))


def compute_gradients(state: ModelState, bundle: GraphBundle, batch: TripleBatch,
                      config: TrainConfig, step_seed: int = 0, mask_targets=None):
    """Exact gradients of the total objective for every trainable tensor.
    Returns (grads dict, LossBreakdown); unused parameters get zero grads."""
    terms = _loss_tensors(state, bundle, batch, config, step_seed, mask_targets)
    names = list(state.params)
    grads = torch.autograd.grad(terms["total"], [state.params[n] for n in names],
                                allow_unused=True)
    out = {}
    for name, grad in zip(names, grads):
        out[name] = torch.zeros_like(state.params[name]) if grad is None else grad
    breakdown = LossBreakdown(**{k: float(v.detach()) for k, v in terms.items()})
    return out, breakdown


def adam_step(state: ModelState, grads: dict, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              t: int | None = None) -> ModelState:
    """In-place bias-corrected Adam; the fusion weight is clamped to [0,1]."""
    if t is None:
        state.step += 1
        t = state.step
    else:
        state.step = t
    with torch.no_grad():
        for name, param in state.params.items():
            g = grads[name]
            if name not in state.adam_m:
                state.adam_m[name] = torch.zeros_like(param)
                state.adam_v[name] = torch.zeros_like(param)
            m = state.adam_m[name]
            v = state.adam_v[name]
            m.mul_(beta1).add_(g, alpha=1 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1 - beta2)
            m_hat = m / (1 - beta1**t)
            v_hat = v / (1 - beta2**t)
            update = lr * m_hat / (v_hat.sqrt() + eps)
            if not torch.isfinite(update).all():
                raise NonFiniteUpdate(name)
            param.sub_(update)
        state.params["alpha"].clamp_(0.0, 1.0)
    return state


def train_loop(config: TrainConfig, split: SplitDataset, bundle: GraphBundle,
               dtype=torch.float32, log_path=None, quiet: bool = True) -> TrainResult:
    """Early-stopped training keeping the best validation-Recall@20 checkpoint."""
    from .evaluate import rank_topk, recall_at_k  # local import avoids a cycle

    dims = ModelDims(
        n_users=split.n_users, n_items=split.n_items, embed_dim=config.embed_dim,
        visual_dim=bundle.features["v"].shape[1],
        textual_dim=bundle.features["t"].shape[1],
        fusion=config.fusion,
    )
    bundle = bundle.cast(dtype)
    state = init_parameters(dims, config.seed, dtype)
    rng = np.random.default_rng(config.seed + 1)
    n_batches = max(1, math.ceil(len(split.train) / config.batch_size))
    valid_sets = {u: items for u, items in split.user_items("valid").items() if items}

    best_state = state.clone()
    best_metric = -math.inf
    best_epoch = 0
    stale = 0
    log = []
    log_fh = Path(log_path).open("w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, config.epochs + 1):
            breakdown = None
            for _ in range(n_batches):
                batch = sample_triples(split, config.batch_size, rng)
                try:
                    grads, breakdown = compute_gradients(state, bundle, batch,
                                                         config, step_seed=state.step + 1)
                except NonFiniteLoss as exc:
                    raise Diverged(epoch) from exc
                adam_step(state, grads, config.learning_rate, t=state.step + 1)

            with torch.no_grad():
                fwd = forward(state, bundle.adj, bundle.item_graphs, bundle.features,
                              config.ui_layers, config.item_graph_layers, config.fusion)
                ranked = rank_topk(fwd.fused, split, 20, target="valid")
                recall20 = recall_at_k(ranked, valid_sets, 20)

            record = {"epoch": epoch, "valid_recall20": recall20, **breakdown.to_dict()}
            log.append(record)
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
            if not quiet:
                print(f"epoch {epoch}: total={breakdown.total:.5f} valid R@20={recall20:.4f}")

            if recall20 > best_metric:
                best_metric = recall20
                best_epoch = epoch
                best_state = state.clone()
                stale = 0
            else:
                stale += 1
                if stale >= config.early_stop_patience:
                    break
    finally:
        if log_fh:
            log_fh.close()
    return TrainResult(state=best_state, best_epoch=best_epoch,
                       best_valid_recall20=best_metric, log=log)


def make_bundle(split: SplitDataset, features_v, features_t, config: TrainConfig) -> GraphBundle:
    """Convenience constructor: adjacency + frozen item graphs from raw features."""
    from .graphs import build_item_knn, build_norm_adjacency

    adj = build_norm_adjacency(split)
    graphs = {
        "v": build_item_knn(features_v, config.knn_k, config.normalize_item_graph),
        "t": build_item_knn(features_t, config.knn_k, config.normalize_item_graph),
    }
    feats = {
        "v": torch.from_numpy(np.asarray(features_v.values, dtype=np.float32)),
        "t": torch.from_numpy(np.asarray(features_t.values, dtype=np.float32)),
    }
    return GraphBundle(adj=adj, item_graphs=graphs, features=feats)
