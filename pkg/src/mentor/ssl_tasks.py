"""Self-supervised losses: Gaussian moment-matching cross-modal alignment,
dropout-masked feature reconstruction, and noisy-propagation InfoNCE."""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import torch

from .errors import DimensionMismatch, EmptyMatrix, ZeroRow
from .graphs import NormAdjacency

STD_EPS = 1e-12   # inside the std sqrt; keeps the gradient finite at sigma=0
NORM_EPS = 1e-12  # inside row-norm sqrt for cosine terms


def substream(seed: int, tag: str) -> torch.Generator:
    """Deterministic named RNG stream derived from a step seed."""
    mixed = (seed * 1000003 + zlib.crc32(tag.encode())) % (2**63 - 1)
    return torch.Generator().manual_seed(mixed)


@dataclass
class GaussianMoments:
    mu: torch.Tensor     # column-wise mean, d-vector
    sigma: torch.Tensor  # column-wise population std, d-vector


@dataclass
class AlignmentLoss:
    l1: torch.Tensor
    l2: torch.Tensor
    l3: torch.Tensor
    l4: torch.Tensor
    total: torch.Tensor


@dataclass
class EnhancementLoss:
    feature: torch.Tensor
    graph: torch.Tensor
    total: torch.Tensor


def gaussian_moments(matrix: torch.Tensor) -> GaussianMoments:
    if matrix.numel() == 0 or matrix.shape[0] < 1:
        raise EmptyMatrix()
    mu = matrix.mean(dim=0)
    var = ((matrix - mu) ** 2).mean(dim=0)
    return GaussianMoments(mu=mu, sigma=torch.sqrt(var + STD_EPS))


def moment_distance(a: GaussianMoments, b: GaussianMoments) -> torch.Tensor:
    if a.mu.shape != b.mu.shape:
        raise DimensionMismatch(tuple(a.mu.shape), tuple(b.mu.shape))
    return (a.mu - b.mu).abs().mean() + (a.sigma - b.sigma).abs().mean()


def alignment_loss(
    fused: torch.Tensor,
    e_id: torch.Tensor,
    e_v: torch.Tensor,
    e_t: torch.Tensor,
    lambda_align: float,
    level_mask=frozenset({"L1", "L2", "L3", "L4"}),
) -> AlignmentLoss:
    """Four alignment levels between the fused/ID/visual/textual embeddings,
    each as a distance between empirical Gaussian moments."""
    m_vt = gaussian_moments(fused)
    m_id = gaussian_moments(e_id)
    m_v = gaussian_moments(e_v)
    m_t = gaussian_moments(e_t)
    zero = fused.new_zeros(())
    l1 = moment_distance(m_id, m_vt) if "L1" in level_mask else zero
    l2 = (moment_distance(m_id, m_v) + moment_distance(m_id, m_t)) if "L2" in level_mask else zero
    l3 = (moment_distance(m_vt, m_v) + moment_distance(m_vt, m_t)) if "L3" in level_mask else zero
    l4 = moment_distance(m_v, m_t) if "L4" in level_mask else zero
    total = lambda_align * (l1 + l2 + l3 + l4)
    return AlignmentLoss(l1=l1, l2=l2, l3=l3, l4=l4, total=total)


def keep_mask(shape, p: float, generator: torch.Generator, dtype) -> torch.Tensor:
    """Entrywise mask: 0 with probability p, 1 otherwise. No rescaling."""
    return (torch.rand(shape, generator=generator) >= p).to(dtype)


def _row_cosine_mean(const_view: torch.Tensor, pred_view: torch.Tensor) -> torch.Tensor:
    # smooth norms; zero-norm rows contribute cosine ~0 via the numerator
    num = (const_view * pred_view).sum(dim=1)
    na = torch.sqrt((const_view**2).sum(dim=1) + NORM_EPS)
    nb = torch.sqrt((pred_view**2).sum(dim=1) + NORM_EPS)
    return (num / (na * nb)).mean()


def masked_views(e_users: torch.Tensor, e_items: torch.Tensor, p: float,
                 generator: torch.Generator):
    """The detached dropout-masked contrastive targets."""
    masked_u = (e_users * keep_mask(e_users.shape, p, generator, e_users.dtype)).detach()
    masked_i = (e_items * keep_mask(e_items.shape, p, generator, e_items.dtype)).detach()
    return masked_u, masked_i


def feature_mask_loss(
    e_users: torch.Tensor,
    e_items: torch.Tensor,
    p: float,
    w_pred: torch.Tensor,
    b_pred: torch.Tensor,
    generator: torch.Generator,
    targets=None,
) -> torch.Tensor:
    """Masked views are stop-gradient targets; gradients flow only through the
    predictor transform. `targets` pins pre-computed masked views so finite
    differencing can hold the constant branch fixed."""
    masked_u, masked_i = targets if targets is not None else masked_views(
        e_users, e_items, p, generator)
    pred_u = e_users @ w_pred + b_pred
    pred_i = e_items @ w_pred + b_pred
    return (1.0 - _row_cosine_mean(masked_u, pred_u)) + (1.0 - _row_cosine_mean(masked_i, pred_i))


def perturbed_propagate(
    adj: NormAdjacency,
    emb: torch.Tensor,
    layers: int,
    eps: float,
    generator: torch.Generator,
) -> torch.Tensor:
    """Propagation with fresh uniform-[0,1) noise added at every layer; the
    layer-0 term of the sum is the unperturbed embedding."""
    if layers < 1:
        raise ValueError("layers must be >= 1")
    if emb.shape[0] != adj.n_nodes:
        raise DimensionMismatch(adj.n_nodes, emb.shape[0])
    a = adj.torch_matrix(emb.dtype)
    out = emb
    cur = emb
    for _ in range(layers):
        noise = torch.rand(emb.shape, generator=generator).to(emb.dtype)
        cur = torch.sparse.mm(a, cur) + eps * noise
        out = out + cur
    return out


def info_nce(view1: torch.Tensor, view2: torch.Tensor, tau: float, rows=None) -> torch.Tensor:
    """Sum over `rows` of -log softmax of the cross-view similarity, with
    negatives drawn from the same row set."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    if view1.shape != view2.shape:
        raise DimensionMismatch(tuple(view1.shape), tuple(view2.shape))
    if rows is not None:
        rows = torch.as_tensor(rows, dtype=torch.long)
        view1 = view1[rows]
        view2 = view2[rows]
    if view1.shape[0] == 0:
        raise ValueError("rows must be nonempty")
    for v in (view1, view2):
        norms = v.norm(dim=1)
        bad = torch.nonzero(norms == 0)
        if bad.numel():
            raise ZeroRow(int(bad[0, 0]))
    z1 = view1 / view1.norm(dim=1, keepdim=True)
    z2 = view2 / view2.norm(dim=1, keepdim=True)
    logits = (z1 @ z2.T) / tau
    pos = logits.diagonal()
    return (torch.logsumexp(logits, dim=1) - pos).sum()


def enhancement_loss(
    adj: NormAdjacency,
    modality_inputs: dict,
    fused: torch.Tensor,
    w_pred: torch.Tensor,
    b_pred: torch.Tensor,
    *,
    lambda_g: float,
    lambda_f: float,
    tau: float,
    p: float,
    eps: float,
    ui_layers: int,
    batch_users,
    batch_items,
    step_seed: int,
    mask_targets=None,
) -> EnhancementLoss:
    """Graph term: InfoNCE between two noisy propagations per modality, over
    user rows and item rows separately. Feature term: masked reconstruction of
    the fused embedding."""
    n_users = adj.n_users
    zero = fused.new_zeros(())

    graph = zero
    if lambda_g != 0.0:
        for m in ("v", "t"):
            x = modality_inputs[m]
            v1 = perturbed_propagate(adj, x, ui_layers, eps, substream(step_seed, f"noise-{m}-view1"))
            v2 = perturbed_propagate(adj, x, ui_layers, eps, substream(step_seed, f"noise-{m}-view2"))
            graph = graph + info_nce(v1[:n_users], v2[:n_users], tau, rows=batch_users)
            graph = graph + info_nce(v1[n_users:], v2[n_users:], tau, rows=batch_items)

    feature = zero
    if lambda_f != 0.0:
        feature = feature_mask_loss(
            fused[:n_users], fused[n_users:], p, w_pred, b_pred,
            substream(step_seed, "mask"), targets=mask_targets,
        )

    return EnhancementLoss(feature=feature, graph=graph,
                           total=lambda_g * graph + lambda_f * feature)
