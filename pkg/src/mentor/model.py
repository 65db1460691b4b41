"""Trainable state and the forward pass: per-modality user-item propagation,
semantic enhancement from the item graphs, fusion, and scoring."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import BadMagic, DimensionMismatch, IndexOutOfRange
from .graphs import ItemItemGraph, NormAdjacency, propagate_item_graph

MODALITIES = ("id", "v", "t")
CKPT_MAGIC = b"MNT1"

# parameters regularized by the modality L2 term
REG_PARAMS = ("e_user_v", "e_user_t", "w_v", "b_v", "w_t", "b_t")


@dataclass
class ModelDims:
    n_users: int
    n_items: int
    embed_dim: int
    visual_dim: int
    textual_dim: int
    fusion: str = "sum"

    @property
    def n_nodes(self):
        return self.n_users + self.n_items

    @property
    def fused_dim(self):
        return self.embed_dim * (2 if self.fusion == "concat" else 1)


@dataclass
class ModelState:
    dims: ModelDims
    params: dict              # name -> torch.Tensor (requires_grad)
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)
    step: int = 0

    @property
    def dtype(self):
        return self.params["e_id"].dtype

    def clone(self) -> "ModelState":
        return ModelState(
            dims=self.dims,
            params={k: v.detach().clone().requires_grad_(True) for k, v in self.params.items()},
            adam_m={k: v.clone() for k, v in self.adam_m.items()},
            adam_v={k: v.clone() for k, v in self.adam_v.items()},
            step=self.step,
        )


@dataclass
class PropagatedEmbeddings:
    """Per-modality propagated (e_bar) and enhanced (e_enh) node embeddings
    plus the fused representation used for scoring."""
    e_bar: dict
    e_enh: dict
    fused: torch.Tensor


def _xavier(shape, generator, dtype):
    fan_in, fan_out = (shape[0], shape[1]) if len(shape) == 2 else (shape[0], shape[0])
    bound = float(np.sqrt(6.0 / (fan_in + fan_out)))
    t = torch.empty(shape, dtype=dtype)
    t.uniform_(-bound, bound, generator=generator)
    return t


def init_parameters(dims: ModelDims, seed: int, dtype=torch.float32) -> ModelState:
    g = torch.Generator().manual_seed(seed)
    d = dims.embed_dim
    f = dims.fused_dim
    params = {
        "e_id": _xavier((dims.n_nodes, d), g, dtype),
        "e_user_v": _xavier((dims.n_users, d), g, dtype),
        "e_user_t": _xavier((dims.n_users, d), g, dtype),
        "w_v": _xavier((dims.visual_dim, d), g, dtype),
        "b_v": torch.zeros(d, dtype=dtype),
        "w_t": _xavier((dims.textual_dim, d), g, dtype),
        "b_t": torch.zeros(d, dtype=dtype),
        "alpha": torch.tensor(0.5, dtype=dtype),
        "w_pred": _xavier((f, f), g, dtype),
        "b_pred": torch.zeros(f, dtype=dtype),
    }
    for t in params.values():
        t.requires_grad_(True)
    return ModelState(dims=dims, params=params)


def modality_input(state: ModelState, modality: str, features: torch.Tensor | None = None) -> torch.Tensor:
    """id -> ID embedding table; v/t -> user modality embeddings stacked on
    projected raw item features."""
    p = state.params
    if modality == "id":
        return p["e_id"]
    if modality not in ("v", "t"):
        raise ValueError(f"unknown modality {modality!r}")
    if features is None:
        raise DimensionMismatch("features", None)
    if features.shape[0] != state.dims.n_items:
        raise DimensionMismatch(state.dims.n_items, features.shape[0])
    w, b = p[f"w_{modality}"], p[f"b_{modality}"]
    if features.shape[1] != w.shape[0]:
        raise DimensionMismatch(w.shape[0], features.shape[1])
    item_rows = features @ w + b
    return torch.cat([p[f"e_user_{modality}"], item_rows], dim=0)


def propagate_ui(adj: NormAdjacency, emb: torch.Tensor, layers: int) -> torch.Tensor:
    """Layer-wise neighbor mixing; returns the sum over layers 0..L."""
    if emb.shape[0] != adj.n_nodes:
        raise DimensionMismatch(adj.n_nodes, emb.shape[0])
    if layers < 0:
        raise ValueError("layers must be >= 0")
    a = adj.torch_matrix(emb.dtype)
    out = emb
    cur = emb
    for _ in range(layers):
        cur = torch.sparse.mm(a, cur)
        out = out + cur
    return out


def enhance(e_bar: torch.Tensor, n_users: int, semantic_items: torch.Tensor | None = None) -> torch.Tensor:
    if semantic_items is None:
        return e_bar
    if semantic_items.shape != e_bar[n_users:].shape:
        raise DimensionMismatch(tuple(e_bar[n_users:].shape), tuple(semantic_items.shape))
    return torch.cat([e_bar[:n_users], e_bar[n_users:] + semantic_items], dim=0)


def fuse(e_v: torch.Tensor, e_t: torch.Tensor, alpha: torch.Tensor, mode: str = "sum") -> torch.Tensor:
    if e_v.shape != e_t.shape:
        raise DimensionMismatch(tuple(e_v.shape), tuple(e_t.shape))
    if mode == "concat":
        return torch.cat([alpha * e_v, (1.0 - alpha) * e_t], dim=1)
    return alpha * e_v + (1.0 - alpha) * e_t


def score(fused: torch.Tensor, n_users: int, user_idx: int, item_idx: int) -> float:
    n_items = fused.shape[0] - n_users
    if not (0 <= user_idx < n_users):
        raise IndexOutOfRange(user_idx, n_users)
    if not (0 <= item_idx < n_items):
        raise IndexOutOfRange(item_idx, n_items)
    return float(fused[user_idx] @ fused[n_users + item_idx])


def forward(
    state: ModelState,
    adj: NormAdjacency,
    item_graphs: dict,
    features: dict,
    ui_layers: int,
    item_graph_layers: int = 1,
    fusion: str = "sum",
) -> PropagatedEmbeddings:
    """Full deterministic forward pass. `item_graphs`/`features` map "v"/"t"
    to ItemItemGraph / n_items x d_raw tensors; ID has no semantic graph."""
    n_users = state.dims.n_users
    e_bar, e_enh = {}, {}
    for m in MODALITIES:
        x = modality_input(state, m, features.get(m))
        bar = propagate_ui(adj, x, ui_layers)
        g: ItemItemGraph | None = item_graphs.get(m)
        if g is not None:
            semantic = propagate_item_graph(g, x[n_users:], item_graph_layers)
            e_enh[m] = enhance(bar, n_users, semantic)
        else:
            e_enh[m] = bar
        e_bar[m] = bar
    fused = fuse(e_enh["v"], e_enh["t"], state.params["alpha"], fusion)
    return PropagatedEmbeddings(e_bar=e_bar, e_enh=e_enh, fused=fused)


# --- checkpoint I/O ---
# "MNT1", u32 hash length, config hash (utf-8), u32 tensor count, then per
# tensor: u32 name length, name, u32 rows, u32 cols, rows*cols f32le.

def save_checkpoint(state: ModelState, path, config_hash: str = ""):
    digest = config_hash.encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(digest)))
        fh.write(digest)
        fh.write(struct.pack("<III", len(state.params), state.dims.n_users, state.dims.n_items))
        fh.write(struct.pack("<I", 1 if state.dims.fusion == "concat" else 0))
        for name, tensor in sorted(state.params.items()):
            data = tensor.detach().to(torch.float32).cpu().numpy()
            if data.ndim == 0:
                data = data.reshape(1, 1)
            elif data.ndim == 1:
                data = data.reshape(1, -1)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<II", data.shape[0], data.shape[1]))
            fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def load_checkpoint(path, dtype=torch.float32):
    """Returns (ModelState, config_hash). Adam moments start fresh."""
    with Path(path).open("rb") as fh:
        magic = fh.read(4)
        if magic != CKPT_MAGIC:
            raise BadMagic(path, magic)
        (hash_len,) = struct.unpack("<I", fh.read(4))
        config_hash = fh.read(hash_len).decode("utf-8")
        n_tensors, n_users, n_items = struct.unpack("<III", fh.read(12))
        (concat_flag,) = struct.unpack("<I", fh.read(4))
        params = {}
        for _ in range(n_tensors):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            rows, cols = struct.unpack("<II", fh.read(8))
            data = np.frombuffer(fh.read(rows * cols * 4), dtype="<f4").reshape(rows, cols)
            params[name] = torch.from_numpy(data.copy()).to(dtype)

    d = params["e_id"].shape[1]
    params["alpha"] = params["alpha"].reshape(())
    for name in ("b_v", "b_t", "b_pred"):
        params[name] = params[name].reshape(-1)
    dims = ModelDims(
        n_users=n_users, n_items=n_items, embed_dim=d,
        visual_dim=params["w_v"].shape[0], textual_dim=params["w_t"].shape[0],
        fusion="concat" if concat_flag else "sum",
    )
    for t in params.values():
        t.requires_grad_(True)
    return ModelState(dims=dims, params=params), config_hash


def export_embedding_rows(fh, node_type: str, indices, matrix: np.ndarray):
    """TSV rows: node_type, index, then the embedding values."""
    for idx in indices:
        values = "\t".join(f"{x:.8g}" for x in matrix[idx])
        fh.write(f"{node_type}\t{idx}\t{values}\n")
