"""Graph construction: the symmetric-normalized user-item adjacency and the
frozen per-modality top-k cosine item-item graphs, plus sparse propagation."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import torch

from .errors import (
    BadMagic,
    DimensionMismatch,
    IsolatedNode,
    KTooLarge,
    ZeroVector,
)
from .ingest import FeatureMatrix, SplitDataset

IIG_MAGIC = b"IIG1"


def _torch_coo(matrix: sp.csr_matrix, dtype) -> torch.Tensor:
    coo = matrix.tocoo()
    indices = torch.from_numpy(np.vstack([coo.row, coo.col]).astype(np.int64))
    values = torch.from_numpy(coo.data.astype(np.float64)).to(dtype)
    return torch.sparse_coo_tensor(indices, values, coo.shape).coalesce()


@dataclass
class NormAdjacency:
    """(n_users+n_items)^2 symmetric adjacency with 1/sqrt(deg_u*deg_i) weights
    at train interactions (both orientations)."""

    n_users: int
    n_items: int
    matrix: sp.csr_matrix
    _torch_cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_nodes(self):
        return self.n_users + self.n_items

    def torch_matrix(self, dtype=torch.float32) -> torch.Tensor:
        if dtype not in self._torch_cache:
            self._torch_cache[dtype] = _torch_coo(self.matrix, dtype)
        return self._torch_cache[dtype]


@dataclass
class ItemItemGraph:
    modality: str
    k: int
    normalize: bool
    matrix: sp.csr_matrix  # n_items x n_items, no self-loops
    frozen: bool = True
    _torch_cache: dict = field(default_factory=dict, repr=False)

    def torch_matrix(self, dtype=torch.float32) -> torch.Tensor:
        if dtype not in self._torch_cache:
            self._torch_cache[dtype] = _torch_coo(self.matrix, dtype)
        return self._torch_cache[dtype]

    def content_hash(self) -> str:
        csr = self.matrix.tocsr()
        csr.sort_indices()
        h = hashlib.sha256()
        h.update(csr.indptr.astype("<u4").tobytes())
        h.update(csr.indices.astype("<u4").tobytes())
        h.update(csr.data.astype("<f4").tobytes())
        return h.hexdigest()


def build_norm_adjacency(split: SplitDataset) -> NormAdjacency:
    n_users, n_items = split.n_users, split.n_items
    n = n_users + n_items
    if not split.train:
        raise IsolatedNode(0)
    users = np.array([u for u, _ in split.train], dtype=np.int64)
    items = np.array([i for _, i in split.train], dtype=np.int64)

    user_deg = np.bincount(users, minlength=n_users)
    item_deg = np.bincount(items, minlength=n_items)
    missing_users = np.nonzero(user_deg == 0)[0]
    if missing_users.size:
        raise IsolatedNode(int(missing_users[0]))

    weights = 1.0 / np.sqrt(user_deg[users] * item_deg[items])
    rows = np.concatenate([users, items + n_users])
    cols = np.concatenate([items + n_users, users])
    data = np.concatenate([weights, weights])
    matrix = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
    return NormAdjacency(n_users=n_users, n_items=n_items, matrix=matrix)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ZeroVector()
    return float(a @ b / (na * nb))


def build_item_knn(features: FeatureMatrix, k: int, normalize: bool = True) -> ItemItemGraph:
    """Top-k cosine neighbors per row (self excluded, ties to the lower item
    index), binarized; optionally D^-1/2 S D^-1/2 with D the row-sum diagonal."""
    values = np.asarray(features.values, dtype=np.float64)
    n = values.shape[0]
    if n == 1:
        raise KTooLarge(k, n)
    norms = np.linalg.norm(values, axis=1)
    zero_rows = np.nonzero(norms == 0.0)[0]
    if zero_rows.size:
        raise ZeroVector(f"at row {int(zero_rows[0])}")
    unit = values / norms[:, None]
    sims = unit @ unit.T
    np.fill_diagonal(sims, -np.inf)

    kk = min(k, n - 1)
    rows, cols = [], []
    for i in range(n):
        # stable sort of -sims keeps ascending index among ties
        order = np.argsort(-sims[i], kind="stable")[:kk]
        rows.append(np.full(kk, i, dtype=np.int64))
        cols.append(order.astype(np.int64))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    data = np.ones(len(rows), dtype=np.float64)
    binarized = sp.csr_matrix((data, (rows, cols)), shape=(n, n))

    if normalize:
        row_sum = np.asarray(binarized.sum(axis=1)).ravel()
        inv_sqrt = 1.0 / np.sqrt(row_sum)
        d = sp.diags(inv_sqrt)
        matrix = (d @ binarized @ d).tocsr()
    else:
        matrix = binarized
    return ItemItemGraph(modality=features.modality, k=k, normalize=normalize, matrix=matrix)


def propagate_item_graph(graph: ItemItemGraph, item_emb: torch.Tensor, layers: int = 1) -> torch.Tensor:
    if layers < 1:
        raise ValueError("layers must be >= 1")
    if item_emb.shape[0] != graph.matrix.shape[0]:
        raise DimensionMismatch(graph.matrix.shape[0], item_emb.shape[0])
    s = graph.torch_matrix(item_emb.dtype)
    out = item_emb
    for _ in range(layers):
        out = torch.sparse.mm(s, out)
    return out


# --- on-disk graph cache ---

def save_item_graph(graph: ItemItemGraph, path):
    csr = graph.matrix.tocsr()
    csr.sort_indices()
    modality = graph.modality.encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(IIG_MAGIC)
        fh.write(struct.pack("<I", len(modality)))
        fh.write(modality)
        fh.write(struct.pack("<II", graph.k, 1 if graph.normalize else 0))
        fh.write(struct.pack("<II", csr.shape[0], csr.nnz))
        fh.write(csr.indptr.astype("<u4").tobytes())
        fh.write(csr.indices.astype("<u4").tobytes())
        fh.write(csr.data.astype("<f4").tobytes())


def load_item_graph(path) -> ItemItemGraph:
    with Path(path).open("rb") as fh:
        magic = fh.read(4)
        if magic != IIG_MAGIC:
            raise BadMagic(path, magic)
        (mod_len,) = struct.unpack("<I", fh.read(4))
        modality = fh.read(mod_len).decode("utf-8")
        k, norm_flag = struct.unpack("<II", fh.read(8))
        n, nnz = struct.unpack("<II", fh.read(8))
        indptr = np.frombuffer(fh.read(4 * (n + 1)), dtype="<u4").astype(np.int64)
        indices = np.frombuffer(fh.read(4 * nnz), dtype="<u4").astype(np.int64)
        data = np.frombuffer(fh.read(4 * nnz), dtype="<f4").astype(np.float64)
    matrix = sp.csr_matrix((data, indices, indptr), shape=(n, n))
    return ItemItemGraph(modality=modality, k=k, normalize=bool(norm_flag), matrix=matrix)
