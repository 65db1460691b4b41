"""Raw data ingestion: interaction TSVs, k-core filtering, ID mapping,
per-user 8:1:1 splitting, and the MMF1 binary feature format."""

from __future__ import annotations

import struct
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    DimensionMismatch,
    EmptyCore,
    MalformedLine,
    MissingFile,
    MissingItemRow,
    NonFiniteValue,
)

MMF1_MAGIC = b"MMF1"


@dataclass
class RawInteractions:
    records: list  # list of (user_token, item_token), unique pairs

    def __len__(self):
        return len(self.records)


@dataclass
class SplitDataset:
    n_users: int
    n_items: int
    train: list
    valid: list
    test: list
    user_map: dict = field(default_factory=dict)
    item_map: dict = field(default_factory=dict)

    @property
    def n_interactions(self):
        return len(self.train) + len(self.valid) + len(self.test)

    def user_items(self, part="train") -> dict:
        """user_idx -> set of item_idx for the given partition."""
        out = defaultdict(set)
        for u, i in getattr(self, part):
            out[u].add(i)
        return dict(out)


@dataclass
class FeatureMatrix:
    modality: str
    values: np.ndarray  # n_items x d_m, float32

    @property
    def dim(self):
        return self.values.shape[1]


def load_interactions(path) -> RawInteractions:
    path = Path(path)
    if not path.exists():
        raise MissingFile(path)
    seen = {}
    with path.open(encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, 1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) < 2 or not cols[0] or not cols[1]:
                raise MalformedLine(line_no, line)
            seen[(cols[0], cols[1])] = None
    return RawInteractions(records=list(seen))


def apply_k_core(raw: RawInteractions, k: int) -> RawInteractions:
    """Iteratively drop users/items with degree < k until a fixed point."""
    if k < 1:
        raise ValueError("k must be >= 1")
    records = list(raw.records)
    while True:
        user_deg = Counter(u for u, _ in records)
        item_deg = Counter(i for _, i in records)
        kept = [
            (u, i) for u, i in records
            if user_deg[u] >= k and item_deg[i] >= k
        ]
        if len(kept) == len(records):
            break
        records = kept
    if not records:
        raise EmptyCore(k)
    return RawInteractions(records=records)


def build_id_maps(raw: RawInteractions):
    """Contiguous indices assigned in sorted-token order (reproducible)."""
    users = sorted({u for u, _ in raw.records})
    items = sorted({i for _, i in raw.records})
    return {u: idx for idx, u in enumerate(users)}, {i: idx for idx, i in enumerate(items)}


def build_split(raw: RawInteractions, seed: int, ratios=(8, 1, 1)) -> SplitDataset:
    """Per-user random split. With ratios (8,1,1): a user with n interactions
    gives floor(n/10) to test, floor(n/10) to valid, the rest to train."""
    user_map, item_map = build_id_maps(raw)
    per_user = defaultdict(list)
    for u, i in raw.records:
        per_user[user_map[u]].append(item_map[i])

    denom = sum(ratios)
    rng = np.random.default_rng(seed)
    train, valid, test = [], [], []
    for u in sorted(per_user):
        items = sorted(per_user[u])
        rng.shuffle(items)
        n = len(items)
        n_test = (n * ratios[2]) // denom
        n_valid = (n * ratios[1]) // denom
        test.extend((u, i) for i in items[:n_test])
        valid.extend((u, i) for i in items[n_test:n_test + n_valid])
        train.extend((u, i) for i in items[n_test + n_valid:])
    return SplitDataset(
        n_users=len(user_map), n_items=len(item_map),
        train=train, valid=valid, test=test,
        user_map=user_map, item_map=item_map,
    )


# --- MMF1 feature files ---
# bytes 0-3 "MMF1", u32le row count, u32le col count, then rows*cols f32le
# row-major. Row order is given by a sidecar TSV `index<TAB>item_token`.

def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".items.tsv")


def write_mmf1(path, matrix: np.ndarray, tokens: list):
    path = Path(path)
    mat = np.ascontiguousarray(matrix, dtype="<f4")
    with path.open("wb") as fh:
        fh.write(MMF1_MAGIC)
        fh.write(struct.pack("<II", mat.shape[0], mat.shape[1]))
        fh.write(mat.tobytes())
    with sidecar_path(path).open("w", encoding="utf-8") as fh:
        for idx, token in enumerate(tokens):
            fh.write(f"{idx}\t{token}\n")


def load_features(path, item_map: dict, modality: str, sidecar=None) -> FeatureMatrix:
    path = Path(path)
    if not path.exists():
        raise MissingFile(path)
    sidecar = Path(sidecar) if sidecar else sidecar_path(path)
    if not sidecar.exists():
        raise MissingFile(sidecar)

    with path.open("rb") as fh:
        magic = fh.read(4)
        if magic != MMF1_MAGIC:
            raise BadMagic(path, magic)
        rows, cols = struct.unpack("<II", fh.read(8))
        payload = np.frombuffer(fh.read(rows * cols * 4), dtype="<f4")
    if payload.size != rows * cols:
        raise DimensionMismatch(rows * cols, payload.size)
    payload = payload.reshape(rows, cols)

    token_of_row = {}
    with sidecar.open(encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            cols_ = line.split("\t")
            if len(cols_) < 2:
                raise MalformedLine(line_no, line)
            token_of_row[int(cols_[0])] = cols_[1]

    row_of_token = {token: idx for idx, token in token_of_row.items()}
    n_items = len(item_map)
    out = np.empty((n_items, cols), dtype=np.float32)
    for token, item_idx in item_map.items():
        src = row_of_token.get(token)
        if src is None or src >= rows:
            raise MissingItemRow(token)
        out[item_idx] = payload[src]

    bad = np.argwhere(~np.isfinite(out))
    if bad.size:
        raise NonFiniteValue(int(bad[0][0]), int(bad[0][1]))
    return FeatureMatrix(modality=modality, values=out)


# --- split files ---

def write_split(split: SplitDataset, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name in ("train", "valid", "test"):
        with (out_dir / f"{name}.tsv").open("w", encoding="utf-8") as fh:
            for u, i in getattr(split, name):
                fh.write(f"{u}\t{i}\n")
    with (out_dir / "maps.tsv").open("w", encoding="utf-8") as fh:
        for token, idx in sorted(split.user_map.items(), key=lambda kv: kv[1]):
            fh.write(f"user\t{token}\t{idx}\n")
        for token, idx in sorted(split.item_map.items(), key=lambda kv: kv[1]):
            fh.write(f"item\t{token}\t{idx}\n")


def read_split(out_dir) -> SplitDataset:
    out_dir = Path(out_dir)
    parts = {}
    for name in ("train", "valid", "test"):
        path = out_dir / f"{name}.tsv"
        if not path.exists():
            raise MissingFile(path)
        pairs = []
        for raw in path.read_text(encoding="utf-8").splitlines():
            if not raw.strip():
                continue
            u, i = raw.split("\t")
            pairs.append((int(u), int(i)))
        parts[name] = pairs
    maps_path = out_dir / "maps.tsv"
    if not maps_path.exists():
        raise MissingFile(maps_path)
    user_map, item_map = {}, {}
    for raw in maps_path.read_text(encoding="utf-8").splitlines():
        if not raw.strip():
            continue
        kind, token, idx = raw.split("\t")
        (user_map if kind == "user" else item_map)[token] = int(idx)
    return SplitDataset(
        n_users=len(user_map), n_items=len(item_map),
        train=parts["train"], valid=parts["valid"], test=parts["test"],
        user_map=user_map, item_map=item_map,
    )
