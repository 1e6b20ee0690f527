"""Implicit-feedback interaction data: loading, splitting, adjacency and sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp


class DatasetError(ValueError):
    pass


class ParseError(DatasetError):
    def __init__(self, path, lineno: int, line: str):
        super().__init__(f"{path}:{lineno}: malformed interaction line {line!r}")
        self.lineno = lineno


class EmptyDatasetError(DatasetError):
    pass


class UnsampleableNegativeError(DatasetError):
    pass


def _id_key(ext_id):
    # numeric ids sort numerically, everything else lexicographically after them
    text = str(ext_id)
    return (0, int(text), "") if text.isdigit() else (1, 0, text)


def _sorted_lists(lists) -> list[np.ndarray]:
    return [np.asarray(sorted(items), dtype=np.int64) for items in lists]


@dataclass(frozen=True)
class InteractionDataset:
    num_users: int
    num_items: int
    interactions: list[np.ndarray]
    train: list[np.ndarray]
    val: list[np.ndarray]
    test: list[np.ndarray]
    user_id_map: dict[str, int] = field(default_factory=dict)
    item_id_map: dict[str, int] = field(default_factory=dict)

    @property
    def num_interactions(self) -> int:
        return int(sum(len(x) for x in self.interactions))

    @property
    def num_train(self) -> int:
        return int(sum(len(x) for x in self.train))

    @property
    def train_matrix(self) -> sp.csr_matrix:
        return _to_csr(self.train, self.num_users, self.num_items)

    def split_matrix(self, name: str) -> sp.csr_matrix:
        return _to_csr(getattr(self, name), self.num_users, self.num_items)

    @property
    def adjacency(self) -> sp.csr_matrix:
        try:
            return self.__dict__["_adjacency"]
        except KeyError:
            adj = normalized_adjacency(self.train_matrix)
            object.__setattr__(self, "_adjacency", adj)
            return adj


def _to_csr(lists, n_rows: int, n_cols: int) -> sp.csr_matrix:
    indptr = np.zeros(n_rows + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(x) for x in lists])
    indices = np.concatenate(lists) if lists else np.zeros(0, dtype=np.int64)
    data = np.ones(len(indices), dtype=np.float64)
    return sp.csr_matrix((data, indices.astype(np.int64), indptr), shape=(n_rows, n_cols))


def bipartite_graph(train: sp.csr_matrix) -> sp.csr_matrix:
    """Unnormalized symmetric (M+N)x(M+N) user-item graph."""
    return sp.bmat([[None, train], [train.T, None]], format="csr")


def normalized_adjacency(train: sp.csr_matrix) -> sp.csr_matrix:
    """D^-1/2 A D^-1/2 over the bipartite graph; isolated nodes keep zero rows."""
    graph = bipartite_graph(train).astype(np.float64)
    deg = np.asarray(graph.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    d = sp.diags(inv_sqrt)
    return (d @ graph @ d).tocsr()


def from_pairs(pairs, min_interactions: int = 3) -> InteractionDataset:
    """Build a dataset from (external_user, external_item) pairs."""
    per_user: dict[str, set[str]] = {}
    for u, i in pairs:
        per_user.setdefault(u, set()).add(i)
    per_user = {u: s for u, s in per_user.items() if len(s) >= min_interactions}
    items = sorted({i for s in per_user.values() for i in s}, key=_id_key)
    if not per_user or not items:
        raise EmptyDatasetError("no interactions left after filtering")
    users = sorted(per_user, key=_id_key)
    user_map = {u: k for k, u in enumerate(users)}
    item_map = {i: k for k, i in enumerate(items)}
    inter = _sorted_lists([item_map[i] for i in per_user[u]] for u in users)
    empty = [np.zeros(0, dtype=np.int64) for _ in users]
    return InteractionDataset(
        num_users=len(users),
        num_items=len(items),
        interactions=inter,
        train=list(inter),
        val=list(empty),
        test=list(empty),
        user_id_map=user_map,
        item_id_map=item_map,
    )


def load_interactions(path, min_interactions: int = 3) -> InteractionDataset:
    path = Path(path)
    pairs = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            if len(parts) < 2:
                raise ParseError(path, lineno, line.rstrip("\n"))
            pairs.append((parts[0], parts[1]))
    return from_pairs(pairs, min_interactions)


def save_interactions(ds: InteractionDataset, path) -> None:
    inv_u = {v: k for k, v in ds.user_id_map.items()} or {u: str(u) for u in range(ds.num_users)}
    inv_i = {v: k for k, v in ds.item_id_map.items()} or {i: str(i) for i in range(ds.num_items)}
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("# user item\n")
        for u, items in enumerate(ds.interactions):
            for i in items:
                fh.write(f"{inv_u[u]} {inv_i[int(i)]}\n")


def split_counts(n: int, ratios=(3, 1, 1)) -> tuple[int, int, int]:
    total = sum(ratios)
    n_val = math.floor(n * ratios[1] / total)
    n_test = math.floor(n * ratios[2] / total)
    return n - n_val - n_test, n_val, n_test


def split_dataset(ds: InteractionDataset, ratios=(3, 1, 1), seed: int = 0) -> InteractionDataset:
    """Per-user random train/val/test partition; train absorbs rounding remainders."""
    rng = np.random.default_rng(seed)
    train, val, test = [], [], []
    for items in ds.interactions:
        _, n_val, n_test = split_counts(len(items), ratios)
        perm = rng.permutation(items)
        test.append(np.sort(perm[:n_test]))
        val.append(np.sort(perm[n_test:n_test + n_val]))
        train.append(np.sort(perm[n_test + n_val:]))
    return replace(ds, train=train, val=val, test=test)


def neighbor_items(ds: InteractionDataset, u: int) -> list[int]:
    return [int(i) for i in ds.train[u]]


@dataclass(frozen=True)
class PairwiseBatch:
    users: np.ndarray
    pos: np.ndarray
    neg: np.ndarray

    @property
    def triples(self) -> list[tuple[int, int, int]]:
        return list(zip(self.users.tolist(), self.pos.tolist(), self.neg.tolist()))

    def __len__(self) -> int:
        return len(self.users)


class PairwiseSampler:
    """Vectorized BPR triple sampler over a dataset's train split."""

    def __init__(self, ds: InteractionDataset):
        self.ds = ds
        mat = ds.train_matrix
        self._indptr = mat.indptr
        self._indices = mat.indices.astype(np.int64)
        deg = np.diff(self._indptr)
        self._deg = deg
        self._users = np.flatnonzero(deg > 0)
        rows = np.repeat(np.arange(ds.num_users, dtype=np.int64), deg)
        self._keys = rows * ds.num_items + self._indices  # sorted by construction

    def _is_positive(self, users, items) -> np.ndarray:
        keys = users * self.ds.num_items + items
        pos = np.searchsorted(self._keys, keys)
        pos = np.minimum(pos, len(self._keys) - 1)
        return self._keys[pos] == keys

    def sample(self, batch_size: int, rng: np.random.Generator) -> PairwiseBatch:
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if len(self._users) == 0:
            raise EmptyDatasetError("no users with train interactions")
        n_items = self.ds.num_items
        users = self._users[rng.integers(0, len(self._users), size=batch_size)]
        offs = (rng.random(batch_size) * self._deg[users]).astype(np.int64)
        pos = self._indices[self._indptr[users] + offs]
        neg = rng.integers(0, n_items, size=batch_size)
        bad = self._is_positive(users, neg)
        attempts = 1
        while bad.any() and attempts < n_items:
            idx = np.flatnonzero(bad)
            neg[idx] = rng.integers(0, n_items, size=len(idx))
            bad[idx] = self._is_positive(users[idx], neg[idx])
            attempts += 1
        for r in np.flatnonzero(bad):
            # Rejection ran out of attempts. Conditioned on that, a uniform draw
            # from the complement has the same law, so finish exactly.
            u = int(users[r])
            if self._deg[u] >= n_items:
                raise UnsampleableNegativeError(
                    f"user {u}: no negative found after {n_items} rejections"
                )
            free = np.setdiff1d(np.arange(n_items), self._indices[self._indptr[u]:self._indptr[u + 1]])
            neg[r] = free[rng.integers(0, len(free))]
        return PairwiseBatch(users=users, pos=pos, neg=neg)


def sample_pairwise_batch(ds: InteractionDataset, batch_size: int, rng: np.random.Generator) -> PairwiseBatch:
    return PairwiseSampler(ds).sample(batch_size, rng)
