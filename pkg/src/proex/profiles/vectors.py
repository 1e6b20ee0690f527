"""Profile-vector corpora: container, embedding of text records, and the
``PROEX-VEC v1`` text format."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ProfileFormatError(ValueError):
    pass


class EmbeddingError(RuntimeError):
    def __init__(self, entity, k: int, cause: Exception):
        super().__init__(f"embedding failed for {entity} profile {k}: {cause}")
        self.entity = entity
        self.k = k


@dataclass
class ProfileSet:
    """Per-entity K x d_s profile vectors; index 0 is the original profile.

    Values are held at single precision (widened to float64) so the 9-digit
    text format round-trips bit-exactly.
    """

    kind: str
    vectors: np.ndarray  # (count, K, d_s)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float32).astype(np.float64)
        if self.kind not in ("user", "item"):
            raise ProfileFormatError(f"kind must be user or item, got {self.kind!r}")
        if self.vectors.ndim != 3:
            raise ProfileFormatError(f"expected (count, K, d_s) array, got shape {self.vectors.shape}")
        if not np.all(np.isfinite(self.vectors)):
            raise ProfileFormatError("profile vectors contain non-finite values")

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def K(self) -> int:
        return self.vectors.shape[1]

    @property
    def d_s(self) -> int:
        return self.vectors.shape[2]

    def select(self, profile_indices) -> "ProfileSet":
        return ProfileSet(self.kind, self.vectors[:, list(profile_indices), :])

    def __eq__(self, other):
        return (isinstance(other, ProfileSet) and self.kind == other.kind
                and self.vectors.shape == other.vectors.shape
                and np.array_equal(self.vectors, other.vectors))


@dataclass
class ProfileBundle:
    user: ProfileSet
    item: ProfileSet

    @property
    def K(self) -> int:
        return self.user.K

    def select(self, profile_indices) -> "ProfileBundle":
        return ProfileBundle(self.user.select(profile_indices), self.item.select(profile_indices))


def embed_profiles(records, embedder, kind: str | None = None) -> ProfileSet:
    """Embed every profile text of every record; records are ordered by dense id."""
    records = sorted(records, key=lambda r: r.entity_id)
    if not records:
        raise ProfileFormatError("no records to embed")
    ks = {len(r.profiles) for r in records}
    if len(ks) != 1:
        raise ProfileFormatError(f"records disagree on K: {sorted(ks)}")
    ids = [r.entity_id for r in records]
    if ids != list(range(len(ids))):
        raise ProfileFormatError("records must cover dense ids 0..n-1 exactly")
    rows = []
    for rec in records:
        vecs = []
        for k, text in enumerate(rec.profiles):
            try:
                vecs.append(np.asarray(embedder.embed(text), dtype=np.float64))
            except Exception as exc:  # noqa: BLE001 - any embedder failure is reported with its location
                raise EmbeddingError((rec.kind, rec.entity_id), k, exc) from exc
        rows.append(np.stack(vecs))
    return ProfileSet(kind or records[0].kind, np.stack(rows))


_HEADER = re.compile(r"^PROEX-VEC v1 kind=(user|item) count=(\d+) K=(\d+) d_s=(\d+)$")


def save_profile_set(ps: ProfileSet, path) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        fh.write(f"PROEX-VEC v1 kind={ps.kind} count={ps.count} K={ps.K} d_s={ps.d_s}\n")
        for e in range(ps.count):
            for k in range(ps.K):
                vals = " ".join(format(v, ".9g") for v in ps.vectors[e, k])
                fh.write(f"{e} {k} {vals}\n")
    os.replace(tmp, path)


def load_profile_set(path) -> ProfileSet:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        m = _HEADER.match(header)
        if not m:
            raise ProfileFormatError(f"{path}: bad header {header!r}")
        kind = m.group(1)
        count, K, d_s = (int(m.group(i)) for i in (2, 3, 4))
        vectors = np.full((count, K, d_s), np.nan)
        seen = np.zeros((count, K), dtype=bool)
        for lineno, line in enumerate(fh, 2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != d_s + 2:
                raise ProfileFormatError(f"{path}:{lineno}: expected {d_s} values, got {len(parts) - 2}")
            e, k = int(parts[0]), int(parts[1])
            if not (0 <= e < count and 0 <= k < K):
                raise ProfileFormatError(f"{path}:{lineno}: index ({e}, {k}) out of range")
            vectors[e, k] = np.array(parts[2:], dtype=np.float64).astype(np.float32)
            seen[e, k] = True
    if not seen.all():
        bad = int(np.flatnonzero(~seen.all(axis=1))[0])
        raise ProfileFormatError(
            f"{path}: shape mismatch, entity {bad} has {int(seen[bad].sum())} of K={K} profile rows"
        )
    if not np.all(np.isfinite(vectors)):
        raise ProfileFormatError(f"{path}: non-finite values")
    return ProfileSet(kind, vectors)
