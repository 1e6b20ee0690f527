"""Planted-factor corpora with noisy (and optionally adversarial) profile vectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import InteractionDataset, from_pairs
from .profiles.vectors import ProfileBundle, ProfileSet


@dataclass(frozen=True)
class SyntheticSpec:
    num_users: int = 500
    num_items: int = 300
    latent_dim: int = 8
    density: float = 0.02
    noise: float = 0.3
    adversarial: int = 0
    K: int = 4
    d_s: int = 64

    def __post_init__(self):
        if not 0 < self.density <= 1:
            raise ValueError("density must lie in (0, 1]")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if not 0 <= self.adversarial <= self.K:
            raise ValueError("adversarial count must lie in [0, K]")

    @property
    def per_user(self) -> int:
        return int(np.floor(self.density * self.num_items))


@dataclass
class SyntheticCorpus:
    dataset: InteractionDataset
    profiles: ProfileBundle
    user_factors: np.ndarray
    item_factors: np.ndarray
    user_lift: np.ndarray
    item_lift: np.ndarray


def _profiles(kind, factors, lift, spec, rng) -> ProfileSet:
    n = len(factors)
    clean = factors @ lift.T  # (n, d_s)
    vecs = np.repeat(clean[:, None, :], spec.K, axis=1)
    vecs = vecs + spec.noise * rng.standard_normal(vecs.shape)
    if spec.adversarial:
        vecs[:, spec.K - spec.adversarial:, :] = rng.standard_normal((n, spec.adversarial, spec.d_s))
    return ProfileSet(kind, vecs)


def generate_synthetic(spec: SyntheticSpec, seed: int = 0) -> SyntheticCorpus:
    """Each user interacts with the top ``floor(density * N)`` items by factor score.

    Profiles are the true factors lifted into d_s dimensions by a fixed random
    map, plus isotropic noise; the last ``adversarial`` slots are pure noise.
    Items nobody interacts with are dropped so the corpus round-trips through
    the interaction file format.
    """
    rng = np.random.default_rng(seed)
    uf = rng.standard_normal((spec.num_users, spec.latent_dim))
    itf = rng.standard_normal((spec.num_items, spec.latent_dim))
    scale = 1.0 / np.sqrt(spec.latent_dim)
    u_lift = rng.standard_normal((spec.d_s, spec.latent_dim)) * scale
    i_lift = rng.standard_normal((spec.d_s, spec.latent_dim)) * scale
    scores = uf @ itf.T
    top = np.argsort(-scores, axis=1, kind="stable")[:, : spec.per_user]
    pairs = [(str(u), str(int(i))) for u in range(spec.num_users) for i in top[u]]
    ds = from_pairs(pairs, min_interactions=1)
    users = np.array([int(k) for k in sorted(ds.user_id_map, key=ds.user_id_map.get)])
    items = np.array([int(k) for k in sorted(ds.item_id_map, key=ds.item_id_map.get)])
    uf, itf = uf[users], itf[items]
    user_ps = _profiles("user", uf, u_lift, spec, rng)
    item_ps = _profiles("item", itf, i_lift, spec, rng)
    return SyntheticCorpus(ds, ProfileBundle(user_ps, item_ps), uf, itf, u_lift, i_lift)
