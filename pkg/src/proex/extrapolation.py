"""Profile extrapolation: Dirichlet environment weights, convex profile mixing
and the contrastive regularizer that pushes an entity's profiles apart."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

from .recommenders import GaussianState


@dataclass(frozen=True)
class EnvironmentConfig:
    num_envs: int
    alphas: tuple[float, ...]
    share_across_sides: bool = True

    def __post_init__(self):
        if self.num_envs < 1:
            raise ValueError("num_envs must be >= 1")
        if len(self.alphas) < 1 or any(a <= 0 for a in self.alphas):
            raise ValueError(f"Dirichlet shape parameters must be positive, got {self.alphas}")

    @property
    def K(self) -> int:
        return len(self.alphas)

    @classmethod
    def uniform(cls, num_envs: int, K: int, alpha: float = 0.1) -> "EnvironmentConfig":
        return cls(num_envs, (alpha,) * K)


def sample_env_weights(cfg: EnvironmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Draw ``num_envs`` Dirichlet(alphas) vectors as normalized Gamma variates.

    Gamma(a) is drawn as Gamma(a + 1) * U^(1/a) in log space, so tiny shape
    parameters never produce an all-zero draw. Returns shape ``(num_envs, K)``.
    """
    alphas = np.asarray(cfg.alphas, dtype=float)
    shape = (cfg.num_envs, len(alphas))
    log_g = np.log(rng.standard_gamma(alphas + 1.0, size=shape)) + np.log(rng.random(shape)) / alphas
    return np.exp(log_g - logsumexp(log_g, axis=1, keepdims=True))


def mix_profiles(profiles: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Convex combination over the profile axis (second to last) of ``profiles``."""
    profiles = np.asarray(profiles, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if profiles.shape[-2] != len(weights):
        raise ValueError(f"{profiles.shape[-2]} profiles but {len(weights)} weights")
    return np.einsum("...kd,k->...d", profiles, weights)


def mix_gaussians(states, weights: np.ndarray) -> GaussianState:
    """Mix means and variances separately with the same convex weights.

    ``states`` is a list of K GaussianStates or one GaussianState whose arrays
    carry the profile axis second to last.
    """
    if not isinstance(states, GaussianState):
        states = GaussianState(np.stack([s.mean for s in states], axis=-2),
                               np.stack([s.log_var for s in states], axis=-2))
    weights = np.asarray(weights, dtype=float)
    if states.mean.shape[-2] != len(weights):
        raise ValueError(f"{states.mean.shape[-2]} states but {len(weights)} weights")
    mean = mix_profiles(states.mean, weights)
    b = weights.reshape((-1, 1))
    log_var = logsumexp(states.log_var, axis=-2, b=np.broadcast_to(b, states.log_var.shape[-2:]))
    return GaussianState(mean, log_var)


def mix_gaussians_backward(states: GaussianState, mixed: GaussianState, weights, g_mean, g_log_var):
    """Gradients w.r.t. the stacked component means and log-variances."""
    weights = np.asarray(weights, dtype=float)
    g_m = weights[:, None] * g_mean[..., None, :]
    share = weights[:, None] * np.exp(states.log_var - mixed.log_var[..., None, :])
    return g_m, share * g_log_var[..., None, :]


def contrastive_reg_loss(aligned: np.ndarray, tau: float = 0.2, normalize: bool = True):
    """Profile-dispersion regularizer averaged over entities.

    For each entity with profiles c_1..c_K the loss is
    ``sum_k log(1 + exp(1/tau) * sum_{k' != k} exp(<c_k, c_k'> / tau))``.
    ``aligned`` has shape ``(K, d)`` or ``(B, K, d)``; returns ``(loss, grad)``.
    """
    aligned = np.asarray(aligned, dtype=float)
    single = aligned.ndim == 2
    x = aligned[None] if single else aligned
    n, k, _ = x.shape
    if k < 2:
        return 0.0, np.zeros_like(aligned)
    if normalize:
        norm = np.linalg.norm(x, axis=-1, keepdims=True)
        nonzero = norm > 0
        safe = np.where(nonzero, norm, 1.0)
        u = np.where(nonzero, x / safe, 0.0)
    else:
        u = x
    s = np.einsum("bkd,bjd->bkj", u, u) / tau
    s_off = np.where(np.eye(k, dtype=bool), -np.inf, s)
    lse = logsumexp(s_off, axis=-1)
    a = 1.0 / tau + lse
    loss = float(np.sum(np.logaddexp(0.0, a)) / n)
    g_s = expit(a)[..., None] * np.exp(s_off - lse[..., None]) / n
    g_u = np.einsum("bkj,bjd->bkd", g_s + np.swapaxes(g_s, 1, 2), u) / tau
    if normalize:
        g = (g_u - u * np.sum(u * g_u, axis=-1, keepdims=True)) / safe
        g = np.where(nonzero, g, 0.0)
    else:
        g = g_u
    return loss, g[0] if single else g
