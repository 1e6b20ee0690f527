"""Base recommenders: MF-BPR, LightGCN and Mult-VAE with hand-derived gradients.

All losses are averaged over the rows of a batch and return their gradients
alongside the value, so callers can chain them without an autodiff engine.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from scipy.special import expit, log_softmax, softmax


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out))


# -- discriminative ---------------------------------------------------------


@dataclass
class EmbeddingTable:
    user_emb: np.ndarray
    item_emb: np.ndarray

    @property
    def d(self) -> int:
        return self.user_emb.shape[1]

    def stacked(self) -> np.ndarray:
        return np.vstack([self.user_emb, self.item_emb])

    @classmethod
    def from_stacked(cls, x: np.ndarray, num_users: int) -> "EmbeddingTable":
        return cls(x[:num_users], x[num_users:])


def init_embedding_table(num_users: int, num_items: int, d: int, rng: np.random.Generator) -> EmbeddingTable:
    return EmbeddingTable(
        user_emb=xavier_uniform(rng, num_users, d),
        item_emb=xavier_uniform(rng, num_items, d),
    )


def propagate(x: np.ndarray, adjacency, layers: int) -> np.ndarray:
    """Mean of x, Ax, ..., A^L x over the stacked user+item node table."""
    out = x.copy()
    cur = x
    for _ in range(layers):
        cur = adjacency @ cur
        out += cur
    return out / (layers + 1)


# the normalized adjacency is symmetric, so the map is self-adjoint
propagate_backward = propagate


def lightgcn_propagate(emb: EmbeddingTable, adjacency, layers: int) -> EmbeddingTable:
    n_users = emb.user_emb.shape[0]
    return EmbeddingTable.from_stacked(propagate(emb.stacked(), adjacency, layers), n_users)


def logistic(x):
    return expit(x)


def score_pair(z_u: np.ndarray, z_i: np.ndarray) -> float:
    z_u, z_i = np.asarray(z_u, dtype=float), np.asarray(z_i, dtype=float)
    if z_u.shape != z_i.shape:
        raise ValueError(f"dimension mismatch: {z_u.shape} vs {z_i.shape}")
    return float(expit(z_u @ z_i))


def bpr_loss(z_u: np.ndarray, z_i: np.ndarray, z_j: np.ndarray):
    """Mean of -log sigmoid(<u,i> - <u,j>) over rows.

    Returns ``(loss, (grad_u, grad_i, grad_j))``.
    """
    diff = np.einsum("bd,bd->b", z_u, z_i - z_j)
    loss = float(np.mean(np.logaddexp(0.0, -diff)))
    g = -expit(-diff)[:, None] / len(diff)
    return loss, (g * (z_i - z_j), g * z_u, -g * z_u)


# -- generative -------------------------------------------------------------


@dataclass
class GaussianState:
    mean: np.ndarray
    log_var: np.ndarray

    @property
    def var(self) -> np.ndarray:
        return np.exp(self.log_var)

    @property
    def std(self) -> np.ndarray:
        return np.exp(0.5 * self.log_var)


@dataclass
class VAEParams:
    enc_w1: np.ndarray
    enc_b1: np.ndarray
    enc_w2: np.ndarray
    enc_b2: np.ndarray
    dec_w1: np.ndarray
    dec_b1: np.ndarray
    dec_w2: np.ndarray
    dec_b2: np.ndarray
    dropout: float = 0.5

    @property
    def latent_dim(self) -> int:
        return self.dec_w1.shape[0]

    @property
    def num_items(self) -> int:
        return self.enc_w1.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "dropout"}

    @classmethod
    def init(cls, num_items: int, rng: np.random.Generator, hidden: int = 600,
             latent: int = 200, dropout: float = 0.5) -> "VAEParams":
        return cls(
            enc_w1=xavier_uniform(rng, num_items, hidden),
            enc_b1=np.zeros(hidden),
            enc_w2=xavier_uniform(rng, hidden, 2 * latent),
            enc_b2=np.zeros(2 * latent),
            dec_w1=xavier_uniform(rng, latent, hidden),
            dec_b1=np.zeros(hidden),
            dec_w2=xavier_uniform(rng, hidden, num_items),
            dec_b2=np.zeros(num_items),
            dropout=dropout,
        )


def vae_input(x: np.ndarray, keep_mask: np.ndarray | None = None) -> np.ndarray:
    """Apply the dropout keep-mask (if any) then L2-normalize each row."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if keep_mask is not None:
        x = x * keep_mask
    norm = np.linalg.norm(x, axis=1, keepdims=True)
    return np.divide(x, norm, out=np.zeros_like(x), where=norm > 0)


def vae_encode(x, params: VAEParams, rng: np.random.Generator | None = None,
               train_mode: bool = False, keep_mask=None, eps=None):
    """Encode interaction rows into a diagonal Gaussian and a latent sample.

    In train mode the dropout mask and the reparameterization noise are drawn
    from ``rng`` unless given explicitly. In eval mode ``z`` is the mean.
    Returns ``(state, z, cache)``; ``cache`` feeds :func:`vae_encode_backward`.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    latent = params.latent_dim
    if train_mode:
        if keep_mask is None:
            keep_mask = rng.random(x.shape) >= params.dropout
        if eps is None:
            eps = rng.standard_normal((x.shape[0], latent))
    else:
        keep_mask = None
        eps = np.zeros((x.shape[0], latent))
    h0 = vae_input(x, keep_mask)
    h1 = np.tanh(h0 @ params.enc_w1 + params.enc_b1)
    out = h1 @ params.enc_w2 + params.enc_b2
    state = GaussianState(out[:, :latent], out[:, latent:])
    z = state.mean + state.std * eps
    return state, z, (h0, h1, eps, state)


def vae_encode_backward(params: VAEParams, cache, g_mean, g_log_var, g_z=None) -> dict[str, np.ndarray]:
    """Gradients of the encoder parameters given upstream gradients.

    ``g_z`` is the gradient w.r.t. the reparameterized sample and is routed
    through ``z = mean + exp(log_var / 2) * eps``.
    """
    h0, h1, eps, state = cache
    g_mean = np.array(g_mean, dtype=float)
    g_log_var = np.array(g_log_var, dtype=float)
    if g_z is not None:
        g_mean += g_z
        g_log_var += g_z * eps * 0.5 * state.std
    g_out = np.hstack([g_mean, g_log_var])
    g_h1 = (g_out @ params.enc_w2.T) * (1.0 - h1 ** 2)
    return {
        "enc_w2": h1.T @ g_out,
        "enc_b2": g_out.sum(axis=0),
        "enc_w1": h0.T @ g_h1,
        "enc_b1": g_h1.sum(axis=0),
    }


def vae_decode(z, params: VAEParams):
    z = np.atleast_2d(z)
    h = np.tanh(z @ params.dec_w1 + params.dec_b1)
    logits = h @ params.dec_w2 + params.dec_b2
    return logits, (z, h)


def vae_decode_backward(params: VAEParams, cache, g_logits):
    """Returns ``(param_grads, grad_z)``."""
    z, h = cache
    g_h = (g_logits @ params.dec_w2.T) * (1.0 - h ** 2)
    grads = {
        "dec_w2": h.T @ g_logits,
        "dec_b2": g_logits.sum(axis=0),
        "dec_w1": z.T @ g_h,
        "dec_b1": g_h.sum(axis=0),
    }
    return grads, g_h @ params.dec_w1.T


def multinomial_loss(logits, x):
    """Mean over rows of -sum_i x_i log softmax(logits)_i; returns ``(loss, grad_logits)``."""
    logits = np.atleast_2d(np.asarray(logits, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = logits.shape[0]
    loss = float(-np.sum(x * log_softmax(logits, axis=1)) / n)
    grad = (x.sum(axis=1, keepdims=True) * softmax(logits, axis=1) - x) / n
    return loss, grad


def vae_kl(q: GaussianState):
    """Mean over rows of KL(N(mean, var) || N(0, I)); returns ``(kl, (g_mean, g_log_var))``."""
    mean = np.atleast_2d(q.mean)
    log_var = np.atleast_2d(q.log_var)
    n = mean.shape[0]
    var = np.exp(log_var)
    kl = 0.5 * float(np.sum(var + mean ** 2 - 1.0 - log_var)) / n
    return kl, (mean / n, 0.5 * (var - 1.0) / n)


def vae_base_loss(params: VAEParams, x, keep_mask, eps, anneal: float):
    """Standalone Mult-VAE objective (reconstruction + annealed KL) and its gradients."""
    state, z, enc_cache = vae_encode(x, params, train_mode=True, keep_mask=keep_mask, eps=eps)
    logits, dec_cache = vae_decode(z, params)
    rec, g_logits = multinomial_loss(logits, x)
    kl, (g_mu, g_lv) = vae_kl(state)
    dec_grads, g_z = vae_decode_backward(params, dec_cache, g_logits)
    enc_grads = vae_encode_backward(params, enc_cache, anneal * g_mu, anneal * g_lv, g_z)
    return rec + anneal * kl, {**enc_grads, **dec_grads}
