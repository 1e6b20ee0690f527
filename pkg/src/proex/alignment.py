"""Cross-space maps from the language space into the collaborative space,
the semantic alignment losses, and additive fusion."""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp, softmax

from .recommenders import GaussianState, xavier_uniform


class DirectMap:
    """Affine map d_s -> d applied to every profile vector."""

    def __init__(self, w: np.ndarray, b: np.ndarray):
        self.w = w
        self.b = b

    @classmethod
    def init(cls, d_s: int, d: int, rng: np.random.Generator, zero: bool = False) -> "DirectMap":
        w = np.zeros((d_s, d)) if zero else xavier_uniform(rng, d_s, d)
        return cls(w, np.zeros(d))

    def arrays(self) -> dict[str, np.ndarray]:
        return {"w": self.w, "b": self.b}

    def __call__(self, c: np.ndarray) -> np.ndarray:
        return c @ self.w + self.b

    def backward(self, c: np.ndarray, g_out: np.ndarray):
        """Returns ``(param_grads, grad_input)`` for inputs of any leading shape."""
        c2 = c.reshape(-1, c.shape[-1])
        g2 = g_out.reshape(-1, g_out.shape[-1])
        grads = {"w": c2.T @ g2, "b": g2.sum(axis=0)}
        return grads, g_out @ self.w.T


class AggregationMap:
    """Two-layer map d_s -> tanh(d_s/2) -> 2*d whose output halves are (mean, log-variance)."""

    def __init__(self, w1, b1, w2, b2):
        self.w1, self.b1, self.w2, self.b2 = w1, b1, w2, b2

    @classmethod
    def init(cls, d_s: int, d: int, rng: np.random.Generator, zero: bool = False,
             zero_log_var: float = -60.0) -> "AggregationMap":
        hidden = max(d_s // 2, 1)
        w1 = xavier_uniform(rng, d_s, hidden)
        if zero:
            # output collapses to N(0, ~0): the aligned sample is numerically zero
            w2 = np.zeros((hidden, 2 * d))
            b2 = np.concatenate([np.zeros(d), np.full(d, zero_log_var)])
        else:
            w2 = xavier_uniform(rng, hidden, 2 * d)
            b2 = np.zeros(2 * d)
        return cls(w1, np.zeros(hidden), w2, b2)

    @property
    def out_dim(self) -> int:
        return self.w2.shape[1] // 2

    def arrays(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def forward(self, x: np.ndarray):
        h = np.tanh(x @ self.w1 + self.b1)
        out = h @ self.w2 + self.b2
        d = self.out_dim
        return GaussianState(out[..., :d], out[..., d:]), (x, h)

    def backward(self, cache, g_mean: np.ndarray, g_log_var: np.ndarray):
        x, h = cache
        g_out = np.concatenate([g_mean, g_log_var], axis=-1)
        g_h = (g_out @ self.w2.T) * (1.0 - h ** 2)
        x2 = x.reshape(-1, x.shape[-1])
        h2 = h.reshape(-1, h.shape[-1])
        go2 = g_out.reshape(-1, g_out.shape[-1])
        gh2 = g_h.reshape(-1, g_h.shape[-1])
        grads = {"w2": h2.T @ go2, "b2": go2.sum(axis=0), "w1": x2.T @ gh2, "b1": gh2.sum(axis=0)}
        return grads, g_h @ self.w1.T


def direct_align(c: np.ndarray, params: DirectMap) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    if c.shape[-1] != params.w.shape[0]:
        raise ValueError(f"expected input dim {params.w.shape[0]}, got {c.shape[-1]}")
    return params(c)


def aggregation_input(c_u: np.ndarray, neighbor_c) -> np.ndarray:
    """Neighbor-mean plus the entity's own vector; no neighbors means a zero mean."""
    c_u = np.asarray(c_u, dtype=float)
    neighbor_c = np.asarray(neighbor_c, dtype=float).reshape(-1, c_u.shape[-1])
    if len(neighbor_c) == 0:
        return c_u.copy()
    return neighbor_c.mean(axis=0) + c_u


def aggregation_align(c_u, neighbor_c, params: AggregationMap, rng: np.random.Generator | None = None,
                      train_mode: bool = False):
    """Map a user's profile and its neighbors' profiles to a Gaussian in the collaborative space.

    Returns ``(state, sample)``; in eval mode ``sample`` is the mean.
    """
    state, _ = params.forward(aggregation_input(c_u, neighbor_c))
    if train_mode:
        return state, state.mean + state.std * rng.standard_normal(state.mean.shape)
    return state, state.mean.copy()


def fuse(z: np.ndarray, c: np.ndarray) -> np.ndarray:
    z, c = np.asarray(z), np.asarray(c)
    if z.shape[-1] != c.shape[-1]:
        raise ValueError(f"dimension mismatch: {z.shape[-1]} vs {c.shape[-1]}")
    return z + c


def _normalize_rows(x: np.ndarray):
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    safe = np.where(norm > 0, norm, 1.0)
    return np.where(norm > 0, x / safe, 0.0), safe, norm > 0


def _normalize_backward(unit, norm, nonzero, g_unit):
    g = (g_unit - unit * np.sum(unit * g_unit, axis=-1, keepdims=True)) / norm
    return np.where(nonzero, g, 0.0)


def infonce_alignment_loss(z: np.ndarray, c: np.ndarray, temperature: float = 0.2):
    """Symmetric cosine InfoNCE between paired rows; returns ``(loss, (grad_z, grad_c))``."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    c = np.atleast_2d(np.asarray(c, dtype=float))
    b = z.shape[0]
    zu, zn, znz = _normalize_rows(z)
    cu, cn, cnz = _normalize_rows(c)
    s = zu @ cu.T / temperature
    diag = np.diag(s)
    loss_rows = np.mean(logsumexp(s, axis=1) - diag)
    loss_cols = np.mean(logsumexp(s, axis=0) - diag)
    loss = 0.5 * (loss_rows + loss_cols)
    eye = np.eye(b)
    g_s = 0.5 * ((softmax(s, axis=1) - eye) + (softmax(s, axis=0) - eye)) / b
    g_zu = g_s @ cu / temperature
    g_cu = g_s.T @ zu / temperature
    return float(loss), (_normalize_backward(zu, zn, znz, g_zu), _normalize_backward(cu, cn, cnz, g_cu))


def gaussian_kl(mean_a, log_var_a, mean_b, log_var_b):
    """Per-row KL(N(a, s^2) || N(b, t^2)) for diagonal Gaussians with gradients.

    Returns ``(kl_rows, (g_mean_a, g_log_var_a, g_mean_b, g_log_var_b))``.
    """
    r = log_var_a - log_var_b
    var_a = np.exp(log_var_a)
    inv_b = np.exp(-log_var_b)
    diff = mean_a - mean_b
    quad = (var_a + diff ** 2) * inv_b
    # expm1(r) - r is the variance-ratio part without cancellation near r = 0
    kl = 0.5 * np.sum(np.expm1(r) - r + diff ** 2 * inv_b, axis=-1)
    g_mean_a = diff * inv_b
    return kl, (g_mean_a, -0.5 + 0.5 * var_a * inv_b, -g_mean_a, 0.5 - 0.5 * quad)


def gaussian_alignment_loss(target: GaussianState, env: GaussianState, beta: float):
    """Mean over rows of (1-beta) KL(target || env) + beta KL(target || N(0, I)).

    Returns ``(loss, grads)`` with keys ``target_mean``, ``target_log_var``,
    ``env_mean`` and ``env_log_var``.
    """
    t_mean, t_lv = np.atleast_2d(target.mean), np.atleast_2d(target.log_var)
    e_mean, e_lv = np.atleast_2d(env.mean), np.atleast_2d(env.log_var)
    n = t_mean.shape[0]
    kl_env, (ga_m, ga_lv, gb_m, gb_lv) = gaussian_kl(t_mean, t_lv, e_mean, e_lv)
    zeros = np.zeros_like(t_mean)
    kl_prior, (gp_m, gp_lv, _, _) = gaussian_kl(t_mean, t_lv, zeros, zeros)
    loss = float(np.sum((1.0 - beta) * kl_env + beta * kl_prior) / n)
    grads = {
        "target_mean": ((1.0 - beta) * ga_m + beta * gp_m) / n,
        "target_log_var": ((1.0 - beta) * ga_lv + beta * gp_lv) / n,
        "env_mean": (1.0 - beta) * gb_m / n,
        "env_log_var": (1.0 - beta) * gb_lv / n,
    }
    return loss, grads
