"""Training and inference: environment losses, the total objective, Adam and
early stopping around the three base recommenders."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.sparse as sp

from . import alignment as al
from . import recommenders as rec
from .dataset import InteractionDataset, PairwiseBatch, PairwiseSampler
from .evaluation import evaluate_rankings, rank_topn
from .extrapolation import (
    EnvironmentConfig,
    contrastive_reg_loss,
    mix_gaussians,
    mix_gaussians_backward,
    mix_profiles,
    sample_env_weights,
)
from .profiles.vectors import ProfileBundle

log = logging.getLogger(__name__)

DISCRIMINATIVE = ("mf-bpr", "lightgcn")
GENERATIVE = ("mult-vae",)
MODELS = DISCRIMINATIVE + GENERATIVE


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class HyperParams:
    model: str = "lightgcn"
    use_profiles: bool = True
    lr: float = 1e-3
    batch_size: int | None = None  # 4096 discriminative, 1024 generative
    d: int = 32
    layers: int = 3
    latent_dim: int = 200
    hidden_dim: int = 600
    dropout: float = 0.5
    anneal: float = 0.2
    K: int = 4
    num_envs: int = 2
    alpha: float = 0.1
    tau: float = 0.2
    align_temperature: float = 0.2
    lambda1: float = 0.1
    lambda2: float = 0.1
    lambda3: float = 1.0
    beta: float = 0.5
    normalize_reg: bool = True
    align_init: str = "xavier"  # or "zero"
    patience: int = 20
    max_epochs: int = 500
    eval_cutoff: int = 20

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; expected one of {MODELS}")
        checks = [
            (self.K >= 1, "K must be >= 1"),
            (self.num_envs >= 1, "num_envs must be >= 1"),
            (0.0 <= self.lambda1 <= 1.0, "lambda1 must lie in [0, 1]"),
            (0.0 <= self.lambda2 <= 2.0, "lambda2 must lie in [0, 2]"),
            (self.lambda3 >= 0.0, "lambda3 must be >= 0"),
            (0.0 <= self.beta <= 1.0, "beta must lie in [0, 1]"),
            (self.tau > 0 and self.align_temperature > 0, "temperatures must be positive"),
            (self.alpha > 0, "alpha must be positive"),
            (self.lr > 0, "lr must be positive"),
            (0.0 <= self.dropout < 1.0, "dropout must lie in [0, 1)"),
            (self.align_init in ("xavier", "zero"), "align_init must be xavier or zero"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)

    @property
    def generative(self) -> bool:
        return self.model in GENERATIVE

    @property
    def effective_batch_size(self) -> int:
        if self.batch_size is not None:
            return self.batch_size
        return 1024 if self.generative else 4096

    @property
    def effective_layers(self) -> int:
        return 0 if self.model == "mf-bpr" else self.layers

    def env_config(self) -> EnvironmentConfig:
        return EnvironmentConfig.uniform(self.num_envs, self.K, self.alpha)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainState:
    params: dict[str, np.ndarray]
    hp: HyperParams
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    epoch: int = 0
    best_metric: float = -np.inf
    best_epoch: int = -1
    stale_epochs: int = 0

    @classmethod
    def fresh(cls, params, hp) -> "TrainState":
        return cls(
            params=params,
            hp=hp,
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(state: TrainState, grads: dict[str, np.ndarray], lr: float,
              b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8) -> TrainState:
    """Bias-corrected Adam update; returns a new state with fresh arrays."""
    for name, g in grads.items():
        if name not in state.params:
            raise KeyError(f"gradient for unknown parameter block {name!r}")
        if g.shape != state.params[name].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {state.params[name].shape} for {name}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient in parameter block {name!r}")
    t = state.t + 1
    params, m, v = dict(state.params), dict(state.m), dict(state.v)
    for name, g in grads.items():
        m[name] = b1 * state.m[name] + (1 - b1) * g
        v[name] = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = m[name] / (1 - b1 ** t)
        v_hat = v[name] / (1 - b2 ** t)
        params[name] = state.params[name] - lr * m_hat / (np.sqrt(v_hat) + eps)
    new = copy.copy(state)
    new.params, new.m, new.v, new.t = params, m, v, t
    return new


def total_loss(env_losses, reg_loss: float, lambda2: float, lambda3: float):
    """Sum of environment losses + weighted regularizer + weighted population variance.

    Returns ``(total, variance, d_total/d_env)``.
    """
    env = np.asarray(env_losses, dtype=float)
    if env.size < 1:
        raise ValueError("need at least one environment loss")
    mean = env.mean()
    var = float(np.mean((env - mean) ** 2))
    total = float(env.sum() + lambda2 * reg_loss + lambda3 * var)
    d_env = 1.0 + lambda3 * 2.0 * (env - mean) / env.size
    return total, var, d_env


def _add(acc: dict, grads: dict, scale: float = 1.0, prefix: str = "") -> None:
    for k, g in grads.items():
        key = prefix + k
        if key in acc:
            acc[key] = acc[key] + scale * g
        else:
            acc[key] = scale * g


@dataclass
class StepNoise:
    """All randomness consumed by one loss evaluation, drawn up front."""

    keep_mask: np.ndarray | None = None
    eps_z: np.ndarray | None = None
    eps_profile: np.ndarray | None = None


class DiscriminativeModel:
    """MF-BPR / LightGCN with direct profile alignment on both sides."""

    def __init__(self, ds: InteractionDataset, profiles: ProfileBundle | None, hp: HyperParams):
        self.ds, self.hp = ds, hp
        self.profiles = profiles if hp.use_profiles else None
        self.layers = hp.effective_layers
        self.adj = ds.adjacency
        self.sampler = PairwiseSampler(ds)
        if self.profiles is not None:
            _check_profiles(ds, self.profiles, hp)

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        emb = rec.init_embedding_table(self.ds.num_users, self.ds.num_items, self.hp.d, rng)
        params = {"user_emb": emb.user_emb, "item_emb": emb.item_emb}
        if self.profiles is not None:
            zero = self.hp.align_init == "zero"
            for side, ps in (("user", self.profiles.user), ("item", self.profiles.item)):
                m = al.DirectMap.init(ps.d_s, self.hp.d, rng, zero=zero)
                params[f"align_{side}.w"], params[f"align_{side}.b"] = m.w, m.b
        return params

    def batches(self, rng: np.random.Generator):
        n_steps = max(1, -(-self.ds.num_train // self.hp.effective_batch_size))
        for _ in range(n_steps):
            yield self.sampler.sample(self.hp.effective_batch_size, rng)

    def sample_noise(self, batch, rng) -> StepNoise:
        return StepNoise()

    def _propagated(self, params):
        x = np.vstack([params["user_emb"], params["item_emb"]])
        return rec.propagate(x, self.adj, self.layers)

    def _map(self, params, side) -> al.DirectMap:
        return al.DirectMap(params[f"align_{side}.w"], params[f"align_{side}.b"])

    def base_loss(self, params, batch: PairwiseBatch, noise=None) -> float:
        p = self._propagated(params)
        m = self.ds.num_users
        return rec.bpr_loss(p[batch.users], p[m + batch.pos], p[m + batch.neg])[0]

    def forward(self, params, batch: PairwiseBatch) -> dict:
        m = self.ds.num_users
        p = self._propagated(params)
        ctx = {"p": p, "batch": batch}
        ctx["z_u"], ctx["z_i"], ctx["z_j"] = p[batch.users], p[m + batch.pos], p[m + batch.neg]
        if self.profiles is not None:
            uu, inv_u = np.unique(batch.users, return_inverse=True)
            ii, inv_ij = np.unique(np.concatenate([batch.pos, batch.neg]), return_inverse=True)
            up = np.unique(batch.pos)
            ctx.update(
                uu=uu, inv_u=inv_u, ii=ii,
                inv_i=inv_ij[: len(batch)], inv_j=inv_ij[len(batch):],
                up=up, inv_up=np.searchsorted(ii, up),
                c_u=self.profiles.user.vectors[uu], c_i=self.profiles.item.vectors[ii],
            )
            ctx["a_u"] = self._map(params, "user")(ctx["c_u"])  # (|U|, K, d)
            ctx["a_i"] = self._map(params, "item")(ctx["c_i"])
        return ctx

    def env_loss(self, ctx: dict, weights: np.ndarray):
        """One environment's loss and its gradients on the shared intermediates."""
        hp = self.hp
        if self.profiles is None:
            loss, (gu, gi, gj) = rec.bpr_loss(ctx["z_u"], ctx["z_i"], ctx["z_j"])
            return loss, {"rec": loss, "align": 0.0}, {"z_u": gu, "z_i": gi, "z_j": gj}
        mix_u = mix_profiles(ctx["a_u"], weights)
        mix_i = mix_profiles(ctx["a_i"], weights)
        fu = al.fuse(ctx["z_u"], mix_u[ctx["inv_u"]])
        fi = al.fuse(ctx["z_i"], mix_i[ctx["inv_i"]])
        fj = al.fuse(ctx["z_j"], mix_i[ctx["inv_j"]])
        l_rec, (gu, gi, gj) = rec.bpr_loss(fu, fi, fj)
        g_mix_u = np.zeros_like(mix_u)
        g_mix_i = np.zeros_like(mix_i)
        np.add.at(g_mix_u, ctx["inv_u"], gu)
        np.add.at(g_mix_i, ctx["inv_i"], gi)
        np.add.at(g_mix_i, ctx["inv_j"], gj)
        grads = {"z_u": gu, "z_i": gi, "z_j": gj}
        m = self.ds.num_users
        p = ctx["p"]
        la_u, (gzu, gcu) = al.infonce_alignment_loss(p[ctx["uu"]], mix_u, hp.align_temperature)
        la_i, (gzi, gci) = al.infonce_alignment_loss(p[m + ctx["up"]], mix_i[ctx["inv_up"]], hp.align_temperature)
        l_align = 0.5 * (la_u + la_i)
        s = 0.5 * hp.lambda1
        g_mix_u += s * gcu
        np.add.at(g_mix_i, ctx["inv_up"], s * gci)
        grads["p_users"] = s * gzu
        grads["p_items"] = s * gzi
        grads["mix_u"], grads["mix_i"] = g_mix_u, g_mix_i
        return l_rec + hp.lambda1 * l_align, {"rec": l_rec, "align": l_align}, grads

    def reg_loss(self, ctx):
        if self.profiles is None:
            return 0.0, None
        lu, gu = contrastive_reg_loss(ctx["a_u"], self.hp.tau, self.hp.normalize_reg)
        li, gi = contrastive_reg_loss(ctx["a_i"], self.hp.tau, self.hp.normalize_reg)
        return 0.5 * (lu + li), {"a_u": 0.5 * gu, "a_i": 0.5 * gi}

    def backward(self, params, ctx, env_grads, env_scales, weights, reg_grads, lambda2):
        m = self.ds.num_users
        batch = ctx["batch"]
        g_p = np.zeros_like(ctx["p"])
        g_a_u = np.zeros_like(ctx["a_u"]) if self.profiles is not None else None
        g_a_i = np.zeros_like(ctx["a_i"]) if self.profiles is not None else None
        for g, s, w in zip(env_grads, env_scales, weights):
            np.add.at(g_p, batch.users, s * g["z_u"])
            np.add.at(g_p, m + batch.pos, s * g["z_i"])
            np.add.at(g_p, m + batch.neg, s * g["z_j"])
            if "p_users" in g:
                g_p[ctx["uu"]] += s * g["p_users"]
                g_p[m + ctx["up"]] += s * g["p_items"]
            if self.profiles is not None:
                g_a_u += s * w[None, :, None] * g["mix_u"][:, None, :]
                g_a_i += s * w[None, :, None] * g["mix_i"][:, None, :]
        grads = {}
        g_x = rec.propagate_backward(g_p, self.adj, self.layers)
        grads["user_emb"], grads["item_emb"] = g_x[:m], g_x[m:]
        if self.profiles is not None:
            if reg_grads is not None and lambda2 != 0:
                g_a_u += lambda2 * reg_grads["a_u"]
                g_a_i += lambda2 * reg_grads["a_i"]
            gu, _ = self._map(params, "user").backward(ctx["c_u"], g_a_u)
            gi, _ = self._map(params, "item").backward(ctx["c_i"], g_a_i)
            _add(grads, gu, prefix="align_user.")
            _add(grads, gi, prefix="align_item.")
        return grads

    def step(self, params, batch: PairwiseBatch, weights, noise=None, include_reg: bool = True):
        """Full objective for one mini-batch; returns ``(total, grads, terms)``."""
        hp = self.hp
        ctx = self.forward(params, batch)
        env_losses, parts, env_grads = [], [], []
        for w in weights:
            loss, part, g = self.env_loss(ctx, w)
            env_losses.append(loss)
            parts.append(part)
            env_grads.append(g)
        l_reg, g_reg = self.reg_loss(ctx) if include_reg else (0.0, None)
        total, var, scales = total_loss(env_losses, l_reg, hp.lambda2, hp.lambda3)
        grads = self.backward(params, ctx, env_grads, scales, weights, g_reg, hp.lambda2)
        terms = {
            "total": total,
            "rec": float(np.mean([p["rec"] for p in parts])),
            "align": float(np.mean([p["align"] for p in parts])),
            "reg": l_reg,
            "var": var,
        }
        return total, grads, terms

    def scores(self, params, users=None) -> np.ndarray:
        m = self.ds.num_users
        p = self._propagated(params)
        zu, zi = p[:m], p[m:]
        if self.profiles is not None:
            # the affine map commutes with mean pooling over profiles
            zu = al.fuse(zu, self._map(params, "user")(self.profiles.user.vectors.mean(axis=1)))
            zi = al.fuse(zi, self._map(params, "item")(self.profiles.item.vectors.mean(axis=1)))
        if users is not None:
            zu = zu[users]
        return zu @ zi.T


class GenerativeModel:
    """Mult-VAE with aggregation alignment of user profiles."""

    def __init__(self, ds: InteractionDataset, profiles: ProfileBundle | None, hp: HyperParams):
        self.ds, self.hp = ds, hp
        self.profiles = profiles if hp.use_profiles else None
        self.x = ds.train_matrix
        self.train_users = np.flatnonzero(np.diff(self.x.indptr) > 0)
        if self.profiles is not None:
            _check_profiles(ds, self.profiles, hp)
            self.agg_inputs = aggregation_inputs(self.x, self.profiles)

    def vae(self, params) -> rec.VAEParams:
        return rec.VAEParams(**{k[4:]: v for k, v in params.items() if k.startswith("vae.")},
                             dropout=self.hp.dropout)

    def agg(self, params) -> al.AggregationMap:
        return al.AggregationMap(params["agg.w1"], params["agg.b1"], params["agg.w2"], params["agg.b2"])

    def init_params(self, rng):
        vae = rec.VAEParams.init(self.ds.num_items, rng, self.hp.hidden_dim, self.hp.latent_dim, self.hp.dropout)
        params = {f"vae.{k}": v for k, v in vae.arrays().items()}
        if self.profiles is not None:
            agg = al.AggregationMap.init(self.profiles.user.d_s, self.hp.latent_dim, rng,
                                         zero=self.hp.align_init == "zero")
            params.update({f"agg.{k}": v for k, v in agg.arrays().items()})
        return params

    def batches(self, rng):
        order = rng.permutation(self.train_users)
        bs = self.hp.effective_batch_size
        for start in range(0, len(order), bs):
            yield order[start:start + bs]

    def sample_noise(self, users, rng) -> StepNoise:
        n = len(users)
        noise = StepNoise(
            keep_mask=rng.random((n, self.ds.num_items)) >= self.hp.dropout,
            eps_z=rng.standard_normal((n, self.hp.latent_dim)),
        )
        if self.profiles is not None:
            noise.eps_profile = rng.standard_normal((n, self.hp.latent_dim))
        return noise

    def _rows(self, users):
        return self.x[users].toarray()

    def base_loss(self, params, users, noise: StepNoise) -> float:
        x = self._rows(users)
        return rec.vae_base_loss(self.vae(params), x, noise.keep_mask, noise.eps_z, self.hp.anneal)[0]

    def step(self, params, users, weights, noise: StepNoise, include_reg: bool = True):
        """Full objective for one mini-batch; returns ``(total, grads, terms)``."""
        hp = self.hp
        vae = self.vae(params)
        x = self._rows(users)
        q, z, enc_cache = rec.vae_encode(x, vae, train_mode=True, keep_mask=noise.keep_mask, eps=noise.eps_z)
        kl, (g_kl_mu, g_kl_lv) = rec.vae_kl(q)
        if self.profiles is None:
            logits, dec_cache = rec.vae_decode(z, vae)
            l_rec, g_logits = rec.multinomial_loss(logits, x)
            dec_grads, g_z = rec.vae_decode_backward(vae, dec_cache, g_logits)
            enc_grads = rec.vae_encode_backward(vae, enc_cache, hp.anneal * g_kl_mu, hp.anneal * g_kl_lv, g_z)
            loss = l_rec + hp.anneal * kl
            grads = {f"vae.{k}": v for k, v in {**enc_grads, **dec_grads}.items()}
            return loss, grads, {"total": loss, "rec": loss, "align": 0.0, "reg": 0.0, "var": 0.0}

        agg = self.agg(params)
        comps, agg_cache = agg.forward(self.agg_inputs[users])  # (B, K, dz)
        env_losses, env_parts, env_caches = [], [], []
        for w in weights:
            mixed = mix_gaussians(comps, w)
            c_e = mixed.mean + mixed.std * noise.eps_profile
            z_e = al.fuse(z, c_e)
            logits, dec_cache = rec.vae_decode(z_e, vae)
            l_mult, g_logits = rec.multinomial_loss(logits, x)
            l_align, g_align = al.gaussian_alignment_loss(q, mixed, hp.beta)
            l_rec = l_mult + hp.anneal * kl
            env_losses.append(l_rec + hp.lambda1 * l_align)
            env_parts.append((l_rec, l_align))
            env_caches.append((mixed, dec_cache, g_logits, g_align))
        if include_reg:
            l_reg, g_reg = contrastive_reg_loss(comps.mean, hp.tau, hp.normalize_reg)
        else:
            l_reg, g_reg = 0.0, np.zeros_like(comps.mean)
        total, var, scales = total_loss(env_losses, l_reg, hp.lambda2, hp.lambda3)

        dec_grads: dict = {}
        g_z = np.zeros_like(z)
        g_mu = np.zeros_like(q.mean)
        g_lv = np.zeros_like(q.log_var)
        g_comp_mean = hp.lambda2 * g_reg
        g_comp_lv = np.zeros_like(comps.log_var)
        for s, w, (mixed, dec_cache, g_logits, g_align) in zip(scales, weights, env_caches):
            dg, g_ze = rec.vae_decode_backward(vae, dec_cache, s * g_logits)
            _add(dec_grads, dg)
            g_z += g_ze
            g_mix_mean = g_ze + s * hp.lambda1 * g_align["env_mean"]
            g_mix_lv = g_ze * noise.eps_profile * 0.5 * mixed.std + s * hp.lambda1 * g_align["env_log_var"]
            gm, glv = mix_gaussians_backward(comps, mixed, w, g_mix_mean, g_mix_lv)
            g_comp_mean = g_comp_mean + gm
            g_comp_lv = g_comp_lv + glv
            g_mu += s * (hp.anneal * g_kl_mu + hp.lambda1 * g_align["target_mean"])
            g_lv += s * (hp.anneal * g_kl_lv + hp.lambda1 * g_align["target_log_var"])
        enc_grads = rec.vae_encode_backward(vae, enc_cache, g_mu, g_lv, g_z)
        agg_grads, _ = agg.backward(agg_cache, g_comp_mean, g_comp_lv)
        grads = {f"vae.{k}": v for k, v in {**enc_grads, **dec_grads}.items()}
        grads.update({f"agg.{k}": v for k, v in agg_grads.items()})
        terms = {
            "total": total,
            "rec": float(np.mean([p[0] for p in env_parts])),
            "align": float(np.mean([p[1] for p in env_parts])),
            "reg": l_reg,
            "var": var,
        }
        return total, grads, terms

    def scores(self, params, users=None) -> np.ndarray:
        vae = self.vae(params)
        users = np.arange(self.ds.num_users) if users is None else np.asarray(users)
        q, z, _ = rec.vae_encode(self._rows(users), vae, train_mode=False)
        if self.profiles is not None:
            comps, _ = self.agg(params).forward(self.agg_inputs[users])
            z = al.fuse(z, comps.mean.mean(axis=1))
        logits, _ = rec.vae_decode(z, vae)
        return logits


def aggregation_inputs(train: sp.csr_matrix, profiles: ProfileBundle) -> np.ndarray:
    """Per user and profile slot: mean of neighbor item profiles plus the user's own."""
    deg = np.asarray(train.sum(axis=1)).ravel()
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    mean_op = sp.diags(inv) @ train
    items = profiles.item.vectors
    out = np.stack([mean_op @ items[:, k, :] for k in range(items.shape[1])], axis=1)
    return out + profiles.user.vectors


def _check_profiles(ds: InteractionDataset, profiles: ProfileBundle, hp: HyperParams) -> None:
    if profiles.user.count != ds.num_users or profiles.item.count != ds.num_items:
        raise ValueError(
            f"profile corpus covers {profiles.user.count} users / {profiles.item.count} items, "
            f"dataset has {ds.num_users} / {ds.num_items}"
        )
    if profiles.user.K != hp.K or profiles.item.K != hp.K:
        raise ValueError(f"profiles carry K={profiles.user.K}/{profiles.item.K}, hyperparameters say K={hp.K}")


def build_model(ds: InteractionDataset, profiles: ProfileBundle | None, hp: HyperParams):
    if hp.use_profiles and profiles is None:
        raise ValueError("use_profiles requires a profile bundle")
    return GenerativeModel(ds, profiles, hp) if hp.generative else DiscriminativeModel(ds, profiles, hp)


def environment_loss(model, params, batch, weights: np.ndarray, noise: StepNoise | None = None):
    """Loss of a single environment with mixing weights ``weights`` and its parameter gradients."""
    w = np.asarray(weights, dtype=float)[None, :]
    loss, grads, _ = model.step(params, batch, w, noise or StepNoise(), include_reg=False)
    return loss, grads


def _step_weights(model, hp: HyperParams, rng, fixed_weights):
    if not hp.use_profiles:
        return np.ones((1, 1))
    if fixed_weights is not None:
        return np.asarray(fixed_weights, dtype=float)
    return sample_env_weights(hp.env_config(), rng)


def train(ds: InteractionDataset, profiles: ProfileBundle | None, hp: HyperParams,
          rng: np.random.Generator | int = 0, fixed_weights=None, on_step=None,
          on_epoch=None):
    """Mini-batch training with per-epoch validation Recall@N and early stopping.

    Environment weights are redrawn every step unless ``fixed_weights``
    (shape ``(num_envs, K)``) is given. ``on_step(info)`` sees the parameters
    before each update together with the batch, weights, noise and loss.
    Returns ``(state, history)`` where ``state.params`` holds the
    best-validation parameters.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    model = build_model(ds, profiles, hp)
    state = TrainState.fresh(model.init_params(rng), hp)
    best_params = state.params
    history = []
    for epoch in range(hp.max_epochs):
        sums: dict[str, float] = {}
        n_steps = 0
        for batch in model.batches(rng):
            weights = _step_weights(model, hp, rng, fixed_weights)
            noise = model.sample_noise(batch, rng)
            loss, grads, terms = model.step(state.params, batch, weights, noise)
            if on_step is not None:
                on_step({"params": state.params, "batch": batch, "weights": weights,
                         "noise": noise, "loss": loss, "terms": terms, "model": model})
            state = adam_step(state, grads, hp.lr)
            for k, v in terms.items():
                sums[k] = sums.get(k, 0.0) + v
            n_steps += 1
        metric = validation_recall(model, state.params, ds, hp.eval_cutoff)
        state.epoch = epoch + 1
        if metric > state.best_metric:
            state.best_metric, state.best_epoch, state.stale_epochs = metric, epoch, 0
            best_params = state.params
        else:
            state.stale_epochs += 1
        row = {"epoch": epoch, **{f"loss_{k}": v / n_steps for k, v in sums.items()},
               f"val_recall@{hp.eval_cutoff}": metric}
        history.append(row)
        log.info("epoch %d loss %.5f val recall@%d %.5f", epoch, row["loss_total"], hp.eval_cutoff, metric)
        if on_epoch is not None:
            on_epoch(row)
        if state.stale_epochs >= hp.patience:
            break
    state.params = best_params
    return state, history


def _masks(ds: InteractionDataset, split: str) -> list[np.ndarray]:
    if split == "val":
        return ds.train
    if split == "test":
        return [np.union1d(a, b) for a, b in zip(ds.train, ds.val)]
    raise ValueError(f"unknown split {split!r}")


def _topn(model, params, ds, n: int, split: str, users=None, chunk: int = 2048):
    users = np.arange(ds.num_users) if users is None else np.asarray(users)
    masks = _masks(ds, split)
    out = []
    for start in range(0, len(users), chunk):
        sub = users[start:start + chunk]
        scores = model.scores(params, sub)
        out.extend(rank_topn(scores, [masks[u] for u in sub], n))
    return out


def validation_recall(model, params, ds: InteractionDataset, n: int) -> float:
    users = np.array([u for u in range(ds.num_users) if len(ds.val[u])], dtype=np.int64)
    if len(users) == 0:
        return 0.0
    ranked = _topn(model, params, ds, n, "val", users)
    report = evaluate_rankings(ranked, [ds.val[u] for u in users], (n,), users)
    return report.recall[n]


def infer_topn(state: TrainState, ds: InteractionDataset, profiles: ProfileBundle | None,
               n: int, split: str = "test", users=None) -> list[np.ndarray]:
    """Top-n items per user from mean-pooled aligned profiles fused with the base representation.

    Train items are always masked; ``split="test"`` also masks validation items.
    """
    model = build_model(ds, profiles, state.hp)
    return _topn(model, state.params, ds, n, split, users)
