import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from proex.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from proex.dataset import normalized_adjacency
from proex.gradcheck import check_gradients
from proex.recommenders import (
    EmbeddingTable,
    GaussianState,
    VAEParams,
    bpr_loss,
    init_embedding_table,
    lightgcn_propagate,
    multinomial_loss,
    propagate,
    score_pair,
    vae_base_loss,
    vae_encode,
    vae_kl,
)


def test_xavier_bound():
    emb = init_embedding_table(50, 40, 8, np.random.default_rng(0))
    assert np.abs(emb.user_emb).max() <= np.sqrt(6 / (50 + 8))
    assert np.abs(emb.item_emb).max() <= np.sqrt(6 / (40 + 8))
    assert np.all(np.isfinite(emb.stacked()))


def test_propagate_l0_identity(tiny):
    emb = init_embedding_table(tiny.num_users, tiny.num_items, 4, np.random.default_rng(0))
    out = lightgcn_propagate(emb, tiny.adjacency, 0)
    assert np.array_equal(out.user_emb, emb.user_emb) and np.array_equal(out.item_emb, emb.item_emb)


def test_propagate_single_edge():
    adj = normalized_adjacency(sp.csr_matrix(np.array([[1.0]])))
    emb = EmbeddingTable(np.array([[1.0, 2.0]]), np.array([[3.0, -1.0]]))
    out = lightgcn_propagate(emb, adj, 1)
    assert np.allclose(out.user_emb, [[2.0, 0.5]], atol=0)
    assert np.allclose(out.item_emb, [[2.0, 0.5]], atol=0)


def test_propagate_shape(tiny):
    emb = init_embedding_table(tiny.num_users, tiny.num_items, 32, np.random.default_rng(0))
    out = lightgcn_propagate(emb, tiny.adjacency, 3)
    assert out.user_emb.shape == (tiny.num_users, 32) and out.item_emb.shape == (tiny.num_items, 32)


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31 - 1), st.integers(0, 4))
def test_propagate_linear(a, b, seed, layers):
    from conftest import planted_dataset
    ds = planted_dataset(12, 9, 4, seed=1)
    rng = np.random.default_rng(seed)
    n = ds.num_users + ds.num_items
    x, y = rng.standard_normal((n, 3)), rng.standard_normal((n, 3))
    lhs = propagate(a * x + b * y, ds.adjacency, layers)
    rhs = a * propagate(x, ds.adjacency, layers) + b * propagate(y, ds.adjacency, layers)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12


def test_score_pair():
    assert score_pair([1, 0], [0, 1]) == 0.5
    assert score_pair([1, 1], [1, 1]) == pytest.approx(0.8807970779778823, abs=1e-15)
    rng = np.random.default_rng(0)
    u, i = rng.standard_normal(5), rng.standard_normal(5)
    assert score_pair(u, i) == score_pair(i, u)
    with pytest.raises(ValueError):
        score_pair([1, 2], [1, 2, 3])


def test_bpr_hand_values():
    rng = np.random.default_rng(0)
    zu, zi = rng.standard_normal((5, 4)), rng.standard_normal((5, 4))
    loss, (gu, gi, gj) = bpr_loss(zu, zi, zi.copy())
    assert loss == pytest.approx(np.log(2), abs=1e-15)
    assert np.allclose(gi, -0.5 * zu / 5, atol=1e-15)
    assert np.allclose(gu, 0.0)
    big = bpr_loss(np.array([[100.0]]), np.array([[10.0]]), np.array([[-10.0]]))[0]
    assert big < 1e-300 or big == 0.0


def test_bpr_gradient_fd():
    rng = np.random.default_rng(1)
    p = {k: rng.standard_normal((6, 3)) for k in ("u", "i", "j")}
    _, (gu, gi, gj) = bpr_loss(p["u"], p["i"], p["j"])
    res = check_gradients(lambda q: bpr_loss(q["u"], q["i"], q["j"])[0], p, {"u": gu, "i": gi, "j": gj}, rng)
    assert max(r.max_rel_error for r in res) < 1e-6


def test_multinomial_values():
    n = 7
    x = np.zeros(n)
    x[2] = 1
    assert multinomial_loss(np.zeros(n), x)[0] == pytest.approx(np.log(n), abs=1e-14)
    assert multinomial_loss(np.array([50.0, 0, 0]), np.array([1.0, 0, 0]))[0] < 1e-20
    val = multinomial_loss(np.array([1.0, 0, 0]), np.array([1.0, 0, 0]))[0]
    assert val == pytest.approx(-np.log(np.e / (np.e + 2)), abs=1e-14)
    assert round(val, 5) == 0.55144


def test_multinomial_gradient_formula():
    rng = np.random.default_rng(0)
    logits = rng.standard_normal(9)
    x = (rng.random(9) < 0.4).astype(float)
    x[0] = 1
    _, g = multinomial_loss(logits, x)
    sm = np.exp(logits) / np.exp(logits).sum()
    assert np.allclose(g[0], x.sum() * sm - x, atol=1e-14)


def test_kl_values():
    assert vae_kl(GaussianState(np.zeros((1, 3)), np.zeros((1, 3))))[0] == 0.0
    assert vae_kl(GaussianState(np.array([[1.0]]), np.array([[0.0]])))[0] == pytest.approx(0.5)


@given(st.integers(0, 2**31 - 1))
def test_kl_nonnegative(seed):
    rng = np.random.default_rng(seed)
    q = GaussianState(rng.standard_normal((3, 4)) * 3, rng.standard_normal((3, 4)) * 3)
    assert vae_kl(q)[0] >= 0.0


def test_kl_gradient_fd():
    rng = np.random.default_rng(2)
    p = {"m": rng.standard_normal((4, 5)), "lv": rng.standard_normal((4, 5))}
    _, (gm, glv) = vae_kl(GaussianState(p["m"], p["lv"]))
    res = check_gradients(lambda q: vae_kl(GaussianState(q["m"], q["lv"]))[0], p, {"m": gm, "lv": glv}, rng)
    assert max(r.max_rel_error for r in res) < 1e-6


def test_vae_encoder_shapes_and_modes():
    rng = np.random.default_rng(0)
    params = VAEParams.init(30, rng, hidden=600, latent=200)
    x = (rng.random((4, 30)) < 0.3).astype(float)
    q, z, _ = vae_encode(x, params, train_mode=False)
    assert q.mean.shape == (4, 200) and q.log_var.shape == (4, 200)
    assert params.enc_w2.shape == (600, 400)
    q2, z2, _ = vae_encode(x, params, train_mode=False)
    assert np.array_equal(z, z2) and np.array_equal(z, q.mean)
    qt, zt, _ = vae_encode(x, params, train_mode=True, keep_mask=np.ones_like(x, dtype=bool),
                           eps=np.zeros((4, 200)))
    assert np.array_equal(zt, qt.mean) and np.array_equal(qt.mean, q.mean)


def test_vae_base_loss_fd():
    rng = np.random.default_rng(3)
    params = VAEParams.init(30, rng, hidden=16, latent=8)
    x = (rng.random((5, 30)) < 0.3).astype(float)
    x[:, 0] = 1
    keep = rng.random(x.shape) >= 0.5
    eps = rng.standard_normal((5, 8))
    arrays = params.arrays()
    _, grads = vae_base_loss(params, x, keep, eps, 0.2)

    def loss(p):
        return vae_base_loss(VAEParams(**p, dropout=0.5), x, keep, eps, 0.2)[0]

    res = check_gradients(loss, arrays, grads, rng, coords=200)
    assert max(r.max_rel_error for r in res) < 1e-4


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    sections = {"user_emb": rng.standard_normal((3, 4)), "vae.enc_b1": rng.standard_normal(5),
                "scalar": np.array(2.5)}
    save_checkpoint(tmp_path / "m.ckpt", sections)
    back = load_checkpoint(tmp_path / "m.ckpt", {k: v.shape for k, v in sections.items()})
    assert all(np.array_equal(back[k], v) for k, v in sections.items())
    assert (tmp_path / "m.ckpt").read_bytes().startswith(b"PROEX-CKPT v1")


def test_checkpoint_validation(tmp_path):
    save_checkpoint(tmp_path / "m.ckpt", {"a": np.zeros((2, 3))})
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "m.ckpt", {"a": (3, 2)})
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "m.ckpt", {"a": (2, 3), "b": (1,)})
    data = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "t.ckpt").write_bytes(data[:-5])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "t.ckpt")
    (tmp_path / "x.ckpt").write_bytes(b"NOT-A-CKPT" + data[10:])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "x.ckpt")
