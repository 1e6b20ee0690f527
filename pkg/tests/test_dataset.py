import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from proex.dataset import (
    EmptyDatasetError,
    InteractionDataset,
    ParseError,
    UnsampleableNegativeError,
    bipartite_graph,
    from_pairs,
    load_interactions,
    neighbor_items,
    sample_pairwise_batch,
    split_counts,
    split_dataset,
)

LINES = ["a x", "a y", "a z", "b x", "b y", "b w"]


def write(tmp_path, lines, name="inter.txt"):
    p = tmp_path / name
    p.write_text("\n".join(lines) + "\n")
    return p


def manual(train, num_items):
    train = [np.array(sorted(t), dtype=np.int64) for t in train]
    empty = [np.zeros(0, dtype=np.int64) for _ in train]
    return InteractionDataset(len(train), num_items, list(train), train, empty, list(empty), {}, {})


def test_load_counts(tmp_path):
    ds = load_interactions(write(tmp_path, LINES), 3)
    assert (ds.num_users, ds.num_items, ds.num_interactions) == (2, 4, 6)


def test_duplicates_collapse(tmp_path):
    a = load_interactions(write(tmp_path, LINES, "a.txt"), 3)
    b = load_interactions(write(tmp_path, LINES + ["a x"], "b.txt"), 3)
    assert a.num_interactions == b.num_interactions
    assert all(np.array_equal(x, y) for x, y in zip(a.interactions, b.interactions))


def test_comments_and_extra_columns(tmp_path):
    lines = ["# header", "a x 5 1700000000", "a y 3", "a z", "", "b q"]
    ds = load_interactions(write(tmp_path, lines), 3)
    assert ds.num_users == 1 and ds.num_items == 3


def test_filtering_drops_orphan_items(tmp_path):
    ds = load_interactions(write(tmp_path, LINES + ["c v"]), 3)
    assert "c" not in ds.user_id_map and "v" not in ds.item_id_map


def test_parse_error_has_line_number(tmp_path):
    with pytest.raises(ParseError) as err:
        load_interactions(write(tmp_path, ["a x", "lonely", "a y"]), 1)
    assert "2" in str(err.value)


def test_empty_after_filter(tmp_path):
    with pytest.raises(EmptyDatasetError):
        load_interactions(write(tmp_path, ["a x", "a y"]), 3)


def test_sorted_by_external_id():
    ds = from_pairs([("10", "b"), ("10", "a"), ("9", "c"), ("9", "a"), ("10", "c"), ("9", "b")], 3)
    assert ds.user_id_map == {"9": 0, "10": 1}
    assert ds.item_id_map == {"a": 0, "b": 1, "c": 2}


@pytest.mark.parametrize("n, expected", [(100, (60, 20, 20)), (5, (3, 1, 1)), (4, (4, 0, 0)), (3, (3, 0, 0))])
def test_split_counts(n, expected):
    assert split_counts(n) == expected


def test_short_user_excluded_from_eval():
    ds = split_dataset(from_pairs([("u", i) for i in "abcd"], 3), seed=0)
    assert len(ds.train[0]) == 4 and len(ds.val[0]) == 0 and len(ds.test[0]) == 0


@given(st.lists(st.integers(3, 40), min_size=1, max_size=8), st.integers(0, 2**31 - 1))
def test_split_partitions_each_user(sizes, seed):
    pairs = [(u, f"i{j}") for u, n in enumerate(sizes) for j in range(n)]
    ds = split_dataset(from_pairs(pairs, 3), seed=seed)
    for u, items in enumerate(ds.interactions):
        parts = [ds.train[u], ds.val[u], ds.test[u]]
        assert sum(len(p) for p in parts) == len(items)
        assert np.array_equal(np.sort(np.concatenate(parts)), items)
        assert len(np.intersect1d(parts[0], parts[1])) == 0
        assert len(np.intersect1d(parts[0], parts[2])) == 0
        assert len(np.intersect1d(parts[1], parts[2])) == 0
        assert all(np.all(np.diff(p) > 0) for p in parts)


def test_split_deterministic(tmp_path):
    p = write(tmp_path, [f"u{u} i{i}" for u in range(30) for i in range(u % 7, u % 7 + 9)])
    a = split_dataset(load_interactions(p), seed=5)
    b = split_dataset(load_interactions(p), seed=5)
    for name in ("train", "val", "test"):
        assert all(np.array_equal(x, y) for x, y in zip(getattr(a, name), getattr(b, name)))
    assert (a.adjacency != b.adjacency).nnz == 0


def test_adjacency_weights(tiny):
    graph = bipartite_graph(tiny.train_matrix)
    deg = np.asarray(graph.sum(axis=1)).ravel()
    m = tiny.num_users
    assert np.array_equal(deg[:m], [len(t) for t in tiny.train])
    adj = tiny.adjacency.tocoo()
    assert np.allclose(adj.toarray(), adj.toarray().T, atol=0)
    for r, c, w in zip(adj.row, adj.col, adj.data):
        assert w == 1.0 / np.sqrt(deg[r]) / np.sqrt(deg[c]) or np.isclose(w, 1 / np.sqrt(deg[r] * deg[c]), rtol=1e-15)


def test_adjacency_train_only(tiny):
    adj = tiny.adjacency.toarray()
    m = tiny.num_users
    for u in range(m):
        for i in tiny.val[u]:
            assert adj[u, m + i] == 0
        for i in tiny.train[u]:
            assert adj[u, m + i] > 0


def test_forced_triple():
    ds = manual([[0]], num_items=2)
    batch = sample_pairwise_batch(ds, 16, np.random.default_rng(0))
    assert set(batch.triples) == {(0, 0, 1)}


def test_unsampleable_negative():
    ds = manual([[0, 1]], num_items=2)
    with pytest.raises(UnsampleableNegativeError):
        sample_pairwise_batch(ds, 4, np.random.default_rng(0))


def test_batch_contract(tiny):
    batch = sample_pairwise_batch(tiny, 4096, np.random.default_rng(3))
    assert len(batch.triples) == 4096
    for u, i, j in batch.triples[:500]:
        assert i in tiny.train[u] and j not in tiny.train[u]
    again = sample_pairwise_batch(tiny, 4096, np.random.default_rng(3))
    assert batch.triples == again.triples


def test_negatives_cover_non_interacted(tiny):
    batch = sample_pairwise_batch(tiny, 20000, np.random.default_rng(1))
    u = int(batch.users[0])
    seen = set(batch.neg[batch.users == u].tolist())
    assert seen == set(range(tiny.num_items)) - set(tiny.train[u].tolist())


def test_neighbor_items():
    ds = manual([[3, 1], []], num_items=4)
    assert neighbor_items(ds, 0) == [1, 3]
    assert neighbor_items(ds, 1) == []


def test_neighbor_items_from_file(tmp_path):
    ds = load_interactions(write(tmp_path, LINES), 3)
    got = neighbor_items(ds, ds.user_id_map["a"])
    assert got == sorted(ds.item_id_map[k] for k in "xyz")
