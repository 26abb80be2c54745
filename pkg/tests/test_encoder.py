import numpy as np
import pytest

from graphcl import tensor as T
from graphcl.encoder import EncoderConfig, Fusion, GATLayer, GraphEncoder, TextEncoder
from graphcl.tensor import Tensor
from graphcl.tensor.gradcheck import check_gradients


def gat(d=8, heads=2, layers=2, seed=0):
    return GraphEncoder(EncoderConfig(d_model=d, text_heads=heads, gat_heads=heads, gat_layers=layers),
                        np.random.default_rng(seed))


def feats(n, d=8, seed=1):
    return Tensor(np.random.default_rng(seed).normal(size=(n, d)))


def adjacency(n, edges):
    a = np.zeros((n, n), dtype=bool)
    for s, t in edges:
        a[t, s] = True
    return a


# ---------------------------------------------------------------- text encoder

def test_text_encoder_shape_and_determinism():
    enc = TextEncoder(50, EncoderConfig(), np.random.default_rng(0))
    ids = np.array([5, 9, 12, 3, 7])
    h1, h2 = enc(ids), enc(ids)
    assert h1.shape == (1, 5, 64)
    assert np.array_equal(h1.data, h2.data)


def test_text_encoder_is_position_aware():
    enc = TextEncoder(50, EncoderConfig(), np.random.default_rng(0))
    a = enc(np.array([5, 9, 12, 3, 7])).data
    b = enc(np.array([9, 5, 12, 3, 7])).data
    assert np.linalg.norm(a - b) > 0


def test_text_encoder_rejects_long_input():
    enc = TextEncoder(50, EncoderConfig(max_source_len=4), np.random.default_rng(0))
    with pytest.raises(ValueError, match="max_source_len"):
        enc(np.arange(5))


def test_config_invariants():
    with pytest.raises(ValueError):
        EncoderConfig(d_model=64, text_heads=5)
    with pytest.raises(ValueError):
        EncoderConfig(d_model=64, gat_heads=3)
    with pytest.raises(ValueError):
        EncoderConfig(gat_layers=0)


# ---------------------------------------------------------------- GAT

def test_isolated_node_attends_only_to_itself():
    g = gat()
    g(feats(4), adjacency(4, [(0, 1), (1, 0)]))
    for layer in g.layers:
        alpha = layer.last_attention[0]  # (H, N, N)
        for node in (2, 3):
            np.testing.assert_array_equal(alpha[:, node, node], 1.0)
            assert np.all(alpha[:, node, np.arange(4) != node] == 0)


def test_identical_neighbours_get_equal_weights():
    g = gat(layers=1)
    x = feats(3).data.copy()
    x[2] = x[1]
    g(Tensor(x), adjacency(3, [(1, 0), (2, 0)]))
    alpha = g.layers[0].last_attention[0]
    np.testing.assert_allclose(alpha[:, 0, 1], alpha[:, 0, 2], rtol=0, atol=1e-7)


def test_attention_sums_to_one_on_path_graph():
    g = gat()
    g(feats(3), adjacency(3, [(0, 1), (1, 2)]))
    for layer in g.layers:
        np.testing.assert_allclose(layer.last_attention.sum(axis=-1), 1.0, atol=1e-6)


def test_attention_normalisation_random_graphs():
    rng = np.random.default_rng(5)
    for seed in range(10):
        n = int(rng.integers(2, 9))
        adj = rng.random((n, n)) < 0.3
        np.fill_diagonal(adj, False)
        g = gat(seed=seed)
        g(feats(n, seed=seed), adj)
        for layer in g.layers:
            alpha = layer.last_attention[0]
            np.testing.assert_allclose(alpha.sum(axis=-1), 1.0, atol=1e-6)
            allowed = adj | np.eye(n, dtype=bool)
            assert np.all(alpha[:, ~allowed] == 0)


def _reach(adj, hops):
    n = adj.shape[0]
    r = np.eye(n, dtype=bool)
    step = adj | np.eye(n, dtype=bool)
    for _ in range(hops):
        r = (step.astype(int) @ r.astype(int)) > 0
    return r  # r[i, j]: j within ``hops`` in-steps of i


@pytest.mark.parametrize("layers", [1, 2])
def test_graph_locality(layers):
    n = 7
    adj = adjacency(n, [(0, 1), (1, 2), (2, 3), (5, 6)])
    reach = _reach(adj, layers)
    g = gat(layers=layers)
    x = feats(n).data
    base = g(Tensor(x), adj).data[0]
    for j in range(n):
        y = x.copy()
        y[j] += 3.0
        out = g(Tensor(y), adj).data[0]
        for i in range(n):
            if not reach[i, j]:
                np.testing.assert_array_equal(out[i], base[i])


def test_graph_encoder_shape_mismatch():
    with pytest.raises(ValueError):
        gat()(feats(4), np.zeros((5, 5), dtype=bool))


def test_gat_gradients():
    for seed in range(5):
        g = gat(seed=seed).astype(np.float64)
        x = Tensor(np.random.default_rng(seed).normal(size=(1, 4, 8)), requires_grad=True, dtype=np.float64)
        adj = adjacency(4, [(0, 1), (1, 2), (3, 2), (2, 0)])
        w = Tensor(np.random.default_rng(9).normal(size=(1, 4, 8)), dtype=np.float64)
        err = check_gradients(lambda: T.tsum(T.mul(g(x, adj), w)), [x, *g.parameters()])
        assert err < 1e-4


def test_gat_layer_concat_versus_average_width():
    rng = np.random.default_rng(0)
    h = Tensor(rng.normal(size=(1, 3, 8)))
    adj = np.ones((1, 3, 3), dtype=bool)
    assert GATLayer(8, 4, 2, True, 0.2, rng)(h, adj).shape == (1, 3, 8)
    assert GATLayer(8, 8, 2, False, 0.2, rng)(h, adj).shape == (1, 3, 8)


# ---------------------------------------------------------------- fusion

def test_fusion_shape_and_zero_weights():
    f = Fusion(8, np.random.default_rng(0))
    h, z = feats(5), feats(5, seed=2)
    assert f(h, z).shape == (5, 8)
    for p in f.parameters():
        p.data[...] = 0
    assert np.all(f(h, z).data == 0)


def test_fusion_shape_mismatch():
    with pytest.raises(ValueError):
        Fusion(8, np.random.default_rng(0))(feats(5), feats(4))


def test_fusion_gradients():
    for seed in range(5):
        f = Fusion(6, np.random.default_rng(seed)).astype(np.float64)
        rng = np.random.default_rng(seed + 10)
        h = Tensor(rng.normal(size=(3, 6)), requires_grad=True, dtype=np.float64)
        z = Tensor(rng.normal(size=(3, 6)), requires_grad=True, dtype=np.float64)
        w = Tensor(rng.normal(size=(3, 6)), dtype=np.float64)
        assert check_gradients(lambda: T.tsum(T.mul(f(h, z), w)), [h, z]) < 1e-4


def test_gradients_reach_every_encoder_part(tiny_model):
    model, batch, _, _ = tiny_model
    model.forward(batch).l_ge.backward()
    for part in (model.text_encoder, model.graph_encoder, model.fusion):
        for name, p in part.named_parameters():
            assert p.grad is not None, name
    for p in model.parameters():
        p.grad = None
