import numpy as np
import pytest

from namegen import nncore as nn
from namegen.codegraph import MethodRecord, build_graph, build_graph_from_record
from namegen.ggnn import GgnnConfig, GraphEncoder
from namegen.vocab import build_vocab


def _small_record(perm=None):
    nodes = [
        {"surface": "load", "is_lexical": True, "is_candidate": True},
        {"surface": "file", "is_lexical": True, "is_candidate": True},
        {"surface": "Expr", "is_lexical": False},
    ]
    edges = {"next_token": [[0, 1]], "child": [[2, 0], [2, 1]]}
    if perm is None:
        return {"id": "g", "nodes": nodes, "edges": edges, "name_subtokens": ["load"]}
    inv = {old: new for new, old in enumerate(perm)}
    return {
        "id": "g",
        "nodes": [nodes[old] for old in perm],
        "edges": {t: [[inv[s], inv[d]] for s, d in pairs] for t, pairs in edges.items()},
        "name_subtokens": ["load"],
    }


def _encoder(d=6, timesteps=2, seed=0, tie=False):
    store = nn.ParamStore(np.random.default_rng(seed))
    graph = build_graph_from_record(_small_record())
    vocab = build_vocab([graph], min_freq=1)
    embed = store.add("embed", (len(vocab), d))
    enc = GraphEncoder(store, GgnnConfig(hidden_dim=d, timesteps=timesteps,
                                         tie_timesteps=tie), embed)
    return store, enc, graph, vocab


def test_zero_timesteps_is_identity():
    store, enc, graph, vocab = _encoder(timesteps=0)
    out = enc.encode(graph, vocab)
    assert np.array_equal(out.h.data, out.x.data)


def test_message_pass_matches_numpy_oracle():
    store, enc, graph, vocab = _encoder(timesteps=1)
    states = enc.embed_nodes(graph, vocab)
    got = enc.message_pass_step(states, graph, 0).data

    agg = np.zeros_like(states.data)
    for etype, pairs in graph.edges.items():
        w, b = enc.edge_w[(etype, 0)]
        for s, d in pairs:
            agg[d] += states.data[s] @ w.data + b.data[0]
    expect = enc.gru(nn.Tensor(agg), nn.Tensor(states.data)).data
    assert np.allclose(got, expect, atol=1e-12)


def test_readout_matches_numpy_oracle(rng):
    store, enc, graph, vocab = _encoder()
    h = nn.Tensor(rng.normal(size=(3, 6)))
    x = nn.Tensor(rng.normal(size=(3, 6)))
    got = enc.graph_readout(h, x).data
    gate = 1.0 / (1.0 + np.exp(-np.hstack([h.data, x.data]) @ enc.W_i.data))
    expect = (gate * (h.data @ enc.W_j.data)).sum(axis=0, keepdims=True)
    assert got.shape == (1, 6)
    assert np.allclose(got, expect, atol=1e-12)


def test_permutation_equivariance():
    perm = [2, 0, 1]
    store, enc, graph, vocab = _encoder(timesteps=3)
    graph_p = build_graph_from_record(_small_record(perm))
    out = enc.encode(graph, vocab)
    out_p = enc.encode(graph_p, vocab)
    assert np.allclose(out_p.h.data, out.h.data[perm], atol=1e-10)
    assert np.allclose(out_p.r_g.data, out.r_g.data, atol=1e-10)


def test_isolated_node_gets_zero_message():
    rec = {"id": "i", "nodes": [
        {"surface": "load", "is_lexical": True},
        {"surface": "file", "is_lexical": True},
    ], "edges": {}, "name_subtokens": []}
    graph = build_graph_from_record(rec)
    store, enc, _, vocab = _encoder(timesteps=1)
    states = enc.embed_nodes(graph, vocab)
    got = enc.message_pass_step(states, graph, 0).data
    expect = enc.gru(nn.Tensor(np.zeros_like(states.data)), states).data
    assert np.allclose(got, expect, atol=1e-12)


def test_untied_timesteps_use_distinct_parameters():
    store, enc, graph, vocab = _encoder(timesteps=2, tie=False)
    names = [k for k in store.params if k.startswith("ggnn.edge.")]
    per_type = {k.split(".")[3] for k in names}
    assert per_type == {"0", "1"}
    store_t, enc_t, _, _ = _encoder(timesteps=2, tie=True)
    tied_names = [k for k in store_t.params if k.startswith("ggnn.edge.")]
    assert {k.split(".")[3] for k in tied_names} == {"0"}
    assert len(tied_names) == len(names) // 2
    # tied encoder applies the same map in both steps
    w0, _ = enc_t._edge_fn("next_token", 0)
    w1, _ = enc_t._edge_fn("next_token", 1)
    assert w0 is w1


def test_encoder_gradients():
    store, enc, graph, vocab = _encoder(d=4, timesteps=2, seed=1)

    def f():
        out = enc.encode(graph, vocab)
        return nn.tmean(out.h * out.h) + nn.tmean(out.r_g * out.r_g)

    err = nn.grad_check(f, store.params)
    assert err < 1e-4


def test_encode_on_real_method(toy_vocab):
    graph = build_graph(MethodRecord(
        body="int f(int a) { int fileName = a; return fileName; }",
        name_subtokens=["file", "name"]))
    store = nn.ParamStore(np.random.default_rng(2))
    embed = store.add("embed", (len(toy_vocab), 8))
    enc = GraphEncoder(store, GgnnConfig(hidden_dim=8, timesteps=2), embed)
    out = enc.encode(graph, toy_vocab)
    assert out.h.data.shape == (len(graph.nodes), 8)
    assert np.all(np.isfinite(out.h.data))
    assert np.all(np.isfinite(out.r_g.data))
