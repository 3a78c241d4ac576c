import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kgpath import numerics as nx
from kgpath.embedding import EmbeddingTable
from kgpath.kg_store import SELF_LOOP, START
from kgpath.numerics import Tensor
from kgpath.policy import (Policy, PolicyConfig, action_distribution, aggregate, attention_weights,
                           dad_keep_probs, dad_mask, encode_history, force_mask, init_params,
                           local_knowledge)

from conftest import named_graph, small_table
from oracles import scalar_lstm


@pytest.fixture
def toy():
    vocab, kg, triples = named_graph([("a", "r", "b"), ("b", "r", "c"), ("a", "s", "c"), ("c", "s", "d")])
    table = small_table(vocab, dim=4, seed=1)
    params = init_params(4, nx.make_rng(3, "init"))
    return vocab, kg, table, params


def test_init_shapes_and_forget_bias():
    p = init_params(5, nx.make_rng(0))
    assert p["lstm.W"].shape == (20, 40) and p["lstm.b"].shape == (40,)
    assert p["W1"].shape == p["W2"].shape == (10, 10)
    np.testing.assert_array_equal(p["lstm.b"][10:20], 1.0)
    assert (p["lstm.b"][:10] == 0).all() and (p["lstm.b"][20:] == 0).all()
    assert np.abs(p["W1"]).max() <= 1 / np.sqrt(10)


def test_config_validation():
    with pytest.raises(ValueError):
        PolicyConfig(aggregator="max")
    with pytest.raises(ValueError):
        PolicyConfig(dropout="sometimes")
    with pytest.raises(ValueError):
        PolicyConfig(use_local=False, use_global=False)


# ---------------------------------------------------------------- history encoding

def test_encode_single_element(toy):
    vocab, kg, table, params = toy
    hs = encode_history(Policy(params, table, kg), [(START, 0)])
    assert len(hs) == 1 and hs[0].shape == (8,)


def test_encode_zero_params_gives_zero_hiddens(toy):
    vocab, kg, table, params = toy
    zero = {k: np.zeros_like(v) for k, v in params.items()}
    hs = encode_history(Policy(zero, table, kg), [(START, 0), (2, 1), (SELF_LOOP, 1), (2, 2)])
    assert all((h == 0).all() for h in hs)


def test_encode_matches_scalar_lstm():
    vocab, kg, _ = named_graph([("a", "r", "b"), ("b", "r", "c"), ("c", "s", "d")])
    table = small_table(vocab, dim=4, seed=3)
    params = init_params(4, nx.make_rng(3, "init"))
    params["lstm.b"] = nx.make_rng(3, "bias").normal(size=params["lstm.b"].shape)
    traj = [(START, 0), (2, 1), (2, 2), (4, 3)]
    hs = encode_history(Policy(params, table, kg), traj)
    assert len(hs) == 4
    W, b = params["lstm.W"].tolist(), params["lstm.b"].tolist()
    h, c = [0.0] * 8, [0.0] * 8
    for i, (r, e) in enumerate(traj):
        x = list(table.relation[r]) + list(table.entity[e])
        h, c = scalar_lstm(W, b, h, c, x)
        np.testing.assert_allclose(hs[i], h, atol=1e-12, rtol=0)


# ---------------------------------------------------------------- attention

def test_attention_identical_hiddens_uniform():
    h = np.array([0.3, -0.2, 0.9])
    np.testing.assert_allclose(attention_weights(np.array([1.0, 2.0, 0.5]), [h, h, h, h]), 0.25)


def test_attention_hand_value():
    alpha = attention_weights(np.array([1.0, 0.0]), [np.array([1.0, 0.0]), np.array([0.0, 1.0])])
    np.testing.assert_allclose(alpha, [0.73106, 0.26894], atol=1e-5)


def test_attention_concentrates_on_aligned_hidden():
    q = np.array([1.0, 0.0])
    weights = [attention_weights(q, [q * c, np.array([0.0, 1.0])])[0] for c in (0.5, 1, 2, 4, 8)]
    assert all(b > a for a, b in zip(weights, weights[1:]))
    assert weights[-1] > 0.99


@settings(max_examples=40)
@given(arrays(np.float64, (5, 3), elements=st.floats(-2, 2)), arrays(np.float64, 3, elements=st.floats(-2, 2)),
       st.permutations(range(5)))
def test_attention_sums_to_one_and_permutes(hs, q, perm):
    alpha = attention_weights(q, list(hs))
    assert abs(alpha.sum() - 1) <= 1e-9
    np.testing.assert_allclose(attention_weights(q, [hs[i] for i in perm]), alpha[list(perm)], atol=1e-15)


# ---------------------------------------------------------------- local knowledge

def test_local_knowledge_single_action_shape(toy):
    vocab, kg, table, params = toy
    pol = Policy(params, table, kg)
    hs = encode_history(pol, [(START, 0)])
    lk = local_knowledge(pol, np.ones(8), hs, [(SELF_LOOP, 0)])
    assert lk.shape == (1,) and np.isfinite(lk).all()


def test_local_knowledge_identical_rows_identical_scores(toy):
    vocab, kg, table, params = toy
    pol = Policy(params, table, kg)
    hs = encode_history(pol, [(START, 0), (2, 1)])
    lk = local_knowledge(pol, np.ones(8), hs, [(2, 1), (3, 2), (2, 1)])
    assert lk[0] == lk[2]


def test_local_knowledge_hand_computation():
    # dim 2 -> vectors of length 4. Column form: lk = A W1c softmax(W2c c)
    vocab, kg, _ = named_graph([("a", "r", "b")])
    ent = np.array([[0.5, -1.0], [2.0, 0.25]])
    rel = np.array([[0, 0], [0, 0], [1.0, 0.5], [-0.5, 1.5]])
    table = EmbeddingTable("distmult", ent, rel)
    W1c = np.array([[0.1, -0.2, 0.3, 0.0], [0.5, 0.4, -0.1, 0.2], [-0.3, 0.2, 0.1, 0.6], [0.0, 0.7, -0.4, 0.1]])
    W2c = np.array([[1.0, 0.0, -1.0, 0.5], [0.2, 0.3, 0.0, -0.6], [0.4, -0.2, 0.8, 0.0], [-0.1, 0.9, 0.3, 0.2]])
    params = init_params(2, nx.make_rng(0))
    params["W1"], params["W2"] = W1c.T.copy(), W2c.T.copy()  # stored row-vector style
    hiddens = [np.array([0.2, -0.4, 0.1, 0.3]), np.array([-0.5, 0.1, 0.6, 0.2])]
    q = np.array([0.3, 0.7, -0.2, 0.1])
    actions = [(SELF_LOOP, 0), (2, 1)]
    pol = Policy(params, table, kg)

    scores = [sum(q[i] * h[i] for i in range(4)) for h in hiddens]
    m = max(scores)
    alpha = [np.exp(s - m) / sum(np.exp(x - m) for x in scores) for s in scores]
    c = [sum(alpha[k] * hiddens[k][i] for k in range(2)) for i in range(4)]
    z = [sum(W2c[i][j] * c[j] for j in range(4)) for i in range(4)]
    mz = max(z)
    sm = [np.exp(v - mz) / sum(np.exp(w - mz) for w in z) for v in z]
    u = [sum(W1c[i][j] * sm[j] for j in range(4)) for i in range(4)]
    expected = []
    for r, e in actions:
        row = list(rel[r]) + list(ent[e])
        expected.append(sum(row[i] * u[i] for i in range(4)))
    np.testing.assert_allclose(local_knowledge(pol, q, hiddens, actions), expected, atol=1e-12, rtol=0)


# ---------------------------------------------------------------- aggregation, dropout, distribution

def test_aggregate_examples():
    np.testing.assert_array_equal(aggregate(Tensor(np.array([1.0, 2.0])), np.array([3.0, 4.0]), "sum").data, [4, 6])
    np.testing.assert_array_equal(aggregate(Tensor(np.array([1.0, 2.0])), np.array([3.0, 4.0]),
                                            "scalar_product").data, [3, 8])
    with pytest.raises(ValueError):
        aggregate(Tensor(np.ones(2)), np.ones(3))


def test_zero_gk_product_is_uniform():
    fused = aggregate(Tensor(np.array([[0.3, -2.0, 5.0]])), np.zeros((1, 3)), "scalar_product")
    dist = action_distribution(fused.data[0], [1, 1, 1])
    np.testing.assert_allclose(dist.probs, 1 / 3, atol=1e-15)


moderate = st.floats(-5, 5).filter(lambda v: v == 0 or abs(v) > 1e-100)  # keep products out of underflow


@given(arrays(np.float64, 6, elements=moderate), arrays(np.float64, 6, elements=moderate.map(abs)))
def test_scalar_product_keeps_sign_for_nonnegative_gk(lk, gk):
    fused = aggregate(Tensor(lk), gk, "scalar_product").data
    assert (np.sign(fused)[gk > 0] == np.sign(lk)[gk > 0]).all()


def test_dad_mask_saturates_and_eval_mode():
    rng = nx.make_rng(0)
    assert (dad_mask(rng, np.full(8, 1e3), training=True, standardize=False) == 1).all()
    assert (dad_mask(rng, np.full(8, -1e3), training=False) == 1).all()


def test_dad_mask_zero_gk_keep_rate():
    rng = nx.make_rng(0, "dad")
    masks = np.array([dad_mask(rng, np.zeros(6), training=True, standardize=False) for _ in range(10_000)])
    assert (masks[:, 0] == 1).all()
    # columns 2.. are never forced unless columns 1.. all dropped; column 1 is the forced fallback
    for col in range(2, 6):
        assert 0.485 <= masks[:, col].mean() <= 0.515


def test_force_mask_keeps_self_loop_and_best_other():
    gk = np.array([[0.0, 1.0, 3.0, 2.0]])
    valid = np.ones((1, 4), bool)
    out = force_mask(np.zeros((1, 4), bool), gk, valid)
    assert out.tolist() == [[True, False, True, False]]
    only_loop = force_mask(np.zeros((1, 1), bool), gk[:, :1], np.ones((1, 1), bool))
    assert only_loop.tolist() == [[True]]


def test_dad_standardized_probabilities_ignore_padding():
    gk = np.array([[1.0, 2.0, 3.0, 99.0]])
    valid = np.array([[True, True, True, False]])
    p = dad_keep_probs(gk, valid, standardize=True)
    assert p[0, 3] == 0
    np.testing.assert_allclose(p[0, :3], nx.sigmoid_array(np.array([-1.0, 0.0, 1.0]) / np.sqrt(2 / 3)))


def test_action_distribution_examples():
    np.testing.assert_allclose(action_distribution([0.0, 0.0], [1, 1]).probs, [0.5, 0.5])
    d = action_distribution([5.0, 1.0, 1.0], [1, 0, 1])
    assert d.probs[1] == 0.0
    np.testing.assert_allclose(d.probs, [0.98201, 0.0, 0.01799], atol=1e-5)
    np.testing.assert_array_equal(action_distribution([3.0, -1.0], [0, 1]).probs, [0.0, 1.0])
    with pytest.raises(ValueError):
        action_distribution([1.0, 2.0], [0, 0])


@given(arrays(np.float64, 7, elements=st.floats(-20, 20)), st.floats(-50, 50),
       arrays(bool, 7), st.permutations(range(1, 7)))
def test_distribution_shift_invariance_and_equivariance(fused, c, mask, perm):
    mask[0] = True
    base = action_distribution(fused, mask).probs
    np.testing.assert_allclose(action_distribution(fused + c, mask).probs, base, atol=1e-12)
    order = [0] + list(perm)
    permuted = action_distribution(fused[order], mask[order]).probs
    np.testing.assert_allclose(permuted, base[order], atol=1e-15)
    assert abs(base.sum() - 1) <= 1e-9


# ---------------------------------------------------------------- batched scoring

def test_action_scores_trim_and_mask(toy):
    vocab, kg, table, params = toy
    pol = Policy(params, table, kg)
    t = pol.tensors(track=False)
    heads, rels = np.array([0, 3]), np.array([2, 2])
    carry = pol.start(t, heads)
    fused, gk, rel_idx, ent_idx, valid = pol.action_scores(
        t, heads, rels, table.score_all_tails(heads, rels), carry, heads)
    assert fused.shape == gk.shape == valid.shape
    assert valid.sum(axis=1).tolist() == [kg.action_len[0], kg.action_len[3]]
    assert (rel_idx[:, 0] == SELF_LOOP).all()
    for b in range(2):
        for k in range(int(valid[b].sum())):
            assert gk[b, k] == pytest.approx(table.score(heads[b], rels[b], ent_idx[b, k]))


def test_ablations_change_fusion(toy):
    vocab, kg, table, params = toy
    heads, rels = np.array([0]), np.array([2])
    out = {}
    for name, cfg in {"full": PolicyConfig(), "no_global": PolicyConfig(use_global=False),
                      "no_local": PolicyConfig(use_local=False), "sum": PolicyConfig(aggregator="sum"),
                      "no_attention": PolicyConfig(use_attention=False)}.items():
        pol = Policy(params, table, kg, cfg)
        t = pol.tensors(track=False)
        carry = pol.advance(t, pol.start(t, heads), [2], [1])
        fused, gk, *_ = pol.action_scores(t, heads, rels, table.score_all_tails(heads, rels), carry, [1])
        out[name] = (fused.data, gk)
    np.testing.assert_array_equal(out["no_local"][0], out["no_local"][1])
    lk = out["no_global"][0]
    np.testing.assert_allclose(out["full"][0], lk * out["full"][1])
    np.testing.assert_allclose(out["sum"][0], lk + out["full"][1])
    assert not np.allclose(out["no_attention"][0], out["full"][0])


def test_sigmoid_gk_form_gates_fusion_but_not_dropout(toy):
    vocab, kg, table, params = toy
    heads, rels = np.array([0]), np.array([2])
    outs = []
    for cfg in (PolicyConfig(use_global=False), PolicyConfig(gk_form="sigmoid"),
                PolicyConfig(gk_form="sigmoid", use_local=False)):
        pol = Policy(params, table, kg, cfg)
        t = pol.tensors(track=False)
        fused, gk, *_ = pol.action_scores(t, heads, rels, table.score_all_tails(heads, rels),
                                          pol.start(t, heads), heads)
        outs.append((fused.data, gk))
    lk, raw = outs[0]
    gate = 1 / (1 + np.exp(-raw))
    np.testing.assert_allclose(outs[1][0], lk * gate, rtol=1e-12)
    np.testing.assert_allclose(outs[2][0], gate, rtol=1e-12)
    np.testing.assert_array_equal(outs[1][1], raw)  # DAD still sees the raw score
    with pytest.raises(ValueError):
        PolicyConfig(gk_form="tanh")
