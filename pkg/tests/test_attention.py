import math

import numpy as np
import pytest

import oracles as O
from conftest import MICRO
from trajgraph.autodiff import Tensor
from trajgraph.encoder import ModelConfig, SceneEncoder, compact, embed_edges, select_lanelets, temporal_mask
from trajgraph.features import AL_DIM, LANELET_DIM, EdgeSet
from trajgraph.model import TrajectoryModel
from trajgraph.nn import CrossAttention, TemporalLayer, causal_mask

TOL = 1e-10


def close(a, b, tol=TOL):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.abs(a - b).max(initial=0) <= tol * max(1.0, np.abs(b).max(initial=0))


# ------------------------------------------------------------ cross attention

@pytest.mark.parametrize("heads", [1, 2])
def test_aa_block_matches_oracle_on_micro_scene(micro_scene, heads):
    cfg = ModelConfig(**{**MICRO.to_dict(), "heads": heads})
    model = TrajectoryModel(cfg, seed=1)
    enc = model.encoder
    f = model.featurize(micro_scene)
    z = enc.embed_center(f)
    kv = embed_edges(enc.nbr_embed, f.aa1.feat, f.aa1.mask, cfg.hidden)
    out = enc.aa1[0](z, kv, f.aa1.mask)
    nbr = O.P.mlp(enc.nbr_embed)
    checked = 0
    for i in range(f.num_agents):
        for t in range(f.num_steps):
            live = list(f.aa1.mask[i, t])
            rows = [O.mlp(O.vec(r), nbr) if ok else [0.0] * cfg.hidden
                    for r, ok in zip(f.aa1.feat[i, t], live)]
            assert close(kv.data[i, t], rows)
            want, _ = O.cross_attention_block(enc.aa1[0], O.vec(z.data[i, t]), rows, live)
            assert close(out.data[i, t], want)
            checked += sum(live)
    assert checked > 0


def block_and_inputs(rng, heads=2, d=8, k=3):
    blk = CrossAttention(d, heads, rng)
    x = rng.normal(size=d)
    kv = rng.normal(size=(k, d))
    return blk, x, kv


def test_single_key_gets_weight_one(rng):
    blk, x, kv = block_and_inputs(rng, k=1)
    alpha = blk.scores(blk.norm_q(Tensor(x[None])), Tensor(kv[None]), np.array([[True]]))
    assert np.allclose(alpha.data, 1.0, atol=0)


def test_identical_keys_split_evenly(rng):
    blk, x, kv = block_and_inputs(rng, k=2)
    kv[1] = kv[0]
    alpha = blk.scores(blk.norm_q(Tensor(x[None])), Tensor(kv[None]), np.array([[True, True]]))
    assert np.allclose(alpha.data, 0.5, atol=1e-15)


def test_logits_one_two_give_known_weights():
    # one head, d_k = 1: logits are q*k; choose q=1, keys 1 and 2
    blk = CrossAttention(1, 1, np.random.default_rng(0))
    blk.w_q.weight.data[:] = 1.0
    blk.w_k.weight.data[:] = 1.0
    xn = Tensor(np.array([[1.0]]))
    alpha = blk.scores(xn, Tensor(np.array([[[1.0], [2.0]]])), np.array([[True, True]]))
    assert np.allclose(alpha.data.ravel(), [0.26894, 0.73106], atol=1e-5)


def test_masked_block_matches_oracle(rng):
    blk, x, kv = block_and_inputs(rng, heads=2, d=8, k=4)
    live = np.array([True, False, True, True])
    out = blk(Tensor(x[None]), Tensor(kv[None]), live[None])
    want, _ = O.cross_attention_block(blk, O.vec(x), O.mat(kv), list(live))
    assert close(out.data[0], want)


def test_empty_neighbourhood_is_gated_passthrough(rng):
    blk, x, kv = block_and_inputs(rng, k=2)
    out = blk(Tensor(x[None]), Tensor(kv[None]), np.array([[False, False]]))
    xn = O.layer_norm(O.vec(x), *O.P.ln(blk.norm_q))
    g = [O.sigmoid(v) for v in O.linear(xn + [0.0] * len(x), *O.P.linear(blk.w_gate))]
    selfv = O.linear(xn, *O.P.linear(blk.w_self))
    s = [x[c] + g[c] * selfv[c] for c in range(len(x))]
    ff = O.mlp(O.layer_norm(s, *O.P.ln(blk.norm_ff)), O.P.mlp(blk.ff))
    assert close(out.data[0], [s[c] + ff[c] for c in range(len(x))])


def test_multi_head_one_head_matches_monolithic(rng):
    d = 128
    blk = CrossAttention(d, 1, rng)
    x, kv = rng.normal(size=d), rng.normal(size=(3, d))
    got = blk.scores(blk.norm_q(Tensor(x[None])), Tensor(kv[None]), np.ones((1, 3), bool)).data.ravel()
    xn = blk.norm_q(Tensor(x[None])).data[0]
    q = xn @ blk.w_q.weight.data
    k = kv @ blk.w_k.weight.data
    z = k @ q / math.sqrt(d)
    e = np.exp(z - z.max())
    assert np.array_equal(got, e / e.sum()) or close(got, e / e.sum(), 1e-15)


# --------------------------------------------------------------- agent-lane

def test_al_block_matches_oracle_on_micro_scene(micro_scene):
    cfg = ModelConfig(**{**MICRO.to_dict(), "hierarchical": False})
    model = TrajectoryModel(cfg, seed=2)
    enc = model.encoder
    f = model.featurize(micro_scene)
    q = Tensor(np.random.default_rng(0).normal(size=(f.num_agents, f.num_steps, cfg.hidden)))
    out, usage = enc.lane_attention(q, f.al1, f.ll1)
    assert usage.rate == 1.0
    lane = O.P.mlp(enc.lane_embed)
    for i in range(f.num_agents):
        for t in (0, f.num_steps - 1):
            live = list(f.al1.mask[i, t])
            rows = [O.mlp(O.vec(r), lane) if ok else [0.0] * cfg.hidden
                    for r, ok in zip(f.al1.feat[i, t], live)]
            want, _ = O.cross_attention_block(enc.al1[0], O.vec(q.data[i, t]), rows, live)
            assert close(out.data[i, t], want)


# ------------------------------------------------------------- hierarchical

def test_threshold_rule_examples():
    s = np.array([[0.5, 0.3, 0.2], [0.25, 0.25, 0.25]])
    m = np.array([[True, True, True], [True, True, False]])
    keep = select_lanelets(s, m, 0.75)
    assert keep.tolist() == [[True, True, False], [True, True, False]]
    assert select_lanelets(np.full((1, 4), 0.25), np.ones((1, 4), bool), 0.75).all()


def test_compact_moves_kept_entries_first():
    keep = np.array([[False, True, False, True], [True, False, False, False]])
    order = compact(keep)
    assert order.tolist() == [[1, 3], [0, 1]]
    assert np.take_along_axis(keep, order, -1).tolist() == [[True, True], [True, False]]


def lane_fixture(rng, n_lanelets=3, per=(2, 3, 2)):
    parent = [k for k, n in enumerate(per) for _ in range(n)]
    S = len(parent)
    al = EdgeSet(np.arange(S)[None, None], np.ones((1, 1, S), bool),
                 rng.normal(size=(1, 1, S, AL_DIM)), np.array(parent)[None, None])
    ll = EdgeSet(np.arange(n_lanelets)[None, None], np.ones((1, 1, n_lanelets), bool),
                 rng.normal(size=(1, 1, n_lanelets, LANELET_DIM)))
    return al, ll, parent


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("heads", [1, 2])
def test_hierarchical_attention_matches_oracle(seed, heads):
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(hidden=8, heads=heads, t_obs=1, horizon=1, modes=1)
    enc = SceneEncoder(cfg, rng)
    enc.lanelet_scorer.w_q.weight.data *= 6.0  # spread the scores so the threshold bites
    al, ll, parent = lane_fixture(rng)
    x = rng.normal(size=(1, 1, 8))
    for select in (True, False):
        out, usage = enc.lane_attention(Tensor(x), al, ll, select=select)
        want, kept, live = O.hierarchical_lane_block(
            enc.lanelet_scorer, enc.al1[0], O.P.mlp(enc.lanelet_embed), O.P.mlp(enc.lane_embed),
            O.vec(x[0, 0]), O.mat(ll.feat[0, 0]), O.mat(al.feat[0, 0]), parent, 0.75, select)
        assert close(out.data[0, 0], want)
        assert usage.selected == sum(live) and usage.total == len(parent)
        # the kept segments are exactly the members of kept lanelets
        assert live == [kept[p] for p in parent]


def test_hierarchical_fixture_actually_filters():
    dropped = 0
    for seed in range(6):
        rng = np.random.default_rng(seed)
        enc = SceneEncoder(ModelConfig(hidden=8, heads=2, t_obs=1, horizon=1, modes=1), rng)
        enc.lanelet_scorer.w_q.weight.data *= 6.0
        al, ll, _ = lane_fixture(rng)
        _, usage = enc.lane_attention(Tensor(rng.normal(size=(1, 1, 8))), al, ll)
        dropped += usage.selected < usage.total
    assert dropped > 0


# ----------------------------------------------------------------- temporal

def test_causal_mask_example():
    m = causal_mask(3)
    ninf = -np.inf
    assert m.tolist() == [[0, ninf, ninf], [0, 0, ninf], [0, 0, 0]]


def test_cls_mask_rules():
    valid = np.array([[True, False, True]])
    m = temporal_mask(valid, with_cls=True)[0, 0]
    assert m.shape == (4, 4)
    assert np.all(m[:3, 3] == -np.inf)  # no real token sees CLS
    assert m[3].tolist() == [0.0, -np.inf, 0.0, 0.0]  # CLS sees every valid token and itself
    assert np.all(m[:, 1] == -np.inf)  # invalid step is never a key


def test_first_row_attends_only_itself(rng):
    layer = TemporalLayer(8, 2, rng)
    x = Tensor(rng.normal(size=(1, 4, 8)))
    _, alpha = layer.attention(x, causal_mask(4)[None, None])
    assert np.all(alpha.data[0, :, 0, 0] == 1.0)
    assert np.allclose(alpha.data.sum(-1), 1.0)


@pytest.mark.parametrize("heads", [1, 2])
@pytest.mark.parametrize("with_cls", [False, True])
def test_temporal_layer_matches_oracle(rng, heads, with_cls):
    layer = TemporalLayer(8, heads, rng)
    valid = np.array([[True, True, False, True, True]])
    L = 5 + with_cls
    x = rng.normal(size=(1, L, 8))
    add = temporal_mask(valid, with_cls)
    out = layer(Tensor(x), add)
    allowed = (add[0, 0] == 0.0).tolist()
    want = O.temporal_layer(layer, O.mat(x[0]), allowed)
    assert close(out.data[0], want)
