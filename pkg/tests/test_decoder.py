import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles as O
from conftest import directional_check
from trajgraph import autodiff as ad
from trajgraph.autodiff import Tensor
from trajgraph.decoder import (MixtureDecoder, PredictionSet, classification_loss, displacement_errors,
                               laplace_logpdf, metrics, regression_loss, soft_targets, to_world, total_loss)

# 2 agents, 2 modes, H = 3; agent 1 has no sample at the last step
MU = np.array([[[[0.0, 0.0], [1.0, 0.2], [2.0, 0.1]], [[0.5, 0.5], [0.6, 1.5], [0.4, 2.0]]],
               [[[0.1, -0.3], [1.4, 0.0], [3.5, -0.4]], [[0.0, 0.4], [0.2, 0.9], [1.0, 1.0]]]])
B = np.array([[[[0.5, 0.7], [0.9, 1.1], [1.3, 0.6]], [[0.4, 0.4], [0.8, 0.5], [2.0, 1.5]]],
              [[[1.0, 0.3], [0.6, 0.6], [0.7, 0.9]], [[0.35, 0.45], [1.2, 0.8], [0.5, 0.5]]]])
PI = np.array([[0.7, 0.3], [0.45, 0.55]])
TARGET = np.array([[[0.05, 0.1], [1.1, 0.1], [2.6, -0.2]], [[0.2, 0.6], [0.3, 1.1], [9.0, 9.0]]])
MASK = np.array([[True, True, True], [True, True, False]])


def fixture_pred(mu=MU, b=B, pi=PI):
    return PredictionSet(Tensor(mu, requires_grad=True), Tensor(b, requires_grad=True),
                         Tensor(pi, requires_grad=True))


def nested(a):
    return a.tolist()


# --------------------------------------------------------------- laplace

def test_laplace_examples():
    assert laplace_logpdf([1.0, 2.0], [1.0, 2.0], [0.5, 0.5]) == pytest.approx(0.0, abs=1e-15)
    assert laplace_logpdf([2.0, 2.0], [1.0, 2.0], [1.0, 1.0]) == pytest.approx(-2 * math.log(2) - 1, abs=1e-15)
    assert laplace_logpdf([2.0, 2.0], [1.0, 2.0], [1.0, 1.0]) == pytest.approx(-2.38629, abs=1e-5)


def test_laplace_rejects_nonpositive_scale():
    with pytest.raises(ValueError):
        laplace_logpdf([0.0, 0.0], [0.0, 0.0], [1.0, 0.0])
    with pytest.raises(ValueError):
        laplace_logpdf(Tensor([0.0, 0.0]), Tensor([0.0, 0.0]), Tensor([1.0, -1.0]))


def test_laplace_matches_extended_precision(rng):
    x, mu = rng.normal(size=(50, 2)) * 5, rng.normal(size=(50, 2)) * 5
    b = rng.uniform(0.05, 3.0, size=(50, 2))
    got = laplace_logpdf(x, mu, b)
    tensor = laplace_logpdf(x, Tensor(mu), Tensor(b)).data
    for k in range(50):
        want = O.mp_laplace_logpdf(x[k], mu[k], b[k])
        assert abs(got[k] - want) <= 1e-12 * max(1.0, abs(want))
        assert abs(tensor[k] - want) <= 1e-12 * max(1.0, abs(want))


# ---------------------------------------------------------------- losses

def test_regression_loss_matches_bruteforce():
    got = regression_loss(fixture_pred(), TARGET, MASK).item()
    want = O.wta_loss_bruteforce(nested(MU), nested(B), nested(TARGET), nested(MASK))
    assert abs(got - want) <= 1e-10


def test_classification_loss_matches_bruteforce():
    got = classification_loss(fixture_pred(), TARGET, MASK).item()
    want = O.soft_target_ce(nested(MU), nested(PI), nested(TARGET), nested(MASK))
    assert abs(got - want) <= 1e-10


def test_total_is_sum_of_oracles():
    got = total_loss(fixture_pred(), TARGET, MASK).item()
    want = (O.wta_loss_bruteforce(nested(MU), nested(B), nested(TARGET), nested(MASK))
            + O.soft_target_ce(nested(MU), nested(PI), nested(TARGET), nested(MASK)))
    assert abs(got - want) <= 1e-10


def test_perfect_prediction_with_half_scale_has_zero_regression_loss():
    tgt = MU[1]
    assert regression_loss(fixture_pred(b=np.full_like(B, 0.5)), tgt, np.ones((2, 3), bool)).item() == 0.0


def test_wta_uses_only_the_winning_mode():
    tgt = MU[0]
    far = MU.copy()
    far[1] += 100.0
    b = np.full_like(B, 0.5)
    loss = regression_loss(fixture_pred(mu=far, b=b), tgt, np.ones((2, 3), bool))
    assert loss.item() == 0.0
    ad.backward(loss)
    assert np.all(loss_grad_of_far_mode(far, b, tgt) == 0)


def loss_grad_of_far_mode(mu, b, tgt):
    p = fixture_pred(mu=mu, b=b)
    ad.backward(regression_loss(p, tgt, np.ones((2, 3), bool)))
    return p.mu.grad[1]


def test_single_mode_classification_loss_is_zero():
    p = PredictionSet(Tensor(MU[:1]), Tensor(B[:1]), Tensor(np.ones((2, 1))))
    assert classification_loss(p, TARGET, MASK).item() == 0.0
    reg = regression_loss(p, TARGET, MASK).item()
    assert total_loss(p, TARGET, MASK).item() == reg


def test_soft_target_examples():
    # summed distances 0 and 1 -> softmax(0, -1)
    mu = np.zeros((2, 1, 1, 2))
    mu[1, 0, 0] = [1.0, 0.0]
    pbar = soft_targets(mu, np.zeros((1, 1, 2)), np.ones((1, 1), bool))
    assert np.allclose(pbar, [[0.73106, 0.26894]], atol=1e-5)
    assert np.allclose(pbar, [O.mp_softmax([0.0, -1.0])], atol=1e-15)
    mu[1, 0, 0] = [0.0, 1.0]
    mu[0, 0, 0] = [-1.0, 0.0]
    pbar = soft_targets(mu, np.zeros((1, 1, 2)), np.ones((1, 1), bool))
    assert np.array_equal(pbar, [[0.5, 0.5]])


def test_soft_targets_block_gradient():
    p = fixture_pred()
    loss = classification_loss(p, TARGET, MASK)
    ad.backward(loss)
    assert p.mu.grad is None or np.all(p.mu.grad == 0)
    assert np.any(p.pi.grad != 0)


def test_mode_permutation_is_exact_on_fixture():
    a = total_loss(fixture_pred(), TARGET, MASK).item()
    b = total_loss(fixture_pred(MU[::-1], B[::-1], PI[:, ::-1]), TARGET, MASK).item()
    assert a == b


@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 4))
def test_mode_permutation_invariance(seed, F, N):
    r = np.random.default_rng(seed)
    mu = r.normal(size=(F, N, 3, 2)) * 3
    b = r.uniform(0.1, 2, size=(F, N, 3, 2))
    pi = r.dirichlet(np.ones(F), size=N)
    tgt = r.normal(size=(N, 3, 2)) * 3
    mask = r.random((N, 3)) < 0.8
    mask[0] = True
    perm = r.permutation(F)
    a = total_loss(fixture_pred(mu, b, pi), tgt, mask).item()
    c = total_loss(fixture_pred(mu[perm], b[perm], pi[:, perm]), tgt, mask).item()
    assert abs(a - c) <= 1e-12 * max(1.0, abs(a))
    truth = tgt
    m1 = metrics(mu, pi, truth, k=F)
    m2 = metrics(mu[perm], pi[:, perm], truth, k=F)
    assert (m1.min_ade, m1.min_fde, m1.miss_rate) == (m2.min_ade, m2.min_fde, m2.miss_rate)


def test_unsupervised_agents_are_masked_and_all_masked_is_error():
    mask = MASK.copy()
    mask[1] = False
    a = regression_loss(fixture_pred(), TARGET, mask).item()
    want = O.wta_loss_bruteforce(nested(MU[:, :1]), nested(B[:, :1]), nested(TARGET[:1]), nested(mask[:1]))
    assert abs(a - want) <= 1e-10
    with pytest.raises(ValueError):
        regression_loss(fixture_pred(), TARGET, np.zeros_like(MASK))


def test_loss_gradients_match_finite_differences(rng):
    mu, b, pi_logits = MU.copy(), B.copy(), np.log(PI)

    def loss_value():
        with ad.no_grad():
            p = PredictionSet(Tensor(mu), Tensor(b), ad.softmax(Tensor(pi_logits), axis=-1))
            return total_loss(p, TARGET, MASK).item()

    tm, tb, tl = Tensor(mu, requires_grad=True), Tensor(b, requires_grad=True), Tensor(pi_logits, requires_grad=True)
    ad.backward(total_loss(PredictionSet(tm, tb, ad.softmax(tl, axis=-1)), TARGET, MASK))
    for arr, grad in ((b, tb.grad), (pi_logits, tl.grad)):
        assert directional_check(loss_value, arr, grad, rng) < 1e-6


# --------------------------------------------------------------- decoder

def test_decoder_shapes_and_probabilities(rng):
    dec = MixtureDecoder(8, 30, rng)
    out = dec(Tensor(rng.normal(size=(4, 8))), Tensor(rng.normal(size=(6, 4, 8))))
    assert out.mu.shape == (6, 4, 30, 2) and out.b.shape == (6, 4, 30, 2) and out.pi.shape == (4, 6)
    assert np.allclose(out.pi.data.sum(1), 1.0, atol=1e-12)
    assert np.all(out.b.data > 0)


def test_zero_horizon_decoder(rng):
    dec = MixtureDecoder(8, 0, rng)
    out = dec(Tensor(rng.normal(size=(2, 8))), Tensor(rng.normal(size=(3, 2, 8))))
    assert out.mu.shape == (3, 2, 0, 2) and np.allclose(out.pi.data.sum(1), 1)


def test_decoder_matches_scalar_recurrence(rng):
    D, H = 6, 5
    dec = MixtureDecoder(D, H, rng)
    for p in dec.named_parameters().values():
        p.data = p.data + rng.normal(scale=0.1, size=p.shape)
    h, ht = rng.normal(size=(1, D)), rng.normal(size=(1, 1, D))
    out = dec(Tensor(h), Tensor(ht))
    states = O.gru_sequence(dec.gru, O.vec(ht[0, 0]), O.vec(h[0]), H)
    loc, unc = O.P.mlp(dec.loc), O.P.mlp(dec.unc)
    for t, o in enumerate(states):
        assert np.abs(out.mu.data[0, 0, t] - [dec.loc_scale * v for v in O.mlp(o, loc)]).max() <= 1e-12
        want_b = [math.exp(v) for v in O.mlp(o, unc)]
        assert np.abs(out.b.data[0, 0, t] - want_b).max() <= 1e-12 * max(want_b)
    assert out.pi.data[0, 0] == 1.0


@pytest.mark.filterwarnings("ignore:overflow")
def test_decoder_rejects_non_finite(rng):
    dec = MixtureDecoder(4, 2, rng)
    dec.unc.fc2.bias.data[:] = 1e6
    with pytest.raises(FloatingPointError):
        dec(Tensor(rng.normal(size=(1, 4))), Tensor(rng.normal(size=(1, 1, 4))))


@given(st.floats(-50, 50))
def test_scale_is_positive_for_any_bias(shift):
    dec = MixtureDecoder(4, 3, np.random.default_rng(0))
    dec.unc.fc2.bias.data[:] = shift
    out = dec(Tensor(np.ones((1, 4))), Tensor(np.ones((2, 1, 4))))
    assert np.all(out.b.data > 0)


# --------------------------------------------------------------- metrics

TRUTH = np.stack([np.linspace(0, 9, 10), np.zeros(10)], axis=1)[None]  # [1, H, 2]


def modes(*offsets):
    return np.stack([TRUTH + np.array(o) for o in offsets])  # [F, 1, H, 2]


def test_metrics_exact_mode_is_zero():
    m = metrics(modes((5, 5), (0, 0)), np.array([[0.5, 0.5]]), TRUTH, k=2)
    assert (m.min_ade, m.min_fde, m.miss_rate) == (0.0, 0.0, 0.0)


def test_metrics_constant_offset():
    m = metrics(modes((1, 0)), np.array([[1.0]]), TRUTH, k=1)
    assert (m.min_ade, m.min_fde, m.miss_rate) == (1.0, 1.0, 0.0)


def test_metrics_miss_threshold():
    m = metrics(modes((3, 0)), np.array([[1.0]]), TRUTH, k=1)
    assert m.miss_rate == 1.0
    assert metrics(modes((2, 0)), np.array([[1.0]]), TRUTH, k=1).miss_rate == 0.0


def test_k_larger_than_modes_is_error():
    with pytest.raises(ValueError):
        metrics(modes((0, 0)), np.array([[1.0]]), TRUTH, k=6)


def test_top_k_uses_most_probable_modes():
    traj = modes((0, 0), (4, 0))
    assert metrics(traj, np.array([[0.2, 0.8]]), TRUTH, k=1).min_ade == 4.0
    assert metrics(traj, np.array([[0.8, 0.2]]), TRUTH, k=1).min_ade == 0.0


@given(st.integers(0, 10_000))
def test_metric_bounds_and_monotone_in_k(seed):
    r = np.random.default_rng(seed)
    traj = r.normal(size=(6, 3, 5, 2)) * 4
    pi = r.dirichlet(np.ones(6), size=3)
    truth = r.normal(size=(3, 5, 2)) * 4
    prev = math.inf
    for k in range(1, 7):
        m = metrics(traj, pi, truth, k=k)
        assert m.min_ade >= 0 and m.min_fde >= 0 and 0 <= m.miss_rate <= 1
        ade, fde = displacement_errors(traj, pi, truth, k)
        assert fde.mean() <= prev
        prev = fde.mean()


def test_to_world_inverts_local_frame():
    rot = np.array([[0.0, 1.0]])
    origin = np.array([[10.0, -2.0]])
    local = np.array([[[[1.0, 0.0], [0.0, 2.0]]]])
    assert np.allclose(to_world(local, rot, origin), [[[[10.0, -1.0], [8.0, -2.0]]]])
