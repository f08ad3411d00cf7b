import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import mp_softmax
from trajgraph import autodiff as ad
from trajgraph.autodiff import Tensor


def grad_of(fn, *arrays):
    ts = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*ts)
    ad.backward(out)
    return [t.grad for t in ts]


def fd_grad(fn, arrays, k, h=1e-5):
    base = [a.copy() for a in arrays]
    g = np.zeros_like(base[k])
    for idx in np.ndindex(base[k].shape):
        for sign in (1, -1):
            xs = [a.copy() for a in base]
            xs[k][idx] += sign * h
            with ad.no_grad():
                val = fn(*[Tensor(a) for a in xs]).item()
            g[idx] += sign * val / (2 * h)
    return g


def assert_grads(fn, *arrays, rtol=1e-6):
    got = grad_of(fn, *arrays)
    for k in range(len(arrays)):
        want = fd_grad(fn, arrays, k)
        err = np.abs(got[k] - want).max() / max(np.abs(want).max(), 1e-12)
        assert err < rtol, f"input {k}: relative error {err:.2e}"


R = np.random.default_rng(3)
A = R.normal(size=(3, 4))
B = R.normal(size=(4, 2))
POS = R.uniform(0.5, 2.0, size=(3, 4))
W = R.normal(size=(3, 4))
MASK = np.where(R.random((3, 4)) < 0.3, -np.inf, 0.0)
W_3_2 = R.normal(size=(3, 2))
W_6_4 = R.normal(size=(6, 4))
W_2_2 = R.normal(size=(2, 2))
W_3_4 = R.normal(size=(3, 4))
W_3_2_2 = R.normal(size=(3, 2, 2))
W_4_3 = R.normal(size=(4, 3))
W_2_6 = R.normal(size=(2, 6))
W_2_3_4 = R.normal(size=(2, 3, 4))
W_3 = R.normal(size=(3,))
W_4 = R.normal(size=(4,))
W_3_2_4 = R.normal(size=(3, 2, 4))
W_3_3 = R.normal(size=(3, 3))


@pytest.mark.parametrize("name,fn,args", [
    ("add", lambda a, b: ((a + b) * W).sum(), (A, R.normal(size=(4,)))),
    ("sub", lambda a, b: ((a - b) * W).sum(), (A, R.normal(size=(3, 1)))),
    ("mul", lambda a, b: (a * b * W).sum(), (A, R.normal(size=(3, 4)))),
    ("div", lambda a, b: (a / b * W).sum(), (A, POS)),
    ("matmul", lambda a, b: (ad.matmul(a, b) * W_3_2).sum(), (A, B)),
    ("batched_matmul", lambda a, b: ad.matmul(a, b).sum(),
     (R.normal(size=(2, 3, 4)), R.normal(size=(2, 4, 5)))),
    ("relu", lambda a: (ad.relu(a) * W).sum(), (A + 0.05,)),
    ("sigmoid", lambda a: (ad.sigmoid(a) * W).sum(), (A,)),
    ("tanh", lambda a: (ad.tanh(a) * W).sum(), (A,)),
    ("exp", lambda a: (ad.exp(a) * W).sum(), (A,)),
    ("log", lambda a: (ad.log(a) * W).sum(), (POS,)),
    ("abs", lambda a: (ad.tabs(a) * W).sum(), (A + 0.05,)),
    ("sqrt", lambda a: (ad.sqrt(a) * W).sum(), (POS,)),
    ("concat", lambda a, b: (ad.concat([a, b], axis=0) * W_6_4).sum(),
     (A, R.normal(size=(3, 4)))),
    ("slice", lambda a: (a[1:, ::2] * W_2_2).sum(), (A,)),
    ("gather", lambda a: (a[np.array([0, 2, 0])] * W_3_4).sum(), (A,)),
    ("take", lambda a: (ad.take(a, np.array([[0, 1], [1, 1]]), axis=1) * W_3_2_2).sum(),
     (A,)),
    ("take_along_axis", lambda a: (ad.take_along_axis(a, np.array([[3, 0, 3]]), axis=-1)
                                   * W_3_3).sum(), (A,)),
    ("transpose", lambda a: (a.transpose() * W_4_3).sum(), (A,)),
    ("reshape", lambda a: (a.reshape((2, 6)) * W_2_6).sum(), (A,)),
    ("broadcast_to", lambda a: (ad.broadcast_to(a, (2, 3, 4)) * W_2_3_4).sum(), (A,)),
    ("sum_axis", lambda a: (a.sum(axis=1) * W_3).sum(), (A,)),
    ("mean", lambda a: (a.mean(axis=0) * W_4).sum(), (A,)),
    ("softmax", lambda a: (ad.softmax(a, axis=-1) * W).sum(), (A,)),
    ("softmax_masked", lambda a: (ad.softmax(a, -1, mask=MASK)
                                  * W).sum(), (A,)),
    ("layer_norm", lambda a, g, b: (ad.layer_norm(a, g, b) * W).sum(),
     (A, R.normal(size=(4,)), R.normal(size=(4,)))),
    ("stack", lambda a, b: (ad.stack([a, b], axis=1) * W_3_2_4).sum(),
     (A, R.normal(size=(3, 4)))),
])
def test_op_gradients_match_central_differences(name, fn, args):
    assert_grads(fn, *args)


def test_sum_and_square_gradients():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    ad.backward(x.sum())
    assert np.array_equal(x.grad, np.ones((2, 3)))
    y = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    ad.backward((y * y).sum())
    assert np.array_equal(y.grad, 2 * y.data)


def test_softmax_values_against_extended_precision():
    out = ad.softmax(Tensor([1.0, 2.0]), mask=np.array([0.0, 0.0])).data
    want = mp_softmax([1.0, 2.0])
    assert np.allclose(out, want, atol=1e-15)
    assert np.allclose(out, [0.26894, 0.73106], atol=1e-5)


def test_softmax_mask_and_fully_masked_row():
    out = ad.softmax(Tensor([[3.0, -1.0], [0.5, 0.2]]),
                     mask=np.array([[0.0, -np.inf], [-np.inf, -np.inf]])).data
    assert np.array_equal(out, [[1.0, 0.0], [0.0, 0.0]])


def test_matmul_identity():
    X = np.random.default_rng(0).normal(size=(3, 5))
    assert np.array_equal(ad.matmul(Tensor(np.eye(3)), Tensor(X)).data, X)


def test_shape_errors_name_both_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(4, 5\)"):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(4,\)"):
        Tensor(np.zeros((2, 3))) + Tensor(np.zeros(4))
    with pytest.raises(ValueError, match="concat"):
        ad.concat([Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2)))], axis=0)


def test_backward_twice_on_one_graph_is_an_error():
    x = Tensor(np.ones(3), requires_grad=True)
    loss = (x * x).sum()
    ad.backward(loss)
    with pytest.raises(RuntimeError):
        ad.backward(loss)


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        ad.backward(x * 2.0)


def test_shared_subexpression_accumulates():
    x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    y = x * x
    ad.backward((y + y * 3.0).sum())
    assert np.allclose(x.grad, 8 * x.data)


def test_tape_is_topologically_ordered():
    x = Tensor(np.ones(2), requires_grad=True)
    a = x * 2.0
    b = a + x
    c = (b * a).sum()
    order = ad.Tape(c).nodes
    pos = {id(t): k for k, t in enumerate(order)}
    for t in order:
        for p in t._parents:
            if p.requires_grad:
                assert pos[id(p)] < pos[id(t)]


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with ad.no_grad():
        y = (x * 3.0).sum()
    assert not y.requires_grad and y._parents == ()


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)),
              elements=st.floats(-50, 50)),
       st.data())
def test_softmax_rows_sum_to_one_and_positive(x, data):
    keep = data.draw(arrays(np.bool_, x.shape))
    keep[:, 0] = True
    out = ad.softmax(Tensor(x), mask=np.where(keep, 0.0, -np.inf)).data
    assert np.allclose(out.sum(-1), 1.0, atol=1e-12)
    assert np.all(out[keep] > 0) and np.all(out[~keep] == 0)


def test_forward_is_deterministic():
    r = np.random.default_rng(5)
    x, w = r.normal(size=(4, 8)), r.normal(size=(8, 8))
    f = lambda: ad.layer_norm(ad.matmul(Tensor(x), Tensor(w)), Tensor(np.ones(8)), Tensor(np.zeros(8))).data
    assert f().tobytes() == f().tobytes()


def test_sigmoid_extreme_inputs_stay_finite():
    out = ad.sigmoid(Tensor([-1000.0, 1000.0])).data
    assert out[0] == 0.0 and out[1] == 1.0 and not math.isnan(out.sum())
