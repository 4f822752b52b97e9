import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from relcontrast import autodiff as ad
from relcontrast.autodiff import AdamState, BatchNormStats, Parameter, Tensor
from relcontrast.errors import DetachedOutput, NotScalar, ShapeMismatch


def test_matmul_identity_and_shape_error():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(ad.matmul(a, np.eye(2)).data, a)
    with pytest.raises(ShapeMismatch):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_logsumexp_stable():
    out = ad.logsumexp_rows(np.array([[1000.0, 1000.0]])).data
    assert out[0] == pytest.approx(1000 + np.log(2), abs=1e-12)
    big = ad.logsumexp_rows(np.array([[1e6, -1e6, 1e6 - 1]])).data
    assert np.isfinite(big).all()


def test_relu_and_sigmoid():
    np.testing.assert_array_equal(ad.relu(np.array([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])
    s = ad.sigmoid(np.array([-1000.0, 0.0, 1000.0])).data
    np.testing.assert_allclose(s, [0.0, 0.5, 1.0])


def test_backward_linear_map():
    w = Parameter("w", np.array([[3.0, -1.0]]))
    x = np.array([[1.0], [2.0]])
    g = ad.backward(ad.total(ad.matmul(w, x)), [w])
    np.testing.assert_array_equal(g["w"], [[1.0, 2.0]])


def test_backward_mse_minimum_and_errors():
    x = Parameter("x", np.array([1.0, -2.0, 0.5]))
    np.testing.assert_array_equal(ad.backward(ad.mse(x, x.data.copy()), [x])["x"], 0.0)
    with pytest.raises(NotScalar):
        ad.backward(ad.scale(x, 2.0), [x])
    with pytest.raises(DetachedOutput):
        ad.backward(Tensor(1.0), [x])
    unused = Parameter("u", np.ones(2))
    g = ad.backward(ad.total(x), [x, unused])
    np.testing.assert_array_equal(g["u"], 0.0)


def test_no_grad_records_nothing():
    w = Parameter("w", np.ones((2, 2)))
    with ad.no_grad():
        out = ad.matmul(w, w)
    assert not out.requires_grad
    assert ad.is_recording()


def test_grad_check_quadratic():
    th = Parameter("th", np.array([1.0, 2.0, 3.0]))
    assert ad.grad_check(lambda: ad.total(ad.mul(th, th)), [th]) < 1e-8


def test_three_layer_composition_gradients():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 4))
    w1 = Parameter("w1", rng.normal(size=(4, 6)))
    b1 = Parameter("b1", rng.normal(size=6))
    w2 = Parameter("w2", rng.normal(size=(6, 3)))
    w3 = Parameter("w3", rng.normal(size=(3, 1)))

    def f():
        z = ad.sigmoid(ad.add(ad.matmul(x, w1), b1))
        z = ad.relu(ad.matmul(z, w2))
        return ad.mean(ad.matmul(z, w3))

    assert ad.grad_check(f, [w1, b1, w2, w3]) < 1e-4


OPS = {
    "concat_slice": lambda a, b: ad.total(ad.mul(ad.slice_cols(ad.concat([a, b], axis=1), 1, 5), ad.slice_cols(ad.concat([b, a], axis=1), 1, 5))),
    "stack_reshape": lambda a, b: ad.total(ad.mul(ad.reshape(ad.stack([a, b], axis=1), (4, 6)), ad.reshape(ad.stack([b, a], axis=1), (4, 6)))),
    "rows": lambda a, b: ad.total(ad.mul(ad.sum_rows(a), ad.mean_rows(b))),
    "take": lambda a, b: ad.total(ad.mul(ad.take_rows(a, [0, 2, 2, 3]), ad.take_rows(b, [1, 1, 0, 3]))),
    "take_pairs": lambda a, b: ad.total(ad.mul(ad.take(a, [0, 1, 3], [2, 2, 0]), ad.take(b, [3, 3, 1], [0, 1, 2]))),
    "segment_sum": lambda a, b: ad.total(ad.mul(ad.segment_sum(a, [0, 1, 0, 1], 2), ad.take_rows(b, [0, 1]))),
    "segment_lse": lambda a, b: ad.dot_const(ad.segment_logsumexp(ad.reshape(a, (12,)), np.repeat([0, 1, 2], 4), 3), [1.0, -2.0, 0.5]),
    "lse_rows": lambda a, b: ad.total(ad.logsumexp_rows(ad.mul(a, b))),
    "xent": lambda a, b: ad.softmax_cross_entropy(ad.add(a, b), [0, 2, 1, 2]),
    "bce": lambda a, b: ad.bce_with_logits(ad.reshape(ad.sub(a, b), (12,)), np.tile([0.0, 1.0], 6)),
    "mse": lambda a, b: ad.mse(ad.reshape(ad.mul(a, b), (12,)), np.linspace(-1, 1, 12)),
    "scale_rows": lambda a, b: ad.total(ad.mul(ad.scale_rows(a, [1.0, 2.0, -1.0, 0.5]), b)),
    "transpose": lambda a, b: ad.total(ad.matmul(ad.transpose(a), b)),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    a = Parameter("a", rng.normal(size=(4, 3)))
    b = Parameter("b", rng.normal(size=(4, 3)))
    assert ad.grad_check(lambda: OPS[name](a, b), [a, b]) < 1e-6


def test_bias_broadcast_gradient():
    rng = np.random.default_rng(2)
    x = Parameter("x", rng.normal(size=(5, 3)))
    b = Parameter("b", rng.normal(size=3))
    assert ad.grad_check(lambda: ad.total(ad.relu(ad.add(x, b))), [x, b]) < 1e-6


def test_sparse_matmul_gradient():
    import scipy.sparse as sp
    rng = np.random.default_rng(3)
    s = sp.random(6, 5, density=0.4, random_state=1, format="csr")
    w = Parameter("w", rng.normal(size=(5, 3)))
    assert ad.grad_check(lambda: ad.total(ad.relu(ad.sparse_matmul(s, w))), [w]) < 1e-6


def test_segment_logsumexp_rejects_empty_segment():
    with pytest.raises(ValueError):
        ad.segment_logsumexp(np.array([1.0, 2.0]), np.array([0, 0]), 2)


# --- batch norm -----------------------------------------------------------

def test_batch_norm_gradient_and_parity():
    rng = np.random.default_rng(4)
    x = Parameter("x", rng.normal(size=(7, 3)))
    g = Parameter("g", rng.normal(size=3))
    b = Parameter("b", rng.normal(size=3))
    c = rng.normal(size=(7, 3))
    stats = BatchNormStats.create(3)
    assert ad.grad_check(lambda: ad.total(ad.mul(ad.batch_norm_1d(x, g, b, stats, True), c)), [x, g, b]) < 1e-6
    assert ad.grad_check(lambda: ad.total(ad.mul(ad.batch_norm_1d(x, g, b, stats, False), c)), [x, g, b]) < 1e-6

    stats = BatchNormStats(x.data.mean(axis=0), x.data.var(axis=0))
    train = ad.batch_norm_1d(x, g, b, BatchNormStats(stats.running_mean.copy(), stats.running_var.copy()), True).data
    infer = ad.batch_norm_1d(x, g, b, stats, False).data
    np.testing.assert_allclose(train, infer, atol=1e-14, rtol=0)


def test_batch_norm_running_stats_update():
    x = np.array([[0.0], [2.0]])
    stats = BatchNormStats.create(1)
    ad.batch_norm_1d(x, np.ones(1), np.zeros(1), stats, True)
    np.testing.assert_allclose(stats.running_mean, [0.1])
    np.testing.assert_allclose(stats.running_var, [0.9 + 0.1 * 1.0])


# --- Adam -----------------------------------------------------------------

def test_adam_zero_gradient():
    p = Parameter("p", np.array([1.0, -2.0]))
    st_ = AdamState()
    ad.adam_step([p], {"p": np.zeros(2)}, st_)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    assert st_.t == 1


def test_adam_first_step():
    p = Parameter("p", np.array([0.0]))
    ad.adam_step([p], {"p": np.array([1.0])}, AdamState(lr=0.001))
    # m_hat = v_hat = 1, so the step is lr / (1 + eps)
    assert p.data[0] == pytest.approx(-0.001 / (1 + 1e-8), abs=1e-15)
    assert p.data[0] == pytest.approx(-0.000999999995, abs=1e-11)


def test_adam_shape_check_and_frozen():
    p = Parameter("p", np.zeros(2))
    with pytest.raises(ShapeMismatch):
        ad.adam_step([p], {"p": np.zeros(3)}, AdamState())
    p.set_trainable(False)
    ad.adam_step([p], {"p": np.ones(2)}, AdamState())
    np.testing.assert_array_equal(p.data, 0.0)


def test_adam_replay_bitwise():
    def run():
        rng = np.random.default_rng(8)
        w = Parameter("w", rng.normal(size=(3, 2)))
        x = rng.normal(size=(5, 3))
        state = AdamState(lr=0.01)
        for _ in range(100):
            loss = ad.mse(ad.reshape(ad.matmul(x, w), (10,)), np.arange(10.0))
            ad.adam_step([w], ad.backward(loss, [w]), state)
        return w.data

    np.testing.assert_array_equal(run(), run())


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-1e6, 1e6)))
def test_logsumexp_never_overflows(x):
    out = ad.logsumexp_rows(x).data
    assert np.isfinite(out).all()
    assert (out >= x.max(axis=1) - 1e-9).all()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_reduction_determinism(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(6, 4))
    seg = rng.integers(0, 3, 6)
    seg[:3] = [0, 1, 2]
    r1 = ad.segment_logsumexp(ad.reshape(a[:, 0], (6,)), seg, 3).data
    r2 = ad.segment_logsumexp(ad.reshape(a[:, 0], (6,)), seg, 3).data
    np.testing.assert_array_equal(r1, r2)
