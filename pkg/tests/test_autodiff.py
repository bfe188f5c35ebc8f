import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acfnet.autodiff import ops
from acfnet.autodiff.gradcheck import gradient_check
from acfnet.autodiff.layers import LSTM, Conv2d, Dense, lstm_layer
from acfnet.autodiff.optim import AdamState, adam_step
from acfnet.autodiff.tensor import Parameter, Tensor, tsum
from acfnet.checks import LAYER_CHECKS, LAYER_TOLERANCE, MODEL_TOLERANCE, check_full_cnn
from acfnet.errors import NumericError, ShapeError


def t64(a, grad=True):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def naive_conv(x, k, dilation=(1, 1)):
    """Valid cross-correlation by explicit loops."""
    C, H, W = x.shape
    O, _, kh, kw = k.shape
    dh, dw = dilation
    Ho, Wo = H - (kh - 1) * dh, W - (kw - 1) * dw
    out = np.zeros((O, Ho, Wo))
    for o in range(O):
        for i in range(Ho):
            for j in range(Wo):
                s = 0.0
                for c in range(C):
                    for a in range(kh):
                        for b in range(kw):
                            s += x[c, i + a * dh, j + b * dw] * k[o, c, a, b]
                out[o, i, j] = s
    return out


# -- conv2d -----------------------------------------------------------------------------------

def test_conv_shape_dilated_same(rng):
    y = ops.conv2d(t64(rng.standard_normal((1, 51, 4))), t64(rng.standard_normal((2, 1, 15, 1))),
                   dilation=(15, 1), padding="same")
    assert y.shape == (2, 51, 4)


def test_conv_shape_strided_same(rng):
    y = ops.conv2d(t64(rng.standard_normal((1, 51, 4))), t64(rng.standard_normal((2, 1, 3, 1))),
                   stride=(2, 1), padding="same")
    assert y.shape == (2, 26, 4)


def test_conv_shape_valid(rng):
    y = ops.conv2d(t64(rng.standard_normal((1, 26, 4))), t64(rng.standard_normal((2, 1, 4, 1))),
                   padding="valid")
    assert y.shape == (2, 23, 4)


def test_conv_valid_span_too_large(rng):
    with pytest.raises(ShapeError):
        ops.conv2d(t64(rng.standard_normal((1, 10, 2))), t64(rng.standard_normal((1, 1, 4, 1))),
                   dilation=(4, 1), padding="valid")


def test_conv_channel_mismatch(rng):
    with pytest.raises(ShapeError):
        ops.conv2d(t64(rng.standard_normal((2, 10, 2))), t64(rng.standard_normal((1, 3, 3, 1))))


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(1, 2))
def test_conv_matches_naive_loop(seed, c, o, kh, kw):
    r = np.random.default_rng(seed)
    x = r.standard_normal((c, 7, 5))
    k = r.standard_normal((o, c, kh, kw))
    got = ops.conv2d(t64(x, False), t64(k, False), padding="valid").data
    np.testing.assert_allclose(got, naive_conv(x, k), rtol=0, atol=1e-12)


def test_conv_same_padding_matches_padded_naive(rng):
    x = rng.standard_normal((2, 9, 3))
    k = rng.standard_normal((3, 2, 3, 1))
    got = ops.conv2d(t64(x, False), t64(k, False), dilation=(3, 1), padding="same").data
    ref = naive_conv(np.pad(x, ((0, 0), (3, 3), (0, 0))), k, (3, 1))
    np.testing.assert_allclose(got, ref, atol=1e-12)


def test_conv_layer_output_hw():
    layer = Conv2d(1, 2, (3, 1), stride=(2, 1), padding="same", dtype=np.float64)
    assert layer.output_hw(51, 64) == (26, 64)


# -- dense and activations ---------------------------------------------------------------------

def test_dense_identity(rng):
    x = rng.standard_normal((3, 4))
    y = ops.dense(t64(x), t64(np.eye(4)), t64(np.zeros(4)), "none")
    np.testing.assert_array_equal(y.data, x)


def test_relu_and_leaky_relu():
    assert ops.relu(t64([-1.0, 2.0])).data.tolist() == [0.0, 2.0]
    np.testing.assert_allclose(ops.leaky_relu(t64([-1.0, 2.0])).data, [-0.01, 2.0])


def test_dense_shape_error(rng):
    with pytest.raises((ShapeError, ValueError)):
        ops.dense(t64(rng.standard_normal((3, 4))), t64(rng.standard_normal((5, 2))))


def test_dense_layer_l2_marks_weights():
    d = Dense(4, 3, "relu", l2=0.01, rng=np.random.default_rng(0), dtype=np.float64)
    l2 = {name: p.l2 for name, p in d.named_parameters()}
    assert sorted(l2.values()) == [0.0, 0.01]


# -- batch norm --------------------------------------------------------------------------------

def bn_params(n, gamma=1.0, beta=0.0):
    return t64(np.full(n, gamma)), t64(np.full(n, beta)), np.zeros(n), np.ones(n)


def test_batch_norm_train_normalizes(rng):
    x = rng.standard_normal((200, 3)) * 2 + 3
    g, b, rm, rv = bn_params(3)
    y = ops.batch_norm(t64(x), g, b, rm, rv, train=True).data
    np.testing.assert_allclose(y.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(y.std(axis=0), 1, atol=1e-3)


def test_batch_norm_affine(rng):
    x = rng.standard_normal((500, 2))
    g, b, rm, rv = bn_params(2, 2.0, 1.0)
    y = ops.batch_norm(t64(x), g, b, rm, rv, train=True).data
    np.testing.assert_allclose(y.mean(axis=0), 1, atol=1e-12)
    np.testing.assert_allclose(y.std(axis=0), 2, atol=1e-3)


def test_batch_norm_running_stats_momentum(rng):
    x = rng.standard_normal((50, 2)) + 5
    g, b, rm, rv = bn_params(2)
    ops.batch_norm(t64(x), g, b, rm, rv, train=True, momentum=0.99)
    np.testing.assert_allclose(rm, 0.01 * x.mean(axis=0))
    np.testing.assert_allclose(rv, 0.99 + 0.01 * x.var(axis=0))


def test_batch_norm_eval_is_fixed_affine(rng):
    x = rng.standard_normal((4, 3))
    g, b, _, _ = bn_params(3, 1.5, -0.5)
    rm, rv = np.array([1.0, 2.0, 3.0]), np.array([4.0, 1.0, 0.25])
    y1 = ops.batch_norm(t64(x), g, b, rm, rv, train=False).data
    y2 = ops.batch_norm(t64(x), g, b, rm, rv, train=False).data
    assert np.array_equal(y1, y2)
    np.testing.assert_allclose(y1, (x - rm) / np.sqrt(rv + 1e-5) * 1.5 - 0.5, atol=1e-12)
    assert rm.tolist() == [1.0, 2.0, 3.0]


def test_batch_norm_rejects_single_sample():
    g, b, rm, rv = bn_params(2)
    with pytest.raises(ValueError):
        ops.batch_norm(t64(np.ones((1, 2))), g, b, rm, rv, train=True)


# -- max pool ----------------------------------------------------------------------------------

def pool1d(values, p):
    x = t64(np.asarray(values, dtype=np.float64).reshape(1, 1, -1, 1))
    return x, ops.max_pool(x, (p, 1))


def test_max_pool_example():
    _, y = pool1d([1, 3, 2, 8], 2)
    assert y.data.reshape(-1).tolist() == [3, 8]


def test_max_pool_ties_route_to_first():
    x, y = pool1d([5, 5, 5, 5], 2)
    assert y.data.reshape(-1).tolist() == [5, 5]
    tsum(y).backward()
    assert x.grad.reshape(-1).tolist() == [1, 0, 1, 0]


def test_max_pool_drops_remainder(rng):
    x, y = pool1d(rng.standard_normal(51), 2)
    assert y.shape == (1, 1, 25, 1)
    tsum(y).backward()
    assert x.grad.reshape(-1)[-1] == 0


def test_max_pool_too_large():
    with pytest.raises(ShapeError):
        pool1d([1, 2], 3)


# -- dropout -----------------------------------------------------------------------------------

def test_dropout_identities(rng):
    x = t64(rng.standard_normal(100))
    assert ops.dropout(x, 0.0, True, rng) is x
    assert ops.dropout(x, 0.7, False, None) is x


def test_dropout_statistics_and_seeding():
    x = t64(np.ones(100_000), grad=False)
    a = ops.dropout(x, 0.5, True, np.random.default_rng(3)).data
    b = ops.dropout(x, 0.5, True, np.random.default_rng(3)).data
    assert np.array_equal(a, b)
    assert abs(np.mean(a > 0) - 0.5) < 0.01
    assert set(np.unique(a)) <= {0.0, 2.0}


def test_dropout_rejects_p_one(rng):
    with pytest.raises(ValueError):
        ops.dropout(t64(np.ones(3)), 1.0, True, rng)


# -- LSTM ----------------------------------------------------------------------------------------

def test_lstm_zero_weights_zero_output(rng):
    x = t64(rng.standard_normal((2, 5, 3)))
    H = ops.lstm(x, t64(np.zeros((3, 8))), t64(np.zeros((2, 8))), t64(np.zeros(8)))
    assert np.all(H.data == 0)


def test_lstm_single_step_matches_cell(rng):
    F, u = 3, 2
    x = rng.standard_normal((1, 1, F))
    W, U, b = rng.standard_normal((F, 4 * u)), rng.standard_normal((u, 4 * u)), rng.standard_normal(4 * u)
    z = x[0, 0] @ W + b
    sig = lambda v: 1 / (1 + np.exp(-v))
    i, f, g, o = sig(z[:u]), sig(z[u:2 * u]), np.tanh(z[2 * u:3 * u]), sig(z[3 * u:])
    h = o * np.tanh(i * g)
    H = ops.lstm(t64(x), t64(W), t64(U), t64(b))
    np.testing.assert_allclose(H.data[0, 0], h, atol=1e-12)


def test_lstm_mask_carries_state(rng):
    x = rng.standard_normal((1, 4, 3))
    W, U, b = (t64(rng.standard_normal(s)) for s in ((3, 8), (2, 8), (8,)))
    full = ops.lstm(t64(x[:, :2]), W, U, b).data
    masked = ops.lstm(t64(x), W, U, b, mask=np.array([[1, 1, 0, 0]], dtype=float)).data
    np.testing.assert_allclose(masked[0, -1], full[0, -1], atol=1e-12)


def test_lstm_gradients_length_five(rng):
    x = t64(rng.standard_normal((2, 5, 3)))
    W, U, b = (t64(rng.uniform(-0.5, 0.5, s)) for s in ((3, 8), (2, 8), (8,)))
    proj = rng.standard_normal((2, 5, 2))
    rep = gradient_check(lambda: tsum(ops.lstm(x, W, U, b) * Tensor(proj)),
                         [("x", x), ("W", W), ("U", U), ("b", b)], 1e-4)
    assert rep.passed, rep.lines()


def test_lstm_layer_empty_sequence():
    with pytest.raises(ValueError):
        lstm_layer([], 4)


def test_lstm_layer_return_sequences(rng):
    seq = [t64(rng.standard_normal((2, 3))) for _ in range(4)]
    assert lstm_layer(seq, 5, return_sequences=True, rng=rng).shape == (2, 4, 5)
    assert lstm_layer(seq, 5, return_sequences=False, rng=rng).shape == (2, 5)


def test_recurrent_dropout_one_mask_per_sequence(rng):
    layer = LSTM(3, 4, recurrent_dropout=0.5, return_sequences=True, dtype=np.float64)
    x = t64(rng.standard_normal((2, 6, 3)))
    a = layer(x, train=True, rng=np.random.default_rng(1)).data
    b = layer(x, train=True, rng=np.random.default_rng(1)).data
    assert np.array_equal(a, b)
    assert np.array_equal(layer(x).data, layer(x).data)


# -- softmax cross-entropy -----------------------------------------------------------------------

def test_cross_entropy_examples():
    assert ops.softmax_cross_entropy(t64([[0.0, 0.0, 0.0]]), [1]).data == pytest.approx(math.log(3), abs=1e-12)
    assert ops.softmax_cross_entropy(t64([[0.0, 50.0, 0.0]]), [1]).data < 1e-12
    base = float(ops.softmax_cross_entropy(t64([[0.3, -1.0, 2.0]]), [0]).data)
    doubled = float(ops.softmax_cross_entropy(t64([[0.3, -1.0, 2.0]]), [0], [2.0, 1.0, 1.0]).data)
    assert doubled == 2 * base


def test_cross_entropy_gradient_formula(rng):
    z = t64(rng.standard_normal((1, 3)))
    w = np.array([1.0, 2.5, 0.5])
    ops.softmax_cross_entropy(z, [1], w).backward()
    onehot = np.array([0.0, 1.0, 0.0])
    np.testing.assert_allclose(z.grad[0], 2.5 * (ops.softmax(z.data[0]) - onehot), atol=1e-12)


def test_cross_entropy_errors():
    with pytest.raises(ValueError):
        ops.softmax_cross_entropy(t64([[0.0, 0.0, 0.0]]), [3])
    with pytest.raises(ValueError):
        ops.softmax_cross_entropy(t64([[0.0, 0.0, 0.0]]), [0], [1.0, 0.0, 1.0])


@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_softmax_sums_to_one_and_loss_non_negative(seed, b):
    z = np.random.default_rng(seed).standard_normal((b, 3)) * 10
    np.testing.assert_allclose(ops.softmax(z).sum(axis=1), 1, atol=1e-12)
    y = np.random.default_rng(seed + 1).integers(0, 3, b)
    assert float(ops.softmax_cross_entropy(t64(z), y).data) >= 0


# -- Adam ----------------------------------------------------------------------------------------

def test_adam_first_step_is_sign_step():
    p = Parameter(np.array([1.0, -2.0, 0.5]), "p")
    p.grad = np.array([0.3, -4.0, 1e-3])
    adam_step([("p", p)], AdamState(learning_rate=0.01))
    np.testing.assert_allclose(p.data, [1.0 - 0.01, -2.0 + 0.01, 0.5 - 0.01], atol=1e-7)


def test_adam_zero_gradient_fixed_point():
    p = Parameter(np.array([1.0, 2.0]), "p")
    state = AdamState(learning_rate=0.1)
    for _ in range(5):
        p.grad = np.zeros(2)
        adam_step([("p", p)], state)
    assert p.data.tolist() == [1.0, 2.0] and state.step == 5


def test_adam_quadratic_converges():
    p = Parameter(np.array([1.0]), "theta")
    state = AdamState(learning_rate=0.1)
    for _ in range(200):
        p.grad = 2 * p.data
        adam_step([("theta", p)], state)
    assert abs(p.data[0]) < 1e-3


def test_adam_l2_decay_applied():
    p = Parameter(np.array([2.0]), "w", l2=0.01)
    p.grad = np.zeros(1)
    state = AdamState(learning_rate=0.1)
    adam_step([("w", p)], state)
    assert p.data[0] == pytest.approx(1.9, abs=1e-6)


def test_adam_non_finite_names_parameter():
    p = Parameter(np.array([1.0]), "dense1.weight")
    p.grad = np.array([np.nan])
    with pytest.raises(NumericError, match="dense1.weight"):
        adam_step([("dense1.weight", p)], AdamState())


# -- gradient checks -----------------------------------------------------------------------------

@pytest.mark.parametrize("name", sorted(LAYER_CHECKS))
def test_layer_gradient_checks(name):
    rep = LAYER_CHECKS[name](np.random.default_rng(11))
    assert rep.tolerance == LAYER_TOLERANCE
    assert rep.passed, rep.lines()


def test_full_cnn_gradient_check():
    rep = check_full_cnn(np.random.default_rng(5))
    assert rep.tolerance == MODEL_TOLERANCE
    assert rep.passed, rep.lines()


def test_gradient_check_reports_wrong_gradient():
    from acfnet.autodiff.tensor import make

    x = t64([1.0, 2.0])
    bad = lambda: tsum(make(x.data ** 2, (x,), lambda g: (g * x.data,)))  # should be 2x
    rep = gradient_check(bad, [("x", x)], 1e-4)
    assert not rep.passed and rep.failures == ["x"]
