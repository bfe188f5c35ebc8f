import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from acfnet.autodiff import ops
from acfnet.errors import ShapeError
from acfnet.models import (DILATED_PRESETS, GRID, LSTM_PRESETS, BaselineCnnConfig, DilatedCnn,
                           DilatedCnnConfig, SessionLstmConfig, build_baseline_cnn, build_dilated_cnn,
                           build_model, build_session_lstm, forward_segment, forward_session,
                           model_config_dict, pad_sequences)


def small_cnn_cfg(**kw):
    base = dict(n_channels=2, max_delay=12, parallel_filters=3, c5_filters=4, c6_filters=2,
                c6_kernel=(3, 1), d1_units=5, d2_units=4, dropout=0.5)
    base.update(kw)
    return DilatedCnnConfig(**base)


# -- presets match the published best settings ---------------------------------------------------

def test_dilated_presets():
    assert DILATED_PRESETS["tv"] == dict(n_channels=8, parallel_filters=16, c6_filters=8, c6_kernel=(4, 1),
                                         d2_units=16, dropout=0.5)
    assert DILATED_PRESETS["mfcc"] == dict(n_channels=12, parallel_filters=32, c6_filters=16, c6_kernel=(3, 1),
                                           d2_units=8, dropout=0.5)
    assert DILATED_PRESETS["formant"] == dict(n_channels=3, parallel_filters=32, c6_filters=8,
                                              c6_kernel=(4, 1), d2_units=16, dropout=0.4)


def test_grid_ranges():
    assert GRID == {"parallel_filters": (16, 32), "c6_filters": (8, 16), "c6_kernel": ((3, 1), (4, 1)),
                    "d2_units": (8, 16), "dropout": (0.4, 0.5)}


def test_lstm_presets():
    assert LSTM_PRESETS["tv"] == dict(lstm1_units=64, lstm2_units=64, recurrent_dropout1=0.4,
                                      recurrent_dropout2=0.3, d3_units=32)
    assert LSTM_PRESETS["mfcc"] == dict(lstm1_units=128, lstm2_units=64, recurrent_dropout1=0.6,
                                        recurrent_dropout2=0.4, d3_units=64)
    assert LSTM_PRESETS["formant"] == dict(lstm1_units=128, lstm2_units=64, recurrent_dropout1=0.7,
                                           recurrent_dropout2=0.7, d3_units=16)


def test_baseline_defaults():
    c = BaselineCnnConfig()
    assert (c.input_channels, c.input_frames, c.conv1_filters, c.conv1_kernel, c.conv2_filters,
            c.conv2_kernel, c.pool, c.dropout1, c.dropout2, c.dense1_units) == (23, 1000, 256, 8, 128, 8, 8,
                                                                                0.5, 0.7, 64)


# -- dilated CNN shapes and parameter counts ------------------------------------------------------

def test_tv_flatten_and_build():
    cfg = DilatedCnnConfig(**DILATED_PRESETS["tv"])
    assert (cfg.c5_height, cfg.c6_height, cfg.flatten_size) == (26, 23, 184)
    m = build_dilated_cnn(cfg)
    assert "flatten -> 184" in m.layer_chain()


def test_mfcc_flatten():
    cfg = DilatedCnnConfig(**DILATED_PRESETS["mfcc"])
    assert cfg.input_channels == 144 and cfg.flatten_size == 24 * 16
    build_dilated_cnn(cfg)


def test_tv_parameter_count_hand_computed():
    # 4 branches of 16 (64x15) kernels + BN, C5 16x64x3, C6 8x16x4, D1 184x64, D2 64x16, out 16x3.
    hand = (4 * (16 * 64 * 15 + 32) + (16 * 64 * 3 + 32) + (8 * 16 * 4 + 16)
            + (184 * 64 + 64) + (64 * 16 + 16) + (16 * 3 + 3))
    assert hand == 78131
    assert build_dilated_cnn(DilatedCnnConfig(**DILATED_PRESETS["tv"])).num_parameters() == hand


@pytest.mark.parametrize("preset", sorted(DILATED_PRESETS))
def test_parameter_count_closed_form(preset):
    cfg = DilatedCnnConfig(**DILATED_PRESETS[preset])
    assert build_dilated_cnn(cfg).num_parameters() == cfg.expected_parameter_count()


def test_config_validation():
    with pytest.raises(ValueError):
        DilatedCnnConfig(dilation_rates=(1, 2, 4, 8))
    with pytest.raises(ValueError):
        DilatedCnnConfig(d1_units=0)
    with pytest.raises(ShapeError):
        build_dilated_cnn(small_cnn_cfg(max_delay=3, c6_kernel=(4, 1)))


def test_build_determinism():
    a = build_dilated_cnn(small_cnn_cfg(), seed=4).state_dict()
    b = build_dilated_cnn(small_cnn_cfg(), seed=4).state_dict()
    c = build_dilated_cnn(small_cnn_cfg(), seed=5).state_dict()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert any(not np.array_equal(a[k], c[k]) for k in a if k.endswith("weight"))


# -- forward_segment -------------------------------------------------------------------------------

def test_forward_segment_contract(rng):
    cfg = small_cnn_cfg()
    m = build_dilated_cnn(cfg, precision=64)
    x = rng.standard_normal((4, 13))
    p1 = forward_segment(m, x)
    p2 = forward_segment(m, x)
    assert abs(p1.probabilities.sum() - 1) < 1e-9
    assert np.array_equal(p1.probabilities, p2.probabilities)
    assert p1.embedding.shape == (cfg.d1_units,)
    assert p1.confidence == p1.probabilities.max() and p1.predicted == int(np.argmax(p1.probabilities))


def test_forward_segment_shape_error(rng):
    m = build_dilated_cnn(small_cnn_cfg())
    with pytest.raises(ShapeError):
        forward_segment(m, rng.standard_normal((4, 12)))


def _conv_same(x, w, stride, dilation):
    c, h = x.shape
    o, _, k, _ = w.shape
    out_h = math.ceil(h / stride)
    total = max((out_h - 1) * stride + (k - 1) * dilation + 1 - h, 0)
    xp = np.pad(x, ((0, 0), (total // 2, total - total // 2)))
    out = np.zeros((o, out_h))
    for i in range(out_h):
        for a in range(k):
            out[:, i] += w[:, :, a, 0] @ xp[:, i * stride + a * dilation]
    return out


def _conv_valid(x, w):
    o, _, k, _ = w.shape
    out = np.zeros((o, x.shape[1] - k + 1))
    for i in range(out.shape[1]):
        for a in range(k):
            out[:, i] += w[:, :, a, 0] @ x[:, i + a]
    return out


def _bn_leaky(x, s, prefix):
    y = (x - s[prefix + ".running_mean"][:, None]) / np.sqrt(s[prefix + ".running_var"][:, None] + 1e-5)
    y = y * s[prefix + ".gamma"][:, None] + s[prefix + ".beta"][:, None]
    return np.where(y > 0, y, 0.01 * y)


def test_embedding_matches_independent_recomputation(rng):
    cfg = small_cnn_cfg()
    m = build_dilated_cnn(cfg, seed=3, precision=64)
    # Move BN running stats away from their defaults so eval mode is non-trivial.
    m.forward(rng.standard_normal((6, 4, 13)), train=True, rng=np.random.default_rng(0))
    s = m.state_dict()
    x = rng.standard_normal((4, 13))
    branches = [_bn_leaky(_conv_same(x, s[f"branches.{k}.conv.weight"], 1, n), s, f"branches.{k}.bn")
                for k, n in enumerate(cfg.dilation_rates)]
    h = _bn_leaky(_conv_same(np.concatenate(branches), s["c5.conv.weight"], 2, 1), s, "c5.bn")
    h = _bn_leaky(_conv_valid(h, s["c6.conv.weight"]), s, "c6.bn")
    d1 = np.maximum(h.reshape(-1) @ s["d1.weight"] + s["d1.bias"], 0)
    np.testing.assert_allclose(forward_segment(m, x).embedding, d1, atol=1e-6)


@given(st.floats(-50, 50))
def test_argmax_invariant_to_logit_shift(c):
    z = np.array([0.3, -1.2, 0.9])
    assert np.argmax(ops.softmax(z + c)) == np.argmax(ops.softmax(z))


# -- baseline CNN -----------------------------------------------------------------------------------

def test_baseline_frame_math():
    assert BaselineCnnConfig().flatten_frames == 15
    assert (1000 // 8, 1000 // 8 // 8) == (125, 15)


def test_baseline_forward_small(rng):
    cfg = BaselineCnnConfig(input_channels=3, input_frames=128, conv1_filters=4, conv2_filters=3, dense1_units=64)
    m = build_baseline_cnn(cfg, seed=1, precision=64)
    logits, emb = m.forward(rng.standard_normal((2, 3, 128)))
    assert logits.shape == (2, 3) and emb.shape == (2, 64)
    with pytest.raises(ShapeError):
        m.forward(rng.standard_normal((2, 3, 100)))
    again = build_baseline_cnn(cfg, seed=1, precision=64).state_dict()
    assert all(np.array_equal(v, again[k]) for k, v in m.state_dict().items())


# -- session LSTM -------------------------------------------------------------------------------------

def test_tv_lstm_config():
    m = build_session_lstm(SessionLstmConfig.from_dict({**LSTM_PRESETS["tv"], "input_size": 64}))
    assert (m.lstm1.units, m.lstm2.units, m.d3.weight.shape[1]) == (64, 64, 32)


@pytest.mark.parametrize("length", [1, 2, 7, 40])
def test_forward_session_lengths(rng, length):
    m = build_session_lstm(SessionLstmConfig(input_size=6, lstm1_units=5, lstm2_units=4, d3_units=3), precision=64)
    seq = rng.standard_normal((length, 6))
    p = forward_session(m, seq)
    assert p.shape == (3,) and abs(p.sum() - 1) < 1e-9
    assert np.array_equal(p, forward_session(m, seq))


def test_forward_session_empty():
    m = build_session_lstm(SessionLstmConfig(input_size=6, lstm1_units=5, lstm2_units=4, d3_units=3))
    with pytest.raises(ValueError):
        forward_session(m, np.zeros((0, 6)))


def test_session_order_sensitivity(rng):
    m = build_session_lstm(SessionLstmConfig(input_size=4, lstm1_units=6, lstm2_units=5, d3_units=4),
                           seed=2, precision=64)
    seq = rng.standard_normal((3, 4)) * 2
    assert not np.allclose(forward_session(m, seq), forward_session(m, seq[::-1]))


def test_padding_does_not_change_output(rng):
    m = build_session_lstm(SessionLstmConfig(input_size=4, lstm1_units=6, lstm2_units=5, d3_units=4),
                           precision=64)
    a, b = rng.standard_normal((2, 4)), rng.standard_normal((5, 4))
    x, mask = pad_sequences([a, b], dtype=np.float64)
    batched = ops.softmax(m.forward(x, mask).data)
    np.testing.assert_allclose(batched[0], forward_session(m, a), atol=1e-12)
    np.testing.assert_allclose(batched[1], forward_session(m, b), atol=1e-12)


def test_build_model_round_trip():
    m = build_dilated_cnn(small_cnn_cfg(), seed=9)
    again = build_model("dilated_cnn", model_config_dict(m), seed=9)
    assert again.cfg == m.cfg
    with pytest.raises(ValueError):
        build_model("transformer", {})
