import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dibjscc.channel import (ChannelSpec, DegenerateInputError, awgn, draw_noise, measured_snr,
                             parse_snr, power_normalize, transmit)
from dibjscc.nn import autograd as ag
from dibjscc.nn.autograd import Parameter, Tape


def _unit_power(n, m=16, seed=0):
    return power_normalize(np.random.default_rng(seed).standard_normal((n, m))).data


def test_noise_variance_convention():
    assert ChannelSpec(0).noise_variance == 1.0
    assert ChannelSpec(10).noise_variance == pytest.approx(0.1)
    assert ChannelSpec(-15).noise_variance == pytest.approx(10 ** 1.5)
    assert ChannelSpec("inf").noise_variance == 0.0


def test_parse_snr_sentinel():
    assert parse_snr("inf") == math.inf and parse_snr(" +INF ") == math.inf
    assert parse_snr("7.5") == 7.5


def test_bad_normalize_policy():
    with pytest.raises(ValueError):
        ChannelSpec(0, "peak")


def test_normalize_constant_row():
    np.testing.assert_allclose(power_normalize(np.full((1, 4), 2.0)).data, np.ones((1, 4)))


def test_normalize_idempotent_on_unit_row():
    y = _unit_power(3)
    np.testing.assert_allclose(power_normalize(y).data, y, atol=1e-6)


def test_normalize_zero_row_raises():
    with pytest.raises(DegenerateInputError):
        power_normalize(np.array([[1.0, 2.0], [0.0, 0.0]]))


@given(arrays(np.float64, (3, 8), elements=st.floats(-50, 50)).filter(lambda a: np.all(np.abs(a).max(1) > 1e-2)),
       st.floats(1e-2, 1e3))
@settings(max_examples=60, deadline=None)
def test_normalize_unit_power_and_scale_invariant(y, c):
    out = power_normalize(y).data
    np.testing.assert_allclose(np.mean(out.astype(np.float64) ** 2, axis=1), 1.0, atol=1e-5)
    np.testing.assert_allclose(power_normalize(c * y).data, out, atol=1e-5)


def test_normalize_gradient():
    from dibjscc.nn.gradcheck import gradcheck
    y = Parameter(np.random.default_rng(1).standard_normal((3, 5)))
    w = np.random.default_rng(2).standard_normal((3, 5))
    assert gradcheck(lambda: ag.tsum(power_normalize(y) * w), [y]) < 1e-6


def test_awgn_noiseless_identity():
    y = _unit_power(4)
    np.testing.assert_array_equal(awgn(y, ChannelSpec("inf"), np.random.default_rng(0)).data, y)


def test_awgn_sample_variance_at_zero_db():
    y = _unit_power(100_000 // 16)
    noisy = awgn(y, ChannelSpec(0), np.random.default_rng(3)).data
    assert np.var(noisy.astype(np.float64) - y) == pytest.approx(1.0, abs=0.02)


def test_awgn_measured_snr_ten_db():
    y = _unit_power(100_000 // 16)
    noisy = awgn(y, ChannelSpec(10), np.random.default_rng(4)).data
    assert measured_snr(y, noisy) == pytest.approx(10, abs=0.2)


def test_awgn_gradient_is_identity():
    y = Parameter(np.ones((2, 3)))
    with Tape() as tape:
        loss = ag.tsum(awgn(y, ChannelSpec(0), np.random.default_rng(0)))
    np.testing.assert_array_equal(tape.gradient(loss, [y])[0], np.ones((2, 3)))


def test_awgn_reuses_given_noise():
    y = np.zeros((2, 3))
    z = np.arange(6, dtype=np.float32).reshape(2, 3)
    np.testing.assert_array_equal(awgn(y, ChannelSpec(0), noise=z).data, z)
    with pytest.raises(ag.ShapeError):
        awgn(y, ChannelSpec(0), noise=z[:1])


def test_draw_noise_none_when_noiseless():
    assert draw_noise((2, 2), ChannelSpec("inf"), np.random.default_rng(0)) is None


def test_measured_snr_cases():
    y = _unit_power(6250)
    assert measured_snr(y, y) == math.inf
    rng = np.random.default_rng(5)
    assert measured_snr(y, y + rng.standard_normal(y.shape)) == pytest.approx(0, abs=0.2)
    assert measured_snr(y, y + rng.standard_normal(y.shape) * np.sqrt(0.1)) == pytest.approx(10, abs=0.2)
    with pytest.raises(DegenerateInputError):
        measured_snr(np.zeros(3), np.ones(3))


@pytest.mark.parametrize("snr", [-15, -10, -5, 0, 5, 10, 15])
def test_transmit_calibration(snr):
    raw = np.random.default_rng(snr + 100).standard_normal((6250, 16)) * 3.0
    clean = power_normalize(raw).data
    noisy = transmit(raw, ChannelSpec(snr), np.random.default_rng(snr + 200)).data
    assert measured_snr(clean, noisy) == pytest.approx(snr, abs=0.2)


def test_bob_and_eve_noise_independent():
    from dibjscc import seeding
    z_b = draw_noise((100_000,), ChannelSpec(0), seeding.stream(0, "channel_ab"))
    z_e = draw_noise((100_000,), ChannelSpec(0), seeding.stream(0, "channel_ae"))
    assert abs(np.corrcoef(z_b, z_e)[0, 1]) < 0.01


def test_transmit_without_normalization():
    y = np.full((1, 4), 5.0)
    np.testing.assert_array_equal(transmit(y, ChannelSpec("inf", "none")).data, y)
