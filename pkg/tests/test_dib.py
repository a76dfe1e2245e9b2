import numpy as np
import pytest

from dibjscc.bundle import ModelBundle
from dibjscc.config import ConfigError, ExperimentConfig
from dibjscc.data import RawMnist, build_colored_mnist
from dibjscc.dib import (JOINT, decode, density_ratio_mi, discriminator_loss, encode, fit_discriminator,
                         shuffle_pairs, train_dib, train_step2, vlb_private_mi)
from dibjscc.nn import autograd as ag
from dibjscc.nn.autograd import Tape
from dibjscc.nn.layers import MLP


def _bundle(m_s=3, m_t=5, pixels=12, seed=0):
    b = ModelBundle(m_s, m_t, num_classes=4, pixels=pixels)
    return b.build(["enc_s", "enc_t", "dec", "cls", "dis"], np.random.default_rng(seed))


def _const_dis(p_joint: float, width: int) -> MLP:
    """A discriminator whose output is p_joint for every input."""
    dis = MLP([width, 4, 2], "softmax", np.random.default_rng(0))
    for layer in dis.layers:
        layer.weight.data[:] = 0
        layer.bias.data[:] = 0
    logit = np.log(p_joint / (1 - p_joint))
    dis.layers[-1].bias.data[JOINT] = logit
    return dis


def _tiny_data(n=64, seed=0):
    rng = np.random.default_rng(seed)
    raw = RawMnist(rng.integers(0, 256, (n, 28, 28), dtype=np.uint8), rng.integers(0, 10, n).astype(np.uint8))
    return build_colored_mnist(raw, seed)


def test_encode_deterministic_and_shapes():
    b = _bundle()
    x = np.random.default_rng(1).random((7, 12))
    (t1, s1), (t2, s2) = encode(b, x), encode(b, x)
    assert t1.shape == (7, 5) and s1.shape == (7, 3)
    np.testing.assert_array_equal(t1.data, t2.data)
    np.testing.assert_array_equal(s1.data, s2.data)


def test_zero_weight_encoder_gives_zero_codes():
    b = _bundle()
    for p in b.enc_t.parameters() + b.enc_s.parameters():
        p.data[:] = 0
    y_t, y_s = encode(b, np.ones((2, 12)))
    assert not y_t.data.any() and not y_s.data.any()


def test_decode_range_and_zero_params():
    b = _bundle()
    out = decode(b, np.random.default_rng(2).standard_normal((6, 8)) * 50).data
    assert out.min() >= 0 and out.max() <= 1
    for p in b.dec.parameters():
        p.data[:] = 0
    np.testing.assert_array_equal(decode(b, np.ones((2, 8))).data, 0.5)


def test_decode_width_mismatch():
    with pytest.raises(ag.ShapeError):
        decode(_bundle(), np.ones((2, 7)))


def test_vlb_uniform_classifier_is_minus_log_s():
    b = _bundle()
    for p in b.cls.parameters():
        p.data[:] = 0
    s = np.eye(4)[[0, 1, 2, 3, 1]]
    assert vlb_private_mi(np.ones((5, 12)), s, b.enc_s, b.cls).item() == pytest.approx(-np.log(4), rel=1e-6)


def test_vlb_never_positive():
    b = _bundle()
    rng = np.random.default_rng(3)
    for _ in range(5):
        s = np.eye(4)[rng.integers(0, 4, 9)]
        assert vlb_private_mi(rng.random((9, 12)), s, b.enc_s, b.cls).item() <= 0


def test_shuffle_pairs_b2_forced_swap():
    class Swap:
        def permutation(self, n):
            return np.array([1, 0])
    yt, ys = np.array([[1.0], [2.0]]), np.array([[3.0], [4.0]])
    a, b = shuffle_pairs(yt, ys, Swap())
    np.testing.assert_array_equal(a, [[2], [1]])
    np.testing.assert_array_equal(b, [[4], [3]])


def test_shuffle_pairs_preserves_multisets():
    rng = np.random.default_rng(4)
    yt, ys = rng.standard_normal((9, 3)), rng.standard_normal((9, 2))
    a, b = shuffle_pairs(yt, ys, rng)
    assert sorted(map(tuple, a)) == sorted(map(tuple, yt))
    assert sorted(map(tuple, b)) == sorted(map(tuple, ys))


def test_shuffle_pairs_partner_kept_with_prob_one_over_b():
    rng = np.random.default_rng(5)
    B, trials = 8, 20000
    yt = np.arange(B, dtype=float)[:, None]
    kept = 0
    for _ in range(trials):
        a, b = shuffle_pairs(yt, yt, rng)
        kept += a[0, 0] == b[0, 0]
    assert kept / trials == pytest.approx(1 / B, abs=0.01)


def test_shuffle_pairs_needs_two_rows():
    with pytest.raises(ValueError):
        shuffle_pairs(np.ones((1, 2)), np.ones((1, 2)), np.random.default_rng(0))


def test_shuffle_pairs_differentiable_on_tensors():
    y = ag.Parameter(np.arange(6.0).reshape(3, 2))
    with Tape() as tape:
        a, b = shuffle_pairs(y, y, np.random.default_rng(0))
        loss = ag.tsum(a) + ag.tsum(b)
    np.testing.assert_array_equal(tape.gradient(loss, [y])[0], 2 * np.ones((3, 2)))


def test_discriminator_loss_uninformative():
    dis = _const_dis(0.5, 4)
    y = np.random.default_rng(6).standard_normal((10, 2))
    assert discriminator_loss(y, y, y, y, dis).item() == pytest.approx(2 * np.log(2), rel=1e-6)


def test_discriminator_loss_perfect_limit():
    rng = np.random.default_rng(7)
    y = rng.standard_normal((10, 2))
    good = discriminator_loss(y, y, y, y, _const_dis(0.5, 4)).item()
    # a discriminator that outputs joint for the joint half and shuffled for the other
    class Perfect:
        def __call__(self, v):
            out = np.zeros((len(v.data), 2), np.float32)
            out[:, JOINT if v.data[0, 0] > 100 else 1 - JOINT] = 1
            return ag.as_tensor(out)
    assert discriminator_loss(y + 1000, y, y, y, Perfect()).item() == pytest.approx(0.0, abs=1e-6)
    assert good > 1


def test_density_ratio_zero_at_half():
    y = np.random.default_rng(8).standard_normal((12, 2))
    assert density_ratio_mi(y, y, _const_dis(0.5, 4)).item() == pytest.approx(0.0, abs=1e-7)


def test_density_ratio_constant_odds():
    y = np.random.default_rng(9).standard_normal((12, 2))
    assert density_ratio_mi(y, y, _const_dis(0.8, 4)).item() == pytest.approx(np.log(4), rel=1e-5)


def test_density_ratio_gradient_reaches_codes():
    from dibjscc.nn.gradcheck import gradcheck
    rng = np.random.default_rng(10)
    dis = MLP([3, 6, 2], "softmax", rng)
    y_t = ag.Parameter(rng.standard_normal((5, 2)))
    y_s = rng.standard_normal((5, 1))
    assert gradcheck(lambda: density_ratio_mi(y_t, y_s, dis), [y_t]) < 1e-4


def _gaussian_pairs(rho, n, rng):
    a = rng.standard_normal(n)
    b = rho * a + np.sqrt(1 - rho ** 2) * rng.standard_normal(n)
    return a[:, None].astype(np.float32), b[:, None].astype(np.float32)


def test_independent_inputs_discriminator_at_chance():
    rng = np.random.default_rng(11)
    dis = MLP([2, 64, 64, 2], "softmax", rng)
    fit_discriminator(dis, lambda: _gaussian_pairs(0.0, 256, rng), 600, rng)
    a, b = _gaussian_pairs(0.0, 20000, rng)
    sa, sb = shuffle_pairs(a, b, rng)
    p_joint = dis(np.concatenate([a, b], 1)).data[:, JOINT]
    p_shuf = dis(np.concatenate([sa, sb], 1)).data[:, JOINT]
    acc = 0.5 * (np.mean(p_joint > 0.5) + np.mean(p_shuf <= 0.5))
    assert acc == pytest.approx(0.5, abs=0.05)


def test_train_dib_contracts():
    data = _tiny_data(48)
    cfg = ExperimentConfig(m_s=4, m_t=6, v_d1=1, v_d2=2, batch_size=16, dis_steps=1)
    b = ModelBundle(cfg.m_s, cfg.m_t)
    b.build(["enc_s", "cls", "enc_t", "dec", "dis"], np.random.default_rng(0))
    bundle, hist = train_dib(data, cfg, test=data, bundle=b)
    assert bundle.enc_s.frozen
    stages = [r["stage"] for r in hist.rows]
    assert stages == [1, 2, 2]
    assert all(np.isfinite(r["test_mse"]) for r in hist.rows if r["stage"] == 2)


def test_step2_leaves_private_encoder_bit_identical():
    data = _tiny_data(40)
    cfg = ExperimentConfig(m_s=3, m_t=5, v_d1=1, v_d2=1, batch_size=8, dis_steps=2)
    b = ModelBundle(cfg.m_s, cfg.m_t).build(["enc_s", "cls", "enc_t", "dec", "dis"], np.random.default_rng(1))
    before = {k: v.tobytes() for k, v in b.enc_s.state_dict().items()}
    enc_t_before = b.enc_t.state_dict()["0.weight"].copy()
    train_step2(b, data, cfg, 2)
    assert {k: v.tobytes() for k, v in b.enc_s.state_dict().items()} == before
    assert not np.array_equal(b.enc_t.state_dict()["0.weight"], enc_t_before)


def test_train_dib_missing_field():
    class Partial:
        m_s = 2
    with pytest.raises(ConfigError, match="m_t"):
        train_dib(_tiny_data(8), Partial())


def test_public_encoder_step_descends_la():
    """A small step on L_A with alpha > 0 does not increase L_A on the same batch."""
    from dibjscc.channel import ChannelSpec, transmit
    from dibjscc.nn.losses import sse
    from dibjscc.nn.optim import Adam
    data = _tiny_data(32, seed=3)
    b = ModelBundle(3, 5).build(["enc_s", "enc_t", "dec", "dis"], np.random.default_rng(2))
    b.enc_s.freeze()
    x = data.pixels[:16]
    y_s = b.enc_s.predict(x)
    spec = ChannelSpec("inf")

    def loss_a():
        y_t = b.enc_t(x)
        d = sse(b.dec(transmit(ag.concat([y_t, ag.as_tensor(y_s)], axis=1), spec)), x)
        return d + 1.0 * density_ratio_mi(y_t, y_s, b.dis)

    params = b.enc_t.parameters()
    with Tape() as tape:
        before = loss_a()
    Adam(params, lr=1e-4).step(tape.gradient(before, params))
    assert loss_a().item() <= before.item() + 1e-6
