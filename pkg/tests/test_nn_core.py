import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dibjscc.nn import autograd as ag
from dibjscc.nn.autograd import ContractError, Parameter, ShapeError, Tape, Tensor
from dibjscc.nn.checkpoint import (CheckpointFormatError, CheckpointVersionError, decode_params,
                                   encode_params, load_into, load_params, save_params)
from dibjscc.nn.gradcheck import finite_difference_check, gradcheck
from dibjscc.nn.layers import ACTIVATIONS, MLP, Dense, dense_forward
from dibjscc.nn.losses import cross_entropy_nll, entropy, mse, sse
from dibjscc.nn.optim import Adam, AdamState, adam_step


def _dense(in_dim, out_dim, act, w=None, b=None):
    layer = Dense(in_dim, out_dim, act, np.random.default_rng(0))
    if w is not None:
        layer.weight.data = np.asarray(w, np.float32)
    if b is not None:
        layer.bias.data = np.asarray(b, np.float32)
    return layer


# dense_forward

def test_dense_identity_passthrough():
    layer = _dense(2, 2, "identity", np.eye(2), np.zeros(2))
    np.testing.assert_array_equal(dense_forward(layer, np.array([[3.0, -1.0]])).data, [[3, -1]])


def test_dense_relu_clips_negative():
    layer = _dense(2, 2, "relu", np.eye(2), np.zeros(2))
    np.testing.assert_array_equal(dense_forward(layer, np.array([[3.0, -1.0]])).data, [[3, 0]])


def test_dense_matches_loop_dot_products():
    rng = np.random.default_rng(1)
    layer = Dense(4, 3, "identity", rng)
    layer.bias.data = rng.standard_normal(3).astype(np.float32)
    x = rng.standard_normal((2, 4)).astype(np.float32)
    out = dense_forward(layer, x).data
    W, b = layer.weight.data.astype(np.float64), layer.bias.data.astype(np.float64)
    for i in range(2):
        for j in range(3):
            expect = sum(float(x[i, k]) * W[k, j] for k in range(4)) + b[j]
            assert abs(out[i, j] - expect) < 1e-5


def test_dense_shape_error_reports_both_shapes():
    layer = Dense(4, 3)
    with pytest.raises(ShapeError, match=r"\(2, 5\).*\(4, 3\)"):
        dense_forward(layer, np.zeros((2, 5)))


def test_dense_forward_records_on_given_tape():
    layer = Dense(3, 2)
    tape = Tape()
    out = dense_forward(layer, np.ones((1, 3)), tape)
    assert len(tape) > 0
    with tape:
        loss = ag.tsum(out)
    g = tape.gradient(loss, [layer.bias])
    np.testing.assert_allclose(g[0], [1, 1])


# softmax

def test_softmax_symmetric():
    np.testing.assert_allclose(ag.softmax(np.array([[0.0, 0.0]])).data, [[0.5, 0.5]])


def test_softmax_large_logit_no_overflow():
    out = ag.softmax(np.array([[1000.0, 0.0]])).data
    assert np.all(np.isfinite(out))
    assert out[0, 0] == pytest.approx(1.0) and out[0, 1] == pytest.approx(0.0, abs=1e-30)


def test_softmax_against_direct_exponentials():
    z = np.array([1.0, 2.0, 3.0])
    direct = np.exp(z) / np.exp(z).sum()
    np.testing.assert_allclose(ag.softmax(z[None]).data[0], direct, atol=1e-6)
    np.testing.assert_allclose(direct, [0.0900, 0.2447, 0.6652], atol=1e-4)


def test_softmax_needs_two_classes():
    with pytest.raises(ShapeError):
        ag.softmax(np.zeros((3, 1)))


@given(arrays(np.float64, (4, 6), elements=st.floats(-1e3, 1e3)))
@settings(max_examples=60, deadline=None)
def test_softmax_rows_sum_to_one(logits):
    out = ag.softmax(logits).data
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-6)


# losses

def test_nll_confident_correct_is_zero():
    onehot = np.eye(3, dtype=np.float32)
    assert cross_entropy_nll(onehot, onehot).item() == pytest.approx(0.0, abs=1e-7)


@pytest.mark.parametrize("k", [2, 3, 10, 17])
def test_nll_uniform_is_log_k(k):
    probs = np.full((5, k), 1.0 / k)
    onehot = np.eye(k)[np.arange(5) % k]
    assert cross_entropy_nll(probs, onehot).item() == pytest.approx(np.log(k), rel=1e-6)


def test_nll_hand_value():
    assert cross_entropy_nll(np.array([[0.7, 0.3]]), np.array([[0, 1]])).item() == pytest.approx(-np.log(0.3), abs=1e-6)


def test_nll_floor_keeps_loss_finite():
    val = cross_entropy_nll(np.array([[1.0, 0.0]]), np.array([[0, 1]])).item()
    assert val == pytest.approx(-np.log(1e-12), rel=1e-5)


@pytest.mark.parametrize("bad", [[[0.5, 0.5]], [[1, 1]], [[0, 0]]])
def test_nll_rejects_invalid_onehot(bad):
    with pytest.raises(ValueError, match="one-hot"):
        cross_entropy_nll(np.array([[0.5, 0.5]]), np.array(bad))


def test_mse_trivial_cases():
    assert mse(np.ones(3), np.ones(3)).item() == 0
    assert mse(np.array([1.0, 1.0]), np.array([0.0, 0.0])).item() == 1


def test_mse_against_element_loop():
    rng = np.random.default_rng(3)
    a, b = rng.random((7, 5)), rng.random((7, 5))
    loop = sum((float(a[i, j]) - float(b[i, j])) ** 2 for i in range(7) for j in range(5)) / 35
    assert mse(a, b).item() == pytest.approx(loop, abs=1e-6)


def test_mse_shape_mismatch():
    with pytest.raises(ShapeError):
        mse(np.zeros(3), np.zeros(4))


def test_sse_is_row_sum_mean():
    a = np.array([[1.0, 1.0], [0.0, 2.0]])
    assert sse(a, np.zeros_like(a)).item() == pytest.approx((2 + 4) / 2)


def test_entropy_values():
    assert entropy(np.full((2, 10), 0.1)).item() == pytest.approx(np.log(10), rel=1e-6)
    assert entropy(np.eye(4)).item() == pytest.approx(0.0, abs=1e-7)
    assert entropy(np.array([[0.5, 0.25, 0.25]])).item() == pytest.approx(1.0397, abs=1e-4)


def test_entropy_rejects_negative():
    with pytest.raises(ValueError):
        entropy(np.array([[1.2, -0.2]]))


# backward

def test_backward_sum_gives_ones():
    x = Parameter(np.arange(6.0).reshape(2, 3))
    with Tape() as tape:
        loss = ag.tsum(x)
    grads = ag.backward(tape, loss)
    np.testing.assert_array_equal(grads[x], np.ones((2, 3)))


def test_backward_nonscalar_is_contract_error():
    x = Parameter(np.ones((2, 2)))
    with Tape() as tape:
        y = x * 2.0
    with pytest.raises(ContractError):
        ag.backward(tape, y)


def test_backward_untouched_param_gets_zero():
    x, z = Parameter(np.ones(3)), Parameter(np.ones(2))
    with Tape() as tape:
        loss = ag.tsum(x * x)
    grads = ag.backward(tape, loss, [x, z])
    np.testing.assert_array_equal(grads[z], np.zeros(2))


def test_backward_mse_2x2_matches_finite_differences():
    rng = np.random.default_rng(4)
    W = Parameter(rng.standard_normal((2, 2)))
    x, y = rng.standard_normal((3, 2)), rng.standard_normal((3, 2))
    assert gradcheck(lambda: mse(ag.matmul(x, W), y), [W], eps=1e-3) < 1e-4


def test_backward_two_layer_relu_net():
    rng = np.random.default_rng(5)
    net = MLP([5, 7, 3], "identity", rng)
    x = rng.standard_normal((4, 5))
    assert finite_difference_check(net, x, eps=1e-3, seed=1) < 1e-4


def test_each_node_visited_once():
    a = Parameter(np.ones(3))
    with Tape() as tape:
        b = a * 2.0
        c = b + b
        loss = ag.tsum(c * b)
    trace = []
    tape._sweep(loss, trace)
    assert len(trace) == len({id(t) for t in trace}) == len(tape)


@pytest.mark.parametrize("op", [
    lambda a, b: a + b, lambda a, b: a - b, lambda a, b: a * b, lambda a, b: a / (b * b + 1.0),
    lambda a, b: ag.exp(a) * ag.sigmoid(b), lambda a, b: ag.log(a * a + 1.0) + ag.sqrt(b * b + 1.0),
    lambda a, b: ag.tanh(a) * b, lambda a, b: ag.concat([a, b], axis=1) * 3.0,
    lambda a, b: ag.getitem(a, (slice(None), 1)) * ag.mean(b, axis=0)[1],
    lambda a, b: ag.take_rows(a, np.array([2, 0, 2])) - 1.0,
])
def test_primitive_gradients(op):
    rng = np.random.default_rng(6)
    a = Parameter(rng.standard_normal((3, 4)) + 0.5)
    b = Parameter(rng.standard_normal((3, 4)))
    w = rng.standard_normal(op(Tensor(a.data), Tensor(b.data)).shape)
    assert gradcheck(lambda: ag.tsum(op(a, b) * w), [a, b]) < 1e-6


def test_stop_gradient_blocks():
    a = Parameter(np.ones(2))
    with Tape() as tape:
        loss = ag.tsum(ag.stop_gradient(a) * a)
    np.testing.assert_array_equal(tape.gradient(loss, [a])[0], np.ones(2))


# adam

def test_adam_zero_grad_is_noop():
    p = Parameter(np.array([0.3, -1.2]))
    before = p.data.copy()
    state = AdamState()
    for _ in range(3):
        adam_step([p], [np.zeros(2)], state)
    np.testing.assert_array_equal(p.data, before)
    assert state.step_count == 3


def test_adam_first_step_hand_computed():
    p = Parameter(np.array([0.0]))
    adam_step([p], [np.array([1.0])], AdamState(lr=1e-3))
    # m_hat = 1, v_hat = 1, update = lr / (1 + eps)
    assert p.data[0] == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-6)


def test_adam_constant_gradient_moves_monotonically():
    p = Parameter(np.array([1.0, 1.0]))
    opt = Adam([p], lr=0.01)
    g = np.array([2.0, -3.0])
    trail = [p.data.copy()]
    for _ in range(2):
        opt.step([g])
        trail.append(p.data.copy())
    # simulate the recurrence directly
    m = v = np.zeros(2)
    x = np.array([1.0, 1.0])
    for t in (1, 2):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x = x - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(trail[-1], x, rtol=1e-6)
    assert np.all(np.diff(np.array(trail), axis=0) * np.sign(g) < 0)


def test_adam_shape_mismatch():
    with pytest.raises(ShapeError):
        adam_step([Parameter(np.zeros(2))], [np.zeros(3)], AdamState())


@pytest.mark.parametrize("kw", [{"lr": 0}, {"beta1": 1.0}, {"beta2": 0.0}])
def test_adam_state_validation(kw):
    with pytest.raises(ValueError):
        AdamState(**kw)


# finite-difference utility

def test_fd_linear_net_exact():
    net = MLP([3, 2], "identity", np.random.default_rng(7))
    assert finite_difference_check(net, np.random.default_rng(8).standard_normal((4, 3))) < 1e-6


def test_fd_sigmoid_mlp():
    net = MLP([4, 6, 3], "sigmoid", np.random.default_rng(9), hidden_activation="sigmoid")
    assert finite_difference_check(net, np.random.default_rng(10).standard_normal((5, 4))) < 1e-4


def test_fd_eps_must_be_positive():
    with pytest.raises(ValueError):
        finite_difference_check(MLP([2, 2]), np.zeros((1, 2)), eps=0)


def test_gradcheck_restores_dtype_and_values():
    net = MLP([3, 2], "softmax", np.random.default_rng(11))
    before = {k: v.copy() for k, v in net.state_dict().items()}
    finite_difference_check(net, np.ones((2, 3)))
    for k, p in net.named_parameters():
        assert p.data.dtype == np.float32
        np.testing.assert_array_equal(p.data, before[k])


@given(st.integers(0, 10_000))
@settings(max_examples=15, deadline=None)
def test_forward_backward_finite(seed):
    rng = np.random.default_rng(seed)
    net = MLP([6, 8, 4], "softmax", rng)
    x = rng.standard_normal((5, 6)) * 100
    onehot = np.eye(4)[rng.integers(0, 4, 5)]
    with Tape() as tape:
        loss = cross_entropy_nll(net(x), onehot) + entropy(net(x))
    assert np.isfinite(loss.item())
    assert all(np.all(np.isfinite(g)) for g in tape.gradient(loss, net.parameters()))


# checkpoint format

def _params():
    rng = np.random.default_rng(12)
    return {"a.weight": rng.standard_normal((3, 2)).astype(np.float32),
            "a.bias": np.zeros(2, np.float32), "scalarish": np.array([1.5], np.float32)}


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    params = _params()
    save_params(params, tmp_path / "c.bin")
    back = load_params(tmp_path / "c.bin")
    assert list(back) == list(params)
    for k in params:
        assert back[k].tobytes() == params[k].tobytes()


def test_checkpoint_layout():
    blob = encode_params({"w": np.array([[1.0, 2.0]], np.float32)})
    assert blob[:4] == b"DIBP"
    assert int.from_bytes(blob[4:8], "little") == 1
    assert int.from_bytes(blob[8:10], "little") == 1 and blob[10:11] == b"w"
    assert blob[11] == 2
    assert int.from_bytes(blob[12:16], "little") == 1 and int.from_bytes(blob[16:20], "little") == 2
    assert np.frombuffer(blob[20:], "<f4").tolist() == [1.0, 2.0]


def test_checkpoint_bad_magic():
    blob = bytearray(encode_params(_params()))
    blob[:4] = b"XXXX"
    with pytest.raises(CheckpointFormatError):
        decode_params(bytes(blob))


def test_checkpoint_version_mismatch():
    blob = bytearray(encode_params(_params()))
    blob[4:8] = (99).to_bytes(4, "little")
    with pytest.raises(CheckpointVersionError):
        decode_params(bytes(blob))


def test_checkpoint_truncated():
    with pytest.raises(CheckpointFormatError):
        decode_params(encode_params(_params())[:-3])


def test_load_into_shape_error_names_parameter():
    net = MLP([3, 2])
    params = {k: v for k, v in net.state_dict().items()}
    params["0.weight"] = np.zeros((4, 2), np.float32)
    with pytest.raises(ShapeError, match="0.weight"):
        load_into(dict(net.named_parameters()), params)


def test_all_activations_registered():
    assert {"relu", "sigmoid", "softmax", "identity"} <= set(ACTIVATIONS)
