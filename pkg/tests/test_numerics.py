import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from medner.numerics import (
    Adam, AdamState, CheckpointError, OptimizerConfig, Parameter, ShapeError, Tape, Tensor, adam_step, backward,
    clip_grad_norm, concat, default_no_decay, derive_rng, dropout, embedding_lookup, exp, gelu, getitem, gradcheck,
    layer_norm, load_checkpoint, log, log_softmax, log_sum_exp, lr_schedule, masked_fill, matmul, mean,
    recording, relu, reshape, save_checkpoint, sigmoid, softmax, stack, tanh, transpose, tsum, where,
)

TOL = 1e-4


def rand_param(rng, *shape, name="p"):
    return Parameter(rng.standard_normal(shape), name=name)


# --- forward values ---------------------------------------------------------

def test_softmax_of_equal_inputs_is_uniform():
    np.testing.assert_allclose(softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])


def test_log_sum_exp_is_stable_for_large_inputs():
    out = log_sum_exp(Tensor([1000.0, 1000.0])).item()
    assert out == pytest.approx(1000 + math.log(2), abs=1e-12)


def test_matmul_hand_computed():
    a = Tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    b = Tensor([[1.0], [0.0], [-1.0]])
    np.testing.assert_array_equal(matmul(a, b).data, [[-2.0], [-2.0]])


def test_shape_error_names_op_and_shapes():
    with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2, 1\)"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 1))))
    with pytest.raises(ShapeError, match="add"):
        Tensor(np.ones(3)) + Tensor(np.ones(4))


def test_sigmoid_is_stable_at_extremes():
    out = sigmoid(Tensor([-1000.0, 0.0, 1000.0])).data
    np.testing.assert_allclose(out, [0.0, 0.5, 1.0])
    assert np.all(np.isfinite(out))


def test_dropout_identity_in_eval_and_scaled_in_train():
    x = Tensor(np.ones(10000))
    assert dropout(x, 0.5, None, training=False) is x
    y = dropout(x, 0.5, np.random.default_rng(0), training=True).data
    assert set(np.unique(y)) <= {0.0, 2.0}
    assert abs(y.mean() - 1.0) < 0.05


def test_layer_norm_normalises_last_axis():
    x = Tensor(np.random.default_rng(0).standard_normal((3, 8)) * 5 + 2)
    y = layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8))).data
    np.testing.assert_allclose(y.mean(-1), 0, atol=1e-12)
    np.testing.assert_allclose(y.var(-1), 1, atol=1e-9)


# --- backward -----------------------------------------------------------------

def test_backward_before_forward_is_an_error():
    with pytest.raises(RuntimeError):
        backward(Tape(), Tensor(1.0))


def test_sum_gives_all_ones_gradient():
    p = Parameter(np.arange(6.0).reshape(2, 3))
    with recording() as tape:
        loss = tsum(p)
    np.testing.assert_array_equal(backward(tape, loss, [p])[p], np.ones((2, 3)))


def test_tanh_gradient_at_zero_is_one():
    p = Parameter(np.zeros(1))
    with recording() as tape:
        loss = tsum(tanh(p))
    assert backward(tape, loss, [p])[p][0] == 1.0


def test_unused_parameter_gets_zero_gradient():
    p, q = Parameter(np.ones(2)), Parameter(np.ones(3))
    with recording() as tape:
        loss = tsum(p * p)
    assert not backward(tape, loss, [p, q])[q].any()


def test_nothing_is_recorded_outside_a_tape():
    p = Parameter(np.ones(2))
    out = tsum(p * 2)
    assert out.grad_fn is None


KERNELS = {
    "add": lambda a, b: tsum((a + b) * (a - b)),
    "mul_div": lambda a, b: tsum(a * b / (exp(b) + 1.0)),
    "neg": lambda a, b: tsum(-a * b),
    "matmul": lambda a, b: tsum(tanh(matmul(a, transpose(b)))),
    "mean": lambda a, b: mean(a * b, axis=0).sum(),
    "reshape_transpose": lambda a, b: tsum(reshape(a, (4, 3)) * transpose(b, (1, 0)).reshape(4, 3)),
    "getitem": lambda a, b: tsum(getitem(a, (np.array([0, 2, 2]), np.array([1, 0, 1]))) * b[0, :3]),
    "concat": lambda a, b: tsum(concat([a, b * b], axis=1) * concat([b, a], axis=1)),
    "stack": lambda a, b: tsum(stack([a, b], axis=0) * stack([b, a], axis=0)),
    "tanh": lambda a, b: tsum(tanh(a) * b),
    "sigmoid": lambda a, b: tsum(sigmoid(a) * b),
    "relu": lambda a, b: tsum(relu(a + 0.05) * b),
    "gelu": lambda a, b: tsum(gelu(a) * b),
    "exp_log": lambda a, b: tsum(log(exp(a) + exp(b))),
    "log_sum_exp": lambda a, b: tsum(log_sum_exp(a * b, axis=-1)),
    "softmax": lambda a, b: tsum(softmax(a, axis=-1) * b),
    "log_softmax": lambda a, b: tsum(log_softmax(a, axis=0) * b),
    "where": lambda a, b: tsum(where(np.eye(3, 4, dtype=bool), a, b) * a),
    "masked_fill": lambda a, b: tsum(masked_fill(a, np.eye(3, 4, dtype=bool), -3.0) * b),
    "layer_norm": lambda a, b: tsum(layer_norm(a, b[0], b[1]) * b),
}


@pytest.mark.parametrize("name", sorted(KERNELS))
def test_kernel_gradients_match_finite_differences(name):
    rng = np.random.default_rng(7)
    a, b = rand_param(rng, 3, 4, name="a"), rand_param(rng, 3, 4, name="b")
    errs = gradcheck(lambda: KERNELS[name](a, b), {"a": a, "b": b})
    assert max(errs.values()) < TOL, errs


def test_embedding_lookup_gradient_accumulates_repeats():
    table = Parameter(np.random.default_rng(0).standard_normal((5, 3)))
    ids = np.array([[1, 1, 4]])
    weights = np.arange(9.0).reshape(1, 3, 3)
    errs = gradcheck(lambda: tsum(embedding_lookup(table, ids) * weights), {"t": table})
    assert errs["t"] < TOL
    with recording() as tape:
        loss = tsum(embedding_lookup(table, ids))
    g = backward(tape, loss, [table])[table]
    np.testing.assert_array_equal(g[:, 0], [0, 2, 0, 0, 1])


def test_dropout_gradient_uses_the_same_mask():
    a = Parameter(np.random.default_rng(1).standard_normal(20))

    def fn():
        return tsum(dropout(a, 0.3, np.random.default_rng(5), True) * a)
    assert gradcheck(fn, {"a": a})["a"] < TOL


def test_batched_matmul_with_broadcast_gradients():
    rng = np.random.default_rng(2)
    a, w = rand_param(rng, 2, 3, 4), rand_param(rng, 4, 5)
    errs = gradcheck(lambda: tsum(tanh(matmul(a, w))), {"a": a, "w": w})
    assert max(errs.values()) < TOL


def test_random_small_network_gradcheck():
    rng = np.random.default_rng(3)
    w1, b1, w2 = rand_param(rng, 5, 8), rand_param(rng, 8), rand_param(rng, 8, 3)
    x = Tensor(rng.standard_normal((4, 5)))
    y = np.array([0, 2, 1, 1])

    def fn():
        h = tanh(matmul(x, w1) + b1)
        lp = log_softmax(matmul(h, w2), axis=-1)
        return -tsum(getitem(lp, (np.arange(4), y)))
    errs = gradcheck(fn, {"w1": w1, "b1": b1, "w2": w2})
    assert max(errs.values()) < TOL


# --- optimizer and schedule --------------------------------------------------

def test_adam_zero_gradient_without_decay_leaves_params():
    p = Parameter(np.array([1.0, -2.0]))
    cfg = OptimizerConfig(weight_decay=0.0)
    adam_step({"w": p}, {"w": np.zeros(2)}, AdamState(), cfg, 1, 0.1)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_first_step_is_minus_lr_for_constant_gradient():
    p = Parameter(np.array([0.0]))
    cfg = OptimizerConfig(weight_decay=0.0, epsilon=0.0)
    adam_step({"w": p}, {"w": np.array([1.0])}, AdamState(), cfg, 1, 0.1)
    assert p.data[0] == pytest.approx(-0.1, abs=1e-15)


def test_adam_decoupled_decay_with_zero_gradient():
    p = Parameter(np.array([3.0]))
    cfg = OptimizerConfig(weight_decay=0.01)
    adam_step({"w": p}, {"w": np.zeros(1)}, AdamState(), cfg, 1, 0.1)
    assert p.data[0] == pytest.approx(3.0 - 0.1 * 0.01 * 3.0, abs=1e-15)


def test_adam_exempts_biases_and_layer_norm_from_decay():
    assert default_no_decay("encoder.layers.0.ln1.gamma")
    assert default_no_decay("proj.bias")
    assert not default_no_decay("proj.weight")
    p = Parameter(np.array([3.0]))
    adam_step({"proj.bias": p}, {"proj.bias": np.zeros(1)}, AdamState(), OptimizerConfig(), 1, 0.1)
    assert p.data[0] == 3.0


def test_adam_non_finite_gradient_preserves_state():
    p = Parameter(np.array([1.0, 2.0]))
    state = AdamState()
    with pytest.raises(FloatingPointError):
        adam_step({"w": p}, {"w": np.array([1.0, np.nan])}, state, OptimizerConfig(), 1, 0.1)
    np.testing.assert_array_equal(p.data, [1.0, 2.0])
    assert state.step == 0 and not state.m


def test_adam_refuses_steps_past_the_schedule():
    p = Parameter(np.zeros(1))
    opt = Adam({"w": p}, OptimizerConfig(), total_steps=2)
    opt.step({"w": np.ones(1)})
    opt.step({"w": np.ones(1)})
    with pytest.raises(RuntimeError):
        opt.step({"w": np.ones(1)})


def test_schedule_endpoints_and_errors():
    assert lr_schedule(0, 100, 5e-5) == 0.0
    assert lr_schedule(10, 100, 5e-5) == pytest.approx(5e-5)
    assert lr_schedule(100, 100, 5e-5) == 0.0
    with pytest.raises(ValueError):
        lr_schedule(0, 0, 5e-5)


@given(st.integers(1, 2000), st.floats(1e-6, 1.0), st.data())
def test_schedule_is_piecewise_linear(total, peak, data):
    s = data.draw(st.integers(0, total))
    lr = lr_schedule(s, total, peak)
    assert 0.0 <= lr <= peak * (1 + 1e-12)
    warm = 0.1 * total
    expected = peak * s / warm if s < warm else peak * (total - s) / (total - warm)
    assert lr == pytest.approx(expected, rel=1e-12, abs=1e-18)


def test_optimizer_config_rejects_bad_values():
    with pytest.raises(ValueError):
        OptimizerConfig(epochs=0)
    with pytest.raises(ValueError):
        OptimizerConfig(peak_lr=float("nan"))
    with pytest.raises(ValueError):
        OptimizerConfig(schedule="cosine")


def test_clip_grad_norm_rescales_to_limit():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert clip_grad_norm(grads, 1.0) == 5.0
    assert math.hypot(grads["a"][0], grads["b"][0]) == pytest.approx(1.0)


# --- rng and checkpoints -------------------------------------------------------

def test_derived_streams_are_reproducible_and_distinct():
    a1 = derive_rng(4, "init").random(5)
    a2 = derive_rng(4, "init").random(5)
    b = derive_rng(4, "dropout").random(5)
    np.testing.assert_array_equal(a1, a2)
    assert not np.array_equal(a1, b)


def test_checkpoint_round_trip(tmp_path):
    tensors = {"w": np.arange(6.0).reshape(2, 3), "ids": np.array([1, 2], dtype=np.int64)}
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, tensors, {"lr": 0.1}, 7, {"family": "x"})
    loaded, header = load_checkpoint(path)
    assert header["seed"] == 7 and header["config"] == {"lr": 0.1} and header["meta"] == {"family": "x"}
    for k, v in tensors.items():
        assert loaded[k].dtype == v.dtype
        np.testing.assert_array_equal(loaded[k], v)


def test_checkpoint_is_byte_stable(tmp_path):
    tensors = {"b": np.ones(2), "a": np.zeros((1, 2))}
    save_checkpoint(tmp_path / "1", tensors, {}, 0, {})
    save_checkpoint(tmp_path / "2", dict(reversed(tensors.items())), {}, 0, {})
    assert (tmp_path / "1").read_bytes() == (tmp_path / "2").read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
