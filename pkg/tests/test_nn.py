import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from driveperc.errors import DimensionError, ParameterError
from driveperc.nn import functional as F
from driveperc.nn import gradcheck, layers, optim
from driveperc.nn.layers import BatchNorm, Dense, Dropout, LayerSpec
from driveperc.nn.model import INFER, TRAIN, Model
from driveperc.nn.optim import OptimizerState
from driveperc.nn.train import batch_slices, evaluate, fit, predict, train_epoch
from driveperc.tensor_core import Prng


# -- scalar recurrence oracles -------------------------------------------------


def sgd_ref(w, gs, lr):
    for g in gs:
        w = w - lr * g
    return w


def rmsprop_ref(w, gs, lr, beta, eps):
    v = 0.0
    for g in gs:
        v = beta * v + (1 - beta) * g * g
        w = w - lr * g / math.sqrt(v + eps)
    return w


def adam_ref(w, gs, lr, b1, b2, eps):
    m = v = 0.0
    for t, g in enumerate(gs, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        w = w - lr * mhat / math.sqrt(vhat + eps)
    return w


def run_steps(kind, w0, gs, **hyper):
    state = OptimizerState(kind, **hyper)
    p = [np.array([w0])]
    for g in gs:
        optim.step(state, p, [np.array([g])])
    return float(p[0][0]), state


# -- activations ---------------------------------------------------------------


def test_activation_known_values():
    assert F.activation("sigmoid", 0.0) == 0.5
    assert F.activation("relu", -2.0) == 0 and F.activation("relu", 3.0) == 3
    assert F.activation("elu", 0.0) == 0
    mpmath.mp.dps = 30
    assert abs(F.activation("elu", -1.0) - float(mpmath.exp(-1) - 1)) < 1e-15


@given(st.floats(-1e3, 1e3))
def test_softmax_constant_row_is_uniform(c):
    np.testing.assert_allclose(F.softmax(np.full(4, c)), 0.25, rtol=0, atol=1e-15)


@given(arrays(np.float64, (3, 6), elements=st.floats(-500, 500)))
def test_softmax_rows_are_distributions(x):
    s = F.softmax(x)
    assert np.all(s >= 0)
    assert np.all(np.abs(s.sum(axis=1) - 1) < 1e-9)


def test_sigmoid_is_stable_at_extremes():
    s = F.sigmoid(np.array([-1000.0, 1000.0]))
    assert s.tolist() == [0.0, 1.0]


def _fd(f, x, h=1e-6):
    return (f(x + h) - f(x - h)) / (2 * h)


def test_activation_grads_against_finite_differences():
    assert F.activation_grad("relu", -1.0) == 0 and F.activation_grad("relu", 2.0) == 1
    assert abs(F.activation_grad("sigmoid", 0.0) - _fd(lambda v: F.activation("sigmoid", v), 0.0)) < 1e-9
    assert abs(F.activation_grad("sigmoid", 0.0) - 0.25) < 1e-15
    assert abs(F.activation_grad("elu", -1.0) - _fd(lambda v: F.activation("elu", v), -1.0)) < 1e-9
    assert abs(F.activation_grad("elu", -1.0) - math.exp(-1)) < 1e-15
    assert F.activation_grad("elu", 0.0) == 1.0


def test_softmax_backward_is_jacobian_product():
    p = Prng(1)
    x = p.normal((2, 5))
    d = p.normal((2, 5))
    y = F.softmax(x)
    got = F.activation_backward("softmax", d, x, y)
    for i in range(2):
        jac = np.diag(y[i]) - np.outer(y[i], y[i])
        np.testing.assert_allclose(got[i], jac @ d[i], atol=1e-15)


def test_unknown_activation():
    with pytest.raises(ParameterError):
        F.activation("tanh", 0.0)
    with pytest.raises(ParameterError):
        LayerSpec("Dense", {"units": 2, "activation": "tanh"})


# -- losses --------------------------------------------------------------------


def test_loss_known_values():
    y = np.array([[0.3, 0.7]])
    assert F.loss("mse", y, y) == 0
    assert F.loss("mse", [0.0], [1.0]) == 1
    mpmath.mp.dps = 30
    assert abs(F.loss("binary_ce", [1.0], [0.5]) - float(mpmath.log(2))) < 1e-15
    assert F.loss("categorical_ce", [[0.0, 1.0, 0.0]], [[0.0, 1.0, 0.0]]) == pytest.approx(0, abs=1e-11)


def test_cross_entropy_matches_categorical():
    p = Prng(2)
    y = np.eye(4)[[0, 3, 1]]
    q = F.softmax(p.normal((3, 4)))
    assert F.loss("cross_entropy", y, q) == F.loss("categorical_ce", y, q)


def test_loss_clamps_zero_probability():
    v = F.loss("binary_ce", [1.0], [0.0])
    assert math.isfinite(v) and abs(v + math.log(1e-12)) < 1e-9


def test_loss_shape_mismatch():
    with pytest.raises(DimensionError):
        F.loss("mse", np.zeros(3), np.zeros(4))
    with pytest.raises(ParameterError):
        F.loss("hinge", np.zeros(3), np.zeros(3))


def test_loss_grads_vanish_at_target():
    y = np.array([[0.2, 0.8]])
    assert not F.loss_grad("mse", y, y).any()
    assert not F.loss_grad("binary_ce", y, y).any()


def test_fused_softmax_ce_gradient():
    g = F.fused_output_grad("categorical_ce", "softmax", [[1.0, 0.0]], [[0.0, 0.0]])
    np.testing.assert_allclose(g, [[-0.5, 0.5]], atol=1e-16)

    # finite differences on the composed function
    def composed(z):
        return F.loss("categorical_ce", [[1.0, 0.0]], F.softmax(z))

    z = np.zeros((1, 2))
    num = np.zeros(2)
    for k in range(2):
        e = np.zeros((1, 2))
        e[0, k] = 1e-6
        num[k] = (composed(z + e) - composed(z - e)) / 2e-6
    np.testing.assert_allclose(g[0], num, atol=1e-9)


def test_fused_gradients_match_chain_rule():
    p = Prng(3)
    z = p.normal((4, 3))
    y = np.eye(3)[[0, 2, 1, 1]]
    s = F.softmax(z)
    chain = F.activation_backward("softmax", F.loss_grad("categorical_ce", y, s), z, s)
    np.testing.assert_allclose(F.fused_output_grad("categorical_ce", "softmax", y, z), chain, atol=1e-14)
    yb = (p.random((4, 3)) < 0.5).astype(float)
    sb = F.sigmoid(z)
    chain = F.activation_backward("sigmoid", F.loss_grad("binary_ce", yb, sb), z, sb)
    np.testing.assert_allclose(F.fused_output_grad("binary_ce", "sigmoid", yb, z), chain, atol=1e-14)
    assert F.fused_output_grad("mse", "sigmoid", yb, z) is None


# -- optimizers ----------------------------------------------------------------


def test_sgd_known_step():
    w, _ = run_steps("sgd", 1.0, [0.5], lr=0.1)
    assert w == 0.95


def test_rmsprop_first_step():
    w, state = run_steps("rmsprop", 0.0, [1.0], lr=0.01, beta=0.9, eps=1e-8)
    assert abs(state.v[0][0] - 0.1) < 1e-16
    assert abs(w - (-0.01 / math.sqrt(0.1 + 1e-8))) < 1e-16
    assert state.t == 1


@pytest.mark.parametrize("kind", ["sgd", "rmsprop", "adam"])
def test_zero_gradient_leaves_parameters(kind):
    w, _ = run_steps(kind, 1.25, [0.0] * 5)
    assert w == 1.25


@given(st.floats(-10, 10).filter(lambda g: abs(g) > 1e-3), st.floats(1e-4, 0.1))
def test_adam_first_step_is_lr_times_sign(g, lr):
    w, _ = run_steps("adam", 0.0, [g], lr=lr)
    assert abs(w) <= lr * (1 + 1e-6)
    # epsilon sits inside the root, so the step is lr * g / sqrt(g^2 + eps)
    assert abs(w + lr * g / math.sqrt(g * g + 1e-8)) < 1e-15
    assert math.copysign(1, w) == -math.copysign(1, g)


def test_adam_three_constant_steps():
    w, state = run_steps("adam", 0.5, [0.3] * 3, lr=0.01)
    assert abs(w - adam_ref(0.5, [0.3] * 3, 0.01, 0.9, 0.999, 1e-8)) < 1e-12
    assert state.t == 3


@pytest.mark.parametrize("seed", range(10))
def test_optimizers_match_scalar_recurrences(seed):
    p = Prng(seed)
    w0 = float(p.normal(()))
    gs = [float(g) for g in p.normal((10,))]
    lr = 0.001 + 0.1 * float(p.random(()))
    assert abs(run_steps("sgd", w0, gs, lr=lr)[0] - sgd_ref(w0, gs, lr)) < 1e-12
    assert abs(run_steps("rmsprop", w0, gs, lr=lr, beta=0.9)[0] - rmsprop_ref(w0, gs, lr, 0.9, 1e-8)) < 1e-12
    assert abs(run_steps("adam", w0, gs, lr=lr)[0] - adam_ref(w0, gs, lr, 0.9, 0.999, 1e-8)) < 1e-12


def test_optimizer_tensors_match_elementwise_oracle():
    # larger than one chunk so the chunked update path is exercised
    p = Prng(4)
    n = optim.CHUNK + 17
    w = p.normal((n,))
    gs = [p.normal((n,)) for _ in range(3)]
    for kind, ref in (
        ("sgd", lambda w0, g: sgd_ref(w0, g, 0.01)),
        ("rmsprop", lambda w0, g: rmsprop_ref(w0, g, 0.01, 0.9, 1e-8)),
        ("adam", lambda w0, g: adam_ref(w0, g, 0.01, 0.9, 0.999, 1e-8)),
    ):
        state = OptimizerState(kind, lr=0.01)
        params = [w.copy()]
        for g in gs:
            optim.step(state, params, [g])
        for i in (0, 5, optim.CHUNK - 1, optim.CHUNK, n - 1):
            assert abs(params[0][i] - ref(w[i], [g[i] for g in gs])) < 1e-12
        if kind != "sgd":
            assert np.all(state.v[0] >= 0)


def test_optimizer_validation():
    with pytest.raises(ParameterError):
        OptimizerState("adagrad")
    with pytest.raises(DimensionError):
        optim.step(OptimizerState("sgd"), [np.zeros(2)], [np.zeros(3)])


# -- dropout and batch norm ----------------------------------------------------


def test_dropout_identity_cases():
    x = Prng(5).normal((3, 4))
    for train in (True, False):
        assert layers.dropout_forward(x, 0.0, train, Prng(0))[0] is x
    assert layers.dropout_forward(x, 0.7, False, None)[0] is x
    with pytest.raises(ParameterError):
        Dropout(1.0)


def test_dropout_zero_fraction_binomial_bound():
    rate, n = 0.3, 10_000
    out, _ = layers.dropout_forward(np.ones(n), rate, True, Prng(6))
    zeros = int((out == 0).sum())
    sd = math.sqrt(n * rate * (1 - rate))
    assert abs(zeros - n * rate) < 2.576 * sd


def test_dropout_preserves_expectation():
    x = Prng(7).random((50,)) + 0.5
    p = Prng(8)
    mean = np.mean([layers.dropout_forward(x, 0.5, True, p)[0] for _ in range(400)], axis=0)
    # each element: 400 draws of x * {0, 2}; sd of the mean is x / 20
    assert np.all(np.abs(mean - x) < 4 * x / 20)


def test_batchnorm_train_output_moments():
    x = Prng(9).normal((8, 3, 4, 4)) * 5 + 2
    running = [np.zeros(3), np.ones(3)]
    out, _ = layers.batchnorm_forward(x, np.ones(3), np.zeros(3), running, 0.9, 1e-12, True)
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-9)
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1, atol=1e-9)
    np.testing.assert_allclose(running[0], 0.1 * x.mean(axis=(0, 2, 3)), atol=1e-12)


def test_batchnorm_constant_batch_gives_beta():
    beta = np.array([0.5, -1.0])
    out, _ = layers.batchnorm_forward(np.full((4, 2), 3.0), np.ones(2), beta, [np.zeros(2), np.ones(2)], 0.9, 1e-5, True)
    np.testing.assert_array_equal(out, np.tile(beta, (4, 1)))


def test_batchnorm_single_sample_train():
    with pytest.raises(ParameterError):
        layers.batchnorm_forward(np.zeros((1, 2)), np.ones(2), np.zeros(2), [np.zeros(2), np.ones(2)], 0.9, 1e-5, True)
    with pytest.raises(ParameterError):
        BatchNorm(eps=0.0)


# -- model ---------------------------------------------------------------------


def test_empty_model_is_identity():
    x = Prng(10).normal((2, 3))
    np.testing.assert_array_equal(Model([], (3,)).forward(x), x)


def test_single_dense_affine():
    m = Model([Dense(1)], (1,))
    m.params()[0][...] = 2.0
    m.params()[1][...] = 1.0
    assert m.forward(np.array([[3.0]])).tolist() == [[7.0]]


def test_shape_mismatch_names_layer():
    with pytest.raises(DimensionError, match="layer 1"):
        Model([layers.Flatten(), layers.Conv2D(2, 3)], (1, 4, 4))
    with pytest.raises(DimensionError):
        Model([Dense(2)], (3,)).forward(np.zeros((1, 4)))


def test_concat_merge_must_reference_earlier_tap():
    with pytest.raises(DimensionError):
        Model([layers.ConcatMerge("later"), Dense(2, tap="later")], (3,))


def test_infer_forward_is_pure():
    m = Model([Dense(4, "relu"), Dropout(0.5), BatchNorm(), Dense(2, "softmax")], (3,), seed=1)
    x = Prng(11).normal((5, 3))
    assert m.forward(x).tobytes() == m.forward(x).tobytes()


def test_mode_validation():
    with pytest.raises(ParameterError):
        Model([], (1,)).set_mode("eval")


# -- gradient checks ---------------------------------------------------------


@pytest.mark.parametrize("name", gradcheck.case_names())
def test_gradcheck_case(name):
    errs = [gradcheck.run_case(name, seed) for seed in range(3)]
    assert max(errs) < gradcheck.TOLERANCE


def test_relative_error_zero_floor():
    assert gradcheck.relative_error(np.zeros(3), np.full(3, 1e-12)) < 1e-11
    assert gradcheck.relative_error([1.0], [1.0]) == 0


# -- training ------------------------------------------------------------------


def test_batch_slices_merge_trailing_single():
    assert batch_slices(5, 2) == [slice(0, 2), slice(2, 5)]
    assert batch_slices(4, 2) == [slice(0, 2), slice(2, 4)]
    assert batch_slices(1, 4) == [slice(0, 1)]


def test_zero_learning_rate_freezes_model():
    m = Model([Dense(2, "relu"), Dense(1)], (3,), seed=2)
    before = [p.copy() for p in m.params()]
    x = Prng(12).normal((10, 3))
    y = x.sum(axis=1, keepdims=True)
    hist = fit(m, x, y, "mse", OptimizerState("sgd", lr=0.0), Prng(0), epochs=3, batch_size=4)
    assert hist[0] == hist[1] == hist[2]
    for a, b in zip(before, m.params()):
        np.testing.assert_array_equal(a, b)


def test_sgd_on_linear_data_decreases_monotonically():
    x = np.linspace(-1, 1, 20)[:, None]
    y = 2 * x
    m = Model([Dense(1)], (1,), seed=3)
    m.params()[0][...] = 0.0
    m.params()[1][...] = 0.0
    hist = fit(m, x, y, "mse", OptimizerState("sgd", lr=0.05), Prng(1), epochs=15, batch_size=20)
    assert all(b < a for a, b in zip(hist, hist[1:]))


def test_training_is_deterministic():
    def run():
        m = Model([Dense(4, "relu"), Dropout(0.2), Dense(1)], (2,), seed=4)
        x = Prng(13).normal((16, 2))
        y = x[:, :1] - x[:, 1:]
        train_epoch(m, x, y, "mse", OptimizerState("adam"), Prng(5), batch_size=5)
        return b"".join(p.tobytes() for p in m.params())

    assert run() == run()


def test_evaluate_repeatable_and_errors():
    m = Model([Dense(2, "softmax")], (3,), seed=5)
    x = Prng(14).normal((7, 3))
    y = np.eye(2)[[0, 1, 0, 1, 1, 0, 0]]
    a = evaluate(m, x, y, "categorical_ce", {"n": lambda t, p: len(p)})
    assert a == evaluate(m, x, y, "categorical_ce", {"n": lambda t, p: len(p)})
    assert a[1]["n"] == 7
    with pytest.raises(ParameterError):
        train_epoch(m, x[:0], y[:0], "mse", OptimizerState(), Prng(0))
    with pytest.raises(DimensionError):
        train_epoch(m, x, y[:3], "mse", OptimizerState(), Prng(0))


def test_predict_restores_mode():
    m = Model([Dense(1)], (2,)).set_mode(TRAIN)
    predict(m, np.zeros((3, 2)))
    assert m.mode == TRAIN
