import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neuralscene.numerics import (ConfigurationError, LstmSpec, MlpSpec, NonFiniteError,
                                  OptimizerState, Tensor, backward, grad_check, lstm_cell,
                                  lstm_init, mlp_forward, mlp_init, optimizer_step, square)
from neuralscene.numerics.tensor import concat, getitem, layer_norm, minimum, stack

from reference import reference_lstm, reference_mlp


# -- MLP ------------------------------------------------------------------------

def test_mlp_spec_param_count():
    spec = MlpSpec(3, (4, 5), 2)
    assert spec.param_count == 3 * 4 + 4 + 4 * 5 + 5 + 5 * 2 + 2
    with pytest.raises(ConfigurationError):
        MlpSpec(3, (0,), 2)


def test_mlp_zero_params_gives_zero():
    spec = MlpSpec(3, (8, 8), 4)
    x = np.random.default_rng(0).normal(size=(5, 3))
    out = mlp_forward(np.zeros(spec.param_count, dtype=np.float32), spec, x)
    assert np.array_equal(out.data, np.zeros((5, 4), dtype=np.float32))


def test_mlp_identity_layer():
    spec = MlpSpec(3, (), 3)
    flat = np.concatenate([np.eye(3).ravel(), np.zeros(3)]).astype(np.float32)
    out = mlp_forward(flat, spec, np.array([[1.0, 2.0, 3.0]]))
    np.testing.assert_array_equal(out.data, [[1.0, 2.0, 3.0]])


def test_mlp_matches_reference():
    rng = np.random.default_rng(1)
    spec = MlpSpec(4, (7,), 3)
    flat = mlp_init(spec, rng, np.float64)
    flat[spec.slices()[0][1]] = rng.normal(size=7)
    x = rng.normal(size=(6, 4))
    out = mlp_forward(Tensor(flat), spec, Tensor(x))
    ref = reference_mlp(flat, spec, x)
    np.testing.assert_allclose(out.data, ref, rtol=1e-6, atol=1e-12)


def test_mlp_batched_params_match_per_row():
    rng = np.random.default_rng(2)
    spec = MlpSpec(3, (6, 6), 2)
    params = np.stack([mlp_init(spec, rng, np.float64) for _ in range(3)])
    x = rng.normal(size=(3, 5, 3))
    out = mlp_forward(Tensor(params), spec, Tensor(x)).data
    for b in range(3):
        np.testing.assert_allclose(out[b], reference_mlp(params[b], spec, x[b]), rtol=1e-10)


def test_mlp_shape_errors():
    spec = MlpSpec(3, (4,), 2)
    with pytest.raises(ConfigurationError):
        mlp_forward(np.zeros(spec.param_count + 1), spec, np.zeros((2, 3)))
    with pytest.raises(ConfigurationError):
        mlp_forward(np.zeros(spec.param_count), spec, np.zeros((2, 4)))


# -- LSTM -----------------------------------------------------------------------

def _zero_lstm(n, H, head_b=0.0):
    spec = LstmSpec(n, H)
    p = lstm_init(spec, np.random.default_rng(0))
    for t in p.tensors().values():
        t.data[...] = 0.0
    p.head_b.data[...] = head_b
    return p


def test_lstm_zero_params():
    p = _zero_lstm(5, 4, head_b=0.3)
    v = np.random.default_rng(0).normal(size=(3, 5))
    out, h, c = lstm_cell(v, np.zeros((3, 4)), np.zeros((3, 4)), p)
    assert np.all(h.data == 0) and np.all(c.data == 0)
    np.testing.assert_allclose(out.data, 0.3)


def test_lstm_deterministic():
    p = lstm_init(LstmSpec(5, 4), np.random.default_rng(3))
    rng = np.random.default_rng(4)
    v, h, c = rng.normal(size=(3, 5)), rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    a = lstm_cell(v, h, c, p)
    b = lstm_cell(v, h, c, p)
    for x, y in zip(a, b):
        assert x.data.tobytes() == y.data.tobytes()


def test_lstm_matches_scalar_reference():
    rng = np.random.default_rng(5)
    p = lstm_init(LstmSpec(3, 4), rng, np.float64)
    for t in p.tensors().values():
        t.data[...] = rng.normal(size=t.shape)
    v, h, c = rng.normal(size=(2, 3)), rng.normal(size=(2, 4)), rng.normal(size=(2, 4))
    out, hn, cn = lstm_cell(v, h, c, p)
    ro, rh, rc = reference_lstm(v, h, c, {k: t.data for k, t in p.tensors().items()})
    np.testing.assert_allclose(out.data, ro, rtol=1e-6)
    np.testing.assert_allclose(hn.data, rh, rtol=1e-6)
    np.testing.assert_allclose(cn.data, rc, rtol=1e-6)


# -- backward ---------------------------------------------------------------------

def test_backward_sum_is_ones():
    x = Tensor(np.random.default_rng(0).normal(size=(3, 4)), requires_grad=True)
    backward(x.sum())
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_backward_stationary_point():
    W = Tensor(np.zeros((2, 3)), requires_grad=True)
    x = np.array([[1.0], [2.0], [3.0]])
    backward(square(W @ x).sum())
    np.testing.assert_array_equal(W.grad, np.zeros((2, 3)))


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        backward(x * 2.0)


def test_gradient_accumulation_is_additive():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=5), requires_grad=True)
    backward(square(x).sum())
    backward((x * 3.0).sum())
    acc = x.grad.copy()
    x.grad = None
    backward(square(x).sum() + (x * 3.0).sum())
    np.testing.assert_allclose(acc, x.grad, rtol=1e-12)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_forward_raises():
    x = Tensor(np.array([1.0, 0.0]))
    with pytest.raises(NonFiniteError) as exc:
        Tensor(np.ones(2)) / x
    assert exc.value.op == "div"


def test_no_graph_for_constants():
    out = Tensor(np.ones(2)) * 2.0
    assert not out.requires_grad


def test_float64_mode_preserved():
    x = Tensor(np.ones((2, 2), dtype=np.float64), requires_grad=True)
    y = (x * 0.5 + 1.0).sum()
    assert y.dtype == np.float64
    backward(y)
    assert x.grad.dtype == np.float64


# -- optimizer ----------------------------------------------------------------------

def test_adam_zero_gradient_is_noop():
    p = Tensor(np.random.default_rng(0).normal(size=4).astype(np.float32), requires_grad=True)
    before = p.data.tobytes()
    p.grad = np.zeros(4, dtype=np.float32)
    state = OptimizerState(lr=0.1)
    for _ in range(10):
        optimizer_step(state, {"p": p})
    assert p.data.tobytes() == before


def test_adam_constant_gradient_moves_monotonically():
    p = Tensor(np.zeros(2), requires_grad=True)
    state = OptimizerState(lr=0.01)
    prev = p.data.copy()
    for _ in range(50):
        p.grad = np.array([1.0, -2.0])
        optimizer_step(state, {"p": p})
        assert p.data[0] < prev[0] and p.data[1] > prev[1]
        prev = p.data.copy()
    assert state.step == 50


def test_adam_quadratic_bowl():
    target = np.array([0.7, -1.3, 2.0])
    p = Tensor(np.zeros(3), requires_grad=True)
    state = OptimizerState(lr=1e-2)
    for _ in range(1000):
        p.grad = None
        backward(square(p - target).sum())
        optimizer_step(state, {"p": p})
    assert np.abs(p.data - target).max() < 1e-4


def test_adam_rejects_nan_gradient():
    p = Tensor(np.zeros(2), requires_grad=True)
    p.grad = np.array([np.nan, 0.0])
    with pytest.raises(NonFiniteError, match="p"):
        optimizer_step(OptimizerState(), {"p": p})


def test_adam_skips_frozen():
    p = Tensor(np.ones(2), requires_grad=True)
    p.grad = np.ones(2)
    optimizer_step(OptimizerState(lr=0.1), {"p": p}, frozen={"p"})
    np.testing.assert_array_equal(p.data, np.ones(2))


# -- gradient checks ----------------------------------------------------------------

def test_grad_check_square():
    x = Tensor(np.array(3.0), requires_grad=True)
    err = grad_check(lambda: square(x), x, eps=1e-5)
    assert err < 1e-9


def test_grad_check_mlp_l2():
    rng = np.random.default_rng(7)
    spec = MlpSpec(3, (8, 8), 2)
    params = Tensor(mlp_init(spec, rng, np.float64), requires_grad=True)
    x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    target = rng.normal(size=(4, 2))
    err = grad_check(lambda: square(mlp_forward(params, spec, x) - target).mean(), [params, x])
    assert err < 1e-6


def test_grad_check_lstm_unrolled():
    rng = np.random.default_rng(8)
    p = lstm_init(LstmSpec(3, 4, 0.1), rng, np.float64)
    p.head_w.data[...] = rng.normal(size=p.head_w.shape)
    v = Tensor(rng.normal(size=(2, 3)), requires_grad=True)

    def f():
        h = Tensor(np.zeros((2, 4)))
        c = Tensor(np.zeros((2, 4)))
        total = Tensor(np.zeros(()))
        for _ in range(5):
            out, h, c = lstm_cell(v, h, c, p)
            total = total + square(out).sum()
        return total

    assert grad_check(f, [v, *p.tensors().values()]) < 1e-6


def test_grad_check_shape_ops():
    rng = np.random.default_rng(9)
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(3, 4)), requires_grad=True)

    def f():
        s = stack([a, b], axis=-1)
        c = concat([a, getitem(b, (slice(None), slice(1, 3)))], axis=1)
        return (square(s).sum() + (layer_norm(c) * c).sum()
                + square(minimum(a, 0.0)).sum() + (a / (square(b) + 1.0)).sum())

    assert grad_check(f, [a, b]) < 1e-6


def test_advanced_index_gradient_accumulates_duplicates():
    x = Tensor(np.arange(4.0), requires_grad=True)
    backward(getitem(x, np.array([1, 1, 3])).sum())
    np.testing.assert_array_equal(x.grad, [0.0, 2.0, 0.0, 1.0])


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), rows=st.integers(1, 5),
       dims=st.lists(st.integers(1, 6), min_size=1, max_size=3))
def test_property_mlp_gradients(seed, rows, dims):
    rng = np.random.default_rng(seed)
    spec = MlpSpec(dims[0], tuple(dims[1:-1]), dims[-1], activation="tanh")
    params = Tensor(mlp_init(spec, rng, np.float64), requires_grad=True)
    x = Tensor(rng.normal(size=(rows, dims[0])), requires_grad=True)
    target = rng.normal(size=(rows, dims[-1]))
    assert grad_check(lambda: square(mlp_forward(params, spec, x) - target).sum(), [params, x]) < 1e-6


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000), batch=st.integers(1, 3))
def test_property_forward_deterministic(seed, batch):
    rng = np.random.default_rng(seed)
    spec = MlpSpec(3, (5,), 2)
    flat = mlp_init(spec, rng)
    x = rng.normal(size=(batch, 3)).astype(np.float32)
    assert mlp_forward(flat, spec, x).data.tobytes() == mlp_forward(flat, spec, x).data.tobytes()
