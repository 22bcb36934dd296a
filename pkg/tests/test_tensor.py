import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from svos import tensor as T
from svos.tensor import (GradTape, ShapeError, TapeError, Tensor, backward,
                         clamp, concat_channels, elementwise, finite_diff_grad,
                         split_channels, tmean, tsum)

SIGMOID_1 = 0.7310585786300049  # 1 / (1 + e^-1)


def test_sigmoid_examples():
    assert T.sigmoid(Tensor([0.0])).data[0] == 0.5
    out = T.sigmoid(Tensor([1.0], dtype=np.float64))
    assert out.data[0] == pytest.approx(SIGMOID_1, abs=1e-7)


def test_relu_examples():
    out = T.relu(Tensor([-3.0, 3.0]))
    assert out.data.tolist() == [0.0, 3.0]


def test_product_rule_backward():
    with GradTape():
        w = Tensor([2.0], requires_grad=True)
        x = Tensor([3.0], requires_grad=True)
        backward(tsum(T.mul(w, x)))
    assert w.grad.tolist() == [3.0]
    assert x.grad.tolist() == [2.0]


def test_sigmoid_backward_at_zero():
    with GradTape():
        w = Tensor([0.0], requires_grad=True, dtype=np.float64)
        backward(T.sigmoid(w))
    assert w.grad[0] == pytest.approx(0.25, abs=1e-12)


def test_double_backward_requires_reset():
    tape = GradTape()
    with tape:
        w = Tensor([1.0], requires_grad=True)
        loss = T.mul(w, w)
        backward(loss)
        with pytest.raises(TapeError):
            backward(loss)
    tape.reset()
    with tape:
        loss2 = T.mul(w, w)
        backward(loss2)  # fine after reset


def test_backward_errors():
    with GradTape():
        w = Tensor([1.0, 2.0], requires_grad=True)
        out = T.mul(w, w)
        with pytest.raises(ShapeError):
            backward(out)  # not scalar
    off_tape = Tensor([1.0], requires_grad=True)
    with GradTape():
        with pytest.raises(TapeError):
            backward(off_tape)
    with pytest.raises(TapeError):
        backward(tsum(T.mul(off_tape, off_tape)))  # no active tape


def test_reused_tensor_accumulates_once_per_consumer():
    with GradTape():
        w = Tensor([1.0, -2.0], requires_grad=True)
        a = Tensor([3.0, 4.0])
        b = Tensor([5.0, 6.0])
        backward(tsum(T.add(T.mul(w, a), T.mul(w, b))))
    assert w.grad.tolist() == [8.0, 10.0]


def test_shape_and_dtype_mismatch():
    a = Tensor(np.zeros((2, 3), dtype=np.float32))
    b = Tensor(np.zeros((3, 2), dtype=np.float32))
    with pytest.raises(ShapeError):
        T.add(a, b)
    c = Tensor(np.zeros((2, 3)), dtype=np.float64)
    with pytest.raises(ShapeError):
        T.mul(a, c)


def test_scalar_broadcast_only():
    a = Tensor([1.0, 2.0], requires_grad=True)
    assert T.add(a, 1.0).data.tolist() == [2.0, 3.0]
    assert T.mul(a, 2.0).data.tolist() == [2.0, 4.0]
    assert T.sub(a, 0.5).data.tolist() == [0.5, 1.5]


def test_log_requires_positive():
    with pytest.raises(ValueError):
        T.log(Tensor([1.0, 0.0]))
    with pytest.raises(ValueError):
        T.log(Tensor([-1.0]))


def test_elementwise_dispatcher():
    a = Tensor([1.0])
    b = Tensor([2.0])
    assert elementwise("add", a, b).data[0] == 3.0
    assert elementwise("sigmoid", Tensor([0.0])).data[0] == 0.5
    with pytest.raises(ValueError):
        elementwise("add", a)
    with pytest.raises(ValueError):
        elementwise("relu", a, b)
    with pytest.raises(ValueError):
        elementwise("pow", a, b)


def test_concat_split_roundtrip(rng):
    a = Tensor(rng.random((2, 3, 4)))
    b = Tensor(rng.random((5, 3, 4)))
    cat = concat_channels(a, b)
    assert cat.shape == (7, 3, 4)
    back_a, back_b = split_channels(cat, [2, 5])
    np.testing.assert_array_equal(back_a.data, a.data)
    np.testing.assert_array_equal(back_b.data, b.data)
    with pytest.raises(ShapeError):
        split_channels(cat, [3, 3])


def test_clamp_values_and_gradient_gate():
    with GradTape():
        x = Tensor([-2.0, 0.0, 2.0], requires_grad=True, dtype=np.float64)
        out = clamp(x, -1.0, 1.0)
        backward(tsum(out))
    assert out.data.tolist() == [-1.0, 0.0, 1.0]
    assert x.grad.tolist() == [0.0, 1.0, 0.0]


def test_mean_matches_numpy(rng):
    x = rng.random((3, 4))
    assert tmean(Tensor(x)).item() == pytest.approx(x.astype(np.float32).mean())


def test_finite_diff_examples():
    g = finite_diff_grad(lambda t: tsum(T.mul(t, t)), Tensor([3.0], dtype=np.float64), 1e-3)
    assert g.data[0] == pytest.approx(6.0, abs=1e-5)
    g = finite_diff_grad(lambda t: Tensor([7.0]), Tensor([1.0, 2.0], dtype=np.float64), 1e-3)
    assert g.data.tolist() == [0.0, 0.0]
    g = finite_diff_grad(lambda t: T.sigmoid(t), Tensor([0.0], dtype=np.float64), 1e-4)
    assert g.data[0] == pytest.approx(0.25, abs=1e-6)
    with pytest.raises(ValueError):
        finite_diff_grad(lambda t: t, Tensor([0.0]), 0.0)


@given(seed=st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_elementwise_purity(seed):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.uniform(-1, 1, size=(4, 5)).astype(np.float32))
    b = Tensor(rng.uniform(-1, 1, size=(4, 5)).astype(np.float32))
    for op in ("add", "sub", "mul"):
        first = elementwise(op, a, b).data
        second = elementwise(op, a, b).data
        assert (first == second).all()
    for op in ("sigmoid", "relu"):
        assert (elementwise(op, a).data == elementwise(op, a).data).all()


def test_no_nan_inf_from_saturating_ops():
    extreme = Tensor(np.array([-1e4, -88.0, 0.0, 88.0, 1e4], dtype=np.float32))
    assert np.isfinite(T.sigmoid(extreme).data).all()
    assert np.isfinite(T.relu(extreme).data).all()
    assert np.isfinite(clamp(extreme, -1.0, 1.0).data).all()
    tiny = Tensor(np.array([1e-38, 1.0, 3e38], dtype=np.float32))
    assert np.isfinite(T.log(tiny).data).all()


@given(seed=st.integers(0, 10_000),
       op=st.sampled_from(["add", "sub", "mul", "sigmoid", "relu", "log"]))
@settings(max_examples=40, deadline=None)
def test_elementwise_gradients_match_finite_differences(seed, op):
    rng = np.random.default_rng(seed)
    lo, hi = (0.1, 1.0) if op == "log" else (-1.0, 1.0)
    x = rng.uniform(lo, hi, size=(3, 4))
    if op == "relu":
        # keep clear of the kink so the central difference is well defined
        x = np.where(np.abs(x) < 1e-3, 0.5, x)
    other = Tensor(rng.uniform(-1, 1, size=(3, 4)), dtype=np.float64)
    proj = Tensor(rng.uniform(-1, 1, size=(3, 4)), dtype=np.float64)

    def f(t):
        out = elementwise(op, t, other) if op in ("add", "sub", "mul") else elementwise(op, t)
        return tsum(T.mul(out, proj))

    xt = Tensor(x, requires_grad=True, dtype=np.float64)
    with GradTape():
        backward(f(xt))
    numeric = finite_diff_grad(f, Tensor(x, dtype=np.float64), 1e-4)
    rel = np.abs(xt.grad - numeric.data) / np.maximum(1.0, np.abs(numeric.data))
    assert rel.max() < 1e-6
