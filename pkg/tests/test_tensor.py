import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphparse import tensor as T
from graphparse.tensor import Tensor, Tape, ShapeError, TapeError

from oracles import finite_difference, rel_err


def test_matmul_identity():
    eye = Tensor(np.eye(2))
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    out = T.matmul(eye, m)
    assert np.array_equal(out.data, m.data)


def test_matmul_hand_product():
    out = T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    assert out.data.shape == (1, 1)
    assert out.data[0, 0] == 11.0


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError) as exc:
        T.matmul(Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 2))))
    assert "(3, 4)" in str(exc.value) and "(3, 2)" in str(exc.value)


def test_matmul_grad_of_sum_is_ones_times_bt():
    rng = np.random.default_rng(0)
    a = np.ascontiguousarray(rng.normal(size=(3, 4)))
    b = np.ascontiguousarray(rng.normal(size=(4, 2)))
    tape = Tape()
    ta, tb = tape.watch(Tensor(a)), tape.watch(Tensor(b))
    loss = T.reduce_sum(T.matmul(ta, tb))
    tape.backward(loss)
    assert np.allclose(tape.grad(ta), np.ones((3, 2)) @ b.T)
    fd = finite_difference(lambda: float((a @ b).sum()), [a, b])
    assert rel_err(tape.grad(ta), fd[0]) < 1e-4
    assert rel_err(tape.grad(tb), fd[1]) < 1e-4


def test_sigmoid_tanh_at_zero():
    assert T.sigmoid(Tensor(0.0)).item() == 0.5
    assert T.tanh(Tensor(0.0)).item() == 0.0


def test_sigmoid_gradient_at_one():
    tape = Tape()
    x = tape.watch(Tensor(1.0))
    tape.backward(T.sigmoid(x))
    assert abs(float(tape.grad(x)) - 0.19661193324148185) < 1e-12


def test_elementwise_shape_mismatch():
    for op in (T.add, T.sub, T.mul):
        with pytest.raises(ShapeError):
            op(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))


def test_softmax_uniform_on_constant_input():
    out = T.softmax(Tensor([0.0, 0.0, 0.0]), axis=0)
    assert np.allclose(out.data, [1 / 3, 1 / 3, 1 / 3], atol=1e-15)


def test_concat_basic_and_axis_error():
    out = T.concat([Tensor([1.0, 2.0]), Tensor([3.0])], axis=0)
    assert np.array_equal(out.data, [1.0, 2.0, 3.0])
    with pytest.raises(ShapeError):
        T.concat([Tensor([1.0]), Tensor([2.0])], axis=1)


def test_l1_identity_is_zero():
    a = Tensor(np.random.default_rng(1).normal(size=(3, 3)))
    assert T.l1(a, Tensor(a.data.copy())).item() == 0.0


def test_backward_sum_gives_ones():
    tape = Tape()
    w = tape.watch(Tensor(np.random.default_rng(2).normal(size=(2, 3))))
    tape.backward(T.reduce_sum(w))
    assert np.array_equal(tape.grad(w), np.ones((2, 3)))


def test_backward_accumulates_over_reuse():
    tape = Tape()
    w = tape.watch(Tensor(3.0))
    tape.backward(T.add(w, w))
    assert float(tape.grad(w)) == 2.0


def test_backward_toy_sigmoid_matches_finite_differences():
    rng = np.random.default_rng(3)
    w = np.ascontiguousarray(rng.normal(size=(1, 4)))
    x = np.ascontiguousarray(rng.normal(size=(4, 1)))
    tape = Tape()
    tw = tape.watch(Tensor(w))
    loss = T.reduce_sum(T.sigmoid(T.matmul(tw, Tensor(x))))
    tape.backward(loss)
    fd = finite_difference(
        lambda: float(1.0 / (1.0 + np.exp(-(w @ x)[0, 0]))), [w])
    assert rel_err(tape.grad(tw), fd[0]) < 1e-6


def test_backward_errors():
    tape = Tape()
    w = tape.watch(Tensor([1.0, 2.0]))
    with pytest.raises(ShapeError):
        tape.backward(T.add(w, w))  # non-scalar loss
    loose = Tensor(1.0)
    with pytest.raises(TapeError):
        tape.backward(loose)  # not on tape
    loss = T.reduce_sum(w)
    tape.backward(loss)
    with pytest.raises(TapeError):
        tape.backward(loss)  # second backward without re-recording
    tape.clear()
    with pytest.raises(TapeError):
        tape.backward(loss)


def test_mixing_tapes_is_an_error():
    t1, t2 = Tape(), Tape()
    a = t1.watch(Tensor(1.0))
    b = t2.watch(Tensor(2.0))
    with pytest.raises(TapeError):
        T.add(a, b)


def test_forward_identical_with_and_without_tape():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(3, 5))
    w = rng.normal(size=(5, 2))

    def run(tape):
        tx = Tensor(x, tape=tape) if tape else Tensor(x)
        tw = Tensor(w, tape=tape) if tape else Tensor(w)
        return T.softmax(T.tanh(T.matmul(tx, tw)), axis=1).data

    plain = run(None)
    taped = run(Tape())
    assert np.array_equal(plain, taped)


@pytest.mark.parametrize("seed", range(20))
def test_every_primitive_matches_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    a = np.ascontiguousarray(rng.normal(size=(3, 4)))
    b = np.ascontiguousarray(rng.normal(size=(3, 4)))
    m2 = np.ascontiguousarray(rng.normal(size=(4, 2)))
    bias = np.ascontiguousarray(rng.normal(size=4))
    grid = np.ascontiguousarray(rng.normal(size=(3, 3, 2)))
    cellw = np.ascontiguousarray(rng.uniform(0.1, 0.9, size=(3, 3)))

    cases = [
        ("add", [a, b], lambda xs: T.add(xs[0], xs[1]),
         lambda: a + b),
        ("sub", [a, b], lambda xs: T.sub(xs[0], xs[1]),
         lambda: a - b),
        ("mul", [a, b], lambda xs: T.mul(xs[0], xs[1]),
         lambda: a * b),
        ("scale", [a], lambda xs: T.scale(xs[0], 2.5),
         lambda: a * 2.5),
        ("matmul", [a, m2], lambda xs: T.matmul(xs[0], xs[1]),
         lambda: a @ m2),
        ("add_bias", [a, bias], lambda xs: T.add_bias(xs[0], xs[1]),
         lambda: a + bias),
        ("sigmoid", [a], lambda xs: T.sigmoid(xs[0]),
         lambda: 1 / (1 + np.exp(-a))),
        ("tanh", [a], lambda xs: T.tanh(xs[0]),
         lambda: np.tanh(a)),
        ("relu", [a], lambda xs: T.relu(xs[0]),
         lambda: np.maximum(a, 0)),
        ("log", [np.abs(a) + 0.5], None, None),
        ("softmax", [a], lambda xs: T.softmax(xs[0], axis=1),
         lambda: np.exp(a) / np.exp(a).sum(axis=1, keepdims=True)),
        ("reduce_sum0", [a], lambda xs: T.reduce_sum(xs[0], axis=0),
         lambda: a.sum(axis=0)),
        ("l1", [a, b], lambda xs: T.l1(xs[0], xs[1]),
         lambda: np.mean(np.abs(a - b))),
        ("concat", [a, b], lambda xs: T.concat([xs[0], xs[1]], axis=1),
         lambda: np.concatenate([a, b], axis=1)),
        ("reshape", [a], lambda xs: T.reshape(xs[0], (2, 6)),
         lambda: a.reshape(2, 6)),
        ("transpose2d", [a], lambda xs: T.transpose2d(xs[0]),
         lambda: a.T),
        ("swap01", [grid], lambda xs: T.swap01(xs[0]),
         lambda: np.swapaxes(grid, 0, 1)),
        ("replicate_rows", [a], lambda xs: T.replicate_rows(xs[0], 3),
         lambda: np.broadcast_to(a, (3, 3, 4))),
        ("scale_cells", [grid, cellw], lambda xs: T.scale_cells(xs[0], xs[1]),
         lambda: grid * cellw[:, :, None]),
        ("take_rows", [a], lambda xs: T.take_rows(xs[0], [0, 2, 0]),
         lambda: a[[0, 2, 0]]),
    ]
    for name, arrays, build, ref in cases:
        if name == "log":
            pos = arrays[0]
            build = lambda xs: T.log(xs[0])
            ref = lambda: np.log(pos)
        tape = Tape()
        tensors = [tape.watch(Tensor(arr)) for arr in arrays]
        out = build(tensors)
        assert np.allclose(out.data, ref(), atol=1e-12), name
        # random downstream weighting makes the scalar sensitive everywhere
        wvec = rng.normal(size=out.data.shape)
        loss = T.reduce_sum(T.mul(out, Tensor(wvec)))
        tape.backward(loss)
        grads = [tape.grad(t) for t in tensors]
        for g, t in zip(grads, tensors):
            assert g.shape == t.data.shape, name
        fd = finite_difference(lambda: float((ref() * wvec).sum()), arrays)
        for g, f in zip(grads, fd):
            assert rel_err(g, f) < 1e-4, name


@given(st.lists(st.floats(min_value=-50, max_value=50), min_size=2, max_size=8))
@settings(max_examples=60, deadline=None)
def test_softmax_is_a_distribution(values):
    out = T.softmax(Tensor(values), axis=0)
    assert np.all(out.data >= 0)
    assert abs(out.data.sum() - 1.0) <= 1e-12


@given(st.integers(min_value=1, max_value=5), st.integers(min_value=1, max_value=5),
       st.integers(min_value=0, max_value=2 ** 32 - 1))
@settings(max_examples=40, deadline=None)
def test_l1_nonnegative_and_symmetric(n, m, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(n, m)), rng.normal(size=(n, m))
    ab = T.l1(Tensor(a), Tensor(b)).item()
    ba = T.l1(Tensor(b), Tensor(a)).item()
    assert ab >= 0.0
    assert ab == ba


@given(st.integers(min_value=0, max_value=2 ** 32 - 1))
@settings(max_examples=25, deadline=None)
def test_grad_shapes_match_tensor_shapes(seed):
    rng = np.random.default_rng(seed)
    shapes = [(2, 3), (3, 4), (4,)]
    tape = Tape()
    x = tape.watch(Tensor(rng.normal(size=shapes[0])))
    w = tape.watch(Tensor(rng.normal(size=shapes[1])))
    b = tape.watch(Tensor(rng.normal(size=shapes[2])))
    loss = T.reduce_sum(T.tanh(T.add_bias(T.matmul(x, w), b)))
    tape.backward(loss)
    for t in (x, w, b):
        assert tape.grad(t).shape == t.data.shape


def test_log_domain_error():
    with pytest.raises(ValueError):
        T.log(Tensor([1.0, 0.0]))
