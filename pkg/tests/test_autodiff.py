import numpy as np
import pytest

from autodiff import (
    Adam,
    Linear,
    Module,
    check_gradients,
    concat,
    constant,
    elementwise,
    exp,
    log,
    matmul,
    max_over_axis,
    no_grad,
    parameter,
    reduce,
    reduce_mean,
    reduce_sum,
    softplus,
    square,
    tanh,
)
from utils.errors import AxisError, CheckpointError, GradientCheckError, GraphError, ShapeMismatchError
from verify.oracles import central_difference_gradient


# ─────────────────────────── forward values ───────────────────────────────

def test_add_values():
    out = elementwise("add", constant([1.0, 2.0]), constant([3.0, 4.0]))
    np.testing.assert_array_equal(out.value, [4.0, 6.0])


def test_log_exp_inverse():
    x = constant([0.5, -1.2])
    np.testing.assert_allclose(log(exp(x)).value, [0.5, -1.2], atol=1e-12)


def test_scalar_broadcast_allowed():
    out = constant(2.0) * constant([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(out.value, [[2.0, 4.0], [6.0, 8.0]])


def test_python_scalars_stay_zero_dimensional():
    assert constant(0.5).shape == ()
    assert parameter(3).shape == ()
    x = constant(np.arange(6.0).reshape(2, 3))
    np.testing.assert_array_equal((x * 0.5).value, np.arange(6.0).reshape(2, 3) * 0.5)
    np.testing.assert_array_equal((1.0 - x).value, 1.0 - np.arange(6.0).reshape(2, 3))
    assert (x * 0.5).shape == (2, 3)


def test_scalar_parameter_gradient_sums_over_broadcast():
    s = parameter(2.0)
    x = constant(np.ones((2, 3)))
    reduce_sum(x * s).backward()
    assert s.grad.shape == ()
    assert float(s.grad) == pytest.approx(6.0)


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeMismatchError) as info:
        constant(np.ones((2, 3))) + constant(np.ones((3,)))
    assert info.value.shapes == ((2, 3), (3,))
    assert "(2, 3)" in str(info.value) and "(3,)" in str(info.value)


def test_row_broadcast_is_rejected():
    with pytest.raises(ShapeMismatchError):
        constant(np.ones((4, 3))) * constant(np.ones((1, 3)))


def test_matmul_identity_and_selection():
    m = constant([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(matmul(constant(np.eye(2)), m).value, m.value)
    np.testing.assert_array_equal(matmul(constant([[1.0, 0.0]]), constant([[2.0], [5.0]])).value, [[2.0]])


def test_matmul_inner_dim_mismatch():
    with pytest.raises(ShapeMismatchError):
        matmul(constant(np.ones((2, 3))), constant(np.ones((2, 3))))


def test_reductions():
    assert reduce_sum(constant([1.0, 2.0, 3.0])).item() == 6.0
    np.testing.assert_array_equal(max_over_axis(constant([[1.0, 5.0], [4.0, 2.0]]), axis=0).value, [4.0, 5.0])
    assert reduce("mean", constant([1.0, 2.0, 3.0, 6.0])).item() == 3.0


def test_invalid_axis():
    with pytest.raises(AxisError) as info:
        reduce_sum(constant(np.ones((2, 2))), axis=2)
    assert info.value.axis == 2 and info.value.rank == 2


# ─────────────────────────── gradients ────────────────────────────────────

def test_mul_gradient():
    a, b = parameter(2.0), parameter(3.0)
    (a * b).backward()
    assert a.grad == pytest.approx(3.0)
    assert b.grad == pytest.approx(2.0)


def test_mean_gradient_is_one_over_n():
    x = parameter(np.arange(5.0))
    reduce_mean(x).backward()
    np.testing.assert_allclose(x.grad, np.full(5, 0.2))


def test_loss_gradient_wrt_itself_is_one():
    x = parameter([1.0, 2.0])
    loss = reduce_sum(square(x))
    loss.backward()
    np.testing.assert_array_equal(loss.grad, 1.0)


def test_max_routes_gradient_to_first_index_on_ties():
    x = parameter([[3.0, 1.0], [3.0, 2.0]])
    reduce_sum(max_over_axis(x, axis=0)).backward()
    np.testing.assert_array_equal(x.grad, [[1.0, 0.0], [0.0, 1.0]])


def test_matmul_gradient_against_central_differences():
    rng = np.random.default_rng(0)
    A0, B = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    A = parameter(A0.copy())
    reduce_sum(matmul(A, constant(B))).backward()
    np.testing.assert_allclose(A.grad, np.ones((3, 2)) @ B.T, atol=1e-12)

    fd = central_difference_gradient(lambda a: float(np.sum(a @ B)), A0, h=1e-5)
    np.testing.assert_allclose(A.grad, fd, atol=1e-8)


@pytest.mark.parametrize("seed", range(100))
@pytest.mark.parametrize("op", ["add", "sub", "mul", "neg", "exp", "log", "tanh", "softplus", "square"])
def test_every_elementwise_op_passes_gradient_check(op, seed):
    rng = np.random.default_rng(seed)
    a = parameter(rng.uniform(0.2, 2.0, size=(3, 2)))
    b = parameter(rng.uniform(0.2, 2.0, size=(3, 2)))
    w = constant(rng.normal(size=(3, 2)))

    def f():
        return reduce_sum(elementwise(op, a, b) * w)

    assert check_gradients(f, [a, b]) < 1e-4


@pytest.mark.parametrize("seed", range(20))
def test_structural_ops_pass_gradient_check(seed):
    rng = np.random.default_rng(seed)
    a = parameter(rng.normal(size=(4, 3)))
    b = parameter(rng.normal(size=(3, 2)))
    c = parameter(rng.normal(size=(4, 1)))

    def f():
        h = concat([matmul(a, b), c], axis=1)
        pooled = max_over_axis(tanh(h), axis=0, keepdims=True)
        return reduce_mean(softplus(h)) + reduce_sum(pooled)

    assert check_gradients(f, {"a": a, "b": b, "c": c}) < 1e-4


def test_check_gradients_quadratic():
    x = parameter([1.0, -2.0, 3.0])
    assert check_gradients(lambda: reduce_sum(square(x)), [x]) < 1e-6


def test_check_gradients_constant_function():
    x = parameter([1.0, 2.0])
    assert check_gradients(lambda: reduce_sum(constant([1.0, 1.0])) + reduce_sum(x) * 0.0, [x]) == 0.0


def test_check_gradients_rejects_non_finite():
    x = parameter([-1.0])
    with pytest.raises(GradientCheckError):
        check_gradients(lambda: reduce_sum(log(x)), [x])


# ─────────────────────────── graph discipline ─────────────────────────────

def test_second_backward_on_same_graph_raises():
    x = parameter([1.0, 2.0])
    loss = reduce_sum(square(x) * 2.0)
    loss.backward()
    x.grad = None
    with pytest.raises(GraphError):
        loss.backward()


def test_stale_leaf_gradient_raises_unless_accumulating():
    x = parameter([1.0, 2.0])
    reduce_sum(x).backward()
    with pytest.raises(GraphError):
        reduce_sum(x * 3.0).backward()
    reduce_sum(x * 3.0).backward(accumulate=True)
    np.testing.assert_allclose(x.grad, [4.0, 4.0])


def test_no_grad_builds_no_graph():
    x = parameter([1.0])
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad and y.is_leaf


def test_ops_are_deterministic():
    rng = np.random.default_rng(3)
    v = rng.normal(size=(5, 3))
    first = softplus(matmul(constant(v), constant(v.T))).value
    second = softplus(matmul(constant(v), constant(v.T))).value
    assert np.array_equal(first, second)


# ─────────────────────────── modules & optimizer ──────────────────────────

class _TwoLayer(Module):
    def __init__(self, rng):
        self.first = Linear(3, 4, rng)
        self.heads = [Linear(4, 2, rng), Linear(4, 1, rng, zero_init=True)]


def test_named_parameters_are_stable():
    names = [n for n, _ in _TwoLayer(np.random.default_rng(0)).named_parameters()]
    assert names == [
        "first.weight", "first.bias",
        "heads.0.weight", "heads.0.bias",
        "heads.1.weight", "heads.1.bias",
    ]


def test_load_state_dict_checks_names_and_shapes():
    model = _TwoLayer(np.random.default_rng(0))
    state = model.state_dict()
    other = _TwoLayer(np.random.default_rng(1))
    other.load_state_dict(state)
    for name, value in other.state_dict().items():
        assert np.array_equal(value, state[name])

    with pytest.raises(CheckpointError):
        other.load_state_dict({k: v for k, v in state.items() if k != "first.bias"})
    bad = dict(state)
    bad["first.bias"] = np.zeros((1, 5))
    with pytest.raises(CheckpointError):
        other.load_state_dict(bad)


def test_adam_minimizes_quadratic():
    x = parameter([3.0, -2.0], name="x")
    opt = Adam([("x", x)], lr=0.1)
    for _ in range(500):
        opt.zero_grad()
        reduce_sum(square(x)).backward()
        opt.step()
    np.testing.assert_allclose(x.value, [0.0, 0.0], atol=5e-2)


def test_adam_state_round_trip():
    x = parameter([1.0, 2.0], name="x")
    opt = Adam([("x", x)], lr=0.01)
    reduce_sum(square(x)).backward()
    opt.step()
    state = opt.state_dict()

    clone = Adam([("x", parameter(x.value.copy()))], lr=0.01)
    clone.load_state_dict(state)
    assert clone.t == 1
    np.testing.assert_array_equal(clone.m["x"], opt.m["x"])
    with pytest.raises(CheckpointError):
        clone.load_state_dict({"adam.t": np.array([1.0])})
