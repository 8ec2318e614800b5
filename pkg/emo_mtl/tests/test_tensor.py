import math

import numpy as np
import pytest

from ..errors import DimensionError, LabelError, ParameterError
from ..tensor import (
    Tensor,
    cross_entropy,
    dropout,
    embedding_gather,
    gelu,
    grad_check,
    layernorm,
    softmax,
)

SEEDS = range(20)


def param(array):
    return Tensor(np.asarray(array, dtype=np.float32), requires_grad=True)


def test_matmul_identity():
    b = Tensor([[1.0, 2.0], [3.0, 4.0]])
    out = Tensor(np.eye(2)) @ b
    np.testing.assert_array_equal(out.data, [[1.0, 2.0], [3.0, 4.0]])


def test_matmul_row_by_column():
    out = Tensor([[1.0, 2.0]]) @ Tensor([[3.0], [4.0]])
    np.testing.assert_array_equal(out.data, [[11.0]])


def test_matmul_shape_mismatch_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\[2, 3\] and \[2, 2\]"):
        Tensor(np.zeros((2, 3))) @ Tensor(np.zeros((2, 2)))


@pytest.mark.parametrize("seed", SEEDS)
def test_matmul_gradient(seed):
    rng = np.random.default_rng(seed)
    a = param(rng.normal(size=(2, 3)))
    b = param(rng.normal(size=(3, 4)))
    assert grad_check(lambda: (a @ b).sum(), [a, b], h=1e-3) < 1e-3


def test_matmul_backward_matches_transposes():
    a = param([[1.0, 2.0], [3.0, 4.0]])
    b = param([[5.0, 6.0], [7.0, 8.0]])
    (a @ b).sum().backward()
    np.testing.assert_allclose(a.grad, np.ones((2, 2)) @ b.data.T)
    np.testing.assert_allclose(b.grad, a.data.T @ np.ones((2, 2)))


@pytest.mark.parametrize(
    "logits, expected",
    [
        ([0.0, 0.0], [0.5, 0.5]),
        ([0.0, math.log(3.0)], [0.25, 0.75]),
        ([1000.0, 1000.0], [0.5, 0.5]),
    ],
)
def test_softmax_values(logits, expected):
    out = softmax(Tensor([logits]))
    np.testing.assert_allclose(out.data[0], expected, atol=1e-6)


def test_softmax_rows_are_distributions_for_large_logits(rng):
    logits = rng.uniform(-1e4, 1e4, size=(50, 7))
    probs = softmax(Tensor(logits)).data
    assert np.all(np.isfinite(probs))
    assert np.all(probs >= 0)
    np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-6)


@pytest.mark.parametrize("seed", SEEDS)
def test_softmax_gradient(seed):
    # Two classes keep every coordinate of the gradient away from zero.
    rng = np.random.default_rng(seed)
    x = param(rng.uniform(-1, 1, size=(3, 2)))
    weights = Tensor([[0.0, 1.0]])
    assert grad_check(lambda: (softmax(x) * weights).sum(), [x], h=1e-4) < 1e-3


@pytest.mark.parametrize(
    "probabilities, label, expected",
    [
        ([1.0, 0.0], 0, 0.0),
        ([0.5, 0.5], 1, math.log(2.0)),
        ([0.0, 1.0], 0, -math.log(1e-12)),
    ],
)
def test_cross_entropy_values(probabilities, label, expected):
    loss = cross_entropy(Tensor([probabilities]), [label])
    assert loss.item() == pytest.approx(expected, abs=1e-5)


@pytest.mark.parametrize("seed", SEEDS)
def test_cross_entropy_gradient_through_softmax(seed):
    rng = np.random.default_rng(seed)
    logits = param(rng.normal(size=(4, 3)))
    labels = rng.integers(0, 3, size=4)
    error = grad_check(lambda: cross_entropy(softmax(logits), labels), [logits], h=1e-3)
    assert error < 1e-3


def test_cross_entropy_gradient_at_uniform_logits():
    logits = param(np.zeros((2, 4)))
    labels = np.array([1, 3])
    assert grad_check(lambda: cross_entropy(softmax(logits), labels), [logits]) < 1e-4


def test_cross_entropy_fused_gradient_is_p_minus_onehot():
    logits = param([[1.0, 2.0, 0.5], [0.0, 0.0, 0.0]])
    probs = softmax(logits)
    expected = probs.data.copy()
    expected[[0, 1], [2, 0]] -= 1.0
    cross_entropy(probs, [2, 0]).backward()
    np.testing.assert_allclose(logits.grad, expected / 2, atol=1e-7)


def test_cross_entropy_label_out_of_range_names_index():
    with pytest.raises(LabelError, match="index 1"):
        cross_entropy(Tensor([[0.5, 0.5], [0.5, 0.5]]), [0, 2])


def test_layernorm_constant_row_maps_to_beta():
    out = layernorm(Tensor([5.0, 5.0, 5.0]), Tensor(np.ones(3)), Tensor(np.zeros(3)), eps=1e-5)
    np.testing.assert_array_equal(out.data, [0.0, 0.0, 0.0])


def test_layernorm_two_values():
    out = layernorm(Tensor([1.0, -1.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)))
    np.testing.assert_allclose(out.data, [1.0, -1.0], atol=1e-5)


@pytest.mark.parametrize("seed", SEEDS)
def test_layernorm_gradient(seed):
    rng = np.random.default_rng(seed)
    x = param(rng.normal(size=(2, 4)))
    gamma = param(rng.uniform(0.5, 1.5, size=4))
    beta = param(rng.normal(size=4))
    weights = Tensor(rng.normal(size=(2, 4)))

    def f():
        return (layernorm(x, gamma, beta) * weights).sum()

    assert grad_check(f, [x, gamma, beta], h=1e-4) < 1e-3


def test_gelu_reference_values():
    assert gelu(Tensor([0.0])).data[0] == 0.0
    c = math.sqrt(2.0 / math.pi)
    reference = 0.5 * (1.0 + math.tanh(c * (1.0 + 0.044715)))
    assert gelu(Tensor([1.0])).data[0] == pytest.approx(reference, abs=1e-6)
    assert abs(gelu(Tensor([-10.0])).data[0]) < 1e-3


@pytest.mark.parametrize("seed", SEEDS)
def test_gelu_gradient(seed):
    rng = np.random.default_rng(seed)
    x = param(rng.uniform(0.2, 2.0, size=(2, 3)))
    assert grad_check(lambda: gelu(x).sum(), [x], h=1e-4) < 1e-3


def test_embedding_gather_rows():
    table = param(np.arange(12).reshape(4, 3))
    np.testing.assert_array_equal(embedding_gather(table, [0]).data, table.data[[0]])
    assert embedding_gather(table, np.array([], dtype=np.int64)).shape == (0, 3)


def test_embedding_gather_duplicate_ids_accumulate():
    table = param(np.zeros((4, 3)))
    embedding_gather(table, [2, 2]).sum().backward()
    expected = np.zeros((4, 3))
    expected[2] = 2.0
    np.testing.assert_array_equal(table.grad, expected)


@pytest.mark.parametrize("seed", SEEDS)
def test_embedding_gather_gradient(seed):
    rng = np.random.default_rng(seed)
    table = param(rng.normal(size=(5, 3)))
    ids = rng.integers(0, 5, size=(2, 3))
    weights = Tensor(rng.normal(size=(2, 3, 3)))
    assert grad_check(lambda: (embedding_gather(table, ids) * weights).sum(), [table]) < 1e-3


def test_embedding_gather_rejects_unknown_id():
    with pytest.raises(IndexError, match="outside vocabulary of size 4"):
        embedding_gather(param(np.zeros((4, 2))), [1, 4])


def test_dropout_identity_cases(rng):
    x = Tensor(rng.normal(size=(4, 4)))
    assert dropout(x, 0.0, training=True, rng=rng) is x
    assert dropout(x, 0.5, training=False) is x


def test_dropout_zero_fraction():
    x = Tensor(np.ones(100_000))
    out = dropout(x, 0.5, training=True, rng=np.random.default_rng(0))
    zeros = np.mean(out.data == 0.0)
    assert 0.49 <= zeros <= 0.51
    np.testing.assert_allclose(out.data[out.data != 0], 2.0)


@pytest.mark.parametrize("p", [1.0, 1.5, -0.1])
def test_dropout_rejects_bad_probability(p):
    with pytest.raises(ParameterError):
        dropout(Tensor([1.0]), p, training=True, rng=np.random.default_rng(0))


def test_grad_check_linear_function_is_exact(rng):
    x = param(rng.normal(size=(3, 3)))
    assert grad_check(lambda: x.sum(), [x]) < 1e-7


def test_grad_check_restores_inputs(rng):
    x = param(rng.normal(size=3))
    before = x.data.copy()
    grad_check(lambda: (x * x).sum(), [x])
    assert x.data.dtype == np.float32
    np.testing.assert_array_equal(x.data, before)
    assert x.grad is None


def test_fan_out_gradients_accumulate(rng):
    x = param(rng.normal(size=4))
    (x * x + x).sum().backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 1, rtol=1e-6)
    y = param(rng.normal(size=4))
    assert grad_check(lambda: (y * y + y * 3.0).sum(), [y]) < 1e-3


def test_backward_requires_scalar():
    with pytest.raises(DimensionError):
        (param([1.0, 2.0]) * 2.0).backward()


def test_backward_frees_graph():
    x = param([1.0, 2.0])
    hidden = x * 3.0
    hidden.sum().backward()
    assert hidden._parents == ()
    assert hidden.grad is None
    np.testing.assert_array_equal(x.grad, [3.0, 3.0])


def test_ops_stay_finite(rng):
    x = Tensor(rng.normal(scale=50.0, size=(3, 5)))
    out = layernorm(gelu(x), Tensor(np.ones(5)), Tensor(np.zeros(5)))
    assert np.all(np.isfinite(softmax(out).data))
