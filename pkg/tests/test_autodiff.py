"""Tape mechanics: topological order, accumulation, no_grad, error paths."""

import numpy as np
import pytest

from i2idiff.nn import ops
from i2idiff.nn.autodiff import Tensor, as_tensor, grad_enabled, no_grad, result


def test_backward_requires_scalar():
    t = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        t.backward()


def test_chain_rule_scalar():
    x = Tensor(np.asarray(2.0), requires_grad=True)
    y = ops.square(ops.mul(x, 3.0))
    y.backward()
    assert y.item() == pytest.approx(36.0)
    # d/dx (3x)^2 = 18x
    assert x.grad == pytest.approx(36.0)


def test_diamond_visits_each_node_once():
    x = Tensor(np.asarray(1.5), requires_grad=True)
    a = ops.mul(x, 2.0)
    b = ops.mul(x, 3.0)
    y = ops.add(a, b)
    y.backward()
    assert x.grad == pytest.approx(5.0)


def test_reused_tensor_accumulates():
    x = Tensor(np.asarray(4.0), requires_grad=True)
    y = ops.mul(x, x)
    y.backward()
    assert x.grad == pytest.approx(8.0)


def test_second_backward_accumulates_into_leaf():
    x = Tensor(np.asarray(1.0), requires_grad=True)
    y = ops.mul(x, 3.0)
    y.backward()
    assert x.grad == pytest.approx(3.0)
    y.backward()
    assert x.grad == pytest.approx(6.0)


def test_grad_is_none_until_backward():
    x = Tensor(np.asarray(1.0), requires_grad=True)
    y = ops.mul(x, 2.0)
    assert x.grad is None and y.grad is None
    y.backward()
    assert x.grad is not None


def test_no_grad_detaches():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        assert not grad_enabled()
        y = ops.mul(x, 2.0)
    assert grad_enabled()
    assert not y.requires_grad
    assert y._parents == ()
    assert y._backward is None


def test_no_grad_restores_on_exception():
    with pytest.raises(RuntimeError):
        with no_grad():
            raise RuntimeError("boom")
    assert grad_enabled()


def test_deep_chain_does_not_recurse():
    x = Tensor(np.asarray(0.0), requires_grad=True)
    y = x
    for _ in range(5000):
        y = ops.add(y, 1.0)
    y.backward()
    assert y.item() == pytest.approx(5000.0)
    assert x.grad == pytest.approx(1.0)


def test_result_without_grad_parents_is_constant():
    a = Tensor(np.ones(2))
    out = result(a.data * 2, (a,), lambda g: None)
    assert not out.requires_grad
    assert out._backward is None


def test_constant_leaves_get_no_grad():
    x = Tensor(np.asarray(2.0), requires_grad=True)
    c = Tensor(np.asarray(5.0))
    y = ops.mul(x, c)
    y.backward()
    assert x.grad == pytest.approx(5.0)
    assert c.grad is None


def test_accumulate_grad_copies_first_write():
    t = Tensor(np.zeros(3), requires_grad=True)
    g = np.ones(3)
    t.accumulate_grad(g)
    g += 10.0
    assert np.array_equal(t.grad, np.ones(3))


def test_as_tensor_passthrough_and_wrap():
    t = Tensor(np.ones(2))
    assert as_tensor(t) is t
    w = as_tensor([1.0, 2.0])
    assert isinstance(w, Tensor)
    assert np.array_equal(w.data, [1.0, 2.0])


def test_tensor_properties_and_repr():
    t = Tensor(np.zeros((2, 3), dtype=np.float32), requires_grad=True)
    assert t.shape == (2, 3)
    assert t.dtype == np.float32
    assert t.ndim == 2
    assert "requires_grad=True" in repr(t)


def test_operator_sugar_matches_ops():
    x = Tensor(np.asarray(3.0), requires_grad=True)
    y = Tensor(np.asarray(2.0), requires_grad=True)
    z = (x + y) * x - y + (-x) + 2.0 * x + (1.0 - y)
    # z = (x+y)x - y - x + 2x + 1 - y = x^2 + xy + x - 2y + 1
    z.backward()
    assert z.item() == pytest.approx(9.0 + 6.0 + 3.0 - 4.0 + 1.0)
    assert x.grad == pytest.approx(2 * 3.0 + 2.0 + 1.0)
    assert y.grad == pytest.approx(3.0 - 2.0)
