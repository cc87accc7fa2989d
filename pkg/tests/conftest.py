import numpy as np
import pytest

from sstaf.tensor import Tensor


def numeric_grad(fn, arrays, index, h=1e-5):
    """Central finite differences of scalar ``fn(*arrays)`` w.r.t. ``arrays[index]``."""
    base = [a.copy() for a in arrays]
    target = base[index]
    grad = np.zeros_like(target)
    it = np.nditer(target, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = target[i]
        target[i] = orig + h
        up = fn(*base)
        target[i] = orig - h
        down = fn(*base)
        target[i] = orig
        grad[i] = (up - down) / (2 * h)
    return grad


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))))


def check_op_grad(op, arrays, seed=0, tol=1e-4):
    """Compare the tape gradient of ``sum(op(*tensors) * R)`` with finite differences."""
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    out_shape = op(*[Tensor(a) for a in arrays]).shape
    r = np.random.default_rng(seed).standard_normal(out_shape)

    def loss_value(*arrs):
        return float((op(*[Tensor(a) for a in arrs]).data * r).sum())

    ts = [Tensor(a, requires_grad=True) for a in arrays]
    (op(*ts) * Tensor(r)).sum().backward()
    for i, t in enumerate(ts):
        num = numeric_grad(loss_value, arrays, i)
        assert rel_err(t.grad, num) < tol, f"operand {i}: analytic {t.grad} vs numeric {num}"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
