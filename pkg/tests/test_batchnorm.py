import numpy as np
import pytest

from conftest import assert_grad_close, finite_difference
from rawnet import tensor as T
from rawnet.nn import BatchNorm1d
from rawnet.tensor import Tensor


def test_train_mode_normalizes_per_channel(rng):
    bn = BatchNorm1d(3, dtype=np.float64)
    x = Tensor(rng.standard_normal((4, 7, 3)) * 3.0 + 1.5)
    out = bn(x).data
    np.testing.assert_allclose(out.mean(axis=(0, 1)), 0.0, atol=1e-5)
    np.testing.assert_allclose(out.var(axis=(0, 1)), 1.0, atol=1e-4)


def test_affine_identity(rng):
    bn = BatchNorm1d(2, dtype=np.float64)
    bn.gamma.data = np.array([2.0, 2.0])
    bn.beta.data = np.array([3.0, 3.0])
    x = Tensor(rng.standard_normal((8, 5, 2)))
    out = bn(x).data
    np.testing.assert_allclose(out.mean(axis=(0, 1)), 3.0, atol=1e-6)
    np.testing.assert_allclose(out.std(axis=(0, 1)), 2.0, atol=1e-3)


def test_gradients_match_finite_differences(rng):
    x0 = rng.standard_normal((4, 5, 2))
    g0 = rng.standard_normal(2)
    b0 = rng.standard_normal(2)
    scale = rng.standard_normal((4, 5, 2))

    def loss(x, g, b):
        bn = BatchNorm1d(2, dtype=np.float64)
        bn.gamma.data = g
        bn.beta.data = b
        return float((bn(Tensor(x)).data * scale).sum())

    bn = BatchNorm1d(2, dtype=np.float64)
    bn.gamma.data = g0
    bn.beta.data = b0
    xt = Tensor(x0, requires_grad=True)
    T.backward((bn(xt) * Tensor(scale)).sum())
    assert_grad_close(xt.grad, finite_difference(lambda x: loss(x, g0, b0), x0))
    assert_grad_close(bn.gamma.grad, finite_difference(lambda g: loss(x0, g, b0), g0))
    assert_grad_close(bn.beta.grad, finite_difference(lambda b: loss(x0, g0, b), b0))


def test_eval_before_train_warns_and_uses_unit_stats(rng):
    bn = BatchNorm1d(2, dtype=np.float64).eval()
    x = rng.standard_normal((3, 4, 2))
    with pytest.warns(UserWarning, match="eval before any train step"):
        out = bn(Tensor(x)).data
    np.testing.assert_allclose(out, x / np.sqrt(1.0 + bn.eps), rtol=1e-12)


def test_running_stats_follow_ema(rng):
    bn = BatchNorm1d(1, dtype=np.float64)
    x = rng.standard_normal((6, 4, 1)) + 5.0
    bn(Tensor(x))
    mean = x.mean()
    var = x.var()
    np.testing.assert_allclose(bn.running_mean, 0.99 * 0.0 + 0.01 * mean, rtol=1e-12)
    np.testing.assert_allclose(bn.running_var, 0.99 * 1.0 + 0.01 * var, rtol=1e-12)
    assert int(bn.num_batches[0]) == 1


def test_train_mode_needs_two_samples():
    bn = BatchNorm1d(2, dtype=np.float64)
    with pytest.raises(ValueError, match=">= 2 samples"):
        bn(Tensor(np.zeros((1, 1, 2))))
