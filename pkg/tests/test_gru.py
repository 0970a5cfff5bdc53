import numpy as np
import pytest

from conftest import assert_grad_close, finite_difference
from rawnet import tensor as T
from rawnet.nn import GRU
from rawnet.tensor import Tensor


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def gru_loop_oracle(x, params):
    """Step-by-step recurrence in plain numpy, one sequence at a time."""
    N, steps, _ = x.shape
    H = params["bz"].shape[0]
    h = np.zeros((N, H))
    for t in range(steps):
        xt = x[:, t, :]
        z = sigmoid(xt @ params["wz"] + h @ params["uz"] + params["bz"])
        r = sigmoid(xt @ params["wr"] + h @ params["ur"] + params["br"])
        c = np.tanh(xt @ params["wh"] + (r * h) @ params["uh"] + params["bh"])
        h = (1.0 - z) * h + z * c
    return h


def make_gru(in_dim, hidden, rng, dropout=0.0):
    gru = GRU(in_dim, hidden, recurrent_dropout=dropout,
              rng=np.random.default_rng(7), dtype=np.float64)
    for p in gru.parameters().values():
        p.data = rng.standard_normal(p.data.shape) * 0.4
    return gru


def test_output_shape():
    gru = GRU(256, 1024, rng=np.random.default_rng(0))
    out = gru(Tensor(np.zeros((2, 27, 256), dtype=np.float32)))
    assert out.shape == (2, 1024)


def test_zero_input_zero_weights_is_fixed_point():
    gru = GRU(3, 4, dtype=np.float64)
    for p in gru.parameters().values():
        p.data = np.zeros_like(p.data)
    out = gru(Tensor(np.zeros((2, 5, 3))))
    # z = sigmoid(0) = 0.5 gates a tanh(0) = 0 candidate; h stays zero.
    np.testing.assert_array_equal(out.data, np.zeros((2, 4)))


def test_matches_loop_oracle(rng):
    gru = make_gru(2, 2, rng)
    x = rng.standard_normal((3, 3, 2))
    params = {k: p.data for k, p in gru.parameters().items()}
    out = gru.eval()(Tensor(x))
    np.testing.assert_allclose(out.data, gru_loop_oracle(x, params), rtol=1e-12)


def test_gradients_match_finite_differences(rng):
    gru = make_gru(2, 3, rng)
    x0 = rng.standard_normal((2, 4, 2))
    scale = rng.standard_normal((2, 3))
    params = gru.parameters()

    xt = Tensor(x0, requires_grad=True)
    T.backward((gru(xt) * Tensor(scale)).sum())

    def loss_x(x):
        p = {k: q.data for k, q in params.items()}
        return float((gru_loop_oracle(x, p) * scale).sum())

    assert_grad_close(xt.grad, finite_difference(loss_x, x0))

    for key in ("wz", "uz", "bh", "uh"):
        base = params[key].data.copy()

        def loss_p(v, key=key, base=base):
            p = {k: q.data for k, q in params.items()}
            p[key] = v
            return float((gru_loop_oracle(x0, p) * scale).sum())

        assert_grad_close(params[key].grad, finite_difference(loss_p, base))


def test_zero_steps_raises():
    gru = GRU(2, 2)
    with pytest.raises(ValueError, match="zero time steps"):
        gru(Tensor(np.zeros((1, 0, 2))))


def test_dropout_needs_rng_in_train_mode():
    gru = GRU(2, 2, recurrent_dropout=0.3)
    with pytest.raises(ValueError, match="needs an rng"):
        gru(Tensor(np.zeros((1, 2, 2), dtype=np.float32)))


def test_dropout_mask_fixed_within_sequence(rng):
    gru = make_gru(2, 8, rng, dropout=0.3)
    x = rng.standard_normal((4, 6, 2))
    a = gru(Tensor(x), rng=np.random.default_rng(99)).data
    b = gru(Tensor(x), rng=np.random.default_rng(99)).data
    c = gru(Tensor(x), rng=np.random.default_rng(100)).data
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_eval_mode_ignores_dropout(rng):
    gru = make_gru(2, 4, rng, dropout=0.3)
    x = rng.standard_normal((2, 3, 2))
    out = gru.eval()(Tensor(x))
    params = {k: p.data for k, p in gru.parameters().items()}
    np.testing.assert_allclose(out.data, gru_loop_oracle(x, params), rtol=1e-12)
