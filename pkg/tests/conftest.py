import numpy as np
import pytest

FD_STEP = 1e-5
FD_RTOL = 1e-4


def finite_difference(f, x, h=FD_STEP):
    """Central-difference gradient of scalar f at array x (64-bit)."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def assert_grad_close(autodiff_grad, fd_grad, rtol=FD_RTOL):
    """Relative error of the autodiff gradient against central differences."""
    a = np.asarray(autodiff_grad, dtype=np.float64)
    b = np.asarray(fd_grad, dtype=np.float64)
    scale = max(np.abs(b).max(), np.abs(a).max(), 1e-8)
    rel = np.abs(a - b).max() / scale
    assert rel < rtol, f"gradient mismatch: rel err {rel:.3e} >= {rtol}"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
