import numpy as np
import pytest

from hidflow.rng import stream


@pytest.fixture
def rng():
    return stream(1234, 0)


def fd_scalar_grad(f, arr: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar f() w.r.t. arr (mutated in place)."""
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        hi = f()
        flat[i] = keep - step
        lo = f()
        flat[i] = keep
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def rel_err(got: np.ndarray, want: np.ndarray, floor: float = 1e-12) -> float:
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    return float(np.linalg.norm(got - want) / max(np.linalg.norm(want), floor))
