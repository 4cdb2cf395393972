import numpy as np
import pytest

from tgrounding import tensor as tn


def finite_difference(fn, arrays, step=1e-5):
    """Central differences of scalar ``fn()`` w.r.t. every entry of ``arrays`` (mutated in place)."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = arr[idx]
            arr[idx] = old + step
            up = fn()
            arr[idx] = old - step
            down = fn()
            arr[idx] = old
            g[idx] = (up - down) / (2 * step)
        grads.append(g)
    return grads


def rel_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom < 1e-8:
        # both vanish (e.g. a softmax-invariant shift); differences are pure rounding
        return 0.0
    return np.linalg.norm(a - b) / denom


def check_gradients(build, leaves, step=1e-5):
    """Compare autodiff grads of ``build()`` (returns scalar Tensor) against finite differences."""
    for p in leaves:
        p.grad = None
    loss = build()
    tn.backward(loss)
    auto = [p.grad.copy() for p in leaves]

    def scalar():
        with tn.no_grad():
            return build().item()

    numeric = finite_difference(scalar, [p.data for p in leaves], step)
    return max(rel_error(a, n) for a, n in zip(auto, numeric))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
