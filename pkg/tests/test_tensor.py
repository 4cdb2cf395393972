import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tgrounding import tensor as tn
from tgrounding.errors import ContractError, DimensionError, NumericError
from tgrounding.nn import Linear, param
from tgrounding.optim import AdamW, sgd_adamw_step

from conftest import check_gradients


def leaf(rng, *shape, positive=False):
    data = rng.normal(size=shape)
    if positive:
        data = np.abs(data) + 0.5
    return tn.Tensor(data, requires_grad=True)


def test_relu_clamps():
    out = tn.relu(tn.Tensor([-1.0, 0.0, 2.0]))
    np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])


def test_matmul_identity(rng):
    a = rng.normal(size=(3, 5))
    np.testing.assert_array_equal(tn.matmul(tn.Tensor(np.eye(3)), tn.Tensor(a)).data, a)


def test_layer_norm_constant_row_is_zero():
    x = tn.Tensor(np.full((2, 6), 3.7))
    out = tn.layer_norm(x, np.ones(6), np.zeros(6))
    np.testing.assert_array_equal(out.data, np.zeros((2, 6)))


def test_layer_norm_constant_row_takes_bias():
    x = tn.Tensor(np.full((1, 4), -2.0))
    out = tn.layer_norm(x, np.full(4, 5.0), np.arange(4.0))
    np.testing.assert_array_equal(out.data, [[0.0, 1.0, 2.0, 3.0]])


def test_backward_sum():
    x = tn.Tensor(np.arange(4.0), requires_grad=True)
    tn.backward(x.sum())
    np.testing.assert_array_equal(x.grad, np.ones(4))


def test_backward_quadratic():
    x = tn.Tensor([1.0, 2.0], requires_grad=True)
    tn.backward((x * x).sum())
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])


def test_backward_seeds_one():
    x = tn.Tensor([3.0], requires_grad=True)
    loss = (x * 2.0).sum()
    tn.backward(loss)
    assert x.grad[0] == 2.0


def test_backward_rejects_non_scalar():
    x = tn.Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractError):
        tn.backward(x * 2.0)


def test_shape_errors_name_primitive():
    with pytest.raises(DimensionError, match="matmul"):
        tn.matmul(tn.Tensor(np.ones((2, 3))), tn.Tensor(np.ones((2, 3))))
    with pytest.raises(DimensionError, match="conv2d"):
        tn.conv2d(tn.Tensor(np.ones((4, 4, 2))), tn.Tensor(np.ones((3, 3, 3, 1))))
    with pytest.raises(DimensionError, match="concat"):
        tn.concat_rows([tn.Tensor(np.ones((1, 2))), tn.Tensor(np.ones((1, 3)))])


def test_non_finite_input_rejected():
    with pytest.raises(NumericError):
        tn.relu(np.array([1.0, np.nan]))
    with pytest.raises(NumericError):
        tn.Tensor([np.inf])


def test_exp_overflow_is_numeric_error():
    with pytest.raises(NumericError):
        tn.exp(tn.Tensor([1000.0]))


def test_linear_relu_sum_matches_finite_differences(rng):
    x = leaf(rng, 5, 3)
    w = leaf(rng, 3, 4)
    b = leaf(rng, 4)
    err = check_gradients(lambda: tn.relu(tn.linear(x, w, b)).sum(), [x, w, b])
    assert err < 1e-4


def _weighted(out, rng_w):
    return (out * tn.Tensor(rng_w)).sum()


PRIMITIVES = {
    "matmul": lambda r: ([leaf(r, 3, 4), leaf(r, 4, 2)], lambda a, b: tn.matmul(a, b)),
    "add": lambda r: ([leaf(r, 3, 4), leaf(r, 4)], lambda a, b: tn.add(a, b)),
    "mul": lambda r: ([leaf(r, 3, 4), leaf(r, 3, 1)], lambda a, b: tn.mul(a, b)),
    "div": lambda r: ([leaf(r, 3, 4), leaf(r, 3, 4, positive=True)], lambda a, b: tn.div(a, b)),
    "relu": lambda r: ([leaf(r, 4, 5)], lambda a: tn.relu(a)),
    "leaky_relu": lambda r: ([leaf(r, 4, 5)], lambda a: tn.leaky_relu(a)),
    "exp": lambda r: ([leaf(r, 3, 3)], lambda a: tn.exp(a)),
    "log": lambda r: ([leaf(r, 3, 3, positive=True)], lambda a: tn.log(a)),
    "layer_norm": lambda r: ([leaf(r, 4, 6), leaf(r, 6), leaf(r, 6)], lambda a, g, b: tn.layer_norm(a, g, b)),
    "max_over_axis": lambda r: ([leaf(r, 5, 4)], lambda a: tn.max_over_axis(a, axis=0)),
    "mean_over_axis": lambda r: ([leaf(r, 5, 4)], lambda a: tn.mean_over_axis(a, axis=1)),
    "logsumexp": lambda r: ([leaf(r, 5, 4)], lambda a: tn.logsumexp(a, axis=1)),
    "concat_rows": lambda r: ([leaf(r, 2, 3), leaf(r, 4, 3)], lambda a, b: tn.concat_rows([a, b])),
    "slice_rows": lambda r: ([leaf(r, 6, 3)], lambda a: tn.slice_rows(a, 1, 4)),
    "take": lambda r: ([leaf(r, 5, 3)], lambda a: tn.take(a, np.array([0, 2, 2, 4]))),
    "l2_normalize_rows": lambda r: ([leaf(r, 4, 5)], lambda a: tn.l2_normalize_rows(a)),
    "cosine_similarity_rows": lambda r: ([leaf(r, 4, 5), leaf(r, 4, 5)], lambda a, b: tn.cosine_similarity_rows(a, b)),
    "conv2d": lambda r: ([leaf(r, 5, 5, 2), leaf(r, 3, 3, 2, 3), leaf(r, 3)], lambda x, w, b: tn.conv2d(x, w, b)),
    "linear": lambda r: ([leaf(r, 2, 3, 4), leaf(r, 4, 2), leaf(r, 2)], lambda x, w, b: tn.linear(x, w, b)),
    "transpose": lambda r: ([leaf(r, 3, 4)], lambda a: tn.transpose(a)),
    "reshape": lambda r: ([leaf(r, 3, 4)], lambda a: tn.reshape(a, (2, 6))),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
@pytest.mark.parametrize("seed", range(20))
def test_primitive_gradients(name, seed):
    r = np.random.default_rng(seed)
    leaves, fn = PRIMITIVES[name](r)
    out_shape = fn(*leaves).shape
    w = r.normal(size=out_shape)
    assert check_gradients(lambda: _weighted(fn(*leaves), w), leaves) < 1e-4


def test_max_routes_to_first_argmax():
    x = tn.Tensor([[1.0, 5.0], [3.0, 5.0], [3.0, 2.0]], requires_grad=True)
    tn.backward(tn.max_over_axis(x, axis=0).sum())
    np.testing.assert_array_equal(x.grad, [[0, 1], [1, 0], [0, 0]])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_max_gradient_one_per_slice(rows, cols, seed):
    r = np.random.default_rng(seed)
    data = r.integers(-2, 3, size=(rows, cols)).astype(float)
    x = tn.Tensor(data, requires_grad=True)
    tn.backward(tn.max_over_axis(x, axis=0).sum())
    np.testing.assert_array_equal(x.grad.sum(axis=0), np.ones(cols))
    assert set(np.unique(x.grad)) <= {0.0, 1.0}


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_l2_normalize_unit_rows(rows, cols, seed):
    r = np.random.default_rng(seed)
    data = r.normal(size=(rows, cols)) * r.uniform(1e-3, 1e3)
    data[0] = 0.0
    out = tn.l2_normalize_rows(data).data
    np.testing.assert_array_equal(out[0], np.zeros(cols))
    np.testing.assert_allclose(np.linalg.norm(out[1:], axis=1), 1.0, atol=1e-9)


def test_replay_determinism():
    def run():
        r = np.random.default_rng(7)
        lin = Linear(6, 4, r)
        x = tn.Tensor(r.normal(size=(5, 6)))
        return tn.l2_normalize_rows(tn.relu(lin(x))).data

    a, b = run(), run()
    assert a.tobytes() == b.tobytes()


def test_no_grad_skips_tape():
    x = tn.Tensor([1.0], requires_grad=True)
    with tn.no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_conv2d_matches_sliding_window(rng):
    x = rng.normal(size=(4, 4, 2))
    w = rng.normal(size=(3, 3, 2, 3))
    b = rng.normal(size=3)
    out = tn.conv2d(x, w, b).data
    xp = np.zeros((6, 6, 2))
    xp[1:5, 1:5] = x
    ref = np.zeros((4, 4, 3))
    for i in range(4):
        for j in range(4):
            for o in range(3):
                ref[i, j, o] = b[o] + sum(
                    xp[i + a, j + c, ch] * w[a, c, ch, o]
                    for a in range(3) for c in range(3) for ch in range(2))
    assert np.max(np.abs(out - ref)) < 1e-10


# ---- AdamW ----------------------------------------------------------------

def test_adamw_zero_gradient_no_decay_keeps_params():
    w = param([0.3, -1.2])
    opt = AdamW([w], lr=0.1, weight_decay=0.0)
    w.grad = np.zeros(2)
    sgd_adamw_step(opt)
    np.testing.assert_array_equal(w.data, [0.3, -1.2])


def test_adamw_descends_on_square():
    w = param([1.0])
    opt = AdamW([w], lr=0.1)
    tn.backward((w * w).sum())
    sgd_adamw_step(opt)
    assert w.data[0] ** 2 < 1.0


def test_adamw_converges_on_quadratic():
    w = param([1.0, 1.0])
    opt = AdamW([w], lr=0.1, weight_decay=0.0)
    for _ in range(200):
        opt.zero_grad()
        tn.backward((w * w).sum())
        opt.step()
    assert np.linalg.norm(w.data) < 1e-2


def test_adamw_missing_grad():
    opt = AdamW([param([1.0])], lr=0.1)
    with pytest.raises(ContractError):
        opt.step()
