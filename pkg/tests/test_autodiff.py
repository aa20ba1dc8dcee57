import numpy as np
import pytest

import hidflow.autodiff as ad
from hidflow.autodiff import Tensor, backward, _up2_matrix
from hidflow.errors import NumericsError, ShapeError
from conftest import fd_scalar_grad, rel_err


def test_exp_of_zeros_is_ones():
    out = ad.exp(Tensor(np.zeros((2, 3))))
    assert np.array_equal(out.data, np.ones((2, 3)))


def test_bilinear_up2_preserves_constant():
    c = 0.37
    out = ad.bilinear_up2(Tensor(np.full((3, 5, 2), c)))
    assert out.shape == (6, 10, 2)
    assert np.allclose(out.data, c, atol=1e-15)


def test_bilinear_up2_matches_dense_matrix():
    rng = np.random.default_rng(5)
    x = rng.normal(0, 1, (4, 7, 3))
    got = ad.bilinear_up2(Tensor(x)).data
    want = np.einsum("ih,hwc,jw->ijc", _up2_matrix(4, x.dtype), x,
                     _up2_matrix(7, x.dtype))
    assert np.allclose(got, want, atol=1e-12)


def test_conv2d_strided_sampling():
    # 3x3 ones, 1x1 kernel of value 2, stride 2 -> 2x2 of 2s
    out = ad.conv2d(Tensor(np.ones((3, 3, 1))), Tensor(np.full((1, 1, 1, 1), 2.0)),
                    stride=2, padding=0)
    assert out.shape == (2, 2, 1)
    assert np.array_equal(out.data.squeeze(), np.full((2, 2), 2.0))


def test_backward_quadratic():
    w = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    backward(ad.tsum(ad.mul(w, w)))
    assert np.array_equal(w.grad, np.array([2.0, 4.0, 6.0]))


def test_backward_unreachable_leaf_zero():
    w = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    p = Tensor(np.array([5.0]), requires_grad=True)
    backward(ad.tsum(ad.mul(w, w)))
    assert p.grad is None  # never touched; gradient map reports zeros
    grads = ad.gradient_map(ad.tsum(ad.mul(w, w)), {"w": w, "p": p})
    assert np.array_equal(grads["p"], np.zeros(1))
    assert np.array_equal(grads["w"], np.array([2.0, 4.0]))


def test_backward_rejects_non_scalar():
    w = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ShapeError):
        backward(ad.mul(w, w))


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError) as err:
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))
    assert "(2, 3)" in str(err.value) and "(3, 2)" in str(err.value)


def test_division_guard():
    with pytest.raises(NumericsError):
        ad.div(Tensor(np.ones(3)), Tensor(np.array([1.0, 1e-31, 1.0])))


def test_reshape_permute_roundtrip_bitwise():
    rng = np.random.default_rng(0)
    x = rng.normal(0, 1, (2, 3, 4, 5)).astype(np.float32)
    perm = (2, 0, 3, 1)
    inv = tuple(np.argsort(perm))
    back = ad.permute(ad.permute(Tensor(x), perm), inv)
    assert np.array_equal(back.data, x)
    r = ad.reshape(ad.reshape(Tensor(x), (6, 20)), (2, 3, 4, 5))
    assert np.array_equal(r.data, x)


def test_forward_determinism_bit_identical():
    rng = np.random.default_rng(3)
    x = rng.normal(0, 1, (4, 4, 3)).astype(np.float32)
    w = rng.normal(0, 1, (3, 3, 3, 5)).astype(np.float32)
    a = ad.conv2d(Tensor(x), Tensor(w), stride=1, padding=1).data
    b = ad.conv2d(Tensor(x), Tensor(w), stride=1, padding=1).data
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# finite-difference property for every primitive
# ---------------------------------------------------------------------------

def _fd_check(build, *arrays, rtol=1e-4):
    """backward(sum(f(x...) * weights)) vs central differences per input."""
    rng = np.random.default_rng(99)
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = build(*tensors)
    weights = rng.normal(0, 1, out.shape)
    backward(ad.tsum(ad.mul(out, Tensor(weights))))

    for k, base in enumerate(arrays):
        def f(k=k):
            with ad.no_grad():
                rebuilt = [Tensor(a) for a in arrays]
                return float(ad.tsum(ad.mul(build(*rebuilt), Tensor(weights))).data)
        g_fd = fd_scalar_grad(f, base)
        assert rel_err(tensors[k].grad, g_fd, floor=1e-8) < rtol, f"operand {k}"


@pytest.mark.parametrize("name,build,shapes,positive", [
    ("add", lambda a, b: ad.add(a, b), [(3, 4), (3, 4)], False),
    ("sub", lambda a, b: ad.sub(a, b), [(3, 4), (3, 4)], False),
    ("mul", lambda a, b: ad.mul(a, b), [(3, 4), (3, 4)], False),
    ("div", lambda a, b: ad.div(a, b), [(3, 4), (3, 4)], True),
    ("neg", lambda a: ad.neg(a), [(3, 4)], False),
    ("abs", lambda a: ad.tabs(a), [(3, 4)], False),
    ("exp", lambda a: ad.exp(a), [(3, 4)], False),
    ("log", lambda a: ad.log(a), [(3, 4)], True),
    ("sqrt", lambda a: ad.sqrt(a), [(3, 4)], True),
    ("tanh", lambda a: ad.tanh(a), [(3, 4)], False),
    ("sigmoid", lambda a: ad.sigmoid(a), [(3, 4)], False),
    ("relu", lambda a: ad.relu(a), [(3, 4)], False),
    ("leaky_relu", lambda a: ad.leaky_relu(a, 0.2), [(3, 4)], False),
    ("gelu", lambda a: ad.gelu(a), [(3, 4)], False),
    ("softmax", lambda a: ad.softmax(a, axis=-1), [(3, 4)], False),
    ("matmul", lambda a, b: ad.matmul(a, b), [(3, 4), (4, 5)], False),
    ("matmul_batched", lambda a, b: ad.matmul(a, b), [(2, 3, 4), (2, 4, 5)], False),
    ("matmul_shared", lambda a, b: ad.matmul(a, b), [(2, 3, 4), (4, 5)], False),
    ("conv2d_s1", lambda x, w, b: ad.conv2d(x, w, b, 1, 1),
     [(5, 5, 2), (3, 3, 2, 3), (3,)], False),
    ("conv2d_s2", lambda x, w: ad.conv2d(x, w, None, 2, 1),
     [(2, 6, 6, 2), (3, 3, 2, 3)], False),
    ("depthwise", lambda x, w: ad.depthwise_conv2d(x, w, 1),
     [(5, 5, 3), (3, 3, 3)], False),
    ("bilinear_up2", lambda x: ad.bilinear_up2(x), [(3, 4, 2)], False),
    ("reshape", lambda a: ad.reshape(a, (12,)), [(3, 4)], False),
    ("permute", lambda a: ad.permute(a, (1, 0)), [(3, 4)], False),
    ("expand", lambda a: ad.expand(a, (5, 3, 4)), [(1, 3, 4)], False),
    ("slice", lambda a: ad.slice_axis(a, 1, 1, 3), [(3, 4)], False),
    ("concat", lambda a, b: ad.concat([a, b], 1), [(3, 2), (3, 3)], False),
    ("sum_axis", lambda a: ad.tsum(a, axis=1), [(3, 4)], False),
    ("sum_keep", lambda a: ad.tsum(a, axis=(0, 1), keepdims=True), [(3, 4)], False),
    ("mean", lambda a: ad.tmean(a, axis=0), [(3, 4)], False),
    ("matrix_inverse", lambda a: ad.matrix_inverse(a), [(4, 4)], "spd"),
    ("slog_abs_det", lambda a: ad.slog_abs_det(a), [(4, 4)], "spd"),
])
def test_primitive_gradients_match_finite_differences(name, build, shapes, positive):
    rng = np.random.default_rng(hash(name) % 2 ** 31)
    arrays = []
    for s in shapes:
        if positive == "spd":
            m = rng.normal(0, 0.3, s)
            arrays.append(m + np.eye(s[0]) * 2.0)
        elif positive:
            arrays.append(rng.uniform(0.3, 2.0, s))
        else:
            a = rng.uniform(-2.0, 2.0, s)
            # stay away from kinks (relu/leaky/abs non-differentiability at 0)
            a = np.where(np.abs(a) < 1e-2, a + 0.05, a)
            arrays.append(a)
    _fd_check(build, *arrays)


def test_flow_nll_gradient_matches_finite_differences():
    # logdet-bearing flow NLL on a 2x2x2 input, 64-bit, rel err < 1e-4
    from hidflow.model import DenoiserModel, ModelConfig
    from hidflow.training import nll_loss

    model = DenoiserModel(ModelConfig(bands=2, width=4, stages=1, window=2, heads=2,
                                      flow_steps=2), seed=0, dtype=np.float64)
    model.randomize(seed=1)
    rng = np.random.default_rng(2)
    x0 = rng.uniform(0, 1, (2, 2, 2))
    y0 = rng.uniform(0, 1, (2, 2, 2))

    x = Tensor(x0.copy(), requires_grad=True)
    backward(nll_loss(model.flow_forward(x, y0)))

    def f():
        with ad.no_grad():
            return float(nll_loss(model.flow_forward(Tensor(x0), y0)).data)

    g_fd = fd_scalar_grad(f, x0)
    assert rel_err(x.grad, g_fd) < 1e-4
