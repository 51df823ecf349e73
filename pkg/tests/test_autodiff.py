import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import erf

from hgcd import autodiff as ad
from hgcd.autodiff import Tensor
from hgcd.gradcheck import engine_suite

from conftest import fd_grad, grad_of


def test_matmul_identity_and_hand_product():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal((Tensor(np.eye(2)) @ Tensor(m)).data, m)
    assert np.array_equal((Tensor(m) @ Tensor([[1.0], [1.0]])).data, [[3.0], [7.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ad.ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


def test_matmul_backward_matches_fd(rng):
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
    ga = grad_of(lambda t: ad.sum(t @ Tensor(b)), a)
    assert np.allclose(ga, np.broadcast_to(b.sum(axis=1), (3, 4)))
    assert np.allclose(ga, fd_grad(lambda x: (x @ b).sum(), a), rtol=1e-6)


def test_elementwise_values():
    assert ad.sigmoid(Tensor(0.0)).item() == 0.5
    assert ad.log(ad.exp(Tensor(1.7))).item() == pytest.approx(1.7, abs=1e-15)
    assert ad.relu(Tensor([-1.0, 2.0])).data.tolist() == [0.0, 2.0]
    assert ad.scale(Tensor([1.0, -2.0]), 3).data.tolist() == [3.0, -6.0]
    assert ad.neg(Tensor([1.0])).data.tolist() == [-1.0]


def test_gelu_derivative_at_point_three():
    exact = lambda x: x * 0.5 * (1 + erf(x / math.sqrt(2)))  # noqa: E731
    num = (exact(0.3 + 1e-5) - exact(0.3 - 1e-5)) / 2e-5
    g = grad_of(lambda t: ad.sum(ad.gelu(t)), np.array([0.3]))[0]
    assert abs(g - num) / abs(num) < 1e-6


def test_sigmoid_extreme_inputs_finite():
    out = ad.sigmoid(Tensor([-800.0, 800.0])).data
    assert out[0] == 0.0 and out[1] == 1.0


def test_nonfinite_output_raises_with_op_name():
    with pytest.raises(ad.NumericError, match="exp"):
        ad.exp(Tensor([1000.0]))


def test_log_clamps_at_eps():
    assert ad.log(Tensor(0.0)).item() == pytest.approx(math.log(1e-12))


def test_reductions():
    assert ad.sum(Tensor([0.25] * 4)).item() == 1.0
    assert ad.mean(Tensor(np.full((3, 2), 2.5))).item() == 2.5
    assert ad.max_index(Tensor([0.1, 0.7, 0.2])) == 1
    assert ad.sum(Tensor(np.arange(6.0).reshape(2, 3)), axis=0).data.tolist() == [3.0, 5.0, 7.0]


def test_reduce_empty_axis_errors():
    with pytest.raises(ad.ShapeError):
        ad.sum(Tensor(np.zeros((0, 3))), axis=0)
    with pytest.raises(ad.ShapeError):
        ad.sum(Tensor(np.zeros(3)), axis=2)


def test_l2_normalize():
    assert np.allclose(ad.l2_normalize(Tensor([3.0, 4.0])).data, [0.6, 0.8], atol=1e-12)
    u = np.array([0.0, 1.0, 0.0])
    assert np.allclose(ad.l2_normalize(Tensor(u)).data, u)
    assert np.array_equal(ad.l2_normalize(Tensor(np.zeros(3))).data, np.zeros(3))


def test_l2_normalize_gradient(rng):
    x, w = rng.standard_normal(5), rng.standard_normal(5)
    g = grad_of(lambda t: ad.sum(ad.l2_normalize(t) * w), x)
    num = fd_grad(lambda v: (v / (np.linalg.norm(v) + 1e-12) * w).sum(), x)
    assert np.max(np.abs(g - num) / np.maximum(np.abs(num), 1e-4)) < 1e-6


def test_backward_simple_cases(rng):
    w = rng.standard_normal(4)
    assert np.array_equal(grad_of(lambda t: ad.sum(t), w), np.ones(4))
    assert np.allclose(grad_of(lambda t: ad.scale(ad.sum(t * t), 0.5), w), w)


def test_backward_errors():
    w = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ad.ShapeError):
        (w * 2.0).backward()
    loss = ad.sum(w)
    loss.backward()
    with pytest.raises(RuntimeError):
        loss.backward()


def test_disconnected_parameter_gets_no_gradient():
    a = Tensor(np.ones(2), requires_grad=True)
    b = Tensor(np.ones(2), requires_grad=True)
    ad.sum(a).backward()
    assert b.grad is None  # treated as zero by the optimizer


def test_gradients_accumulate_over_shared_use():
    a = Tensor([2.0], requires_grad=True)
    ad.sum(a * a + a).backward()
    assert a.grad.tolist() == [5.0]


def test_backward_bit_reproducible(rng):
    x = rng.standard_normal((6, 5))
    w = rng.standard_normal((5, 3))

    def run():
        t = Tensor(w, requires_grad=True)
        h = ad.gelu(Tensor(x) @ t)
        ad.sum(ad.exp(ad.scale(h @ t.T, 0.1))).backward()
        return t.grad

    assert np.array_equal(run(), run())


def test_no_grad_builds_no_graph():
    a = Tensor([1.0], requires_grad=True)
    with ad.no_grad():
        out = a * 3.0
    assert not out.requires_grad


def test_broadcasting_restricted():
    with pytest.raises(ad.ShapeError):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((2, 1)))
    out = Tensor(np.ones((2, 3))) + Tensor([1.0, 2.0, 3.0])
    assert out.data[1].tolist() == [2.0, 3.0, 4.0]


def test_engine_suite_all_ops_within_tolerance():
    for r in engine_suite(seed=7, n_inputs=100):
        assert r.max_rel_error < 1e-4, r


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=6))
def test_depth4_mlp_chain_gradient(vals):
    x = np.array(vals)
    n = len(x)
    w = np.linspace(-0.7, 0.9, n * n).reshape(n, n)

    def np_f(v):
        from scipy.special import erf as e
        g = lambda u: u * 0.5 * (1 + e(u / math.sqrt(2)))  # noqa: E731
        h = v[None, :]
        for _ in range(4):
            h = g(h @ w)
        return h.sum()

    def build(t):
        h = ad.reshape(t, (1, n))
        for _ in range(4):
            h = ad.gelu(h @ Tensor(w))
        return ad.sum(h)

    g = grad_of(build, x)
    num = fd_grad(np_f, x)
    assert np.max(np.abs(g - num) / np.maximum(np.abs(num), 1e-4)) < 1e-4
