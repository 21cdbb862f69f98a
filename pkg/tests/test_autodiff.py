import numpy as np
import pytest

from xconst import autodiff as ad
from xconst.errors import ContractError, NumericalError, ShapeError


def leaf(data):
    return ad.Tensor(data, requires_grad=True)


class TestForwardValues:
    def test_softmax_uniform_logits(self):
        out = ad.softmax(ad.Tensor([0.0, 0.0, 0.0]))
        np.testing.assert_allclose(out.data, [1 / 3, 1 / 3, 1 / 3], atol=1e-15)

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        out = ad.softmax(ad.Tensor(rng.normal(size=(5, 17))), axis=-1)
        np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_log_softmax_matches_log_of_softmax(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(4, 9))
        a = ad.log_softmax(ad.Tensor(x)).data
        b = np.log(ad.softmax(ad.Tensor(x)).data)
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_layer_norm_constant_vector_is_zero(self):
        out = ad.layer_norm(ad.Tensor(np.full((3, 8), 2.5)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-12)

    def test_matmul_identity(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(3, 3))
        out = ad.matmul(ad.Tensor(np.eye(3)), ad.Tensor(a))
        np.testing.assert_allclose(out.data, a)

    def test_matmul_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
            ad.matmul(ad.Tensor(np.zeros((2, 3))), ad.Tensor(np.zeros((4, 2))))

    def test_concat_and_slice_roundtrip(self):
        a, b = ad.Tensor([[1.0, 2.0]]), ad.Tensor([[3.0, 4.0]])
        cat = ad.concat([a, b], axis=0)
        np.testing.assert_allclose(ad.slice_(cat, np.s_[1:2]).data, b.data)

    def test_nonfinite_is_hard_failure(self):
        with pytest.raises(NumericalError):
            ad.Tensor([1.0, np.inf])


class TestBackward:
    def test_square(self):
        theta = leaf(3.0)
        out = ad.mul(theta, theta)
        ad.backward(out)
        assert theta.grad == pytest.approx(6.0)

    def test_fanout_accumulates(self):
        theta = leaf(1.5)
        out = ad.add(theta, theta)
        ad.backward(out)
        assert theta.grad == pytest.approx(2.0)

    def test_unreached_leaf_has_zero_grad(self):
        theta = leaf([1.0, 2.0])
        other = leaf(4.0)
        ad.backward(ad.mul(other, other))
        np.testing.assert_array_equal(theta.grad_array(), 0.0)

    def test_nonscalar_root_rejected(self):
        with pytest.raises(ContractError):
            ad.backward(leaf([1.0, 2.0]))

    def test_backward_linearity(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 4))

        def loss(factor):
            theta = leaf(x)
            out = ad.scale(ad.sum_(ad.mul(theta, theta)), factor)
            ad.backward(out)
            return theta.grad

        np.testing.assert_allclose(loss(3.0), 3.0 * loss(1.0), atol=1e-12)

    def test_softmax_ce_composite_gradient(self):
        # d/dlogits of -log softmax(logits)[k] is softmax(logits) - onehot(k).
        rng = np.random.default_rng(4)
        logits = leaf(rng.normal(size=7))
        onehot = np.zeros(7)
        onehot[3] = 1.0
        loss = ad.scale(ad.sum_(ad.mul(ad.log_softmax(logits), ad.Tensor(onehot))), -1.0)
        ad.backward(loss)
        p = np.exp(logits.data - logits.data.max())
        p /= p.sum()
        np.testing.assert_allclose(logits.grad, p - onehot, atol=1e-10)

    def test_broadcast_add_sums_gradient(self):
        bias = leaf(np.zeros(3))
        x = ad.Tensor(np.ones((4, 3)))
        ad.backward(ad.sum_(ad.add(x, bias)))
        np.testing.assert_allclose(bias.grad, 4.0)

    def test_gather_rows_accumulates_repeats(self):
        table = leaf(np.arange(6.0).reshape(3, 2))
        out = ad.gather_rows(table, [1, 1, 2])
        ad.backward(ad.sum_(out))
        np.testing.assert_allclose(table.grad, [[0, 0], [2, 2], [1, 1]])


class TestGradCheck:
    def test_quadratic_bowl_is_exact(self):
        theta = leaf(np.array([1.0, -2.0, 0.5]))
        err = ad.grad_check(
            lambda: ad.sum_(ad.mul(theta, theta)), {"theta": theta},
            eps=1e-3, samples=3, seed=0,
        )
        assert err < 1e-8

    def test_constant_loss_all_zero(self):
        theta = leaf(np.ones(4))
        err = ad.grad_check(
            lambda: ad.Tensor(5.0), {"theta": theta}, samples=4, seed=0
        )
        assert err == 0.0

    def test_mixed_ops(self):
        rng = np.random.default_rng(5)
        w = leaf(rng.normal(size=(6, 6)))
        x = ad.Tensor(rng.normal(size=(2, 6)))

        def loss():
            h = ad.gelu(ad.matmul(x, w))
            return ad.mean_(ad.mul(ad.softmax(h, axis=-1), ad.layer_norm(h)))

        assert ad.grad_check(loss, {"w": w}, samples=36, seed=1) < 1e-6

    def test_rejects_nonpositive_eps(self):
        theta = leaf(1.0)
        with pytest.raises(ContractError):
            ad.grad_check(lambda: ad.mul(theta, theta), {"theta": theta}, eps=0.0)


def test_no_grad_suppresses_tape():
    theta = leaf(2.0)
    with ad.no_grad():
        out = ad.mul(theta, theta)
    assert not out.requires_grad and out._parents == ()
