"""Network ops: convolutions, pooling, heads — trivial oracles plus
finite-difference spot checks."""

import numpy as np
import pytest

from xmodal import nn_ops, tensor as T
from xmodal.gradcheck import check_scalar_fn
from xmodal.tensor import ShapeError, Tensor


def _weighted(reducer_weights):
    w = Tensor(reducer_weights)
    return lambda out: T.tsum(T.mul(out, w))


class TestConv2d:
    def test_identity_kernel(self, rng):
        x = rng.standard_normal((2, 1, 4, 5))
        w = Tensor(np.ones((1, 1, 1, 1)))
        b = Tensor(np.zeros(1))
        out = nn_ops.conv2d(Tensor(x), w, b)
        np.testing.assert_array_equal(out.data, x)

    def test_zero_input_gives_bias(self, rng):
        w = Tensor(rng.standard_normal((3, 2, 3, 3)))
        b = Tensor(np.array([1.0, -2.0, 0.5]))
        out = nn_ops.conv2d(Tensor(np.zeros((1, 2, 5, 5))), w, b, 1, 1)
        for c, bias in enumerate([1.0, -2.0, 0.5]):
            np.testing.assert_allclose(out.data[:, c], bias)

    def test_finite_difference(self, rng):
        x0 = rng.standard_normal((1, 3, 4, 4))
        w = Tensor(rng.standard_normal((2, 3, 3, 3)))
        b = Tensor(rng.standard_normal(2))
        red = _weighted(rng.standard_normal((1, 2, 4, 4)))
        err = check_scalar_fn(lambda x: red(nn_ops.conv2d(x, w, b, 1, 1)), x0)
        assert err <= 1e-4

    def test_stride_and_shape(self, rng):
        out = nn_ops.conv2d(Tensor(rng.standard_normal((1, 1, 7, 5))),
                            Tensor(rng.standard_normal((2, 1, 3, 3))),
                            Tensor(np.zeros(2)), stride=2, padding=1)
        assert out.shape == (1, 2, 4, 3)

    def test_unbatched_input(self, rng):
        x = rng.standard_normal((2, 4, 4))
        out = nn_ops.conv2d(Tensor(x), Tensor(rng.standard_normal((3, 2, 3, 3))),
                            Tensor(np.zeros(3)), 1, 1)
        assert out.shape == (3, 4, 4)

    def test_even_kernel_rejected(self, rng):
        with pytest.raises(ShapeError):
            nn_ops.conv2d(Tensor(np.zeros((1, 1, 4, 4))),
                          Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros(1)))

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            nn_ops.conv2d(Tensor(np.zeros((1, 2, 4, 4))),
                          Tensor(np.zeros((1, 3, 3, 3))), Tensor(np.zeros(1)))


class TestConv3d:
    def test_identity_kernel(self, rng):
        x = rng.standard_normal((1, 1, 3, 4, 5))
        out = nn_ops.conv3d(Tensor(x), Tensor(np.ones((1, 1, 1, 1, 1))), Tensor(np.zeros(1)))
        np.testing.assert_array_equal(out.data, x)

    def test_box_filter_on_constant_interior(self):
        c = 2.5
        x = Tensor(np.full((1, 1, 5, 5, 5), c))
        w = Tensor(np.full((1, 1, 3, 3, 3), 1.0 / 27.0))
        out = nn_ops.conv3d(x, w, Tensor(np.zeros(1)), (1, 1, 1), (1, 1, 1))
        interior = out.data[0, 0, 1:-1, 1:-1, 1:-1]
        np.testing.assert_allclose(interior, c)

    def test_finite_difference(self, rng):
        x0 = rng.standard_normal((1, 2, 4, 3, 3))
        w = Tensor(rng.standard_normal((2, 2, 3, 3, 3)))
        b = Tensor(rng.standard_normal(2))
        red = _weighted(rng.standard_normal((1, 2, 4, 3, 3)))
        err = check_scalar_fn(
            lambda x: red(nn_ops.conv3d(x, w, b, (1, 1, 1), (1, 1, 1))), x0)
        assert err <= 1e-4

    def test_anisotropic_stride_shape(self, rng):
        out = nn_ops.conv3d(Tensor(rng.standard_normal((1, 2, 4, 6, 6))),
                            Tensor(rng.standard_normal((2, 2, 3, 3, 3))),
                            Tensor(np.zeros(2)), stride=(1, 2, 2), padding=(1, 1, 1))
        assert out.shape == (1, 2, 4, 3, 3)


class TestHeads:
    def test_global_avg_pool_values(self):
        x = Tensor(np.arange(24, dtype=np.float64).reshape(1, 2, 3, 4))
        out = nn_ops.global_avg_pool(x)
        np.testing.assert_allclose(out.data, [[np.mean(range(12)), np.mean(range(12, 24))]])

    def test_global_avg_pool_3d_spatial(self, rng):
        x = rng.standard_normal((2, 3, 2, 4, 5))
        out = nn_ops.global_avg_pool(Tensor(x))
        np.testing.assert_allclose(out.data, x.mean(axis=(2, 3, 4)))

    def test_fully_connected(self):
        x = Tensor(np.array([[1.0, 2.0]]))
        w = Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))
        b = Tensor(np.array([10.0, 20.0]))
        np.testing.assert_allclose(nn_ops.fully_connected(x, w, b).data, [[11.0, 22.0]])

    def test_l2_normalize_three_four(self):
        out = nn_ops.l2_normalize(Tensor(np.array([3.0, 4.0])))
        np.testing.assert_allclose(out.data, [0.6, 0.8], atol=1e-12)

    def test_l2_normalize_rows_unit_norm(self, rng):
        x = rng.standard_normal((5, 7))
        out = nn_ops.l2_normalize(Tensor(x))
        np.testing.assert_allclose(np.linalg.norm(out.data, axis=-1), 1.0, atol=1e-9)

    def test_l2_normalize_zero_row_finite(self):
        out = nn_ops.l2_normalize(Tensor(np.zeros((1, 4))))
        assert np.isfinite(out.data).all()

    def test_l2_normalize_bad_eps(self):
        with pytest.raises(ValueError):
            nn_ops.l2_normalize(Tensor(np.ones(2)), eps=0.0)

    def test_softmax_ce_uniform_ln4(self):
        loss = nn_ops.softmax_cross_entropy(Tensor(np.zeros((3, 4))), [0, 1, 3])
        assert loss.item() == pytest.approx(np.log(4.0), abs=1e-12)

    def test_softmax_ce_target_out_of_range(self):
        with pytest.raises(IndexError):
            nn_ops.softmax_cross_entropy(Tensor(np.zeros((1, 4))), [4])

    def test_softmax_ce_gradient(self, rng):
        x0 = rng.standard_normal((4, 6))
        targets = rng.integers(0, 6, size=4)
        err = check_scalar_fn(lambda x: nn_ops.softmax_cross_entropy(x, targets), x0)
        assert err <= 1e-4

    def test_softmax_ce_shift_invariance(self, rng):
        x = rng.standard_normal((2, 5))
        a = nn_ops.softmax_cross_entropy(Tensor(x), [1, 2]).item()
        b = nn_ops.softmax_cross_entropy(Tensor(x + 1000.0), [1, 2]).item()
        assert a == pytest.approx(b, abs=1e-9)
