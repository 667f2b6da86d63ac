"""Forward-path checks of the tensor primitives against independent oracles."""

import numpy as np
import pytest

from arcd.autodiff import ShapeError, Tensor, backward, no_grad, ops
from arcd.autodiff.tensor import clear_record, record_length


def naive_conv2d(x, w, b, stride, padding):
    """Direct six-nested-loop cross-correlation."""
    n, c, h, width = x.shape
    k, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (width + 2 * padding - kw) // stride + 1
    out = np.zeros((n, k, ho, wo))
    for ni in range(n):
        for ki in range(k):
            for i in range(ho):
                for j in range(wo):
                    acc = b[ki]
                    for ci in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[ni, ci, i * stride + u,
                                          j * stride + v] * w[ki, ci, u, v]
                    out[ni, ki, i, j] = acc
    return out


def naive_conv3d(x, w, b, padding):
    n, c, t, h, width = x.shape
    k, _, kt, kh, kw = w.shape
    pt, ph, pw = padding
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))
    to = t + 2 * pt - kt + 1
    ho = h + 2 * ph - kh + 1
    wo = width + 2 * pw - kw + 1
    out = np.zeros((n, k, to, ho, wo))
    for ni in range(n):
        for ki in range(k):
            for ti in range(to):
                for i in range(ho):
                    for j in range(wo):
                        acc = b[ki]
                        for ci in range(c):
                            for u in range(kt):
                                for ii in range(kh):
                                    for jj in range(kw):
                                        acc += (xp[ni, ci, ti + u, i + ii, j + jj]
                                                * w[ki, ci, u, ii, jj])
                        out[ni, ki, ti, i, j] = acc
    return out


class TestConv2d:
    def test_scalar_multiply(self):
        x = Tensor(np.array([[[[1.0]]]]))
        w = Tensor(np.array([[[[2.0]]]]))
        b = Tensor(np.array([0.0]))
        assert ops.conv2d(x, w, b).data.item() == 2.0

    def test_all_ones_sums_window(self):
        x = Tensor(np.ones((1, 1, 3, 3)))
        w = Tensor(np.ones((1, 1, 3, 3)))
        b = Tensor(np.zeros(1))
        assert ops.conv2d(x, w, b).data.item() == 9.0

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(42)
        x = Tensor(rng.standard_normal((1, 2, 5, 5)))
        w = Tensor(rng.standard_normal((3, 2, 3, 3)))
        b = Tensor(rng.standard_normal(3))
        got = ops.conv2d(x, w, b).data
        want = naive_conv2d(x.data, w.data, b.data, 1, 0)
        assert np.abs(got - want).max() < 1e-12

    @pytest.mark.parametrize("stride,padding", [(1, 1), (2, 0), (2, 1), (3, 2)])
    def test_stride_padding_variants(self, stride, padding):
        rng = np.random.default_rng(stride * 10 + padding)
        x = Tensor(rng.standard_normal((2, 3, 6, 6)))
        w = Tensor(rng.standard_normal((4, 3, 3, 3)))
        b = Tensor(rng.standard_normal(4))
        got = ops.conv2d(x, w, b, stride=stride, padding=padding).data
        want = naive_conv2d(x.data, w.data, b.data, stride, padding)
        assert got.shape == want.shape
        assert np.abs(got - want).max() < 1e-12

    def test_output_size_formula(self):
        x = Tensor(np.zeros((1, 1, 7, 9)))
        w = Tensor(np.zeros((2, 1, 3, 3)))
        y = ops.conv2d(x, w, None, stride=2, padding=1)
        assert y.shape == (1, 2, (7 + 2 - 3) // 2 + 1, (9 + 2 - 3) // 2 + 1)

    def test_channel_mismatch_names_axis(self):
        x = Tensor(np.zeros((1, 3, 4, 4)))
        w = Tensor(np.zeros((2, 2, 3, 3)))
        with pytest.raises(ShapeError, match="axis 1"):
            ops.conv2d(x, w, None)

    def test_kernel_larger_than_input_names_axis(self):
        x = Tensor(np.zeros((1, 1, 2, 2)))
        w = Tensor(np.zeros((1, 1, 5, 3)))
        with pytest.raises(ShapeError, match="axis 2"):
            ops.conv2d(x, w, None)


class TestConv3d:
    def test_temporal_dot_product(self):
        x = Tensor(np.array([3.0, 5.0]).reshape(1, 1, 2, 1, 1))
        w = Tensor(np.array([2.0, 7.0]).reshape(1, 1, 2, 1, 1))
        b = Tensor(np.zeros(1))
        y = ops.conv3d(x, w, b)
        assert y.shape == (1, 1, 1, 1, 1)
        assert y.data.item() == pytest.approx(2 * 3 + 7 * 5, abs=1e-15)

    def test_zero_input_broadcasts_bias(self):
        x = Tensor(np.zeros((1, 2, 2, 3, 3)))
        w = Tensor(np.zeros((4, 2, 2, 3, 3)))
        b = Tensor(np.array([1.0, -2.0, 0.5, 3.0]))
        y = ops.conv3d(x, w, b, padding=(0, 1, 1))
        for k in range(4):
            assert (y.data[:, k] == b.data[k]).all()

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.standard_normal((1, 2, 2, 4, 4)))
        w = Tensor(rng.standard_normal((3, 2, 2, 3, 3)))
        b = Tensor(rng.standard_normal(3))
        got = ops.conv3d(x, w, b, padding=(0, 1, 1)).data
        want = naive_conv3d(x.data, w.data, b.data, (0, 1, 1))
        assert np.abs(got - want).max() < 1e-12


class TestBatchNorm:
    def _stats_identity_input(self, rng):
        # Per-channel mean 0, variance 1 by construction.
        x = rng.standard_normal((4, 3, 5, 5))
        x -= x.mean(axis=(0, 2, 3), keepdims=True)
        x /= x.std(axis=(0, 2, 3), keepdims=True)
        return x

    def test_normalized_input_is_identity(self):
        rng = np.random.default_rng(0)
        x = Tensor(self._stats_identity_input(rng))
        gamma = Tensor(np.ones(3))
        beta = Tensor(np.zeros(3))
        rm, rv = np.zeros(3), np.ones(3)
        y = ops.batch_norm(x, gamma, beta, rm, rv, training=True, eps=1e-12)
        assert np.abs(y.data - x.data).max() < 1e-6

    def test_zero_gamma_gives_beta(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.standard_normal((2, 3, 4, 4)))
        gamma = Tensor(np.zeros(3))
        beta = Tensor(np.array([1.0, -2.0, 0.25]))
        y = ops.batch_norm(x, gamma, beta, np.zeros(3), np.ones(3),
                           training=True)
        for c in range(3):
            assert (y.data[:, c] == beta.data[c]).all()

    def test_matches_formula_oracle(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((3, 4, 5, 5))
        gamma = rng.standard_normal(4)
        beta = rng.standard_normal(4)
        eps = 1e-5
        y = ops.batch_norm(Tensor(x), Tensor(gamma), Tensor(beta),
                           np.zeros(4), np.ones(4), training=True, eps=eps)
        mu = x.mean(axis=(0, 2, 3), keepdims=True)
        var = x.var(axis=(0, 2, 3), keepdims=True)
        want = gamma.reshape(1, 4, 1, 1) * (x - mu) / np.sqrt(var + eps) \
            + beta.reshape(1, 4, 1, 1)
        assert np.abs(y.data - want).max() < 1e-12

    def test_zero_variance_channel_is_finite(self):
        x = Tensor(np.full((2, 1, 3, 3), 5.0))
        y = ops.batch_norm(x, Tensor(np.ones(1)), Tensor(np.zeros(1)),
                           np.zeros(1), np.ones(1), training=True)
        assert np.isfinite(y.data).all()

    def test_eval_uses_running_stats(self):
        x = Tensor(np.array([[[[2.0, 4.0]]]]))
        rm, rv = np.array([1.0]), np.array([4.0])
        y = ops.batch_norm(x, Tensor(np.ones(1)), Tensor(np.zeros(1)),
                           rm, rv, training=False, eps=0.0)
        assert np.allclose(y.data, (x.data - 1.0) / 2.0)

    def test_running_stats_updated_in_train(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.standard_normal((4, 2, 3, 3)) * 2 + 1)
        rm, rv = np.zeros(2), np.ones(2)
        ops.batch_norm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)),
                       rm, rv, training=True, momentum=0.1)
        assert not np.allclose(rm, 0.0)
        mu = x.data.mean(axis=(0, 2, 3))
        assert np.allclose(rm, 0.1 * mu)

    def test_single_value_per_channel_rejected(self):
        x = Tensor(np.zeros((1, 2, 1, 1)))
        with pytest.raises(ShapeError):
            ops.batch_norm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)),
                           np.zeros(2), np.ones(2), training=True)


class TestElementwise:
    def test_one_minus(self):
        assert ops.one_minus(Tensor(np.array(0.3))).data == pytest.approx(0.7)

    def test_sigmoid_at_zero(self):
        assert ops.sigmoid(Tensor(np.array(0.0))).data == pytest.approx(0.5)

    def test_sigmoid_saturates_safely(self):
        y = ops.sigmoid(Tensor(np.array([-1000.0, -40.0, 40.0, 1000.0])))
        assert np.isfinite(y.data).all()
        assert y.data[0] == 0.0 and y.data[-1] == 1.0

    def test_relu(self):
        y = ops.relu(Tensor(np.array([-2.0, 0.0, 3.0])))
        assert (y.data == [0.0, 0.0, 3.0]).all()

    def test_mismatched_shapes_rejected(self):
        a = Tensor(np.zeros((2, 3)))
        b = Tensor(np.zeros((3, 2)))
        for op in (ops.add, ops.sub, ops.mul, ops.div):
            with pytest.raises(ShapeError):
                op(a, b)

    def test_general_broadcasting_rejected(self):
        # Per-row broadcasting is outside the supported cases.
        a = Tensor(np.zeros((2, 3)))
        b = Tensor(np.zeros((3,)))
        with pytest.raises(ShapeError):
            ops.add(a, b)

    def test_scalar_operands(self):
        a = Tensor(np.array([1.0, 2.0]))
        assert np.allclose(ops.add(a, 1.5).data, [2.5, 3.5])
        assert np.allclose(ops.sub(1.0, a).data, [0.0, -1.0])
        assert np.allclose(ops.mul(a, -2.0).data, [-2.0, -4.0])
        assert np.allclose(ops.div(a, 2.0).data, [0.5, 1.0])

    def test_clamp(self):
        y = ops.clamp(Tensor(np.array([-1.0, 0.5, 2.0])), 0.0, 1.0)
        assert (y.data == [0.0, 0.5, 1.0]).all()

    def test_concat_and_shapes(self):
        a = Tensor(np.ones((1, 2, 3, 3)))
        b = Tensor(np.zeros((1, 4, 3, 3)))
        y = ops.concat([a, b], axis=1)
        assert y.shape == (1, 6, 3, 3)
        with pytest.raises(ShapeError):
            ops.concat([a, Tensor(np.zeros((1, 4, 2, 3)))], axis=1)

    def test_global_avg_pool(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((2, 3, 4, 4))
        y = ops.global_avg_pool(Tensor(x))
        assert np.allclose(y.data, x.mean(axis=(2, 3)))

    def test_matvec_matches_numpy(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((3, 4))
        w = rng.standard_normal((5, 4))
        b = rng.standard_normal(5)
        y = ops.matvec(Tensor(x), Tensor(w), Tensor(b))
        assert np.allclose(y.data, x @ w.T + b)

    def test_scale_ops(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((2, 3, 4, 4))
        s = rng.standard_normal((2, 3))
        m = rng.standard_normal((2, 1, 4, 4))
        assert np.allclose(ops.scale_channels(Tensor(x), Tensor(s)).data,
                           x * s[:, :, None, None])
        assert np.allclose(ops.scale_map(Tensor(x), Tensor(m)).data, x * m)

    def test_stack_time(self):
        a = Tensor(np.ones((1, 2, 3, 3)))
        b = Tensor(np.zeros((1, 2, 3, 3)))
        y = ops.stack_time(a, b)
        assert y.shape == (1, 2, 2, 3, 3)
        assert (y.data[:, :, 0] == 1.0).all() and (y.data[:, :, 1] == 0.0).all()


class TestUpsample:
    def test_bilinear_checkerboard_hand_grid(self):
        # 2x2 checkerboard [[1,0],[0,1]] doubled with half-pixel centers.
        # Row weights per output index: (1,0), (.75,.25), (.25,.75), (0,1);
        # out[i,j] = r[i,0]*c[j,0] + r[i,1]*c[j,1] for this input.
        x = Tensor(np.array([[[[1.0, 0.0], [0.0, 1.0]]]]))
        y = ops.upsample_bilinear(x, 2)
        weights = np.array([[1.0, 0.0], [0.75, 0.25], [0.25, 0.75], [0.0, 1.0]])
        want = np.zeros((4, 4))
        for i in range(4):
            for j in range(4):
                want[i, j] = (weights[i, 0] * weights[j, 0]
                              + weights[i, 1] * weights[j, 1])
        assert np.abs(y.data[0, 0] - want).max() < 1e-15

    def test_bilinear_preserves_constants(self):
        x = Tensor(np.full((1, 2, 3, 3), 0.7))
        for factor in (2, 4, 8):
            y = ops.upsample_bilinear(x, factor)
            assert y.shape == (1, 2, 3 * factor, 3 * factor)
            assert np.abs(y.data - 0.7).max() < 1e-12

    def test_nearest_repeats_pixels(self):
        x = Tensor(np.arange(4.0).reshape(1, 1, 2, 2))
        y = ops.upsample_nearest(x, 2)
        assert (y.data[0, 0] == np.repeat(np.repeat(x.data[0, 0], 2, 0), 2, 1)).all()


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(np.random.default_rng(0).standard_normal((3, 4, 2)),
                   requires_grad=True)
        backward(ops.sum_all(x))
        assert (x.grad == 1.0).all()

    def test_quadratic_gives_2x(self):
        x = Tensor(np.random.default_rng(1).standard_normal((5, 5)),
                   requires_grad=True)
        backward(ops.sum_all(ops.mul(x, x)))
        assert np.allclose(x.grad, 2 * x.data)

    def test_gradients_accumulate_across_uses(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = ops.add(ops.mul(x, 3.0), ops.mul(x, x))
        backward(ops.sum_all(y))
        assert np.allclose(x.grad, 3.0 + 2 * x.data)

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.zeros((2, 2)), requires_grad=True)
        with pytest.raises(ShapeError, match="scalar"):
            backward(ops.mul(x, 1.0))

    def test_concat_distributes_exactly(self):
        rng = np.random.default_rng(2)
        a = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
        b = Tensor(rng.standard_normal((2, 5)), requires_grad=True)
        weights = rng.standard_normal((2, 8))
        backward(ops.sum_all(ops.mul(ops.concat([a, b], axis=1),
                                     Tensor(weights))))
        assert np.array_equal(a.grad, weights[:, :3])
        assert np.array_equal(b.grad, weights[:, 3:])

    def test_record_consumed_once(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = ops.sum_all(ops.mul(x, x))
        assert record_length() == 2
        backward(y)
        assert record_length() == 0

    def test_no_grad_suppresses_recording(self):
        clear_record()
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = ops.mul(x, x)
        assert record_length() == 0
        assert not y.requires_grad

    def test_deterministic_forward_backward(self):
        def run():
            rng = np.random.default_rng(123)
            x = Tensor(rng.standard_normal((2, 3, 8, 8)), requires_grad=True)
            w = Tensor(rng.standard_normal((4, 3, 3, 3)), requires_grad=True)
            y = ops.relu(ops.conv2d(x, w, None, padding=1))
            backward(ops.sum_all(ops.mul(y, y)))
            return y.data.copy(), x.grad.copy(), w.grad.copy()

        first = run()
        second = run()
        for a, b in zip(first, second):
            assert np.array_equal(a, b)


class TestArct:
    def test_roundtrip_exact(self, tmp_path):
        from arcd.autodiff import arct
        rng = np.random.default_rng(11)
        arr = rng.standard_normal((3, 4, 5)).astype(np.float32)
        path = tmp_path / "t.arct"
        arct.save(path, arr)
        back = arct.load(path)
        assert back.dtype == np.float32
        assert np.array_equal(back, arr)

    def test_header_layout(self, tmp_path):
        from arcd.autodiff import arct
        path = tmp_path / "t.arct"
        arct.save(path, np.zeros((2, 3), dtype=np.float32))
        raw = path.read_bytes()
        assert raw[:4] == b"ARCT"
        assert raw[4] == 1 and raw[5] == 2
        assert raw[6:14] == (2).to_bytes(4, "little") + (3).to_bytes(4, "little")
        assert len(raw) == 14 + 4 * 6

    def test_bad_magic_rejected(self, tmp_path):
        from arcd.autodiff import arct
        path = tmp_path / "bad.arct"
        path.write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(arct.ArctFormatError, match="magic"):
            arct.load(path)

    def test_truncation_rejected(self, tmp_path):
        from arcd.autodiff import arct
        path = tmp_path / "t.arct"
        arct.save(path, np.ones((4, 4), dtype=np.float32))
        clipped = path.read_bytes()[:-8]
        path.write_bytes(clipped)
        with pytest.raises(arct.ArctFormatError, match="truncated"):
            arct.load(path)
