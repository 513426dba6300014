import numpy as np
import pytest

from velinv.net import ops


def conv2d_reference(x, w, b):
    """Nested-loop same-padding convolution oracle."""
    bs, c, h, wd = x.shape
    k, _, kh, kw = w.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    y = np.zeros((bs, k, h, wd))
    for n in range(bs):
        for o in range(k):
            for i in range(h):
                for j in range(wd):
                    y[n, o, i, j] = np.sum(xp[n, :, i : i + kh, j : j + kw] * w[o]) + b[o]
    return y


class TestConv2d:
    def test_matches_reference(self, rng):
        x = rng.normal(size=(2, 3, 6, 7))
        w = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        y, _ = ops.conv2d_forward(x, w, b)
        assert np.allclose(y, conv2d_reference(x, w, b), atol=1e-12)

    def test_1x1_kernel(self, rng):
        x = rng.normal(size=(1, 5, 4, 4))
        w = rng.normal(size=(2, 5, 1, 1))
        b = np.zeros(2)
        y, _ = ops.conv2d_forward(x, w, b)
        assert np.allclose(y, np.einsum("bchw,kc->bkhw", x, w[:, :, 0, 0]), atol=1e-12)

    def test_backward_finite_difference(self, rng):
        x = rng.normal(size=(1, 2, 5, 5))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        y, cache = ops.conv2d_forward(x, w, b)
        g = rng.normal(size=y.shape)
        dx, dw, db = ops.conv2d_backward(g, cache)
        h = 1e-6
        for arr, grad in ((x, dx), (w, dw), (b, db)):
            flat = arr.reshape(-1)
            for idx in rng.integers(0, flat.size, size=8):
                orig = flat[idx]
                flat[idx] = orig + h
                f1 = float(np.sum(ops.conv2d_forward(x, w, b)[0] * g))
                flat[idx] = orig - h
                f0 = float(np.sum(ops.conv2d_forward(x, w, b)[0] * g))
                flat[idx] = orig
                fd = (f1 - f0) / (2 * h)
                assert fd == pytest.approx(float(grad.reshape(-1)[idx]), rel=1e-5, abs=1e-7)

    def test_channel_mismatch(self, rng):
        with pytest.raises(ValueError, match="channels"):
            ops.conv2d_forward(rng.normal(size=(1, 2, 4, 4)),
                               rng.normal(size=(3, 5, 3, 3)), np.zeros(3))


class TestPooling:
    def test_forward_blocks(self):
        x = np.arange(16.0).reshape(1, 1, 4, 4)
        y, _ = ops.maxpool2_forward(x)
        assert np.array_equal(y[0, 0], [[5.0, 7.0], [13.0, 15.0]])

    def test_backward_routes_to_argmax(self):
        x = np.arange(16.0).reshape(1, 1, 4, 4)
        y, cache = ops.maxpool2_forward(x)
        dy = np.ones_like(y)
        dx = ops.maxpool2_backward(dy, cache)
        expected = np.zeros((4, 4))
        expected[1, 1] = expected[1, 3] = expected[3, 1] = expected[3, 3] = 1.0
        assert np.array_equal(dx[0, 0], expected)

    def test_odd_size_rejected(self):
        with pytest.raises(ValueError, match="even"):
            ops.maxpool2_forward(np.zeros((1, 1, 5, 4)))


class TestUpsample:
    def test_forward_repeats(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
        y = ops.upsample2_forward(x)
        assert np.array_equal(y[0, 0, :2, :2], [[1.0, 1.0], [1.0, 1.0]])
        assert y.shape == (1, 1, 4, 4)

    def test_backward_sums_blocks(self, rng):
        dy = rng.normal(size=(1, 2, 4, 6))
        dx = ops.upsample2_backward(dy)
        assert dx.shape == (1, 2, 2, 3)
        assert dx[0, 0, 0, 0] == pytest.approx(dy[0, 0, :2, :2].sum())

    def test_adjoint_identity(self, rng):
        # <up(x), y> == <x, up^T(y)>
        x = rng.normal(size=(1, 1, 3, 3))
        y = rng.normal(size=(1, 1, 6, 6))
        assert np.sum(ops.upsample2_forward(x) * y) == pytest.approx(
            np.sum(x * ops.upsample2_backward(y)))


class TestPadding:
    def test_pads_to_multiple(self, rng):
        x = rng.normal(size=(1, 2, 13, 21)).astype(np.float32)
        padded, (h, w) = ops.pad_to_multiple(x, 8)
        assert padded.shape == (1, 2, 16, 24)
        assert (h, w) == (13, 21)
        assert np.array_equal(padded[..., :13, :21], x)

    def test_no_pad_needed(self, rng):
        x = rng.normal(size=(1, 1, 16, 16))
        padded, _ = ops.pad_to_multiple(x, 8)
        assert padded is x


class TestSobel:
    def test_constant_zero(self):
        gx, gy = ops.sobel_filter(np.full((6, 6), 3.3))
        assert np.allclose(gx, 0.0) and np.allclose(gy, 0.0)

    def test_x_ramp(self):
        img = np.tile(np.arange(7.0), (6, 1))
        gx, gy = ops.sobel_filter(img)
        assert np.allclose(gx, 8.0)
        assert np.allclose(gy, 0.0)

    def test_y_ramp(self):
        img = np.tile(np.arange(6.0)[:, None], (1, 7))
        gx, gy = ops.sobel_filter(img)
        assert np.allclose(gy, 8.0)
        assert np.allclose(gx, 0.0)

    def test_undersized_rejected(self):
        with pytest.raises(ValueError, match="3x3"):
            ops.sobel_filter(np.zeros((2, 5)))

    def test_adjoint_identity(self, rng):
        img = rng.normal(size=(7, 9))
        gx, gy = ops.sobel_filter(img)
        u = rng.normal(size=gx.shape)
        v = rng.normal(size=gy.shape)
        lhs = np.sum(gx * u) + np.sum(gy * v)
        rhs = np.sum(img * ops.sobel_adjoint(u, v, img.shape))
        assert lhs == pytest.approx(rhs, rel=1e-12)
