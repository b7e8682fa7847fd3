import numpy as np
import numpy.testing as npt
import pytest

from cdcgan.tensor import (ShapeError, activation_backward, activation_forward,
                           bicubic_resize, conv2d_backward, conv2d_forward,
                           finite_diff_check)


def conv2d_naive(x, kernel, bias, stride=1, padding="same"):
    """Scalar-loop oracle for conv2d_forward (cross-correlation)."""
    kh, kw, cin, cout = kernel.shape
    b, h, w, _ = x.shape
    if padding == "same":
        oh, ow = -(-h // stride), -(-w // stride)
        ph = max((oh - 1) * stride + kh - h, 0)
        pw = max((ow - 1) * stride + kw - w, 0)
        pt, pl = ph // 2, pw // 2
    else:
        oh, ow = (h - kh) // stride + 1, (w - kw) // stride + 1
        pt = pl = 0
    out = np.zeros((b, oh, ow, cout))
    for bi in range(b):
        for oi in range(oh):
            for oj in range(ow):
                for o in range(cout):
                    acc = bias[o]
                    for i in range(kh):
                        for j in range(kw):
                            ii = oi * stride + i - pt
                            jj = oj * stride + j - pl
                            if 0 <= ii < h and 0 <= jj < w:
                                for c in range(cin):
                                    acc += x[bi, ii, jj, c] * kernel[i, j, c, o]
                    out[bi, oi, oj, o] = acc
    return out


class TestConvForward:
    def test_identity_1x1(self):
        x = np.full((1, 1, 1, 1), 5.0)
        k = np.ones((1, 1, 1, 1))
        out = conv2d_forward(x, k, np.zeros(1), 1, "valid")
        npt.assert_array_equal(out, [[[[5.0]]]])

    def test_constant_window_sum(self):
        x = np.ones((1, 3, 3, 1))
        k = np.ones((2, 2, 1, 1))
        out = conv2d_forward(x, k, np.zeros(1), 1, "valid")
        assert out.shape == (1, 2, 2, 1)
        npt.assert_array_equal(out, np.full((1, 2, 2, 1), 4.0))

    def test_same_padding_shape_9x9(self):
        x = np.zeros((1, 32, 32, 1))
        k = np.zeros((9, 9, 1, 96))
        out = conv2d_forward(x, k, np.zeros(96), 1, "same")
        assert out.shape == (1, 32, 32, 96)

    @pytest.mark.parametrize("k", [1, 5, 9])
    def test_same_preserves_size_stride1(self, k):
        x = np.random.default_rng(k).normal(size=(2, 13, 17, 3))
        kernel = np.random.default_rng(k + 1).normal(size=(k, k, 3, 2))
        out = conv2d_forward(x, kernel, np.zeros(2), 1, "same")
        assert out.shape == (2, 13, 17, 2)

    @pytest.mark.parametrize("kh,kw,cin,cout,stride,padding,h,w", [
        (3, 3, 2, 3, 1, "same", 6, 6),
        (3, 3, 2, 3, 1, "valid", 6, 6),
        (4, 4, 3, 2, 2, "same", 8, 9),
        (5, 5, 1, 2, 1, "valid", 7, 7),
        (2, 3, 2, 2, 2, "valid", 7, 8),
        (1, 1, 3, 4, 1, "same", 5, 5),
        # narrow-output layers take the per-position accumulation path
        (3, 3, 4, 2, 1, "same", 6, 6),
        (5, 5, 6, 1, 1, "same", 8, 8),
        (5, 5, 6, 1, 2, "valid", 9, 9),
        (1, 1, 4, 2, 1, "valid", 5, 5),
    ])
    def test_matches_naive_oracle(self, kh, kw, cin, cout, stride, padding, h, w):
        rng = np.random.default_rng(kh * 100 + kw * 10 + stride)
        x = rng.normal(size=(2, h, w, cin))
        kernel = rng.normal(size=(kh, kw, cin, cout))
        bias = rng.normal(size=cout)
        got = conv2d_forward(x, kernel, bias, stride, padding)
        want = conv2d_naive(x, kernel, bias, stride, padding)
        npt.assert_allclose(got, want, rtol=1e-12, atol=1e-12)

    def test_linearity_in_input(self):
        rng = np.random.default_rng(0)
        kernel = rng.normal(size=(3, 3, 2, 2))
        bias = np.zeros(2)  # linearity requires zero bias
        a = rng.normal(size=(1, 6, 6, 2))
        b = rng.normal(size=(1, 6, 6, 2))
        for seed in range(5):
            al, be = np.random.default_rng(seed).normal(size=2)
            lhs = conv2d_forward(al * a + be * b, kernel, bias)
            rhs = al * conv2d_forward(a, kernel, bias) + be * conv2d_forward(b, kernel, bias)
            npt.assert_allclose(lhs, rhs, rtol=1e-10, atol=1e-12)

    def test_linearity_in_kernel(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(1, 6, 6, 2))
        ka = rng.normal(size=(3, 3, 2, 2))
        kb = rng.normal(size=(3, 3, 2, 2))
        al, be = 0.37, -1.21
        lhs = conv2d_forward(x, al * ka + be * kb, np.zeros(2))
        rhs = al * conv2d_forward(x, ka, np.zeros(2)) + be * conv2d_forward(x, kb, np.zeros(2))
        npt.assert_allclose(lhs, rhs, rtol=1e-10, atol=1e-12)

    def test_channel_mismatch_raises(self):
        with pytest.raises(ShapeError):
            conv2d_forward(np.zeros((1, 4, 4, 2)), np.zeros((3, 3, 3, 1)), np.zeros(1))

    def test_valid_too_small_raises(self):
        with pytest.raises(ShapeError):
            conv2d_forward(np.zeros((1, 4, 4, 1)), np.zeros((5, 5, 1, 1)), np.zeros(1),
                           1, "valid")


class TestConvBackward:
    def test_zero_upstream_gives_zero_grads(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(1, 5, 5, 2))
        k = rng.normal(size=(3, 3, 2, 2))
        gx, gk, gb = conv2d_backward(x, k, np.zeros((1, 5, 5, 2)))
        assert not gx.any() and not gk.any() and not gb.any()

    def test_1x1_kernel_grad_is_input_weighted_sum(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(1, 4, 4, 1))
        k = rng.normal(size=(1, 1, 1, 1))
        up = rng.normal(size=(1, 4, 4, 1))
        _, gk, gb = conv2d_backward(x, k, up, 1, "valid")
        npt.assert_allclose(gk[0, 0, 0, 0], (x * up).sum(), rtol=1e-12)
        npt.assert_allclose(gb[0], up.sum(), rtol=1e-12)

    @pytest.mark.parametrize("cin,cout,stride,padding", [
        (2, 3, 1, "same"), (2, 3, 1, "valid"), (2, 3, 2, "same"),
        (2, 3, 2, "valid"), (4, 2, 1, "same"), (5, 1, 2, "valid"),
    ])
    def test_matches_finite_differences(self, cin, cout, stride, padding):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(1, 6, 6, cin))
        kernel = rng.normal(size=(3, 3, cin, cout))
        bias = rng.normal(size=cout)
        proj = rng.normal(size=conv2d_forward(x, kernel, bias, stride, padding).shape)

        def fn(params):
            xi, ki, bi = params
            out = conv2d_forward(xi, ki, bi, stride, padding)
            gx, gk, gb = conv2d_backward(xi, ki, proj, stride, padding)
            return float((out * proj).sum()), [gx, gk, gb]

        err = finite_diff_check(fn, [x, kernel, bias], probe_count=30, eps=1e-5, seed=5)
        assert err < 1e-6

    def test_need_input_grad_false_skips_input(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(1, 5, 5, 1))
        k = rng.normal(size=(3, 3, 1, 2))
        up = rng.normal(size=(1, 5, 5, 2))
        gx, gk, gb = conv2d_backward(x, k, up, need_input_grad=False)
        assert gx is None
        _, gk2, gb2 = conv2d_backward(x, k, up)
        npt.assert_array_equal(gk, gk2)
        npt.assert_array_equal(gb, gb2)

    def test_upstream_shape_mismatch_raises(self):
        with pytest.raises(ShapeError):
            conv2d_backward(np.zeros((1, 5, 5, 1)), np.zeros((3, 3, 1, 1)),
                            np.zeros((1, 4, 4, 1)))


class TestActivations:
    def test_relu_values(self):
        out = activation_forward(np.array([[[[-1.0], [0.0], [2.0]]]]), "relu")
        npt.assert_array_equal(out.ravel(), [0.0, 0.0, 2.0])

    def test_sigmoid_at_zero(self):
        assert activation_forward(np.zeros((1, 1, 1, 1)), "sigmoid")[0, 0, 0, 0] == 0.5

    def test_leaky_relu_slope(self):
        out = activation_forward(np.array([[[[-1.0]]]]), "leaky_relu", slope=0.2)
        npt.assert_allclose(out[0, 0, 0, 0], -0.2)

    def test_sigmoid_extremes_stay_finite(self):
        out = activation_forward(np.array([[[[-800.0], [800.0]]]]), "sigmoid")
        assert np.all(np.isfinite(out))
        assert 0.0 <= out.min() and out.max() <= 1.0

    @pytest.mark.parametrize("kind", ["relu", "leaky_relu", "sigmoid", "identity"])
    def test_backward_matches_finite_differences(self, kind):
        rng = np.random.default_rng(6)
        # keep away from the relu kink at 0
        x = rng.uniform(0.1, 1.0, (1, 4, 4, 2)) * rng.choice([-1.0, 1.0], (1, 4, 4, 2))
        proj = rng.normal(size=x.shape)

        def fn(params):
            xi = params[0]
            post = activation_forward(xi, kind)
            return float((post * proj).sum()), [activation_backward(proj, xi, post, kind)]

        assert finite_diff_check(fn, [x], probe_count=20, eps=1e-5, seed=7) < 1e-6

    def test_unknown_kind_raises(self):
        with pytest.raises(ValueError):
            activation_forward(np.zeros((1, 1, 1, 1)), "tanh")


class TestBicubicResize:
    def test_constant_stays_constant(self):
        img = np.full((1, 8, 10, 2), 0.37)
        for scale in (0.5, 2.0, 4.0, 0.25):
            out = bicubic_resize(img, scale)
            # output dims round half up: floor(dim * scale + 0.5)
            assert out.shape[1] == int(np.floor(8 * scale + 0.5))
            assert out.shape[2] == int(np.floor(10 * scale + 0.5))
            npt.assert_allclose(out, 0.37, atol=1e-12)

    def test_scale_one_is_identity(self):
        rng = np.random.default_rng(8)
        img = rng.uniform(0, 1, (1, 7, 9, 3))
        npt.assert_array_equal(bicubic_resize(img, 1.0), img)

    def test_round_trip_on_smooth_ramp(self):
        yy, xx = np.mgrid[0:16, 0:16] / 16.0
        img = (0.3 + 0.4 * xx + 0.2 * yy)[None, :, :, None]
        back = bicubic_resize(bicubic_resize(img, 2.0), 0.5)
        assert np.abs(back - img).max() < 0.02 * (img.max() - img.min())

    def test_range_overshoot_bounded(self):
        rng = np.random.default_rng(9)
        img = rng.uniform(0.2, 0.8, (1, 12, 12, 1))
        out = bicubic_resize(img, 2.0)
        lo, hi = img.min(), img.max()
        rng_span = hi - lo
        assert out.min() >= lo - 0.25 * rng_span
        assert out.max() <= hi + 0.25 * rng_span

    def test_non_positive_output_raises(self):
        with pytest.raises(ShapeError):
            bicubic_resize(np.ones((1, 1, 1, 1)), 0.25)

    @pytest.mark.parametrize("scale,seed", [(2.0, 0), (0.5, 1), (1.5, 2)])
    def test_matches_scalar_loop_oracle(self, scale, seed):
        def cubic(t):
            t = abs(t)
            if t <= 1.0:
                return 1.5 * t ** 3 - 2.5 * t ** 2 + 1.0
            if t < 2.0:
                return -0.5 * t ** 3 + 2.5 * t ** 2 - 4.0 * t + 2.0
            return 0.0

        def resize_1d(v, out_size):
            n = len(v)
            out = np.zeros(out_size)
            for i in range(out_size):
                src = (i + 0.5) * n / out_size - 0.5
                base = int(np.floor(src))
                acc = 0.0
                for k in range(-1, 3):
                    acc += cubic(src - (base + k)) * v[min(max(base + k, 0), n - 1)]
                out[i] = acc
            return out

        rng = np.random.default_rng(seed)
        img = rng.uniform(0, 1, (1, 6, 8, 1))
        got = bicubic_resize(img, scale)
        oh, ow = got.shape[1], got.shape[2]
        rows = np.stack([resize_1d(img[0, i, :, 0], ow) for i in range(6)])
        want = np.stack([resize_1d(rows[:, j], oh) for j in range(ow)], axis=1)
        npt.assert_allclose(got[0, :, :, 0], want, rtol=1e-10, atol=1e-12)


class TestFiniteDiffCheck:
    def test_linear_function_near_exact(self):
        rng = np.random.default_rng(10)
        w = rng.normal(size=(4, 3))
        p = rng.normal(size=(4, 3))

        def fn(params):
            return float((params[0] * w).sum()), [w.copy()]

        assert finite_diff_check(fn, [p], probe_count=12, eps=1e-3, seed=11) < 1e-10

    def test_detects_corrupted_gradient(self):
        rng = np.random.default_rng(12)
        w = rng.normal(size=(4, 3))
        p = rng.normal(size=(4, 3))

        def fn(params):
            bad = w.copy()
            bad += 0.3
            return float((params[0] * w).sum()), [bad]

        assert finite_diff_check(fn, [p], probe_count=12, eps=1e-4, seed=13) > 1e-2

    def test_eps_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            finite_diff_check(lambda p: (0.0, [np.zeros(1)]), [np.zeros(1)], eps=1e-2)
