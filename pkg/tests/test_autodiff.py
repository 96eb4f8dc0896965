"""Tensor engine tests: forward oracles, backward vs finite differences, ADAM."""

import numpy as np
import pytest

from epsbench.autodiff import (
    AdamState,
    BatchNormState,
    ShapeError,
    Tensor,
    adam_step,
    add,
    batchnorm,
    conv2d,
    grad_check,
    param,
    relu,
)


def scalar_sumsq(t: Tensor) -> Tensor:
    """Test-local scalarizer: sum of squares, with its (exact) quadratic gradient."""
    val = np.asarray(float(np.sum(t.data * t.data)))

    def backward(g):
        if t.needs_grad():
            t.accumulate_grad(2.0 * float(g) * t.data)

    return Tensor.from_op(val, (t,), backward)


def naive_conv2d(x, k, b):
    """Independent 7-loop convolution oracle (zero padding, stride 1)."""
    N, C, H, W = x.shape
    O, _, kh, kw = k.shape
    ph, pw = kh // 2, kw // 2
    out = np.zeros((N, O, H, W))
    for n in range(N):
        for o in range(O):
            for y in range(H):
                for xx in range(W):
                    acc = b[o]
                    for c in range(C):
                        for dy in range(kh):
                            for dx in range(kw):
                                yy, xc = y + dy - ph, xx + dx - pw
                                if 0 <= yy < H and 0 <= xc < W:
                                    acc += x[n, c, yy, xc] * k[o, c, dy, dx]
                    out[n, o, y, xx] = acc
    return out


class TestConv2d:
    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.uniform(-1, 1, (2, 3, 6, 5)))
        k = np.zeros((3, 3, 3, 3))
        for c in range(3):
            k[c, c, 1, 1] = 1.0
        out = conv2d(x, Tensor(k), Tensor(np.zeros(3)))
        np.testing.assert_array_equal(out.data, x.data)

    def test_all_ones_3x3(self):
        x = Tensor(np.ones((1, 1, 3, 3)))
        out = conv2d(x, Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros(1)))
        assert out.data[0, 0, 1, 1] == 9.0
        assert out.data[0, 0, 0, 0] == 4.0

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(2, 2, 5, 5))
        k = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        out = conv2d(Tensor(x), Tensor(k), Tensor(b))
        np.testing.assert_allclose(out.data, naive_conv2d(x, k, b), atol=1e-12)

    def test_linearity(self):
        rng = np.random.default_rng(8)
        a = rng.normal(size=(1, 2, 4, 4))
        b = rng.normal(size=(1, 2, 4, 4))
        k = Tensor(rng.normal(size=(3, 2, 3, 3)))
        bias = Tensor(np.zeros(3))
        alpha, beta = 0.7, -1.3
        mixed = conv2d(Tensor(alpha * a + beta * b), k, bias)
        split = alpha * conv2d(Tensor(a), k, bias).data + beta * conv2d(Tensor(b), k, bias).data
        np.testing.assert_allclose(mixed.data, split, atol=1e-10)

    def test_channel_mismatch_raises(self):
        x = Tensor(np.zeros((1, 2, 4, 4)))
        k = Tensor(np.zeros((3, 5, 3, 3)))
        with pytest.raises(ShapeError, match="channels"):
            conv2d(x, k, Tensor(np.zeros(3)))

    def test_deterministic_forward(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(2, 3, 8, 8))
        k = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        o1 = conv2d(Tensor(x), Tensor(k), Tensor(b)).data
        o2 = conv2d(Tensor(x), Tensor(k), Tensor(b)).data
        assert np.array_equal(o1, o2)

    def test_input_gradient(self):
        rng = np.random.default_rng(10)
        k = Tensor(rng.normal(size=(2, 3, 3, 3)))
        b = Tensor(rng.normal(size=2))
        x0 = Tensor(rng.normal(size=(2, 3, 4, 5)))
        err = grad_check(lambda t: scalar_sumsq(conv2d(t, k, b)), x0)
        assert err < 1e-4

    def test_kernel_and_bias_gradient(self):
        rng = np.random.default_rng(11)
        x = Tensor(rng.normal(size=(1, 2, 5, 4)))
        b = Tensor(rng.normal(size=3))
        k0 = Tensor(rng.normal(size=(3, 2, 3, 3)))
        err = grad_check(lambda t: scalar_sumsq(conv2d(x, t, b)), k0)
        assert err < 1e-4
        err = grad_check(lambda t: scalar_sumsq(conv2d(x, k0, t)), b)
        assert err < 1e-4


class TestBatchNorm:
    def test_constant_input_gives_zeros(self):
        x = Tensor(np.full((2, 3, 4, 4), 7.0))
        st = BatchNormState.for_channels(3)
        out = batchnorm(x, Tensor(np.ones(3)), Tensor(np.zeros(3)), st, training=True)
        np.testing.assert_allclose(out.data, 0.0, atol=1e-12)

    def test_zero_gamma_gives_beta(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(size=(2, 3, 5, 5)))
        beta = np.array([1.0, -2.0, 0.5])
        st = BatchNormState.for_channels(3)
        out = batchnorm(x, Tensor(np.zeros(3)), Tensor(beta), st, training=True)
        np.testing.assert_array_equal(out.data, np.broadcast_to(
            beta[None, :, None, None], x.shape))

    def test_output_moments(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.normal(size=(2, 4, 6, 6)))
        beta = np.array([0.3, -0.1, 2.0, 0.0])
        st = BatchNormState.for_channels(4)
        out = batchnorm(x, Tensor(np.ones(4) * 1.5), Tensor(beta), st, training=True)
        # recompute moments directly
        means = out.data.mean(axis=(0, 2, 3))
        np.testing.assert_allclose(means, beta, atol=1e-10)

    def test_running_stats_update_and_infer(self):
        rng = np.random.default_rng(3)
        x = rng.normal(loc=2.0, scale=3.0, size=(4, 2, 8, 8))
        st = BatchNormState.for_channels(2)
        g, b = Tensor(np.ones(2)), Tensor(np.zeros(2))
        batchnorm(Tensor(x), g, b, st, training=True)
        assert st.initialized
        expected_mean = 0.9 * np.zeros(2) + 0.1 * x.mean(axis=(0, 2, 3))
        np.testing.assert_allclose(st.running_mean, expected_mean, atol=1e-12)
        out = batchnorm(Tensor(x), g, b, st, training=False)
        manual = (x - st.running_mean[None, :, None, None]) / np.sqrt(
            st.running_var[None, :, None, None] + st.eps)
        np.testing.assert_allclose(out.data, manual, atol=1e-12)

    def test_infer_uninitialized_raises(self):
        st = BatchNormState.for_channels(2)
        with pytest.raises(ValueError, match="uninitialized"):
            batchnorm(Tensor(np.zeros((1, 2, 3, 3))), Tensor(np.ones(2)),
                      Tensor(np.zeros(2)), st, training=False)

    def test_gradients_train_mode(self):
        rng = np.random.default_rng(4)
        gamma = Tensor(rng.uniform(0.5, 1.5, 3))
        beta = Tensor(rng.normal(size=3))
        x0 = Tensor(rng.normal(size=(2, 3, 4, 4)))

        def fn(t):
            st = BatchNormState.for_channels(3)
            return scalar_sumsq(batchnorm(t, gamma, beta, st, training=True))

        assert grad_check(fn, x0) < 1e-4

        x = Tensor(rng.normal(size=(2, 3, 4, 4)))

        def fn_gamma(t):
            st = BatchNormState.for_channels(3)
            return scalar_sumsq(batchnorm(x, t, beta, st, training=True))

        assert grad_check(fn_gamma, gamma) < 1e-4

        def fn_beta(t):
            st = BatchNormState.for_channels(3)
            return scalar_sumsq(batchnorm(x, gamma, t, st, training=True))

        assert grad_check(fn_beta, beta) < 1e-4


class TestRelu:
    def test_values(self):
        out = relu(Tensor(np.array([-1.0, 3.5, 0.0])))
        np.testing.assert_array_equal(out.data, [0.0, 3.5, 0.0])

    def test_gradient_sides(self):
        for x0, want in [(-2.0, 0.0), (2.0, 1.0)]:
            t = param(np.array([x0]))
            out = relu(t)
            s = scalar_sumsq(out)  # d/dx of relu(x)^2 = 2*relu(x)*1[x>0]
            s.backward()
            np.testing.assert_allclose(t.grad, [2.0 * max(x0, 0.0) * want], atol=1e-12)
        # and against central differences away from the kink
        err = grad_check(lambda t: scalar_sumsq(relu(t)),
                         Tensor(np.array([-2.0, 2.0, 1.5, -0.7])))
        assert err < 1e-8


class TestAdd:
    def test_zeros_identity(self):
        rng = np.random.default_rng(5)
        a = rng.normal(size=(2, 3, 4, 4))
        out = add(Tensor(a), Tensor(np.zeros_like(a)))
        np.testing.assert_array_equal(out.data, a)

    def test_elementwise_oracle(self):
        rng = np.random.default_rng(6)
        a, b = rng.normal(size=(3, 7)), rng.normal(size=(3, 7))
        out = add(Tensor(a), Tensor(b))
        expected = np.array([[a[i, j] + b[i, j] for j in range(7)] for i in range(3)])
        np.testing.assert_allclose(out.data, expected, atol=0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError, match="mismatch"):
            add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))

    def test_gradient_distributes(self):
        rng = np.random.default_rng(12)
        a = param(rng.normal(size=(2, 2)))
        b = param(rng.normal(size=(2, 2)))
        scalar_sumsq(add(a, b)).backward()
        np.testing.assert_allclose(a.grad, b.grad, atol=0)
        np.testing.assert_allclose(a.grad, 2.0 * (a.data + b.data), atol=1e-12)


def reference_adam(p, g_seq, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Independent scalar ADAM oracle."""
    m = v = 0.0
    for t, g in enumerate(g_seq, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p = p - lr * mhat / (np.sqrt(vhat) + eps)
    return p


class TestAdam:
    def test_first_step_sign(self):
        p = param(np.array([1.0, -2.0, 0.5]), name="w")
        g = np.array([0.3, -0.7, 2.0])
        st = AdamState(lr=1e-2)
        before = p.data.copy()
        adam_step([p], [g], st)
        # bias correction makes mhat=g, vhat=g^2 on step 1 -> update ~ -lr*sign(g)
        np.testing.assert_allclose(p.data - before, -1e-2 * np.sign(g), rtol=1e-6)
        assert st.step == 1

    def test_zero_gradient_no_move(self):
        p = param(np.array([3.0]))
        st = AdamState()
        adam_step([p], [np.zeros(1)], st)
        np.testing.assert_array_equal(p.data, [3.0])
        assert st.step == 1

    def test_two_steps_match_scalar_oracle(self):
        p = param(np.array([0.4]))
        st = AdamState(lr=0.05)
        for _ in range(2):
            adam_step([p], [np.array([1.7])], st)
        expected = reference_adam(0.4, [1.7, 1.7], lr=0.05)
        np.testing.assert_allclose(p.data, [expected], atol=1e-12)

    def test_lr_zero_is_identity(self):
        rng = np.random.default_rng(13)
        p = param(rng.normal(size=(4, 4)))
        before = p.data.copy()
        st = AdamState(lr=0.0)
        adam_step([p], [rng.normal(size=(4, 4))], st)
        np.testing.assert_array_equal(p.data, before)

    def test_moments_start_at_zero(self):
        st = AdamState()
        assert st.step == 0 and st.m == [] and st.v == []
        p = param(np.ones(2))
        adam_step([p], [np.ones(2)], st)
        assert len(st.m) == 1 and st.m[0].shape == (2,)

    def test_nonfinite_grad_names_param(self):
        p = param(np.ones(2), name="conv3.kernel")
        with pytest.raises(FloatingPointError, match="conv3.kernel"):
            adam_step([p], [np.array([1.0, np.nan])], AdamState())


class TestGradCheck:
    def test_sum_of_squares_exact(self):
        rng = np.random.default_rng(14)
        x = Tensor(rng.normal(size=(3, 4)))
        assert grad_check(scalar_sumsq, x, h=1e-5) < 1e-8

    def test_elementwise_ops_at_max_contract_shape(self):
        rng = np.random.default_rng(16)
        x = Tensor(rng.normal(size=(2, 8, 16, 16)) + 0.3)
        assert grad_check(lambda t: scalar_sumsq(relu(t)), x) < 1e-4
        other = Tensor(rng.normal(size=(2, 8, 16, 16)))
        assert grad_check(lambda t: scalar_sumsq(add(t, other)), x) < 1e-4


class TestDtypeConfig:
    def test_float32_opt_in(self):
        from epsbench.autodiff import get_default_dtype, set_default_dtype
        assert get_default_dtype() is np.float64
        set_default_dtype(np.float32)
        try:
            x = Tensor(np.ones((1, 2, 4, 4)))
            k = Tensor(np.zeros((2, 2, 3, 3)))
            out = conv2d(x, k, Tensor(np.zeros(2)))
            assert out.data.dtype == np.float32
        finally:
            set_default_dtype(np.float64)
        with pytest.raises(ValueError, match="float64 or float32"):
            set_default_dtype(np.int32)


class TestGraph:
    def test_finite_after_forward_backward(self):
        rng = np.random.default_rng(15)
        x = param(rng.normal(size=(2, 3, 6, 6)))
        k = param(rng.normal(size=(4, 3, 3, 3)) * 0.2)
        b = param(np.zeros(4))
        st = BatchNormState.for_channels(4)
        g, be = param(np.ones(4)), param(np.zeros(4))
        out = relu(batchnorm(conv2d(x, k, b), g, be, st, training=True))
        s = scalar_sumsq(out)
        s.backward()
        for t in (x, k, b, g, be, out, s):
            assert np.all(np.isfinite(t.data))
            if t.grad is not None:
                assert np.all(np.isfinite(t.grad))

    def test_grad_accumulates_on_reuse(self):
        x = param(np.array([[1.0, 2.0], [3.0, 4.0]]))
        scalar_sumsq(add(x, x)).backward()
        # d/dx sum((2x)^2) = 8x
        np.testing.assert_allclose(x.grad, 8.0 * x.data, atol=1e-12)
