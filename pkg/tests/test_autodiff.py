import numpy as np
import pytest

from cenic import autodiff as ad
from cenic import config
from cenic.errors import ChannelMismatch, InvalidStride, NotDifferentiable

from oracles import central_diff, conv2d_loops, deconv2d_loops


@pytest.fixture(autouse=True)
def float64_mode():
    config.set_default_dtype(np.float64)
    yield
    config.set_default_dtype(np.float64)


def rel_err(a, b):
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return np.max(np.abs(a - b)) / scale


def rand_weights(rng, o, c, k, dtype=np.float64):
    kernel = rng.uniform(-0.5, 0.5, size=(o, c, k, k)).astype(dtype)
    bias = rng.uniform(-0.5, 0.5, size=(o,)).astype(dtype)
    return kernel, bias


class TestConv2d:
    def test_identity_kernel(self):
        x = np.full((1, 1, 1, 1), 3.25)
        out = ad.conv2d_array(x, np.ones((1, 1, 1, 1)), np.zeros(1), 1)
        assert out.shape == (1, 1, 1, 1)
        assert out[0, 0, 0, 0] == 3.25

    def test_hand_evaluated_padded_sum(self):
        # 2x2 ones, K=3 S=2: single output window sums the four ones
        x = np.ones((1, 1, 2, 2))
        out = ad.conv2d_array(x, np.ones((1, 1, 3, 3)), np.zeros(1), 2)
        assert out.shape == (1, 1, 1, 1)
        assert out[0, 0, 0, 0] == 4.0

    def test_against_loop_oracle(self):
        rng = np.random.default_rng(7)
        x = rng.uniform(-0.5, 0.5, size=(2, 3, 8, 8))
        kernel, bias = rand_weights(rng, 4, 3, 5)
        got = ad.conv2d_array(x, kernel, bias, 2)
        want = conv2d_loops(x, kernel, bias, 2)
        assert rel_err(got, want) < 1e-6

    @pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-6), (np.float64, 1e-12)])
    def test_oracle_equivalence_random_instances(self, dtype, tol):
        rng = np.random.default_rng(11)
        for _ in range(25):
            n = int(rng.integers(1, 5))
            c = int(rng.integers(1, 9))
            o = int(rng.integers(1, 9))
            h = int(rng.integers(1, 17))
            w = int(rng.integers(1, 17))
            k = int(rng.choice([1, 3, 5]))
            s = int(rng.integers(1, 4))
            x = rng.uniform(-0.5, 0.5, size=(n, c, h, w)).astype(dtype)
            kernel, bias = rand_weights(rng, o, c, k, dtype)
            got = ad.conv2d_array(x, kernel, bias, s)
            want = conv2d_loops(
                x.astype(np.float64), kernel.astype(np.float64),
                bias.astype(np.float64), s,
            )
            assert got.shape == want.shape
            assert rel_err(got.astype(np.float64), want) < tol

    def test_output_shape_rule(self):
        x = np.zeros((1, 2, 13, 7))
        kernel, bias = rand_weights(np.random.default_rng(0), 5, 2, 3)
        out = ad.conv2d_array(x, kernel, bias, 2)
        assert out.shape == (1, 5, 7, 4)

    def test_channel_mismatch(self):
        x = np.zeros((1, 2, 4, 4))
        with pytest.raises(ChannelMismatch):
            ad.conv2d_array(x, np.zeros((3, 3, 3, 3)), np.zeros(3), 1)

    def test_invalid_stride(self):
        x = np.zeros((1, 2, 4, 4))
        with pytest.raises(InvalidStride):
            ad.conv2d_array(x, np.zeros((3, 2, 3, 3)), np.zeros(3), 0)


class TestDeconv2d:
    def test_identity_kernel(self):
        x = np.full((1, 1, 1, 1), -1.5)
        out = ad.deconv2d_array(x, np.ones((1, 1, 1, 1)), np.zeros(1), 1)
        assert out[0, 0, 0, 0] == -1.5

    def test_stride2_subsampling_adjoint(self):
        x = np.ones((1, 1, 1, 1))
        out = ad.deconv2d_array(x, np.ones((1, 1, 1, 1)), np.zeros(1), 2)
        assert out.shape == (1, 1, 2, 2)
        assert np.count_nonzero(out) == 1
        assert out.sum() == 1.0

    def test_against_loop_oracle(self):
        rng = np.random.default_rng(13)
        for _ in range(25):
            n = int(rng.integers(1, 4))
            i = int(rng.integers(1, 7))
            o = int(rng.integers(1, 7))
            h = int(rng.integers(1, 9))
            w = int(rng.integers(1, 9))
            k = int(rng.choice([1, 3, 5]))
            s = int(rng.integers(1, 4))
            x = rng.uniform(-0.5, 0.5, size=(n, i, h, w))
            kernel, bias = rand_weights(rng, o, i, k)
            got = ad.deconv2d_array(x, kernel, bias, s)
            want = deconv2d_loops(x, kernel, bias, s)
            assert got.shape == (n, o, h * s, w * s)
            assert rel_err(got, want) < 1e-12

    def test_adjoint_identity(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            n = int(rng.integers(1, 4))
            c = int(rng.integers(1, 8))
            o = int(rng.integers(1, 8))
            s = int(rng.integers(1, 4))
            h = int(rng.integers(1, 13)) * s
            w = int(rng.integers(1, 13)) * s
            k = int(rng.choice([1, 3, 5]))
            x = rng.standard_normal((n, c, h, w))
            y = rng.standard_normal((n, o, h // s, w // s))
            kernel = rng.standard_normal((o, c, k, k))
            zero_o = np.zeros(o)
            zero_c = np.zeros(c)
            lhs = np.sum(ad.conv2d_array(x, kernel, zero_o, s) * y)
            rhs = np.sum(
                x * ad.deconv2d_array(y, kernel.transpose(1, 0, 2, 3), zero_c, s)
            )
            assert abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-12) < 1e-4


class TestGradients:
    def test_scalar_square(self):
        x = ad.Tensor(3.0, requires_grad=True)
        y = ad.square(x)
        (g,) = ad.vjp(y, [x], np.asarray(1.0))
        assert g == 6.0

    def test_constant_has_zero_gradient(self):
        x = ad.Tensor(np.ones((2, 2)), requires_grad=True)
        const = ad.Tensor(np.full((2, 2), 5.0))
        y = ad.tsum(const)
        (g,) = ad.vjp(y, [x])
        assert np.array_equal(g, np.zeros((2, 2)))

    def test_conv2d_finite_difference(self):
        rng = np.random.default_rng(23)
        x = ad.Tensor(rng.standard_normal((1, 2, 5, 5)), requires_grad=True)
        kernel = ad.Tensor(rng.standard_normal((3, 2, 3, 3)) * 0.3, requires_grad=True)
        bias = ad.Tensor(rng.standard_normal(3) * 0.1, requires_grad=True)
        w = rng.standard_normal((1, 3, 3, 3))

        def loss():
            with ad.no_grad():
                out = ad.conv2d_array(x.data, kernel.data, bias.data, 2)
            return float(np.sum(out * w))

        out = ad.tsum(ad.mul(ad.conv2d(x, kernel, bias, 2), ad.Tensor(w)))
        gx, gk, gb = ad.vjp(out, [x, kernel, bias])
        for got, arr in ((gx, x.data), (gk, kernel.data), (gb, bias.data)):
            want = central_diff(loss, arr)
            assert rel_err(got, want) < 1e-3

    def test_deconv2d_finite_difference(self):
        rng = np.random.default_rng(29)
        x = ad.Tensor(rng.standard_normal((1, 3, 4, 4)), requires_grad=True)
        kernel = ad.Tensor(rng.standard_normal((2, 3, 3, 3)) * 0.3, requires_grad=True)
        bias = ad.Tensor(rng.standard_normal(2) * 0.1, requires_grad=True)
        w = rng.standard_normal((1, 2, 8, 8))

        def loss():
            with ad.no_grad():
                out = ad.deconv2d_array(x.data, kernel.data, bias.data, 2)
            return float(np.sum(out * w))

        out = ad.tsum(ad.mul(ad.deconv2d(x, kernel, bias, 2), ad.Tensor(w)))
        gx, gk, gb = ad.vjp(out, [x, kernel, bias])
        for got, arr in ((gx, x.data), (gk, kernel.data), (gb, bias.data)):
            want = central_diff(loss, arr)
            assert rel_err(got, want) < 1e-3

    @pytest.mark.parametrize(
        "op",
        [
            ad.absolute, ad.square, ad.sqrt, ad.exp, ad.log, ad.sigmoid,
            ad.ndtr, ad.relu, lambda t: ad.power(t, 0.37), ad.avgpool2,
        ],
    )
    def test_elementwise_finite_difference(self, op):
        rng = np.random.default_rng(31)
        base = rng.uniform(0.5, 2.0, size=(1, 2, 4, 4))
        x = ad.Tensor(base, requires_grad=True)
        w = rng.standard_normal((1, 2, 4, 4))

        def loss():
            with ad.no_grad():
                val = op(ad.Tensor(x.data)).data
            return float(np.sum(val * w[..., : val.shape[2], : val.shape[3]]))

        out = op(x)
        wt = w[..., : out.shape[2], : out.shape[3]]
        (g,) = ad.vjp(ad.tsum(ad.mul(out, ad.Tensor(wt))), [x])
        want = central_diff(loss, x.data)
        assert rel_err(g, want) < 1e-3

    def test_broadcast_gradients(self):
        rng = np.random.default_rng(37)
        a = ad.Tensor(rng.standard_normal((2, 3, 4, 4)), requires_grad=True)
        b = ad.Tensor(rng.standard_normal((1, 3, 1, 1)), requires_grad=True)
        out = ad.tsum(ad.mul(ad.add(a, b), ad.add(a, b)))
        ga, gb = ad.vjp(out, [a, b])
        assert ga.shape == a.shape and gb.shape == b.shape
        want = central_diff(
            lambda: float(np.sum((a.data + b.data) ** 2)), b.data
        )
        assert rel_err(gb, want) < 1e-3

    def test_nondifferentiable_node_raises(self):
        x = ad.Tensor(np.ones(3), requires_grad=True)
        y = ad.nondifferentiable(np.round(x.data), (x,), "round")
        with pytest.raises(NotDifferentiable):
            ad.tsum(y).backward()


class TestDeterminism:
    def test_bitwise_identical_forward_and_backward(self):
        rng = np.random.default_rng(41)
        x = rng.standard_normal((2, 4, 16, 16))
        kernel, bias = rand_weights(rng, 6, 4, 5)
        dy = rng.standard_normal((2, 6, 8, 8))
        a1 = ad.conv2d_array(x, kernel, bias, 2)
        a2 = ad.conv2d_array(x, kernel, bias, 2)
        assert np.array_equal(a1, a2)
        g1 = ad.conv2d_input_grad_array(dy, kernel, 2, (16, 16))
        g2 = ad.conv2d_input_grad_array(dy, kernel, 2, (16, 16))
        assert np.array_equal(g1, g2)


class TestPadToMultiple:
    def test_already_multiple(self):
        img = np.zeros((1, 3, 64, 64))
        padded, dims = ad.pad_to_multiple(img, 64)
        assert padded.shape == (1, 3, 64, 64) and dims == (64, 64)

    def test_round_trip(self):
        rng = np.random.default_rng(43)
        img = rng.uniform(size=(1, 3, 100, 80))
        padded, dims = ad.pad_to_multiple(img, 64)
        assert padded.shape == (1, 3, 128, 128)
        assert np.array_equal(ad.crop_to(padded, dims), img)

    def test_single_pixel_replication(self):
        img = np.full((1, 3, 1, 1), 0.7)
        padded, dims = ad.pad_to_multiple(img, 64)
        assert padded.shape == (1, 3, 64, 64)
        assert np.all(padded == 0.7)
