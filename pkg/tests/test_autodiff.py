import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from daelab.autodiff import (AdamState, NumericError, Parameter, Rng, ShapeError, Tensor,
                             activation, adam_step, bce_loss, conv2d, conv2d_transpose,
                             dense, grad_check, lr_at_epoch, relu, sigmoid)


def _conv_reference(x, k, stride, pad):
    """Direct nested-loop cross-correlation with explicit zero padding."""
    (pt, pb), (pl, pr) = pad
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    n, c, h, w = xp.shape
    o, _, kh, kw = k.shape
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for b in range(n):
        for oc in range(o):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[b, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
                    out[b, oc, i, j] = np.sum(patch * k[oc])
    return out


class TestConv2d:
    def test_identity_size(self):
        out = conv2d(Tensor([[[[3.0]]]]), Tensor([[[[2.0]]]]), Tensor([0.0]), stride=1)
        assert out.shape == (1, 1, 1, 1)
        assert out.data[0, 0, 0, 0] == pytest.approx(6.0)

    def test_hand_convolution_valid(self):
        out = conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 2, 2))),
                     Tensor([0.0]), stride=1, padding="valid")
        assert out.shape == (1, 1, 2, 2)
        np.testing.assert_array_equal(out.data, 4.0)

    @pytest.mark.parametrize("size,stride,k", [(8, 1, 4), (8, 2, 4), (7, 2, 5), (5, 2, 4)])
    def test_matches_loop_reference_same_padding(self, size, stride, k):
        from daelab.autodiff import same_padding
        rng = np.random.default_rng(0)
        x = rng.normal(size=(2, 3, size, size))
        kern = rng.normal(size=(4, 3, k, k))
        pad = (same_padding(size, k, stride),) * 2
        out = conv2d(Tensor(x), Tensor(kern), None, stride=stride)
        np.testing.assert_allclose(out.data, _conv_reference(x, kern, stride, pad), atol=1e-10)
        assert out.shape[2] == -(-size // stride)

    def test_kernel_gradient_finite_difference(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 2, 5, 5))
        err = grad_check(lambda k, b: conv2d(Tensor(x), k, b, stride=2).sum(),
                         rng.normal(size=(3, 2, 4, 4)), rng.normal(size=3))
        assert err < 1e-6

    def test_input_gradient_finite_difference(self):
        rng = np.random.default_rng(2)
        k = rng.normal(size=(3, 2, 4, 4))
        w = rng.normal(size=(2, 3, 4, 4))
        err = grad_check(lambda x: (conv2d(x, Tensor(k), stride=2) * Tensor(w)).sum(),
                         rng.normal(size=(2, 2, 8, 8)))
        assert err < 1e-6

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError, match="channels"):
            conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 2, 2))))

    def test_non_finite_output(self):
        with pytest.raises(NumericError):
            conv2d(Tensor(np.full((1, 1, 2, 2), np.inf)), Tensor(np.ones((1, 1, 1, 1))))


class TestConv2dTranspose:
    def test_identity_size(self):
        out = conv2d_transpose(Tensor([[[[3.0]]]]), Tensor([[[[2.0]]]]), Tensor([0.0]))
        assert out.data.item() == pytest.approx(6.0)

    def test_stride_two_upsample_shape(self):
        out = conv2d_transpose(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 4, 4))), stride=2)
        assert out.shape == (1, 1, 4, 4)

    @pytest.mark.parametrize("stride,k", [(1, 4), (2, 4), (2, 5), (2, 3)])
    def test_adjoint_identity(self, stride, k):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 3, 8, 8))
        kern = rng.normal(size=(4, 3, k, k))
        y_shape = conv2d(Tensor(x), Tensor(kern), stride=stride).shape
        y = rng.normal(size=y_shape)
        lhs = np.sum(conv2d(Tensor(x), Tensor(kern), stride=stride).data * y)
        rhs = np.sum(x * conv2d_transpose(Tensor(y), Tensor(kern), stride=stride).data)
        assert abs(lhs - rhs) < 1e-5 * max(1.0, abs(lhs))

    def test_gradients(self):
        rng = np.random.default_rng(4)
        w = rng.normal(size=(1, 2, 6, 6))
        err = grad_check(lambda x, k, b: (conv2d_transpose(x, k, b, stride=2) * Tensor(w)).sum(),
                         rng.normal(size=(1, 3, 3, 3)), rng.normal(size=(3, 2, 4, 4)),
                         rng.normal(size=2))
        assert err < 1e-6


class TestDenseActivation:
    def test_identity_weight(self):
        x = np.array([[1.0, -2.0, 0.5]])
        out = dense(Tensor(x), Tensor(np.eye(3)), Tensor(np.zeros(3)))
        np.testing.assert_array_equal(out.data, x)

    def test_affine(self):
        out = dense(Tensor([[1.0, 2.0]]), Tensor([[1.0, 0.0], [0.0, 1.0]]), Tensor([3.0, 3.0]))
        np.testing.assert_array_equal(out.data, [[4.0, 5.0]])

    def test_dense_gradient(self):
        rng = np.random.default_rng(5)
        err = grad_check(lambda x, w, b: (dense(x, w, b) ** 2).sum(),
                         rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=2))
        assert err < 1e-6

    def test_dense_shape_error(self):
        with pytest.raises(ShapeError):
            dense(Tensor(np.ones((1, 3))), Tensor(np.ones((2, 2))))

    def test_relu(self):
        np.testing.assert_array_equal(relu(Tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])

    def test_sigmoid_half(self):
        assert activation(Tensor([0.0]), "sigmoid").data[0] == 0.5

    def test_sigmoid_gradient_at_zero(self):
        x = Tensor(np.zeros(1), requires_grad=True)
        sigmoid(x).sum().backward()
        assert x.grad[0] == pytest.approx(0.25)
        assert grad_check(lambda t: sigmoid(t).sum(), np.zeros(1)) < 1e-8

    def test_sigmoid_extreme_inputs_stay_finite(self):
        out = sigmoid(Tensor(np.array([-1000.0, 1000.0])))
        np.testing.assert_array_equal(out.data, [0.0, 1.0])


class TestBce:
    def test_perfect_prediction_near_zero(self):
        assert bce_loss(Tensor(np.ones(6)), np.ones(6)).item() < 1e-6

    @pytest.mark.parametrize("t", [0.0, 0.3, 1.0])
    def test_half_output_gives_ln2(self, t):
        assert bce_loss(Tensor(np.full(5, 0.5)), np.full(5, t)).item() == pytest.approx(np.log(2), abs=1e-12)

    def test_analytic_derivative(self):
        rng = np.random.default_rng(6)
        o = rng.uniform(0.05, 0.95, size=(2, 3))
        t = rng.uniform(0, 1, size=(2, 3))
        x = Tensor(o.copy(), requires_grad=True)
        bce_loss(x, t).backward()
        np.testing.assert_allclose(x.grad, (o - t) / (o * (1 - o)) / o.size, atol=1e-12)
        assert grad_check(lambda y: bce_loss(y, t), o) < 1e-6

    def test_non_negative(self):
        rng = np.random.default_rng(7)
        assert bce_loss(Tensor(rng.uniform(size=50)), rng.uniform(size=50)).item() >= 0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            bce_loss(Tensor(np.ones(3)), np.ones(4))


class TestAdam:
    def test_zero_gradient_is_noop(self):
        p = Parameter(np.array([1.0, -2.0]), "p")
        p.grad = np.zeros(2)
        adam_step([p], AdamState(), lr=0.1)
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_first_step_size(self):
        p = Parameter(np.array([0.0]), "p", dtype=np.float64)
        p.grad = np.ones(1)
        state = adam_step([p], AdamState(), lr=0.1)
        assert p.data[0] == pytest.approx(-0.1 / (1 + 1e-8), abs=1e-15)
        assert state.step == 1

    def test_frozen_parameter_bit_identical(self):
        rng = np.random.default_rng(8)
        frozen = Parameter(rng.normal(size=(3, 3)).astype(np.float32), "w", trainable=False)
        live = Parameter(np.zeros(3, np.float32), "b")
        before = frozen.data.copy()
        state = AdamState()
        for i in range(100):
            frozen.grad = rng.normal(size=(3, 3)).astype(np.float32)
            live.grad = rng.normal(size=3).astype(np.float32)
            adam_step([frozen, live], state, lr=1e-2)
            assert state.step == i + 1
        assert frozen.data.tobytes() == before.tobytes()
        assert np.any(live.data != 0)

    def test_missing_gradient(self):
        with pytest.raises(ValueError, match="no gradient"):
            adam_step([Parameter(np.zeros(1), "p")], AdamState(), lr=1e-3)


class TestSchedule:
    @pytest.mark.parametrize("epoch,lr", [(0, 1e-4), (1, 1e-3), (10, 1e-3), (32, 1e-3),
                                          (33, 1e-4), (65, 1e-4), (66, 1e-5), (70, 1e-5), (99, 1e-5)])
    def test_values(self, epoch, lr):
        assert lr_at_epoch(epoch) == lr

    @pytest.mark.parametrize("epoch", [-1, 100])
    def test_out_of_range(self, epoch):
        with pytest.raises(ValueError):
            lr_at_epoch(epoch)


class TestGradCheck:
    def test_linear_graph_exact(self):
        assert grad_check(lambda x: (x * 3.0).sum(), np.array([0.3, -1.2])) < 1e-9

    def test_detects_corrupted_gradient(self):
        err = grad_check(lambda x: (x * 3.0).sum(), np.array([0.3, -1.2]), corrupt=2.0)
        assert err == pytest.approx(0.5, abs=1e-6)  # |6 - 3| / max(1, 6)
        err = grad_check(lambda x: (x * 0.5).sum(), np.array([0.3]), corrupt=2.0)
        assert err == pytest.approx(0.5, abs=1e-6)  # |1 - 0.5| / 1

    @settings(max_examples=15, deadline=None)
    @given(n=st.integers(1, 2), c=st.integers(1, 2), o=st.integers(1, 3),
           size=st.integers(2, 5), stride=st.integers(1, 2), k=st.integers(1, 4),
           seed=st.integers(0, 2**16))
    def test_conv_family_randomized(self, n, c, o, size, stride, k, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(n, c, size, size))
        kern = rng.normal(size=(o, c, k, k))
        w = rng.normal(size=conv2d(Tensor(x), Tensor(kern), stride=stride).shape)
        assert grad_check(lambda a, b: (conv2d(a, b, stride=stride) * Tensor(w)).sum(), x, kern) < 1e-5
        y = rng.normal(size=(n, o, size, size))
        w2 = rng.normal(size=(n, c, size * stride, size * stride))
        assert grad_check(lambda a, b: (conv2d_transpose(a, b, stride=stride) * Tensor(w2)).sum(),
                          y, kern) < 1e-5


class TestRng:
    def test_same_seed_same_draws(self):
        a, b = Rng(5), Rng(5)
        assert a.normal((100,)).tobytes() == b.normal((100,)).tobytes()
        assert np.array_equal(a.permutation(50), b.permutation(50))

    def test_streams_are_independent_and_reproducible(self):
        root = Rng(5)
        s1, s2 = root.spawn("shuffle"), root.spawn("noise")
        assert not np.array_equal(s1.uniform((10,)), s2.uniform((10,)))
        assert np.array_equal(Rng(5).spawn("noise").uniform((10,)), Rng(5).spawn("noise").uniform((10,)))

    def test_permutation_is_a_permutation(self):
        p = Rng(1).permutation(1000)
        assert sorted(p.tolist()) == list(range(1000))

    def test_box_muller_moments(self):
        z = Rng(9).normal((100_000,))
        assert abs(z.mean()) < 0.02
        assert abs(z.var() - 1) < 0.02

    def test_categorical_degenerate(self):
        assert np.all(Rng(0).categorical(np.array([1.0, 0.0]), 1000) == 0)
