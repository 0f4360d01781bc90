"""Tensor engine: forward semantics against naive oracles, gradients
against central finite differences, and the autodiff bookkeeping contracts.
"""

import numpy as np
import pytest

from rangeseg import engine as E
from rangeseg.engine import ConvSpec, Tensor
from rangeseg.engine.tensor import ShapeError


def naive_conv2d(x, w, b, stride=(1, 1), dilation=1, pad=(0, 0)):
    """Direct six-loop cross-correlation reference."""
    n, c_in, h, wd = x.shape
    c_out, _, kh, kw = w.shape
    sh, sw = stride
    ph, pw = pad
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    ho = (h + 2 * ph - dilation * (kh - 1) - 1) // sh + 1
    wo = (wd + 2 * pw - dilation * (kw - 1) - 1) // sw + 1
    out = np.zeros((n, c_out, ho, wo))
    for ni in range(n):
        for oi in range(c_out):
            for yi in range(ho):
                for xi in range(wo):
                    acc = 0.0
                    for ci in range(c_in):
                        for i in range(kh):
                            for j in range(kw):
                                acc += (
                                    w[oi, ci, i, j]
                                    * xp[ni, ci, yi * sh + i * dilation, xi * sw + j * dilation]
                                )
                    out[ni, oi, yi, xi] = acc + b[oi]
    return out


class TestConv2d:
    def test_identity_1x1(self, rng):
        x = Tensor(rng.normal(size=(2, 3, 4, 5)))
        w = Tensor(np.eye(3).reshape(3, 3, 1, 1))
        b = Tensor(np.zeros(3))
        out = E.conv2d(x, w, b, ConvSpec(3, 3, (1, 1)))
        np.testing.assert_array_equal(out.data, x.data)

    def test_ones_kernel_counts_window_overlap(self):
        x = Tensor(np.ones((1, 1, 5, 5)))
        w = Tensor(np.ones((1, 1, 3, 3)))
        b = Tensor(np.zeros(1))
        out = E.conv2d(x, w, b, ConvSpec(1, 1, (3, 3), padding="same"))
        assert out.data[0, 0, 2, 2] == 9.0
        assert out.data[0, 0, 0, 0] == 4.0

    def test_matches_naive_loop_with_dilation(self, rng):
        x = rng.normal(size=(2, 3, 4, 4))
        w = rng.normal(size=(2, 3, 3, 3))
        b = rng.normal(size=2)
        spec = ConvSpec(3, 2, (3, 3), dilation=2, padding="same")
        got = E.conv2d(Tensor(x), Tensor(w), Tensor(b), spec).data
        want = naive_conv2d(x, w, b, dilation=2, pad=spec.pad_amount())
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_matches_naive_loop_strided_valid(self, rng):
        x = rng.normal(size=(1, 2, 7, 9))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        spec = ConvSpec(2, 3, (3, 3), stride=(2, 2), padding="valid")
        got = E.conv2d(Tensor(x), Tensor(w), Tensor(b), spec).data
        want = naive_conv2d(x, w, b, stride=(2, 2))
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_shape_mismatch_names_dimensions(self, rng):
        x = Tensor(rng.normal(size=(1, 4, 4, 4)))
        w = Tensor(rng.normal(size=(2, 3, 3, 3)))
        b = Tensor(np.zeros(2))
        with pytest.raises(ShapeError, match="4 channels"):
            E.conv2d(x, w, b, ConvSpec(3, 2, (3, 3)))

    def test_gradients(self, rng):
        x = Tensor(rng.normal(size=(2, 3, 5, 6)))
        w = Tensor(rng.normal(size=(4, 3, 3, 3)))
        b = Tensor(rng.normal(size=4))
        c = Tensor(rng.normal(size=(2, 4, 5, 6)))
        spec = ConvSpec(3, 4, (3, 3), padding="same")
        for target, f in [
            (x, lambda t: (E.conv2d(t, w, b, spec) * c).sum()),
            (w, lambda t: (E.conv2d(x, t, b, spec) * c).sum()),
            (b, lambda t: (E.conv2d(x, w, t, spec) * c).sum()),
        ]:
            assert E.finite_diff_check(f, target, eps=1e-6) < 1e-6


class TestLayerOps:
    def test_softmax_uniform_logits(self):
        out = E.softmax(Tensor(np.zeros((1, 4, 2, 2))), axis=1)
        np.testing.assert_allclose(out.data, 0.25)

    def test_max_pool_dilates_one_hot(self):
        x = np.zeros((1, 1, 7, 7))
        x[0, 0, 3, 3] = 1.0
        out = E.max_pool2d(Tensor(x), 3, stride=1, padding="same")
        hot = out.data[0, 0]
        assert (hot[2:5, 2:5] == 1.0).all()
        assert hot.sum() == 9.0

    def test_avg_pool_halves(self, rng):
        x = rng.normal(size=(1, 2, 4, 6))
        out = E.avg_pool2d(Tensor(x), 2)
        want = x.reshape(1, 2, 2, 2, 3, 2).mean(axis=(3, 5))
        np.testing.assert_allclose(out.data, want, atol=1e-15)

    def test_upsample_then_pool_roundtrip(self, rng):
        x = Tensor(rng.normal(size=(1, 3, 4, 4)))
        up = E.nearest_upsample2d(x, 2)
        back = E.avg_pool2d(up, 2)
        np.testing.assert_allclose(back.data, x.data, atol=1e-15)

    def test_dropout_modes(self, rng):
        x = Tensor(np.ones((1, 2, 8, 8)))
        kept = E.dropout(x, 0.5, np.random.default_rng(0), training=False)
        np.testing.assert_array_equal(kept.data, x.data)
        dropped = E.dropout(x, 0.5, np.random.default_rng(0), training=True)
        live = dropped.data != 0
        assert 0.2 < live.mean() < 0.8
        np.testing.assert_allclose(dropped.data[live], 2.0)

    def test_batch_norm_normalizes_and_checks_gradient(self, rng):
        x = Tensor(rng.normal(loc=3.0, scale=2.0, size=(2, 3, 4, 4)))
        gamma = Tensor(np.ones(3), requires_grad=True)
        beta = Tensor(np.zeros(3), requires_grad=True)
        rm, rv = np.zeros(3), np.ones(3)
        out = E.batch_norm(x, gamma, beta, rm, rv, training=True)
        assert abs(out.data.mean()) < 1e-10
        # the eps in the denominator biases the std by ~eps/(2 var)
        assert abs(out.data.std() - 1.0) < 1e-4
        # running buffers move toward batch statistics
        assert (np.abs(rm) > 0).all()
        c = Tensor(rng.normal(size=(2, 3, 4, 4)))

        def f(t):
            return (E.batch_norm(t, gamma, beta, np.zeros(3), np.ones(3), training=True) * c).sum()

        assert E.finite_diff_check(f, x, eps=1e-5, samples=40) < 1e-6

    def test_batch_norm_eval_uses_running_stats(self, rng):
        x = Tensor(rng.normal(size=(1, 2, 3, 3)))
        gamma = Tensor(np.ones(2))
        beta = Tensor(np.zeros(2))
        rm = np.array([1.0, -1.0])
        rv = np.array([4.0, 0.25])
        out = E.batch_norm(x, gamma, beta, rm, rv, training=False)
        want = (x.data - rm.reshape(1, 2, 1, 1)) / np.sqrt(rv.reshape(1, 2, 1, 1) + 1e-5)
        np.testing.assert_allclose(out.data, want, rtol=1e-12)


class TestBackward:
    def test_sum_gradient_is_ones(self, rng):
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_half_square_gradient_is_identity(self, rng):
        x = Tensor(rng.normal(size=(5,)), requires_grad=True)
        ((x * x).sum() * 0.5).backward()
        np.testing.assert_allclose(x.grad, x.data, rtol=1e-15)

    def test_repeated_backward_accumulates(self, rng):
        x = Tensor(rng.normal(size=(4,)), requires_grad=True)
        (x * x).sum().backward()
        first = x.grad.copy()
        (x * x).sum().backward()
        np.testing.assert_allclose(x.grad, 2 * first, rtol=1e-15)

    def test_non_scalar_loss_rejected(self, rng):
        x = Tensor(rng.normal(size=(3,)), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            (x * 2.0).backward()

    def test_concat_routes_gradient_slices(self):
        a = Tensor(np.zeros((2, 3)), requires_grad=True)
        b = Tensor(np.zeros((2, 2)), requires_grad=True)
        merged = E.concat([a, b], axis=1)
        # one-hot seed in the b-region must reach only b
        merged[1, 4].backward()
        assert a.grad is None or not a.grad.any()
        want = np.zeros((2, 2))
        want[1, 1] = 1.0
        np.testing.assert_array_equal(b.grad, want)

    def test_no_grad_builds_no_graph(self, rng):
        x = Tensor(rng.normal(size=(3,)), requires_grad=True)
        with E.no_grad():
            y = (x * 2.0).sum()
        assert y.is_leaf and not y.requires_grad

    def test_determinism_bit_identical(self, rng):
        data = rng.normal(size=(2, 3, 8, 8))
        w = rng.normal(size=(4, 3, 3, 3))
        spec = ConvSpec(3, 4, (3, 3))
        runs = []
        for _ in range(2):
            x = Tensor(data.copy(), requires_grad=True)
            out = E.conv2d(x, Tensor(w), Tensor(np.zeros(4)), spec)
            (out * out).sum().backward()
            runs.append((out.data.tobytes(), x.grad.tobytes()))
        assert runs[0] == runs[1]


class TestFiniteDiffChecker:
    def test_linear_functional_is_exact(self, rng):
        x = Tensor(rng.normal(size=(6,)))
        assert E.finite_diff_check(lambda t: t.sum(), x, eps=1e-5) < 1e-10

    def test_softmax_nll_self_test(self, rng):
        logits = Tensor(rng.normal(size=(4,)))

        def f(t):
            return -(E.log_softmax(t.reshape((1, 4, 1, 1)), axis=1)[0, 2, 0, 0])

        assert E.finite_diff_check(f, logits, eps=1e-5) < 1e-6

    def test_detects_corrupted_gradient(self, rng):
        from rangeseg.engine.tensor import make_node

        def doubled_with_bad_backward(t):
            # claims d/dx = 2.2 instead of 2.0
            return make_node(t.data * 2.0, (t,), lambda g: (g * 2.2,)).sum()

        x = Tensor(rng.normal(size=(5,)))
        assert E.finite_diff_check(doubled_with_bad_backward, x, eps=1e-5) >= 0.05

    def test_rejects_bad_eps(self, rng):
        with pytest.raises(ValueError, match="eps"):
            E.finite_diff_check(lambda t: t.sum(), Tensor(np.ones(2)), eps=0.0)


class TestCheckpointFormat:
    def test_roundtrip_bit_exact(self, tmp_path, rng):
        arrays = {
            "conv.weight": rng.normal(size=(4, 3, 3, 3)),
            "norm.running_mean": rng.normal(size=3),
            "head.bias": rng.normal(size=(7,)).astype(np.float32),
        }
        path = tmp_path / "ckpt.bin"
        E.save_arrays(path, arrays)
        loaded = E.load_arrays(path)
        assert set(loaded) == set(arrays)
        for name, arr in arrays.items():
            assert loaded[name].dtype == arr.dtype
            assert loaded[name].tobytes() == arr.tobytes()

    def test_truncated_file_rejected(self, tmp_path, rng):
        path = tmp_path / "ckpt.bin"
        E.save_arrays(path, {"w": rng.normal(size=(8, 8))})
        raw = path.read_bytes()
        path.write_bytes(raw[:-16])
        with pytest.raises(ValueError, match="truncated"):
            E.load_arrays(path)
