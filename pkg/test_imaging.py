"""Tests for periodic operators, blur kernels and PSNR."""

import numpy as np
import pytest

from src.exceptions import KernelSizeError, ParameterError, ShapeMismatchError
from src.imaging.kernels import (
    BLUR_SETTINGS,
    blur_kernel_by_name,
    disk_kernel,
    gaussian_kernel,
    make_blur_kernel,
    motion_kernel,
)
from src.imaging.operators import (
    DegradationOp,
    Kernel,
    add_awgn,
    adjoint_convolve,
    apply_degradation,
    apply_degradation_adjoint,
    grad_adjoint,
    grad_op,
    initial_estimate,
    periodic_convolve,
    tap_correlation,
)
from src.imaging.quality import PSNR_CAP, mean_psnr, psnr


def loop_convolve(img, ker):
    """Nested-loop periodic convolution."""
    rows, cols = img.shape
    out = np.zeros_like(img)
    for i in range(rows):
        for j in range(cols):
            acc = 0.0
            for a in range(ker.taps.shape[0]):
                for b in range(ker.taps.shape[1]):
                    acc += ker.taps[a, b] * img[(i - (a - ker.anchor[0])) % rows,
                                                (j - (b - ker.anchor[1])) % cols]
            out[i, j] = acc
    return out


class TestConvolution:
    def test_delta_kernel_is_identity(self, image8):
        np.testing.assert_allclose(periodic_convolve(image8, Kernel.delta()), image8, atol=1e-14)
        np.testing.assert_allclose(adjoint_convolve(image8, Kernel.delta()), image8, atol=1e-14)

    def test_constant_image_scales_by_tap_sum(self, kernel3):
        img = np.full((6, 7), 0.3)
        out = periodic_convolve(img, kernel3)
        np.testing.assert_allclose(out, 0.3 * kernel3.taps.sum(), atol=1e-12)

    @pytest.mark.parametrize("method", ["fft", "direct"])
    def test_matches_loop_oracle(self, image8, kernel3, method):
        np.testing.assert_allclose(periodic_convolve(image8, kernel3, method),
                                   loop_convolve(image8, kernel3), atol=1e-10)

    def test_fft_and_direct_agree_on_32x32(self, rng):
        img = rng.random((32, 32))
        ker = Kernel(rng.standard_normal((5, 4)), anchor=(1, 3))
        np.testing.assert_allclose(periodic_convolve(img, ker, "fft"),
                                   periodic_convolve(img, ker, "direct"), atol=1e-10)
        np.testing.assert_allclose(adjoint_convolve(img, ker, "fft"),
                                   adjoint_convolve(img, ker, "direct"), atol=1e-10)

    def test_adjoint_identity(self, rng, kernel3):
        x, y = rng.random((8, 8)), rng.random((8, 8))
        lhs = np.vdot(periodic_convolve(x, kernel3), y)
        rhs = np.vdot(x, adjoint_convolve(y, kernel3))
        assert abs(lhs - rhs) < 1e-10

    def test_symmetric_kernel_is_self_adjoint(self, image8):
        ker = gaussian_kernel(1.0, width=3)
        np.testing.assert_allclose(adjoint_convolve(image8, ker), periodic_convolve(image8, ker),
                                   atol=1e-12)

    def test_linearity(self, rng, kernel3):
        x, y = rng.random((8, 8)), rng.random((8, 8))
        combo = periodic_convolve(2.0 * x - 3.0 * y, kernel3)
        expected = 2.0 * periodic_convolve(x, kernel3) - 3.0 * periodic_convolve(y, kernel3)
        np.testing.assert_allclose(combo, expected, atol=1e-10)

    def test_kernel_larger_than_image(self):
        with pytest.raises(KernelSizeError):
            periodic_convolve(np.zeros((3, 3)), Kernel(np.ones((5, 5))))

    def test_tap_correlation_is_tap_derivative(self, rng):
        x, y = rng.random((7, 6)), rng.random((7, 6))
        ker = Kernel(rng.standard_normal((2, 3)), anchor=(0, 1))
        grad = tap_correlation(x, y, ker.shape, ker.anchor)
        for (a, b), _ in np.ndenumerate(ker.taps):
            unit = np.zeros(ker.shape)
            unit[a, b] = 1.0
            expected = np.vdot(periodic_convolve(x, Kernel(unit, anchor=ker.anchor)), y)
            assert grad[a, b] == pytest.approx(expected, abs=1e-10)


class TestKernels:
    def test_gaussian_normalized_and_rotation_symmetric(self):
        ker = make_blur_kernel("gaussian", width=5, sigma=1.0)
        assert ker.taps.sum() == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(np.rot90(ker.taps), ker.taps, atol=1e-15)

    def test_default_gaussian_width(self):
        assert gaussian_kernel(1.5).shape == (11, 11)

    def test_disk_of_diameter_one_is_delta(self):
        np.testing.assert_array_equal(disk_kernel(1).taps, np.ones((1, 1)))

    def test_horizontal_motion(self):
        ker = motion_kernel(5, 0.0)
        np.testing.assert_allclose(ker.taps, np.full((1, 5), 0.2))
        assert ker.anchor == (0, 2)

    @pytest.mark.parametrize("name", sorted(BLUR_SETTINGS))
    def test_named_settings_sum_to_one(self, name):
        assert blur_kernel_by_name(name).taps.sum() == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("kind,params", [
        ("gaussian", {"sigma": 0.0}),
        ("disk", {"diameter": 0}),
        ("motion", {"length": -1}),
    ])
    def test_nonpositive_sizes_rejected(self, kind, params):
        with pytest.raises(ParameterError):
            make_blur_kernel(kind, **params)

    def test_unknown_setting(self):
        with pytest.raises(ParameterError):
            blur_kernel_by_name("boxcar")


class TestDegradation:
    def test_decimation_keeps_even_indices(self):
        img = np.add.outer(10.0 * np.arange(4), np.arange(4))
        op = DegradationOp.decimated_blur(Kernel.delta(), 2)
        np.testing.assert_array_equal(apply_degradation(op, img), [[0, 2], [20, 22]])

    def test_upsampling_masks(self, image8):
        op = DegradationOp.decimated_blur(Kernel.delta(), 2)
        out = apply_degradation_adjoint(op, apply_degradation(op, image8))
        mask = np.zeros((8, 8), dtype=bool)
        mask[::2, ::2] = True
        np.testing.assert_allclose(out, np.where(mask, image8, 0.0), atol=1e-12)

    @pytest.mark.parametrize("op_name", ["identity", "blur", "sr"])
    def test_adjoint_identity(self, rng, op_name, blur_op, sr_op):
        op = {"identity": DegradationOp.identity(), "blur": blur_op, "sr": sr_op}[op_name]
        x = rng.random((8, 8))
        y = rng.random(op.output_shape(x.shape))
        lhs = np.vdot(apply_degradation(op, x), y)
        rhs = np.vdot(x, apply_degradation_adjoint(op, y))
        assert abs(lhs - rhs) < 1e-10

    @pytest.mark.parametrize("bad", [np.nan, np.inf])
    def test_nonfinite_image_rejected(self, blur_op, bad):
        img = np.zeros((8, 8))
        img[3, 4] = bad
        with pytest.raises(ParameterError, match="non-finite"):
            apply_degradation(blur_op, img)

    def test_non_2d_image_rejected(self):
        with pytest.raises(ShapeMismatchError):
            apply_degradation(DegradationOp.identity(), np.zeros(8))

    def test_divisibility(self, sr_op):
        with pytest.raises(ShapeMismatchError):
            apply_degradation(sr_op, np.zeros((7, 8)))

    def test_describe(self, sr_op):
        assert DegradationOp.identity().describe() == "identity"
        assert sr_op.describe() == "decimated_blur(3x3, d=2)"

    def test_initial_estimate_upsamples(self, sr_op):
        f = np.array([[1.0, 2.0], [3.0, 4.0]])
        u0 = initial_estimate(sr_op, f)
        assert u0.shape == (4, 4)
        assert u0[1, 1] == 1.0 and u0[3, 3] == 4.0


class TestGradient:
    def test_constant_has_zero_gradient(self):
        gf = grad_op(np.full((5, 5), 0.7))
        assert not np.any(gf.vertical) and not np.any(gf.horizontal)

    def test_hand_computed_periodic_wrap(self):
        gf = grad_op(np.array([[0.0, 1.0], [0.0, 1.0]]))
        np.testing.assert_array_equal(gf.horizontal, [[1.0, -1.0], [1.0, -1.0]])
        np.testing.assert_array_equal(gf.vertical, np.zeros((2, 2)))

    def test_adjoint_identity(self, rng):
        u = rng.random((6, 6))
        p = rng.random((2, 6, 6))
        lhs = np.vdot(grad_op(u).stack(), p)
        assert abs(lhs - np.vdot(u, grad_adjoint(p))) < 1e-12

    def test_norm_bound(self, rng):
        # power iteration on D^T D stays below 8
        u = rng.random((16, 16))
        for _ in range(200):
            u = grad_adjoint(grad_op(u))
            u /= np.linalg.norm(u)
        rayleigh = np.vdot(u, grad_adjoint(grad_op(u)))
        assert rayleigh <= 8.0 + 1e-9


class TestNoise:
    def test_zero_sigma(self, image8):
        np.testing.assert_array_equal(add_awgn(image8, 0.0, 3), image8)

    def test_deterministic(self, image8):
        np.testing.assert_array_equal(add_awgn(image8, 0.1, 7), add_awgn(image8, 0.1, 7))

    def test_sample_std(self):
        noise = add_awgn(np.zeros((256, 256)), 0.01, 0)
        assert 0.009 <= noise.std() <= 0.011

    def test_negative_sigma(self, image8):
        with pytest.raises(ParameterError):
            add_awgn(image8, -0.1, 0)


class TestPSNR:
    def test_identical_images_capped(self, image8):
        assert psnr(image8, image8) == PSNR_CAP

    def test_hand_computed(self):
        assert psnr(np.full((4, 4), 0.1), np.zeros((4, 4))) == pytest.approx(20.0, abs=1e-12)

    def test_matches_independent_formula(self, rng):
        g = rng.random((32, 32))
        u = g + 0.05 * rng.standard_normal(g.shape)
        mse = sum((u[i, j] - g[i, j]) ** 2 for i in range(32) for j in range(32)) / 1024.0
        assert psnr(u, g) == pytest.approx(10.0 * np.log10(1.0 / mse), abs=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            psnr(np.zeros((2, 2)), np.zeros((2, 3)))

    def test_nonfinite_estimate(self, image8):
        with pytest.raises(ParameterError):
            psnr(np.where(image8 > 0.5, np.nan, image8), image8)

    def test_mean_psnr(self):
        refs = [np.zeros((2, 2)), np.zeros((2, 2))]
        ests = [np.full((2, 2), 0.1), np.full((2, 2), 0.01)]
        assert mean_psnr(ests, refs) == pytest.approx(30.0)
