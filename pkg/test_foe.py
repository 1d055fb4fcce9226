"""Tests for the FoE lower level, adjoint solve, gradients and outer loop."""

import numpy as np
import pytest

from src.artifacts.filter_bank import read_filter_bank
from src.exceptions import ParameterError, ShapeMismatchError
from src.imaging.kernels import gaussian_kernel
from src.imaging.operators import DegradationOp, add_awgn, apply_degradation
from src.models.foe import (
    FoEParams,
    LowerSolveConfig,
    bb1_step,
    foe_energy,
    foe_grad_u,
    foe_hessian_apply,
    grad_alpha,
    grad_kernel,
    init_foe_params,
    phi,
    phi_prime,
    phi_second,
    project_params,
    restore_foe,
    run_lower_solver,
    solve_adjoint_cg,
    solve_lower,
)
from src.models.foe_trainer import FoETrainer, FoETrainingConfig, train_foe

IDENTITY = DegradationOp.identity()


def dense_matrix(apply, shape):
    """Columns of a linear map on images."""
    n = shape[0] * shape[1]
    cols = []
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        cols.append(apply(e.reshape(shape)).ravel())
    return np.stack(cols, axis=1)


@pytest.fixture
def params(rng):
    return init_foe_params(2, 3, seed=5, alpha0=0.2, kernel_std=0.3)


@pytest.fixture
def zero_alpha(params):
    return FoEParams(np.zeros(params.num_filters), params.kernels)


class TestPenalty:
    def test_values_at_zero_and_one(self):
        assert (phi(0.0), phi_prime(0.0), phi_second(0.0)) == (0.0, 0.0, 2.0)
        assert phi(1.0) == pytest.approx(np.log(2.0))
        assert phi_prime(1.0) == pytest.approx(1.0)
        assert phi_second(1.0) == pytest.approx(0.0)

    @pytest.mark.parametrize("x", [-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0])
    def test_derivatives_match_finite_differences(self, x):
        h = 1e-6
        fd1 = (phi(x + h) - phi(x - h)) / (2 * h)
        fd2 = (phi_prime(x + h) - phi_prime(x - h)) / (2 * h)
        assert phi_prime(x) == pytest.approx(fd1, rel=1e-6, abs=1e-9)
        assert phi_second(x) == pytest.approx(fd2, rel=1e-6, abs=1e-9)


class TestEnergy:
    def test_zero_at_data_without_regularizer(self, zero_alpha, image8):
        assert foe_energy(image8, zero_alpha, image8, IDENTITY) == 0.0

    def test_constant_image_sees_data_term_only(self, params, blur_op):
        u = np.full((8, 8), 0.4)
        f = np.full((8, 8), 0.1)
        assert foe_energy(u, params, f, blur_op) == pytest.approx(0.5 * 64 * 0.09, rel=1e-12)

    def test_matches_loop_evaluation(self, params, rng):
        u, f = rng.random((6, 6)), rng.random((6, 6))
        value = 0.5 * np.sum((u - f) ** 2)
        c = params.anchor
        for l in range(params.num_filters):
            k = params.kernels[l]
            for i in range(6):
                for j in range(6):
                    resp = sum(k[a, b] * u[(i - a + c[0]) % 6, (j - b + c[1]) % 6]
                               for a in range(3) for b in range(3))
                    value += params.alphas[l] * np.log1p(resp ** 2)
        assert foe_energy(u, params, f, IDENTITY) == pytest.approx(value, rel=1e-12)

    def test_shape_mismatch(self, params, sr_op):
        with pytest.raises(ShapeMismatchError):
            foe_energy(np.zeros((8, 8)), params, np.zeros((8, 8)), sr_op)


class TestDerivatives:
    def test_gradient_without_regularizer(self, zero_alpha, rng):
        u, f = rng.random((8, 8)), rng.random((8, 8))
        np.testing.assert_allclose(foe_grad_u(u, zero_alpha, f, IDENTITY), u - f, atol=1e-14)

    def test_gradient_directional_derivative(self, params, blur_op, rng):
        u, f, v = rng.random((8, 8)), rng.random((8, 8)), rng.standard_normal((8, 8))
        h = 1e-6
        fd = (foe_energy(u + h * v, params, f, blur_op)
              - foe_energy(u - h * v, params, f, blur_op)) / (2 * h)
        analytic = np.vdot(foe_grad_u(u, params, f, blur_op), v)
        assert analytic == pytest.approx(fd, rel=1e-5)

    def test_hessian_without_regularizer(self, zero_alpha, blur_op, rng):
        u, v = rng.random((8, 8)), rng.random((8, 8))
        expected = apply_degradation(blur_op, apply_degradation(blur_op, v))
        np.testing.assert_allclose(foe_hessian_apply(u, zero_alpha, blur_op, v), expected,
                                   atol=1e-12)

    def test_hessian_symmetry(self, params, sr_op, rng):
        u, v, w = rng.random((8, 8)), rng.random((8, 8)), rng.random((8, 8))
        lhs = np.vdot(foe_hessian_apply(u, params, sr_op, v), w)
        rhs = np.vdot(v, foe_hessian_apply(u, params, sr_op, w))
        assert abs(lhs - rhs) < 1e-10

    def test_hessian_matches_gradient_difference(self, params, blur_op, rng):
        u, f, v = rng.random((8, 8)), rng.random((8, 8)), rng.standard_normal((8, 8))
        h = 1e-6
        fd = (foe_grad_u(u + h * v, params, f, blur_op)
              - foe_grad_u(u - h * v, params, f, blur_op)) / (2 * h)
        hv = foe_hessian_apply(u, params, blur_op, v)
        assert np.linalg.norm(hv - fd) <= 1e-4 * np.linalg.norm(hv)


class TestLowerSolver:
    def test_bb1_hand_computed(self):
        cfg = LowerSolveConfig(gamma_min=1e-4, gamma_max=10.0)
        assert bb1_step(np.array([1.0, 0.0]), np.array([2.0, 0.0]), cfg) == 0.5

    def test_bb1_fallback_and_clamp(self):
        cfg = LowerSolveConfig()
        assert bb1_step(np.array([1.0, 0.0]), np.array([-1.0, 0.0]), cfg) == cfg.gamma_max
        assert bb1_step(np.array([1.0, 0.0]), np.array([1e6, 0.0]), cfg) == cfg.gamma_min

    def test_identity_quadratic_converges_to_data(self, zero_alpha, rng):
        f = rng.random((8, 8))
        u = solve_lower(f, IDENTITY, zero_alpha, np.zeros((8, 8)))
        assert np.max(np.abs(u - f)) < 1e-6

    def test_blur_quadratic_matches_dense_solve(self, rng):
        op = DegradationOp.blur(gaussian_kernel(0.5, width=3))
        params = FoEParams(np.zeros(1), np.zeros((1, 3, 3)))
        f = rng.random((16, 16))
        cfg = LowerSolveConfig(tol_inner=1e-13, t_max=20000)
        u = solve_lower(f, op, params, f, cfg)

        H = dense_matrix(lambda x: apply_degradation(op, x), (16, 16))
        expected = np.linalg.solve(H.T @ H, H.T @ f.ravel()).reshape(16, 16)
        assert np.max(np.abs(u - expected)) < 1e-6

    def test_energy_does_not_increase(self, params, blur_op, rng):
        f = rng.random((12, 12))
        u0 = rng.random((12, 12))
        result = run_lower_solver(f, blur_op, params, u0, LowerSolveConfig())
        assert result.energy <= foe_energy(u0, params, f, blur_op)

    def test_stationarity_at_tight_tolerance(self, params, blur_op, rng):
        f = rng.random((8, 8))
        cfg = LowerSolveConfig(tol_inner=1e-10, t_max=20000)
        u = solve_lower(f, blur_op, params, f, cfg)
        assert np.max(np.abs(foe_grad_u(u, params, f, blur_op))) < 1e-4

    def test_nonmonotone_window(self, params, blur_op, rng):
        f = rng.random((8, 8))
        cfg = LowerSolveConfig(memory=5, tol_inner=1e-9, t_max=20000)
        result = run_lower_solver(f, blur_op, params, f, cfg)
        assert result.energy <= foe_energy(f, params, f, blur_op)
        assert np.max(np.abs(foe_grad_u(result.u, params, f, blur_op))) < 1e-3

    def test_restore_without_regularizer_returns_data(self, zero_alpha, image8):
        np.testing.assert_allclose(restore_foe(image8, IDENTITY, zero_alpha), image8, atol=1e-12)

    def test_restore_rejects_nonfinite_data(self, params, image8):
        image8[0, 0] = np.inf
        with pytest.raises(ParameterError, match="non-finite"):
            restore_foe(image8, IDENTITY, params)

    def test_invalid_config(self):
        with pytest.raises(ParameterError):
            LowerSolveConfig(gamma_min=2.0, gamma_max=1.0)


class TestAdjointSolve:
    def test_zero_rhs(self, params, image8):
        result = solve_adjoint_cg(image8, params, IDENTITY, np.zeros((8, 8)))
        assert not np.any(result.p) and result.converged

    def test_identity_without_regularizer(self, zero_alpha, rng):
        rhs = rng.standard_normal((8, 8))
        result = solve_adjoint_cg(rng.random((8, 8)), zero_alpha, IDENTITY, rhs)
        np.testing.assert_allclose(result.p, rhs, atol=1e-10)

    def test_matches_dense_solve(self, rng):
        op = DegradationOp.blur(gaussian_kernel(0.5, width=3))
        params = init_foe_params(2, 3, seed=11)
        u = rng.random((12, 12))
        rhs = rng.standard_normal((12, 12))
        result = solve_adjoint_cg(u, params, op, rhs, tol=1e-8, max_iter=1000)

        hess = dense_matrix(lambda v: foe_hessian_apply(u, params, op, v), (12, 12))
        expected = np.linalg.solve(hess, rhs.ravel()).reshape(12, 12)
        assert np.linalg.norm(result.p - expected) <= 1e-6 * np.linalg.norm(expected)

    def test_shift(self, zero_alpha, rng):
        rhs = rng.standard_normal((6, 6))
        result = solve_adjoint_cg(rng.random((6, 6)), zero_alpha, IDENTITY, rhs, shift=1.0)
        np.testing.assert_allclose(result.p, rhs / 2.0, atol=1e-10)

    def test_stagnation_is_reported(self, params, blur_op, rng):
        rhs = rng.standard_normal((12, 12))
        result = solve_adjoint_cg(rng.random((12, 12)), params, blur_op, rhs, tol=1e-14, max_iter=1)
        assert not result.converged


class TestParameterGradients:
    def test_zero_adjoint(self, params, image8):
        p = np.zeros((8, 8))
        assert grad_alpha(image8, p, params, 0) == 0.0
        assert not np.any(grad_kernel(image8, p, params, 1))

    def test_constant_solution(self, params, rng):
        u = np.full((8, 8), 0.5)
        assert grad_alpha(u, rng.random((8, 8)), params, 0) == pytest.approx(0.0, abs=1e-12)

    def test_zero_weight_gives_zero_kernel_gradient(self, zero_alpha, rng):
        g = grad_kernel(rng.random((8, 8)), rng.random((8, 8)), zero_alpha, 0)
        assert not np.any(g)

    def test_index_out_of_range(self, params, image8):
        with pytest.raises(ParameterError):
            grad_alpha(image8, image8, params, 2)


class TestProjection:
    def test_weights_clipped(self):
        out = project_params(FoEParams(np.array([-1.0, 2.0]), np.zeros((2, 3, 3))))
        np.testing.assert_array_equal(out.alphas, [0.0, 2.0])

    def test_mean_subtracted(self):
        kernels = np.tile(np.array([1.0, 2.0, 3.0]), (1, 3, 1))
        out = project_params(FoEParams(np.ones(1), kernels))
        np.testing.assert_allclose(out.kernels[0], np.tile([-1.0, 0.0, 1.0], (3, 1)), atol=1e-15)

    def test_idempotent(self, rng):
        params = FoEParams(rng.standard_normal(3), rng.standard_normal((3, 5, 5)))
        once = project_params(params)
        twice = project_params(once)
        np.testing.assert_array_equal(once.alphas, twice.alphas)
        np.testing.assert_allclose(once.kernels, twice.kernels, atol=1e-15)
        assert once.is_feasible()

    def test_init_is_feasible(self):
        params = init_foe_params(4, 5, seed=0)
        assert params.is_feasible()
        np.testing.assert_array_equal(params.alphas, np.full(4, 0.1))


class TestTrainer:
    def test_already_optimal_pair(self, params, rng):
        g = rng.random((8, 8))
        init = FoEParams(np.zeros(2), params.kernels)
        config = FoETrainingConfig(num_filters=2, kernel_size=3, k_max=2)
        state = FoETrainer(IDENTITY, config).train([(g, g.copy())], init)
        assert state.loss_history[0] == 0.0
        np.testing.assert_allclose(state.params.kernels, project_params(init).kernels, atol=1e-15)
        np.testing.assert_array_equal(state.params.alphas, np.zeros(2))

    def test_toy_run_decreases_loss(self, edge16):
        op = DegradationOp.blur(gaussian_kernel(1.0, width=5))
        dataset = []
        for j in range(2):
            g = np.roll(np.kron(edge16, np.ones((2, 2))), 3 * j, axis=1)
            f = add_awgn(apply_degradation(op, g), 0.01, j)
            dataset.append((g, f))
        lower = LowerSolveConfig(tol_inner=1e-6, t_max=2000)
        params, history = train_foe(dataset, op, num_filters=2, kernel_size=3, tau=1e-3,
                                    k_max=5, cfg=lower, seed=3)
        assert len(history) == 6
        assert history[-1] < history[0]
        assert params.is_feasible()

    def test_empty_dataset(self):
        with pytest.raises(ParameterError):
            FoETrainer(IDENTITY).train([])

    def test_mismatched_pair(self, sr_op):
        with pytest.raises(ShapeMismatchError):
            FoETrainer(sr_op).train([(np.zeros((8, 8)), np.zeros((8, 8)))])

    def test_evaluate_reports_degraded_psnr(self, params, blur_op, rng):
        g = rng.random((8, 8))
        f = apply_degradation(blur_op, g)
        trainer = FoETrainer(blur_op, FoETrainingConfig(num_filters=2, kernel_size=3))
        result = trainer.evaluate([(g, f)], params)
        assert set(result) == {"psnr", "psnr_mean", "restored", "input_psnr_mean"}

    def test_evaluate_before_training(self, blur_op, rng):
        g = rng.random((8, 8))
        trainer = FoETrainer(blur_op, FoETrainingConfig(num_filters=2, kernel_size=3))
        with pytest.raises(ParameterError, match="train"):
            trainer.evaluate([(g, apply_degradation(blur_op, g))])

    def test_saved_metadata_reports_psnr_history(self, params, blur_op, rng, tmp_path):
        g = rng.random((8, 8))
        dataset = [(g, add_awgn(apply_degradation(blur_op, g), 0.01, 0))]
        config = FoETrainingConfig(num_filters=2, kernel_size=3, k_max=1,
                                   lower=LowerSolveConfig(t_max=50))
        trainer = FoETrainer(blur_op, config)
        state = trainer.train(dataset, params)
        path = trainer.save_model(tmp_path / "foe.blrf", "gaussian")
        _, meta = read_filter_bank(path)
        assert meta["psnr_history"] == state.psnr_history
        assert len(meta["psnr_history"]) == 2
