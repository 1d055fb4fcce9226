"""
Field-of-Experts Lower-Level Problem and Parameter Gradients

The lower-level energy of a trained FoE regularizer reads

    J(u) = 1/2 ||A u - f||^2 + sum_l alpha_l sum_i phi((k_l * u)_i),
    phi(x) = log(1 + x^2).

This module provides the energy, its gradient and Hessian-vector product,
the spectral-gradient lower solver with Armijo backtracking, the conjugate
gradient solve of the adjoint system, the parameter gradients of the
upper loss 1/2 ||u*(theta) - g||^2 and the projection onto the feasible set
(nonnegative weights, zero-mean filters).
"""

import logging
from collections import deque
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import fft
from scipy.sparse.linalg import LinearOperator, cg

from src.exceptions import DivergenceError, ParameterError, ShapeMismatchError
from src.imaging.operators import (
    DegradationOp,
    Kernel,
    apply_degradation,
    apply_degradation_adjoint,
    apply_normal,
    as_image,
    initial_estimate,
    kernel_otf,
    tap_correlation,
)

logger = logging.getLogger(__name__)


# ----------------------------------------------------------------------
# Penalty function
# ----------------------------------------------------------------------

def phi(x):
    """Lorentzian penalty ``log(1 + x^2)``."""
    return np.log1p(np.square(x))


def phi_prime(x):
    """First derivative ``2x / (1 + x^2)``."""
    return 2.0 * x / (1.0 + np.square(x))


def phi_second(x):
    """Second derivative ``2 (1 - x^2) / (1 + x^2)^2``."""
    sq = np.square(x)
    return 2.0 * (1.0 - sq) / np.square(1.0 + sq)


# ----------------------------------------------------------------------
# Parameters and configuration
# ----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FoEParams:
    """
    FoE regularizer parameters.

    Attributes:
        alphas: Weights, shape (L,)
        kernels: Filters, shape (L, kappa, kappa), anchored at the centre tap
    """

    alphas: np.ndarray
    kernels: np.ndarray

    def __post_init__(self):
        alphas = np.array(self.alphas, dtype=np.float64).reshape(-1)
        kernels = np.array(self.kernels, dtype=np.float64)
        if kernels.ndim != 3 or kernels.shape[1] != kernels.shape[2]:
            raise ShapeMismatchError(f"kernels must have shape (L, k, k), got {kernels.shape}")
        if kernels.shape[0] != alphas.shape[0]:
            raise ShapeMismatchError(
                f"{alphas.shape[0]} weights for {kernels.shape[0]} kernels"
            )
        if alphas.size == 0:
            raise ParameterError("FoE parameters need at least one filter")
        if not (np.all(np.isfinite(alphas)) and np.all(np.isfinite(kernels))):
            raise ParameterError("FoE parameters must be finite")
        alphas.flags.writeable = False
        kernels.flags.writeable = False
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "kernels", kernels)

    @property
    def num_filters(self) -> int:
        return self.kernels.shape[0]

    @property
    def kernel_size(self) -> int:
        return self.kernels.shape[1]

    @property
    def anchor(self) -> Tuple[int, int]:
        c = (self.kernel_size - 1) // 2
        return (c, c)

    def kernel(self, index: int) -> Kernel:
        self._check_index(index)
        return Kernel(self.kernels[index], anchor=self.anchor)

    def is_feasible(self, tol: float = 1e-12) -> bool:
        """Nonnegative weights and zero-sum filters."""
        sums = self.kernels.sum(axis=(1, 2))
        return bool(np.all(self.alphas >= 0) and np.all(np.abs(sums) <= tol))

    def _check_index(self, index: int) -> None:
        if not 0 <= index < self.num_filters:
            raise ParameterError(f"filter index {index} out of range [0, {self.num_filters})")


@dataclass(frozen=True)
class LowerSolveConfig:
    """
    Settings of the spectral-gradient lower solver.

    ``memory`` is the length of the non-monotone Armijo reference window;
    1 gives the monotone rule.
    """

    sigma_armijo: float = 1e-4
    beta: float = 0.5
    gamma_min: float = 1e-4
    gamma_max: float = 1.0
    gamma0: float = 1.0
    tol_inner: float = 1e-6
    t_max: int = 8000
    memory: int = 1
    max_backtracks: int = 60

    def __post_init__(self):
        if not 0 < self.sigma_armijo < 1:
            raise ParameterError(f"sigma_armijo must lie in (0, 1), got {self.sigma_armijo}")
        if not 0 < self.beta < 1:
            raise ParameterError(f"beta must lie in (0, 1), got {self.beta}")
        if not 0 < self.gamma_min < self.gamma_max:
            raise ParameterError(
                f"need 0 < gamma_min < gamma_max, got {self.gamma_min}, {self.gamma_max}"
            )
        if self.gamma0 <= 0:
            raise ParameterError(f"gamma0 must be positive, got {self.gamma0}")
        if self.tol_inner < 0:
            raise ParameterError(f"tol_inner must be >= 0, got {self.tol_inner}")
        if self.t_max < 1:
            raise ParameterError(f"t_max must be positive, got {self.t_max}")
        if self.memory < 1:
            raise ParameterError(f"memory must be positive, got {self.memory}")
        if self.max_backtracks < 1:
            raise ParameterError(f"max_backtracks must be positive, got {self.max_backtracks}")


@dataclass
class LowerSolveResult:
    """Outcome of a lower-level solve."""

    u: np.ndarray
    energy: float
    iterations: int
    converged: bool


@dataclass
class AdjointSolveResult:
    """Outcome of the CG adjoint solve; ``converged`` is False on stagnation."""

    p: np.ndarray
    iterations: int
    residual_norm: float
    converged: bool


def init_foe_params(num_filters: int, kernel_size: int, seed: int = 42,
                    alpha0: float = 0.1, kernel_std: float = 0.1) -> FoEParams:
    """
    Seeded initial parameters: Gaussian filters made zero-mean, constant weights.

    Args:
        num_filters: Number of filters L
        kernel_size: Filter size kappa
        seed: Random seed
        alpha0: Initial weight of every filter
        kernel_std: Standard deviation of the initial taps

    Returns:
        Feasible FoE parameters
    """
    if num_filters < 1 or kernel_size < 1:
        raise ParameterError(f"need L >= 1 and kappa >= 1, got {num_filters}, {kernel_size}")
    rng = np.random.default_rng(seed)
    kernels = rng.normal(0.0, kernel_std, size=(num_filters, kernel_size, kernel_size))
    kernels -= kernels.mean(axis=(1, 2), keepdims=True)
    return FoEParams(np.full(num_filters, alpha0), kernels)


def project_params(params: FoEParams) -> FoEParams:
    """Clip weights at zero and subtract each filter's mean."""
    alphas = np.maximum(params.alphas, 0.0)
    kernels = params.kernels - params.kernels.mean(axis=(1, 2), keepdims=True)
    return FoEParams(alphas, kernels)


# ----------------------------------------------------------------------
# Energy model bound to an image grid
# ----------------------------------------------------------------------

class FoEEnergy:
    """
    Lower-level energy of one degradation and parameter set on a fixed grid.

    Filter spectra are computed once so that repeated energy, gradient and
    Hessian evaluations cost a few FFTs each.
    """

    def __init__(self, params: FoEParams, op: DegradationOp, shape: Tuple[int, int]):
        self.params = params
        self.op = op
        self.shape = tuple(shape)
        self.otfs = np.stack([
            kernel_otf(params.kernels[l], params.anchor, self.shape)
            for l in range(params.num_filters)
        ])

    def responses(self, u: np.ndarray) -> np.ndarray:
        """All filter responses ``K_l u``, shape (L, H, W)."""
        return np.real(fft.ifft2(fft.fft2(u)[np.newaxis] * self.otfs))

    def adjoint_sum(self, z: np.ndarray) -> np.ndarray:
        """``sum_l K_l^T z_l`` for a stack of images."""
        return np.real(fft.ifft2(np.sum(fft.fft2(z) * np.conj(self.otfs), axis=0)))

    def _weighted(self, z: np.ndarray) -> np.ndarray:
        return self.params.alphas[:, np.newaxis, np.newaxis] * z

    def energy_terms(self, u: np.ndarray, f: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
        """Energy together with the reusable filter responses and data residual."""
        residual = apply_degradation(self.op, u) - f
        resp = self.responses(u)
        value = 0.5 * float(np.vdot(residual, residual))
        value += float(np.sum(self.params.alphas * phi(resp).sum(axis=(1, 2))))
        return value, resp, residual

    def energy(self, u: np.ndarray, f: np.ndarray) -> float:
        return self.energy_terms(u, f)[0]

    def gradient_from_terms(self, resp: np.ndarray, residual: np.ndarray) -> np.ndarray:
        return apply_degradation_adjoint(self.op, residual) + self.adjoint_sum(
            self._weighted(phi_prime(resp))
        )

    def gradient(self, u: np.ndarray, f: np.ndarray) -> np.ndarray:
        _, resp, residual = self.energy_terms(u, f)
        return self.gradient_from_terms(resp, residual)

    def hessian_apply(self, curvature: np.ndarray, v: np.ndarray) -> np.ndarray:
        """
        Hessian-vector product given ``curvature = phi''(K u)`` stacked over filters.
        """
        return apply_normal(self.op, v) + self.adjoint_sum(
            self._weighted(curvature * self.responses(v))
        )

    def parameter_gradients(self, u: np.ndarray, p: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Gradients of ``<sum_l alpha_l K_l^T phi'(K_l u), p>`` in the weights and filters.

        Returns:
            Tuple of (weight gradient (L,), filter gradient (L, kappa, kappa))
        """
        resp = self.responses(u)
        resp_p = self.responses(p)
        slope = phi_prime(resp)
        curvature = phi_second(resp)
        params = self.params
        size = (params.kernel_size, params.kernel_size)

        grad_alphas = np.array([float(np.vdot(slope[l], resp_p[l])) for l in range(params.num_filters)])
        grad_kernels = np.stack([
            params.alphas[l] * (
                tap_correlation(u, curvature[l] * resp_p[l], size, params.anchor)
                + tap_correlation(p, slope[l], size, params.anchor)
            )
            for l in range(params.num_filters)
        ])
        return grad_alphas, grad_kernels


def _energy_model(params: FoEParams, op: DegradationOp, u: np.ndarray,
                  f: Optional[np.ndarray] = None) -> FoEEnergy:
    if f is not None and op.output_shape(u.shape) != f.shape:
        raise ShapeMismatchError(
            f"data of shape {f.shape} does not match {op.describe()} applied to {u.shape}"
        )
    return FoEEnergy(params, op, u.shape)


def foe_energy(u: np.ndarray, params: FoEParams, f: np.ndarray, op: DegradationOp) -> float:
    """Lower-level objective value at ``u``."""
    return _energy_model(params, op, u, f).energy(u, f)


def foe_grad_u(u: np.ndarray, params: FoEParams, f: np.ndarray, op: DegradationOp) -> np.ndarray:
    """Gradient of the lower-level objective in ``u``."""
    return _energy_model(params, op, u, f).gradient(u, f)


def foe_hessian_apply(u: np.ndarray, params: FoEParams, op: DegradationOp,
                      v: np.ndarray) -> np.ndarray:
    """Matrix-free Hessian of the lower-level objective at ``u`` applied to ``v``."""
    if v.shape != u.shape:
        raise ShapeMismatchError(f"direction shape {v.shape} does not match {u.shape}")
    model = _energy_model(params, op, u)
    return model.hessian_apply(phi_second(model.responses(u)), v)


# ----------------------------------------------------------------------
# Lower-level solver
# ----------------------------------------------------------------------

def bb1_step(rho: np.ndarray, y: np.ndarray, cfg: LowerSolveConfig) -> float:
    """
    Barzilai-Borwein step ``||rho||^2 / <rho, y>`` clamped to the safeguard interval.

    Falls back to ``gamma_max`` when the curvature ``<rho, y>`` is not positive.
    """
    curvature = float(np.vdot(rho, y))
    if curvature <= 0:
        return cfg.gamma_max
    gamma = float(np.vdot(rho, rho)) / curvature
    return float(np.clip(gamma, cfg.gamma_min, cfg.gamma_max))


def run_lower_solver(f: np.ndarray, op: DegradationOp, params: FoEParams, u0: np.ndarray,
                     cfg: LowerSolveConfig) -> LowerSolveResult:
    """
    Spectral gradient descent with Armijo backtracking on the FoE energy.

    Args:
        f: Degraded data
        op: Degradation operator
        params: FoE parameters
        u0: Starting point (warm start)
        cfg: Solver settings

    Returns:
        Final iterate with its energy and iteration count
    """
    u = np.array(u0, dtype=np.float64, copy=True)
    model = _energy_model(params, op, u, f)

    energy, resp, residual = model.energy_terms(u, f)
    if not np.isfinite(energy):
        raise DivergenceError("lower-level energy is not finite at the starting point")
    grad = model.gradient_from_terms(resp, residual)

    references = deque([energy], maxlen=cfg.memory)
    gamma = float(np.clip(cfg.gamma0, cfg.gamma_min, cfg.gamma_max))
    converged = False
    iterations = 0

    for t in range(cfg.t_max):
        direction = -gamma * grad
        slope = float(np.vdot(grad, direction))
        if slope == 0.0:
            converged = True
            break

        reference = max(references)
        nu = 1.0
        accepted = False
        for _ in range(cfg.max_backtracks):
            candidate = u + nu * direction
            cand_energy, cand_resp, cand_residual = model.energy_terms(candidate, f)
            if not np.isfinite(cand_energy):
                raise DivergenceError(
                    f"lower-level energy became non-finite (gamma={gamma:.3e}, nu={nu:.3e})"
                )
            if cand_energy <= reference + cfg.sigma_armijo * nu * slope:
                accepted = True
                break
            nu *= cfg.beta
        if not accepted:
            logger.warning(
                f"Armijo backtracking exhausted after {cfg.max_backtracks} reductions "
                f"at inner iteration {t}; stopping"
            )
            break

        cand_grad = model.gradient_from_terms(cand_resp, cand_residual)
        rho = candidate - u
        change = float(np.linalg.norm(rho))
        scale = float(np.linalg.norm(candidate))
        gamma = bb1_step(rho, cand_grad - grad, cfg)

        u, grad, energy = candidate, cand_grad, cand_energy
        references.append(energy)
        iterations = t + 1

        if change <= cfg.tol_inner * (scale if scale > 0 else 1.0):
            converged = True
            break

    logger.debug(
        f"Lower solve: {iterations} iterations, energy {energy:.6e}, converged={converged}"
    )
    return LowerSolveResult(u=u, energy=energy, iterations=iterations, converged=converged)


def solve_lower(f: np.ndarray, op: DegradationOp, params: FoEParams, u0: np.ndarray,
                cfg: Optional[LowerSolveConfig] = None) -> np.ndarray:
    """Minimizer of the FoE energy reached from ``u0``."""
    return run_lower_solver(f, op, params, u0, cfg or LowerSolveConfig()).u


def restore_foe(f: np.ndarray, op: DegradationOp, params: FoEParams,
                cfg: Optional[LowerSolveConfig] = None) -> np.ndarray:
    """Restore an image with trained parameters, starting from the data."""
    f = as_image(f, "degraded image")
    return solve_lower(f, op, params, initial_estimate(op, f), cfg)


# ----------------------------------------------------------------------
# Adjoint system and parameter gradients
# ----------------------------------------------------------------------

def solve_adjoint_cg(u_star: np.ndarray, params: FoEParams, op: DegradationOp, rhs: np.ndarray,
                     tol: float = 1e-8, max_iter: int = 500,
                     shift: float = 0.0) -> AdjointSolveResult:
    """
    Conjugate gradient solve of ``(Hess J(u*) + shift I) p = rhs``.

    Args:
        u_star: Lower-level solution
        params: FoE parameters
        op: Degradation operator
        rhs: Right-hand side (``g - u*`` during training)
        tol: Relative residual tolerance
        max_iter: Iteration cap
        shift: Tikhonov shift added to the Hessian

    Returns:
        AdjointSolveResult; stagnation is reported through ``converged``
    """
    if rhs.shape != u_star.shape:
        raise ShapeMismatchError(f"rhs shape {rhs.shape} does not match {u_star.shape}")
    if tol <= 0:
        raise ParameterError(f"CG tolerance must be positive, got {tol}")
    if max_iter < 1:
        raise ParameterError(f"CG max_iter must be positive, got {max_iter}")

    rhs_norm = float(np.linalg.norm(rhs))
    if rhs_norm == 0.0:
        return AdjointSolveResult(np.zeros_like(rhs), 0, 0.0, True)

    model = _energy_model(params, op, u_star)
    curvature = phi_second(model.responses(u_star))
    shape = u_star.shape

    def matvec(x):
        v = np.asarray(x, dtype=np.float64).reshape(shape)
        out = model.hessian_apply(curvature, v)
        if shift:
            out = out + shift * v
        return out.ravel()

    hessian = LinearOperator((rhs.size, rhs.size), matvec=matvec, dtype=np.float64)
    counter = {"iterations": 0}

    def callback(_):
        counter["iterations"] += 1

    solution, info = cg(hessian, rhs.ravel(), rtol=tol, atol=0.0, maxiter=max_iter,
                        callback=callback)
    residual_norm = float(np.linalg.norm(matvec(solution) - rhs.ravel()))
    converged = info == 0
    if not converged:
        logger.warning(
            f"Adjoint CG stopped after {counter['iterations']} iterations "
            f"with relative residual {residual_norm / rhs_norm:.3e} (tol {tol:.1e})"
        )
    return AdjointSolveResult(
        p=solution.reshape(shape),
        iterations=counter["iterations"],
        residual_norm=residual_norm,
        converged=converged,
    )


def grad_alpha(u_star: np.ndarray, p: np.ndarray, params: FoEParams, index: int) -> float:
    """
    Derivative of the upper loss in ``alpha_index``: ``<K^T phi'(K u*), p>``.

    ``p`` must solve the adjoint system with right-hand side ``g - u*``.
    """
    params._check_index(index)
    kernel = params.kernel(index)
    otf = kernel.otf(u_star.shape)
    slope = phi_prime(np.real(fft.ifft2(fft.fft2(u_star) * otf)))
    resp_p = np.real(fft.ifft2(fft.fft2(p) * otf))
    return float(np.vdot(slope, resp_p))


def grad_kernel(u_star: np.ndarray, p: np.ndarray, params: FoEParams, index: int) -> np.ndarray:
    """Derivative of the upper loss in the taps of filter ``index``."""
    params._check_index(index)
    kernel = params.kernel(index)
    otf = kernel.otf(u_star.shape)
    resp = np.real(fft.ifft2(fft.fft2(u_star) * otf))
    resp_p = np.real(fft.ifft2(fft.fft2(p) * otf))
    alpha = params.alphas[index]
    return alpha * (
        tap_correlation(u_star, phi_second(resp) * resp_p, kernel.shape, kernel.anchor)
        + tap_correlation(p, phi_prime(resp), kernel.shape, kernel.anchor)
    )
