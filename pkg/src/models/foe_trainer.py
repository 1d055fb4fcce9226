"""
FoE Bilevel Training Module

This module provides the outer loop of Field-of-Experts learning: for every
outer iteration each training pair is restored with the current parameters
(warm-started lower solve), the adjoint system is solved by conjugate
gradients, the per-sample parameter gradients are averaged and a projected
gradient step is taken on the weights and filters.
"""

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from src.exceptions import ParameterError, ShapeMismatchError
from src.imaging.operators import DegradationOp, initial_estimate
from src.imaging.quality import psnr
from src.models.foe import (
    FoEEnergy,
    FoEParams,
    LowerSolveConfig,
    init_foe_params,
    project_params,
    restore_foe,
    run_lower_solver,
    solve_adjoint_cg,
)
from src.settings import worker_count

logger = logging.getLogger(__name__)

Pair = Tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True)
class FoETrainingConfig:
    """Outer-loop settings of FoE learning."""

    num_filters: int = 4
    kernel_size: int = 5
    tau: float = 1e-3
    k_max: int = 100
    lower: LowerSolveConfig = field(default_factory=LowerSolveConfig)
    cg_tol: float = 1e-8
    cg_max_iter: int = 500
    cg_shift: float = 0.0
    seed: int = 42

    def __post_init__(self):
        if self.num_filters < 1 or self.kernel_size < 1:
            raise ParameterError(
                f"need num_filters >= 1 and kernel_size >= 1, got "
                f"{self.num_filters}, {self.kernel_size}"
            )
        if self.tau < 0:
            raise ParameterError(f"outer step tau must be >= 0, got {self.tau}")
        if self.k_max < 0:
            raise ParameterError(f"k_max must be >= 0, got {self.k_max}")
        if self.cg_tol <= 0 or self.cg_max_iter < 1 or self.cg_shift < 0:
            raise ParameterError("invalid conjugate gradient settings")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class TrainStateFoE:
    """Mutable state of an FoE training run."""

    params: FoEParams
    warm_starts: List[np.ndarray]
    tau: float
    iteration: int = 0
    loss_history: List[float] = field(default_factory=list)
    psnr_history: List[float] = field(default_factory=list)


@dataclass
class SampleOutcome:
    u: np.ndarray
    loss: float
    psnr: float
    grad_alphas: np.ndarray
    grad_kernels: np.ndarray
    cg_converged: bool


def check_dataset(dataset: Sequence[Pair], op: DegradationOp) -> None:
    """Reject empty datasets and pairs whose data does not match the operator."""
    if len(dataset) == 0:
        raise ParameterError("training dataset is empty")
    for j, (g, f) in enumerate(dataset):
        expected = op.output_shape(g.shape)
        if f.shape != expected:
            raise ShapeMismatchError(
                f"sample {j}: data shape {f.shape} does not match {op.describe()} "
                f"applied to ground truth of shape {g.shape}"
            )


class FoETrainer:
    """
    Bilevel learning of FoE weights and filters for one degradation.

    Per-sample solves run through joblib; results are reduced in sample order.
    """

    def __init__(self, op: DegradationOp, config: Optional[FoETrainingConfig] = None,
                 n_jobs: Optional[int] = None):
        """
        Initialize the trainer.

        Args:
            op: Degradation shared by every training pair
            config: Outer-loop settings
            n_jobs: Requested worker count (capped by ``BILEVEL_THREADS``)
        """
        self.op = op
        self.config = config or FoETrainingConfig()
        self.n_jobs = worker_count(n_jobs)
        self.state: Optional[TrainStateFoE] = None

    def initial_params(self) -> FoEParams:
        cfg = self.config
        return init_foe_params(cfg.num_filters, cfg.kernel_size, cfg.seed)

    def _sample_step(self, params: FoEParams, g: np.ndarray, f: np.ndarray,
                     u0: np.ndarray) -> SampleOutcome:
        cfg = self.config
        solve = run_lower_solver(f, self.op, params, u0, cfg.lower)
        u = solve.u
        adjoint = solve_adjoint_cg(u, params, self.op, g - u, tol=cfg.cg_tol,
                                   max_iter=cfg.cg_max_iter, shift=cfg.cg_shift)
        grad_alphas, grad_kernels = FoEEnergy(params, self.op, u.shape).parameter_gradients(
            u, adjoint.p
        )
        diff = u - g
        return SampleOutcome(
            u=u,
            loss=0.5 * float(np.vdot(diff, diff)),
            psnr=psnr(u, g),
            grad_alphas=grad_alphas,
            grad_kernels=grad_kernels,
            cg_converged=adjoint.converged,
        )

    def _sweep(self, params: FoEParams, dataset: Sequence[Pair]) -> List[SampleOutcome]:
        warm = self.state.warm_starts
        return Parallel(n_jobs=self.n_jobs, prefer="threads")(
            delayed(self._sample_step)(params, g, f, warm[j]) for j, (g, f) in enumerate(dataset)
        )

    def train(self, dataset: Sequence[Pair], init: Optional[FoEParams] = None) -> TrainStateFoE:
        """
        Run the outer projected-gradient loop.

        Args:
            dataset: Pairs (ground truth g_j, degraded f_j)
            init: Initial parameters (seeded initialization when omitted)

        Returns:
            Final training state; ``loss_history`` holds k_max + 1 entries,
            the last one evaluated with the final parameters
        """
        check_dataset(dataset, self.op)
        cfg = self.config
        params = project_params(init if init is not None else self.initial_params())
        self.state = TrainStateFoE(
            params=params,
            warm_starts=[initial_estimate(self.op, f) for _, f in dataset],
            tau=cfg.tau,
        )
        s = len(dataset)

        logger.info("=" * 80)
        logger.info("TRAINING FOE REGULARIZER")
        logger.info("=" * 80)
        logger.info(
            f"Samples: {s} | L={params.num_filters} | kappa={params.kernel_size} | "
            f"tau={cfg.tau:g} | k_max={cfg.k_max} | op={self.op.describe()} | workers={self.n_jobs}"
        )

        for k in range(cfg.k_max + 1):
            outcomes = self._sweep(self.state.params, dataset)
            self.state.warm_starts = [o.u for o in outcomes]
            loss = sum(o.loss for o in outcomes) / s
            mean_psnr = float(np.mean([o.psnr for o in outcomes]))
            self.state.loss_history.append(loss)
            self.state.psnr_history.append(mean_psnr)

            stalled = sum(not o.cg_converged for o in outcomes)
            logger.info(
                f"Iteration {k:4d} | loss {loss:.6e} | train PSNR {mean_psnr:.2f} dB"
                + (f" | CG not converged on {stalled} sample(s)" if stalled else "")
            )
            if k == cfg.k_max:
                break

            grad_alphas = sum(o.grad_alphas for o in outcomes) / s
            grad_kernels = sum(o.grad_kernels for o in outcomes) / s
            current = self.state.params
            self.state.params = project_params(FoEParams(
                current.alphas - cfg.tau * grad_alphas,
                current.kernels - cfg.tau * grad_kernels,
            ))
            self.state.iteration = k + 1

        logger.info("=" * 80)
        logger.info(
            f"FOE TRAINING DONE | loss {self.state.loss_history[0]:.6e} -> "
            f"{self.state.loss_history[-1]:.6e}"
            f" | train PSNR {self.state.psnr_history[0]:.2f} -> {self.state.psnr_history[-1]:.2f} dB"
        )
        logger.info("=" * 80)
        return self.state

    def evaluate(self, dataset: Sequence[Pair], params: Optional[FoEParams] = None) -> Dict[str, Any]:
        """
        Restore every pair and report PSNR statistics.

        Returns:
            Dictionary with per-sample PSNRs, their mean and the degraded-input mean
            (the latter only for same-size operators)
        """
        check_dataset(dataset, self.op)
        if params is None:
            if self.state is None:
                raise ParameterError("no trained parameters: run train() first or pass params")
            params = self.state.params
        restored = Parallel(n_jobs=self.n_jobs, prefer="threads")(
            delayed(restore_foe)(f, self.op, params, self.config.lower) for _, f in dataset
        )
        values = [psnr(u, g) for u, (g, _) in zip(restored, dataset)]
        result = {"psnr": values, "psnr_mean": float(np.mean(values)), "restored": restored}
        if self.op.kind != "decimated_blur":
            result["input_psnr_mean"] = float(np.mean([psnr(f, g) for g, f in dataset]))
        return result

    def save_model(self, path: Path, setting: str, extra: Optional[Dict[str, Any]] = None) -> Path:
        """
        Persist the trained parameters as a filter-bank file with a JSON sidecar.

        Args:
            path: Target file
            setting: Name of the degradation setting the model was trained for
            extra: Additional metadata

        Returns:
            Path of the written file
        """
        from src.artifacts.filter_bank import write_foe_params

        if self.state is None:
            raise ParameterError("No model has been trained yet!")
        metadata = {
            "setting": setting,
            "operator": self.op.describe(),
            "training": self.config.to_dict(),
            "loss_history": self.state.loss_history,
            "psnr_history": self.state.psnr_history,
        }
        metadata.update(extra or {})
        write_foe_params(self.state.params, path, metadata)
        logger.info(f"✅ Saved FoE model to {path}")
        return Path(path)


def train_foe(dataset: Sequence[Pair], op: DegradationOp, num_filters: int, kernel_size: int,
              tau: float, k_max: int, cfg: Optional[LowerSolveConfig] = None,
              init: Optional[FoEParams] = None, n_jobs: Optional[int] = None,
              seed: int = 42) -> Tuple[FoEParams, List[float]]:
    """
    Convenience function running FoE bilevel learning end to end.

    Returns:
        Tuple of (trained parameters, loss history)
    """
    config = FoETrainingConfig(
        num_filters=num_filters,
        kernel_size=kernel_size,
        tau=tau,
        k_max=k_max,
        lower=cfg or LowerSolveConfig(),
        seed=seed,
    )
    trainer = FoETrainer(op, config, n_jobs=n_jobs)
    state = trainer.train(dataset, init)
    return state.params, state.loss_history
