"""
Pydantic Schemas for Run Configuration

Defines the JSON document every CLI subcommand reads. Each command-line
flag has a top-level key of the same name; flags override file values.
Unknown keys are rejected.
"""

from enum import Enum
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.data.dataset_builder import DegradationSpec, EdgeSetSpec, PatchSetSpec
from src.imaging.kernels import BLUR_SETTINGS
from src.models.foe import LowerSolveConfig
from src.models.foe_trainer import FoETrainingConfig
from src.models.tv_discretization import PiggybackConfig
from src.models.tv_trainer import TVTrainingConfig

KNOWN_BLURS = sorted(BLUR_SETTINGS) + ["delta"]


class Task(str, Enum):
    """Restoration tasks."""
    DEBLUR = "deblur"
    SR = "sr"


class Symmetry(str, Enum):
    """Symmetry groups of a TV filter family."""
    NONE = "none"
    TRANSPOSE = "transpose"
    ROT90 = "rot90"


class Preset(str, Enum):
    """Handcrafted TV filter families."""
    FD = "fd"
    CD3 = "cd3"
    CD4 = "cd4"


class Section(BaseModel):
    """Base of every config section: unknown keys are errors."""
    model_config = ConfigDict(extra="forbid")


def _check_blur(value: Optional[str]) -> Optional[str]:
    if value is not None and value not in KNOWN_BLURS:
        raise ValueError(f"unknown blur {value!r}; known: {', '.join(KNOWN_BLURS)}")
    return value


class EdgeSetConfig(Section):
    """Synthetic edge images."""

    count: int = Field(8, ge=1, description="Number of training images s")
    size: int = Field(32, ge=2, description="Image side length in pixels")
    test_count: Optional[int] = Field(None, ge=1, description="Number of test images (defaults to count)")


class PatchSetConfig(Section):
    """Patches cut from directories of grayscale PGM images."""

    source_dir: str = Field(..., description="Directory of training images")
    test_dir: Optional[str] = Field(None, description="Directory of test images")
    patches_per_image: int = Field(3, ge=1)
    patch_size: int = Field(100, ge=1)


class LowerSolverSection(Section):
    """Spectral-gradient lower solver."""

    sigma_armijo: float = Field(1e-4, gt=0, lt=1)
    beta: float = Field(0.5, gt=0, lt=1)
    gamma_min: float = Field(1e-4, gt=0)
    gamma_max: float = Field(1.0, gt=0)
    gamma0: float = Field(1.0, gt=0)
    tol_inner: float = Field(1e-6, ge=0)
    t_max: int = Field(8000, ge=1)
    memory: int = Field(1, ge=1, description="Non-monotone Armijo window (1 = monotone)")
    max_backtracks: int = Field(60, ge=1)

    @model_validator(mode="after")
    def check_gamma_range(self):
        if self.gamma_min >= self.gamma_max:
            raise ValueError("gamma_min must be smaller than gamma_max")
        return self


class FoESection(Section):
    """FoE bilevel learning."""

    kappa: int = Field(5, ge=1, description="Filter size")
    L: int = Field(4, ge=1, description="Number of filters (overridden by --L)")
    tau: float = Field(1e-3, ge=0, description="Outer step size")
    k_max: int = Field(100, ge=0, description="Outer iterations")
    blurs: Optional[List[str]] = Field(None, description="One model per blur setting")
    lower: LowerSolverSection = Field(default_factory=LowerSolverSection)
    cg_tol: float = Field(1e-8, gt=0)
    cg_max_iter: int = Field(500, ge=1)
    cg_shift: float = Field(0.0, ge=0)

    @field_validator("blurs")
    @classmethod
    def check_blurs(cls, value):
        for blur in value or []:
            _check_blur(blur)
        return value


class PiggybackSection(Section):
    """Piggyback primal-dual iteration."""

    sigma_p: Optional[float] = Field(None, gt=0)
    tau_u: Optional[float] = Field(None, gt=0)
    tau_q: Optional[float] = Field(None, gt=0)
    theta: float = Field(1.0, ge=0, le=1)
    K: int = Field(2000, ge=0, description="Iterations per outer step")
    lam: float = Field(1.0, gt=0)
    prox_method: Literal["fft", "cg"] = "fft"


class TVDiscSection(Section):
    """TV discretization filter learning."""

    L: int = Field(2, ge=1, description="Number of filter pairs (overridden by --L)")
    symmetry: Symmetry = Field(Symmetry.TRANSPOSE, description="Overridden by --symmetry")
    alpha: float = Field(100.0, ge=0, description="Outer step size")
    iterations: int = Field(500, ge=0, description="Outer iterations I")
    piggyback: PiggybackSection = Field(default_factory=PiggybackSection)
    eval_K: Optional[int] = Field(None, ge=1, description="Iterations for restoration (defaults to K)")


class RestoreSection(Section):
    """Inputs of the restore command."""

    inputs: List[str] = Field(default_factory=list, description="Degraded PGM files")
    ground_truth: Optional[List[str]] = Field(None, description="Matching clean PGM files")
    error_maps: bool = Field(False, description="Write false-colour error maps")

    @model_validator(mode="after")
    def check_lengths(self):
        if self.ground_truth is not None and len(self.ground_truth) != len(self.inputs):
            raise ValueError("ground_truth must list one file per input")
        return self


class CrossoverTask(Section):
    """One evaluation task of the crossover matrix."""

    name: str
    task: Task = Task.DEBLUR
    blur: Optional[str] = None
    noise: float = Field(0.01, ge=0)
    manifest: Optional[str] = Field(
        None, description="Exported dataset manifest (synthetic edge test set when omitted)"
    )

    @field_validator("blur")
    @classmethod
    def check_blur(cls, value):
        return _check_blur(value)


class CrossoverSection(Section):
    """Learned models evaluated on every task, plus handcrafted presets."""

    tasks: List[CrossoverTask] = Field(..., min_length=1)
    presets: List[Preset] = Field(default_factory=lambda: [Preset.CD4])


class RunConfig(Section):
    """Complete configuration of a CLI run."""

    seed: int = Field(42, description="Seed of data synthesis and initialization")
    out: str = Field("results", description="Output directory")
    task: Task = Field(Task.DEBLUR)
    blur: Optional[str] = Field(None, description="Blur setting (task default when omitted)")
    noise: float = Field(0.01, ge=0, description="Noise standard deviation")
    factor: int = Field(2, ge=2, description="Decimation factor of the sr task")
    padding: Literal["periodic", "reflexive_crop"] = "periodic"
    L: Optional[int] = Field(None, ge=1, description="Filter count override")
    symmetry: Optional[Symmetry] = Field(None, description="Symmetry override")
    preset: Optional[Preset] = Field(None, description="Handcrafted TV filter family")
    models: List[str] = Field(default_factory=list, description="Filter-bank files")
    n_jobs: Optional[int] = Field(None, ge=1)

    edges: EdgeSetConfig = Field(default_factory=EdgeSetConfig)
    patches: Optional[PatchSetConfig] = None
    foe: FoESection = Field(default_factory=FoESection)
    tvdisc: TVDiscSection = Field(default_factory=TVDiscSection)
    restore: RestoreSection = Field(default_factory=RestoreSection)
    crossover: Optional[CrossoverSection] = None

    @field_validator("blur")
    @classmethod
    def check_blur(cls, value):
        return _check_blur(value)

    @model_validator(mode="after")
    def check_symmetry(self):
        if self.tv_symmetry == Symmetry.ROT90 and self.tv_filters % 4 != 0:
            raise ValueError(f"symmetry rot90 needs L divisible by 4, got L={self.tv_filters}")
        return self

    # ------------------------------------------------------------------
    # Resolved values
    # ------------------------------------------------------------------

    @property
    def foe_filters(self) -> int:
        return self.L if self.L is not None else self.foe.L

    @property
    def tv_filters(self) -> int:
        return self.L if self.L is not None else self.tvdisc.L

    @property
    def tv_symmetry(self) -> Symmetry:
        return self.symmetry if self.symmetry is not None else self.tvdisc.symmetry

    def degradation_spec(self, pipeline: str, task: Optional[Task] = None,
                         blur: Optional[str] = None,
                         noise: Optional[float] = None) -> DegradationSpec:
        """
        Degradation of a task; the blur defaults to gauss5 (FoE), gaussianC
        (TV deblurring) or sr (super-resolution).
        """
        task = Task(task or self.task)
        blur = blur or self.blur
        if blur is None:
            if task == Task.SR:
                blur = "sr"
            else:
                blur = "gauss5" if pipeline == "foe" else "gaussianC"
        return DegradationSpec(
            blur=blur,
            noise_sigma=self.noise if noise is None else noise,
            factor=self.factor if task == Task.SR else 1,
            padding=self.padding,
        )

    def setting_name(self, spec: DegradationSpec) -> str:
        if spec.factor > 1:
            return f"sr-x{spec.factor}-{spec.blur}"
        return spec.blur

    def edge_spec(self) -> EdgeSetSpec:
        return EdgeSetSpec(self.edges.count, self.edges.size, self.seed, self.edges.test_count)

    def patch_spec(self, test: bool = False) -> Optional[PatchSetSpec]:
        if self.patches is None:
            return None
        source = self.patches.test_dir if test else self.patches.source_dir
        if source is None:
            return None
        return PatchSetSpec(source, self.patches.patches_per_image, self.patches.patch_size,
                            self.seed + (1 if test else 0))

    def lower_config(self) -> LowerSolveConfig:
        return LowerSolveConfig(**self.foe.lower.model_dump())

    def foe_training_config(self) -> FoETrainingConfig:
        return FoETrainingConfig(
            num_filters=self.foe_filters,
            kernel_size=self.foe.kappa,
            tau=self.foe.tau,
            k_max=self.foe.k_max,
            lower=self.lower_config(),
            cg_tol=self.foe.cg_tol,
            cg_max_iter=self.foe.cg_max_iter,
            cg_shift=self.foe.cg_shift,
            seed=self.seed,
        )

    def piggyback_config(self, evaluation: bool = False) -> PiggybackConfig:
        pb = self.tvdisc.piggyback
        iterations = pb.K
        if evaluation and self.tvdisc.eval_K is not None:
            iterations = self.tvdisc.eval_K
        return PiggybackConfig(
            sigma_p=pb.sigma_p,
            tau_u=pb.tau_u,
            tau_q=pb.tau_q,
            theta=pb.theta,
            iterations=iterations,
            lam=pb.lam,
            prox_method=pb.prox_method,
        )

    def tv_training_config(self) -> TVTrainingConfig:
        return TVTrainingConfig(
            num_filters=self.tv_filters,
            symmetry=self.tv_symmetry.value,
            alpha_step=self.tvdisc.alpha,
            iterations=self.tvdisc.iterations,
            piggyback=self.piggyback_config(),
            seed=self.seed,
        )
