"""
Model Service for Loading Filter Banks and Restoring Images

Handles filter-bank loading, handcrafted presets, compatibility checks and
dataset evaluation shared by the restore, eval and crossover commands.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed

from src.artifacts.filter_bank import read_filter_bank
from src.exceptions import ConfigurationError
from src.imaging.operators import DegradationOp
from src.imaging.quality import psnr
from src.models.foe import FoEParams, LowerSolveConfig, restore_foe
from src.models.tv_discretization import (
    FilterFamily,
    PiggybackConfig,
    preset_family,
    restore_tv,
)
from src.settings import worker_count

logger = logging.getLogger(__name__)

Pair = Tuple[np.ndarray, np.ndarray]


@dataclass
class LoadedModel:
    """A restoration model ready for use."""

    label: str
    kind: str
    params: Union[FoEParams, FilterFamily]
    metadata: Dict[str, Any] = field(default_factory=dict)
    source: str = "preset"


class ModelService:
    """Service for managing restoration models and running them on data."""

    def __init__(self, lower_cfg: Optional[LowerSolveConfig] = None,
                 pb_cfg: Optional[PiggybackConfig] = None, n_jobs: Optional[int] = None):
        """
        Initialize the model service.

        Args:
            lower_cfg: Lower solver settings for FoE restoration
            pb_cfg: Saddle iteration settings for TV restoration
            n_jobs: Requested worker count (capped by ``BILEVEL_THREADS``)
        """
        self.lower_cfg = lower_cfg or LowerSolveConfig()
        self.pb_cfg = pb_cfg or PiggybackConfig()
        self.n_jobs = worker_count(n_jobs)
        self.models: Dict[str, LoadedModel] = {}

    # ------------------------------------------------------------------
    # Model loading
    # ------------------------------------------------------------------

    def load_model(self, path: Union[str, Path]) -> LoadedModel:
        """Load a filter-bank file; its label is the setting recorded in the sidecar."""
        path = Path(path)
        params, metadata = read_filter_bank(path)
        kind = "foe" if isinstance(params, FoEParams) else "tvdisc"
        label = metadata.get("setting") or path.stem
        if not metadata:
            logger.warning(f"⚠️ No metadata sidecar for {path}; using file name as label")
        model = LoadedModel(label=label, kind=kind, params=params, metadata=metadata, source=str(path))
        self.models[label] = model
        logger.info(f"✅ Loaded {kind} model {label} from {path}")
        return model

    def load_preset(self, name: str) -> LoadedModel:
        """Handcrafted TV filter family by name."""
        model = LoadedModel(label=name, kind="tvdisc", params=preset_family(name))
        self.models[name] = model
        return model

    def check_compatible(self, model: LoadedModel, op: DegradationOp) -> None:
        """
        Reject models trained for a different degradation.

        FoE models must match the blur exactly; TV families must match the
        operator kind (deblurring vs decimation).
        """
        trained_for = model.metadata.get("operator")
        if trained_for is None:
            return
        if model.kind == "foe" and trained_for != op.describe():
            raise ConfigurationError(
                f"model/task mismatch: {model.source} was trained for {trained_for}, "
                f"task uses {op.describe()}"
            )
        if model.kind == "tvdisc":
            trained_sr = trained_for.startswith("decimated_blur")
            if trained_sr != (op.kind == "decimated_blur"):
                raise ConfigurationError(
                    f"model/task mismatch: {model.source} was trained for {trained_for}, "
                    f"task uses {op.describe()}"
                )

    # ------------------------------------------------------------------
    # Restoration
    # ------------------------------------------------------------------

    def restore(self, model: LoadedModel, f: np.ndarray, op: DegradationOp) -> np.ndarray:
        """Restore one degraded image."""
        if model.kind == "foe":
            return restore_foe(f, op, model.params, self.lower_cfg)
        return restore_tv(f, op, model.params, self.pb_cfg)

    def restore_batch(self, model: LoadedModel, images: Sequence[np.ndarray],
                      op: DegradationOp) -> List[np.ndarray]:
        return Parallel(n_jobs=self.n_jobs, prefer="threads")(
            delayed(self.restore)(model, f, op) for f in images
        )

    def evaluate(self, model: LoadedModel, pairs: Sequence[Pair], op: DegradationOp) -> Dict[str, Any]:
        """
        Restore every pair and average the PSNR.

        Returns:
            Dictionary with per-sample PSNRs, their mean and the restored images
        """
        restored = self.restore_batch(model, [f for _, f in pairs], op)
        values = [psnr(u, g) for u, (g, _) in zip(restored, pairs)]
        mean = float(np.mean(values))
        logger.info(f"{model.label}: mean PSNR {mean:.2f} dB over {len(values)} images")
        return {"psnr": values, "psnr_mean": mean, "restored": restored}

    def get_model_info(self, model: LoadedModel) -> Dict[str, Any]:
        info = {"label": model.label, "kind": model.kind, "source": model.source,
                "L": model.params.num_filters}
        if model.kind == "tvdisc":
            info["symmetry"] = model.params.symmetry
            info["mu"] = model.params.mu
        else:
            info["kappa"] = model.params.kernel_size
        return info
