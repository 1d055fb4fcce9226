"""
Training Commands

Entry points that learn FoE regularizers and TV discretization filters and
write the filter-bank files, loss curves and metrics tables.
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from cli.schemas.run_config import RunConfig
from cli.services.model_service import ModelService
from src.artifacts.reports import write_loss_csv, write_metrics_csv
from src.data.dataset_builder import DegradationSpec, Pair, TrainingSetBuilder, build_operator
from src.models.foe_trainer import FoETrainer
from src.models.tv_trainer import TVFilterTrainer

logger = logging.getLogger(__name__)


def build_datasets(config: RunConfig, spec: DegradationSpec,
                   use_patches: bool = True) -> Tuple[List[Pair], Optional[List[Pair]]]:
    """
    Training and test pairs: image patches when configured, edge images otherwise.
    """
    builder = TrainingSetBuilder(spec, random_state=config.seed)
    train_spec = config.patch_spec() if use_patches else None
    if train_spec is None:
        return builder.edge_sets(config.edge_spec())

    train = builder.patch_set(train_spec)
    test_spec = config.patch_spec(test=True)
    test = builder.patch_set(test_spec) if test_spec is not None else None
    return train, test


def _metric_row(config: RunConfig, setting: str, num_filters: int, symmetry: str,
                split: str, value: float) -> Dict[str, Any]:
    return {
        "task": config.task.value,
        "setting": setting,
        "L": num_filters,
        "symmetry": symmetry,
        "split": split,
        "psnr_mean": value,
    }


def cmd_train_foe(config: RunConfig) -> Dict[str, Any]:
    """
    Train one FoE model per blur setting.

    Returns:
        Dictionary with the written model, loss and metrics paths
    """
    out = Path(config.out)
    blurs = config.foe.blurs or [config.degradation_spec("foe").blur]
    training = config.foe_training_config()
    rows, models, losses = [], [], []

    for blur in blurs:
        spec = config.degradation_spec("foe", blur=blur)
        setting = config.setting_name(spec)
        train, test = build_datasets(config, spec)

        trainer = FoETrainer(build_operator(spec), training, n_jobs=config.n_jobs)
        state = trainer.train(train)

        model_path = trainer.save_model(out / f"foe_{setting}.blrf", setting,
                                        {"task": config.task.value, "seed": config.seed})
        models.append(model_path)
        losses.append(write_loss_csv(state.loss_history, out / f"foe_{setting}_loss.csv"))

        for split, pairs in (("train", train), ("test", test)):
            if not pairs:
                continue
            result = trainer.evaluate(pairs)
            rows.append(_metric_row(config, setting, training.num_filters, "none", split,
                                    result["psnr_mean"]))
            if "input_psnr_mean" in result:
                rows.append(_metric_row(config, setting, training.num_filters, "none",
                                        f"{split}_degraded", result["input_psnr_mean"]))

    metrics = write_metrics_csv(rows, out / "foe_metrics.csv")
    return {"models": models, "losses": losses, "metrics": metrics, "rows": rows}


def cmd_train_tvdisc(config: RunConfig) -> Dict[str, Any]:
    """
    Learn a TV filter family for the configured task on edge images.

    The metrics table also lists the handcrafted preset (``--preset``,
    forward differences by default) on the same data.

    Returns:
        Dictionary with the written model, loss and metrics paths
    """
    out = Path(config.out)
    spec = config.degradation_spec("tvdisc")
    setting = config.setting_name(spec)
    train, test = build_datasets(config, spec, use_patches=False)

    training = config.tv_training_config()
    op = build_operator(spec)
    trainer = TVFilterTrainer(op, training, n_jobs=config.n_jobs)
    state = trainer.train(train)

    model_path = trainer.save_model(out / f"tvdisc_{setting}.blrf", setting,
                                    {"task": config.task.value, "seed": config.seed})
    loss_path = write_loss_csv(state.loss_history, out / f"tvdisc_{setting}_loss.csv")

    service = ModelService(pb_cfg=config.piggyback_config(evaluation=True), n_jobs=config.n_jobs)
    learned = service.load_model(model_path)
    preset = service.load_preset(config.preset.value if config.preset else "fd")

    rows = []
    for model in (learned, preset):
        symmetry = model.params.symmetry
        for split, pairs in (("train", train), ("test", test)):
            result = service.evaluate(model, pairs, op)
            row_setting = setting if model is learned else f"{setting}:{model.label}"
            rows.append(_metric_row(config, row_setting, model.params.num_filters, symmetry,
                                    split, result["psnr_mean"]))

    metrics = write_metrics_csv(rows, out / "tvdisc_metrics.csv")
    return {"models": [model_path], "losses": [loss_path], "metrics": metrics, "rows": rows}
