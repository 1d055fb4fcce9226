"""
Evaluation Commands

Restoration of user images, PSNR evaluation on synthetic edge sets and the
crossover matrix of learned filters against degradation tasks.
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

from cli.schemas.run_config import RunConfig
from cli.services.model_service import LoadedModel, ModelService
from src.artifacts.image_io import read_pgm, write_error_map, write_pgm
from src.artifacts.reports import write_crossover_csv, write_metrics_csv, write_restore_csv
from src.data.dataset_builder import TrainingSetBuilder, build_operator, load_dataset
from src.exceptions import ConfigurationError
from src.imaging.quality import psnr

logger = logging.getLogger(__name__)


def _service(config: RunConfig) -> ModelService:
    return ModelService(
        lower_cfg=config.lower_config(),
        pb_cfg=config.piggyback_config(evaluation=True),
        n_jobs=config.n_jobs,
    )


def _load_models(config: RunConfig, service: ModelService) -> List[LoadedModel]:
    models = [service.load_model(path) for path in config.models]
    if config.preset is not None:
        models.append(service.load_preset(config.preset.value))
    if not models:
        raise ConfigurationError("no model given: set 'models' or 'preset'")
    return models


def cmd_restore(config: RunConfig) -> Dict[str, Any]:
    """
    Restore the configured input images with every model and preset.

    Writes one PGM per (input, model), a PSNR table (empty cells without
    ground truth) and, on request, false-colour error maps.
    """
    section = config.restore
    if not section.inputs:
        raise ConfigurationError("restore.inputs lists no images")
    service = _service(config)
    models = _load_models(config, service)
    pipeline = "foe" if all(m.kind == "foe" for m in models) else "tvdisc"
    op = build_operator(config.degradation_spec(pipeline))
    for model in models:
        service.check_compatible(model, op)

    inputs = [read_pgm(path) for path in section.inputs]
    truths: List[Optional[Any]] = (
        [read_pgm(path) for path in section.ground_truth]
        if section.ground_truth else [None] * len(inputs)
    )

    out = Path(config.out)
    rows = []
    written = []
    for model in models:
        restored = service.restore_batch(model, inputs, op)
        for path, u, g in zip(section.inputs, restored, truths):
            stem = Path(path).stem
            target = write_pgm(u, out / "restored" / f"{stem}_{model.label}.pgm")
            written.append(target)
            value = psnr(u, g) if g is not None else None
            rows.append({"image": Path(path).name, "model": model.label, "psnr": value})
            if g is not None and section.error_maps:
                written.append(write_error_map(u, g, out / "restored" / f"{stem}_{model.label}_error.ppm"))

    table = write_restore_csv(rows, out / "restore_psnr.csv")
    return {"images": written, "metrics": table, "rows": rows}


def cmd_eval(config: RunConfig) -> Dict[str, Any]:
    """
    Mean PSNR of models and presets on the task's training and test edge sets.
    """
    service = _service(config)
    models = _load_models(config, service)
    rows = []
    for model in models:
        pipeline = model.kind
        spec = config.degradation_spec(pipeline)
        op = build_operator(spec)
        train, test = TrainingSetBuilder(spec, config.seed).edge_sets(config.edge_spec())
        for split, pairs in (("train", train), ("test", test)):
            result = service.evaluate(model, pairs, op)
            rows.append({
                "task": config.task.value,
                "setting": model.label,
                "L": model.params.num_filters,
                "symmetry": getattr(model.params, "symmetry", "none"),
                "split": split,
                "psnr_mean": result["psnr_mean"],
            })
    table = write_metrics_csv(rows, Path(config.out) / "eval_metrics.csv")
    return {"metrics": table, "rows": rows}


def cmd_crossover(config: RunConfig) -> Dict[str, Any]:
    """
    PSNR matrix: rows are evaluation tasks, columns learning settings and presets.

    Task test sets are read from PGM files, exported under
    ``<out>/crossover_data/<task>/`` unless the task names a manifest, so a
    cell can be reproduced with ``restore`` on the same files. A failing cell
    is logged and left empty; the run continues.
    """
    if config.crossover is None:
        raise ConfigurationError("crossover section missing from configuration")
    service = _service(config)
    learned = [service.load_model(path) for path in config.models]
    presets = [service.load_preset(p.value) for p in config.crossover.presets]
    columns = [m.label for m in learned] + [p.label for p in presets]

    matrix: Dict[str, Dict[str, Optional[float]]] = {}
    for task in config.crossover.tasks:
        spec = config.degradation_spec("tvdisc", task=task.task, blur=task.blur, noise=task.noise)
        op = build_operator(spec)
        if task.manifest:
            manifest = Path(task.manifest)
        else:
            builder = TrainingSetBuilder(spec, config.seed)
            _, synthetic = builder.edge_sets(config.edge_spec())
            manifest = builder.export_dataset(
                synthetic, Path(config.out) / "crossover_data" / task.name, "test"
            )
        test = load_dataset(manifest)
        row: Dict[str, Optional[float]] = {}
        for model in learned + presets:
            try:
                row[model.label] = service.evaluate(model, test, op)["psnr_mean"]
            except Exception as e:
                logger.error(f"Crossover cell ({task.name}, {model.label}) failed: {str(e)}")
                row[model.label] = None
        matrix[task.name] = row

    table = write_crossover_csv(matrix, Path(config.out) / "crossover.csv", columns)
    return {"matrix": matrix, "table": table}
