"""
Desk-scale checks of the learned gradients and of the learning outcomes.

Most of these run for minutes; skip them with ``pytest -m "not slow"``.
"""

import json

import numpy as np
import pytest

from cli.main import main
from src.artifacts.reports import read_csv
from src.data.dataset_builder import (
    DegradationSpec,
    EdgeSetSpec,
    build_operator,
    degrade_pair,
    extract_patches,
    gen_edge_dataset,
    gen_edge_image,
)
from src.imaging.kernels import gaussian_kernel
from src.imaging.operators import DegradationOp, add_awgn, apply_degradation
from src.models.foe import (
    FoEEnergy,
    FoEParams,
    LowerSolveConfig,
    init_foe_params,
    run_lower_solver,
    solve_adjoint_cg,
)
from src.models.foe_trainer import FoETrainer, FoETrainingConfig
from src.models.tv_discretization import (
    FilterFamily,
    PiggybackConfig,
    filter_grad,
    init_filter_family,
    piggyback_pd,
    preset_family,
)
from src.models.tv_trainer import TVFilterTrainer, TVTrainingConfig

TIGHT = LowerSolveConfig(tol_inner=1e-12, t_max=100000)


def relative_errors(grad, fd):
    floor = 1e-2 * np.max(np.abs(fd))
    return np.abs(grad - fd) / np.maximum(np.abs(fd), floor)


def moving_average(values, window=5):
    return np.convolve(values, np.ones(window) / window, mode="valid")


def assert_loss_trend(history):
    assert history[-1] < history[0]
    tail = moving_average(np.asarray(history))
    tail = tail[len(tail) // 2:]
    assert np.all(np.diff(tail) <= 1e-12 * np.abs(tail[:-1]))


def synthetic_scene(size=128):
    """Piecewise-constant image built from three half-planes."""
    return (0.2 + 0.3 * gen_edge_image(0.3, 5.0, size)
            + 0.25 * gen_edge_image(1.9, -10.0, size)
            + 0.2 * gen_edge_image(4.0, 20.0, size))


@pytest.mark.slow
def test_foe_gradient_matches_finite_differences():
    op = DegradationOp.blur(gaussian_kernel(0.5, width=3))
    g = gen_edge_image(0.4, 0.1, 8)
    f = add_awgn(apply_degradation(op, g), 0.01, 4)
    params = init_foe_params(2, 3, seed=6, alpha0=0.2, kernel_std=0.3)

    def loss(p, u0):
        u = run_lower_solver(f, op, p, u0, TIGHT).u
        return 0.5 * float(np.vdot(u - g, u - g))

    u_star = run_lower_solver(f, op, params, f, TIGHT).u
    p = solve_adjoint_cg(u_star, params, op, g - u_star, tol=1e-12, max_iter=2000).p
    grad_alphas, grad_kernels = FoEEnergy(params, op, g.shape).parameter_gradients(u_star, p)
    grad = np.concatenate([grad_alphas, grad_kernels.ravel()])

    theta = np.concatenate([params.alphas, params.kernels.ravel()])
    h = 1e-4
    fd = np.empty_like(theta)
    for i in range(theta.size):
        shifted = []
        for sign in (1.0, -1.0):
            values = theta.copy()
            values[i] += sign * h
            shifted.append(FoEParams(values[:2], values[2:].reshape(2, 3, 3)))
        fd[i] = (loss(shifted[0], u_star) - loss(shifted[1], u_star)) / (2 * h)

    assert np.all(relative_errors(grad, fd) < 1e-2)


@pytest.mark.slow
def test_piggyback_gradient_matches_finite_differences():
    op = DegradationOp.blur(gaussian_kernel(0.5, width=3))
    g = gen_edge_image(0.4, 0.1, 8)
    f = add_awgn(apply_degradation(op, g), 0.01, 4)
    fam = init_filter_family(1, seed=2, noise=0.05)
    cfg = PiggybackConfig(iterations=5000, lam=0.05).resolve(fam, g.shape)

    saddle, adjoint = piggyback_pd(fam, op, f, g, cfg)
    grad = filter_grad(saddle, adjoint).flat()

    def loss(values):
        trial = FilterFamily.from_flat(values, 1)
        u = piggyback_pd(trial, op, f, None, cfg, track_adjoint=False)[0].u
        return 0.5 * float(np.vdot(u - g, u - g))

    theta = fam.flat()
    h = 1e-5
    fd = np.empty_like(theta)
    for i in range(theta.size):
        step = np.zeros_like(theta)
        step[i] = h
        fd[i] = (loss(theta + step) - loss(theta - step)) / (2 * h)

    assert np.mean(relative_errors(grad, fd) < 5e-2) >= 0.8
    cosine = np.vdot(grad, fd) / (np.linalg.norm(grad) * np.linalg.norm(fd))
    assert cosine > 0.95


@pytest.mark.slow
def test_learned_tv_filters_beat_forward_differences():
    spec = EdgeSetSpec(count=8, size=32)
    degradation = DegradationSpec(blur="gaussianC")
    train = gen_edge_dataset(spec, degradation, "train")
    test = gen_edge_dataset(spec, degradation, "test")

    pb = PiggybackConfig(iterations=500)
    config = TVTrainingConfig(num_filters=2, symmetry="transpose", alpha_step=100.0,
                              iterations=50, piggyback=pb)
    trainer = TVFilterTrainer(build_operator(degradation), config)
    state = trainer.train(train)

    learned = trainer.evaluate(test, state.family, pb)["psnr_mean"]
    baseline = trainer.evaluate(test, preset_family("fd"), pb)["psnr_mean"]
    assert learned >= baseline + 2.0
    assert_loss_trend(state.loss_history)


@pytest.mark.slow
def test_foe_learning_improves_on_degraded_input():
    op = build_operator(DegradationSpec(blur="gauss5"))
    patches, _ = extract_patches([synthetic_scene()], 6, 64, seed=0)
    pairs = [degrade_pair(g, op, 0.01, seed=j) for j, g in enumerate(patches)]
    train, test = pairs[:4], pairs[4:]

    config = FoETrainingConfig(num_filters=4, kernel_size=5, tau=3e-2, k_max=15)
    trainer = FoETrainer(op, config)
    state = trainer.train(train)

    result = trainer.evaluate(test)
    assert result["psnr_mean"] >= result["input_psnr_mean"] + 1.5
    assert_loss_trend(state.loss_history)


def test_crossover_diagonal_matches_restore(tmp_path):
    config = {
        "seed": 5,
        "task": "sr",
        "edges": {"count": 2, "size": 16},
        "tvdisc": {"L": 2, "iterations": 1, "piggyback": {"K": 20}},
        "crossover": {
            "tasks": [
                {"name": "sr-x2-sr", "task": "sr", "blur": "sr"},
                {"name": "gaussianA", "task": "deblur", "blur": "gaussianA"},
            ],
            "presets": ["fd"],
        },
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    out = tmp_path / "out"

    assert main(["train-tvdisc", "--config", str(path), "--out", str(out)]) == 0
    model = str(out / "tvdisc_sr-x2-sr.blrf")
    assert main(["crossover", "--config", str(path), "--model", model, "--out", str(out)]) == 0

    task_dir = out / "crossover_data" / "sr-x2-sr"
    with open(task_dir / "test_manifest.json") as fh:
        entries = json.load(fh)["pairs"]
    restore_config = dict(config, restore={
        "inputs": [str(task_dir / e["data"]) for e in entries],
        "ground_truth": [str(task_dir / e["truth"]) for e in entries],
    })
    restore_path = tmp_path / "restore.json"
    restore_path.write_text(json.dumps(restore_config))
    restore_out = tmp_path / "restored"
    assert main(["restore", "--config", str(restore_path), "--model", model,
                 "--out", str(restore_out)]) == 0

    matrix = read_csv(out / "crossover.csv", index_col="task", float_precision="round_trip")
    table = read_csv(restore_out / "restore_psnr.csv", float_precision="round_trip")
    values = table.loc[table["model"] == "sr-x2-sr", "psnr"].tolist()
    assert len(values) == len(entries)
    assert matrix.loc["sr-x2-sr", "sr-x2-sr"] == float(np.mean(values))
    assert np.isfinite(matrix.loc["gaussianA", "sr-x2-sr"])
