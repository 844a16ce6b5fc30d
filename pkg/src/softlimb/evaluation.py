"""Closed-loop benchmarks: force-prediction error on held-out episodes,
positioning error through the forward solver, and inference timing."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import ffnn as ffnn_mod
from . import kt as kt_mod
from .cosserat import (
    ConvergenceError,
    MaterialLimitError,
    SolverOptions,
    TendonForces,
    solve_statics,
)


class BenchmarkError(RuntimeError):
    pass


@dataclass
class BenchmarkReport:
    model_id: str
    dataset_hash: str
    sample_count: int
    force_mae_n: np.ndarray = None  # (4,)
    force_std_n: np.ndarray = None  # (4,) std of the absolute errors
    position_mae_mm: np.ndarray = None  # (3,)
    position_std_mm: np.ndarray = None
    solver_failures: int = 0
    timing_mean_us: float = None
    timing_std_us: float = None
    timing_iterations: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.sample_count <= 0:
            raise BenchmarkError("sample count must be positive")

    def as_dict(self):
        def arr(a):
            return None if a is None else [float(v) for v in np.asarray(a)]

        return {
            "model_id": self.model_id,
            "dataset_hash": self.dataset_hash,
            "sample_count": self.sample_count,
            "force_mae_n": arr(self.force_mae_n),
            "force_std_n": arr(self.force_std_n),
            "position_mae_mm": arr(self.position_mae_mm),
            "position_std_mm": arr(self.position_std_mm),
            "solver_failures": self.solver_failures,
            "timing_mean_us": self.timing_mean_us,
            "timing_std_us": self.timing_std_us,
            "timing_iterations": self.timing_iterations,
            "extra": self.extra,
        }

    def as_text(self) -> str:
        lines = [
            "benchmark report: %s" % self.model_id,
            "dataset hash: %s" % self.dataset_hash,
            "samples: %d" % self.sample_count,
        ]
        if self.force_mae_n is not None:
            lines.append("force MAE per tendon [N]:")
            for i in range(4):
                lines.append(
                    "  tendon %d: %.4f +/- %.4f" % (i, self.force_mae_n[i], self.force_std_n[i])
                )
        if self.position_mae_mm is not None:
            lines.append("tip position MAE per axis [mm]:")
            for i, ax in enumerate("xyz"):
                lines.append(
                    "  %s: %.3f +/- %.3f" % (ax, self.position_mae_mm[i], self.position_std_mm[i])
                )
            lines.append("solver failures (excluded): %d" % self.solver_failures)
        if self.timing_mean_us is not None:
            lines.append(
                "inference time: %.1f +/- %.1f us over %d iterations"
                % (self.timing_mean_us, self.timing_std_us, self.timing_iterations)
            )
        return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------
# prediction adapters: map held-out episodes to per-step force predictions

def kt_predictions(model, episodes):
    """Teacher-forced predictions for every step of every episode.

    Each step j is predicted with the true preceding states/goals as context
    (most recent `sequence_length` tokens), so steps stay individually
    comparable with the FFNN.  Returns (pred (M,4), labels (M,4), goals (M,3)).
    """
    n_ctx = model.config.sequence_length
    preds, labels, goals = [], [], []
    for ep in episodes:
        states = np.array(
            [np.concatenate([s.tip_position, s.tendon_forces]) for s in ep.steps]
        )
        wanted = np.array([s.desired_tip for s in ep.steps])
        actions = np.array([s.label_forces for s in ep.steps])
        ns = model.normalizer.normalize_state(states)
        ng = model.normalizer.normalize_goal(wanted)
        n = len(ep.steps)
        # one causal forward per window start covers sequence_length steps at once
        for start in range(0, n, n_ctx):
            t = min(n_ctx, n - start)
            batch = kt_mod.TokenBatch(
                states=ns[start : start + t][None],
                goals=ng[start : start + t][None],
                actions=np.zeros((1, t, model.config.action_dim)),
            )
            preds.append(kt_mod.predict_forces(model, batch)[0])
            labels.append(actions[start : start + t])
            goals.append(wanted[start : start + t])
    return np.concatenate(preds), np.concatenate(labels), np.concatenate(goals)


def ffnn_predictions(model, episodes):
    labels, goals = [], []
    for ep in episodes:
        for s in ep.steps:
            labels.append(s.label_forces)
            goals.append(s.desired_tip)
    labels = np.asarray(labels)
    goals = np.asarray(goals)
    preds = ffnn_mod.predict(model, goals)
    return preds, labels, goals


def model_predictions(model, episodes):
    if isinstance(model, kt_mod.KtModel):
        return kt_predictions(model, episodes)
    return ffnn_predictions(model, episodes)


# ----------------------------------------------------------------------

def force_error_benchmark(predicted, actual):
    """Per-tendon MAE and std of the absolute errors, both (4,) in newtons."""
    predicted = np.asarray(predicted, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if predicted.shape != actual.shape or predicted.ndim != 2:
        raise BenchmarkError("prediction/label arrays must both be (M, 4)")
    if predicted.shape[0] == 0:
        raise BenchmarkError("empty test set")
    err = np.abs(predicted - actual)
    return err.mean(axis=0), err.std(axis=0)


def position_error_benchmark(
    predicted_forces,
    desired_tips,
    geometry,
    material,
    solver_options=None,
    max_samples=None,
):
    """Realize each force prediction through the static solver and measure the
    per-axis tip error in millimetres.

    Returns (mae_mm (3,), std_mm (3,), failures, achieved (M,3), desired (M,3));
    solver failures are excluded from the statistics and counted.
    """
    predicted_forces = np.asarray(predicted_forces, dtype=np.float64)
    desired_tips = np.asarray(desired_tips, dtype=np.float64)
    if max_samples is not None:
        predicted_forces = predicted_forces[:max_samples]
        desired_tips = desired_tips[:max_samples]
    if predicted_forces.shape[0] == 0:
        raise BenchmarkError("empty test set")
    achieved, desired = [], []
    failures = 0
    if solver_options is None:
        solver_options = SolverOptions()
    for forces, target in zip(predicted_forces, desired_tips):
        try:
            cfg = solve_statics(
                geometry, material, TendonForces(np.clip(forces, 0.0, 10.0)),
                options=solver_options,
            )
        except (ConvergenceError, MaterialLimitError):
            failures += 1
            continue
        achieved.append(cfg.tip_position)
        desired.append(target)
    if not achieved:
        raise BenchmarkError("forward solver failed on every sample")
    achieved = np.asarray(achieved)
    desired = np.asarray(desired)
    err_mm = np.abs(achieved - desired) * 1000.0
    return err_mm.mean(axis=0), err_mm.std(axis=0), failures, achieved, desired


def timing_benchmark(inference_fn, iterations=1000, warmup=20):
    """Wall-clock mean and std in microseconds for repeated single inferences."""
    if iterations < 1:
        raise BenchmarkError("iterations must be >= 1")
    for _ in range(warmup):
        inference_fn()
    samples = np.empty(iterations)
    for i in range(iterations):
        t0 = time.perf_counter()
        inference_fn()
        samples[i] = time.perf_counter() - t0
    return samples.mean() * 1e6, samples.std() * 1e6


def kt_single_step_fn(model):
    """Closure timing one next-force prediction with a full context window."""
    cfg = model.config
    t = cfg.sequence_length
    rng = np.random.default_rng(0)
    batch = kt_mod.TokenBatch(
        states=rng.normal(size=(1, t, cfg.state_dim)),
        goals=rng.normal(size=(1, t, cfg.goal_dim)),
        actions=np.zeros((1, t, cfg.action_dim)),
    )
    return lambda: kt_mod.predict_forces(model, batch)


def ffnn_single_step_fn(model):
    goal = np.zeros(3)
    return lambda: ffnn_mod.predict(model, goal)


def single_step_fn(model):
    if isinstance(model, kt_mod.KtModel):
        return kt_single_step_fn(model)
    return ffnn_single_step_fn(model)


# ----------------------------------------------------------------------

def write_scatter_csv(path, desired, achieved):
    """Desired-vs-achieved tip positions, meters, one row per test step."""
    desired = np.asarray(desired)
    achieved = np.asarray(achieved)
    with open(path, "w") as fh:
        fh.write("x_d,y_d,z_d,x_a,y_a,z_a\n")
        for d, a in zip(desired, achieved):
            fh.write("%.9f,%.9f,%.9f,%.9f,%.9f,%.9f\n" % (*d, *a))


def evaluate_model(
    model,
    episodes,
    geometry,
    material,
    model_id,
    dataset_hash="",
    solver_options=None,
    position_samples=None,
    scatter_path=None,
):
    """Full report: force errors always, position errors through the solver."""
    preds, labels, goals = model_predictions(model, episodes)
    mae, std = force_error_benchmark(preds, labels)
    pos_mae, pos_std, failures, achieved, desired = position_error_benchmark(
        preds, goals, geometry, material,
        solver_options=solver_options, max_samples=position_samples,
    )
    if scatter_path is not None:
        write_scatter_csv(scatter_path, desired, achieved)
    return BenchmarkReport(
        model_id=model_id,
        dataset_hash=dataset_hash,
        sample_count=preds.shape[0],
        force_mae_n=mae,
        force_std_n=std,
        position_mae_mm=pos_mae,
        position_std_mm=pos_std,
        solver_failures=failures,
    )
