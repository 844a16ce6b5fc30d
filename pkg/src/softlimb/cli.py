"""Command-line pipeline: generate datasets, train models, run benchmarks.

Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 training divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from . import checkpoint as ckpt
from . import config as config_mod
from . import dataset as ds
from . import evaluation as ev
from . import training
from .autodiff import make_rng
from .cosserat import ConvergenceError, MaterialLimitError
from .ffnn import FfnnModel
from .kt import KtModel

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_DIVERGENCE = 4

MAX_STEP_FAILURE_RATE = 0.01


class CliError(RuntimeError):
    def __init__(self, message, exit_code):
        super().__init__(message)
        self.exit_code = exit_code


def _load_config(path):
    if path is None:
        return config_mod.default()
    try:
        return config_mod.load(path)
    except config_mod.ConfigError as exc:
        raise CliError("config error: %s" % exc, EXIT_CONFIG) from exc


def _load_dataset(path, cfg):
    try:
        episodes, header = ds.load_episodes(path)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise CliError("cannot read dataset %r: %s" % (str(path), exc), EXIT_CONFIG)
    expected = ds.config_hash(cfg.geometry, cfg.material)
    if header.get("config_hash") != expected:
        raise CliError(
            "dataset %r was generated under a different physical configuration"
            % str(path),
            EXIT_CONFIG,
        )
    return episodes, header


def _partition(episodes, cfg):
    """Deterministic train/validation/test split at episode granularity."""
    rng = make_rng(cfg.seed, ds.STREAM_SPLIT)
    train, test = ds.split(episodes, cfg.dataset.train_fraction, rng=rng)
    n_val = int(np.floor(len(train) * cfg.dataset.validation_fraction))
    val = train[len(train) - n_val :]
    train = train[: len(train) - n_val]
    return train, val, test


# ----------------------------------------------------------------------


def cmd_generate(args):
    cfg = _load_config(args.config)
    episodes = args.episodes if args.episodes is not None else cfg.dataset.episode_count
    steps = args.steps if args.steps is not None else cfg.dataset.steps_per_episode
    seed = args.seed if args.seed is not None else cfg.seed

    t0 = time.perf_counter()
    done = [0]

    def progress(i, n):
        done[0] = i
        if args.verbose:
            print("episode %d/%d" % (i, n), file=sys.stderr)

    try:
        eps, stats = ds.generate_dataset(
            cfg.geometry,
            cfg.material,
            episodes,
            steps,
            seed,
            solver_options=cfg.solver,
            max_force=cfg.dataset.max_force_n,
            progress=progress,
        )
    except ds.GenerationError as exc:
        raise CliError("dataset generation failed: %s" % exc, EXIT_SOLVER)
    elapsed = time.perf_counter() - t0

    ds.save_episodes(args.out, eps, cfg.geometry, cfg.material, seed)
    summary = ds.summarize(eps, rest_tip=np.array([cfg.geometry.length, 0.0, 0.0]))
    text = summary.as_text()
    print(text)
    print(
        "generated %d episodes (%d steps) in %.1f s; discarded draws: %d, "
        "failed steps: %d, episode retries: %d"
        % (
            len(eps),
            stats.total_steps,
            elapsed,
            stats.discarded_draws,
            stats.failed_steps,
            stats.episode_retries,
        )
    )
    if args.summary:
        payload = summary.as_dict()
        payload["config_hash"] = ds.config_hash(cfg.geometry, cfg.material)
        payload["root_seed"] = seed
        payload["generation_seconds"] = elapsed
        payload["discarded_draws"] = stats.discarded_draws
        payload["failed_steps"] = stats.failed_steps
        payload["episode_retries"] = stats.episode_retries
        with open(args.summary, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    if stats.step_failure_rate > MAX_STEP_FAILURE_RATE:
        raise CliError(
            "solver step-failure rate %.2f%% exceeds %.0f%%"
            % (100 * stats.step_failure_rate, 100 * MAX_STEP_FAILURE_RATE),
            EXIT_SOLVER,
        )
    return EXIT_OK


def cmd_train(args):
    cfg = _load_config(args.config)
    episodes, header = _load_dataset(args.data, cfg)
    train_eps, val_eps, _test_eps = _partition(episodes, cfg)
    normalizer = ds.fit_normalizer(train_eps)
    data_hash = ds.dataset_file_hash(args.data)

    if args.model == "kt":
        model = KtModel(cfg.kt, normalizer, seed=cfg.seed)
        train_cfg = cfg.train_kt
        if args.epochs is not None:
            train_cfg = training.TrainConfig(
                epochs=args.epochs,
                batch_size=train_cfg.batch_size,
                learning_rate=train_cfg.learning_rate,
                seed=train_cfg.seed,
                checkpoint_interval=train_cfg.checkpoint_interval,
            )
        n_ctx = cfg.kt.sequence_length
        tr = ds.to_sequences(train_eps, n_ctx, normalizer)[:3]
        vl = ds.to_sequences(val_eps, n_ctx, normalizer)[:3] if val_eps else (
            np.zeros((0, n_ctx, 7)), np.zeros((0, n_ctx, 3)), np.zeros((0, n_ctx, 4)))
        runner = lambda on_epoch: training.train_kt(model, tr, vl, train_cfg, on_epoch)
    else:
        model = FfnnModel(cfg.ffnn, normalizer, seed=cfg.seed)
        train_cfg = cfg.train_ffnn
        if args.epochs is not None:
            train_cfg = training.TrainConfig(
                epochs=args.epochs,
                batch_size=train_cfg.batch_size,
                learning_rate=train_cfg.learning_rate,
                seed=train_cfg.seed,
                checkpoint_interval=train_cfg.checkpoint_interval,
            )

        def pairs(eps_list):
            if not eps_list:
                return np.zeros((0, 3)), np.zeros((0, 4))
            goals = np.concatenate(
                [[st.desired_tip for st in ep.steps] for ep in eps_list]
            )
            labels = np.concatenate(
                [[st.label_forces for st in ep.steps] for ep in eps_list]
            )
            return normalizer.normalize_goal(goals), labels

        runner = lambda on_epoch: training.train_ffnn(
            model, pairs(train_eps), pairs(val_eps), train_cfg, on_epoch
        )

    metadata = {
        "config_hash": config_mod.toolkit_config_hash(cfg),
        "physics_hash": header.get("config_hash", ""),
        "train_config": train_cfg.as_dict(),
    }

    def on_epoch(record, m):
        if args.verbose:
            print(
                "epoch %d train %.6f val %.6f"
                % (record.epoch, record.train_loss, record.val_loss),
                file=sys.stderr,
            )
        ci = train_cfg.checkpoint_interval
        if ci > 0 and (record.epoch + 1) % ci == 0:
            ckpt.save_checkpoint(args.out, m, args.model, data_hash, metadata)

    t0 = time.perf_counter()
    try:
        records = runner(on_epoch)
    except training.DivergenceError as exc:
        raise CliError("training diverged: %s" % exc, EXIT_DIVERGENCE)
    elapsed = time.perf_counter() - t0

    ckpt.save_checkpoint(args.out, model, args.model, data_hash, metadata)
    if args.loss_log:
        training.write_loss_log(args.loss_log, records)
    print(
        "trained %s for %d epochs in %.1f s; final train loss %.6f, val loss %.6f"
        % (args.model, len(records), elapsed, records[-1].train_loss, records[-1].val_loss)
    )
    return EXIT_OK


def cmd_eval(args):
    cfg = _load_config(args.config)
    try:
        model, header = ckpt.load_model(args.model_path)
    except (OSError, ckpt.CheckpointError) as exc:
        raise CliError("cannot load checkpoint: %s" % exc, EXIT_CONFIG)
    episodes, _ = _load_dataset(args.data, cfg)
    _train_eps, _val_eps, test_eps = _partition(episodes, cfg)
    try:
        report = ev.evaluate_model(
            model,
            test_eps,
            cfg.geometry,
            cfg.material,
            model_id=header["model_type"],
            dataset_hash=ds.dataset_file_hash(args.data),
            solver_options=cfg.solver,
            position_samples=args.position_samples,
            scatter_path=args.scatter,
        )
    except ev.BenchmarkError as exc:
        raise CliError("evaluation failed: %s" % exc, EXIT_SOLVER)
    text = report.as_text()
    print(text, end="")
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(text)
        payload = report.as_dict()
        payload["config_hash"] = config_mod.toolkit_config_hash(cfg)
        with open(str(args.report) + ".json", "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return EXIT_OK


def cmd_bench(args):
    cfg = _load_config(args.config)
    try:
        model, header = ckpt.load_model(args.model_path)
    except (OSError, ckpt.CheckpointError) as exc:
        raise CliError("cannot load checkpoint: %s" % exc, EXIT_CONFIG)
    mean_us, std_us = ev.timing_benchmark(
        ev.single_step_fn(model), iterations=args.iterations
    )
    print(
        "%s inference: %.1f +/- %.1f us over %d iterations"
        % (header["model_type"], mean_us, std_us, args.iterations)
    )
    if args.report:
        payload = {
            "model_type": header["model_type"],
            "timing_mean_us": mean_us,
            "timing_std_us": std_us,
            "iterations": args.iterations,
            "config_hash": config_mod.toolkit_config_hash(cfg),
        }
        with open(args.report, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return EXIT_OK


# ----------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="softlimb",
        description="Soft-limb inverse kinematics: simulate, generate, train, benchmark.",
    )
    parser.add_argument("--config", help="JSON configuration file")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a labeled episode dataset")
    p.add_argument("--episodes", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--summary", help="write a JSON summary next to the dataset")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model on a generated dataset")
    p.add_argument("--model", choices=("kt", "ffnn"), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, help="override the configured epoch count")
    p.add_argument("--loss-log", help="write per-epoch losses to this file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="closed-loop benchmark of a trained model")
    p.add_argument("--model-path", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", help="write text + JSON reports to this path")
    p.add_argument("--scatter", help="write desired-vs-achieved CSV")
    p.add_argument(
        "--position-samples",
        type=int,
        help="cap the number of forward solves in the position benchmark",
    )
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="single-step inference timing")
    p.add_argument("--model-path", required=True)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--report", help="write a JSON timing report")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return exc.exit_code
    except (ConvergenceError, MaterialLimitError) as exc:
        print("solver failure: %s" % exc, file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
