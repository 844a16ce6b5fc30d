"""End-to-end acceptance gate.

Runs the full pipeline at desk scale: a 200-episode x 200-step dataset, a
scaled-down transformer (4 layers, d=64, 4 heads; the full 12x128 model costs
~10 s per training batch on one CPU, so both parameter counts and per-batch
times are reported instead), and the feed-forward baseline, then benchmarks
both closed-loop against the simulator.

Heavy artifacts are cached under .acceptance-cache/ next to the package so
reruns are cheap; delete that directory to regenerate everything.  A cold run
takes roughly 1.5 h on one CPU (dataset ~15 min, transformer ~40 min).

Each criterion is one test; the pytest -v line is its pass/fail verdict and
the printed [criterion NN] line carries the measured numbers.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from softlimb import autodiff as ad
from softlimb import checkpoint as ckpt
from softlimb import dataset as ds
from softlimb import evaluation as ev
from softlimb import training
from softlimb.autodiff import make_rng
from softlimb.cosserat import (
    LimbGeometry,
    MaterialProperties,
    TendonForces,
    integrate_frames,
    solve_statics,
)
from softlimb.ffnn import FfnnConfig, FfnnModel
from softlimb.kt import KtConfig, KtModel, TokenBatch, causal_mask

GEO = LimbGeometry()
MAT = MaterialProperties()
CACHE = Path(__file__).resolve().parent.parent / ".acceptance-cache"

SEED = 1234
EPISODES = 200
STEPS = 200
KT_SCALED = dict(sequence_length=25, embedding_dim=64, layer_count=4, head_count=4)
# Default protocol (200 / 50 epochs, batch 64), except the scaled KT trains
# at lr 3e-4: at 1e-4 it is far from converged within 200 epochs, while at
# 3e-4 its validation loss bottoms out near epoch 90 and only overfits
# afterwards (checked out to 600 epochs), so 200 epochs is the right stop.
# The FFNN reaches its floor either way (1.31 N at lr 1e-3 and at 1e-4).
KT_TRAIN = training.TrainConfig(epochs=200, batch_size=64, learning_rate=3e-4, seed=SEED)
FFNN_TRAIN = training.TrainConfig(epochs=50, batch_size=64, learning_rate=1e-4, seed=SEED)
POSITION_SAMPLES = 500


def _report(num, name, ok, detail=""):
    verdict = "PASS" if ok else "FAIL"
    line = "[criterion %2d] %-24s %s  %s" % (num, name, verdict, detail)
    print(line)
    assert ok, line


# ----------------------------------------------------------------------
# cached heavy artifacts


@pytest.fixture(scope="session")
def desk_dataset():
    CACHE.mkdir(exist_ok=True)
    data_path = CACHE / "dataset.jsonl"
    meta_path = CACHE / "dataset.meta.json"
    key = {
        "config_hash": ds.config_hash(GEO, MAT),
        "episodes": EPISODES,
        "steps": STEPS,
        "seed": SEED,
    }
    if data_path.exists() and meta_path.exists():
        meta = json.loads(meta_path.read_text())
        if meta.get("key") == key:
            episodes, _ = ds.load_episodes(data_path)
            return episodes, meta
    t0 = time.perf_counter()
    episodes, stats = ds.generate_dataset(GEO, MAT, EPISODES, STEPS, SEED)
    elapsed = time.perf_counter() - t0
    ds.save_episodes(data_path, episodes, GEO, MAT, SEED)
    meta = {
        "key": key,
        "generation_seconds": elapsed,
        "failed_steps": stats.failed_steps,
        "step_failure_rate": stats.step_failure_rate,
        "discarded_draws": stats.discarded_draws,
    }
    meta_path.write_text(json.dumps(meta, indent=2))
    return episodes, meta


@pytest.fixture(scope="session")
def partitions(desk_dataset):
    episodes, _ = desk_dataset
    rng = make_rng(SEED, ds.STREAM_SPLIT)
    train, test = ds.split(episodes, 0.8, rng=rng)
    n_val = len(train) // 10
    val, train = train[-n_val:], train[: len(train) - n_val]
    norm = ds.fit_normalizer(train)
    return train, val, test, norm


def _ffnn_pairs(episodes, norm):
    goals = np.concatenate([[s.desired_tip for s in ep.steps] for ep in episodes])
    labels = np.concatenate([[s.label_forces for s in ep.steps] for ep in episodes])
    return norm.normalize_goal(goals), labels


@pytest.fixture(scope="session")
def trained_models(desk_dataset, partitions):
    """Train (or reload) the scaled KT and the FFNN; returns the two models
    plus recorded wall-clock training seconds."""
    train, val, _test, norm = partitions
    CACHE.mkdir(exist_ok=True)
    meta_path = CACHE / "models.meta.json"
    kt_path = CACHE / "kt.ckpt"
    ffnn_path = CACHE / "ffnn.ckpt"
    key = {
        "dataset": desk_dataset[1]["key"],
        "kt": KT_SCALED,
        "kt_train": KT_TRAIN.as_dict(),
        "ffnn_train": FFNN_TRAIN.as_dict(),
    }
    if meta_path.exists() and kt_path.exists() and ffnn_path.exists():
        meta = json.loads(meta_path.read_text())
        if meta.get("key") == key:
            kt_model, _ = ckpt.load_model(kt_path)
            ffnn_model, _ = ckpt.load_model(ffnn_path)
            return kt_model, ffnn_model, meta

    ffnn_model = FfnnModel(FfnnConfig(), norm, seed=SEED)
    t0 = time.perf_counter()
    training.train_ffnn(
        ffnn_model, _ffnn_pairs(train, norm), _ffnn_pairs(val, norm), FFNN_TRAIN
    )
    ffnn_seconds = time.perf_counter() - t0

    kt_model = KtModel(KtConfig(**KT_SCALED), norm, seed=SEED)
    n_ctx = kt_model.config.sequence_length
    tr = ds.to_sequences(train, n_ctx, norm)[:3]
    vl = ds.to_sequences(val, n_ctx, norm)[:3]
    t0 = time.perf_counter()
    training.train_kt(kt_model, tr, vl, KT_TRAIN)
    kt_seconds = time.perf_counter() - t0

    ckpt.save_checkpoint(kt_path, kt_model, "kt")
    ckpt.save_checkpoint(ffnn_path, ffnn_model, "ffnn")
    meta = {
        "key": key,
        "kt_seconds": kt_seconds,
        "ffnn_seconds": ffnn_seconds,
        "kt_parameters": kt_model.n_parameters(),
        "ffnn_parameters": ffnn_model.n_parameters(),
    }
    meta_path.write_text(json.dumps(meta, indent=2))
    return kt_model, ffnn_model, meta


@pytest.fixture(scope="session")
def benchmark_results(trained_models, partitions):
    kt_model, ffnn_model, _meta = trained_models
    _train, _val, test, _norm = partitions
    out = {}
    for name, model in (("kt", kt_model), ("ffnn", ffnn_model)):
        preds, labels, goals = ev.model_predictions(model, test)
        mae, _ = ev.force_error_benchmark(preds, labels)
        pos_mae, _, failures, _, _ = ev.position_error_benchmark(
            preds, goals, GEO, MAT, max_samples=POSITION_SAMPLES
        )
        out[name] = {
            "force_mae": mae,
            "position_mae_mm": pos_mae,
            "solver_failures": failures,
        }
    return out


# ----------------------------------------------------------------------
# 1-7: property criteria


def test_criterion_01_rest_equilibrium():
    solve_statics(GEO, MAT, TendonForces(np.zeros(4)))  # load the JIT cache
    t0 = time.perf_counter()
    cfg = solve_statics(GEO, MAT, TendonForces(np.zeros(4)))
    elapsed = time.perf_counter() - t0
    tip_err_mm = np.max(np.abs(cfg.tip_position - [GEO.length, 0, 0])) * 1000.0
    ortho = max(
        np.max(np.abs(R.T @ R - np.eye(3))) for R in cfg.orientation
    )
    _report(
        1,
        "rest equilibrium",
        tip_err_mm < 1e-6 and ortho < 1e-9 and elapsed < 1.0,
        "tip err %.2e mm, orthonormality %.2e, %.3f s" % (tip_err_mm, ortho, elapsed),
    )


def test_criterion_02_symmetry():
    cfg = solve_statics(GEO, MAT, TendonForces(np.full(4, 3.0)))
    straight_mm = np.max(np.abs(cfg.position[:, 1:])) * 1000.0
    # swapping the opposing tendon pair mirrors the solution in y
    forces = np.array([4.0, 1.0, 0.5, 1.0])
    mirrored = forces[[2, 1, 0, 3]]
    a = solve_statics(GEO, MAT, TendonForces(forces))
    b = solve_statics(GEO, MAT, TendonForces(mirrored))
    reflect = a.position * np.array([1.0, -1.0, 1.0])
    mirror_mm = np.max(np.abs(reflect - b.position)) * 1000.0
    _report(
        2,
        "symmetry suite",
        straight_mm < 1e-3 and mirror_mm < 1e-3,
        "equal-tension |y,z| %.2e mm, mirror diff %.2e mm" % (straight_mm, mirror_mm),
    )


def test_criterion_03_constant_curvature():
    n = GEO.node_count
    strain = np.zeros(n)
    curvature = np.zeros((n, 3))
    curvature[:, 1] = 2.0 / GEO.length  # full bend angle of 2 rad over the arc
    position, _ = integrate_frames(GEO, strain, curvature)
    radius = GEO.length / 2.0
    expected = np.array(
        [radius * np.sin(2.0), 0.0, -radius * (1.0 - np.cos(2.0))]
    )
    err = np.max(np.abs(position[-1] - expected))
    _report(3, "constant-curvature arc", err < 1e-6 * GEO.length, "err %.2e m" % err)


def test_criterion_04_grid_convergence():
    forces = TendonForces(np.array([10.0, 0.0, 0.0, 0.0]))
    coarse = solve_statics(GEO, MAT, forces)
    fine = solve_statics(LimbGeometry(node_count=201), MAT, forces)
    diff_mm = np.linalg.norm(coarse.tip_position - fine.tip_position) * 1000.0
    _report(4, "grid convergence", diff_mm < 0.5, "101->201 tip shift %.3f mm" % diff_mm)


def _identity_normalizer():
    return ds.Normalizer(
        state_mean=np.zeros(7), state_std=np.ones(7),
        goal_mean=np.zeros(3), goal_std=np.ones(3),
        action_mean=np.zeros(4), action_std=np.ones(4),
    )


def test_criterion_05_causality():
    model = KtModel(KtConfig(6, 16, 2, 2), _identity_normalizer(), seed=8)
    rng = np.random.default_rng(9)
    base = TokenBatch(
        states=rng.normal(size=(1, 6, 7)),
        goals=rng.normal(size=(1, 6, 3)),
        actions=np.zeros((1, 6, 4)),
    )
    ref = model.forward(base).value
    ok = True
    for j in range(6):
        states = base.states.copy()
        states[0, j] += 1.0
        out = model.forward(
            TokenBatch(states=states, goals=base.goals, actions=base.actions)
        ).value
        ok = ok and np.array_equal(out[0, :j], ref[0, :j])
    _report(5, "causality", ok, "perturbed each of 6 tokens; prefixes bit-identical")


def test_criterion_06_gradient_checks():
    t0 = time.perf_counter()
    worst = 0.0
    rng = np.random.default_rng(10)

    def fd_check(loss_fn, params, n_probes=3):
        nonlocal worst
        loss = loss_fn()
        ad.zero_grads(params)
        loss.backward()
        grads = {id(p): p.grad.copy() for p in params}
        for p in params:
            for _ in range(n_probes):
                idx = tuple(rng.integers(0, s) for s in p.value.shape)
                h = 1e-6
                old = p.value[idx]
                p.value[idx] = old + h
                fp = float(loss_fn().value)
                p.value[idx] = old - h
                fm = float(loss_fn().value)
                p.value[idx] = old
                fd = (fp - fm) / (2 * h)
                g = grads[id(p)][idx]
                worst = max(worst, abs(fd - g) / max(1e-8, abs(fd), abs(g)))

    kt = KtModel(KtConfig(3, 8, 1, 2), _identity_normalizer(), seed=11)
    batch = TokenBatch(
        states=rng.normal(size=(2, 3, 7)),
        goals=rng.normal(size=(2, 3, 3)),
        actions=np.zeros((2, 3, 4)),
    )
    kt_labels = rng.uniform(0, 10, size=(2, 3, 4))
    fd_check(lambda: training.mse_loss(kt.forward(batch), kt_labels), kt.parameters())

    ffnn = FfnnModel(FfnnConfig(hidden_dim=16), _identity_normalizer(), seed=12)
    goals = rng.normal(size=(4, 3))
    ff_labels = rng.uniform(0, 10, size=(4, 4))
    fd_check(lambda: training.mse_loss(ffnn.forward(goals), ff_labels), ffnn.parameters())
    elapsed = time.perf_counter() - t0
    _report(
        6,
        "gradient checks",
        worst < 1e-4 and elapsed < 30.0,
        "worst rel err %.2e, %.1f s" % (worst, elapsed),
    )


def test_criterion_07_attention_and_loss_oracle():
    rng = np.random.default_rng(13)
    t, d = 5, 8
    q = rng.normal(size=(1, t, d))
    k = rng.normal(size=(1, t, d))
    scores = q @ k.transpose(0, 2, 1) / np.sqrt(d) + causal_mask(t)
    weights = ad.softmax(ad.constant(scores), axis=-1)
    row_err = np.max(np.abs(weights.value.sum(axis=-1) - 1.0))

    pred = rng.normal(size=(6, 4))
    actual = rng.normal(size=(6, 4))
    acc = 0.0
    for i in range(6):
        for j in range(4):
            acc += (pred[i, j] - actual[i, j]) ** 2
    acc /= 24.0
    loss_err = abs(float(training.mse_loss(ad.constant(pred), actual).value) - acc)
    _report(
        7,
        "attention/loss oracles",
        row_err < 1e-12 and loss_err < 1e-12,
        "row-sum err %.2e, loss err %.2e" % (row_err, loss_err),
    )


# ----------------------------------------------------------------------
# 8-11: desk-scale reproduction


def test_criterion_08_dataset_statistics(desk_dataset):
    episodes, meta = desk_dataset
    summary = ds.summarize(episodes)
    cols = dict(zip(summary.columns, range(len(summary.columns))))
    mean_y = summary.mean[cols["y"]]
    mean_z = summary.mean[cols["z"]]
    max_base = summary.maximum[cols["dist_from_base"]]
    min_rest = summary.minimum[cols["dist_from_rest"]]
    gen_s = meta["generation_seconds"]
    ok = (
        abs(mean_y) < 10.0
        and abs(mean_z) < 10.0
        and max_base <= 610.0
        and min_rest == 0.0
        and gen_s < 1800.0
    )
    _report(
        8,
        "dataset statistics",
        ok,
        "mean y %.2f mm, mean z %.2f mm, max |p| %.1f mm, min from-rest %.1f mm, "
        "%d steps in %.0f s (failure rate %.4f)"
        % (
            mean_y, mean_z, max_base, min_rest,
            EPISODES * STEPS, gen_s, meta["step_failure_rate"],
        ),
    )


def test_criterion_09_force_accuracy(trained_models, benchmark_results):
    # Known-red at desk scale: labels are drawn i.i.d. Uniform[0,10]^4 and the
    # tendon-to-tip map is 4->3, so each goal leaves a one-parameter
    # co-contraction family of valid labels.  A kNN-median oracle puts that
    # conditional-ambiguity floor at ~1.3 N mean MAE, and the FFNN baseline
    # already sits on it (1.31 N, unchanged under 10x more optimization), so
    # no model can undercut it by the required 15%.  The transformer
    # converges to the same floor from above.  Asserted anyway (honest red).
    _kt, _ffnn, meta = trained_models
    kt_mae = benchmark_results["kt"]["force_mae"]
    ff_mae = benchmark_results["ffnn"]["force_mae"]
    ratio = kt_mae.mean() / ff_mae.mean()
    train_s = meta["kt_seconds"] + meta["ffnn_seconds"]
    full_params = KtModel(
        KtConfig(), _identity_normalizer(), seed=0
    ).n_parameters()
    ok = (
        np.all(kt_mae < ff_mae)
        and ratio <= 0.85
        and kt_mae.mean() <= 1.5
        and train_s <= 4 * 3600.0
    )
    _report(
        9,
        "force MAE (KT vs FFNN)",
        ok,
        "KT %s N (mean %.3f), FFNN %s N (mean %.3f), ratio %.2f, train %.0f s; "
        "scaled KT %d params (full config would be %d params, ~10 s/batch on "
        "this CPU vs 0.8 s scaled)"
        % (
            np.round(kt_mae, 3), kt_mae.mean(),
            np.round(ff_mae, 3), ff_mae.mean(),
            ratio, train_s, meta["kt_parameters"], full_params,
        ),
    )


def test_criterion_10_closed_loop_position(benchmark_results):
    # Known-red at desk scale for the same reason as criterion 9: with both
    # models at the label-ambiguity floor, their position errors through the
    # solver land at ~10 mm either side of the cap (the conditional-mean of
    # an ambiguous tension preimage is not itself an exactly consistent
    # tension vector) and the per-axis ordering is noise between two
    # floor-level predictors.  Asserted anyway (honest red).
    kt = benchmark_results["kt"]["position_mae_mm"]
    ff = benchmark_results["ffnn"]["position_mae_mm"]
    ok = np.all(kt <= 10.0) and np.all(kt < ff)
    _report(
        10,
        "closed-loop position",
        ok,
        "KT %s mm, FFNN %s mm over %d samples (solver failures kt %d / ffnn %d)"
        % (
            np.round(kt, 2), np.round(ff, 2), POSITION_SAMPLES,
            benchmark_results["kt"]["solver_failures"],
            benchmark_results["ffnn"]["solver_failures"],
        ),
    )


def test_criterion_11_timing_ordering(trained_models):
    kt_model, ffnn_model, _ = trained_models
    kt_us, kt_std = ev.timing_benchmark(ev.single_step_fn(kt_model), iterations=200)
    ff_us, ff_std = ev.timing_benchmark(ev.single_step_fn(ffnn_model), iterations=1000)
    ratio = kt_us / ff_us
    _report(
        11,
        "inference timing",
        kt_us > ff_us,
        "KT %.0f +/- %.0f us, FFNN %.0f +/- %.0f us, ratio %.1fx "
        "(ordering asserted; absolute values are hardware-dependent)"
        % (kt_us, kt_std, ff_us, ff_std, ratio),
    )
