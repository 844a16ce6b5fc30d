"""Episode dataset generation, persistence, summaries, and sequence slicing.

An episode is a chain of steps: at each step a random tendon-force vector is
drawn, the simulator computes the tip position it reaches, and that pair
becomes the (goal, label) of the step.  The next step's state is exactly the
realized outcome, so every (state, goal) -> forces sample is attainable by
construction.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import __version__
from .autodiff import make_rng
from .cosserat import (
    ConvergenceError,
    LimbGeometry,
    MaterialLimitError,
    MaterialProperties,
    SolverOptions,
    TendonForces,
    rest_configuration,
    solve_statics,
)

FORMAT_NAME = "softlimb-dataset-v1"

# named RNG sub-streams hanging off the root seed
STREAM_DATASET = 1
STREAM_SPLIT = 2


class GenerationError(RuntimeError):
    """A step's forces could not be solved even after redraws."""

    def __init__(self, message, forces=None, discarded=0):
        super().__init__(message)
        self.forces = forces
        self.discarded = discarded


@dataclass
class Step:
    tip_position: np.ndarray  # (3,), m, state
    tendon_forces: np.ndarray  # (4,), N, state
    desired_tip: np.ndarray  # (3,), m, goal
    label_forces: np.ndarray  # (4,), N, forces that reach the goal


@dataclass
class Episode:
    steps: list
    seed: int

    def __len__(self):
        return len(self.steps)


@dataclass
class DatasetSummary:
    """Per-column min/max/mean/std of tip positions, in millimeters."""

    columns: tuple
    minimum: np.ndarray
    maximum: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    sample_count: int

    COLUMN_NAMES = ("x", "y", "z", "dist_from_base", "dist_from_rest")

    def as_dict(self) -> dict:
        return {
            "sample_count": self.sample_count,
            "columns": {
                name: {
                    "min": float(self.minimum[i]),
                    "max": float(self.maximum[i]),
                    "mean": float(self.mean[i]),
                    "std": float(self.std[i]),
                }
                for i, name in enumerate(self.columns)
            },
        }

    def as_text(self) -> str:
        head = "Metric     " + "".join("%16s" % c for c in self.columns)
        rows = []
        for label, vals in (
            ("Min.", self.minimum),
            ("Max.", self.maximum),
            ("Mean", self.mean),
            ("STD", self.std),
        ):
            rows.append("%-11s" % label + "".join("%16.1f" % v for v in vals))
        return "\n".join([head] + rows)


@dataclass
class Normalizer:
    """Standardization constants fit on the training partition only."""

    state_mean: np.ndarray
    state_std: np.ndarray
    goal_mean: np.ndarray
    goal_std: np.ndarray
    action_mean: np.ndarray
    action_std: np.ndarray

    def normalize_state(self, s):
        return (s - self.state_mean) / self.state_std

    def normalize_goal(self, g):
        return (g - self.goal_mean) / self.goal_std

    def denormalize_action(self, a):
        return a * self.action_std + self.action_mean

    def as_dict(self):
        return {
            "state_mean": self.state_mean.tolist(),
            "state_std": self.state_std.tolist(),
            "goal_mean": self.goal_mean.tolist(),
            "goal_std": self.goal_std.tolist(),
            "action_mean": self.action_mean.tolist(),
            "action_std": self.action_std.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: np.asarray(v, dtype=np.float64) for k, v in d.items()})


def episode_seed(root_seed: int, index: int, attempt: int = 0) -> int:
    """Stable per-episode seed derived from the root seed.

    `attempt` > 0 derives an independent seed for regenerating an episode
    whose original seed produced an unsolvable step.
    """
    key = (STREAM_DATASET, index) if attempt == 0 else (STREAM_DATASET, index, attempt)
    ss = np.random.SeedSequence(root_seed, spawn_key=key)
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def generate_episode(
    geometry: LimbGeometry,
    material: MaterialProperties,
    steps: int,
    rng: np.random.Generator,
    seed: int = 0,
    solver_options: SolverOptions = SolverOptions(),
    max_force: float = 10.0,
    max_redraws: int = 10,
) -> tuple:
    """One episode of `steps` labeled transitions, starting from rest.

    Infeasible force draws (solver failures) are redrawn up to `max_redraws`
    times per step; the number of discarded draws is returned alongside the
    episode for failure-rate accounting.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    rest_tip = rest_configuration(geometry).tip_position
    tip = rest_tip.copy()
    forces = np.zeros(4)
    episode_steps = []
    discarded = 0
    # warm-start cache: tip poses of recently solved force vectors.  A nearby
    # solved draw gives the solver an excellent starting pose; this only
    # accelerates solves, the solutions themselves stay seed-deterministic.
    cache_forces = []
    cache_poses = []
    for _ in range(steps):
        label = None
        for _attempt in range(max_redraws):
            candidate = rng.uniform(0.0, max_force, size=4)
            guess = None
            if cache_forces:
                dist = np.linalg.norm(np.asarray(cache_forces) - candidate, axis=1)
                nearest = int(dist.argmin())
                if dist[nearest] < 8.0:
                    guess = cache_poses[nearest]
            try:
                solved = solve_statics(
                    geometry, material, TendonForces(candidate, max_force),
                    solver_options, initial_guess=guess,
                )
            except (ConvergenceError, MaterialLimitError):
                discarded += 1
                continue
            cache_forces.append(candidate.copy())
            cache_poses.append(solved.tip_pose.copy())
            if len(cache_forces) > 64:
                cache_forces.pop(0)
                cache_poses.pop(0)
            label = candidate
            desired = solved.tip_position.copy()
            break
        if label is None:
            raise GenerationError(
                "no feasible force vector after %d draws" % max_redraws,
                forces=candidate,
                discarded=discarded,
            )
        episode_steps.append(
            Step(
                tip_position=tip.copy(),
                tendon_forces=forces.copy(),
                desired_tip=desired,
                label_forces=label.copy(),
            )
        )
        tip = desired
        forces = label
    return Episode(steps=episode_steps, seed=seed), discarded


@dataclass
class GenerationStats:
    """Bookkeeping of solver failures during dataset generation."""

    discarded_draws: int = 0  # individual force draws the solver rejected
    failed_steps: int = 0  # steps that exhausted the per-step redraw budget
    episode_retries: int = 0  # episodes regenerated under a fresh seed
    total_steps: int = 0  # labeled steps in the finished dataset

    @property
    def step_failure_rate(self) -> float:
        """Fraction of steps that could not be labeled within the redraw
        budget, relative to all steps attempted."""
        attempted = self.total_steps + self.failed_steps
        return self.failed_steps / attempted if attempted else 0.0


def generate_dataset(
    geometry: LimbGeometry,
    material: MaterialProperties,
    episodes: int,
    steps: int,
    root_seed: int,
    solver_options: SolverOptions = SolverOptions(),
    max_force: float = 10.0,
    max_episode_attempts: int = 20,
    progress=None,
) -> tuple:
    """Generate `episodes` independent episodes with derived per-episode seeds.

    An episode whose chain hits an unsolvable step (redraw budget exhausted)
    is regenerated from scratch under an attempt-indexed seed, so the output
    is still fully determined by `root_seed`.  Returns (episodes, stats).
    """
    out = []
    stats = GenerationStats()
    for i in range(episodes):
        ep = None
        for attempt in range(max_episode_attempts):
            seed = episode_seed(root_seed, i, attempt)
            rng = make_rng(seed)
            try:
                ep, d = generate_episode(
                    geometry,
                    material,
                    steps,
                    rng,
                    seed=seed,
                    solver_options=solver_options,
                    max_force=max_force,
                )
            except GenerationError as exc:
                stats.failed_steps += 1
                stats.discarded_draws += exc.discarded
                stats.episode_retries += 1
                continue
            break
        if ep is None:
            raise GenerationError(
                "episode %d failed after %d regeneration attempts"
                % (i, max_episode_attempts)
            )
        out.append(ep)
        stats.discarded_draws += d
        stats.total_steps += len(ep)
        if progress is not None:
            progress(i + 1, episodes)
    return out, stats


def summarize(episodes, rest_tip=None) -> DatasetSummary:
    """Tip-position statistics over all steps, reported in millimeters."""
    if not episodes:
        raise ValueError("need at least one episode")
    tips = np.array([st.tip_position for ep in episodes for st in ep.steps])
    if tips.size == 0:
        raise ValueError("episodes contain no steps")
    if rest_tip is None:
        rest_tip = np.array([LimbGeometry().length, 0.0, 0.0])
    dist_base = np.linalg.norm(tips, axis=1)
    dist_rest = np.linalg.norm(tips - rest_tip, axis=1)
    cols = np.column_stack([tips[:, 0], tips[:, 1], tips[:, 2], dist_base, dist_rest])
    cols_mm = cols * 1000.0
    return DatasetSummary(
        columns=DatasetSummary.COLUMN_NAMES,
        minimum=cols_mm.min(axis=0),
        maximum=cols_mm.max(axis=0),
        mean=cols_mm.mean(axis=0),
        std=cols_mm.std(axis=0),
        sample_count=cols_mm.shape[0],
    )


def split(episodes, train_fraction=0.8, rng=None):
    """Shuffle and split at episode granularity; test count is floored."""
    if len(episodes) < 2:
        raise ValueError("need at least 2 episodes to split")
    order = np.arange(len(episodes))
    if rng is not None:
        rng.shuffle(order)
    # small epsilon so 10 * (1 - 0.8) floors to 2, not through 1.9999...
    n_test = int(np.floor(len(episodes) * (1.0 - train_fraction) + 1e-9))
    n_test = max(n_test, 1)
    test_idx = set(order[:n_test].tolist())
    train = [ep for i, ep in enumerate(episodes) if i not in test_idx]
    test = [ep for i, ep in enumerate(episodes) if i in test_idx]
    return train, test


def _episode_features(ep: Episode):
    states = np.array(
        [np.concatenate([st.tip_position, st.tendon_forces]) for st in ep.steps]
    )
    goals = np.array([st.desired_tip for st in ep.steps])
    labels = np.array([st.label_forces for st in ep.steps])
    return states, goals, labels


def fit_normalizer(episodes) -> Normalizer:
    states = []
    goals = []
    labels = []
    for ep in episodes:
        s, g, l = _episode_features(ep)
        states.append(s)
        goals.append(g)
        labels.append(l)
    states = np.concatenate(states)
    goals = np.concatenate(goals)
    labels = np.concatenate(labels)

    def stats(x):
        mean = x.mean(axis=0)
        std = np.maximum(x.std(axis=0), 1e-12)
        return mean, std

    sm, ss = stats(states)
    gm, gs = stats(goals)
    am, as_ = stats(labels)
    return Normalizer(sm, ss, gm, gs, am, as_)


def to_sequences(episodes, sequence_length=25, normalizer=None, stride=None):
    """Slice episodes into fixed-length windows of consecutive steps.

    Windows are non-overlapping by default (stride = sequence_length) and the
    trailing remainder is dropped.  Episodes shorter than one window are
    skipped and counted.  Returns (states, goals, labels, skipped) with
    states (S, N, 7), goals (S, N, 3), labels (S, N, 4); states and goals are
    standardized when a normalizer is given, labels stay in newtons.
    """
    if stride is None:
        stride = sequence_length
    states_out = []
    goals_out = []
    labels_out = []
    skipped = 0
    for ep in episodes:
        n = len(ep.steps)
        if n < sequence_length:
            skipped += 1
            continue
        s, g, l = _episode_features(ep)
        if normalizer is not None:
            s = normalizer.normalize_state(s)
            g = normalizer.normalize_goal(g)
        for start in range(0, n - sequence_length + 1, stride):
            states_out.append(s[start : start + sequence_length])
            goals_out.append(g[start : start + sequence_length])
            labels_out.append(l[start : start + sequence_length])
    if states_out:
        return (
            np.stack(states_out),
            np.stack(goals_out),
            np.stack(labels_out),
            skipped,
        )
    return (
        np.zeros((0, sequence_length, 7)),
        np.zeros((0, sequence_length, 3)),
        np.zeros((0, sequence_length, 4)),
        skipped,
    )


# ----------------------------------------------------------------------
# persistence


def config_hash(geometry: LimbGeometry, material: MaterialProperties) -> str:
    payload = {
        "length": geometry.length,
        "base_radius": geometry.base_radius,
        "tip_radius": geometry.tip_radius,
        "tendon_offset_base": geometry.tendon_offset_base,
        "tendon_offset_tip": geometry.tendon_offset_tip,
        "tendon_angles": list(geometry.tendon_angles),
        "node_count": geometry.node_count,
        "youngs_modulus": material.youngs_modulus,
        "shear_modulus": material.shear_modulus,
        "mass_density": material.mass_density,
    }
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def save_episodes(
    path,
    episodes,
    geometry: LimbGeometry,
    material: MaterialProperties,
    root_seed: int,
):
    header = {
        "format": FORMAT_NAME,
        "generator_version": __version__,
        "config_hash": config_hash(geometry, material),
        "root_seed": int(root_seed),
        "episode_count": len(episodes),
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for ep in episodes:
            rec = {
                "seed": int(ep.seed),
                "steps": [
                    {
                        "r": st.tip_position.tolist(),
                        "T": st.tendon_forces.tolist(),
                        "r_d": st.desired_tip.tolist(),
                        "T_a": st.label_forces.tolist(),
                    }
                    for st in ep.steps
                ],
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_episodes(path):
    """Returns (episodes, header)."""
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("format") != FORMAT_NAME:
            raise ValueError("unrecognized dataset format: %r" % header.get("format"))
        episodes = []
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            steps = [
                Step(
                    tip_position=np.asarray(st["r"], dtype=np.float64),
                    tendon_forces=np.asarray(st["T"], dtype=np.float64),
                    desired_tip=np.asarray(st["r_d"], dtype=np.float64),
                    label_forces=np.asarray(st["T_a"], dtype=np.float64),
                )
                for st in rec["steps"]
            ]
            episodes.append(Episode(steps=steps, seed=rec["seed"]))
    return episodes, header


def dataset_file_hash(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
