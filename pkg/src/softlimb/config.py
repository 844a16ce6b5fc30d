"""JSON configuration for the whole pipeline.

Keys carry their units (``length_m``, ``max_force_n``) so values are never
ambiguous between modules.  Unknown keys are rejected to catch typos.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .cosserat import LimbGeometry, MaterialProperties, SolverOptions
from .ffnn import FfnnConfig
from .kt import KtConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetOptions:
    episode_count: int = 1000
    steps_per_episode: int = 200
    max_force_n: float = 10.0
    sequence_length: int = 25
    train_fraction: float = 0.8
    validation_fraction: float = 0.1

    def __post_init__(self):
        if self.episode_count < 1 or self.steps_per_episode < 1:
            raise ConfigError("episode and step counts must be positive")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError("validation_fraction must lie in [0, 1)")


@dataclass
class ToolkitConfig:
    seed: int = 1234
    geometry: LimbGeometry = field(default_factory=LimbGeometry)
    material: MaterialProperties = field(default_factory=MaterialProperties)
    solver: SolverOptions = field(default_factory=SolverOptions)
    dataset: DatasetOptions = field(default_factory=DatasetOptions)
    kt: KtConfig = field(default_factory=KtConfig)
    ffnn: FfnnConfig = field(default_factory=FfnnConfig)
    train_kt: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=200))
    train_ffnn: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=50))


_DEFAULTS = {
    "seed": 1234,
    "limb": {
        "length_m": 0.6,
        "base_radius_m": 0.03,
        "tip_radius_m": 0.01,
        "tendon_offset_base_m": 0.02,
        "tendon_offset_tip_m": 0.00325,
        "node_count": 101,
    },
    "material": {
        "youngs_modulus_pa": 70000.0,
        "shear_modulus_pa": None,
        "mass_density_kg_m3": 1070.0,
    },
    "solver": {
        "tolerance_m": 1e-6,
        "max_iterations": 100,
        "include_gravity": False,
        "water_density_kg_m3": 1000.0,
    },
    "dataset": {
        "episode_count": 1000,
        "steps_per_episode": 200,
        "max_force_n": 10.0,
        "sequence_length": 25,
        "train_fraction": 0.8,
        "validation_fraction": 0.1,
    },
    "kt": {
        "sequence_length": 25,
        "embedding_dim": 128,
        "layer_count": 12,
        "head_count": 8,
        "dropout_rate": 0.1,
    },
    "ffnn": {"hidden_dim": 256},
    "train_kt": {
        "epochs": 200,
        "batch_size": 64,
        "learning_rate": 1e-4,
        "checkpoint_interval_epochs": 0,
    },
    "train_ffnn": {
        "epochs": 50,
        "batch_size": 64,
        "learning_rate": 1e-4,
        "checkpoint_interval_epochs": 0,
    },
}


def _merge(section: str, defaults: dict, overrides: dict) -> dict:
    unknown = set(overrides) - set(defaults)
    if unknown:
        raise ConfigError(
            "unknown key(s) in %r: %s" % (section, ", ".join(sorted(unknown)))
        )
    merged = dict(defaults)
    merged.update(overrides)
    return merged


def from_dict(data: dict) -> ToolkitConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(data) - set(_DEFAULTS)
    if unknown:
        raise ConfigError("unknown top-level key(s): %s" % ", ".join(sorted(unknown)))
    sections = {
        name: _merge(name, _DEFAULTS[name], data.get(name, {}))
        for name in _DEFAULTS
        if name != "seed"
    }
    seed = data.get("seed", _DEFAULTS["seed"])
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    limb = sections["limb"]
    mat = sections["material"]
    sol = sections["solver"]
    dset = sections["dataset"]
    ktc = sections["kt"]
    try:
        geometry = LimbGeometry(
            length=limb["length_m"],
            base_radius=limb["base_radius_m"],
            tip_radius=limb["tip_radius_m"],
            tendon_offset_base=limb["tendon_offset_base_m"],
            tendon_offset_tip=limb["tendon_offset_tip_m"],
            node_count=limb["node_count"],
        )
        material = MaterialProperties(
            youngs_modulus=mat["youngs_modulus_pa"],
            shear_modulus=mat["shear_modulus_pa"],
            mass_density=mat["mass_density_kg_m3"],
        )
        solver = SolverOptions(
            tolerance=sol["tolerance_m"],
            max_iterations=sol["max_iterations"],
            include_gravity=sol["include_gravity"],
            water_density=sol["water_density_kg_m3"],
        )
        dataset = DatasetOptions(
            episode_count=dset["episode_count"],
            steps_per_episode=dset["steps_per_episode"],
            max_force_n=dset["max_force_n"],
            sequence_length=dset["sequence_length"],
            train_fraction=dset["train_fraction"],
            validation_fraction=dset["validation_fraction"],
        )
        kt = KtConfig(
            sequence_length=ktc["sequence_length"],
            embedding_dim=ktc["embedding_dim"],
            layer_count=ktc["layer_count"],
            head_count=ktc["head_count"],
            dropout_rate=ktc["dropout_rate"],
        )
        ffnn = FfnnConfig(hidden_dim=sections["ffnn"]["hidden_dim"])

        def train_cfg(sec):
            return TrainConfig(
                epochs=sec["epochs"],
                batch_size=sec["batch_size"],
                learning_rate=sec["learning_rate"],
                seed=seed,
                checkpoint_interval=sec["checkpoint_interval_epochs"],
            )

        return ToolkitConfig(
            seed=seed,
            geometry=geometry,
            material=material,
            solver=solver,
            dataset=dataset,
            kt=kt,
            ffnn=ffnn,
            train_kt=train_cfg(sections["train_kt"]),
            train_ffnn=train_cfg(sections["train_ffnn"]),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load(path) -> ToolkitConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError("cannot read config %r: %s" % (str(path), exc)) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("invalid JSON in %r: %s" % (str(path), exc)) from exc
    return from_dict(data)


def default() -> ToolkitConfig:
    return from_dict({})


def toolkit_config_hash(cfg: ToolkitConfig) -> str:
    """Stable digest over every physical and model setting."""
    payload = {
        "seed": cfg.seed,
        "geometry": {
            "length": cfg.geometry.length,
            "base_radius": cfg.geometry.base_radius,
            "tip_radius": cfg.geometry.tip_radius,
            "tendon_offset_base": cfg.geometry.tendon_offset_base,
            "tendon_offset_tip": cfg.geometry.tendon_offset_tip,
            "tendon_angles": list(np.asarray(cfg.geometry.tendon_angles, dtype=float)),
            "node_count": cfg.geometry.node_count,
        },
        "material": {
            "youngs_modulus": cfg.material.youngs_modulus,
            "shear_modulus": cfg.material.shear_modulus,
            "mass_density": cfg.material.mass_density,
        },
        "solver": {
            "tolerance": cfg.solver.tolerance,
            "max_iterations": cfg.solver.max_iterations,
            "include_gravity": cfg.solver.include_gravity,
            "water_density": cfg.solver.water_density,
        },
        "dataset": {
            "episode_count": cfg.dataset.episode_count,
            "steps_per_episode": cfg.dataset.steps_per_episode,
            "max_force_n": cfg.dataset.max_force_n,
            "sequence_length": cfg.dataset.sequence_length,
            "train_fraction": cfg.dataset.train_fraction,
            "validation_fraction": cfg.dataset.validation_fraction,
        },
        "kt": cfg.kt.as_dict(),
        "ffnn": cfg.ffnn.as_dict(),
        "train_kt": cfg.train_kt.as_dict(),
        "train_ffnn": cfg.train_ffnn.as_dict(),
    }
    blob = json.dumps(payload, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()
