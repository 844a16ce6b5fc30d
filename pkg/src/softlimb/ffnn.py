"""Baseline feed-forward inverse kinematics model: desired tip -> forces."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .dataset import Normalizer

MAX_FORCE = 10.0


@dataclass(frozen=True)
class FfnnConfig:
    input_dim: int = 3
    hidden_dim: int = 256
    output_dim: int = 4

    def as_dict(self):
        return {
            "input_dim": self.input_dim,
            "hidden_dim": self.hidden_dim,
            "output_dim": self.output_dim,
        }


class FfnnModel:
    """Two rectified hidden layers of 256 units and a linear output."""

    def __init__(self, config: FfnnConfig, normalizer: Normalizer, seed: int = 0):
        self.config = config
        self.normalizer = normalizer
        rng = ad.make_rng(seed, 202)
        self.params = {}
        for name, fan_in, fan_out in (
            ("h1", config.input_dim, config.hidden_dim),
            ("h2", config.hidden_dim, config.hidden_dim),
            ("out", config.hidden_dim, config.output_dim),
        ):
            w, b = ad.init_linear(fan_in, fan_out, rng)
            self.params[name + "_w"] = w
            self.params[name + "_b"] = b

    def parameters(self):
        return list(self.params.values())

    def n_parameters(self):
        return sum(p.value.size for p in self.params.values())

    def forward(self, goals: np.ndarray) -> Var:
        """Predicted forces in newtons for normalized goals (B, 3); no clamp."""
        x = ad.constant(goals)
        x = ad.relu(ad.matmul(x, self.params["h1_w"]) + self.params["h1_b"])
        x = ad.relu(ad.matmul(x, self.params["h2_w"]) + self.params["h2_b"])
        y = ad.matmul(x, self.params["out_w"]) + self.params["out_b"]
        return y * ad.constant(self.normalizer.action_std) + ad.constant(
            self.normalizer.action_mean
        )


def predict(model: FfnnModel, desired_tip: np.ndarray) -> np.ndarray:
    """Forces (.., 4) in newtons, clamped to the actuator range."""
    desired_tip = np.asarray(desired_tip, dtype=np.float64)
    single = desired_tip.ndim == 1
    goals = model.normalizer.normalize_goal(np.atleast_2d(desired_tip))
    out = np.clip(model.forward(goals).value, 0.0, MAX_FORCE)
    return out[0] if single else out
