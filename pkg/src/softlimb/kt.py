"""Kinematics transformer: a small GPT-style decoder that maps sequences of
(limb state, desired tip position) tokens to the tendon forces reaching them.

Each step contributes exactly one sequence position: the state, goal, and
(zero-masked) action embeddings are summed with a learned positional vector.
Pre-norm residual blocks, causal masking, and a linear head per position.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .dataset import Normalizer

MAX_FORCE = 10.0


class RolloutError(RuntimeError):
    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass(frozen=True)
class KtConfig:
    sequence_length: int = 25
    embedding_dim: int = 128
    layer_count: int = 12
    head_count: int = 8
    state_dim: int = 7
    goal_dim: int = 3
    action_dim: int = 4
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.embedding_dim % self.head_count != 0:
            raise ValueError("embedding_dim must be divisible by head_count")
        for name in ("sequence_length", "embedding_dim", "layer_count", "head_count",
                     "state_dim", "goal_dim", "action_dim"):
            if getattr(self, name) < 1:
                raise ValueError("%s must be >= 1" % name)

    @property
    def head_dim(self):
        return self.embedding_dim // self.head_count

    def parameter_count(self) -> int:
        d = self.embedding_dim
        n = self.sequence_length
        per_layer = 12 * d * d + 13 * d
        return (
            (self.state_dim + self.goal_dim + self.action_dim) * d + 3 * d  # embeddings
            + n * d  # positional table
            + self.layer_count * per_layer
            + 2 * d  # final layer norm
            + d * self.action_dim + self.action_dim  # output head
        )

    def as_dict(self):
        return {
            "sequence_length": self.sequence_length,
            "embedding_dim": self.embedding_dim,
            "layer_count": self.layer_count,
            "head_count": self.head_count,
            "state_dim": self.state_dim,
            "goal_dim": self.goal_dim,
            "action_dim": self.action_dim,
            "dropout_rate": self.dropout_rate,
        }


@dataclass
class TokenBatch:
    """Normalized inputs for one forward pass; masked actions are all zero."""

    states: np.ndarray  # (B, T, state_dim)
    goals: np.ndarray  # (B, T, goal_dim)
    actions: np.ndarray  # (B, T, action_dim), zeros where masked
    valid_length: int = None

    def __post_init__(self):
        if self.valid_length is None:
            self.valid_length = self.states.shape[1]


class KtModel:
    """Parameter container plus forward pass."""

    def __init__(self, config: KtConfig, normalizer: Normalizer, seed: int = 0):
        self.config = config
        self.normalizer = normalizer
        self.params = {}
        rng = ad.make_rng(seed, 101)
        d = config.embedding_dim
        self._add_linear("state_emb", config.state_dim, d, rng)
        self._add_linear("goal_emb", config.goal_dim, d, rng)
        self._add_linear("action_emb", config.action_dim, d, rng)
        bound = 1.0 / np.sqrt(d)
        self.params["pos_table"] = Var(
            rng.uniform(-bound, bound, size=(config.sequence_length, d))
        )
        for i in range(config.layer_count):
            p = "layer%d_" % i
            self.params[p + "ln1_g"] = Var(np.ones(d))
            self.params[p + "ln1_b"] = Var(np.zeros(d))
            self._add_linear(p + "q", d, d, rng)
            self._add_linear(p + "k", d, d, rng)
            self._add_linear(p + "v", d, d, rng)
            self._add_linear(p + "proj", d, d, rng)
            self.params[p + "ln2_g"] = Var(np.ones(d))
            self.params[p + "ln2_b"] = Var(np.zeros(d))
            self._add_linear(p + "ff1", d, 4 * d, rng)
            self._add_linear(p + "ff2", 4 * d, d, rng)
        self.params["lnf_g"] = Var(np.ones(d))
        self.params["lnf_b"] = Var(np.zeros(d))
        self._add_linear("head", d, config.action_dim, rng)
        assert self.n_parameters() == config.parameter_count()

    def _add_linear(self, name, fan_in, fan_out, rng):
        w, b = ad.init_linear(fan_in, fan_out, rng)
        self.params[name + "_w"] = w
        self.params[name + "_b"] = b

    def n_parameters(self) -> int:
        return sum(p.value.size for p in self.params.values())

    def parameters(self):
        return list(self.params.values())

    # ------------------------------------------------------------------

    def _linear(self, name, x):
        return ad.matmul(x, self.params[name + "_w"]) + self.params[name + "_b"]

    def _layer_norm(self, x, gamma, beta, eps=1e-6):
        mu = ad.vmean(x, axis=-1, keepdims=True)
        xc = x - mu
        var = ad.vmean(xc * xc, axis=-1, keepdims=True)
        return (xc / ad.sqrt(var + eps)) * gamma + beta

    def _dropout(self, x, train, rng):
        p = self.config.dropout_rate
        if not train or p <= 0.0:
            return x
        keep = (rng.uniform(size=x.shape) >= p) / (1.0 - p)
        return x * ad.constant(keep)

    def embed(self, batch: TokenBatch) -> Var:
        """Sum of the three token embeddings plus the positional vector."""
        t = batch.states.shape[1]
        if t > self.config.sequence_length:
            raise ad.ContractError(
                "sequence of length %d exceeds the context window %d"
                % (t, self.config.sequence_length)
            )
        x = self._linear("state_emb", ad.constant(batch.states))
        x = x + self._linear("goal_emb", ad.constant(batch.goals))
        x = x + self._linear("action_emb", ad.constant(batch.actions))
        x = x + self.params["pos_table"][:t]
        return x

    def forward(self, batch: TokenBatch, train=False, rng=None) -> Var:
        """Predicted tendon forces in newtons, shape (B, T, action_dim).

        No clamping here; `predict_forces` applies the actuator bounds.
        """
        cfg = self.config
        b, t, _ = batch.states.shape
        x = self.embed(batch)
        x = self._dropout(x, train, rng)
        mask = causal_mask(t)
        dh = cfg.head_dim
        for i in range(cfg.layer_count):
            p = "layer%d_" % i
            h = self._layer_norm(x, self.params[p + "ln1_g"], self.params[p + "ln1_b"])
            q = self._split_heads(self._linear(p + "q", h), b, t)
            k = self._split_heads(self._linear(p + "k", h), b, t)
            v = self._split_heads(self._linear(p + "v", h), b, t)
            ctx = masked_attention(q, k, v, mask)
            ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, t, cfg.embedding_dim))
            attn_out = self._dropout(self._linear(p + "proj", ctx), train, rng)
            x = x + attn_out
            h = self._layer_norm(x, self.params[p + "ln2_g"], self.params[p + "ln2_b"])
            ff = self._linear(p + "ff2", ad.gelu(self._linear(p + "ff1", h)))
            x = x + self._dropout(ff, train, rng)
        x = self._layer_norm(x, self.params["lnf_g"], self.params["lnf_b"])
        y = self._linear("head", x)
        # fold de-normalization into the graph so the loss is in newtons
        return y * ad.constant(self.normalizer.action_std) + ad.constant(
            self.normalizer.action_mean
        )

    def _split_heads(self, x, b, t):
        cfg = self.config
        x = ad.reshape(x, (b, t, cfg.head_count, cfg.head_dim))
        return ad.transpose(x, (0, 2, 1, 3))


def causal_mask(t: int) -> np.ndarray:
    """Additive mask: 0 at or before the query position, -inf after it."""
    mask = np.zeros((t, t))
    mask[np.triu_indices(t, k=1)] = -np.inf
    return mask


def masked_attention(q: Var, k: Var, v: Var, mask: np.ndarray) -> Var:
    """Scaled dot-product attention over the last two axes of q, k, v.

    q, k, v: (..., T, head_dim); mask: additive (T, T).  Masked logits get
    -inf before the softmax, so attention rows sum to 1 over visible
    positions only.
    """
    dh = q.shape[-1]
    scores = ad.matmul(q, ad.transpose(k, _swap_last(k))) * (1.0 / np.sqrt(dh))
    scores = scores + ad.constant(mask)
    weights = ad.softmax(scores, axis=-1)
    return ad.matmul(weights, v)


def _swap_last(x: Var):
    axes = list(range(len(x.shape)))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def predict_forces(model: KtModel, batch: TokenBatch) -> np.ndarray:
    """Inference-mode forward pass, clamped to the actuator range [0, 10] N."""
    if not np.all(batch.actions == 0.0):
        raise ad.ContractError("action inputs must be zero-masked at inference")
    out = model.forward(batch, train=False).value
    return np.clip(out, 0.0, MAX_FORCE)


def autoregressive_rollout(
    initial_tip,
    initial_forces,
    waypoints,
    model: KtModel,
    forward_solver,
):
    """Predict-apply loop through a sequence of waypoints.

    `forward_solver(forces) -> tip_position` realizes each predicted force
    vector.  Context is the most recent `sequence_length` tokens.  Returns a
    list of (predicted_forces, realized_tip) pairs.
    """
    n_ctx = model.config.sequence_length
    states = []
    goals = []
    tip = np.asarray(initial_tip, dtype=np.float64)
    forces = np.asarray(initial_forces, dtype=np.float64)
    trajectory = []
    for w in waypoints:
        state = np.concatenate([tip, forces])
        states.append(model.normalizer.normalize_state(state))
        goals.append(model.normalizer.normalize_goal(np.asarray(w, dtype=np.float64)))
        states = states[-n_ctx:]
        goals = goals[-n_ctx:]
        batch = TokenBatch(
            states=np.asarray(states)[None],
            goals=np.asarray(goals)[None],
            actions=np.zeros((1, len(states), model.config.action_dim)),
        )
        pred = predict_forces(model, batch)[0, -1]
        try:
            tip = np.asarray(forward_solver(pred), dtype=np.float64)
        except Exception as exc:
            raise RolloutError(
                "forward solver failed at waypoint %d: %s" % (len(trajectory), exc),
                trajectory=trajectory,
            ) from exc
        forces = pred
        trajectory.append((pred.copy(), tip.copy()))
    return trajectory
