"""Optimization loops for both models, with reproducible shuffling and
best-validation checkpointing.  Loss is mean squared force error in N^2,
averaged over sequence steps and the four tendons."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Var
from .kt import KtModel, TokenBatch


class DivergenceError(RuntimeError):
    def __init__(self, message, epoch):
        super().__init__(message)
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 1e-4
    seed: int = 0
    checkpoint_interval: int = 0  # epochs; 0 disables periodic checkpoints
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("epochs, batch_size, learning_rate must be positive")

    def as_dict(self):
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "seed": self.seed,
            "checkpoint_interval": self.checkpoint_interval,
            "shuffle": self.shuffle,
        }


@dataclass
class LossRecord:
    epoch: int
    train_loss: float
    val_loss: float


def mse_loss(predicted, actual) -> Var:
    """Mean of squared differences over every step and tendon component."""
    pred = predicted if isinstance(predicted, Var) else ad.constant(predicted)
    target = np.asarray(actual, dtype=np.float64)
    if pred.shape != target.shape:
        raise ad.DimensionError(
            "prediction shape %r does not match labels %r" % (pred.shape, target.shape)
        )
    diff = pred - ad.constant(target)
    return ad.vmean(diff * diff)


def _snapshot(model):
    return {k: v.value.copy() for k, v in model.params.items()}


def _restore(model, snap):
    for k, v in snap.items():
        model.params[k].value = v.copy()


def _run_training(
    model,
    forward_train,
    forward_eval,
    labels_train,
    labels_val,
    config: TrainConfig,
    on_epoch=None,
):
    """Shared loop: `forward_train(idx, rng)` / `forward_eval(idx)` return a
    prediction Var for the given sample indices."""
    n = labels_train.shape[0]
    params = model.parameters()
    opt = Adam(params, learning_rate=config.learning_rate)
    shuffle_rng = ad.make_rng(config.seed, 11)
    dropout_rng = ad.make_rng(config.seed, 12)
    records = []
    best_val = np.inf
    best_snap = _snapshot(model)
    for epoch in range(config.epochs):
        order = np.arange(n)
        if config.shuffle:
            shuffle_rng.shuffle(order)
        epoch_losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss = mse_loss(forward_train(idx, dropout_rng), labels_train[idx])
            loss_val = float(loss.value)
            if not np.isfinite(loss_val):
                raise DivergenceError(
                    "non-finite training loss at epoch %d" % epoch, epoch
                )
            ad.zero_grads(params)
            loss.backward()
            opt.step()
            epoch_losses.append(loss_val)
        if labels_val.shape[0] > 0:
            val_loss = float(
                mse_loss(forward_eval(np.arange(labels_val.shape[0])), labels_val).value
            )
        else:
            val_loss = float(np.mean(epoch_losses))
        if val_loss < best_val:
            best_val = val_loss
            best_snap = _snapshot(model)
        records.append(
            LossRecord(epoch=epoch, train_loss=float(np.mean(epoch_losses)), val_loss=val_loss)
        )
        if on_epoch is not None:
            on_epoch(records[-1], model)
    _restore(model, best_snap)
    return records


def train_kt(
    model: KtModel,
    train_sequences,
    val_sequences,
    config: TrainConfig,
    on_epoch=None,
):
    """train/val sequences are (states, goals, labels) arrays of shape
    (S, N, *); states and goals already normalized, labels in newtons."""
    st, gl, lb = train_sequences
    vst, vgl, vlb = val_sequences
    zeros = lambda idx: np.zeros((len(idx), st.shape[1], model.config.action_dim))

    def forward_train(idx, rng):
        batch = TokenBatch(states=st[idx], goals=gl[idx], actions=zeros(idx))
        return model.forward(batch, train=True, rng=rng)

    def forward_eval(idx):
        batch = TokenBatch(states=vst[idx], goals=vgl[idx], actions=np.zeros(
            (len(idx), vst.shape[1], model.config.action_dim)))
        return model.forward(batch, train=False)

    return _run_training(model, forward_train, forward_eval, lb, vlb, config, on_epoch)


def train_ffnn(
    model,
    train_pairs,
    val_pairs,
    config: TrainConfig,
    on_epoch=None,
):
    """train/val pairs are (normalized goals (B,3), labels (B,4) in N)."""
    goals, labels = train_pairs
    vgoals, vlabels = val_pairs

    def forward_train(idx, rng):
        return model.forward(goals[idx])

    def forward_eval(idx):
        return model.forward(vgoals[idx])

    return _run_training(model, forward_train, forward_eval, labels, vlabels, config, on_epoch)


def write_loss_log(path, records):
    with open(path, "w") as fh:
        fh.write("epoch train_loss val_loss\n")
        for r in records:
            fh.write("%d %.10e %.10e\n" % (r.epoch, r.train_loss, r.val_loss))


def read_loss_log(path):
    records = []
    with open(path) as fh:
        next(fh)
        for line in fh:
            e, tr, vl = line.split()
            records.append(LossRecord(int(e), float(tr), float(vl)))
    return records
