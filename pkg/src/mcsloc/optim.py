"""AdamW, the 1cycle learning-rate schedule and the training loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from mcsloc.errors import ConfigError, DomainError, TrainingError
from mcsloc.tcn import Network, backward, cross_entropy, forward, iter_batches, save_checkpoint

log = logging.getLogger(__name__)

HISTORY_FIELDS = ("epoch", "train_loss", "val_loss", "val_accuracy", "lr_last")


@dataclass(frozen=True)
class AdamWConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 1e-2

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")
        if self.weight_decay < 0 or self.epsilon <= 0:
            raise ConfigError("weight_decay must be >= 0 and epsilon > 0")


@dataclass
class AdamWState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamWState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0)


@dataclass(frozen=True)
class OneCycleConfig:
    max_lr: float = 1e-2
    total_steps: int = 1
    pct_start: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e4

    def __post_init__(self):
        if not 0 < self.pct_start < 1:
            raise ConfigError("pct_start must lie in (0, 1)")
        if self.div_factor <= 1 or self.final_div_factor <= 1:
            raise ConfigError("div_factor and final_div_factor must exceed 1")
        if self.total_steps < 1 or self.max_lr <= 0:
            raise ConfigError("total_steps must be >= 1 and max_lr > 0")

    @property
    def initial_lr(self) -> float:
        return self.max_lr / self.div_factor

    @property
    def final_lr(self) -> float:
        return self.initial_lr / self.final_div_factor

    @property
    def peak_step(self) -> int:
        return round(self.pct_start * self.total_steps)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    seed: int = 0
    checkpoint_every: int = 0  # epochs; 0 disables intermediate checkpoints
    grad_clip: float | None = None  # global L2 norm

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")


def _cosine(start: float, end: float, frac: float) -> float:
    # exact `end` at frac == 1 since cos(pi) == -1
    return end + (start - end) * (1.0 + math.cos(math.pi * frac)) / 2.0


def lr_at(cfg: OneCycleConfig, step: int) -> float:
    """Learning rate for ``step`` in [0, total_steps]."""
    if not 0 <= step <= cfg.total_steps:
        raise DomainError(f"step {step} outside [0, {cfg.total_steps}]")
    peak = cfg.peak_step
    if step <= peak:
        return cfg.max_lr if peak == 0 else _cosine(cfg.initial_lr, cfg.max_lr, step / peak)
    return _cosine(cfg.max_lr, cfg.final_lr, (step - peak) / (cfg.total_steps - peak))


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamWState,
               cfg: AdamWConfig, lr: float) -> None:
    """One decoupled-weight-decay Adam update, in place on ``params`` and ``state``."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient in {name}")
    t = state.t + 1
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for name, theta in params.items():
        g = grads[name]
        m, v = state.m[name], state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        upd = (m / bc1) / (np.sqrt(v / bc2) + cfg.epsilon)
        upd += cfg.weight_decay * theta
        theta -= lr * upd
    state.t = t


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= scale
    return norm


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    lr_last: float


def evaluate(net: Network, x: np.ndarray, y: np.ndarray, batch_size: int = 64) -> tuple[float, float]:
    """Mean cross-entropy and accuracy over a labelled set."""
    if len(x) == 0:
        return math.nan, math.nan
    loss, correct = 0.0, 0
    for s in iter_batches(len(x), batch_size):
        probs = forward(net, x[s])
        loss += cross_entropy(probs, y[s]) * len(y[s])
        correct += int((probs.argmax(axis=1) == y[s]).sum())
    return loss / len(x), correct / len(x)


def train(net: Network, train_set: tuple[np.ndarray, np.ndarray],
          val_set: tuple[np.ndarray, np.ndarray] | None, tcfg: TrainConfig,
          ocfg: OneCycleConfig = OneCycleConfig(), acfg: AdamWConfig = AdamWConfig(),
          checkpoint_dir: str | Path | None = None,
          on_epoch: Callable[[EpochRecord], None] | None = None) -> tuple[Network, list[EpochRecord]]:
    """Train ``net`` in place; ``ocfg.total_steps`` is overridden by epochs * batches."""
    x, y = train_set
    if len(x) == 0:
        raise DomainError("training set is empty")
    steps_per_epoch = math.ceil(len(x) / tcfg.batch_size)
    ocfg = replace(ocfg, total_steps=tcfg.epochs * steps_per_epoch)
    rng = np.random.default_rng(tcfg.seed)
    state = AdamWState.zeros_like(net.params)
    history: list[EpochRecord] = []
    step = 0
    lr = lr_at(ocfg, 0)
    for epoch in range(1, tcfg.epochs + 1):
        order = rng.permutation(len(x))
        total = 0.0
        for s in iter_batches(len(x), tcfg.batch_size):
            idx = order[s]
            loss, grads = backward(net, x[idx], y[idx])
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, step {step}")
            if tcfg.grad_clip is not None:
                clip_gradients(grads, tcfg.grad_clip)
            lr = lr_at(ocfg, step)
            adamw_step(net.params, grads, state, acfg, lr)
            total += loss * len(idx)
            step += 1
        if val_set is not None:
            val_loss, val_acc = evaluate(net, *val_set, batch_size=max(tcfg.batch_size, 64))
        else:
            val_loss, val_acc = math.nan, math.nan
        rec = EpochRecord(epoch, total / len(x), val_loss, val_acc, lr)
        history.append(rec)
        log.info("epoch %d train_loss %.4f val_loss %.4f val_acc %.4f lr %.2e",
                 epoch, rec.train_loss, val_loss, val_acc, lr)
        if on_epoch is not None:
            on_epoch(rec)
        if checkpoint_dir is not None and tcfg.checkpoint_every and epoch % tcfg.checkpoint_every == 0:
            Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
            save_checkpoint(net, Path(checkpoint_dir) / f"epoch_{epoch:03d}.ckpt")
    return net, history


def write_history_csv(history: list[EpochRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        for r in history:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.val_accuracy), repr(r.lr_last)])


def read_history_csv(path: str | Path) -> list[EpochRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [EpochRecord(int(r["epoch"]), float(r["train_loss"]), float(r["val_loss"]),
                        float(r["val_accuracy"]), float(r["lr_last"])) for r in rows]
