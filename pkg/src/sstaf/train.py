"""Cross-entropy training with AdamW and a decaying learning rate."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from . import tensor as T
from .model import SstafModel
from .tensor import ConfigError, Parameter, Tensor

log = logging.getLogger(__name__)

SCHEDULES = ("cosine", "linear", "step", "fixed")


@dataclass
class TrainConfig:
    batch_size: int = 16
    epochs: int = 20
    lr_start: float = 1e-3
    lr_end: float = 1e-4
    schedule: str = "cosine"
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        self.betas = tuple(self.betas)

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr_end > self.lr_start:
            raise ConfigError(f"lr_end {self.lr_end} exceeds lr_start {self.lr_start}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        b1, b2 = self.betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ConfigError(f"betas must lie in [0, 1), got {self.betas}")
        if self.weight_decay < 0 or self.adam_eps <= 0:
            raise ConfigError("weight_decay must be >= 0 and adam_eps > 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config keys {sorted(unknown)}")
        return cls(**d)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood of ``targets`` under softmax(``logits``)."""
    targets = np.asarray(targets, dtype=np.int64)
    b, k = logits.shape
    if targets.shape != (b,):
        raise T.DimensionError(f"targets shape {targets.shape} does not match batch {b}")
    if targets.size and (targets.min() < 0 or targets.max() >= k):
        raise ValueError(f"targets must lie in [0, {k}), got range [{targets.min()}, {targets.max()}]")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.arange(b)
    loss = -logp[rows, targets].mean()

    def backward(g):
        grad = np.exp(logp)
        grad[rows, targets] -= 1.0
        return (grad * (g / b),)

    return T.apply_op(np.asarray(loss, dtype=logits.dtype), (logits,), backward, "cross_entropy")


def lr_schedule(epoch_index: int, cfg: TrainConfig) -> float:
    """Learning rate for a training epoch, decaying from ``lr_start`` to ``lr_end``."""
    if not 0 <= epoch_index < cfg.epochs:
        raise ValueError(f"epoch index {epoch_index} outside [0, {cfg.epochs})")
    if cfg.schedule == "fixed" or cfg.epochs == 1:
        return cfg.lr_start
    frac = epoch_index / (cfg.epochs - 1)
    if cfg.schedule == "cosine":
        return cfg.lr_end + 0.5 * (cfg.lr_start - cfg.lr_end) * (1.0 + math.cos(math.pi * frac))
    if cfg.schedule == "linear":
        return cfg.lr_start + (cfg.lr_end - cfg.lr_start) * frac
    # step: lr_start for the first half, lr_end after
    return cfg.lr_start if frac < 0.5 else cfg.lr_end


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adamw_step(params: Sequence[Parameter], state: OptimizerState, lr: float, cfg: TrainConfig) -> OptimizerState:
    """One AdamW update with decoupled weight decay; mutates ``params`` and ``state``."""
    b1, b2 = cfg.betas
    eps, wd = cfg.adam_eps, cfg.weight_decay
    for p in params:
        if p.grad is None:
            raise ValueError(f"parameter {p.name!r} has no gradient")
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p in params:
        g = p.grad
        m = state.m.setdefault(p.name, np.zeros_like(p.data))
        v = state.v.setdefault(p.name, np.zeros_like(p.data))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        if wd:
            update = update + wd * p.data
        p.data = p.data - lr * update
    return state


class AdamW:
    """Stateful wrapper around :func:`adamw_step`, keyed by parameter name."""

    def __init__(self, params: Sequence[Parameter], cfg: TrainConfig):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names) or not all(names):
            raise ValueError("AdamW needs uniquely named parameters")
        self.cfg = cfg
        self.state = OptimizerState()

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float) -> None:
        adamw_step(self.params, self.state, lr, self.cfg)


@dataclass
class TrainResult:
    model: SstafModel
    history: list[dict]


def predict_logits(model: SstafModel, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
    out = []
    with T.no_grad():
        for s in range(0, len(x), batch_size):
            out.append(model(Tensor(x[s:s + batch_size]), training=False).data)
    if not out:
        return np.zeros((0, model.cfg.n_classes))
    return np.concatenate(out)


def evaluate_loss_acc(model: SstafModel, x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    logits = predict_logits(model, x)
    with T.no_grad():
        loss = cross_entropy(Tensor(logits), y).item()
    return loss, float(np.mean(logits.argmax(axis=1) == y))


def train_run(model: SstafModel, train_set: tuple[np.ndarray, np.ndarray],
              val_set: tuple[np.ndarray, np.ndarray] | None, cfg: TrainConfig,
              progress=None) -> TrainResult:
    """Minibatch training for a fixed number of epochs (no early stopping).

    ``train_set`` and ``val_set`` are ``(features, labels)`` pairs with
    features shaped (n, C, f, t), already standardised upstream.
    """
    cfg.validate()
    x, y = train_set
    y = np.asarray(y, dtype=np.int64)
    if len(x) == 0:
        raise ValueError("training set is empty")
    rng = np.random.default_rng([cfg.seed, 0])
    model.dropout_rng = np.random.default_rng([cfg.seed, 1])
    opt = AdamW(model.parameters(), cfg)
    history = []
    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg)
        order = rng.permutation(len(x))
        losses = []
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            opt.zero_grad()
            loss = cross_entropy(model(Tensor(x[idx]), training=True), y[idx])
            loss.backward()
            opt.step(lr)
            losses.append(loss.item() * len(idx))
        rec = {"epoch": epoch, "lr": lr, "train_loss": float(np.sum(losses) / len(x))}
        if val_set is not None and len(val_set[0]):
            rec["val_loss"], rec["val_accuracy"] = evaluate_loss_acc(model, val_set[0], np.asarray(val_set[1]))
        history.append(rec)
        log.info("epoch %d lr %.2e %s", epoch, lr,
                 " ".join(f"{k}={v:.4f}" for k, v in rec.items() if k not in ("epoch", "lr")))
        if progress is not None:
            progress(rec)
    return TrainResult(model, history)
