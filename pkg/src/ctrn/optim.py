"""Adam, early stopping and the pointwise training loop."""

from __future__ import annotations

import copy
import logging
import time
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import metrics
from .data import QAInstance, make_batches
from .errors import ConfigError, NonFiniteGradientError
from .model import ModelConfig, Ranker

log = logging.getLogger(__name__)

D_GRID = tuple(range(128, 1025, 128))
LR_GRID = (1e-3, 1e-4, 1e-5)
BATCH_GRID = (64, 128, 256, 512)


class Adam:
    """Bias-corrected Adam over a dict of named arrays, updated in place."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        # validate everything first so a bad gradient leaves no partial update
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(name)
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(params[name])
                self.v[name] = np.zeros_like(params[name])
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            params[name] -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


class EarlyStopping:
    def __init__(self, patience: int = 5):
        self.patience = patience
        self.best = -np.inf
        self.since_best = 0

    def update(self, metric: float) -> bool:
        """Record one epoch; returns True when it is a new best."""
        if metric > self.best:
            self.best = metric
            self.since_best = 0
            return True
        self.since_best += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.since_best >= self.patience


@dataclass
class TrainConfig:
    d: int = 128
    m: int = 64
    h: int = 64
    k: int = 2
    mlp_layers: int = 1
    lr: float = 1e-3
    batch_size: int = 64
    dropout: float = 0.5
    l2: float = 4e-6
    epochs: int = 25
    patience: int = 5
    seed: int = 0
    metric: str = "map"
    embedding_dim: int = 50
    model: str = "ctrn"
    shared: bool = True
    overlap_features: bool = False

    def validate(self) -> "TrainConfig":
        """Check every field against the tuning grids; raises ConfigError naming the key."""
        checks = [
            ("d", self.d in D_GRID, f"one of {D_GRID}"),
            ("mlp_layers", 1 <= self.mlp_layers <= 3, "in [1, 3]"),
            ("lr", any(np.isclose(self.lr, g, rtol=1e-9, atol=0) for g in LR_GRID), f"one of {LR_GRID}"),
            ("batch_size", self.batch_size in BATCH_GRID, f"one of {BATCH_GRID}"),
            ("dropout", 0.0 <= self.dropout < 1.0, "in [0, 1)"),
            ("l2", self.l2 >= 0, ">= 0"),
            ("epochs", self.epochs >= 1, ">= 1"),
            ("patience", self.patience >= 1, ">= 1"),
            ("m", self.m >= 1, ">= 1"),
            ("h", self.h >= 1, ">= 1"),
            ("k", self.k >= 1, ">= 1"),
            ("embedding_dim", self.embedding_dim >= 1, ">= 1"),
            ("metric", self.metric in metrics.METRICS, f"one of {sorted(metrics.METRICS)}"),
            ("model", self.model in ("ctrn", "qrnn"), "ctrn or qrnn"),
        ]
        for key, ok, want in checks:
            if not ok:
                raise ConfigError(f"{key} = {getattr(self, key)!r} must be {want}", key)
        return self

    def model_config(self) -> ModelConfig:
        return ModelConfig(m=self.m, d=self.d, h=self.h, k=self.k, mlp_layers=self.mlp_layers,
                           cross=self.model == "ctrn", shared=self.shared,
                           overlap_features=self.overlap_features, dropout=self.dropout)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            key = sorted(unknown)[0]
            raise ConfigError(f"unknown config key {key!r}", key)
        return cls(**values)


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    dev_metric: float
    seconds: float


@dataclass
class TrainResult:
    best_metric: float
    best_epoch: int
    history: list[EpochLog] = field(default_factory=list)
    stopped_early: bool = False


def evaluate_model(model: Ranker, instances: Sequence[QAInstance], batch_size: int = 256) -> dict[str, float]:
    scores = model.score(instances, batch_size)
    groups = metrics.build_groups([x.query_id for x in instances], scores, [x.label for x in instances])
    return metrics.evaluate(groups)


def format_log(cfg: TrainConfig, history: Sequence[EpochLog]) -> str:
    header = "# " + " ".join(f"{k}={v}" for k, v in cfg.to_dict().items())
    rows = [f"{e.epoch}\t{e.train_loss:.6f}\t{e.dev_metric:.6f}\t{e.seconds:.3f}" for e in history]
    return "\n".join([header, "epoch\ttrain_loss\tdev_metric\tseconds", *rows]) + "\n"


def train(model: Ranker, train_set: Sequence[QAInstance], dev_set: Sequence[QAInstance],
          cfg: TrainConfig, on_epoch=None) -> TrainResult:
    """Train with Adam; keep the parameters of the best dev epoch in ``model``.

    Stops after ``cfg.epochs`` or once the dev metric has not improved for
    ``cfg.patience`` epochs.
    """
    if not train_set or not dev_set:
        raise ConfigError("training and development sets must be non-empty", "train_path")
    if model.vocab is None:
        raise ConfigError("model needs a vocabulary before training", "vocab")
    opt = Adam(lr=cfg.lr)
    stopper = EarlyStopping(cfg.patience)
    drop_rng = np.random.default_rng(cfg.seed)
    extra = model.features_for(train_set)
    result = TrainResult(-np.inf, 0)
    best_params = copy.deepcopy(model.params)

    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        total = 0.0
        for batch in make_batches(train_set, model.vocab, cfg.batch_size,
                                  seed=cfg.seed * 100003 + epoch, extra=extra):
            report, grads, _ = model.loss_and_grads(batch, cfg.l2, train=True, rng=drop_rng)
            opt.step(model.params, grads)
            total += report.data_loss
        dev = evaluate_model(model, dev_set)[cfg.metric]
        entry = EpochLog(epoch, total / len(train_set), dev, time.perf_counter() - start)
        result.history.append(entry)
        log.info("epoch %d loss %.4f dev %s %.4f", epoch, entry.train_loss, cfg.metric, dev)
        if on_epoch is not None:
            on_epoch(entry)
        if stopper.update(dev):
            result.best_metric, result.best_epoch = dev, epoch
            best_params = copy.deepcopy(model.params)
        elif stopper.should_stop:
            result.stopped_early = True
            break

    model.params = best_params
    return result
