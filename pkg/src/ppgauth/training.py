"""Training loop, learning-rate schedules and evaluation."""

import csv
import json
import logging
from dataclasses import asdict, dataclass, fields

import numpy as np

from ppgauth import nn
from ppgauth.dataset import class_weights
from ppgauth.errors import EmptyDataset, ShapeMismatch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 40
    batch_size: int = 32
    lr0: float = 9.23e-4
    weight_decay: float = 8.21e-6
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    min_delta: float = 1e-4
    seed: int = 0
    clip_norm: float | None = 5.0
    schedule: str = "plateau"  # or "exponential"
    exp_gamma: float = 0.95

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 < self.plateau_factor < 1:
            raise ValueError("plateau_factor must be in (0, 1)")
        if self.schedule not in ("plateau", "exponential"):
            raise ValueError(f"unknown schedule {self.schedule!r}")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig field(s): {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    lr: float

    def as_dict(self):
        return asdict(self)


HISTORY_COLUMNS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc", "lr")


def write_history_csv(history, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HISTORY_COLUMNS)
        for rec in history:
            writer.writerow([rec.epoch] + [repr(float(getattr(rec, c))) for c in HISTORY_COLUMNS[1:]])


class PlateauScheduler:
    """Multiply the learning rate by ``factor`` once the validation loss has
    failed to improve by ``min_delta`` for ``patience`` consecutive epochs;
    the counter restarts after every reduction."""

    def __init__(self, lr, factor=0.5, patience=5, min_delta=1e-4):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.min_delta = min_delta
        self.best = np.inf
        self.bad_epochs = 0

    def step(self, val_loss):
        if val_loss < self.best - self.min_delta:
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr *= self.factor
                self.bad_epochs = 0
        return self.lr


class ExponentialScheduler:
    def __init__(self, lr, gamma=0.95):
        self.lr = lr
        self.gamma = gamma

    def step(self, val_loss):
        self.lr *= self.gamma
        return self.lr


def make_scheduler(cfg):
    if cfg.schedule == "exponential":
        return ExponentialScheduler(cfg.lr0, cfg.exp_gamma)
    return PlateauScheduler(cfg.lr0, cfg.plateau_factor, cfg.plateau_patience, cfg.min_delta)


def clip_global_norm(grads, max_norm):
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm is None or total <= max_norm:
        return grads, total
    scale = max_norm / (total + 1e-12)
    return {k: g * scale for k, g in grads.items()}, total


@dataclass
class EvalResult:
    loss: float
    accuracy: float
    predictions: list  # (label, argmax class, probs)

    @property
    def probs(self):
        return np.stack([p for _, _, p in self.predictions])

    @property
    def labels(self):
        return np.array([lbl for lbl, _, _ in self.predictions])

    @property
    def predicted(self):
        return np.array([pred for _, pred, _ in self.predictions])


def _check_shapes(model_cfg, x, what):
    if x.shape[1:] != (model_cfg.seq_len, model_cfg.input_channels):
        raise ShapeMismatch(
            f"{what} windows are {x.shape[1:]}, model expects "
            f"({model_cfg.seq_len}, {model_cfg.input_channels})"
        )


def evaluate(params, dataset, weights=None):
    """Eval-mode pass over every window. Loss is the (optionally weighted)
    mean cross-entropy; argmax ties resolve to the lowest class index."""
    if len(dataset) == 0:
        raise EmptyDataset("cannot evaluate an empty dataset")
    x, y = dataset.arrays()
    _check_shapes(params.config, x, "evaluation")
    probs = nn.predict_proba(params, x)
    pred = np.argmax(probs, axis=1)
    loss = nn.batch_loss(probs, y, weights)
    preds = [(int(lbl), int(pr), pp) for lbl, pr, pp in zip(y, pred, probs)]
    return EvalResult(loss, float(np.mean(pred == y)), preds)


def train(model_cfg, train_cfg, train_set, val_set, init_params=None, on_epoch=None):
    """Fit the classifier; returns ``(best params, history)``.

    The returned parameters are those of the epoch with the highest
    validation accuracy (later epochs win ties).
    """
    params = init_params if init_params is not None else nn.init_params(model_cfg, train_cfg.seed)
    history = []
    if train_cfg.max_epochs == 0:
        return params, history
    if len(train_set) == 0 or len(val_set) == 0:
        raise EmptyDataset("training and validation sets must be non-empty")
    x, y = train_set.arrays()
    _check_shapes(model_cfg, x, "training")
    _check_shapes(model_cfg, val_set.arrays()[0], "validation")
    weights = class_weights(train_set)

    rng = np.random.default_rng(train_cfg.seed)
    state = nn.adam_init(params, lr=train_cfg.lr0, weight_decay=train_cfg.weight_decay)
    sched = make_scheduler(train_cfg)
    best_params, best_acc = params, -1.0
    n = len(y)
    bs = train_cfg.batch_size

    for epoch in range(1, train_cfg.max_epochs + 1):
        lr = sched.lr
        state.lr = lr
        order = rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            batch_seed = int(rng.integers(2 ** 63 - 1))
            probs, cache = nn.forward(params, x[idx], train=True, seed=batch_seed)
            loss_sum += nn.batch_loss(probs, y[idx], weights) * len(idx)
            correct += int(np.sum(np.argmax(probs, axis=1) == y[idx]))
            grads = nn.backward_from_cache(params, cache, y[idx], weights)
            grads, _ = clip_global_norm(grads, train_cfg.clip_norm)
            params, state = nn.adam_step(params, grads, state)
        val = evaluate(params, val_set)
        rec = EpochRecord(epoch, loss_sum / n, correct / n, val.loss, val.accuracy, lr)
        history.append(rec)
        log.info("epoch %d loss %.4f acc %.4f val_loss %.4f val_acc %.4f lr %.3g",
                 epoch, rec.train_loss, rec.train_acc, rec.val_loss, rec.val_acc, lr)
        if val.accuracy >= best_acc:
            best_acc = val.accuracy
            best_params = params
        sched.step(val.loss)
        if on_epoch is not None:
            on_epoch(rec)
    return best_params, history
