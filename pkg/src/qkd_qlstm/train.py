"""Loss, AdamW, cosine warm restarts, the training loop and evaluation."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .nn import HybridModel

log = logging.getLogger(__name__)

LR_DEFAULT = 5e-4
LR_HIGH = 5e-3


def cross_entropy(logits, targets):
    """Mean softmax cross-entropy and its gradient with respect to the logits."""
    logits = np.asarray(logits, dtype=float)
    targets = np.asarray(targets, dtype=np.int64)
    batch, n_classes = logits.shape
    if targets.shape != (batch,):
        raise ValueError("targets must be a vector with one entry per row")
    if targets.size and (targets.min() < 0 or targets.max() >= n_classes):
        raise ValueError("target index out of range")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_p = shifted - log_z[:, None]
    rows = np.arange(batch)
    loss = -log_p[rows, targets].mean()
    grad = np.exp(log_p)
    grad[rows, targets] -= 1.0
    return loss, grad / batch


@dataclass
class OptimState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adamw_step(params: dict, grads: dict, st: OptimState, lr: float, weight_decay: float) -> dict:
    """In-place AdamW update with decoupled weight decay; returns ``params``."""
    st.t += 1
    b1, b2 = st.beta1, st.beta2
    c1 = 1.0 - b1 ** st.t
    c2 = 1.0 - b2 ** st.t
    for name, p in params.items():
        g = grads[name]
        if name not in st.m:
            st.m[name] = np.zeros_like(p)
            st.v[name] = np.zeros_like(p)
        m, v = st.m[name], st.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p *= 1.0 - lr * weight_decay
        p -= lr * (m / c1) / (np.sqrt(v / c2) + st.eps)
    return params


@dataclass
class SchedulerState:
    eta_max: float = LR_DEFAULT
    eta_min: float = 0.0
    t_i: int = 50
    t_cur: int = 0

    def step(self) -> None:
        """Advance one epoch; restart at the end of the period (multiplier 1)."""
        self.t_cur += 1
        if self.t_cur >= self.t_i:
            self.t_cur = 0


def lr_at(st: SchedulerState, t_cur: float | None = None) -> float:
    t = st.t_cur if t_cur is None else t_cur
    t = t % st.t_i if t >= st.t_i else t
    return st.eta_min + 0.5 * (st.eta_max - st.eta_min) * (1.0 + math.cos(math.pi * t / st.t_i))


@dataclass
class TrainConfig:
    max_epochs: int = 50
    batch_size: int = 64
    lr_init: float = LR_DEFAULT
    lr_min: float = 0.0
    weight_decay: float = 1e-4
    t_0: int = 50
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.max_epochs < 1 or self.batch_size < 1 or self.t_0 < 1 or self.patience < 1:
            raise ValueError("epochs, batch size, t_0 and patience must be positive")
        if self.lr_init <= 0 or self.lr_min < 0 or self.weight_decay < 0:
            raise ValueError("learning rates and weight decay must be non-negative")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    eval_loss: float
    accuracy: float
    lr: float


@dataclass
class TrainResult:
    model: HybridModel
    history: list[EpochRecord]
    best_epoch: int
    stopped_early: bool


class EarlyStopping:
    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, loss: float, epoch: int) -> bool:
        """Record an epoch's monitored loss; True when training should stop."""
        if loss < self.best:
            self.best = loss
            self.best_epoch = epoch
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs >= self.patience


def evaluate_loss(model: HybridModel, x, y, batch_size: int = 256) -> tuple[float, np.ndarray]:
    logits = model.predict_logits(x, batch_size)
    loss, _ = cross_entropy(logits, y)
    return float(loss), logits


def train(model: HybridModel, x_train, y_train, x_eval, y_eval, cfg: TrainConfig,
          eval_fn=None, on_epoch=None) -> TrainResult:
    """Mini-batch AdamW training with per-epoch LR schedule and early stopping.

    The held-out split doubles as the early-stopping monitor. ``eval_fn``
    overrides how the per-epoch (eval_loss, accuracy) pair is computed.
    """
    rng = np.random.default_rng(cfg.seed)
    x_train = np.asarray(x_train, dtype=float)
    y_train = np.asarray(y_train, dtype=np.int64)
    opt = OptimState()
    sched = SchedulerState(cfg.lr_init, cfg.lr_min, cfg.t_0)
    stopper = EarlyStopping(cfg.patience)
    best_params = {k: v.copy() for k, v in model.params.items()}
    history = []
    stopped = False
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        lr = lr_at(sched)
        order = rng.permutation(len(y_train))
        total, seen = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            logits, cache = model.forward(x_train[idx])
            loss, d_logits = cross_entropy(logits, y_train[idx])
            grads = model.backward(cache, d_logits)
            adamw_step(model.params, grads, opt, lr, cfg.weight_decay)
            total += loss * len(idx)
            seen += len(idx)
        sched.step()
        if eval_fn is None:
            eval_loss, logits = evaluate_loss(model, x_eval, y_eval)
            accuracy = float(np.mean(logits.argmax(axis=1) == np.asarray(y_eval)))
        else:
            eval_loss, accuracy = eval_fn(model, epoch)
        record = EpochRecord(epoch, total / max(seen, 1), float(eval_loss), float(accuracy), lr)
        history.append(record)
        log.info("epoch %d train_loss=%.4f eval_loss=%.4f acc=%.4f (%.1fs)", epoch,
                 record.train_loss, record.eval_loss, record.accuracy, time.perf_counter() - t0)
        if on_epoch is not None:
            on_epoch(record)
        improved = eval_loss < stopper.best
        if stopper.update(eval_loss, epoch):
            stopped = epoch < cfg.max_epochs
            break
        if improved:
            best_params = {k: v.copy() for k, v in model.params.items()}
    model.params.clear()
    model.params.update(best_params)
    return TrainResult(model, history, stopper.best_epoch, stopped)


# --- evaluation ----------------------------------------------------------------


@dataclass
class EvalReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: np.ndarray           # rows = true class, columns = predicted
    per_class: list[dict]
    loss: float | None = None
    labels: list[str] | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["confusion"] = self.confusion.tolist()
        return d


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return cm


def report_from_confusion(cm, loss=None, labels=None) -> EvalReport:
    """Support-weighted precision / recall / F1 from a confusion matrix."""
    cm = np.asarray(cm, dtype=np.int64)
    total = cm.sum()
    if total == 0:
        raise ValueError("empty test set")
    tp = np.diag(cm).astype(float)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    tn = total - tp - fp - fn
    support = cm.sum(axis=1).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        recall = np.where(support > 0, tp / support, 0.0)
        f1 = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)
    w = support / total
    per_class = [dict(tp=int(tp[k]), fp=int(fp[k]), fn=int(fn[k]), tn=int(tn[k]), support=int(support[k]),
                      precision=float(precision[k]), recall=float(recall[k]), f1=float(f1[k]))
                 for k in range(cm.shape[0])]
    return EvalReport(
        accuracy=float(tp.sum() / total),
        precision=float(w @ precision),
        recall=float(w @ recall),
        f1=float(w @ f1),
        confusion=cm,
        per_class=per_class,
        loss=loss,
        labels=list(labels) if labels is not None else None,
    )


def evaluate(model: HybridModel, x_test, y_test, labels=None) -> EvalReport:
    y_test = np.asarray(y_test, dtype=np.int64)
    if y_test.size == 0:
        raise ValueError("empty test set")
    loss, logits = evaluate_loss(model, x_test, y_test)
    cm = confusion_matrix(y_test, logits.argmax(axis=1), model.config.n_classes)
    return report_from_confusion(cm, loss, labels)


# --- artifacts -----------------------------------------------------------------

HISTORY_COLUMNS = ("epoch", "train_loss", "eval_loss", "accuracy")


def write_history(history: list[EpochRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS + ("lr",))
        for r in history:
            w.writerow([r.epoch, f"{r.train_loss:.10f}", f"{r.eval_loss:.10f}", f"{r.accuracy:.10f}", f"{r.lr:.10g}"])


def read_history(path) -> list[EpochRecord]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and not set(HISTORY_COLUMNS) <= set(rows[0]):
        raise ValueError(f"{path}: history file lacks columns {HISTORY_COLUMNS}")
    return [EpochRecord(int(r["epoch"]), float(r["train_loss"]), float(r["eval_loss"]),
                        float(r["accuracy"]), float(r.get("lr") or "nan")) for r in rows]


def write_report(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_confusion(cm, path, labels=None) -> None:
    cm = np.asarray(cm)
    labels = list(labels) if labels is not None else [str(k) for k in range(cm.shape[0])]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\pred"] + labels)
        for lab, row in zip(labels, cm):
            w.writerow([lab] + [int(v) for v in row])
