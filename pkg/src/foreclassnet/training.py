"""Adam optimisation and the epoch loop with validation monitoring."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, NonFiniteGradientError
from .layers import WelfordAccumulator
from .network import ForeClassNet, LossConfig, joint_loss, one_hot, predict_mc

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)


class Adam:
    """Bias-corrected Adam over a fixed list of parameter tensors."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(lr, beta1, beta2, eps)
        for i, p in enumerate(self.params):
            self.state.m[i] = np.zeros(p.shape)
            self.state.v[i] = np.zeros(p.shape)

    def zero_grad(self) -> None:
        ad.zero_grad(self.params)

    def step(self) -> None:
        s = self.state
        for i, p in enumerate(self.params):
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NonFiniteGradientError(f"NaN/Inf gradient in parameter {p.name or i}")
        s.t += 1
        c1 = 1.0 - s.beta1 ** s.t
        c2 = 1.0 - s.beta2 ** s.t
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros(p.shape)
            s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * g
            s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * g * g
            m_hat = s.m[i] / c1
            v_hat = s.v[i] / c2
            p.data = p.data - s.lr * m_hat / (np.sqrt(v_hat) + s.eps)


def adam_step(state: AdamState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Functional single Adam step over raw arrays; mutates ``state`` moments."""
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    out = []
    for i, (theta, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"NaN/Inf gradient in parameter {i}")
        m = state.m.get(i, np.zeros_like(g))
        v = state.v.get(i, np.zeros_like(g))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[i], state.v[i] = m, v
        out.append(theta - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
    return out


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0
    lr: float = 1e-3
    early_stopping_patience: int | None = None
    welford_reset_each_epoch: bool = True
    shuffle: bool = True
    val_mc_passes: int = 10

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.early_stopping_patience is not None and self.early_stopping_patience < 1:
            raise ConfigError("early_stopping_patience must be >= 1 when set")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class TrainResult:
    model: ForeClassNet
    log: list[EpochRecord]
    best_epoch: int | None = None
    stopped_early: bool = False

    def to_csv(self) -> str:
        return metric_log_csv(self.log)


def metric_log_csv(records: Sequence[EpochRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
    for r in records:
        writer.writerow([r.epoch, repr(r.train_loss), repr(r.train_acc), repr(r.val_loss), repr(r.val_acc)])
    return buf.getvalue()


def evaluate_split(model: ForeClassNet, observed, future, labels, ids, loss_cfg: LossConfig, passes: int,
                   seed: int) -> tuple[float, float]:
    """(loss, accuracy) of MC-averaged predictions; noise seeded for repeatability."""
    pred = predict_mc(model, observed, ids, passes, rng=np.random.default_rng(seed), welford=_scratch(model))
    y = one_hot(labels, model.config.n_classes)
    loss = joint_loss(y, pred.probs, future, pred.forecast_mean, loss_cfg).item()
    return loss, float(np.mean(pred.labels == np.asarray(labels)))


def _scratch(model: ForeClassNet) -> WelfordAccumulator:
    return WelfordAccumulator(model.config.k)


def train(model: ForeClassNet, dataset, train_cfg: TrainConfig | None = None,
          loss_cfg: LossConfig | None = None,
          progress: bool | Callable[[EpochRecord], None] = False) -> TrainResult:
    """Fit ``model`` on the train split of ``dataset``, monitoring the val split.

    Only rows tagged ``train`` and ``val`` are read. When early stopping is
    enabled the parameters with the best validation accuracy are restored.
    ``progress`` is either a flag (log each epoch) or a per-epoch callback.
    """
    train_cfg = train_cfg or TrainConfig()
    loss_cfg = loss_cfg or LossConfig()
    tr = dataset.subset("train")
    va = dataset.subset("val")
    if len(tr) == 0:
        raise ContractError("training split is empty")
    if train_cfg.early_stopping_patience is not None and len(va) == 0:
        raise ContractError("early stopping needs a non-empty validation split")
    if train_cfg.epochs == 0:
        return TrainResult(model, [])

    params = model.parameters()
    opt = Adam(params, lr=train_cfg.lr)
    rng = np.random.default_rng(np.random.SeedSequence([train_cfg.seed, 2]))
    y_train = one_hot(tr.labels, model.config.n_classes)
    records: list[EpochRecord] = []
    best_acc, best_state, best_epoch, waited = -np.inf, None, None, 0
    stopped = False
    n = len(tr)
    for epoch in range(1, train_cfg.epochs + 1):
        if train_cfg.welford_reset_each_epoch:
            model.welford.reset()
        order = rng.permutation(n) if train_cfg.shuffle else np.arange(n)
        loss_sum, correct = 0.0, 0
        for start in range(0, n, train_cfg.batch_size):
            idx = order[start : start + train_cfg.batch_size]
            out = model.forward(tr.observed[idx], tr.ids[idx].tolist(), train_mode=True)
            loss = joint_loss(y_train[idx], out.probs, tr.future[idx], out.forecast, loss_cfg, out.regularizer)
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
            loss_sum += loss.item() * len(idx)
            correct += int(np.sum(np.argmax(out.probs.data, axis=1) == tr.labels[idx]))
        train_loss, train_acc = loss_sum / n, correct / n
        if len(va):
            val_loss, val_acc = evaluate_split(model, va.observed, va.future, va.labels, va.ids.tolist(),
                                               loss_cfg, train_cfg.val_mc_passes, train_cfg.seed)
        else:
            val_loss, val_acc = float("nan"), float("nan")
        records.append(EpochRecord(epoch, train_loss, train_acc, val_loss, val_acc))
        if callable(progress):
            progress(records[-1])
        elif progress:
            log.info("epoch %d loss %.4f acc %.3f val_loss %.4f val_acc %.3f",
                     epoch, train_loss, train_acc, val_loss, val_acc)
        if train_cfg.early_stopping_patience is not None:
            if val_acc > best_acc:
                best_acc, best_state, best_epoch, waited = val_acc, model.state_dict(), epoch, 0
            else:
                waited += 1
                if waited >= train_cfg.early_stopping_patience:
                    stopped = True
                    break
    if best_state is not None:
        model.load_state_dict(best_state)
    return TrainResult(model, records, best_epoch, stopped)
