"""Fast gradient sign attacks and the two-phase adversarial-training protocol."""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .data import Dataset
from .errors import ConfigError, SequencingError
from .layers import WelfordAccumulator
from .network import ForeClassNet, LossConfig, joint_loss, one_hot, predict_mc
from .training import TrainConfig, TrainResult, train

LOSS_KINDS = ("cce", "mse")


@dataclass
class AttackConfig:
    epsilon: float = 0.1
    loss_kind: str = "cce"
    target_split: str = "test"
    seed: int = 0
    batch_size: int = 256

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ConfigError("epsilon must be >= 0")
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.target_split not in ("train", "val", "test"):
            raise ConfigError(f"unknown target split {self.target_split!r}")

    @property
    def loss(self) -> LossConfig:
        """Only the attacked term of the joint loss is differentiated."""
        return LossConfig(alpha=1.0, beta=0.0) if self.loss_kind == "cce" else LossConfig(alpha=0.0, beta=1.0)


def fgsm_perturb(grad: np.ndarray, epsilon: float) -> np.ndarray:
    """``epsilon * sign(grad)`` with sign(0) = 0."""
    return epsilon * np.sign(np.asarray(grad, dtype=np.float64))


@contextmanager
def frozen(params: Sequence[ad.Tensor]):
    """Temporarily stop parameters from requiring gradients."""
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, f in zip(params, flags):
            p.requires_grad = f


def input_gradient(model: ForeClassNet, observed, future, labels, ids: Sequence, loss_cfg: LossConfig,
                   rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """Gradient of the summed loss w.r.t. the observed series, plus that loss.

    One dropout mask is drawn per sample from ``rng`` and held for the pass.
    A scratch accumulator keeps the model's own Welford state untouched.
    """
    x = ad.parameter(np.array(observed, dtype=np.float64, ndmin=2), name="observed")
    with frozen(model.parameters()):
        out = model.forward(x, list(ids), rng=rng, welford=WelfordAccumulator(model.config.k), detach=False)
        y = one_hot(labels, model.config.n_classes)
        loss = joint_loss(y, out.probs, future, out.forecast, loss_cfg, reduction="sum")
        ad.backward(loss)
    return x.grad, loss.item()


def fgsm(model: ForeClassNet, observed, future, labels, ids: Sequence | None = None,
         cfg: AttackConfig | None = None) -> np.ndarray:
    """Adversarial copies of ``observed``; futures and labels are not touched."""
    cfg = cfg or AttackConfig()
    observed = np.array(observed, dtype=np.float64, ndmin=2)
    future = np.array(future, dtype=np.float64, ndmin=2)
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    ids = list(range(len(observed))) if ids is None else list(ids)
    if cfg.epsilon == 0:
        return observed.copy()
    out = np.empty_like(observed)
    for chunk, start in enumerate(range(0, len(observed), cfg.batch_size)):
        sl = slice(start, start + cfg.batch_size)
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3, chunk]))
        grad, _ = input_gradient(model, observed[sl], future[sl], labels[sl], ids[sl], cfg.loss, rng)
        out[sl] = observed[sl] + fgsm_perturb(grad, cfg.epsilon)
    return out


def attack_dataset(model: ForeClassNet, dataset: Dataset, cfg: AttackConfig | None = None,
                   id_offset: int | None = None) -> Dataset:
    """Perturb every row of ``dataset``; copies get ids shifted by ``id_offset``."""
    cfg = cfg or AttackConfig()
    if id_offset is None:
        id_offset = int(dataset.ids.max()) + 1 if len(dataset) else 0
    adv = fgsm(model, dataset.observed, dataset.future, dataset.labels, dataset.ids.tolist(), cfg)
    return replace(
        dataset,
        ids=dataset.ids + id_offset,
        observed=adv,
        future=dataset.future.copy(),
        labels=dataset.labels.copy(),
        provenance=np.full(len(dataset), f"fgsm_{cfg.loss_kind}", dtype=object),
    )


def mean_loss(model: ForeClassNet, ds: Dataset, loss_cfg: LossConfig, passes: int = 10, seed: int = 0) -> float:
    pred = predict_mc(model, ds.observed, ds.ids.tolist(), passes, rng=np.random.default_rng(seed),
                      welford=WelfordAccumulator(model.config.k))
    return joint_loss(one_hot(ds.labels, ds.n_classes), pred.probs, ds.future, pred.forecast_mean, loss_cfg).item()


def accuracy_on(model: ForeClassNet, ds: Dataset, passes: int | None = None, seed: int = 0) -> float:
    pred = predict_mc(model, ds.observed, ds.ids.tolist(), passes, rng=np.random.default_rng(seed),
                      welford=WelfordAccumulator(model.config.k))
    return float(np.mean(pred.labels == ds.labels))


@dataclass
class ProtocolReport:
    clean_test_acc: float
    set_a_acc: float
    retrained_clean_acc: float | None = None
    retrained_set_a_acc: float | None = None
    set_c_acc: float | None = None


class AdversarialProtocol:
    """Attack a clean model (phase 1), then retrain on clean plus attacked data (phase 2).

    Phase 1 yields set (a), the attacked test split, and an attacked copy of
    the training split. Phase 2 fits a freshly initialised model on the
    original training rows together with their attacked copies and scores it
    on the clean test split (b), on (a), and on a new attack against itself (c).
    """

    def __init__(self, dataset: Dataset, model_factory: Callable[[], ForeClassNet], attack: AttackConfig | None = None,
                 train_cfg: TrainConfig | None = None, loss_cfg: LossConfig | None = None, eval_passes: int | None = None):
        self.dataset = dataset
        self.model_factory = model_factory
        self.attack = attack or AttackConfig()
        self.train_cfg = train_cfg or TrainConfig()
        self.loss_cfg = loss_cfg or LossConfig()
        self.eval_passes = eval_passes
        self._offset = int(dataset.ids.max()) + 1 if len(dataset) else 0
        self.set_a: Dataset | None = None
        self.adv_train: Dataset | None = None
        self.set_b: Dataset | None = None
        self.set_c: Dataset | None = None
        self.retrained: TrainResult | None = None
        self.report: ProtocolReport | None = None

    def phase1(self, model: ForeClassNet) -> Dataset:
        test = self.dataset.subset(self.attack.target_split)
        self.set_a = attack_dataset(model, test, self.attack, self._offset)
        self.adv_train = attack_dataset(model, self.dataset.subset("train"), self.attack, self._offset)
        self.report = ProtocolReport(accuracy_on(model, test, self.eval_passes), accuracy_on(model, self.set_a, self.eval_passes))
        return self.set_a

    def augmented_training_set(self) -> Dataset:
        self._require_phase1()
        keep = self.dataset.take(np.flatnonzero(self.dataset.split != self.attack.target_split))
        return Dataset.concatenate([keep, self.adv_train])

    def phase2(self) -> tuple[Dataset, Dataset, Dataset]:
        self._require_phase1()
        model = self.model_factory()
        self.retrained = train(model, self.augmented_training_set(), self.train_cfg, self.loss_cfg)
        self.set_b = self.dataset.subset(self.attack.target_split)
        self.set_c = attack_dataset(model, self.set_b, self.attack, 2 * self._offset)
        self.report.retrained_clean_acc = accuracy_on(model, self.set_b, self.eval_passes)
        self.report.retrained_set_a_acc = accuracy_on(model, self.set_a, self.eval_passes)
        self.report.set_c_acc = accuracy_on(model, self.set_c, self.eval_passes)
        return self.set_b, self.set_a, self.set_c

    def _require_phase1(self) -> None:
        if self.set_a is None or self.adv_train is None:
            raise SequencingError("phase 2 needs the artefacts of phase 1; run phase1() first")


def build_adversarial_protocol(protocol: AdversarialProtocol, phase: int, model: ForeClassNet | None = None):
    """Functional entry point: ``phase=1`` needs the clean-trained ``model``."""
    if phase == 1:
        if model is None:
            raise SequencingError("phase 1 needs a trained model")
        return protocol.phase1(model)
    if phase == 2:
        return protocol.phase2()
    raise ConfigError(f"phase must be 1 or 2, got {phase}")
