"""Classification metrics and gradient saliency."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .adversarial import frozen
from .errors import ContractError, DimensionError
from .layers import WelfordAccumulator
from .network import ForeClassNet


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    if y_true.shape != y_pred.shape:
        raise DimensionError("label vectors differ in length")
    if y_true.size == 0:
        raise ContractError("cannot score an empty prediction set")
    if min(y_true.min(), y_pred.min()) < 0 or max(y_true.max(), y_pred.max()) >= n_classes:
        raise ContractError(f"labels must lie in [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def per_class_f1(cm: np.ndarray) -> np.ndarray:
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    return np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)


@dataclass
class Metrics:
    accuracy: float
    f1_macro: float
    f1_weighted: float
    f1_binary: float | None
    per_class_f1: np.ndarray
    confusion: np.ndarray

    def as_rows(self) -> list[tuple[str, float]]:
        rows = [("accuracy", self.accuracy)]
        if self.f1_binary is not None:
            rows.append(("f1_binary", self.f1_binary))
        rows += [("f1_macro", self.f1_macro), ("f1_weighted", self.f1_weighted)]
        rows += [(f"f1_class_{c}", float(v)) for c, v in enumerate(self.per_class_f1)]
        return rows


def metrics(y_true, y_pred, n_classes: int) -> Metrics:
    """Accuracy and F1 scores; a class with no true or predicted members scores F1 = 0.

    ``f1_binary`` treats class 1 as positive and is only reported for two classes.
    """
    cm = confusion_matrix(y_true, y_pred, n_classes)
    f1 = per_class_f1(cm)
    support = cm.sum(axis=1)
    total = cm.sum()
    return Metrics(
        accuracy=float(np.trace(cm) / total),
        f1_macro=float(f1.mean()),
        f1_weighted=float(np.dot(f1, support) / total),
        f1_binary=float(f1[1]) if n_classes == 2 else None,
        per_class_f1=f1,
        confusion=cm,
    )


def metrics_to_csv(m: Metrics) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["metric", "value"])
    for name, value in m.as_rows():
        writer.writerow([name, repr(float(value))])
    return buf.getvalue()


def metrics_summary(m: Metrics) -> str:
    lines = [f"{name:>12}: {value:.4f}" for name, value in m.as_rows()]
    lines.append("confusion (rows = true, cols = predicted):")
    lines += ["  " + " ".join(f"{v:6d}" for v in row) for row in m.confusion]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- saliency


def saliency(logit_fn: Callable[[ad.Tensor], ad.Tensor], x) -> np.ndarray:
    """|d logit[predicted] / d x| for a single input vector.

    ``logit_fn`` maps a ``(m,)`` tensor to ``(L,)`` logits.
    """
    xt = ad.parameter(np.array(x, dtype=np.float64))
    logits = logit_fn(xt)
    flat = ad.reshape(logits, (-1,))
    target = flat[int(np.argmax(flat.data))]
    if not target.requires_grad:
        return np.zeros_like(xt.data)
    ad.backward(target)
    return np.abs(xt.grad)


def model_saliency(model: ForeClassNet, observed, seed: int = 0) -> np.ndarray:
    """Per-step saliency of the predicted-class logit, ``(B, m)``.

    One dropout mask per sample is drawn from a generator seeded by ``seed``
    and kept for the pass; samples are independent within the batch so the
    summed target separates into per-sample gradients.
    """
    observed = np.array(observed, dtype=np.float64, ndmin=2)
    x = ad.parameter(observed, name="observed")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 4]))
    with frozen(model.parameters()):
        out = model.forward(x, list(range(len(observed))), rng=rng, welford=WelfordAccumulator(model.config.k),
                            detach=False)
        pred = np.argmax(out.logits.data, axis=1)
        target = ad.tensor_sum(out.logits[np.arange(len(pred)), pred])
        if not target.requires_grad:
            return np.zeros_like(observed)
        ad.backward(target)
    return np.abs(x.grad)


def saliency_csv(series, sal) -> str:
    """Two columns, ``value`` and ``saliency``, one row per observed step."""
    series = np.asarray(series, dtype=np.float64).ravel()
    sal = np.asarray(sal, dtype=np.float64).ravel()
    if series.shape != sal.shape:
        raise DimensionError("series and saliency lengths differ")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["value", "saliency"])
    for v, s in zip(series, sal):
        writer.writerow([repr(float(v)), repr(float(s))])
    return buf.getvalue()
