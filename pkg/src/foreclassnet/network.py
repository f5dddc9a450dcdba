"""ForeClassNet: causal Boltzmann-convolution trunk, forecast head, Welford
layer and classifier head, plus the joint forecasting/classification loss."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, DimensionError, ShapeMismatchError
from .layers import (
    BoltzmannConv,
    ConcreteDropoutConfig,
    Dense,
    WelfordAccumulator,
    assemble_representation,
)

PROB_FLOOR = 1e-12


@dataclass
class ForeClassNetConfig:
    m: int = 40
    k: int = 10
    n_classes: int = 2
    z: tuple[int, ...] = (3, 6, 12, 18, 24, 30, 36)
    handcrafted_h: tuple[int, ...] = (3,)
    channels: tuple[int, ...] = (32, 32, 32)
    dilations: tuple[int, ...] = (1, 2, 4)
    forecast_widths: tuple[int, ...] = (64,)
    classifier_widths: tuple[int, ...] = (64,)
    temperature: float = 1.0
    learn_temperature: bool = False
    leaky_slope: float = 0.01
    mc_passes_inference: int = 30
    isolate_classifier_gradients: bool = False
    concrete_temperature: float = 0.1
    weight_reg: float = 1e-6
    dropout_reg: float = 1e-5
    init_dropout_p: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("z", "handcrafted_h", "channels", "dilations", "forecast_widths", "classifier_widths"):
            value = getattr(self, name)
            if isinstance(value, int):
                value = (value,)
            setattr(self, name, tuple(int(v) for v in value))
        self.validate()

    def validate(self) -> None:
        if self.m < 1 or self.k < 1 or self.n_classes < 2:
            raise ConfigError("m, k must be >= 1 and n_classes >= 2")
        if len(self.channels) != len(self.dilations) or not self.channels:
            raise ConfigError("channels and dilations must be non-empty and equally long")
        if self.dilations[0] < 1 or any(b != 2 * a for a, b in zip(self.dilations, self.dilations[1:])):
            raise ConfigError(f"dilations must double at every layer, got {self.dilations}")
        widths = self.channels + self.forecast_widths + self.classifier_widths
        if any(w < 1 for w in widths):
            raise ConfigError("all layer widths must be positive")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.mc_passes_inference < 1:
            raise ConfigError("mc_passes_inference must be >= 1")

    @property
    def dropout(self) -> ConcreteDropoutConfig:
        return ConcreteDropoutConfig(self.concrete_temperature, self.weight_reg, self.dropout_reg, self.init_dropout_p)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossConfig:
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("loss weights must be non-negative")


@dataclass
class ForwardResult:
    forecast: Tensor  # (B, k)
    probs: Tensor  # (B, L)
    logits: Tensor  # (B, L)
    representation: Tensor  # (B, m)
    welford_mean: np.ndarray
    welford_var: np.ndarray
    regularizer: Tensor
    trunk: list[Tensor] = field(default_factory=list)


class ForeClassNet:
    """Forecast-then-classify network for univariate series.

    Layout: a hand-crafted BC layer and a learnable BC layer read the input in
    parallel and are concatenated; further BC layers follow with doubling
    dilation. A time-distributed dense layer projects every time step of the
    trunk to one value (the observed-series representation), which feeds the
    forecast head. The forecasts update a per-sample Welford accumulator and
    the classifier sees ``[representation, mean; 0, variance]`` flattened.
    """

    def __init__(self, config: ForeClassNetConfig):
        self.config = config
        cfg = config
        init_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
        self.rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
        drop = cfg.dropout
        self.handcrafted = BoltzmannConv(1, 3, cfg.handcrafted_h, init_rng, dilation=cfg.dilations[0],
                                         temperature=cfg.temperature, learn_temperature=cfg.learn_temperature,
                                         handcrafted=True, name="handcrafted")
        self.trunk_layers: list[BoltzmannConv] = [
            BoltzmannConv(1, cfg.channels[0], cfg.z, init_rng, dilation=cfg.dilations[0],
                          temperature=cfg.temperature, learn_temperature=cfg.learn_temperature,
                          dropout=drop, name="bc0")
        ]
        in_ch = cfg.channels[0] + self.handcrafted.out_channels
        for i, (ch, dil) in enumerate(zip(cfg.channels[1:], cfg.dilations[1:]), start=1):
            self.trunk_layers.append(BoltzmannConv(in_ch, ch, cfg.z, init_rng, dilation=dil,
                                                   temperature=cfg.temperature,
                                                   learn_temperature=cfg.learn_temperature,
                                                   dropout=drop, name=f"bc{i}"))
            in_ch = ch
        self.projector = Dense(in_ch, 1, init_rng, name="projector", dropout=drop)
        self.forecast_head = self._stack(cfg.m, cfg.forecast_widths, cfg.k, init_rng, "forecast", drop)
        self.classifier_head = self._stack(2 * (cfg.m + cfg.k), cfg.classifier_widths, cfg.n_classes,
                                           init_rng, "classifier", drop)
        self.welford = WelfordAccumulator(cfg.k)

    @staticmethod
    def _stack(n_in, widths, n_out, rng, name, drop) -> list[Dense]:
        layers = []
        sizes = [n_in, *widths, n_out]
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            layers.append(Dense(a, b, rng, name=f"{name}{i}", dropout=drop))
        return layers

    # ------------------------------------------------------------ parameters

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        seen = []
        for layer in self._all_layers():
            for p in layer.parameters():
                seen.append((p.name, p))
        return seen

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def _all_layers(self):
        return [self.handcrafted, *self.trunk_layers, self.projector, *self.forecast_head, *self.classifier_head]

    def head_parameters(self, head: str) -> list[Tensor]:
        layers = {"forecast": [self.projector, *self.forecast_head], "classifier": self.classifier_head}[head]
        return [p for layer in layers for p in layer.parameters()]

    # ------------------------------------------------------------ forward

    def trunk(self, x: Tensor, rng: np.random.Generator, use_dropout: bool = True) -> list[Tensor]:
        """Activations of every trunk stage, each ``(B, channels, m)``."""
        slope = self.config.leaky_slope
        x3 = ad.reshape(x, (x.shape[0], 1, x.shape[1]))
        hand = ad.leaky_relu(self.handcrafted(x3, rng, use_dropout), slope)
        learned = ad.leaky_relu(self.trunk_layers[0](x3, rng, use_dropout), slope)
        h = ad.concat([hand, learned], axis=1)
        acts = [h]
        for layer in self.trunk_layers[1:]:
            h = ad.leaky_relu(layer(h, rng, use_dropout), slope)
            acts.append(h)
        return acts

    def forward(self, observed, ids: Sequence | None = None, train_mode: bool = False,
                rng: np.random.Generator | None = None, welford: WelfordAccumulator | None = None,
                detach: bool | None = None, use_dropout: bool = True) -> ForwardResult:
        """One stochastic pass. ``observed`` is a ``(B, m)`` array or tensor.

        ``rng`` supplies dropout noise (the model's own stream by default);
        pass a freshly seeded generator to replay identical masks.
        """
        cfg = self.config
        x = ad.as_tensor(observed)
        if x.ndim == 1:
            x = ad.reshape(x, (1, x.shape[0]))
        if x.ndim != 2 or x.shape[1] != cfg.m:
            raise DimensionError(f"expected observed series of length {cfg.m}, got shape {x.shape}")
        batch = x.shape[0]
        if ids is None:
            ids = list(range(batch))
        if len(ids) != batch:
            raise DimensionError("one sample id per series is required")
        rng = self.rng if rng is None else rng
        welford = self.welford if welford is None else welford
        detach = cfg.isolate_classifier_gradients if detach is None else detach

        acts = self.trunk(x, rng, use_dropout)
        h = acts[-1]
        per_step = ad.transpose(h, (0, 2, 1))  # (B, m, C)
        phi = ad.reshape(self.projector(per_step, rng, use_dropout), (batch, cfg.m))
        z = phi
        for layer in self.forecast_head[:-1]:
            z = ad.relu(layer(z, rng, use_dropout))
        forecast = self.forecast_head[-1](z, rng, use_dropout)

        mean, var = welford.update_batch(list(ids), forecast.data)
        rep_in = phi.detach() if detach else phi
        rep = assemble_representation(rep_in, mean, var)
        c = ad.reshape(rep, (batch, 2 * (cfg.m + cfg.k)))
        for layer in self.classifier_head[:-1]:
            c = ad.relu(layer(c, rng, use_dropout))
        logits = self.classifier_head[-1](c, rng, use_dropout)
        probs = ad.softmax(logits)

        reg = self.regularizer() if train_mode else Tensor(0.0)
        return ForwardResult(forecast, probs, logits, phi, mean, var, reg, acts)

    __call__ = forward

    def regularizer(self) -> Tensor:
        total = Tensor(0.0)
        for layer in self._all_layers():
            total = ad.add(total, layer.regularizer())
        return total

    # ------------------------------------------------------------ state

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if missing:
            raise DimensionError(f"missing parameters: {sorted(missing)}")
        for name, value in state.items():
            if name not in params:
                raise DimensionError(f"unexpected parameter {name}")
            if params[name].shape != np.shape(value):
                raise ShapeMismatchError(f"parameter {name}: expected shape {params[name].shape}, got {np.shape(value)}")
            params[name].data = np.array(value, dtype=np.float64)


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def joint_loss(y_true, class_probs, x_star_true, forecast, loss_cfg: LossConfig | None = None,
               regularizers: Tensor | float | None = None, reduction: str = "mean") -> Tensor:
    """beta * MSE(future, forecast) + alpha * cross-entropy + regularisers.

    ``y_true`` is one-hot ``(B, L)``; per-sample losses are averaged (or
    summed with ``reduction="sum"``) and the regularisers added once.
    """
    loss_cfg = loss_cfg or LossConfig()
    probs = ad.as_tensor(class_probs)
    fc = ad.as_tensor(forecast)
    y = np.asarray(y_true, dtype=np.float64)
    xs = np.asarray(x_star_true, dtype=np.float64)
    if probs.ndim == 1:
        probs, y = ad.reshape(probs, (1, -1)), y.reshape(1, -1)
    if fc.ndim == 1:
        fc, xs = ad.reshape(fc, (1, -1)), xs.reshape(1, -1)
    if y.shape != probs.shape or xs.shape != fc.shape:
        raise DimensionError("targets and predictions disagree in shape")
    batch = probs.shape[0]
    per_sample = Tensor(np.zeros(batch))
    if loss_cfg.beta:
        mse = ad.mean(ad.square(ad.sub(xs, fc)), axis=-1)
        per_sample = ad.add(per_sample, ad.scale(mse, loss_cfg.beta))
    if loss_cfg.alpha:
        ce = ad.neg(ad.tensor_sum(ad.mul(y, ad.log(ad.clip(probs, PROB_FLOOR, None))), axis=-1))
        per_sample = ad.add(per_sample, ad.scale(ce, loss_cfg.alpha))
    if reduction == "mean":
        total = ad.mean(per_sample)
    elif reduction == "sum":
        total = ad.tensor_sum(per_sample)
    else:
        raise ContractError(f"unknown reduction {reduction!r}")
    if regularizers is not None:
        total = ad.add(total, regularizers)
    return total


@dataclass
class MCPrediction:
    probs: np.ndarray  # (B, L) averaged over passes
    forecast_mean: np.ndarray  # (B, k)
    forecast_var: np.ndarray  # (B, k)
    labels: np.ndarray  # (B,)
    forecasts: np.ndarray | None = None  # (passes, B, k) when recorded


def predict_mc(model: ForeClassNet, observed, ids: Sequence, passes: int | None = None,
               rng: np.random.Generator | None = None, batch_size: int = 256,
               welford: WelfordAccumulator | None = None, record: bool = False) -> MCPrediction:
    """Average class probabilities over ``passes`` dropout samples.

    The accumulator entries for ``ids`` are reset first; argmax ties go to
    the lowest class index.
    """
    passes = model.config.mc_passes_inference if passes is None else passes
    if passes < 1:
        raise ContractError("passes must be >= 1")
    observed = np.asarray(observed, dtype=np.float64)
    if observed.ndim == 1:
        observed = observed[None]
    ids = list(ids)
    welford = model.welford if welford is None else welford
    welford.reset(ids)
    n = observed.shape[0]
    probs = np.zeros((n, model.config.n_classes))
    mean = np.zeros((n, model.config.k))
    var = np.zeros_like(mean)
    trace = np.zeros((passes, n, model.config.k)) if record else None
    for start in range(0, n, batch_size):
        sl = slice(start, min(n, start + batch_size))
        chunk_ids = ids[sl]
        acc = np.zeros((sl.stop - sl.start, model.config.n_classes))
        for p in range(passes):
            out = model.forward(observed[sl], chunk_ids, train_mode=False, rng=rng, welford=welford)
            acc += out.probs.data
            if record:
                trace[p, sl] = out.forecast.data
        probs[sl] = acc / passes
        mean[sl] = out.welford_mean
        var[sl] = out.welford_var
    return MCPrediction(probs, mean, var, np.argmax(probs, axis=1), trace)
