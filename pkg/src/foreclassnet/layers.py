"""Layers: Boltzmann convolutions, hand-crafted filters, concrete dropout,
dense layers and the Welford mean-variance accumulator."""

from __future__ import annotations

from dataclasses import dataclass
from math import comb
from typing import Hashable, Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, DomainError, UninitializedAccumulatorError, UnsupportedLengthError

_UNIFORM_EPS = 1e-7


def boltzmann_probabilities(energies, temperature=1.0) -> Tensor:
    """softmax(energies / temperature). Accepts arrays or tensors for both."""
    energies = ad.as_tensor(energies)
    t_val = temperature.data if isinstance(temperature, Tensor) else np.asarray(temperature, dtype=float)
    if np.any(t_val <= 0):
        raise DomainError(f"temperature must be positive, got {t_val}")
    if not np.all(np.isfinite(energies.data)):
        raise DomainError("energies must be finite")
    if isinstance(temperature, Tensor):
        return ad.softmax(ad.div(energies, temperature))
    return ad.softmax(ad.scale(energies, 1.0 / float(temperature)))


# ---------------------------------------------------------------- filters


@dataclass(frozen=True)
class HandCraftedFilterBank:
    h: int
    decreasing: np.ndarray
    increasing: np.ndarray
    peak: np.ndarray

    @property
    def filters(self) -> np.ndarray:
        return np.stack([self.decreasing, self.increasing, self.peak])


def make_handcrafted_filters(h: int) -> HandCraftedFilterBank:
    """Decreasing, increasing and binomial peak filters of length ``h``.

    Entry ``i`` multiplies the input ``i`` steps in the past. The peak filter
    is only defined for multiples of three.
    """
    if int(h) != h or h < 3 or h % 3:
        raise UnsupportedLengthError(f"hand-crafted filter length must be a positive multiple of 3, got {h}")
    h = int(h)
    i = np.arange(h)
    decreasing = np.where(i % 2 == 0, -1.0, 1.0)
    increasing = -decreasing
    n = (h - 3) // 3
    peak = np.empty(h)
    for idx in range(h):
        if idx <= n:
            peak[idx] = -3.0 / h * comb(n, idx)
        elif idx <= 2 * n + 1:
            peak[idx] = 6.0 / h * comb(n, idx - (n + 1))
        else:
            peak[idx] = -3.0 / h * comb(n, idx - 2 * n - 2)
    return HandCraftedFilterBank(h, decreasing, increasing, peak)


def init_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


# ---------------------------------------------------------------- dropout


@dataclass
class ConcreteDropoutConfig:
    temperature: float = 0.1
    weight_reg: float = 1e-6
    dropout_reg: float = 1e-5
    init_p: float = 0.1


class ConcreteDropout:
    """Relaxed-Bernoulli dropout on a layer's input with a learned rate.

    The mask is always sampled (MC dropout); ``train_mode`` in the owning
    layer only decides whether regularisers are reported.
    """

    def __init__(self, cfg: ConcreteDropoutConfig | None = None, spatial: bool = False, name: str = "dropout"):
        cfg = cfg or ConcreteDropoutConfig()
        self.cfg = cfg
        self.spatial = spatial
        self.p_logit = ad.parameter(np.log(cfg.init_p) - np.log1p(-cfg.init_p), name=f"{name}.p_logit")

    @property
    def p(self) -> float:
        return float(1.0 / (1.0 + np.exp(-self.p_logit.data)))

    def noise_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        if self.spatial:
            # one draw per (sample, channel); time axis shared
            return shape[:-1] + (1,)
        return shape

    def drop_mask(self, u: np.ndarray) -> Tensor:
        """Relaxed drop indicator for uniform draws ``u``."""
        u = np.clip(u, _UNIFORM_EPS, 1.0 - _UNIFORM_EPS)
        # log p - log(1-p) is exactly the logit parameter
        logits = ad.add(self.p_logit, np.log(u) - np.log1p(-u))
        return ad.sigmoid(ad.scale(logits, 1.0 / self.cfg.temperature))

    def __call__(self, x: Tensor, rng: np.random.Generator | None = None, noise: np.ndarray | None = None) -> Tensor:
        x = ad.as_tensor(x)
        if x.size == 0:
            raise DimensionError("concrete dropout on an empty input")
        if noise is None:
            rng = rng if rng is not None else np.random.default_rng()
            noise = rng.random(self.noise_shape(x.shape))
        keep = ad.sub(1.0, self.drop_mask(noise))
        retain = ad.sigmoid(ad.neg(self.p_logit))  # 1 - p
        return ad.div(ad.mul(x, keep), retain)

    def regularizer(self, weights: Sequence[Tensor], input_dim: int) -> Tensor:
        cfg = self.cfg
        p = ad.sigmoid(self.p_logit)
        one_minus_p = ad.sigmoid(ad.neg(self.p_logit))
        total = Tensor(0.0)
        if cfg.weight_reg:
            sq = sum((ad.tensor_sum(ad.square(w)) for w in weights), Tensor(0.0))
            total = ad.add(total, ad.scale(ad.div(sq, one_minus_p), cfg.weight_reg))
        if cfg.dropout_reg:
            neg_entropy = ad.add(ad.mul(p, ad.log(p)), ad.mul(one_minus_p, ad.log(one_minus_p)))
            total = ad.add(total, ad.scale(neg_entropy, cfg.dropout_reg * input_dim))
        return total


# ---------------------------------------------------------------- dense


class Dense:
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, name: str = "dense",
                 dropout: ConcreteDropoutConfig | None = None):
        self.name = name
        self.weight = ad.parameter(init_uniform(rng, (out_features, in_features), in_features), name=f"{name}.weight")
        self.bias = ad.parameter(np.zeros(out_features), name=f"{name}.bias")
        self.dropout = ConcreteDropout(dropout, spatial=False, name=f"{name}.dropout") if dropout is not None else None

    def parameters(self) -> list[Tensor]:
        params = [self.weight, self.bias]
        if self.dropout is not None:
            params.append(self.dropout.p_logit)
        return params

    def __call__(self, x: Tensor, rng: np.random.Generator | None = None, use_dropout: bool = True) -> Tensor:
        x = ad.as_tensor(x)
        if x.shape[-1] != self.weight.shape[1]:
            raise DimensionError(f"{self.name}: expected {self.weight.shape[1]} features, got {x.shape[-1]}")
        if self.dropout is not None and use_dropout:
            x = self.dropout(x, rng)
        return ad.add(ad.matmul(x, ad.transpose(self.weight)), self.bias)

    def regularizer(self) -> Tensor:
        if self.dropout is None:
            return Tensor(0.0)
        return self.dropout.regularizer([self.weight, self.bias], self.weight.shape[1])


# ---------------------------------------------------------------- Boltzmann convolution


class BoltzmannConv:
    """Probability-weighted sum of causal convolutions with different filter lengths.

    Mixing weights are ``softmax(energies / temperature)``. Every learnable
    bank sees its own spatially dropped copy of the input; hand-crafted banks
    are fixed and never dropped.
    """

    def __init__(self, in_channels: int, out_channels: int, lengths: Sequence[int], rng: np.random.Generator,
                 dilation: int = 1, temperature: float = 1.0, learn_temperature: bool = False,
                 dropout: ConcreteDropoutConfig | None = None, handcrafted: bool = False, name: str = "bc"):
        lengths = tuple(int(z) for z in lengths)
        if not lengths or len(set(lengths)) != len(lengths) or min(lengths) < 1:
            raise ValueError(f"filter lengths must be distinct positive integers, got {lengths}")
        self.name = name
        self.lengths = lengths
        self.dilation = int(dilation)
        self.in_channels = in_channels
        self.handcrafted = handcrafted
        self.energies = ad.parameter(np.zeros(len(lengths)), name=f"{name}.energies")
        if learn_temperature:
            self.temperature: float | Tensor = ad.parameter(float(temperature), name=f"{name}.temperature")
        else:
            self.temperature = float(temperature)
        self.banks: list[Tensor] = []
        self.dropouts: list[ConcreteDropout | None] = []
        if handcrafted:
            self.out_channels = 3
            for z in lengths:
                filt = make_handcrafted_filters(z).filters  # (3, z)
                w = np.repeat(filt[:, None, :], in_channels, axis=1)
                self.banks.append(Tensor(w, name=f"{name}.bank{z}"))
                self.dropouts.append(None)
        else:
            self.out_channels = out_channels
            for z in lengths:
                w = init_uniform(rng, (out_channels, in_channels, z), in_channels * z)
                self.banks.append(ad.parameter(w, name=f"{name}.bank{z}"))
                self.dropouts.append(ConcreteDropout(dropout, spatial=True, name=f"{name}.bank{z}.dropout"))

    def parameters(self) -> list[Tensor]:
        params = [self.energies]
        if isinstance(self.temperature, Tensor):
            params.append(self.temperature)
        for bank, drop in zip(self.banks, self.dropouts):
            if not self.handcrafted:
                params.append(bank)
            if drop is not None:
                params.append(drop.p_logit)
        return params

    def probabilities(self) -> Tensor:
        return boltzmann_probabilities(self.energies, self.temperature)

    def __call__(self, x: Tensor, rng: np.random.Generator | None = None, use_dropout: bool = True,
                 noise: Sequence[np.ndarray] | None = None) -> Tensor:
        x = ad.as_tensor(x)
        probs = self.probabilities()
        out = None
        for j, (bank, drop) in enumerate(zip(self.banks, self.dropouts)):
            inp = x
            if drop is not None and use_dropout:
                inp = drop(x, rng, noise=None if noise is None else noise[j])
            term = ad.mul(probs[j], ad.conv1d_causal(inp, bank, self.dilation))
            out = term if out is None else ad.add(out, term)
        return out

    def regularizer(self) -> Tensor:
        total = Tensor(0.0)
        for bank, drop in zip(self.banks, self.dropouts):
            if drop is not None:
                total = ad.add(total, drop.regularizer([bank], self.in_channels))
        return total


# ---------------------------------------------------------------- Welford


class WelfordAccumulator:
    """Per-sample running mean and population variance of forecasts."""

    def __init__(self, horizon: int):
        self.horizon = horizon
        self._entries: dict[Hashable, tuple[int, np.ndarray, np.ndarray]] = {}

    def __contains__(self, key) -> bool:
        return key in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def reset(self, keys: Iterable[Hashable] | None = None) -> None:
        if keys is None:
            self._entries.clear()
            return
        for key in keys:
            self._entries.pop(key, None)

    def count(self, key) -> int:
        entry = self._entries.get(key)
        return 0 if entry is None else entry[0]

    def update(self, key, forecast) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(forecast, dtype=np.float64).reshape(self.horizon)
        n, mean, m2 = self._entries.get(key, (0, np.zeros(self.horizon), np.zeros(self.horizon)))
        n += 1
        delta = x - mean
        mean = mean + delta / n
        m2 = m2 + delta * (x - mean)
        self._entries[key] = (n, mean, m2)
        return mean.copy(), m2 / n

    def update_batch(self, keys: Sequence[Hashable], forecasts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        means = np.empty((len(keys), self.horizon))
        variances = np.empty_like(means)
        for i, key in enumerate(keys):
            means[i], variances[i] = self.update(key, forecasts[i])
        return means, variances

    def stats(self, key) -> tuple[np.ndarray, np.ndarray]:
        entry = self._entries.get(key)
        if entry is None or entry[0] == 0:
            raise UninitializedAccumulatorError(f"no forecasts recorded for sample {key!r}")
        n, mean, m2 = entry
        return mean.copy(), m2 / n


def assemble_representation(observed_repr, mean, variance) -> Tensor:
    """Stack ``[phi, forecast mean]`` over ``[0, forecast variance]``.

    Works on a single sample (``phi`` of length m) giving ``2 x (m+k)`` or a
    batch (``B x m``) giving ``B x 2 x (m+k)``.
    """
    phi = ad.as_tensor(observed_repr)
    mean = np.asarray(mean, dtype=np.float64)
    variance = np.asarray(variance, dtype=np.float64)
    if mean.shape != variance.shape or mean.shape[:-1] != phi.shape[:-1]:
        raise DimensionError("representation and Welford statistics disagree in shape")
    top = ad.concat([phi, Tensor(mean)], axis=-1)
    bottom = Tensor(np.concatenate([np.zeros(phi.shape), variance], axis=-1))
    return ad.stack([top, bottom], axis=phi.ndim - 1)


def assemble_from_accumulator(observed_repr, acc: WelfordAccumulator, key) -> Tensor:
    mean, variance = acc.stats(key)
    return assemble_representation(observed_repr, mean, variance)
