"""Simulated ARMA scenarios, dataset manipulation and CSV ingestion."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, ContractError, DivergenceError, InsufficientDataError, MalformedRowError

SPLITS = ("train", "val", "test")
DIVERGENCE_BOUND = 1e12


@dataclass
class TimeSeriesSample:
    id: int
    observed: np.ndarray
    future: np.ndarray
    label: int
    split_tag: str = "train"
    provenance: str = "original"


@dataclass
class Dataset:
    """Column-oriented collection of samples sharing ``m``, ``k`` and ``n_classes``."""

    ids: np.ndarray
    observed: np.ndarray  # (N, m)
    future: np.ndarray  # (N, k)
    labels: np.ndarray  # (N,)
    split: np.ndarray  # (N,) of "train" | "val" | "test"
    n_classes: int
    provenance: np.ndarray | None = None

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.observed = _as_matrix(self.observed, len(self.ids))
        self.future = _as_matrix(self.future, len(self.ids))
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.split = np.asarray(self.split, dtype=object)
        if self.provenance is None:
            self.provenance = np.full(len(self.ids), "original", dtype=object)
        self.provenance = np.asarray(self.provenance, dtype=object)
        n = len(self.ids)
        if not (len(self.observed) == len(self.future) == len(self.labels) == len(self.split) == n):
            raise ContractError("dataset columns have different lengths")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ContractError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def m(self) -> int:
        return self.observed.shape[1]

    @property
    def k(self) -> int:
        return self.future.shape[1]

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.ids[idx], self.observed[idx], self.future[idx], self.labels[idx], self.split[idx],
                       self.n_classes, self.provenance[idx])

    def subset(self, split: str) -> "Dataset":
        return self.take(np.flatnonzero(self.split == split))

    def with_split(self, split: str) -> "Dataset":
        return replace(self, split=np.full(len(self), split, dtype=object))

    def sample(self, i: int) -> TimeSeriesSample:
        return TimeSeriesSample(int(self.ids[i]), self.observed[i].copy(), self.future[i].copy(),
                                int(self.labels[i]), str(self.split[i]), str(self.provenance[i]))

    def __iter__(self):
        return (self.sample(i) for i in range(len(self)))

    @classmethod
    def from_samples(cls, samples: Sequence[TimeSeriesSample], n_classes: int) -> "Dataset":
        return cls(
            [s.id for s in samples],
            np.array([s.observed for s in samples]),
            np.array([s.future for s in samples]),
            [s.label for s in samples],
            [s.split_tag for s in samples],
            n_classes,
            [s.provenance for s in samples],
        )

    @staticmethod
    def concatenate(parts: Sequence["Dataset"]) -> "Dataset":
        n_classes = max(p.n_classes for p in parts)
        ds = Dataset(
            np.concatenate([p.ids for p in parts]),
            np.concatenate([p.observed for p in parts]),
            np.concatenate([p.future for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.split for p in parts]),
            n_classes,
            np.concatenate([p.provenance for p in parts]),
        )
        if len(np.unique(ds.ids)) != len(ds):
            raise ContractError("sample ids collide across concatenated datasets")
        return ds

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)


def _as_matrix(values, n: int) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 2:
        return arr
    return arr.reshape(n, -1) if n else arr.reshape(0, 0)


# ---------------------------------------------------------------- simulation


@dataclass
class ProcessSpec:
    ar_coeffs: tuple[float, ...] = ()
    ma_coeffs: tuple[float, ...] = ()
    noise_std: float = 1.0
    burn_in: int = 100

    def __post_init__(self):
        self.ar_coeffs = tuple(float(c) for c in self.ar_coeffs)
        self.ma_coeffs = tuple(float(c) for c in self.ma_coeffs)
        if not self.ar_coeffs and not self.ma_coeffs:
            raise ConfigError("a process needs AR or MA coefficients")
        if self.noise_std < 0 or self.burn_in < 0:
            raise ConfigError("noise_std and burn_in must be non-negative")


AR3 = ProcessSpec(ar_coeffs=(0.6, -0.3, 0.2))
MA2 = ProcessSpec(ma_coeffs=(0.5, 0.4))
AR2 = ProcessSpec(ar_coeffs=(0.7, -0.4))


def simulate_arma(spec: ProcessSpec, length: int, count: int, seed=None,
                  innovations: np.ndarray | None = None) -> np.ndarray:
    """``count`` paths of ``X_t = sum a_i X_{t-i} + sum b_j e_{t-j} + e_t``.

    Recursion starts from zeros; the first ``burn_in`` values are dropped.
    ``innovations`` (``count x (burn_in + length)``) overrides the Gaussian
    draws.
    """
    if length < 1:
        raise ContractError("length must be >= 1")
    total = spec.burn_in + length
    if innovations is None:
        rng = np.random.default_rng(seed)
        eps = rng.standard_normal((count, total)) * spec.noise_std
    else:
        eps = np.asarray(innovations, dtype=np.float64).reshape(count, total)
    ar, ma = spec.ar_coeffs, spec.ma_coeffs
    x = np.zeros((count, total))
    for t in range(total):
        val = eps[:, t].copy()
        for i, a in enumerate(ar, start=1):
            if t - i >= 0:
                val += a * x[:, t - i]
        for j, b in enumerate(ma, start=1):
            if t - j >= 0:
                val += b * eps[:, t - j]
        if np.any(np.abs(val) > DIVERGENCE_BOUND):
            raise DivergenceError(f"process exceeded {DIVERGENCE_BOUND:g} at step {t}")
        x[:, t] = val
    return x[:, spec.burn_in :]


SCENARIOS = {
    "ar_vs_ma": (AR3, MA2),
    "ar_vs_ar": (AR3, AR2),
    "three_class_mixture": (AR3, AR2),
}
MIXTURE_WEIGHTS = (0.6, 0.4)


def scenario_seeds(seed) -> dict[str, np.random.SeedSequence]:
    children = np.random.SeedSequence(seed).spawn(5)
    return dict(zip(("labels", "class0", "class1", "mix_a", "mix_b"), children))


def build_scenario(name: str, count: int, m: int = 40, k: int = 10, seed=0,
                   burn_in: int | None = None) -> Dataset:
    """Labelled series from one of the simulation scenarios, all tagged train."""
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
    if count < 2:
        raise ContractError("count must be >= 2")
    first, second = SCENARIOS[name]
    if burn_in is not None:
        first, second = replace(first, burn_in=burn_in), replace(second, burn_in=burn_in)
    n_classes = 3 if name == "three_class_mixture" else 2
    seeds = scenario_seeds(seed)
    length = m + k
    labels = np.random.default_rng(seeds["labels"]).integers(0, n_classes, size=count)
    series = np.empty((count, length))
    paths = [simulate_arma(first, length, count, seeds["class0"]), simulate_arma(second, length, count, seeds["class1"])]
    if n_classes == 3:
        a = simulate_arma(first, length, count, seeds["mix_a"])
        b = simulate_arma(second, length, count, seeds["mix_b"])
        paths.append(MIXTURE_WEIGHTS[0] * a + MIXTURE_WEIGHTS[1] * b)
    for c in range(n_classes):
        sel = labels == c
        series[sel] = paths[c][sel]
    return Dataset(np.arange(count), series[:, :m], series[:, m:], labels, np.full(count, "train", dtype=object),
                   n_classes)


# ---------------------------------------------------------------- manipulation


def split(dataset: Dataset, fractions: Sequence[float] = (0.72, 0.08, 0.20), seed=0) -> Dataset:
    """Tag samples train/val/test by shuffled position.

    The default reproduces an 80/20 train/test split with 10% of the
    training part held out for validation.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ContractError(f"fractions must be three non-negative values summing to 1, got {fractions}")
    n = len(dataset)
    n_test = int(round(fractions[2] * n))
    n_val = int(round(fractions[1] * n))
    n_test = min(n_test, n)
    n_val = min(n_val, n - n_test)
    order = np.random.default_rng(seed).permutation(n)
    tags = np.full(n, "train", dtype=object)
    tags[order[:n_test]] = "test"
    tags[order[n_test : n_test + n_val]] = "val"
    return replace(dataset, split=tags)


def corrupt_labels(dataset: Dataset, rate: float, seed=0) -> Dataset:
    """Give exactly ``round(rate * n_train)`` training samples a different label."""
    if not 0.0 <= rate <= 1.0:
        raise ContractError("rate must lie in [0, 1]")
    train_idx = np.flatnonzero(dataset.split == "train")
    n_flip = int(round(rate * len(train_idx)))
    rng = np.random.default_rng(seed)
    chosen = rng.choice(train_idx, size=n_flip, replace=False) if n_flip else np.array([], dtype=int)
    labels = dataset.labels.copy()
    shifts = rng.integers(1, dataset.n_classes, size=n_flip)
    labels[chosen] = (labels[chosen] + shifts) % dataset.n_classes
    return replace(dataset, labels=labels)


def smote(dataset: Dataset, k_neighbors: int = 5, seed=0) -> Dataset:
    """Oversample every minority class up to the majority count.

    Features are the concatenated ``[observed, future]`` vectors. Synthetic
    samples interpolate between a random class member and one of its
    ``k_neighbors`` nearest same-class neighbours; they receive fresh ids and
    the train tag.
    """
    counts = dataset.class_counts()
    present = np.flatnonzero(counts)
    if np.any(counts[present] < 2):
        raise InsufficientDataError("every class needs at least two samples for SMOTE")
    target = counts.max()
    rng = np.random.default_rng(seed)
    features = np.concatenate([dataset.observed, dataset.future], axis=1)
    next_id = int(dataset.ids.max()) + 1 if len(dataset) else 0
    parts = [dataset]
    for c in present:
        deficit = int(target - counts[c])
        if deficit == 0:
            continue
        members = features[dataset.labels == c]
        neighbours = _nearest_neighbours(members, min(k_neighbors, len(members) - 1))
        base = rng.integers(0, len(members), size=deficit)
        pick = neighbours[base, rng.integers(0, neighbours.shape[1], size=deficit)]
        lam = rng.random(deficit)[:, None]
        synth = members[base] + lam * (members[pick] - members[base])
        parts.append(Dataset(np.arange(next_id, next_id + deficit), synth[:, : dataset.m], synth[:, dataset.m :],
                             np.full(deficit, c), np.full(deficit, "train", dtype=object), dataset.n_classes,
                             np.full(deficit, "smote", dtype=object)))
        next_id += deficit
    return Dataset.concatenate(parts)


def _nearest_neighbours(points: np.ndarray, k: int) -> np.ndarray:
    sq = np.sum(points * points, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * points @ points.T
    np.fill_diagonal(d2, np.inf)
    return np.argsort(d2, axis=1, kind="stable")[:, :k]


# ---------------------------------------------------------------- CSV


def dataset_to_csv(dataset: Dataset, with_provenance: bool = False) -> str:
    """Serialise to the generic CSV layout; floats use ``repr`` so they round-trip."""
    header = ["id", "split", "label"] + [f"x_{i + 1}" for i in range(dataset.m)]
    header += [f"xstar_{j + 1}" for j in range(dataset.k)]
    if with_provenance:
        header.append("provenance")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for i in range(len(dataset)):
        row = [int(dataset.ids[i]), dataset.split[i], int(dataset.labels[i])]
        row += [repr(float(v)) for v in dataset.observed[i]]
        row += [repr(float(v)) for v in dataset.future[i]]
        if with_provenance:
            row.append(dataset.provenance[i])
        writer.writerow(row)
    return buf.getvalue()


def ingest_csv(path, format: str = "generic", **kwargs) -> Dataset:
    """Load a dataset from CSV. ``format`` is ``ecg``, ``stock`` or ``generic``.

    Stock ingestion needs ``earnings_path``; see :func:`ingest_stock`.
    """
    if format == "generic":
        return _ingest_generic(path, **kwargs)
    if format == "ecg":
        return _ingest_ecg(path, **kwargs)
    if format == "stock":
        return ingest_stock(path, **kwargs).dataset
    raise ConfigError(f"unknown ingestion format {format!r}")


def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedRowError(1, "missing header row") from None
        rows = [(reader.line_num, row) for row in reader if row]
    return [h.strip() for h in header], rows


def _floats(line: int, values: Sequence[str]) -> list[float]:
    try:
        return [float(v) for v in values]
    except ValueError as exc:
        raise MalformedRowError(line, str(exc)) from None


def _ingest_generic(path, n_classes: int | None = None) -> Dataset:
    header, rows = _read_rows(path)
    if "label" not in header:
        raise MalformedRowError(1, "header must contain a 'label' column")
    x_cols = [i for i, h in enumerate(header) if h.startswith("x_")]
    f_cols = [i for i, h in enumerate(header) if h.startswith("xstar_")]
    if not x_cols or not f_cols:
        raise MalformedRowError(1, "header must declare x_1..x_m and xstar_1..xstar_k columns")
    li = header.index("label")
    id_i = header.index("id") if "id" in header else None
    sp_i = header.index("split") if "split" in header else None
    pv_i = header.index("provenance") if "provenance" in header else None
    ids, obs, fut, labels, splits, prov = [], [], [], [], [], []
    for n, (line, row) in enumerate(rows):
        if len(row) != len(header):
            raise MalformedRowError(line, f"expected {len(header)} fields, got {len(row)}")
        try:
            labels.append(int(float(row[li])))
            ids.append(int(row[id_i]) if id_i is not None else n)
        except ValueError as exc:
            raise MalformedRowError(line, str(exc)) from None
        obs.append(_floats(line, [row[i] for i in x_cols]))
        fut.append(_floats(line, [row[i] for i in f_cols]))
        tag = row[sp_i] if sp_i is not None else "train"
        if tag not in SPLITS:
            raise MalformedRowError(line, f"unknown split tag {tag!r}")
        splits.append(tag)
        prov.append(row[pv_i] if pv_i is not None else "original")
    n_classes = n_classes or (max(labels) + 1 if labels else 2)
    return Dataset(ids, np.array(obs).reshape(len(ids), len(x_cols)), np.array(fut).reshape(len(ids), len(f_cols)),
                   labels, splits, max(n_classes, 2), prov)


def _ingest_ecg(path, horizon: int = 5, label_offset: int = 1, n_classes: int = 5) -> Dataset:
    """Rows of ``label, v_1..v_T``; the last ``horizon`` values become the future.

    Labels in the public ECG5000 files are 1-based, hence ``label_offset``.
    """
    _, rows = _read_rows(path)
    labels, series = [], []
    width = None
    for line, row in rows:
        values = _floats(line, row)
        if width is None:
            width = len(values)
        if len(values) != width or width <= horizon + 1:
            raise MalformedRowError(line, f"expected {width} fields, got {len(values)}")
        label = int(values[0]) - label_offset
        if not 0 <= label < n_classes:
            raise MalformedRowError(line, f"label {values[0]} outside the {n_classes} classes")
        labels.append(label)
        series.append(values[1:])
    arr = np.array(series).reshape(len(labels), -1)
    n = len(labels)
    return Dataset(np.arange(n), arr[:, :-horizon], arr[:, -horizon:], labels,
                   np.full(n, "train", dtype=object), n_classes)


@dataclass
class StockIngestResult:
    dataset: Dataset
    skipped: int = 0
    tickers: list[str] = field(default_factory=list)


def label_earnings_move(prior_close: float, post_close: float, threshold: float = 0.05) -> int:
    return int(post_close >= (1.0 + threshold) * prior_close)


def ingest_stock(prices_path, earnings_path, window: int = 40, threshold: float = 0.05, normalize: bool = True,
                 symbol_col: str = "symbol", date_col: str = "date", price_col: str = "close_adjusted") -> StockIngestResult:
    """Windows of ``window`` adjusted closes ending just before the first close
    strictly after each earnings date; class 1 iff that close is at least
    ``(1 + threshold)`` times the preceding close.

    Dates are compared as ISO strings. With ``normalize`` every window
    (observed and future) is divided by its first observed price.
    """
    header, rows = _read_rows(prices_path)
    try:
        si, di, pi = header.index(symbol_col), header.index(date_col), header.index(price_col)
    except ValueError:
        raise MalformedRowError(1, f"price file needs columns {symbol_col}, {date_col}, {price_col}") from None
    prices: dict[str, list[tuple[str, float]]] = {}
    for line, row in rows:
        if len(row) != len(header):
            raise MalformedRowError(line, f"expected {len(header)} fields, got {len(row)}")
        prices.setdefault(row[si], []).append((row[di], _floats(line, [row[pi]])[0]))
    eh, erows = _read_rows(earnings_path)
    try:
        esi, edi = eh.index(symbol_col), eh.index(date_col)
    except ValueError:
        raise MalformedRowError(1, f"earnings file needs columns {symbol_col}, {date_col}") from None
    obs, fut, labels = [], [], []
    skipped = 0
    for symbol in prices:
        prices[symbol].sort()
    for line, row in erows:
        if len(row) != len(eh):
            raise MalformedRowError(line, f"expected {len(eh)} fields, got {len(row)}")
        history = prices.get(row[esi])
        if not history:
            skipped += 1
            continue
        dates = [d for d, _ in history]
        post = int(np.searchsorted(np.array(dates), row[edi], side="right"))
        if post >= len(history) or post < window:
            skipped += 1
            continue
        closes = np.array([p for _, p in history[post - window : post + 1]])
        label = label_earnings_move(closes[-2], closes[-1], threshold)
        if normalize:
            closes = closes / closes[0]
        obs.append(closes[:-1])
        fut.append(closes[-1:])
        labels.append(label)
    n = len(labels)
    ds = Dataset(np.arange(n), np.array(obs).reshape(n, window), np.array(fut).reshape(n, 1), labels,
                 np.full(n, "train", dtype=object), 2)
    return StockIngestResult(ds, skipped, sorted(prices))


def load_dataset(path) -> Dataset:
    return _ingest_generic(Path(path))
