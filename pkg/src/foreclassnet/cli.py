"""Command-line driver: ``foreclassnet <command> [options]``.

Commands: simulate, train, evaluate, attack, saliency, predict. Settings come
from ``--preset``, then ``--config FILE``, then repeated ``--set section.key=value``.
The environment variable ``FORECLASSNET_OUTPUT_DIR`` overrides ``run.output_dir``.
Every command writes the effective configuration to ``<output_dir>/config.ini``.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .adversarial import AdversarialProtocol, AttackConfig, accuracy_on, attack_dataset
from .config import PRESETS, RunConfig, load_config
from .data import Dataset, build_scenario, corrupt_labels, dataset_to_csv, ingest_csv, ingest_stock, smote, split
from .errors import ConfigError, ForeClassNetError
from .evaluation import metrics, metrics_summary, metrics_to_csv, model_saliency, saliency_csv
from .network import ForeClassNet, predict_mc
from .persistence import load_checkpoint, save_checkpoint, write_text
from .training import train

OUTPUT_ENV = "FORECLASSNET_OUTPUT_DIR"
log = logging.getLogger("foreclassnet")


class StageError(Exception):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage


@contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except (ForeClassNetError, OSError, ValueError, KeyError) as exc:
        raise StageError(name, exc) from exc


# ---------------------------------------------------------------- data plumbing


def _seed(cfg: RunConfig, tag: int) -> list[int]:
    return [cfg.seed, tag]


def materialize_dataset(cfg: RunConfig, path: str | None = None) -> Dataset:
    """The split-tagged dataset described by ``cfg.data`` (or read from ``path``)."""
    d = cfg.data
    path = path or d.path
    if d.format == "stock":
        if not path or not d.earnings_path:
            raise ConfigError("stock data needs data.path (prices) and data.earnings_path")
        result = ingest_stock(path, d.earnings_path, window=cfg.model.m, threshold=d.stock_threshold,
                              normalize=d.stock_normalize)
        log.info("stock ingestion: %d windows, %d skipped", len(result.dataset), result.skipped)
        ds = result.dataset
    elif path:
        ds = ingest_csv(path, d.format, **({"n_classes": cfg.model.n_classes} if d.format == "generic" else {}))
    else:
        ds = build_scenario(d.scenario, d.count, cfg.model.m, cfg.model.k, seed=cfg.seed, burn_in=d.burn_in)
    if not np.any(ds.split == "test"):
        ds = split(ds, d.split_fractions, seed=_seed(cfg, 5))
    if ds.m != cfg.model.m or ds.k != cfg.model.k:
        raise ConfigError(f"data has m={ds.m}, k={ds.k} but model.m={cfg.model.m}, model.k={cfg.model.k}")
    if ds.n_classes > cfg.model.n_classes:
        raise ConfigError(f"data has {ds.n_classes} classes but model.n_classes={cfg.model.n_classes}")
    return ds


def prepare_training_data(cfg: RunConfig, ds: Dataset) -> Dataset:
    """Apply label corruption and SMOTE to the train rows only."""
    d = cfg.data
    if d.label_corruption:
        ds = corrupt_labels(ds, d.label_corruption, seed=_seed(cfg, 6))
    if d.smote:
        tr = ds.subset("train")
        rest = ds.take(np.flatnonzero(ds.split != "train"))
        balanced = smote(tr, d.smote_k, seed=_seed(cfg, 7))
        synthetic = balanced.take(np.arange(len(tr), len(balanced)))
        start = int(ds.ids.max()) + 1
        synthetic.ids = np.arange(start, start + len(synthetic))
        ds = Dataset.concatenate([tr, synthetic, rest])
    return ds


def _subset(ds: Dataset, which: str) -> Dataset:
    return ds if which == "all" else ds.subset(which)


# ---------------------------------------------------------------- commands


def cmd_simulate(cfg: RunConfig, args, out: Path) -> None:
    with stage("simulate"):
        ds = materialize_dataset(cfg)
    with stage("write"):
        target = Path(args.out) if args.out else out / "dataset.csv"
        write_text(target, dataset_to_csv(ds))
    print(f"wrote {len(ds)} series to {target}")


def cmd_train(cfg: RunConfig, args, out: Path) -> None:
    with stage("load-data"):
        ds = prepare_training_data(cfg, materialize_dataset(cfg, args.data))
    with stage("train"):
        model = ForeClassNet(cfg.model)
        result = train(model, ds, cfg.train, cfg.loss, progress=args.verbose)
    with stage("write"):
        save_checkpoint(model, out / "model.fcn", cfg)
        write_text(out / "metric_log.csv", result.to_csv())
    last = result.log[-1] if result.log else None
    print(f"trained {len(result.log)} epochs" + (f"; final val_acc {last.val_acc:.4f}" if last else ""))


def _load(args, cfg: RunConfig) -> tuple[ForeClassNet, Dataset]:
    with stage("load-checkpoint"):
        model, _ = load_checkpoint(args.checkpoint)
    with stage("load-data"):
        ds = materialize_dataset(cfg, args.data)
    return model, ds


def _eval_metrics(model: ForeClassNet, ds: Dataset, seed: int):
    pred = predict_mc(model, ds.observed, ds.ids.tolist(), rng=np.random.default_rng(seed))
    return metrics(ds.labels, pred.labels, model.config.n_classes)


def cmd_evaluate(cfg: RunConfig, args, out: Path) -> None:
    model, ds = _load(args, cfg)
    with stage("evaluate"):
        m = _eval_metrics(model, _subset(ds, args.split), cfg.seed)
    with stage("write"):
        write_text(out / "metrics.csv", metrics_to_csv(m))
        write_text(out / "summary.txt", metrics_summary(m))
    print(metrics_summary(m), end="")


def cmd_attack(cfg: RunConfig, args, out: Path) -> None:
    model, ds = _load(args, cfg)
    with stage("attack"):
        protocol = AdversarialProtocol(ds, lambda: ForeClassNet(cfg.model), cfg.attack, cfg.train, cfg.loss)
        set_a = protocol.phase1(model)
        rows = [("clean_test_acc", protocol.report.clean_test_acc), ("set_a_acc", protocol.report.set_a_acc)]
    if args.retrain:
        with stage("adversarial-retrain"):
            _, _, set_c = protocol.phase2()
            r = protocol.report
            rows += [("retrained_clean_acc", r.retrained_clean_acc), ("retrained_set_a_acc", r.retrained_set_a_acc),
                     ("set_c_acc", r.set_c_acc)]
    with stage("write"):
        write_text(out / "adversarial_test.csv", dataset_to_csv(set_a, with_provenance=True))
        write_text(out / "adversarial_train.csv", dataset_to_csv(protocol.adv_train, with_provenance=True))
        if args.retrain:
            write_text(out / "adversarial_retrained_test.csv", dataset_to_csv(set_c, with_provenance=True))
            save_checkpoint(protocol.retrained.model, out / "model_adversarial.fcn", cfg)
        write_text(out / "attack_metrics.csv", _pairs_csv(rows))
    for name, value in rows:
        print(f"{name:>20}: {value:.4f}")


def cmd_saliency(cfg: RunConfig, args, out: Path) -> None:
    model, ds = _load(args, cfg)
    with stage("saliency"):
        sub = _subset(ds, args.split)
        sub = sub.take(np.arange(min(args.limit, len(sub))))
        sal = model_saliency(model, sub.observed, seed=cfg.seed)
    with stage("write"):
        for i in range(len(sub)):
            write_text(out / "saliency" / f"sample_{int(sub.ids[i])}.csv", saliency_csv(sub.observed[i], sal[i]))
    print(f"wrote saliency for {len(sub)} series to {out / 'saliency'}")


def cmd_predict(cfg: RunConfig, args, out: Path) -> None:
    model, ds = _load(args, cfg)
    with stage("predict"):
        sub = _subset(ds, args.split)
        pred = predict_mc(model, sub.observed, sub.ids.tolist(), rng=np.random.default_rng(cfg.seed))
    with stage("write"):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        k = model.config.k
        writer.writerow(["id", "label"] + [f"forecast_mean_{j + 1}" for j in range(k)]
                        + [f"forecast_var_{j + 1}" for j in range(k)])
        for i in range(len(sub)):
            writer.writerow([int(sub.ids[i]), int(pred.labels[i])] + [repr(float(v)) for v in pred.forecast_mean[i]]
                            + [repr(float(v)) for v in pred.forecast_var[i]])
        write_text(out / "predictions.csv", buf.getvalue())
    print(f"wrote {len(sub)} predictions to {out / 'predictions.csv'}")


def _pairs_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["metric", "value"])
    for name, value in rows:
        writer.writerow([name, repr(float(value))])
    return buf.getvalue()


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "attack": cmd_attack,
    "saliency": cmd_saliency,
    "predict": cmd_predict,
}


# ---------------------------------------------------------------- argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="foreclassnet", description="Forecast-then-classify time-series networks.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="INI file with [run], [model], [train], [loss], [attack], [data] sections")
        p.add_argument("--preset", choices=sorted(PRESETS), help="start from a shipped preset")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one setting; repeatable")
        p.add_argument("--seed", type=int, help="shorthand for --set run.seed=N")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    def needs_model(p: argparse.ArgumentParser) -> None:
        p.add_argument("--checkpoint", required=True, help="model file written by 'train'")
        p.add_argument("--data", help="dataset CSV (default: regenerate from the [data] section)")

    p = sub.add_parser("simulate", help="generate a split-tagged scenario dataset as CSV")
    common(p)
    p.add_argument("--scenario", help="ar_vs_ma, ar_vs_ar or three_class_mixture")
    p.add_argument("--count", type=int, help="number of series")
    p.add_argument("--out", help="output CSV path (default <output_dir>/dataset.csv)")

    p = sub.add_parser("train", help="fit a model; writes model.fcn and metric_log.csv")
    common(p)
    p.add_argument("--data", help="dataset CSV (default: generate from the [data] section)")

    p = sub.add_parser("evaluate", help="accuracy / F1 / confusion on a split")
    common(p)
    needs_model(p)
    p.add_argument("--split", default="test", choices=("train", "val", "test", "all"))

    p = sub.add_parser("attack", help="FGSM attack on the test split; optionally adversarial retraining")
    common(p)
    needs_model(p)
    p.add_argument("--retrain", action="store_true", help="also run the adversarial-training phase")

    p = sub.add_parser("saliency", help="per-series input-gradient saliency CSVs")
    common(p)
    needs_model(p)
    p.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    p.add_argument("--limit", type=int, default=20, help="number of series (default 20)")

    p = sub.add_parser("predict", help="per-series label and forecast mean/variance")
    common(p)
    needs_model(p)
    p.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    return parser


def resolve_config(args) -> RunConfig:
    overrides = {}
    for item in args.overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["run.seed"] = str(args.seed)
    if getattr(args, "scenario", None):
        overrides["data.scenario"] = args.scenario
    if getattr(args, "count", None) is not None:
        overrides["data.count"] = str(args.count)
    if os.environ.get(OUTPUT_ENV):
        overrides["run.output_dir"] = os.environ[OUTPUT_ENV]
    return load_config(args.config, args.preset, overrides)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.verbose:
        logging.getLogger("foreclassnet.training").setLevel(logging.INFO)
    try:
        with stage("config"):
            cfg = resolve_config(args)
            out = Path(cfg.output_dir)
            write_text(out / "config.ini", cfg.to_ini())
        COMMANDS[args.command](cfg, args, out)
    except StageError as exc:
        print(f"foreclassnet {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
