"""Train on one simulation scenario and report clean test metrics.

    python3 scripts/run_scenario.py --scenario ar_vs_ar --corruption 0.2
"""

import argparse
import time
from pathlib import Path

import numpy as np

from foreclassnet.cli import materialize_dataset, prepare_training_data
from foreclassnet.config import load_config
from foreclassnet.evaluation import metrics, metrics_summary
from foreclassnet.network import ForeClassNet, predict_mc
from foreclassnet.persistence import save_checkpoint, write_text
from foreclassnet.training import metric_log_csv, train


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--scenario", default="ar_vs_ma", choices=["ar_vs_ma", "ar_vs_ar", "three_class_mixture"])
    parser.add_argument("--count", type=int, default=2000)
    parser.add_argument("--epochs", type=int, default=100)
    parser.add_argument("--corruption", type=float, default=0.0, help="fraction of train labels to flip")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", help="directory for model.fcn and metric_log.csv")
    args = parser.parse_args()

    overrides = {"data.scenario": args.scenario, "data.count": str(args.count), "train.epochs": str(args.epochs),
                 "data.label_corruption": str(args.corruption), "run.seed": str(args.seed)}
    if args.scenario == "three_class_mixture":
        overrides["model.n_classes"] = "3"
    cfg = load_config(None, "sim-default", overrides)
    ds = prepare_training_data(cfg, materialize_dataset(cfg))
    model = ForeClassNet(cfg.model)

    def progress(rec):
        print(f"epoch {rec.epoch:3d}  loss {rec.train_loss:.4f}  train {rec.train_acc:.3f}  val {rec.val_acc:.3f}",
              flush=True)

    start = time.time()
    result = train(model, ds, cfg.train, cfg.loss, progress=progress)
    test = ds.subset("test")
    pred = predict_mc(model, test.observed, test.ids.tolist(), rng=np.random.default_rng(cfg.seed))
    print(metrics_summary(metrics(test.labels, pred.labels, cfg.model.n_classes)), end="")
    print(f"forecast MSE on test: {float(np.mean((pred.forecast_mean - test.future) ** 2)):.4f}")
    print(f"trained in {time.time() - start:.0f} s")
    if args.out:
        out = Path(args.out)
        save_checkpoint(model, out / "model.fcn", cfg)
        write_text(out / "metric_log.csv", metric_log_csv(result.log))


if __name__ == "__main__":
    main()
