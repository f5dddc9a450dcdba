"""FGSM attack on a clean-trained model, then adversarial retraining.

Runs the two-phase protocol for the cross-entropy and the forecast-MSE attack
and prints clean, set (a) and set (c) accuracies for each.

    python3 scripts/adversarial_protocol.py --scenario ar_vs_ar --epochs 100
"""

import argparse
import dataclasses

from foreclassnet.adversarial import AdversarialProtocol
from foreclassnet.cli import materialize_dataset
from foreclassnet.config import load_config
from foreclassnet.network import ForeClassNet
from foreclassnet.training import train


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--scenario", default="ar_vs_ar", choices=["ar_vs_ma", "ar_vs_ar"])
    parser.add_argument("--count", type=int, default=2000)
    parser.add_argument("--epochs", type=int, default=100)
    parser.add_argument("--epsilon", type=float, default=0.1)
    parser.add_argument("--kinds", default="cce,mse")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    cfg = load_config(None, "sim-default", {
        "data.scenario": args.scenario, "data.count": str(args.count), "train.epochs": str(args.epochs),
        "attack.epsilon": str(args.epsilon), "run.seed": str(args.seed)})
    ds = materialize_dataset(cfg)
    model = ForeClassNet(cfg.model)
    train(model, ds, cfg.train, cfg.loss)

    for kind in args.kinds.split(","):
        attack = dataclasses.replace(cfg.attack, loss_kind=kind)
        protocol = AdversarialProtocol(ds, lambda: ForeClassNet(cfg.model), attack, cfg.train, cfg.loss)
        protocol.phase1(model)
        r = protocol.report
        print(f"[{kind}] clean model: test {r.clean_test_acc:.3f}, attacked test (a) {r.set_a_acc:.3f}", flush=True)
        protocol.phase2()
        print(f"[{kind}] retrained: clean (b) {r.retrained_clean_acc:.3f}, (a) {r.retrained_set_a_acc:.3f}, "
              f"fresh attack (c) {r.set_c_acc:.3f}", flush=True)


if __name__ == "__main__":
    main()
