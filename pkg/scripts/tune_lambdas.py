"""Pick ACT loss weights on a validation split (never the test split).

Trains PV and ACT under a few weightings on seeds 1-3 and prints the
final-epoch validation Top-1 of each. The validation videos come from
dataset seeds 1000*s+1 / 1000*s+3, disjoint from every suite split.

    python3 scripts/tune_lambdas.py [--epochs 30] [--seeds 1,2,3]
"""
import argparse

import numpy as np

from aact.data import build_grammar, make_anticipation_set
from aact.training import TrainConfig, train

CANDIDATES = {
    "pv": dict(model_kind="pv"),
    "act(1,1,1)": dict(model_kind="act", lambda_s=1.0, lambda_p=1.0, lambda_c=1.0),
    "act(0.1,1,0.3)": dict(model_kind="act", lambda_s=0.1, lambda_p=1.0, lambda_c=0.3),
    "pv_b16": dict(model_kind="pv", batch_size=16),
    "act(1,1,1)_b16": dict(model_kind="act", lambda_s=1.0, lambda_p=1.0, lambda_c=1.0, batch_size=16),
    "act(0.1,1,0.3)_b16": dict(model_kind="act", lambda_s=0.1, lambda_p=1.0, lambda_c=0.3, batch_size=16),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--seeds", default="1,2,3")
    args = ap.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]
    scores = {name: [] for name in CANDIDATES}
    for seed in seeds:
        g = build_grammar(3, 12, 16, seed, 0.3)
        tr = make_anticipation_set(g, 2000, 8, 4, 4, seed=1000 * seed + 1)
        va = make_anticipation_set(g, 500, 8, 4, 4, seed=1000 * seed + 3)
        for name, over in CANDIDATES.items():
            cfg = TrainConfig(seed=seed, epochs=args.epochs, gradcheck=False, **over)
            _, hist = train(cfg, tr, va)
            scores[name].append(hist.epochs[-1].val_top1)
            print(f"seed {seed} {name:20s} val top1 {hist.epochs[-1].val_top1:.3f}", flush=True)
    for name, vals in scores.items():
        print(f"MEAN {name:20s} {np.mean(vals):.4f}  {vals}")


if __name__ == "__main__":
    main()
