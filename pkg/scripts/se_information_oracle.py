"""Best Top-1/Top-5 achievable from the observed majority label alone, per horizon.

SE sees the future only through its recognised observed action, so this
count-based predictor P(a_f | a_o), fitted on each seed's train split and
scored on its test split, bounds the shape of SE's horizon curve.

    python3 scripts/se_information_oracle.py [--seeds 0,1,2,3,4]
"""
import argparse

import numpy as np

from aact.evaluation import SuiteConfig, dataset_for, top_k_accuracy


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", default="0,1,2,3,4")
    args = ap.parse_args()
    cfg = SuiteConfig(suite="horizon_sweep")
    A = cfg.train.A
    for k in cfg.horizons:
        top1, top5 = [], []
        for seed in (int(s) for s in args.seeds.split(",")):
            tr, te = dataset_for(cfg, seed, "train", k), dataset_for(cfg, seed, "test", k)
            counts = np.full((A, A), 1e-3)
            np.add.at(counts, (tr.a_o, tr.a_f), 1)
            probs = (counts / counts.sum(1, keepdims=True))[te.a_o]
            top1.append(top_k_accuracy(probs, te.a_f, 1))
            top5.append(top_k_accuracy(probs, te.a_f, 5))
        print(f"k={k}: top1 {np.mean(top1):.3f}  top5 {np.mean(top5):.3f}")


if __name__ == "__main__":
    main()
