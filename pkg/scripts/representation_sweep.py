#!/usr/bin/env python3
"""Representation-subset sweep: which affect channels carry the signal?

Trains the aggregator on column subsets of the 26-dim affect features
(valence-arousal, expressions, action units, and their combinations)
and prints held-out mean correlation per subset, averaged over seeds.
"""

import argparse

import numpy as np

from affectseq import aggregator as agg
from affectseq import training
from affectseq.data import VideoRecipe, gen_video_dataset, select_columns, split

SUBSETS = ("va", "expr", "au", "va+expr", "va+au", "expr+au", "all")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--n", type=int, default=96)
    parser.add_argument("--t", type=int, default=24)
    parser.add_argument("--epochs", type=int, default=80)
    args = parser.parse_args()

    recipe = VideoRecipe(
        l_min=max(2, args.t // 4), l_max=args.t,
        au_noise=0.35, mix_noise=0.7, feature_noise=0.12, temperature=0.3,
    )
    results = {s: [] for s in SUBSETS}
    for seed in range(args.seeds):
        samples, _ = gen_video_dataset(3000 + seed, args.n, recipe, args.t)
        parts = split(samples, (0.75, 0.25, 0.0), seed=seed)
        for subset in SUBSETS:
            train_s = select_columns(parts["train"], subset)
            val_s = select_columns(parts["val"], subset)
            config = agg.AggregatorConfig(
                d_in=train_s[0].frames.shape[1], t=args.t, d_hidden=20, d_ff=8
            )
            outcome = training.train_aggregator(
                train_s, val_s, config, epochs=args.epochs, batch_size=16,
                lr=1e-2, loss_kind="pearson", seed=seed,
            )
            results[subset].append(outcome.best_metric)

    print(f"{'subset':<10s} {'mean rho':>9s}  per-seed")
    for subset in SUBSETS:
        vals = results[subset]
        per_seed = " ".join(f"{v:.3f}" for v in vals)
        print(f"{subset:<10s} {np.mean(vals):9.4f}  {per_seed}")


if __name__ == "__main__":
    main()
