#!/usr/bin/env python3
"""End-to-end desk-scale walkthrough: generate, train, evaluate.

Produces a dataset of synthetic affect videos, trains the masked
recurrent aggregator with the desk preset, and evaluates the best
checkpoint on the held-out split. Everything lands under --workdir.
"""

import argparse
import sys
from pathlib import Path

from affectseq.cli import main as affectseq


def run(argv):
    print("+ affectseq " + " ".join(argv))
    code = affectseq(argv)
    if code != 0:
        sys.exit(code)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="runs/desk_pipeline")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--n", type=int, default=160)
    parser.add_argument("--epochs", type=int, default=150)
    args = parser.parse_args()

    work = Path(args.workdir)
    data_dir = work / "data"
    train_dir = work / "train"
    eval_dir = work / "eval"

    run(["gen", "--preset", "desk", "--n", str(args.n), "--seed", str(args.seed),
         "--out", str(data_dir)])
    run(["train", "--preset", "desk", "--dataset", str(data_dir / "videos.jsonl"),
         "--epochs", str(args.epochs), "--seed", str(args.seed), "--out", str(train_dir)])
    run(["eval", "--preset", "desk", "--dataset", str(data_dir / "videos.jsonl"),
         "--checkpoint", str(train_dir / "checkpoint.json"), "--split", "val",
         "--out", str(eval_dir)])
    print(f"artifacts in {work}")


if __name__ == "__main__":
    main()
