#!/usr/bin/env python3
"""End-to-end demo on a synthetic corpus via the CLI surface.

Generates a corpus, runs a small three-strategy experiment, aggregates
the learning curves, and leaves everything under --workdir.  A compact
version of the full protocol for kicking the tires.
"""

import argparse
import json
import sys
from pathlib import Path

from activetext.cli import main as cli


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="/tmp/activetext-demo")
    parser.add_argument("--size", type=int, default=20_000)
    parser.add_argument("--prior", type=float, default=0.01)
    parser.add_argument("--iterations", type=int, default=50)
    parser.add_argument("--starts", type=int, default=3)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    work = Path(args.workdir)
    work.mkdir(parents=True, exist_ok=True)
    corpus = work / "corpus.tsv"
    plan_path = work / "plan.json"
    results = work / "results.csv"
    curve = work / "curve.csv"

    steps = [
        ["synth", "--out", str(corpus), "--size", str(args.size),
         "--prior", str(args.prior), "--seed", str(args.seed)],
        ["ingest", "--corpus", str(corpus), "--categories", str(corpus.with_suffix(".categories.jsonl"))],
    ]
    plan = {
        "categories": [{"name": "topic", "substrings": ["topic"]}],
        "strategies": ["uncertainty", "relevance", "random"],
        "starts": args.starts,
        "random_runs_per_start": 1,
        "batch_size": 4,
        "iterations": args.iterations,
        "master_seed": args.seed,
        "test_fraction": 0.2,
        "random_sizes": [40, 200, 1000],
    }
    plan_path.write_text(json.dumps(plan, indent=2), encoding="utf-8")
    steps += [
        ["run", "--plan", str(plan_path), "--corpus", str(corpus), "--out", str(results)],
        ["curve", "--results", str(results), "--out", str(curve), "--plot", str(work / "curve.png")],
    ]
    for step in steps:
        print(f"$ activetext {' '.join(step)}")
        rc = cli(step)
        if rc != 0:
            print(f"step failed with exit code {rc}", file=sys.stderr)
            return rc
    print(f"\nall artifacts under {work}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
