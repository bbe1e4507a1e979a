#!/usr/bin/env python3
"""Pilot run for the desk-scale strategy comparison.

Generates the 50k/10k synthetic corpus, runs all three strategies from 5
starting subsamples, and prints the endpoint means the acceptance gate
checks (F at 999 labels for the loop strategies, 1003 for random).  Use
this to sanity-check the gap before touching generator defaults.
"""

import argparse
import time
from collections import defaultdict

from activetext.evaluation import aggregate_runs
from activetext.harness import (
    ExperimentPlan,
    directional_benchmark_spec,
    generate_synthetic_corpus,
    run_experiment,
    synthetic_category_spec,
)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=777)
    parser.add_argument("--corpus-seed", type=int, default=202)
    parser.add_argument("--out", default="/tmp/pilot_results.csv")
    parser.add_argument("--starts", type=int, default=5)
    args = parser.parse_args()

    t0 = time.time()
    spec = directional_benchmark_spec(corpus_size=60_000, seed=args.corpus_seed)
    docs, oracle = generate_synthetic_corpus(spec)
    print(f"corpus: {len(docs)} titles, {sum(oracle.values())} positive")

    plan = ExperimentPlan(
        categories=[synthetic_category_spec()],
        strategies=["uncertainty", "relevance", "random"],
        starts=args.starts,
        random_runs_per_start=2,
        batch_size=4,
        iterations=249,
        master_seed=args.seed,
        test_fraction=1 / 6,
        random_sizes=[1000],
    )
    summary = run_experiment(plan, docs, args.out)
    print(f"experiment: {time.time() - t0:.1f}s, {len(summary.rows)} rows")

    endpoint = defaultdict(list)
    for row in summary.rows:
        f = row.split(",")
        strategy, labeled = f[1], int(f[3])
        if (strategy in ("uncertainty", "relevance") and labeled == 999) or (
            strategy == "random" and labeled == 1003
        ):
            endpoint[strategy].append(float(f[11]))

    means = {}
    for strategy in ("uncertainty", "relevance", "random"):
        agg = aggregate_runs(endpoint[strategy])
        means[strategy] = agg.mean
        print(f"{strategy:12s} n={agg.n:2d} mean F={agg.mean:.3f} sd={agg.sd:.3f}")
    print(f"uncertainty - random    = {means['uncertainty'] - means['random']:+.3f}")
    print(f"uncertainty - relevance = {means['uncertainty'] - means['relevance']:+.3f}")
    print(f"relevance   - random    = {means['relevance'] - means['random']:+.3f}")
    ok = means["uncertainty"] > means["relevance"] > means["random"] and (
        means["uncertainty"] - means["random"] >= 0.15
    )
    print("ordering+gap:", "OK" if ok else "NOT MET")


if __name__ == "__main__":
    main()
