"""Command-line entry point for batch use.

Subcommands: ingest (validate a corpus and count categories), synth
(generate a synthetic corpus), run (execute an experiment plan), curve
(aggregate results into learning-curve tables), serve (labeling service).

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from collections import defaultdict
from pathlib import Path

from .corpus import CorpusError, load_category_specs, load_corpus, write_corpus_tsv
from .evaluation import aggregate_runs
from .harness import (
    ExperimentPlan,
    HarnessError,
    SyntheticCorpusSpec,
    generate_synthetic_corpus,
    run_experiment,
    synthetic_category_spec,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3

CURVE_CSV_HEADER = "category,strategy,labeled_count,n_runs,mean_f1,sd_f1,single_run"


class _UsageError(SystemExit):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> _Parser:
    parser = _Parser(prog="activetext", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_ingest = sub.add_parser("ingest", help="validate a corpus and count categories")
    p_ingest.add_argument("--corpus", required=True, help="corpus TSV path")
    p_ingest.add_argument("--categories", required=True, help="category spec JSONL path")

    p_synth = sub.add_parser("synth", help="generate a synthetic labeled corpus")
    p_synth.add_argument("--out", required=True, help="output corpus TSV path")
    p_synth.add_argument("--size", type=int, default=60_000)
    p_synth.add_argument("--prior", type=float, default=0.002)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--topic-vocab", type=int, default=150)
    p_synth.add_argument("--background-vocab", type=int, default=3000)
    p_synth.add_argument("--title-len", type=float, default=8.0)
    p_synth.add_argument("--categories-out", default=None, help="also write the matching category spec JSONL")

    p_run = sub.add_parser("run", help="run an experiment plan")
    p_run.add_argument("--plan", required=True, help="plan JSON path")
    p_run.add_argument("--corpus", required=True, help="corpus TSV path")
    p_run.add_argument("--out", required=True, help="results CSV path")
    p_run.add_argument("--strategy", choices=["uncertainty", "relevance", "random"], default=None,
                       help="restrict to one strategy")
    p_run.add_argument("--batch-size", type=int, default=None)
    p_run.add_argument("--iterations", type=int, default=None)
    p_run.add_argument("--starts", type=int, default=None)
    p_run.add_argument("--seed", type=int, default=None, help="master seed override")
    p_run.add_argument("--fraction", type=float, default=None, help="feature selection fraction")
    p_run.add_argument("--jobs", type=int, default=1)

    p_curve = sub.add_parser("curve", help="aggregate results into learning curves")
    p_curve.add_argument("--results", required=True, help="results CSV path")
    p_curve.add_argument("--out", required=True, help="long-format curve CSV path")
    p_curve.add_argument("--plot", default=None, help="optional PNG path")

    p_serve = sub.add_parser("serve", help="run the labeling service")
    p_serve.add_argument("--corpus", required=True, help="corpus TSV path")
    p_serve.add_argument("--port", type=int, default=8000)
    p_serve.add_argument("--token", default=None)
    p_serve.add_argument("--store", default="./sessions")
    p_serve.add_argument("--ui", default=None, help="static UI directory to mount at /ui")

    return parser


def cmd_ingest(args) -> int:
    with open(args.corpus, "rb") as fh:
        result = load_corpus(fh)
    for line_no, message in result.errors:
        print(f"warning: line {line_no}: {message}", file=sys.stderr)
    if not result.documents:
        print("error: no valid documents", file=sys.stderr)
        return EXIT_DATA
    specs = load_category_specs(Path(args.categories).read_text(encoding="utf-8"))
    n = len(result.documents)
    print(f"{n} documents loaded, {result.n_skipped} lines skipped")
    print("category\tcount\tfrequency")
    from .corpus import assign_labels

    for spec in specs:
        count = sum(assign_labels(result.documents, spec).values())
        print(f"{spec.name}\t{count}\t{count / n:.4f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = SyntheticCorpusSpec(
        corpus_size=args.size,
        class_prior=args.prior,
        topic_vocab=args.topic_vocab,
        background_vocab=args.background_vocab,
        mean_title_len=args.title_len,
        seed=args.seed,
    )
    docs, oracle = generate_synthetic_corpus(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(write_corpus_tsv(docs))
    cat_path = Path(args.categories_out) if args.categories_out else out.with_suffix(".categories.jsonl")
    cat = synthetic_category_spec()
    cat_path.write_text(
        json.dumps({"name": cat.name, "substrings": list(cat.substrings)}) + "\n",
        encoding="utf-8",
    )
    print(f"wrote {len(docs)} titles ({sum(oracle.values())} positive) to {out}")
    print(f"wrote category spec to {cat_path}")
    return EXIT_OK


def cmd_run(args) -> int:
    plan = ExperimentPlan.load(args.plan)
    if args.strategy is not None:
        plan.strategies = [args.strategy]
    if args.batch_size is not None:
        plan.batch_size = args.batch_size
    if args.iterations is not None:
        plan.iterations = args.iterations
    if args.starts is not None:
        plan.starts = args.starts
    if args.seed is not None:
        plan.master_seed = args.seed
    if args.fraction is not None:
        plan.selection_fraction = args.fraction
    with open(args.corpus, "rb") as fh:
        result = load_corpus(fh)
    if not result.documents:
        print("error: no valid documents", file=sys.stderr)
        return EXIT_DATA
    summary = run_experiment(plan, result.documents, args.out, jobs=args.jobs)
    print(
        f"wrote {len(summary.rows)} rows to {summary.csv_path} "
        f"({len(summary.skipped)} triples resumed, {summary.test_label_reads} guarded label reads)"
    )
    return EXIT_OK


def _read_results(path: str):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise CorpusError("results file is empty")
    rows = []
    for line in lines[1:]:
        f = line.split(",")
        rows.append(
            {
                "category": f[0],
                "strategy": f[1],
                "run": int(f[2]),
                "labeled_count": int(f[3]),
                "f1": float(f[11]),
            }
        )
    return rows


def cmd_curve(args) -> int:
    rows = _read_results(args.results)
    groups: dict[tuple, list[float]] = defaultdict(list)
    for row in rows:
        groups[(row["category"], row["strategy"], row["labeled_count"])].append(row["f1"])
    out_lines = [CURVE_CSV_HEADER]
    for key in sorted(groups):
        agg = aggregate_runs(groups[key])
        out_lines.append(
            f"{key[0]},{key[1]},{key[2]},{agg.n},{agg.mean!r},{agg.sd!r},{int(agg.single_run)}"
        )
    Path(args.out).write_text("\n".join(out_lines) + "\n", encoding="utf-8")
    print(f"wrote {len(out_lines) - 1} curve points to {args.out}")
    if args.plot:
        _plot_curves(groups, args.plot)
        print(f"wrote plot to {args.plot}")
    return EXIT_OK


def _plot_curves(groups, path: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    categories = sorted({k[0] for k in groups})
    fig, axes = plt.subplots(
        len(categories), 1, figsize=(7, 4 * len(categories)), squeeze=False
    )
    styles = {"uncertainty": "-", "relevance": ":", "random": "--"}
    for ax, category in zip(axes[:, 0], categories):
        for strategy in sorted({k[1] for k in groups if k[0] == category}):
            points = sorted(
                (k[2], aggregate_runs(groups[k]).mean)
                for k in groups
                if k[0] == category and k[1] == strategy
            )
            ax.plot(
                [p[0] for p in points],
                [p[1] for p in points],
                styles.get(strategy, "-"),
                label=strategy,
            )
        ax.set_xscale("log")
        ax.set_xlabel("labeled examples")
        ax.set_ylabel("mean F (beta=1)")
        ax.set_title(category)
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    with open(args.corpus, "rb") as fh:
        result = load_corpus(fh)
    if not result.documents:
        print("error: no valid documents", file=sys.stderr)
        return EXIT_DATA
    ui_dir = args.ui
    if ui_dir is None:
        bundled = Path(__file__).resolve().parent.parent.parent.parent / "frontend" / "dist"
        ui_dir = str(bundled) if bundled.is_dir() else None
    app = create_app(
        {"default": result.documents},
        store_dir=args.store,
        token=args.token,
        ui_dir=ui_dir,
    )
    uvicorn.run(app, host="127.0.0.1", port=args.port, log_level="warning")
    return EXIT_OK


_COMMANDS = {
    "ingest": cmd_ingest,
    "synth": cmd_synth,
    "run": cmd_run,
    "curve": cmd_curve,
    "serve": cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except (CorpusError, HarnessError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except KeyboardInterrupt:
        raise
    except Exception as exc:  # noqa: BLE001 - stable exit-code contract
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
