"""Command-line interface: train, evaluate, diagnose, synth, plot.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error. All
outputs are byte-deterministic for a given config and seed list, except the
timestamp inside the run manifest.
"""

from __future__ import annotations

import argparse
import datetime
import glob
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint
from .data import (
    ParseError,
    generate_synthetic,
    make_splits,
    parse_sessions,
    write_chain_csv,
    write_events_csv,
    write_id_map_csv,
)
from .metrics import EVAL_KS, evaluate, q_distribution_report, write_q_report_csv
from .svg import histogram_chart, line_chart
from .trainer import (
    ConfigError,
    TRACE_COLUMNS,
    TrainConfig,
    read_trace_csv,
    run_training,
)

_EXIT_OK = 0
_EXIT_RUNTIME = 1
_EXIT_USAGE = 2


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir: Path, config: TrainConfig, data_path: Path) -> None:
    manifest = {
        "config": config.to_dict(),
        "dataset_fingerprint": f"sha256:{_sha256(data_path)}",
        "dataset_path": str(data_path),
        "seeds": list(config.seeds),
        "output_directory": str(out_dir),
        "tool_version": __version__,
        "created_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def cmd_train(args) -> int:
    config = TrainConfig.from_json_file(args.config)
    if args.popularity_negatives:
        config = TrainConfig.from_dict({**config.to_dict(), "popularity_negatives": True})
    data_path = Path(args.data)
    if not data_path.exists():
        print(f"error: data file {data_path} does not exist", file=sys.stderr)
        return _EXIT_USAGE
    out_dir = Path(args.out)
    if out_dir.exists() and any(out_dir.iterdir()) and not args.force:
        print(f"error: output directory {out_dir} is not empty (use --force to overwrite)", file=sys.stderr)
        return _EXIT_USAGE
    out_dir.mkdir(parents=True, exist_ok=True)

    dataset = parse_sessions(data_path)
    if not dataset.sessions:
        print("error: no usable sessions in the dataset", file=sys.stderr)
        return _EXIT_RUNTIME
    _write_manifest(out_dir, config, data_path)
    write_id_map_csv(out_dir / "id_map.csv", dataset.id_map)
    splits = make_splits(dataset, config.max_len, config.r_click, config.r_buy)
    print(
        f"dataset: {dataset.n_items} items, {dataset.n_sessions} sessions "
        f"({dataset.dropped_sessions} dropped), transitions "
        f"train={len(splits.train)} val={len(splits.val)} test={len(splits.test)}"
    )

    traces = run_training(splits, config, out_dir=out_dir)

    top5 = {seed: traces[seed].top5_mean_hr10() for seed in config.seeds}
    values = np.array(list(top5.values()))
    lines = ["seed,top5_mean_hr10,best_step,diverged_at"]
    for seed in config.seeds:
        tr = traces[seed]
        lines.append(
            f"{seed},{top5[seed]!r},{tr.best_step if tr.best_step is not None else ''},"
            f"{tr.divergence_step if tr.divergence_step is not None else ''}"
        )
    (out_dir / "summary.csv").write_text("\n".join(lines) + "\n")
    print(f"validation HR@10 (mean of 5 best evals per seed): "
          f"{values.mean():.4f} ± {values.std():.4f} over {len(values)} seeds")
    for seed in config.seeds:
        tr = traces[seed]
        note = f" (diverged at step {tr.divergence_step})" if tr.divergence_step is not None else ""
        print(f"  seed {seed}: {top5[seed]:.4f}{note}")
    return _EXIT_OK


def _load_eval_inputs(args):
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.exists():
        print(f"error: checkpoint {ckpt_path} does not exist", file=sys.stderr)
        return None
    params = load_checkpoint(ckpt_path)
    dataset = parse_sessions(args.data)
    if dataset.n_items != params.config.n_items:
        raise CompatibilityError(
            f"checkpoint expects {params.config.n_items} items but dataset has {dataset.n_items}"
        )
    splits = make_splits(dataset, params.config.max_len)
    return params, splits


class CompatibilityError(RuntimeError):
    pass


def cmd_evaluate(args) -> int:
    loaded = _load_eval_inputs(args)
    if loaded is None:
        return _EXIT_USAGE
    params, splits = loaded
    transitions = splits.val if args.split == "validation" else splits.test
    ks = tuple(int(k) for k in args.k.split(","))
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([args.seed, 2029])))
    record = evaluate(params, transitions, ks=ks, neg_k=10, rng=rng, rank_by_q=args.rank_by_q)

    out_path = Path(args.out) if args.out else Path(str(args.checkpoint) + f".metrics_{args.split}.csv")
    header = ["split", "n_purchase", "n_click"]
    row = [args.split, record.purchase.n, record.click.n]
    for slice_name, sl in (("purchase", record.purchase), ("click", record.click)):
        for k in ks:
            header += [f"{slice_name}_hr{k}", f"{slice_name}_ndcg{k}"]
            row += [repr(sl.hr[k]), repr(sl.ndcg[k])]
    header += ["reward20", "q_mean_pos", "q_mean_neg", "q_std_pos", "q_std_neg"]
    row += [repr(record.reward_at_20), repr(record.q_mean_pos), repr(record.q_mean_neg),
            repr(record.q_std_pos), repr(record.q_std_neg)]
    out_path.write_text(",".join(header) + "\n" + ",".join(str(v) for v in row) + "\n")

    print(f"{args.split} split: {record.purchase.n} purchase / {record.click.n} click transitions")
    print(f"{'metric':<12}{'purchase':>12}{'click':>12}")
    for k in ks:
        print(f"{'HR@' + str(k):<12}{record.purchase.hr[k]:>12.4f}{record.click.hr[k]:>12.4f}")
        print(f"{'NDCG@' + str(k):<12}{record.purchase.ndcg[k]:>12.4f}{record.click.ndcg[k]:>12.4f}")
    print(f"{'Reward@20':<12}{record.reward_at_20:>12.4f}")
    print(f"Q mean (logged action) {record.q_mean_pos:.4f}, Q mean (negatives) {record.q_mean_neg:.4f}")
    print(f"wrote {out_path}")
    return _EXIT_OK


def cmd_diagnose(args) -> int:
    loaded = _load_eval_inputs(args)
    if loaded is None:
        return _EXIT_USAGE
    params, splits = loaded
    transitions = splits.val if args.split == "validation" else splits.test
    if not transitions:
        print("error: selected split has no transitions", file=sys.stderr)
        return _EXIT_RUNTIME
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([args.seed, 4057])))
    report = q_distribution_report(params, transitions, neg_k=10, rng=rng, bins=args.bins)

    csv_path = Path(args.out_csv) if args.out_csv else Path(str(args.checkpoint) + ".qreport.csv")
    svg_path = Path(args.out_svg) if args.out_svg else Path(str(args.checkpoint) + ".qreport.svg")
    write_q_report_csv(csv_path, report)
    svg = histogram_chart(
        [
            ("logged actions", report.bin_edges, report.pos_counts),
            ("sampled negatives", report.bin_edges, report.neg_counts),
        ],
        title="Q-value distribution: logged actions vs negatives",
        x_label="Q value",
    )
    svg_path.write_text(svg)
    print(
        f"Q stats: logged mean {report.pos_mean:.4f} sd {report.pos_std:.4f} (n={report.n_pos}), "
        f"negative mean {report.neg_mean:.4f} sd {report.neg_std:.4f} (n={report.n_neg})"
    )
    print(f"wrote {csv_path} and {svg_path}")
    return _EXIT_OK


def cmd_synth(args) -> int:
    out_path = Path(args.out)
    chain_path = Path(str(out_path) + ".chain.csv")
    if args.sessions == 0:
        # Header-only output; nothing to plant, nothing to walk.
        write_events_csv(out_path, [])
        write_chain_csv(chain_path, np.zeros((0, 0)))
        print(f"wrote {out_path} (0 events) and {chain_path}")
        return _EXIT_OK
    events, chain = generate_synthetic(
        n_items=args.items,
        n_sessions=args.sessions,
        horizon=args.horizon,
        buy_prob=args.buy_prob,
        seed=args.seed,
        dominance=args.dominance,
    )
    write_events_csv(out_path, events)
    write_chain_csv(chain_path, chain)
    print(f"wrote {out_path} ({len(events)} events) and {chain_path}")
    return _EXIT_OK


def cmd_plot(args) -> int:
    paths = sorted(glob.glob(args.traces))
    if not paths:
        print(f"error: no trace files match {args.traces!r}", file=sys.stderr)
        return _EXIT_USAGE
    series = []
    for path in paths:
        rows = read_trace_csv(path)
        label = Path(path).stem.replace("trace_", "")
        series.append((label, [r["step"] for r in rows], [r["hr10"] for r in rows]))

    band = None
    if len(series) > 1:
        common = sorted(set.intersection(*(set(xs) for _, xs, _ in series)))
        if common:
            by_step = {
                step: [ys[xs.index(step)] for _, xs, ys in series] for step in common
            }
            band = (
                list(common),
                [min(by_step[s]) for s in common],
                [max(by_step[s]) for s in common],
            )
    svg = line_chart(
        series,
        band=band,
        title="Validation HR@10 across seeds",
        x_label="training step",
        y_label="HR@10",
    )
    Path(args.out).write_text(svg)
    print(f"wrote {args.out} ({len(series)} curves)")
    return _EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqrec",
        description="Train and inspect sequential recommenders with the joint objective.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train across seeds and write traces, checkpoints, summary")
    p_train.add_argument("--config", required=True, help="flat JSON config file")
    p_train.add_argument("--data", required=True, help="session events CSV")
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.add_argument("--force", action="store_true", help="allow writing into a non-empty directory")
    p_train.add_argument(
        "--popularity-negatives", action="store_true",
        help="draw negatives weighted by train-set popularity instead of uniformly",
    )
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="score a checkpoint on a dataset split")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--split", choices=("validation", "test"), default="test")
    p_eval.add_argument("--k", default=",".join(str(k) for k in EVAL_KS), help="comma-separated cutoffs")
    p_eval.add_argument("--rank-by-q", action="store_true", help="rank with the Q head instead of logits")
    p_eval.add_argument("--seed", type=int, default=0, help="seed for the Q-diagnostic negative draws")
    p_eval.add_argument("--out", default=None, help="metrics CSV path")
    p_eval.set_defaults(func=cmd_evaluate)

    p_diag = sub.add_parser("diagnose", help="Q-value distribution report (CSV + SVG)")
    p_diag.add_argument("checkpoint")
    p_diag.add_argument("--data", required=True)
    p_diag.add_argument("--split", choices=("validation", "test"), default="test")
    p_diag.add_argument("--bins", type=int, default=40)
    p_diag.add_argument("--seed", type=int, default=0)
    p_diag.add_argument("--out-csv", default=None)
    p_diag.add_argument("--out-svg", default=None)
    p_diag.set_defaults(func=cmd_diagnose)

    p_synth = sub.add_parser("synth", help="generate a planted-Markov synthetic dataset")
    p_synth.add_argument("--items", type=int, default=200)
    p_synth.add_argument("--sessions", type=int, default=2000)
    p_synth.add_argument("--horizon", type=int, default=12)
    p_synth.add_argument("--buy-prob", type=float, default=0.2)
    p_synth.add_argument("--dominance", type=float, default=0.6)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--out", required=True, help="events CSV path (chain sidecar appends .chain.csv)")
    p_synth.set_defaults(func=cmd_synth)

    p_plot = sub.add_parser("plot", help="per-seed HR@10 curves with a min-max band")
    p_plot.add_argument("traces", help="glob of trace CSV files")
    p_plot.add_argument("--out", required=True, help="output SVG path")
    p_plot.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_USAGE
    except (CompatibilityError, CheckpointError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
