"""Command-line entry point: ``admoe {synth,train,benchmark,ablate,case-study}``.

Flags mirror the experiment config; ``--config file.json`` is applied on top
of them. Relative output paths go under ``$ADMOE_RESULTS_DIR``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

from . import runner
from .data import DataError, SyntheticSpec, load_csv, make_synthetic, save_csv
from .model import AdmoeModel, TrainConfig, expert_case_study, fit
from .moe import ConfigError
from .noise import QUALITY_GRID, NoiseError, quality_report, synthesize
from .runner import AblationKind, ExperimentConfig, Method

log = logging.getLogger("admoe")


def _csv_floats(text):
    return [float(v) for v in text.split(",") if v]


def _csv_strings(text):
    return [v for v in text.split(",") if v]


def add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data")
    g.add_argument("--dataset", help="CSV with f_* columns, optional label and weak_* columns")
    g.add_argument("--n", type=int, default=SyntheticSpec.n)
    g.add_argument("--d", type=int, default=SyntheticSpec.d)
    g.add_argument("--anomaly-rate", type=float, default=SyntheticSpec.anomaly_rate)
    g.add_argument("--difficulty", type=float, default=SyntheticSpec.difficulty)
    g.add_argument("--data-seed", type=int, default=0)
    g.add_argument("--split-seed", type=int, default=0)

    g = p.add_argument_group("noise")
    g.add_argument("--mechanism", default="inaccurate_output", choices=["inaccurate_output", "label_flipping"])
    g.add_argument("--gt-fraction", type=float, default=0.05)
    g.add_argument("--rates", type=_csv_floats, default=[0.1, 0.2, 0.3, 0.4], help="comma-separated flip rates")
    g.add_argument("--kinds", type=_csv_strings, help="comma-separated generator kinds")
    g.add_argument("--noise-seed", type=int, default=0)

    g = p.add_argument_group("training")
    g.add_argument("--method", default=Method.ADMOE_MLP.value, choices=[m.value for m in Method])
    g.add_argument("--source-index", type=int)
    g.add_argument("--trials", type=int, default=4)
    g.add_argument("--seed", type=int, default=0)
    defaults = TrainConfig()
    g.add_argument("--epochs", type=int, default=defaults.epochs)
    g.add_argument("--lr", type=float, default=defaults.lr)
    g.add_argument("--batch-size", type=int, default=defaults.batch_size)
    g.add_argument("--alpha", type=float, default=defaults.alpha)
    g.add_argument("--m", type=int, default=defaults.m)
    g.add_argument("--k", type=int, default=defaults.k)
    g.add_argument("--e", type=int, default=defaults.e)
    g.add_argument("--loss-mode", default=defaults.loss_mode.value, choices=["sample_one", "combine_all"])
    g.add_argument("--clean-weight", type=float, default=defaults.clean_weight)
    g.add_argument("--clean-fraction", type=float, default=0.0)
    g.add_argument("--budget", type=int, default=defaults.budget)
    g.add_argument("--no-moe", action="store_true", help="replace the MoE layer by the plain trunk")
    g.add_argument("--no-label-input", action="store_true", help="do not feed noisy labels to the model")
    p.add_argument("--output", help="results file (JSON lines)")
    p.add_argument("--config", help="JSON experiment config; its fields override the flags")
    p.add_argument("--workers", type=int, default=1)


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def config_from_args(args) -> ExperimentConfig:
    noise = {
        "mechanism": args.mechanism,
        "rates": args.rates,
        "gt_fraction": args.gt_fraction,
        "seed": args.noise_seed,
    }
    if args.kinds:
        noise["kinds"] = args.kinds
    raw = {
        "method": args.method,
        "dataset": args.dataset,
        "synthetic": asdict(
            SyntheticSpec(args.n, args.d, args.anomaly_rate, args.difficulty, args.data_seed)
        ),
        "noise": noise,
        "train": {
            "lr": args.lr,
            "batch_size": args.batch_size,
            "epochs": args.epochs,
            "alpha": args.alpha,
            "m": args.m,
            "k": args.k,
            "e": args.e,
            "loss_mode": args.loss_mode,
            "clean_weight": args.clean_weight,
            "budget": args.budget,
        },
        "trials": args.trials,
        "seed": args.seed,
        "split_seed": args.split_seed,
        "source_index": args.source_index,
        "use_moe": not args.no_moe,
        "labels_as_input": not args.no_label_input,
        "clean_fraction": args.clean_fraction,
        "output": args.output,
    }
    if args.config:
        with open(args.config) as fh:
            raw = _merge(raw, json.load(fh))
    return ExperimentConfig.from_dict(raw)


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


# --- subcommands -----------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = config_from_args(args)
    out = Path(args.out)
    if cfg.dataset is not None:
        ds = load_csv(cfg.dataset)
    else:
        s = cfg.synthetic
        ds = make_synthetic(s.n, s.d, s.anomaly_rate, s.difficulty, s.seed, s.n_clusters)
    if ds.ground_truth is None:
        raise DataError("synthesizing noisy labels needs a label column")
    labels = synthesize(cfg.noise, ds.features, ds.ground_truth)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_csv(ds.with_sources(labels), out)
    report = {
        "noise": cfg.noise.to_dict(),
        "quality": quality_report(labels, ds.ground_truth),
        "synthetic": None if cfg.dataset is not None else asdict(cfg.synthetic),
    }
    out.with_suffix(".quality.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    if cfg.synthetic is not None:
        out.with_suffix(".spec.json").write_text(cfg.synthetic.to_json())
    _print(report)
    return 0


def cmd_train(args) -> int:
    cfg = config_from_args(args)
    if cfg.output is None:
        cfg = replace(cfg, output="train.jsonl")
    records = runner.run_experiment(cfg, snapshot_dir=args.snapshot_dir, workers=args.workers)
    _print(json.loads(records[-1].to_json()))
    return 0 if all(r.status == "ok" for r in records) else 1


def cmd_benchmark(args) -> int:
    base = config_from_args(args)
    rows = runner.run_benchmark(
        base,
        args.methods,
        args.qualities,
        results_file=args.output or "benchmark.jsonl",
        table_file=args.table,
        workers=args.workers,
    )
    failed = [r for r in rows if r.status != "ok"]
    print(f"{len(rows)} cells, {len(failed)} failed; table at {runner.results_path(args.table)}")
    return 0 if not failed else 1


def cmd_ablate(args) -> int:
    base = config_from_args(args)
    result = runner.run_ablation(args.kind, base, results_file=args.output or "ablation.jsonl", workers=args.workers)
    _print(result.to_dict())
    return 0 if all(r["status"] == "ok" for r in result.rows) else 1


def cmd_case_study(args) -> int:
    cfg = config_from_args(args)
    if cfg.method is not Method.ADMOE_MLP or not cfg.use_moe:
        raise ConfigError("case study needs the AdmoeMlp method with its MoE layer")
    prep = runner.prepare(cfg)
    ds = prep.dataset
    out = []
    for trial in range(cfg.trials):
        train_cfg = replace(cfg.train, seed=cfg.seed + trial)
        model = AdmoeModel.for_budget(
            ds.d, ds.n_inputs, train_cfg.budget, m=train_cfg.m, k=train_cfg.k, e=train_cfg.e, seed=train_cfg.seed
        )
        fit(model, ds, prep.split, train_cfg)
        cs = expert_case_study(model, ds, prep.split)
        wins, rows = cs.diagonal_wins()
        out.append(
            {"seed": train_cfg.seed, "table": cs.table, "sizes": cs.sizes, "overall_auc": cs.overall_auc,
             "diagonal_wins": wins, "rows": rows}
        )
    _print(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="admoe", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a CSV with synthesized weak columns and a quality report")
    add_config_flags(s)
    s.add_argument("--out", required=True, help="destination CSV")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="run one method for --trials seeds")
    add_config_flags(s)
    s.add_argument("--snapshot-dir", help="save trained model snapshots here")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("benchmark", help="methods x noise qualities x trials grid")
    add_config_flags(s)
    s.add_argument("--methods", type=_csv_strings, default=[m.value for m in Method])
    s.add_argument("--qualities", type=_csv_floats, default=list(QUALITY_GRID))
    s.add_argument("--table", default="benchmark.csv", help="long-format CSV output")
    s.set_defaults(func=cmd_benchmark)

    s = sub.add_parser("ablate", help="MoeVsInput, ExpertGrid or CleanRatio sweep")
    s.add_argument("kind", choices=[k.value for k in AblationKind])
    add_config_flags(s)
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("case-study", help="per-expert ROC-AUC table for a trained model")
    add_config_flags(s)
    s.set_defaults(func=cmd_case_study, k=1)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DataError, NoiseError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
