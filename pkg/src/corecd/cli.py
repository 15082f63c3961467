"""Command-line interface: ``corecd gen-data | train | eval | baseline | transfer | infer``.

Exit codes: 0 on success, 1 on runtime or I/O failure, 2 on usage or
validation errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import baselines
from .config import ConfigError, TrainConfig, parse_value, read_config_file, resolve_run_config, write_config_file
from .env import ConfigurationError
from .graph import (
    DatasetExhaustedError,
    DatasetFormatError,
    DimensionError,
    GraphError,
    build_dataset,
    load_dataset,
    save_dataset,
)
from .neural import CheckpointError
from .neural import DimensionError as NetworkDimensionError
from .scm import FUNCTION_CLASSES, FunctionClass, preset_scm, sample_scm
from .trainer import (
    dump_json,
    evaluate,
    format_grid,
    format_trace,
    grid_to_dict,
    infer,
    load_model,
    train,
    transfer_matrix,
)

log = logging.getLogger("corecd")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def out_root() -> Path:
    return Path(os.environ.get("CORECD_OUT", "corecd-out"))


def _fclass(tag: str, cfg: TrainConfig | None = None) -> FunctionClass:
    if tag not in FUNCTION_CLASSES:
        raise UsageError(f"unknown function class {tag!r}; choose from {', '.join(FUNCTION_CLASSES)}")
    if cfg is None:
        return FunctionClass(tag)
    return FunctionClass(tag, cfg.noise, cfg.noise_is_variance, cfg.root_default)


def _check_n(what: str, n: int, expected: int) -> None:
    if n != expected:
        raise UsageError(f"{what} has n={n}, expected n={expected}")


def cmd_gen_data(args) -> int:
    split = None
    if args.train is not None or args.test is not None:
        if args.train is None or args.test is None:
            raise UsageError("--train and --test must be given together")
        split = (args.train, args.test)
    ds = build_dataset(args.n, total=args.total, split=split, p=args.p, seed=args.seed)
    out = Path(args.out) if args.out else out_root() / "datasets" / f"n{args.n}_seed{args.seed}.txt"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    print(f"wrote {out}")
    print(f"n={ds.n} train={len(ds.train)} test={len(ds.test)} "
          f"mean edges: train {ds.mean_edges('train'):.3f}, test {ds.mean_edges('test'):.3f}")
    return EXIT_OK


def _parse_overrides(extra: list[str]) -> dict:
    """Turn leftover ``--key value`` / ``--key=value`` / ``--flag`` tokens into config values."""
    bool_keys = {f.name for f in fields(TrainConfig) if isinstance(f.default, bool)}
    out = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise UsageError(f"unexpected argument {tok!r}")
        key, eq, value = tok[2:].partition("=")
        key = key.replace("-", "_")
        if not eq:
            nxt = extra[i + 1] if i + 1 < len(extra) else None
            if key in bool_keys and (nxt is None or nxt.startswith("--")):
                value = "true"
            elif nxt is None:
                raise UsageError(f"option --{key} needs a value")
            else:
                value = nxt
                i += 1
        out[key] = parse_value(key, value)
        i += 1
    return out


def cmd_train(args, extra: list[str]) -> int:
    file_values = read_config_file(args.config) if args.config else {}
    overrides = _parse_overrides(extra)
    for key, val in (("preset", args.preset), ("dataset", args.dataset), ("out_dir", args.out_dir)):
        if val is not None:
            overrides[key] = val
    if args.steps is not None:
        overrides["total_steps"] = args.steps
    if args.random_interventions:
        overrides["random_interventions"] = True
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg, run = resolve_run_config(file_values, overrides)
    if "dataset" not in run:
        raise UsageError("no dataset given (use --dataset or 'dataset = ...' in the config)")
    if not Path(run["dataset"]).is_file():
        raise UsageError(f"dataset file not found: {run['dataset']}")
    ds = load_dataset(run["dataset"])
    _check_n("dataset", ds.n, cfg.n)
    out = Path(run.get("out_dir") or out_root() / "runs" / f"n{cfg.n}_seed{cfg.seed}")
    out.mkdir(parents=True, exist_ok=True)
    write_config_file(cfg, out / "config.txt", {"dataset": run["dataset"]})

    result = train(cfg, ds, out)
    report = result.best_report
    dump_json(report.to_dict(), out / "best_eval.json")
    print(f"best checkpoint: {out / 'best.ckpt'}")
    print(f"test SHD (best): {report.line()}")
    return EXIT_OK


def _load_model(path):
    dq, cfg, meta = load_model(path)
    return dq, cfg


def cmd_eval(args) -> int:
    dq, cfg = _load_model(args.ckpt)
    ds = load_dataset(args.dataset)
    _check_n("dataset", ds.n, cfg.n)
    fclass = _fclass(args.fclass or cfg.fclass, cfg)
    value = cfg.intervention_value if args.intervention_value is None else args.intervention_value
    report = evaluate(dq, ds.split(args.split), fclass, value, cfg.horizon, args.draws, args.seed)
    report.meta["checkpoint"] = str(args.ckpt)
    print(f"CORE  n={cfg.n}  {fclass.tag:<12} c={value:g}  SHD {report.line()}")
    if args.out:
        dump_json(report.to_dict(), args.out)
    return EXIT_OK


def cmd_baseline(args) -> int:
    ds = load_dataset(args.dataset)
    p = ds.edge_prob if args.p is None else args.p
    report = baselines.evaluate_baseline(args.kind, ds.split(args.split), p, args.draws, args.seed)
    print(f"{args.kind:<6} n={ds.n}  SHD {report.line()}")
    if args.out:
        dump_json(report.to_dict(), args.out)
    return EXIT_OK


def cmd_transfer(args) -> int:
    models = {}
    for path in args.ckpts:
        dq, cfg = _load_model(path)
        label = f"{Path(path).stem} ({cfg.fclass} c={cfg.intervention_value:g})"
        models[label] = (dq, cfg)
    ns = {cfg.n for _, cfg in models.values()}
    ds = load_dataset(args.dataset)
    if len(ns) != 1:
        raise UsageError(f"checkpoints disagree on n: {sorted(ns)}")
    _check_n("dataset", ds.n, ns.pop())
    first_cfg = next(iter(models.values()))[1]
    fclasses = [_fclass(tag.strip(), first_cfg) for tag in args.fclasses.split(",") if tag.strip()]
    grid = transfer_matrix(models, fclasses, ds.split(args.split), args.draws, args.seed)
    print(format_grid(grid))
    if args.out:
        dump_json(grid_to_dict(grid), args.out)
    return EXIT_OK


def cmd_infer(args) -> int:
    dq, cfg = _load_model(args.ckpt)
    fclass = _fclass(args.fclass or cfg.fclass, cfg)
    rng = np.random.default_rng(args.seed)
    if args.scm_preset:
        scm = preset_scm(args.scm_preset, fclass)
    else:
        if not args.dataset:
            raise UsageError("give --scm-preset or --dataset to draw an SCM from")
        ds = load_dataset(args.dataset)
        graphs = ds.split(args.split)
        if not 0 <= args.graph_index < len(graphs):
            raise UsageError(f"--graph-index must lie in [0, {len(graphs) - 1}]")
        scm = sample_scm(graphs[args.graph_index], fclass, rng)
    _check_n("SCM", scm.n, cfg.n)
    if args.print_scm:
        print(scm.equations())
    value = cfg.intervention_value if args.intervention_value is None else args.intervention_value
    estimate, trace = infer(dq, scm, cfg.horizon, value, rng)
    print(format_trace(trace, scm.graph, estimate))
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            for rec in trace:
                fh.write(json.dumps(rec) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="corecd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="build a train/test graph dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--total", type=int, default=None, help="unique graph pool size (n >= 5)")
    p.add_argument("--train", type=int, default=None)
    p.add_argument("--test", type=int, default=None)
    p.add_argument("--p", type=float, default=0.2, help="ER edge probability")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)

    p = sub.add_parser("train", help="train a policy; extra --key value pairs override config fields")
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--preset", default=None)
    p.add_argument("--dataset", default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--steps", type=int, default=None, help="total environment steps")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--random-interventions", action="store_true",
                   help="ablation: random intervention targets, structure policy only")

    def add_eval_opts(p):
        p.add_argument("--dataset", required=True)
        p.add_argument("--split", default="test", choices=["train", "test"])
        p.add_argument("--draws", type=int, default=3, help="SCM draws per graph")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None, help="write the report as JSON")

    p = sub.add_parser("eval", help="evaluate a checkpoint greedily")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--fclass", default=None, choices=FUNCTION_CLASSES)
    p.add_argument("--intervention-value", type=float, default=None)
    add_eval_opts(p)

    p = sub.add_parser("baseline", help="evaluate the empty or random baseline")
    p.add_argument("--kind", required=True, choices=baselines.BASELINES)
    p.add_argument("--p", type=float, default=None, help="edge probability (default: dataset's)")
    add_eval_opts(p)

    p = sub.add_parser("transfer", help="evaluate checkpoints across function classes")
    p.add_argument("--ckpts", nargs="+", required=True)
    p.add_argument("--fclasses", default=",".join(FUNCTION_CLASSES))
    add_eval_opts(p)

    p = sub.add_parser("infer", help="run one greedy episode and print the trace")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scm-preset", choices=["eq7", "eq8"], default=None)
    p.add_argument("--dataset", default=None)
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--graph-index", type=int, default=0)
    p.add_argument("--fclass", default=None, choices=FUNCTION_CLASSES)
    p.add_argument("--intervention-value", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--print-scm", action="store_true", help="print the structural equations")
    p.add_argument("--trace", default=None, help="write a JSON-lines step trace")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s: %(message)s")
    if extra and args.command != "train":
        parser.error(f"unrecognized arguments: {' '.join(extra)}")
    commands = {
        "gen-data": cmd_gen_data, "eval": cmd_eval, "baseline": cmd_baseline,
        "transfer": cmd_transfer, "infer": cmd_infer,
    }
    try:
        if args.command == "train":
            return cmd_train(args, extra)
        return commands[args.command](args)
    except (UsageError, ConfigError, ConfigurationError, DimensionError, NetworkDimensionError, GraphError,
            DatasetFormatError, KeyError) as exc:
        print(f"corecd {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, CheckpointError, DatasetExhaustedError, RuntimeError) as exc:
        print(f"corecd {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
