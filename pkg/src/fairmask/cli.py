"""Command-line entry point: ``fairmask {synth,pretrain,search,baselines,report}``.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure.
Set ``FAIRMASK_LOG_LEVEL`` (e.g. ``DEBUG``) to change log verbosity.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from .config import ExperimentConfig, base_model, load_config, parse_override, run_config, splits
from .data import generate_synthetic, write_csv
from .errors import CheckpointError, ConfigError, FairmaskError, ParseError
from .model import save_checkpoint
from .orchestrator import RunResult, default_lr_grid, mask_frequency, run_baselines, run_search
from .search_space import KINDS
from .trainer import pretrain

log = logging.getLogger("fairmask")

# file that marks a finished run for each command
DONE_MARKERS = {
    "synth": "dataset.csv",
    "pretrain": "theta0.npz",
    "search": "run_result.json",
    "baselines": "baselines.json",
    "report": "mask_frequency.csv",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fairmask", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in [
        ("synth", "write a synthetic biased dataset as CSV"),
        ("pretrain", "train a base model on the source task and write a checkpoint"),
        ("search", "run the mask / learning-rate search"),
        ("baselines", "tune and evaluate the fixed-mask baselines"),
        ("report", "mask-frequency and best-so-far CSVs from RunResult files"),
    ]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", type=Path, help="JSON config; missing keys take defaults")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override the command's seed")
        p.add_argument("--workers", type=int, help="parallel trial executors (search only)")
        p.add_argument("--force", action="store_true", help="overwrite a completed run")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value by dotted path, e.g. search.n_trials=10")
        if name == "report":
            p.add_argument("runs", nargs="*", type=Path, help="run_result.json files or run directories")
    return parser


def _resolve(args) -> ExperimentConfig:
    overrides = [parse_override(o) for o in args.overrides]
    seed_key = {
        "synth": "data.synth_seed",
        "pretrain": "pretrain.seed",
        "search": "search.run_seed",
        "baselines": "baselines.scratch_seed",
    }.get(args.command)
    if args.seed is not None and seed_key:
        overrides.append((seed_key, args.seed))
    if args.workers is not None:
        overrides.append(("search.workers", args.workers))
    return load_config(args.config, overrides)


def cmd_synth(cfg, out: Path):
    ds = generate_synthetic(cfg.data.synth, cfg.data.synth_seed)
    write_csv(ds, out / "dataset.csv")
    log.info("wrote %d rows to %s", ds.n, out / "dataset.csv")


def cmd_pretrain(cfg, out: Path):
    source = generate_synthetic(cfg.pretrain.source, cfg.pretrain.source_seed)
    params = pretrain(cfg.arch, source, cfg.pretrain.train, cfg.pretrain.seed,
                      reset_head=cfg.pretrain.reset_head)
    save_checkpoint(params, out / "theta0.npz")


def cmd_search(cfg, out: Path):
    train, val, test = splits(cfg)
    theta0 = base_model(cfg)
    result = run_search(run_config(cfg), theta0, train, val, test, log_path=out / "trials.jsonl")
    (out / "run_result.json").write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n",
                                         encoding="utf-8")
    if result.model is not None:
        save_checkpoint(result.model, out / "best_model.npz")
    log.info("best trial %d mask %s lr %.3g value %.4f", result.best_trial,
             result.to_dict()["best_mask"], result.best_lr, result.best_value)


def cmd_baselines(cfg, out: Path):
    data = splits(cfg)
    theta0 = base_model(cfg)
    b = cfg.baselines
    grid = list(b.lr_grid) if b.lr_grid else default_lr_grid(cfg.search.lr_range)
    table = run_baselines(theta0, data, cfg.train, grid, objective=b.objective,
                          methods=tuple(b.methods), scratch_seed=b.scratch_seed)
    rows = [row.to_dict() for row in table.values()]
    (out / "baselines.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    cols = ["method", "lr", "val_objective", "test_overall_auc", "test_min_auc", "test_gap_auc",
            "test_eoddsd", "test_dpd"]
    with (out / "baselines.csv").open("w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def _load_result(path: Path) -> RunResult:
    if path.is_dir():
        path = path / "run_result.json"
    try:
        return RunResult.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except OSError as exc:
        raise ConfigError(f"cannot read run result {path}: {exc}") from exc
    except (KeyError, json.JSONDecodeError) as exc:
        raise ConfigError(f"malformed run result {path}: {exc}") from exc


def cmd_report(cfg, out: Path, runs):
    paths = list(runs) or [Path(p) for p in cfg.report.runs]
    if not paths:
        raise ConfigError("report needs at least one run (positional or report.runs)")
    results = [_load_result(p) for p in paths]
    freq = mask_frequency(results)
    with (out / "mask_frequency.csv").open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["block", "kind", "frequency"])
        for b in range(freq.shape[0]):
            for k, kind in enumerate(KINDS):
                w.writerow([b, kind, repr(float(freq[b, k]))])
    with (out / "trajectory.csv").open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "trial_index", "best_so_far"])
        for path, r in zip(paths, results):
            for i, v in enumerate(r.trajectory):
                w.writerow([str(path), i, repr(float(v))])


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("FAIRMASK_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _resolve(args)
        out: Path = args.out
        marker = out / DONE_MARKERS[args.command]
        if marker.exists() and not args.force:
            raise ConfigError(f"{marker} exists; pass --force to overwrite")
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(cfg.to_json() + "\n", encoding="utf-8")
        if args.command == "synth":
            cmd_synth(cfg, out)
        elif args.command == "pretrain":
            cmd_pretrain(cfg, out)
        elif args.command == "search":
            cmd_search(cfg, out)
        elif args.command == "baselines":
            cmd_baselines(cfg, out)
        else:
            cmd_report(cfg, out, args.runs)
    except (ConfigError, ParseError, CheckpointError) as exc:
        print(f"fairmask: configuration error: {exc}", file=sys.stderr)
        return 1
    except FairmaskError as exc:
        print(f"fairmask: runtime failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
