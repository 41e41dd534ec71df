"""Command-line entry point.

    unlearnlab pretrain --config exp.yaml
    unlearnlab unlearn  --config exp.yaml --method nabla_tau --fraction 0.15
    unlearnlab evaluate --config exp.yaml --class 2
    unlearnlab sweep    --config exp.yaml --jobs 2

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict

from . import baselines, report
from .cache import CacheIntegrityError, ModelCache
from .config import METHODS, ConfigError, ExperimentConfig, dump_config, load_config
from .data import CLASS_REMOVAL, RANDOM_SUBSET, SplitError, make_split
from .unlearn import write_trace

log = logging.getLogger("unlearnlab")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class RuntimeFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML experiment config")
    common.add_argument("--seed", type=int, action="append",
                        help="run seed (repeatable; default: config seeds)")
    common.add_argument("--jobs", type=int, help="worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    split = argparse.ArgumentParser(add_help=False)
    g = split.add_mutually_exclusive_group()
    g.add_argument("--fraction", type=float, help="random-subset forget fraction")
    g.add_argument("--class", dest="forget_class", type=int, help="class to remove")

    p = _Parser(prog="unlearnlab", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("pretrain", parents=[common], help="train and cache original models")
    sp.add_argument("--force", action="store_true", help="overwrite cached models")

    sp = sub.add_parser("unlearn", parents=[common, split], help="run one unlearning method")
    sp.add_argument("--method", help=f"one of: {', '.join(METHODS)}")
    sp.add_argument("--alpha", type=float, help="starting alpha (nabla_tau only)")

    sub.add_parser("evaluate", parents=[common, split], help="evaluate the cached original model")

    sp = sub.add_parser("sweep", parents=[common], help="forget fraction x alpha grid")
    sp.add_argument("--dry-run", action="store_true", help="print the cell plan and exit")
    return p


def _config(args) -> ExperimentConfig:
    try:
        cfg = load_config(args.config)
    except FileNotFoundError as exc:
        raise UsageError(f"config not found: {exc.filename}") from exc
    except (ConfigError, TypeError, ValueError) as exc:
        raise UsageError(f"bad config: {exc}") from exc
    if args.jobs is not None:
        cfg.jobs = args.jobs
    if args.seed:
        cfg.seeds = list(args.seed)
    if getattr(args, "fraction", None) is not None:
        cfg.split.mode = RANDOM_SUBSET
        cfg.split.forget_fraction = args.fraction
    if getattr(args, "forget_class", None) is not None:
        cfg.split.mode = CLASS_REMOVAL
        cfg.split.forget_class = args.forget_class
    return cfg


def _cache(cfg: ExperimentConfig) -> ModelCache:
    return ModelCache(cfg.output_path / "cache", cfg.pretrain_hash())


def _originals(cfg, bundle, cache):
    missing = [s for s in cfg.seeds if not cache.has(s)]
    if missing:
        raise RuntimeFailure(
            f"no cached original model for seed(s) {missing} under {cache.root / cache.config_hash}; "
            "run `unlearnlab pretrain` first"
        )
    return {s: cache.load(s) for s in cfg.seeds}


def cmd_pretrain(cfg: ExperimentConfig, force: bool = False) -> int:
    bundle = cfg.dataset.build()
    cache = _cache(cfg)
    for s in cfg.seeds:
        if cache.has(s) and not force:
            cache.load(s)  # integrity check; raises on a damaged blob
            print(f"seed {s}: cache hit {cache.path(s)}")
            continue
        res = baselines.pretrain(bundle, cfg.pretrain, s)
        if res.failed:
            raise RuntimeFailure(f"pretraining diverged for seed {s}: {res.failure}")
        path = cache.save(s, res.params)
        write_trace(res.trace, path.with_suffix(".trace.jsonl"))
        print(f"seed {s}: trained {res.steps} steps -> {path}")
    (cfg.output_path / "config.yaml").write_text(dump_config(cfg))
    return EXIT_OK


def _run_rows(cfg: ExperimentConfig, method: str, alpha: float | None, stem: str) -> int:
    bundle = cfg.dataset.build()
    originals = _originals(cfg, bundle, _cache(cfg))
    out = cfg.output_path / ("unlearn" if method != "original" else "evaluate")
    out.mkdir(parents=True, exist_ok=True)
    rows, failed = [], []
    for s in cfg.seeds:
        try:
            split = make_split(bundle, cfg.split.spec(s))
        except SplitError as exc:
            raise UsageError(str(exc)) from exc
        res = report.run_method(cfg, bundle, originals[s], split, method, s, alpha)
        rows.append(res.row)
        name = f"{stem}_{split.spec.label()}_seed{s}"
        if res.trace:
            write_trace(res.trace, out / f"{name}.trace.jsonl")
        r = res.row
        if res.failure:
            failed.append((s, res.failure))
            print(f"seed {s}: FAILED {res.failure}")
        else:
            print(f"seed {s}: A_Dr={r.a_dr:.2f} |A_Df-A_Dt|={r.acc_gap:.2f} A_Dt={r.a_dt:.2f} "
                  f"|MIA_L-50|={r.gap_l:.2f} |MIA_E-50|={r.gap_e:.2f}")
        with open(out / f"{name}.json", "w") as fh:
            d = asdict(r)
            if not cfg.record_wall_time:
                d.pop("wall_time")
            json.dump(d, fh, sort_keys=True, indent=2, default=str)
            fh.write("\n")
    label = cfg.split.spec(0).label()
    report.write_rows(rows, out / f"{stem}_{label}.csv", cfg.record_wall_time)
    if failed:
        raise RuntimeFailure(f"{len(failed)} run(s) failed: {failed}")
    return EXIT_OK


def cmd_unlearn(cfg: ExperimentConfig, method: str | None, alpha: float | None) -> int:
    method = method or cfg.method
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}; valid methods: {', '.join(METHODS)}")
    if method != "nabla_tau" and alpha is not None:
        log.warning("--alpha is ignored by method %s", method)
        alpha = None
    return _run_rows(cfg, method, alpha, method)


def cmd_evaluate(cfg: ExperimentConfig) -> int:
    return _run_rows(cfg, "original", None, "original")


def cmd_sweep(cfg: ExperimentConfig, dry_run: bool = False) -> int:
    plan = report.sweep_plan(cfg.sweep.fractions, cfg.sweep.alphas, cfg.seeds)
    if dry_run:
        for i, (f, a, s) in enumerate(plan):
            print(f"[{i + 1}/{len(plan)}] fraction={f:g} alpha0={a:g} seed={s}")
        return EXIT_OK
    bundle = cfg.dataset.build()

    def progress(i, n, row):
        status = "FAILED" if row.failure else f"|MIA_L-50|={row.gap_l:.2f} |A_Df-A_Dt|={row.acc_gap:.2f}"
        print(f"[{i + 1}/{n}] fraction={row.fraction_or_class} alpha0={row.alpha0:g} "
              f"seed={row.seed} {status}", flush=True)

    grid = report.run_sweep(bundle, cfg.sweep.fractions, cfg.sweep.alphas, cfg.seeds, cfg,
                            out_dir=cfg.output_path / "sweep", jobs=cfg.jobs,
                            cache=_cache(cfg), progress=progress)
    print("mean |MIA_L - 50|")
    print(report.format_grid(grid, "gap_l_mean"), end="")
    print("mean |A_Df - A_Dt|")
    print(report.format_grid(grid, "acc_gap_mean"), end="")
    if grid.n_failed:
        raise RuntimeFailure(f"{grid.n_failed} of {len(plan)} sweep cells failed")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        if args.command == "pretrain":
            return cmd_pretrain(cfg, args.force)
        if args.command == "unlearn":
            return cmd_unlearn(cfg, args.method, args.alpha)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        return cmd_sweep(cfg, args.dry_run)
    except UsageError as exc:
        print(f"unlearnlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RuntimeFailure, CacheIntegrityError) as exc:
        print(f"unlearnlab: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
