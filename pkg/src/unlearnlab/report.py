"""Metrics, single-run orchestration and the forget-fraction x alpha sweep."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from . import attack, baselines, nn
from .cache import ModelCache
from .config import ExperimentConfig
from .data import CLASS_REMOVAL, DatasetBundle, Split, SplitSpec, make_split
from .unlearn import run_nabla_tau

log = logging.getLogger(__name__)

CSV_HEADER = ["method", "fraction_or_class", "alpha0", "seed", "a_dr", "acc_gap", "a_dt",
              "gap_l", "gap_e", "wall_time_s"]
CELL_HEADER = ["fraction", "alpha0", "n_seeds", "n_failed", "gap_l_mean", "gap_l_std",
               "acc_gap_mean", "acc_gap_std", "gap_e_mean", "gap_e_std"]
FAILED = "failed"


def accuracy(model: nn.ModelParams, batch: nn.Batch) -> float:
    """Percent of samples whose argmax prediction (lowest index on ties) equals the label."""
    if len(batch) == 0:
        raise ValueError("accuracy of an empty set")
    return 100.0 * float(np.mean(nn.predict(model, batch.inputs) == batch.labels))


@dataclass
class MetricsRow:
    method: str
    fraction_or_class: str
    alpha0: float | None
    seed: int
    a_dr: float
    a_df: float
    a_dt: float
    acc_gap: float
    gap_l: float
    gap_e: float
    mia_l: float = 50.0
    mia_e: float = 50.0
    wall_time: float | None = None
    failure: str | None = None

    def csv_fields(self, with_time: bool = False) -> list[str]:
        def num(x):
            return f"{x:.6f}"
        alpha = "" if self.alpha0 is None else f"{self.alpha0:g}"
        wall = num(self.wall_time) if (with_time and self.wall_time is not None) else ""
        if self.failure:
            return [self.method, self.fraction_or_class, alpha, str(self.seed)] + [FAILED] * 5 + [wall]
        return [self.method, self.fraction_or_class, alpha, str(self.seed),
                num(self.a_dr), num(self.acc_gap), num(self.a_dt),
                num(self.gap_l), num(self.gap_e), wall]


def evaluate(model: nn.ModelParams, bundle: DatasetBundle, split: Split, method: str = "original",
             alpha0: float | None = None, seed: int | None = None,
             attack_cfg=None) -> MetricsRow:
    """Accuracies and membership-inference gaps for one model.

    Random-subset splits compare the forget set with the whole test set.
    Class removal drops the forgotten class from test accuracy and attacks
    with that class's test samples only.
    """
    spec = split.spec
    seed = spec.seed if seed is None else seed
    folds, l2, tol, repeats = (5, 1e-4, 1e-8, 10) if attack_cfg is None else (
        attack_cfg.folds, attack_cfg.l2, attack_cfg.tol, attack_cfg.repeats)
    d_f, d_r = split.forget, split.retain
    a_df = accuracy(model, d_f)
    a_dr = accuracy(model, d_r)
    restrict = None
    test = bundle.test
    if spec.mode == CLASS_REMOVAL:
        restrict = spec.forget_class
        test = test.subset(test.labels != spec.forget_class)
    a_dt = accuracy(model, test)
    rep = attack.evaluate_mia(model, d_f, bundle.test, folds=folds, seed=seed,
                              restrict_class=restrict, l2=l2, tol=tol, repeats=repeats)
    return MetricsRow(
        method=method, fraction_or_class=spec.label(), alpha0=alpha0, seed=seed,
        a_dr=a_dr, a_df=a_df, a_dt=a_dt, acc_gap=abs(a_df - a_dt),
        gap_l=rep.gap_l, gap_e=rep.gap_e, mia_l=rep.mia_l, mia_e=rep.mia_e,
    )


@dataclass
class RunOutcome:
    row: MetricsRow
    params: nn.ModelParams
    trace: list = field(default_factory=list)
    steps: int = 0
    failure: str | None = None


def run_method(cfg: ExperimentConfig, bundle: DatasetBundle, original: nn.ModelParams | None,
               split: Split, method: str, seed: int, alpha0: float | None = None) -> RunOutcome:
    """Run one unlearning method (or retraining) and evaluate the result."""
    t0 = time.perf_counter()
    ucfg = cfg.unlearn.build(len(bundle.train), split.n_forget, split.n_retain, seed, alpha0)
    if method == "nabla_tau":
        res = run_nabla_tau(original, bundle, split, ucfg)
        used_alpha = ucfg.alpha0
    elif method == "finetune":
        res = baselines.finetune(original, bundle, split, ucfg)
        used_alpha = None
    elif method == "label_swap":
        res = baselines.label_swap(original, bundle, split, ucfg)
        used_alpha = None
    elif method == "retrain":
        res = baselines.retrain(bundle, split, cfg.pretrain, seed)
        used_alpha = None
    elif method == "original":
        res = baselines.TrainResult(original.copy(), [], 0)
        used_alpha = None
    else:
        raise ValueError(f"unknown method {method!r}")

    if res.failure or not res.params.is_finite():
        failure = res.failure or "non-finite parameters"
        row = MetricsRow(method, split.spec.label(), used_alpha, seed, *([math.nan] * 6),
                         failure=failure)
    else:
        failure = None
        row = evaluate(res.params, bundle, split, method, used_alpha, seed, cfg.attack)
    row.wall_time = time.perf_counter() - t0
    return RunOutcome(row, res.params, res.trace, res.steps, failure)


def write_rows(rows, path, with_time: bool = False) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow(r.csv_fields(with_time))


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- sweep ------------------------------------------------------------------

@dataclass
class SweepCell:
    fraction: float
    alpha0: float
    n_seeds: int
    n_failed: int
    gap_l_mean: float
    gap_l_std: float
    acc_gap_mean: float
    acc_gap_std: float
    gap_e_mean: float
    gap_e_std: float


@dataclass
class SweepGrid:
    fractions: list[float]
    alphas: list[float]
    cells: dict = field(default_factory=dict)
    rows: list[MetricsRow] = field(default_factory=list)

    def cell(self, fraction: float, alpha0: float) -> SweepCell:
        return self.cells[(fraction, alpha0)]

    def spearman_acc_vs_mia(self) -> float:
        ok = [c for c in self.cells.values() if c.n_seeds > c.n_failed]
        return float(spearmanr([c.acc_gap_mean for c in ok], [c.gap_l_mean for c in ok]).statistic)

    @property
    def n_failed(self) -> int:
        return sum(r.failure is not None for r in self.rows)


def aggregate(rows: list[MetricsRow], fractions, alphas) -> dict:
    """Mean and (population) std over seeds per (fraction, alpha) cell."""
    cells = {}
    for frac in fractions:
        for a in alphas:
            label = SplitSpec(forget_fraction=frac).label()
            mine = [r for r in rows if r.fraction_or_class == label and r.alpha0 == a]
            good = [r for r in mine if r.failure is None]

            def stat(attr, fn):
                return float(fn([getattr(r, attr) for r in good])) if good else math.nan

            cells[(frac, a)] = SweepCell(
                frac, a, len(mine), len(mine) - len(good),
                stat("gap_l", np.mean), stat("gap_l", np.std),
                stat("acc_gap", np.mean), stat("acc_gap", np.std),
                stat("gap_e", np.mean), stat("gap_e", np.std),
            )
    return cells


def write_cells(cells: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CELL_HEADER)
        for c in cells.values():
            d = asdict(c)
            w.writerow([f"{d['fraction']:g}", f"{d['alpha0']:g}", d["n_seeds"], d["n_failed"]]
                       + [f"{d[k]:.6f}" for k in CELL_HEADER[4:]])


def sweep_plan(fractions, alphas, seeds) -> list[tuple[float, float, int]]:
    return [(f, a, s) for f in fractions for a in alphas for s in seeds]


def _sweep_job(args):
    cfg, bundle, original, frac, alpha, seed = args
    split = make_split(bundle, SplitSpec(forget_fraction=frac, seed=seed))
    try:
        return run_method(cfg, bundle, original, split, "nabla_tau", seed, alpha).row
    except Exception as exc:  # one bad cell must not sink the sweep
        log.exception("sweep cell (%s, %s, %s) failed", frac, alpha, seed)
        return MetricsRow("nabla_tau", split.spec.label(), alpha, seed, *([math.nan] * 6),
                          failure=repr(exc))


def originals_for(cfg: ExperimentConfig, bundle: DatasetBundle, seeds,
                  cache: ModelCache | None = None) -> dict:
    out = {}
    for s in seeds:
        if cache is not None and cache.has(s):
            out[s] = cache.load(s)
            continue
        res = baselines.pretrain(bundle, cfg.pretrain, s)
        if res.failed:
            raise RuntimeError(f"pretraining diverged for seed {s}: {res.failure}")
        out[s] = res.params
        if cache is not None:
            cache.save(s, res.params)
    return out


def run_sweep(bundle: DatasetBundle, fractions, alphas, seeds, cfg: ExperimentConfig,
              out_dir=None, jobs: int = 1, cache: ModelCache | None = None,
              progress=None) -> SweepGrid:
    """Unlearn every (fraction, alpha, seed) cell and aggregate over seeds.

    Rows are written to ``<out_dir>/sweep_rows.csv`` in plan order as soon
    as each is available, so an interrupted sweep leaves valid rows behind;
    per-cell aggregates go to ``sweep_cells.csv``.
    """
    fractions, alphas, seeds = list(fractions), list(alphas), list(seeds)
    if not (fractions and alphas and seeds):
        raise ValueError("sweep needs non-empty fractions, alphas and seeds")
    originals = originals_for(cfg, bundle, seeds, cache)
    plan = sweep_plan(fractions, alphas, seeds)
    jobs_args = [(cfg, bundle, originals[s], f, a, s) for f, a, s in plan]

    fh = writer = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        fh = open(out_dir / "sweep_rows.csv", "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        fh.flush()

    rows = []
    try:
        if jobs > 1:
            pool = ProcessPoolExecutor(max_workers=jobs)
            # map() yields in submission order, which is the plan order.
            results = pool.map(_sweep_job, jobs_args)
        else:
            pool = None
            results = (_sweep_job(a) for a in jobs_args)
        for i, row in enumerate(results):
            rows.append(row)
            if writer is not None:
                writer.writerow(row.csv_fields(cfg.record_wall_time))
                fh.flush()
            if progress is not None:
                progress(i, len(plan), row)
        if pool is not None:
            pool.shutdown()
    finally:
        if fh is not None:
            fh.close()

    cells = aggregate(rows, fractions, alphas)
    if out_dir is not None:
        write_cells(cells, out_dir / "sweep_cells.csv")
    return SweepGrid(fractions, alphas, cells, rows)


def format_grid(grid: SweepGrid, attr: str = "gap_l_mean") -> str:
    """Plain-text heatmap table: fractions down, alphas across."""
    buf = io.StringIO()
    buf.write("fraction\\alpha " + " ".join(f"{a:>8g}" for a in grid.alphas) + "\n")
    for f in grid.fractions:
        vals = " ".join(f"{getattr(grid.cell(f, a), attr):8.2f}" for a in grid.alphas)
        buf.write(f"{f:<14g} {vals}\n")
    return buf.getvalue()
