import csv
import math

import numpy as np
import pytest

from unlearnlab import nn, report
from unlearnlab.config import ExperimentConfig
from unlearnlab.data import CLASS_REMOVAL, SplitSpec, make_split
from unlearnlab.report import MetricsRow, accuracy, aggregate, run_sweep
from oracles import loop_accuracy

FRACTIONS = [0.03, 0.15, 0.30]
ALPHAS = [0.05, 0.25, 0.5, 0.9]


def test_uniform_model_accuracy_is_class_zero_share():
    params = nn.ModelParams([(2, 2)], np.zeros(6))
    batch = nn.Batch(np.ones((10, 2)), [0] * 3 + [1] * 7)
    assert accuracy(params, batch) == 30.0


def test_perfect_predictor():
    params = nn.ModelParams([(1, 2)], np.array([-5.0, 5.0, 0.0, 0.0]))
    batch = nn.Batch([[1.0], [2.0], [-1.0]], [1, 1, 0])
    assert accuracy(params, batch) == 100.0


def test_accuracy_matches_loop_oracle():
    rng = np.random.default_rng(0)
    params = nn.init_mlp(6, [8], 4, seed=1)
    batch = nn.Batch(rng.standard_normal((60, 6)), rng.integers(0, 4, 60))
    assert accuracy(params, batch) == loop_accuracy(params, batch)


def test_empty_set_rejected():
    with pytest.raises(ValueError):
        accuracy(nn.init_mlp(2, [], 2, 0), nn.Batch(np.zeros((0, 2)), []))


def test_original_model_shows_memorization(default_bundle, original_seed0):
    s = make_split(default_bundle, SplitSpec(forget_fraction=0.15, seed=0))
    row = report.evaluate(original_seed0, default_bundle, s)
    assert row.a_df > row.a_dt + 5
    assert abs(row.a_df - row.a_dr) < 5
    assert row.acc_gap == pytest.approx(abs(row.a_df - row.a_dt))
    for v in (row.a_dr, row.a_df, row.a_dt, row.mia_l, row.mia_e):
        assert 0.0 <= v <= 100.0


def test_class_mode_model_missing_the_class_scores_zero(default_bundle):
    # Class 0 bias pinned far below the others: never predicted.
    params = nn.init_mlp(default_bundle.in_dim, [], default_bundle.n_classes, seed=0)
    _, b = params.layers()[-1]
    b[0] = -1e3
    s = make_split(default_bundle, SplitSpec(CLASS_REMOVAL, None, 0, seed=0))
    row = report.evaluate(params, default_bundle, s)
    assert row.a_df == 0.0
    assert row.fraction_or_class == "class0"


def test_class_mode_excludes_the_class_from_test_accuracy(default_bundle, original_seed0):
    s = make_split(default_bundle, SplitSpec(CLASS_REMOVAL, None, 1, seed=0))
    row = report.evaluate(original_seed0, default_bundle, s)
    test = default_bundle.test
    assert row.a_dt == accuracy(original_seed0, test.subset(test.labels != 1))


def test_failed_row_formatting():
    row = MetricsRow("nabla_tau", "0.15", 0.25, 1, *([math.nan] * 6), failure="diverged")
    assert row.csv_fields() == ["nabla_tau", "0.15", "0.25", "1"] + ["failed"] * 5 + [""]


def test_wall_time_only_when_requested():
    row = MetricsRow("retrain", "0.15", None, 0, 90.0, 91.0, 80.0, 11.0, 2.0, 1.0, wall_time=1.5)
    assert row.csv_fields()[-1] == ""
    assert row.csv_fields(with_time=True)[-1] == "1.500000"
    assert row.csv_fields()[2] == ""


def test_aggregate_matches_independent_recomputation():
    rng = np.random.default_rng(0)
    rows = []
    for f in (0.1, 0.2):
        for a in (0.3, 0.6):
            for s in range(4):
                rows.append(MetricsRow("nabla_tau", f"{f:g}", a, s, 90, 80, 70,
                                       *rng.uniform(0, 10, 3)))
    rows[3].failure = "boom"
    cells = aggregate(rows, [0.1, 0.2], [0.3, 0.6])
    for (f, a), cell in cells.items():
        vals = [r for r in rows if r.fraction_or_class == f"{f:g}" and r.alpha0 == a
                and r.failure is None]
        for attr in ("gap_l", "acc_gap", "gap_e"):
            xs = [getattr(r, attr) for r in vals]
            mean = sum(xs) / len(xs)
            std = math.sqrt(sum((x - mean) ** 2 for x in xs) / len(xs))
            assert getattr(cell, f"{attr}_mean") == pytest.approx(mean, abs=1e-12)
            assert getattr(cell, f"{attr}_std") == pytest.approx(std, abs=1e-12)
    assert cells[(0.1, 0.3)].n_failed == 1 and cells[(0.1, 0.3)].n_seeds == 4


@pytest.fixture(scope="module")
def sweep(tmp_path_factory, default_bundle):
    cfg = ExperimentConfig()
    out = tmp_path_factory.mktemp("sweep")
    grid = run_sweep(default_bundle, FRACTIONS, ALPHAS, [0, 1], cfg, out_dir=out)
    return cfg, grid, out


def test_sweep_counts(sweep):
    _, grid, out = sweep
    assert len(grid.rows) == 24 and len(grid.cells) == 12
    rows = report.read_rows(out / "sweep_rows.csv")
    assert len(rows) == 24
    assert list(rows[0]) == report.CSV_HEADER
    assert all(c.n_seeds == 2 for c in grid.cells.values())
    with open(out / "sweep_cells.csv") as fh:
        assert len(list(csv.reader(fh))) == 13


def test_sweep_rows_follow_plan_order(sweep):
    _, grid, _ = sweep
    got = [(r.fraction_or_class, r.alpha0, r.seed) for r in grid.rows]
    assert got == [(f"{f:g}", a, s) for f, a, s in report.sweep_plan(FRACTIONS, ALPHAS, [0, 1])]


def test_sweep_rerun_with_workers_is_byte_identical(sweep, tmp_path, default_bundle):
    cfg, _, out = sweep
    run_sweep(default_bundle, FRACTIONS, ALPHAS, [0, 1], cfg, out_dir=tmp_path, jobs=2)
    for name in ("sweep_rows.csv", "sweep_cells.csv"):
        assert (tmp_path / name).read_bytes() == (out / name).read_bytes()


def test_default_alpha_beats_largest_alpha_at_15_percent(sweep):
    _, grid, _ = sweep
    assert grid.cell(0.15, 0.25).gap_l_mean <= grid.cell(0.15, 0.9).gap_l_mean


def test_format_grid(sweep):
    _, grid, _ = sweep
    lines = report.format_grid(grid).splitlines()
    assert len(lines) == 4
    assert lines[2].split()[0] == "0.15"


def test_interrupted_sweep_leaves_valid_rows(tmp_path, default_bundle):
    cfg = ExperimentConfig()

    def stop_after_three(i, n, row):
        if i == 2:
            raise KeyboardInterrupt

    with pytest.raises(KeyboardInterrupt):
        run_sweep(default_bundle, [0.15], [0.25, 0.5], [0, 1], cfg, out_dir=tmp_path,
                  progress=stop_after_three)
    rows = report.read_rows(tmp_path / "sweep_rows.csv")
    assert len(rows) == 3
    assert all(float(r["gap_l"]) >= 0 for r in rows)


def test_failing_cell_is_recorded_and_sweep_continues(tmp_path, default_bundle):
    cfg = ExperimentConfig()
    cfg.unlearn.lr = 1e7
    cfg.unlearn.weight_decay = 0.0
    grid = run_sweep(default_bundle, [0.15], [0.9, 0.0], [0], cfg, out_dir=tmp_path)
    assert len(grid.rows) == 2
    assert grid.n_failed >= 1
    rows = report.read_rows(tmp_path / "sweep_rows.csv")
    assert rows[0]["gap_l"] == "failed"


def test_empty_grid_rejected(default_bundle):
    with pytest.raises(ValueError):
        run_sweep(default_bundle, [], ALPHAS, [0], ExperimentConfig())
