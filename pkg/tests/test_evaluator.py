import json

import numpy as np
import pytest

from mfckge.config import DESK
from mfckge.evaluator import (ALL, METRICS_HEADER, MetricsCell, compression_csv, compression_report, evaluate_all,
                              export_importance_heatmap, heatmap_csv, lifelong_run, write_run_manifest)
from mfckge.kg import kg_from_id_triples

from test_trainer import _three_snapshot_kg

CFG = DESK.replace(dim=8, max_epochs=20, eval_every=5, workers=1)


def test_perfect_ranks():
    c = MetricsCell(1, 1)
    for _ in range(5):
        c.add(1)
    assert c.mrr == c.hits_at(1) == c.hits_at(10) == 1.0


def test_ranks_one_and_four():
    c = MetricsCell(1, 1)
    c.add(1)
    c.add(4)
    assert c.mrr == pytest.approx(0.625)
    assert (c.hits_at(1), c.hits_at(3), c.hits_at(10)) == (0.5, 0.5, 1.0)


@pytest.fixture(scope="module")
def run():
    kg = _three_snapshot_kg(4)
    return kg, lifelong_run(kg, CFG)


def test_lifelong_grid(run):
    kg, res = run
    m = res.metrics
    for i in (1, 2, 3):
        row = [m.cell(i, j) for j in range(1, i + 1)]
        agg = m.aggregate(i)
        assert agg.n_queries == sum(c.n_queries for c in row)
        weighted = sum(c.mrr * c.n_queries for c in row) / agg.n_queries
        assert agg.mrr == pytest.approx(weighted)
    # retention trace of Q1
    assert all((i, 1) in m.cells for i in (1, 2, 3))
    lines = m.to_csv().splitlines()
    assert lines[0] == METRICS_HEADER
    assert len(lines) == 1 + 3 + 3 + 3
    assert lines[-1].startswith("3,all,")


def test_final_row_matches_lifelong(run):
    kg, res = run
    final = evaluate_all(res.store, kg, CFG)
    assert final.aggregate(3).mrr == res.metrics.aggregate(3).mrr
    assert set(final.cells) == {(3, 1), (3, 2), (3, 3), (3, ALL)}


def test_worker_count_does_not_change_metrics(run):
    kg, res = run
    a = evaluate_all(res.store, kg, CFG.replace(workers=1)).to_csv()
    b = evaluate_all(res.store, kg, CFG.replace(workers=4)).to_csv()
    assert a == b


def test_single_snapshot():
    kg = kg_from_id_triples([{"train": [(0, 0, 1), (1, 0, 2), (2, 0, 0)], "valid": [(0, 0, 2)],
                              "test": [(1, 0, 0)]}])
    res = lifelong_run(kg, CFG)
    assert set(res.metrics.cells) == {(1, 1), (1, ALL)}
    heat = export_importance_heatmap(kg, res.store, CFG)
    assert heat.shape == (1, 1) and heat[0, 0] == pytest.approx(1.0)


def test_heatmap_columns_sum_to_one(run):
    kg, res = run
    heat = export_importance_heatmap(kg, res.store, CFG)
    assert np.allclose(heat.sum(axis=0), 1.0, atol=1e-6)
    assert heatmap_csv(heat).splitlines()[0] == "space,Q1,Q2,Q3"


def test_compression_sweep(run):
    kg, res = run
    rows = compression_report(kg, res.store, CFG.replace(keep_dropped=True), [0.9, 0.97])
    ratios = [r["compression_ratio"] for r in rows]
    assert ratios == sorted(ratios)
    assert compression_csv(rows).count("\n") == 3


def test_run_manifest(tmp_path):
    data = write_run_manifest(tmp_path / "run.json", CFG, "abc", "def", {"x": 1})
    assert json.loads((tmp_path / "run.json").read_text()) == data
    assert data["seed"] == CFG.seed and data["config"]["dim"] == 8
