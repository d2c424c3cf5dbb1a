"""Lifelong evaluation: filtered ranking metrics over accumulated test sets."""
from __future__ import annotations

import copy
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .decoupler import DecouplingStats, apply_semantic_decoupling, assign_static_pointers, recompress, static_candidates
from .inference import FilterIndex, Predictor, Query
from .kg import GrowingKG, accumulated_filter_set
from .store import EmbeddingStore
from .trainer import TrainReport, train_snapshot

log = logging.getLogger(__name__)

HITS_AT = (1, 3, 10)
METRICS_HEADER = "model_snapshot,test_snapshot,n_queries,mrr,hits1,hits3,hits10"
ALL = 0  # test_snapshot id of the aggregate row


@dataclass
class MetricsCell:
    model_snapshot: int
    test_snapshot: int
    n_queries: int = 0
    rr_sum: float = 0.0
    hits: dict = field(default_factory=lambda: {m: 0 for m in HITS_AT})
    skipped: int = 0  # malformed test facts, aggregate row only

    def add(self, rank: int):
        self.n_queries += 1
        self.rr_sum += 1.0 / rank
        for m in HITS_AT:
            if rank <= m:
                self.hits[m] += 1

    def merge(self, other: "MetricsCell"):
        self.n_queries += other.n_queries
        self.rr_sum += other.rr_sum
        for m in HITS_AT:
            self.hits[m] += other.hits[m]

    @property
    def mrr(self) -> float:
        return self.rr_sum / self.n_queries if self.n_queries else 0.0

    def hits_at(self, m: int) -> float:
        return self.hits[m] / self.n_queries if self.n_queries else 0.0

    def csv_row(self) -> str:
        test = "all" if self.test_snapshot == ALL else str(self.test_snapshot)
        return (f"{self.model_snapshot},{test},{self.n_queries},{self.mrr:.6f},"
                f"{self.hits_at(1):.6f},{self.hits_at(3):.6f},{self.hits_at(10):.6f}")


@dataclass
class MetricsMatrix:
    cells: dict = field(default_factory=dict)  # (model_snapshot, test_snapshot) -> MetricsCell

    def cell(self, i: int, j: int) -> MetricsCell:
        return self.cells[(i, j)]

    def aggregate(self, i: int) -> MetricsCell:
        return self.cells[(i, ALL)]

    def add_row(self, cells: list):
        for c in cells:
            self.cells[(c.model_snapshot, c.test_snapshot)] = c

    def to_csv(self) -> str:
        keys = sorted(self.cells, key=lambda k: (k[0], k[1] == ALL, k[1]))
        return METRICS_HEADER + "\n" + "".join(self.cells[k].csv_row() + "\n" for k in keys)


def queries_for(kg: GrowingKG, j: int, i: int):
    """Both query directions for every test fact of Q_j, evaluated at snapshot i."""
    ents, rels = kg.entities(i), kg.relations(i)
    out, skipped = [], 0
    for h, r, t in kg.split(j, "test"):
        h, r, t = int(h), int(r), int(t)
        if h not in ents or t not in ents or r not in rels:
            skipped += 1
            continue
        out.append((Query.tail(h, r, i), t))
        out.append((Query.head(r, t, i), h))
    return out, skipped


def evaluate_snapshot(store: EmbeddingStore, kg: GrowingKG, i: int, config: TrainConfig,
                      predictor: Predictor | None = None) -> list[MetricsCell]:
    """Filtered metrics of the model after snapshot i on every Q_j, j <= i."""
    predictor = predictor or Predictor(kg, store, config)
    filters = FilterIndex(accumulated_filter_set(kg, i))
    row, skipped = [], 0
    total = MetricsCell(i, ALL)
    for j in range(1, i + 1):
        queries, n_skip = queries_for(kg, j, i)
        skipped += n_skip
        cell = MetricsCell(i, j)
        for rank in _ranks(predictor, queries, filters, config.workers):
            cell.add(rank)
        row.append(cell)
        total.merge(cell)
    if skipped:
        log.warning("snapshot %d: skipped %d test facts outside E_%d/R_%d", i, skipped, i, i)
    total.skipped = skipped
    row.append(total)
    return row


def _ranks(predictor, queries, filters, workers):
    def one(item):
        q, gold = item
        return predictor.rank(q, gold, filters, m=0).rank

    if workers == 1 or len(queries) < 64:
        return [one(x) for x in queries]
    with ThreadPoolExecutor(max_workers=workers or None) as pool:
        return list(pool.map(one, queries, chunksize=32))


@dataclass
class LifelongResult:
    store: EmbeddingStore
    metrics: MetricsMatrix
    train_reports: list
    decoupling: list


def seal_and_decouple(store: EmbeddingStore, i: int, config: TrainConfig) -> DecouplingStats:
    """Semantic decoupling (unless ablated) followed by static pointers for space i."""
    if config.decoupling:
        stats = apply_semantic_decoupling(store, i, config.theta)
        store.theta_applied = config.theta
    else:
        stats = DecouplingStats(snapshot=i, explicit_before=len(store.space(i).explicit))
    stats.static_pointers = assign_static_pointers(store, i, static_candidates(store, i))
    return stats


def lifelong_run(kg: GrowingKG, config: TrainConfig, evaluate: bool = True,
                 store: EmbeddingStore | None = None, on_snapshot=None) -> LifelongResult:
    """Train, decouple and evaluate snapshot by snapshot."""
    store = store or EmbeddingStore(config.dim)
    store.keep_dropped = config.keep_dropped
    store.meta["config"] = config.to_dict()
    metrics = MetricsMatrix()
    reports: list[TrainReport] = []
    stats: list[DecouplingStats] = []
    for i in range(1, kg.n_snapshots + 1):
        reports.append(train_snapshot(store, kg, i, config))
        stats.append(seal_and_decouple(store, i, config))
        if evaluate:
            metrics.add_row(evaluate_snapshot(store, kg, i, config))
        if on_snapshot is not None:
            on_snapshot(i, store, metrics)
    return LifelongResult(store, metrics, reports, stats)


def evaluate_all(store: EmbeddingStore, kg: GrowingKG, config: TrainConfig, upto: int | None = None) -> MetricsMatrix:
    """Re-evaluate a trained store at its final snapshot only."""
    i = upto or store.n_snapshots
    metrics = MetricsMatrix()
    metrics.add_row(evaluate_snapshot(store, kg, i, config))
    return metrics


def export_importance_heatmap(kg: GrowingKG, store: EmbeddingStore, config: TrainConfig) -> np.ndarray:
    """Mean importance of space E_i (rows) over the queries of Q_j (columns)."""
    n = store.n_snapshots
    predictor = Predictor(kg, store, config)
    heat = np.zeros((n, n))
    for j in range(1, n + 1):
        queries, _ = queries_for(kg, j, n)
        if not queries:
            continue
        acc = np.zeros(n)
        for q, _gold in queries:
            acc += predictor.importance(q).beta
        heat[:, j - 1] = acc / len(queries)
    return heat


def heatmap_csv(heat: np.ndarray) -> str:
    n = heat.shape[0]
    lines = ["space," + ",".join(f"Q{j}" for j in range(1, n + 1))]
    for i in range(n):
        lines.append(f"E{i + 1}," + ",".join(f"{v:.6f}" for v in heat[i]))
    return "\n".join(lines) + "\n"


def compression_report(kg: GrowingKG, store: EmbeddingStore, config: TrainConfig, thetas) -> list[dict]:
    """Cumulative compression ratio and final aggregate MRR for each theta."""
    rows = []
    for theta in thetas:
        trial = copy.deepcopy(store)
        stats = recompress(trial, theta)
        cell = evaluate_all(trial, kg, config).aggregate(trial.n_snapshots)
        rows.append({"theta": float(theta), "compression_ratio": stats[-1].compression_ratio if stats else 1.0,
                     "dropped": sum(s.dropped for s in stats), "mrr": cell.mrr,
                     "hits1": cell.hits_at(1), "hits10": cell.hits_at(10)})
    return rows


def compression_csv(rows) -> str:
    out = ["theta,compression_ratio,dropped,mrr,hits1,hits10"]
    for r in rows:
        out.append(f"{r['theta']},{r['compression_ratio']:.6f},{r['dropped']},{r['mrr']:.6f},"
                   f"{r['hits1']:.6f},{r['hits10']:.6f}")
    return "\n".join(out) + "\n"


def write_run_manifest(path, config: TrainConfig, dataset_checksum: str, checkpoint_hash: str, extra=None):
    data = {"config": config.to_dict(), "seed": config.seed, "dataset_sha256": dataset_checksum,
            "checkpoint_sha256": checkpoint_hash}
    if extra:
        data.update(extra)
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True), encoding="utf-8")
    return data
