"""Semantic-aware link prediction over decoupled snapshot spaces.

For a query ``(h, r, ?)`` at snapshot ``i`` each space ``E_j`` (j <= i) gets an
importance ``beta_j``: the softmax over ``delta_j``, the mean of the top-k
cosine similarities between ``r`` and the relations incident to the anchor in
that snapshot's training delta. Candidates are scored in every space where
both anchor and candidate are representable, and the per-space scores are
combined with the (renormalised) importances.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .errors import ConfigError, ProtocolError
from .scoring import HEAD, TAIL, TransE
from .store import EmbeddingStore, resolve

# scores this close to the gold's (relative) count as ties; absorbs rounding
# differences between equivalent aggregation orders
TIE_TOL = 1e-9


@dataclass(frozen=True)
class Query:
    direction: str
    anchor: int
    relation: int
    snapshot: int

    @classmethod
    def tail(cls, h, r, i):
        return cls(TAIL, int(h), int(r), int(i))

    @classmethod
    def head(cls, r, t, i):
        return cls(HEAD, int(t), int(r), int(i))


@dataclass
class ImportanceProfile:
    delta: np.ndarray
    beta: np.ndarray


@dataclass
class RankOutcome:
    query: Query
    gold: int
    rank: int
    top: list = field(default_factory=list)

    @property
    def reciprocal_rank(self) -> float:
        return 1.0 / self.rank


# -- importance ------------------------------------------------------------

class IncidenceIndex:
    """Relations incident to each entity in each snapshot's training delta."""

    def __init__(self, kg):
        self.kg = kg
        self._by_snapshot: dict = {}

    def _build(self, j):
        as_head, as_tail = defaultdict(set), defaultdict(set)
        for h, r, t in self.kg.train_delta(j):
            as_head[int(h)].add(int(r))
            as_tail[int(t)].add(int(r))
        self._by_snapshot[j] = (as_head, as_tail)

    def relations(self, anchor, j, direction=TAIL, incidence="both") -> set:
        if j not in self._by_snapshot:
            self._build(j)
        as_head, as_tail = self._by_snapshot[j]
        if incidence == "both":
            return as_head.get(anchor, set()) | as_tail.get(anchor, set())
        # directional: a tail query's anchor acts as head, a head query's as tail
        return set(as_head.get(anchor, set()) if direction == TAIL else as_tail.get(anchor, set()))


def candidate_relations(anchor, j, kg, direction=TAIL, incidence="both") -> set:
    """Relations of training-delta triples of snapshot ``j`` touching ``anchor``."""
    out = set()
    for h, r, t in kg.train_delta(j):
        if incidence == "both":
            if h == anchor or t == anchor:
                out.add(int(r))
        elif (h if direction == TAIL else t) == anchor:
            out.add(int(r))
    return out


def relation_similarity_set(relations, query_relation, store: EmbeddingStore) -> list:
    mat = store.relation_matrix()
    q = mat[query_relation].astype(np.float64)
    qn = np.linalg.norm(q)
    out = []
    for rj in sorted(relations):
        v = mat[rj].astype(np.float64)
        vn = np.linalg.norm(v)
        out.append(0.0 if qn == 0 or vn == 0 else float(v @ q / (vn * qn)))
    return out


def topk_average(similarities, k: int) -> float:
    """Mean of the ``k`` largest values; all of them when fewer; 0 when empty."""
    if k < 1:
        raise ConfigError("k must be >= 1")
    vals = sorted(similarities, reverse=True)
    if not vals:
        return 0.0
    top = vals[:k]
    return float(sum(top) / len(top))


def softmax(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    z = np.exp(x - x.max())
    return z / z.sum()


def snapshot_importance(query: Query, k: int, kg, store: EmbeddingStore,
                        incidence="both", index: IncidenceIndex | None = None) -> ImportanceProfile:
    delta = np.zeros(query.snapshot)
    for j in range(1, query.snapshot + 1):
        if index is not None:
            rels = index.relations(query.anchor, j, query.direction, incidence)
        else:
            rels = candidate_relations(query.anchor, j, kg, query.direction, incidence)
        delta[j - 1] = topk_average(relation_similarity_set(rels, query.relation, store), k)
    return ImportanceProfile(delta=delta, beta=softmax(delta))


# -- scoring ---------------------------------------------------------------

def snapshot_score(query: Query, candidate: int, j: int, store: EmbeddingStore, p: int = 1):
    """Score of ``candidate`` from space ``j``, or None when not contributing."""
    a = resolve(store, query.anchor, j)
    e = resolve(store, candidate, j)
    if a is None or e is None:
        return None
    r = store.relations[query.relation]
    model = TransE(p)
    if query.direction == TAIL:
        return -model.score(a, r, e)
    return -model.score(e, r, a)


def aggregate_score(query: Query, candidate: int, profile: ImportanceProfile,
                    store: EmbeddingStore, p: int = 1, renorm: bool = True):
    """Importance-weighted score; None when no space contributes."""
    num = den = 0.0
    for j in range(1, query.snapshot + 1):
        s = snapshot_score(query, candidate, j, store, p)
        if s is None:
            continue
        num += profile.beta[j - 1] * s
        den += profile.beta[j - 1]
    if den == 0.0:
        return None
    return num / den if renorm else num


class FilterIndex:
    """Known answers per (direction, anchor, relation) from a set of true triples."""

    def __init__(self, triples):
        self._tails = defaultdict(set)
        self._heads = defaultdict(set)
        for h, r, t in triples:
            self._tails[(int(h), int(r))].add(int(t))
            self._heads[(int(r), int(t))].add(int(h))

    def answers(self, query: Query) -> set:
        if query.direction == TAIL:
            return self._tails.get((query.anchor, query.relation), set())
        return self._heads.get((query.relation, query.anchor), set())


class Predictor:
    """Vectorised scoring engine over a sealed store.

    Importance profiles are cached per (direction, anchor, relation, snapshot).
    """

    def __init__(self, kg, store: EmbeddingStore, config: TrainConfig | None = None):
        self.kg = kg
        self.store = store
        self.config = config or TrainConfig(dim=store.dim)
        self.model = TransE(self.config.norm)
        self.index = IncidenceIndex(kg)
        self._importance: dict = {}
        self._candidates: dict = {}

    def importance(self, query: Query) -> ImportanceProfile:
        key = (query.direction, query.anchor, query.relation, query.snapshot)
        prof = self._importance.get(key)
        if prof is None:
            prof = snapshot_importance(query, self.config.top_k, self.kg, self.store,
                                       self.config.incidence, self.index)
            self._importance[key] = prof
        return prof

    def weights(self, query: Query) -> np.ndarray:
        """The importances actually used for aggregation under the ablation flags."""
        i = query.snapshot
        if not self.config.decoupling:
            w = np.zeros(i)
            w[-1] = 1.0
            return w
        if not self.config.importance:
            return np.full(i, 1.0 / i)
        return self.importance(query).beta

    def candidate_ids(self, i: int) -> np.ndarray:
        ids = self._candidates.get(i)
        if ids is None:
            ids = np.array(sorted(self.kg.entities(i)), dtype=np.int64)
            self._candidates[i] = ids
        return ids

    def snapshot_scores(self, query: Query):
        """Per-space score rows ``(scores, contributing)`` over all entity ids."""
        n = self.store.n_entities
        rel = self.store.relations.get(query.relation)
        out = []
        for j in range(1, query.snapshot + 1):
            mat, mask = self.store.resolved_matrix(j)
            if rel is None or query.anchor >= len(mask) or not mask[query.anchor]:
                out.append((np.zeros(n), np.zeros(n, dtype=bool)))
                continue
            q = self.model.query_vector(mat[query.anchor], rel, query.direction)
            out.append((self.model.candidate_scores(q, mat), mask.copy()))
        return out

    def score_all(self, query: Query):
        """Aggregated scores over all entity ids and the mask of scorable ones."""
        n = self.store.n_entities
        w = self.weights(query)
        num = np.zeros(n)
        den = np.zeros(n)
        for j, (psi, on) in enumerate(self.snapshot_scores(query)):
            if w[j] == 0.0:
                continue
            num += np.where(on, w[j] * psi, 0.0)
            den += np.where(on, w[j], 0.0)
        ok = den > 0
        if self.config.renorm:
            scores = np.divide(num, den, out=np.zeros(n), where=ok)
        else:
            scores = num
        return scores, ok

    def rank(self, query: Query, gold: int, filters: FilterIndex | None = None, m: int = 10) -> RankOutcome:
        cands = self.candidate_ids(query.snapshot)
        if gold not in self.kg.entities(query.snapshot):
            raise ProtocolError(f"gold entity {gold} not in E_{query.snapshot}")
        scores, ok = self.score_all(query)
        keep = np.zeros(len(ok), dtype=bool)
        keep[cands] = True
        keep &= ok
        if filters is not None:
            for e in filters.answers(query):
                if e != gold and e < len(keep):
                    keep[e] = False
        others = keep.copy()
        if gold < len(others):
            others[gold] = False
        if gold < len(ok) and ok[gold]:
            g = scores[gold]
            rank = 1 + int(np.count_nonzero(scores[others] >= g - TIE_TOL * max(1.0, abs(g))))
        else:
            rank = 1 + int(np.count_nonzero(others))
        return RankOutcome(query, gold, rank, self.top(scores, keep, m))

    @staticmethod
    def top(scores, keep, m):
        ids = np.flatnonzero(keep)
        order = np.lexsort((ids, -scores[ids]))[:m]
        return [(int(ids[k]), float(scores[ids[k]])) for k in order]

    def explain(self, query: Query, m: int = 3) -> dict:
        cands = self.candidate_ids(query.snapshot)
        prof = self.importance(query)
        keep_c = np.zeros(self.store.n_entities, dtype=bool)
        keep_c[cands[cands < len(keep_c)]] = True
        per = []
        for j, (psi, on) in enumerate(self.snapshot_scores(query), start=1):
            per.append({
                "snapshot": j,
                "delta": float(prof.delta[j - 1]),
                "importance": float(self.weights(query)[j - 1]),
                "top": [{"entity": e, "score": s} for e, s in self.top(psi, on & keep_c, m)],
            })
        scores, ok = self.score_all(query)
        return {
            "direction": query.direction,
            "anchor": query.anchor,
            "relation": query.relation,
            "snapshot": query.snapshot,
            "beta": [float(b) for b in self.weights(query)],
            "per_snapshot": per,
            "final": [{"entity": e, "score": s} for e, s in self.top(scores, ok & keep_c, m)],
        }


def rank_query(query: Query, gold: int, filter_set, kg, store: EmbeddingStore,
               config: TrainConfig | None = None, m: int = 10) -> RankOutcome:
    filters = filter_set if isinstance(filter_set, FilterIndex) else FilterIndex(filter_set or ())
    return Predictor(kg, store, config).rank(query, gold, filters, m)


def explain_query(query: Query, kg, store: EmbeddingStore, config: TrainConfig | None = None, m: int = 3) -> dict:
    if query.anchor not in kg.entities(query.snapshot):
        raise ProtocolError(f"anchor {query.anchor} not in E_{query.snapshot}")
    return Predictor(kg, store, config).explain(query, m)
