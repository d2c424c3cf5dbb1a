"""Per-snapshot representation learning on the training delta only.

The objective is ``L_KGE + alpha * L_RA + eta * L_MAE``:

* ``L_KGE``  margin ranking loss of translational scores against corrupted triples,
* ``L_RA``   squared drift of each relation from its pre-training anchor,
* ``L_MAE``  squared distance of entities and relations to the mean of their
  reconstructions from incident triples.

All loss functions below are pure: they take float64 working matrices in the
snapshot's local index space and return ``(loss, grad_ent, grad_rel)``.
"""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import kernels
from .config import TrainConfig
from .errors import ResolutionError, TooFewEntities
from .kg import Triple
from .optim import Adam
from .scoring import transe_score  # noqa: F401  re-exported
from .store import EmbeddingStore, allocate_space, random_vectors, resolve

log = logging.getLogger(__name__)

MAX_NEGATIVE_RETRIES = 50


@dataclass
class TrainReport:
    snapshot: int
    kge: list = field(default_factory=list)
    ra: list = field(default_factory=list)
    mae: list = field(default_factory=list)
    total: list = field(default_factory=list)
    valid_mrr: list = field(default_factory=list)  # (epoch, mrr)
    epochs_run: int = 0
    best_epoch: int = 0
    n_train: int = 0
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


# -- negative sampling -----------------------------------------------------

def sample_negative(triple, candidate_entities, known_positives, rng, head_prob=0.5) -> Triple:
    """Corrupt head or tail uniformly, rejecting known positives.

    After ``MAX_NEGATIVE_RETRIES`` rejected draws the last draw is accepted.
    """
    cands = np.asarray(sorted(candidate_entities) if isinstance(candidate_entities, (set, frozenset))
                       else candidate_entities)
    if len(cands) < 2:
        raise TooFewEntities("negative sampling needs at least 2 candidate entities")
    h, r, t = (int(x) for x in triple)
    corrupt_head = rng.random() < head_prob
    neg = None
    for _ in range(MAX_NEGATIVE_RETRIES):
        e = int(cands[rng.integers(len(cands))])
        neg = Triple(e, r, t) if corrupt_head else Triple(h, r, e)
        if tuple(neg) not in known_positives:
            break
    return neg


class NegativeSampler:
    """Vectorised form of :func:`sample_negative` over local entity indices."""

    def __init__(self, triples: np.ndarray, n_entities: int, n_relations: int):
        if n_entities < 2:
            raise TooFewEntities("negative sampling needs at least 2 candidate entities")
        self.n_entities = n_entities
        self._base = np.int64(max(n_entities, 1))
        self._rbase = np.int64(max(n_relations, 1))
        self.positive_keys = np.unique(self._keys(triples))

    def _keys(self, triples):
        return (triples[:, 0] * self._rbase + triples[:, 1]) * self._base + triples[:, 2]

    def sample(self, batch: np.ndarray, rng, n_per_positive: int = 1) -> np.ndarray:
        batch = np.repeat(batch, n_per_positive, axis=0)
        heads = rng.random(len(batch)) < 0.5
        neg = batch.copy()
        pending = np.arange(len(batch))
        for _ in range(MAX_NEGATIVE_RETRIES):
            draws = rng.integers(self.n_entities, size=len(pending))
            rows = neg[pending]
            rows[:, 0] = np.where(heads[pending], draws, batch[pending, 0])
            rows[:, 2] = np.where(heads[pending], batch[pending, 2], draws)
            neg[pending] = rows
            clash = np.isin(self._keys(rows), self.positive_keys)
            pending = pending[clash]
            if not len(pending):
                break
        return neg


# -- losses ----------------------------------------------------------------

def kge_loss(ent, rel, pos, neg, margin, p):
    """Summed hinge ``max(0, f(pos) - f(neg) + margin)`` with subgradients."""
    gE = np.zeros_like(ent)
    gR = np.zeros_like(rel)
    loss = kernels.transe_hinge(ent, rel, pos, neg, margin, p, gE, gR)
    return loss, gE, gR


def hinge_margins(ent, rel, pos, neg, margin, p):
    """Per-pair hinge arguments; used to keep gradient checks off the kinks."""
    fp = np.linalg.norm(ent[pos[:, 0]] + rel[pos[:, 1]] - ent[pos[:, 2]], ord=p, axis=1)
    fn = np.linalg.norm(ent[neg[:, 0]] + rel[neg[:, 1]] - ent[neg[:, 2]], ord=p, axis=1)
    return fp - fn + margin


def ra_loss(rel, anchor_rows, anchors):
    """``sum ||r - anchor||^2`` over anchored relation rows."""
    gR = np.zeros_like(rel)
    if len(anchor_rows) == 0:
        return 0.0, gR
    diff = rel[anchor_rows] - anchors
    gR[anchor_rows] = 2.0 * diff
    return float(np.sum(diff * diff)), gR


class Neighborhood:
    """Incidence structure of one snapshot's training delta (local ids)."""

    def __init__(self, triples: np.ndarray, n_entities: int, n_relations: int):
        self.triples = triples
        n = len(triples)
        h, r, t = triples[:, 0], triples[:, 1], triples[:, 2]
        cols = np.arange(n)
        ones = np.ones(n)
        self.A_head = sp.csr_matrix((ones, (h, cols)), shape=(n_entities, n))
        self.A_tail = sp.csr_matrix((ones, (t, cols)), shape=(n_entities, n))
        self.B = sp.csr_matrix((ones, (r, cols)), shape=(n_relations, n))
        self.ent_deg = np.asarray(self.A_head.sum(axis=1)).ravel() + np.asarray(self.A_tail.sum(axis=1)).ravel()
        self.rel_deg = np.asarray(self.B.sum(axis=1)).ravel()

    def entity_context(self, ent, rel):
        """Mean of ``t - r`` (entity as head) and ``h + r`` (as tail); NaN-free, 0 where isolated."""
        h, r, t = self.triples[:, 0], self.triples[:, 1], self.triples[:, 2]
        total = self.A_head @ (ent[t] - rel[r]) + self.A_tail @ (ent[h] + rel[r])
        deg = np.where(self.ent_deg > 0, self.ent_deg, 1.0)
        return total / deg[:, None]

    def relation_context(self, ent):
        h, t = self.triples[:, 0], self.triples[:, 2]
        total = self.B @ (ent[t] - ent[h])
        deg = np.where(self.rel_deg > 0, self.rel_deg, 1.0)
        return total / deg[:, None]


def mae_reconstruct_entity(entity, triples, ent, rel):
    """Mean translational context of ``entity`` over ``triples``; None if isolated."""
    ctx = []
    for h, r, t in triples:
        if h == entity:
            ctx.append(ent[t] - rel[r])
        if t == entity:
            ctx.append(ent[h] + rel[r])
    if not ctx:
        return None
    return np.mean(ctx, axis=0)


def mae_reconstruct_relation(relation, triples, ent):
    ctx = [ent[t] - ent[h] for h, r, t in triples if r == relation]
    if not ctx:
        return None
    return np.mean(ctx, axis=0)


def mae_loss(ent, rel, hood: Neighborhood, ent_sel=None, rel_sel=None):
    """Reconstruction loss over selected entities/relations with context gradients.

    ``ent_sel``/``rel_sel`` are boolean masks (default: every parameter with
    at least one incident triple).
    """
    h, r, t = hood.triples[:, 0], hood.triples[:, 1], hood.triples[:, 2]
    e_on = hood.ent_deg > 0 if ent_sel is None else (ent_sel & (hood.ent_deg > 0))
    r_on = hood.rel_deg > 0 if rel_sel is None else (rel_sel & (hood.rel_deg > 0))

    diff_e = (ent - hood.entity_context(ent, rel)) * e_on[:, None]
    diff_r = (rel - hood.relation_context(ent)) * r_on[:, None]
    loss = float(np.sum(diff_e * diff_e) + np.sum(diff_r * diff_r))

    gE = 2.0 * diff_e
    gR = 2.0 * diff_r
    # back through the entity reconstructions
    w = -2.0 * diff_e / np.where(hood.ent_deg > 0, hood.ent_deg, 1.0)[:, None]
    wh, wt = w[h], w[t]
    gE += hood.A_tail @ wh + hood.A_head @ wt
    gR += hood.B @ (wt - wh)
    # back through the relation reconstructions
    u = (-2.0 * diff_r / np.where(hood.rel_deg > 0, hood.rel_deg, 1.0)[:, None])[r]
    gE += hood.A_tail @ u - hood.A_head @ u
    return loss, gE, gR


# -- training loop ---------------------------------------------------------

class _LocalView:
    """Maps one snapshot's trainable entities/relations to dense local rows."""

    def __init__(self, delta: np.ndarray):
        self.entities = np.unique(np.concatenate([delta[:, 0], delta[:, 2]])) if len(delta) else np.zeros(0, np.int64)
        self.relations = np.unique(delta[:, 1]) if len(delta) else np.zeros(0, np.int64)
        self.ent_row = {int(e): k for k, e in enumerate(self.entities)}
        self.rel_row = {int(r): k for k, r in enumerate(self.relations)}
        self.triples = np.stack([
            np.searchsorted(self.entities, delta[:, 0]),
            np.searchsorted(self.relations, delta[:, 1]),
            np.searchsorted(self.entities, delta[:, 2]),
        ], axis=1).astype(np.int64) if len(delta) else np.zeros((0, 3), np.int64)


def _validation_mrr(ent, rel, view, cand_matrix, cand_mask, cand_ids, valid, rel_lookup, p):
    """Raw MRR over both query directions, scoring against ``cand_matrix``."""
    mat = cand_matrix.copy()
    mat[view.entities] = ent.astype(np.float32)
    mat = mat[cand_ids]
    pos_of = {int(e): k for k, e in enumerate(cand_ids)}
    rr = []
    for hh, rr_id, tt in valid:
        rv = rel_lookup(int(rr_id))
        if rv is None or int(hh) not in pos_of or int(tt) not in pos_of:
            continue
        for anchor, gold, sign in ((hh, tt, 1.0), (tt, hh, -1.0)):
            q = mat[pos_of[int(anchor)]].astype(np.float64) + sign * rv
            d = kernels.distances(q, mat, p)
            # pessimistic: ties rank ahead of the gold entity
            rank = int(np.sum(d <= d[pos_of[int(gold)]]))
            rr.append(1.0 / rank)
    return float(np.mean(rr)) if rr else 0.0


def train_snapshot(store: EmbeddingStore, kg, i: int, config: TrainConfig) -> TrainReport:
    """Learn space ``i`` from the training delta of snapshot ``i`` and seal it."""
    started = time.perf_counter()
    rng = np.random.default_rng([config.seed, i])
    report = TrainReport(snapshot=i)

    delta = np.asarray(kg.train_delta(i), dtype=np.int64)
    view = _LocalView(delta)
    report.n_train = len(delta)

    store.register_entities(sorted(kg.delta(i).new_entities), i)
    inherit = [int(e) for e in view.entities if resolve(store, int(e), i - 1) is not None]
    allocate_space(store, i, view.entities.tolist(), inherit, rng)

    # relations new to the vocabulary get a vector even if only seen in valid/test
    for r in sorted(kg.delta(i).new_relations):
        if r not in store.relations:
            store.set_relation(r, random_vectors(rng, 1, store.dim)[0], i)

    if len(delta) == 0:
        warnings.warn(f"snapshot {i} has an empty training delta; nothing to train", RuntimeWarning, stacklevel=2)
        store.seal(i)
        report.wall_time = time.perf_counter() - started
        return report

    space = store.space(i)
    ent = np.stack([space.explicit[int(e)] for e in view.entities]).astype(np.float64)
    rel = np.stack([store.relations[int(r)] for r in view.relations]).astype(np.float64)
    anchor_rows = np.array([k for k, r in enumerate(view.relations)
                            if store.relation_updated.get(int(r), i) < i], dtype=np.int64)
    anchors = rel[anchor_rows].copy()

    hood = Neighborhood(view.triples, len(view.entities), len(view.relations))
    sampler = NegativeSampler(view.triples, len(view.entities), len(view.relations)) \
        if len(view.entities) >= 2 else None
    opt = Adam([ent, rel], lr=config.learning_rate)

    valid = np.asarray(kg.split(i, "valid"), dtype=np.int64)[: config.max_valid_queries]
    cand_matrix, cand_mask = store.resolved_matrix(i - 1) if i > 1 else (None, None)
    n_all = store.n_entities
    base = np.zeros((n_all, store.dim), dtype=np.float32)
    known = np.zeros(n_all, dtype=bool)
    if cand_matrix is not None:
        base[: len(cand_matrix)] = cand_matrix
        known[: len(cand_mask)] = cand_mask
    known[view.entities] = True
    cand_ids = np.flatnonzero(known)

    def rel_lookup(r):
        k = view.rel_row.get(r)
        if k is not None:
            return rel[k]
        v = store.relations.get(r)
        return None if v is None else v.astype(np.float64)

    best = (-1.0, ent.copy(), rel.copy(), 0)
    bad_checks = 0
    n = len(view.triples)
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        sums = np.zeros(4)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            pos = view.triples[idx]
            if sampler is not None:
                neg = sampler.sample(pos, rng, config.negatives_per_positive)
                pos_rep = np.repeat(pos, config.negatives_per_positive, axis=0)
                l_kge, gE, gR = kge_loss(ent, rel, pos_rep, neg, config.margin, config.norm)
            else:
                l_kge, gE, gR = 0.0, np.zeros_like(ent), np.zeros_like(rel)
            grads_e, grads_r = gE, gR
            l_ra = 0.0
            if config.alpha > 0:
                batch_rel = np.zeros(len(rel), dtype=bool)
                batch_rel[pos[:, 1]] = True
                rows = anchor_rows[batch_rel[anchor_rows]]
                l_ra, g = ra_loss(rel, rows, anchors[batch_rel[anchor_rows]])
                grads_r = grads_r + config.alpha * g
            l_mae = 0.0
            if config.eta > 0:
                ent_sel = np.zeros(len(ent), dtype=bool)
                ent_sel[pos[:, 0]] = True
                ent_sel[pos[:, 2]] = True
                rel_sel = np.zeros(len(rel), dtype=bool)
                rel_sel[pos[:, 1]] = True
                l_mae, gE2, gR2 = mae_loss(ent, rel, hood, ent_sel, rel_sel)
                grads_e = grads_e + config.eta * gE2
                grads_r = grads_r + config.eta * gR2
            total = l_kge + config.alpha * l_ra + config.eta * l_mae
            sums += (l_kge, l_ra, l_mae, total)
            opt.step([grads_e, grads_r])
        report.kge.append(float(sums[0]))
        report.ra.append(float(sums[1]))
        report.mae.append(float(sums[2]))
        report.total.append(float(sums[3]))
        report.epochs_run = epoch

        if len(valid) and (epoch % config.eval_every == 0 or epoch == config.max_epochs):
            mrr = _validation_mrr(ent, rel, view, base, known, cand_ids, valid, rel_lookup, config.norm)
            report.valid_mrr.append((epoch, mrr))
            if mrr > best[0]:
                best = (mrr, ent.copy(), rel.copy(), epoch)
                bad_checks = 0
            else:
                bad_checks += 1
                if bad_checks >= config.patience:
                    break

    if best[0] >= 0:
        _, ent, rel, report.best_epoch = best
    else:
        report.best_epoch = report.epochs_run
    for k, e in enumerate(view.entities):
        space.explicit[int(e)] = ent[k].astype(np.float32)
    for k, r in enumerate(view.relations):
        store.set_relation(int(r), rel[k], i)
    store.seal(i)
    report.wall_time = time.perf_counter() - started
    log.info("snapshot %d: %d triples, %d epochs (best %d)", i, n, report.epochs_run, report.best_epoch)
    return report


def relation_drift(store_before_relations: dict, store: EmbeddingStore, relations) -> float:
    """``sum ||r_now - r_before||_2`` over ``relations`` present in both."""
    total = 0.0
    for r in relations:
        if r in store_before_relations and r in store.relations:
            total += float(np.linalg.norm(store.relations[r].astype(np.float64)
                                          - store_before_relations[r].astype(np.float64)))
    return total
