import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfckge.config import DESK, TrainConfig
from mfckge.errors import TooFewEntities
from mfckge.evaluator import seal_and_decouple
from mfckge.kg import Triple, kg_from_id_triples
from mfckge.oracle import finite_diff_grad_check
from mfckge.store import EmbeddingStore
from mfckge.trainer import (NegativeSampler, Neighborhood, hinge_margins, kge_loss, mae_loss, mae_reconstruct_entity,
                            mae_reconstruct_relation, ra_loss, relation_drift, sample_negative, train_snapshot)

SMALL = DESK.replace(dim=8, max_epochs=30, eval_every=5)


# -- negative sampling -----------------------------------------------------

def test_forced_head_corruption_resamples_known_positive():
    rng = np.random.default_rng(0)
    for _ in range(20):
        neg = sample_negative((0, 0, 1), [0, 2], {(0, 0, 1)}, rng, head_prob=1.0)
        assert neg == Triple(2, 0, 1)


def test_too_few_candidates():
    with pytest.raises(TooFewEntities):
        sample_negative((0, 0, 1), [3], set(), np.random.default_rng(0))


def test_head_tail_balance():
    rng = np.random.default_rng(42)
    heads = tails = 0
    for _ in range(10_000):
        neg = sample_negative((0, 0, 1), range(50), set(), rng)
        heads += neg.head != 0
        tails += neg.tail != 1
    # draws that repeat the original entity change neither side and are not counted
    assert abs(heads / (heads + tails) - 0.5) <= 0.02


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_vectorised_sampler_avoids_positives(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 12))
    triples = np.unique(np.stack([rng.integers(0, n, 15), rng.integers(0, 3, 15), rng.integers(0, n, 15)], 1), axis=0)
    known = {tuple(map(int, t)) for t in triples}
    neg = NegativeSampler(triples, n, 3).sample(triples, rng, 2)
    pos = np.repeat(triples, 2, axis=0)
    assert np.array_equal(neg[:, 1], pos[:, 1])
    # exactly one side changes (or neither, when the draw repeats it)
    assert np.all((neg[:, 0] == pos[:, 0]) | (neg[:, 2] == pos[:, 2]))
    for row in neg:
        # with n >= 3 and few positives a clean corruption always exists within the retry budget
        assert tuple(map(int, row)) not in known or len(known) > n


# -- losses ----------------------------------------------------------------

def _hinge_fixture(fp, fn):
    ent = np.array([[0.0], [fp], [fn]])
    rel = np.zeros((1, 1))
    return ent, rel, np.array([[0, 0, 1]]), np.array([[0, 0, 2]])


def test_hinge_inactive():
    loss, gE, _ = kge_loss(*_hinge_fixture(0.2, 1.5), 1.0, 1)
    assert loss == 0.0 and not gE.any()


def test_hinge_active():
    loss, _, _ = kge_loss(*_hinge_fixture(1.5, 0.2), 1.0, 1)
    assert loss == pytest.approx(2.3)


def test_ra_cases():
    rel = np.array([[1.0, 2.0], [3.0, 3.0], [5.0, 5.0]])
    assert ra_loss(rel, np.array([0]), rel[[0]])[0] == 0.0
    loss, g = ra_loss(rel, np.array([1]), np.array([[2.0, 2.0]]))
    assert loss == pytest.approx(2.0)
    # relation 2 has no anchor
    assert not g[2].any() and not g[0].any()


def test_entity_reconstruction():
    ent = np.array([[0.0, 0.0], [4.0, 1.0], [1.0, 0.0], [3.0, 0.0]])
    rel = np.array([[1.0, 1.0], [0.0, 0.0]])
    assert np.allclose(mae_reconstruct_entity(0, [(0, 0, 1)], ent, rel), ent[1] - rel[0])
    # contexts t - r = [1, 0] and h + r = [3, 0]
    assert np.allclose(mae_reconstruct_entity(0, [(0, 1, 2), (3, 1, 0)], ent, rel), [2.0, 0.0])
    assert mae_reconstruct_entity(0, [(1, 0, 2)], ent, rel) is None


def test_relation_reconstruction():
    ent = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 2.0], [2.0, 0.0]])
    assert np.allclose(mae_reconstruct_relation(0, [(0, 0, 1)], ent), [1.0, 1.0])
    assert np.allclose(mae_reconstruct_relation(0, [(0, 0, 2), (0, 0, 3)], ent), [1.0, 1.0])
    assert mae_reconstruct_relation(1, [(0, 0, 1)], ent) is None


def test_mae_zero_and_unit():
    triples = np.array([[0, 0, 1]])
    hood = Neighborhood(triples, 2, 1)
    ent = np.array([[0.0, 0.0], [1.0, 1.0]])
    assert mae_loss(ent, np.array([[1.0, 1.0]]), hood)[0] == pytest.approx(0.0)
    ent = np.array([[1.0, 0.0], [0.0, 0.0]])
    loss, _, _ = mae_loss(ent, np.zeros((1, 2)), hood, np.array([True, False]), np.array([False]))
    assert loss == pytest.approx(1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_mae_matches_loop_reconstruction(seed):
    rng = np.random.default_rng(seed)
    n_e, n_r = int(rng.integers(2, 7)), int(rng.integers(1, 4))
    triples = np.stack([rng.integers(0, n_e, 8), rng.integers(0, n_r, 8), rng.integers(0, n_e, 8)], 1)
    ent, rel = rng.normal(size=(n_e, 3)), rng.normal(size=(n_r, 3))
    expect = 0.0
    rows = [tuple(map(int, t)) for t in triples]
    for e in range(n_e):
        rec = mae_reconstruct_entity(e, rows, ent, rel)
        if rec is not None:
            expect += float(np.sum((ent[e] - rec) ** 2))
    for r in range(n_r):
        rec = mae_reconstruct_relation(r, rows, ent)
        if rec is not None:
            expect += float(np.sum((rel[r] - rec) ** 2))
    assert mae_loss(ent, rel, Neighborhood(triples, n_e, n_r))[0] == pytest.approx(expect, rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("p", [1, 2])
def test_kge_gradient(p):
    rng = np.random.default_rng(p)
    pos = np.stack([rng.integers(0, 6, 5), rng.integers(0, 2, 5), rng.integers(0, 6, 5)], 1)
    neg = pos.copy()
    neg[:, 2] = rng.integers(0, 6, 5)
    params = {"ent": rng.normal(size=(6, 8)), "rel": rng.normal(size=(2, 8))}

    def fn(pr):
        loss, gE, gR = kge_loss(pr["ent"], pr["rel"], pos, neg, 2.0, p)
        return loss, {"ent": gE, "rel": gR}

    def kinks(pr):
        m = hinge_margins(pr["ent"], pr["rel"], pos, neg, 2.0, p)
        if p == 1:  # |x| kinks of the L1 norm
            d = np.concatenate([(pr["ent"][pos[:, 0]] + pr["rel"][pos[:, 1]] - pr["ent"][pos[:, 2]]).ravel(),
                                (pr["ent"][neg[:, 0]] + pr["rel"][neg[:, 1]] - pr["ent"][neg[:, 2]]).ravel()])
            m = np.concatenate([m, d])
        return m

    assert finite_diff_grad_check(fn, params, kink_fn=kinks) <= 1e-3


def test_mae_gradient():
    rng = np.random.default_rng(9)
    triples = np.stack([rng.integers(0, 5, 9), rng.integers(0, 3, 9), rng.integers(0, 5, 9)], 1)
    hood = Neighborhood(triples, 5, 3)
    sel_e = rng.random(5) < 0.7
    sel_r = rng.random(3) < 0.7

    def fn(pr):
        loss, gE, gR = mae_loss(pr["ent"], pr["rel"], hood, sel_e, sel_r)
        return loss, {"ent": gE, "rel": gR}

    params = {"ent": rng.normal(size=(5, 8)), "rel": rng.normal(size=(3, 8))}
    assert finite_diff_grad_check(fn, params) <= 1e-3


def test_grad_check_on_quadratic():
    a = np.array([[2.0, -1.0], [0.5, 3.0]])

    def fn(pr):
        x = pr["x"]
        return float(np.sum(a * x * x)), {"x": 2 * a * x}

    assert finite_diff_grad_check(fn, {"x": np.array([[1.0, 2.0], [-3.0, 0.5]])}) < 1e-6


# -- training ----------------------------------------------------------------

def test_single_triple_learns_margin():
    kg = kg_from_id_triples([{"train": [(0, 0, 1)], "test": [(1, 0, 0)]}])
    store = EmbeddingStore(8)
    cfg = SMALL.replace(margin=1.0, max_epochs=300, alpha=0.0, eta=0.0, learning_rate=1e-2)
    train_snapshot(store, kg, 1, cfg)
    h, t = store.space(1).explicit[0], store.space(1).explicit[1]
    r = store.relations[0]
    f = lambda a, b: np.linalg.norm(a + r - b)  # noqa: E731
    negatives = [(t, t), (h, h)]
    ok = sum(f(h, t) + 1.0 <= f(a, b) for a, b in negatives)
    assert ok / len(negatives) >= 0.9


def _three_snapshot_kg(seed=0):
    rng = np.random.default_rng(seed)
    snaps, pool = [], 10
    for i in range(3):
        pool += 5
        rows = [(int(rng.integers(pool)), int(rng.integers(2 + i)), int(rng.integers(pool))) for _ in range(80)]
        rows += [(e, 0, (e + 1) % pool) for e in range(pool)]
        snaps.append({"train": rows[:-10], "valid": rows[-10:-5], "test": rows[-5:]})
    return kg_from_id_triples(snaps)


def test_earlier_spaces_are_frozen():
    kg = _three_snapshot_kg()
    store = EmbeddingStore(SMALL.dim)
    sums = []
    for i in (1, 2, 3):
        train_snapshot(store, kg, i, SMALL)
        seal_and_decouple(store, i, SMALL)
        sums.append(store.checksums())
    assert sums[1][0] == sums[0][0]
    assert sums[2][:2] == sums[1][:2]


def test_report_and_early_stopping():
    kg = _three_snapshot_kg(1)
    store = EmbeddingStore(SMALL.dim)
    rep = train_snapshot(store, kg, 1, SMALL)
    assert len(rep.total) == rep.epochs_run
    best = max(m for _, m in rep.valid_mrr)
    assert (rep.best_epoch, best) in rep.valid_mrr


def test_deterministic_training():
    kg = _three_snapshot_kg(2)
    a, b = EmbeddingStore(SMALL.dim), EmbeddingStore(SMALL.dim)
    train_snapshot(a, kg, 1, SMALL)
    train_snapshot(b, kg, 1, SMALL)
    assert a.full_checksum() == b.full_checksum()


def test_stronger_alignment_reduces_drift():
    kg = _three_snapshot_kg(3)
    drifts = []
    for alpha in (0.01, 1.0):
        cfg = SMALL.replace(alpha=alpha)
        store = EmbeddingStore(cfg.dim)
        train_snapshot(store, kg, 1, cfg)
        seal_and_decouple(store, 1, cfg)
        before = {r: v.copy() for r, v in store.relations.items()}
        train_snapshot(store, kg, 2, cfg)
        drifts.append(relation_drift(before, store, kg.relations(1)))
    assert drifts[1] < drifts[0]


def test_empty_delta_warns():
    rows = {"train": [(0, 0, 1), (1, 0, 2)], "test": [(2, 0, 0)]}
    kg = kg_from_id_triples([rows, rows])
    store = EmbeddingStore(4)
    cfg = TrainConfig(dim=4, max_epochs=2)
    train_snapshot(store, kg, 1, cfg)
    with pytest.warns(RuntimeWarning):
        train_snapshot(store, kg, 2, cfg)
    assert store.space(2).sealed and not store.space(2).explicit
