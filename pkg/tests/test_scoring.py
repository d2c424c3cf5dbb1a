import numpy as np
import pytest

from mfckge import kernels
from mfckge import _pykernels
from mfckge.errors import DimError
from mfckge.scoring import HEAD, TAIL, TransE, transe_score


def test_exact_translation():
    assert transe_score([1, 0], [0.5, 0.5], [1.5, 0.5], p=1) == 0.0


def test_l1_by_hand():
    assert transe_score([0, 0], [1, 1], [0, 0], p=1) == 2.0


def test_l2_pythagoras():
    assert transe_score([3, 0], [0, 4], [0, 0], p=2) == pytest.approx(5.0)


def test_length_mismatch():
    with pytest.raises(DimError):
        transe_score([0, 0], [1, 1, 1], [0, 0])


@pytest.mark.parametrize("p", [1, 2])
def test_candidate_scores_agree_with_pointwise(p):
    rng = np.random.default_rng(p)
    mat = rng.normal(size=(7, 5)).astype(np.float32)
    h, r = rng.normal(size=5), rng.normal(size=5)
    m = TransE(p)
    tails = m.candidate_scores(m.query_vector(h, r, TAIL), mat)
    heads = m.candidate_scores(m.query_vector(h, r, HEAD), mat)
    for k in range(7):
        assert tails[k] == pytest.approx(-m.score(h, r, mat[k]), rel=1e-6)
        assert heads[k] == pytest.approx(-m.score(mat[k], r, h), rel=1e-6)


@pytest.mark.parametrize("p", [1, 2])
def test_backends_agree(p):
    rng = np.random.default_rng(7)
    ent, rel = rng.normal(size=(30, 6)), rng.normal(size=(4, 6))
    pos = np.stack([rng.integers(0, 30, 40), rng.integers(0, 4, 40), rng.integers(0, 30, 40)], 1)
    neg = pos.copy()
    neg[:, 2] = rng.integers(0, 30, 40)
    q, mat = rng.normal(size=6), rng.normal(size=(30, 6)).astype(np.float32)
    ref_d = kernels.distances(q, mat, p, impl=_pykernels)
    assert np.allclose(kernels.distances(q, mat, p), ref_d, rtol=1e-9)
    outs = []
    for impl in (None, _pykernels):
        ge, gr = np.zeros_like(ent), np.zeros_like(rel)
        loss = kernels.transe_hinge(ent, rel, pos, neg, 1.5, p, ge, gr, impl=impl)
        outs.append((loss, ge, gr))
    assert outs[0][0] == pytest.approx(outs[1][0], rel=1e-12)
    assert np.allclose(outs[0][1], outs[1][1]) and np.allclose(outs[0][2], outs[1][2])


def test_backend_is_reported():
    assert kernels.BACKEND in ("cython", "python")
