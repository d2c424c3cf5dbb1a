"""Pure numpy implementations of the hot kernels.

Signatures mirror ``_ckernels``; :mod:`mfckge.kernels` picks one at import.
"""
import numpy as np


def distances(query, matrix, p):
    """``||query - matrix[n]||_p`` for every row, accumulated in float64."""
    diff = matrix.astype(np.float64, copy=False) - query
    if p == 1:
        return np.abs(diff).sum(axis=1)
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def _norm_and_grad(diff, p):
    if p == 1:
        return np.abs(diff).sum(axis=1), np.sign(diff)
    norm = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    safe = np.where(norm > 0, norm, 1.0)
    return norm, diff / safe[:, None]


def transe_hinge(ent, rel, pos, neg, margin, p, grad_ent, grad_rel):
    """Margin ranking loss over (positive, negative) pairs.

    Adds subgradients into ``grad_ent``/``grad_rel`` in place and returns the
    summed loss. Pairs are processed in batch order.
    """
    if len(pos) == 0:
        return 0.0
    ph, pr, pt = pos[:, 0], pos[:, 1], pos[:, 2]
    nh, nr, nt = neg[:, 0], neg[:, 1], neg[:, 2]
    dpos = ent[ph] + rel[pr] - ent[pt]
    dneg = ent[nh] + rel[nr] - ent[nt]
    fpos, gpos = _norm_and_grad(dpos, p)
    fneg, gneg = _norm_and_grad(dneg, p)
    terms = fpos - fneg + margin
    active = terms > 0
    loss = float(np.sum(np.where(active, terms, 0.0)))
    if not active.any():
        return loss
    gpos = gpos[active]
    gneg = gneg[active]
    np.add.at(grad_ent, ph[active], gpos)
    np.add.at(grad_rel, pr[active], gpos)
    np.add.at(grad_ent, pt[active], -gpos)
    np.add.at(grad_ent, nh[active], -gneg)
    np.add.at(grad_rel, nr[active], -gneg)
    np.add.at(grad_ent, nt[active], gneg)
    return loss
