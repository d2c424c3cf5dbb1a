"""Brute-force reference implementations used to cross-check the fast paths.

Everything here is written with plain Python loops over the raw store and
graph records. Nothing is imported from the scoring, inference, decoupling or
training modules, so a shared bug cannot hide in both places.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import ProtocolError


def _vec(v):
    return [float(x) for x in v]


def _cos(a, b) -> float:
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (na * nb)


def _lookup(store, entity, j):
    """Walk spaces j, j-1, ... 1 by hand; follow a pointer one hop."""
    first = store.first_appearance.get(entity)
    if first is None or first > j:
        return None
    for x in range(j, 0, -1):
        if x > len(store.spaces):
            continue
        space = store.spaces[x - 1]
        if entity in space.explicit:
            return _vec(space.explicit[entity])
        if entity in space.pointers:
            target = space.pointers[entity].target
            return _vec(store.spaces[target - 1].explicit[entity])
    return None


def _incident(kg, anchor, j, direction, incidence):
    rels = set()
    for h, r, t in kg.train_delta(j):
        h, r, t = int(h), int(r), int(t)
        if incidence == "both":
            if h == anchor or t == anchor:
                rels.add(r)
        elif direction == "tail" and h == anchor:
            rels.add(r)
        elif direction == "head" and t == anchor:
            rels.add(r)
    return rels


def brute_force_importance(query, kg, store, config):
    """Per-snapshot ``(delta, beta)`` lists computed from scratch."""
    rq = _vec(store.relations[query.relation])
    deltas = []
    for j in range(1, query.snapshot + 1):
        sims = [_cos(_vec(store.relations[r]), rq)
                for r in _incident(kg, query.anchor, j, query.direction, config.incidence)]
        sims.sort(reverse=True)
        top = sims[:config.top_k]
        deltas.append(sum(top) / len(top) if top else 0.0)
    m = max(deltas)
    ex = [math.exp(d - m) for d in deltas]
    z = sum(ex)
    return deltas, [x / z for x in ex]


def _weights(query, kg, store, config):
    i = query.snapshot
    if not config.decoupling:
        return [0.0] * (i - 1) + [1.0]
    if not config.importance:
        return [1.0 / i] * i
    return brute_force_importance(query, kg, store, config)[1]


def _dist(q, e, p):
    if p == 1:
        return sum(abs(a - b) for a, b in zip(q, e))
    return math.sqrt(sum((a - b) ** 2 for a, b in zip(q, e)))


def brute_force_score(query, candidate, kg, store, config, weights=None):
    """Aggregated score of one candidate, or None when no space contributes."""
    w = weights if weights is not None else _weights(query, kg, store, config)
    if query.relation not in store.relations:
        return None
    r = _vec(store.relations[query.relation])
    num = den = 0.0
    for j in range(1, query.snapshot + 1):
        if w[j - 1] == 0.0:
            continue
        a = _lookup(store, query.anchor, j)
        e = _lookup(store, candidate, j)
        if a is None or e is None:
            continue
        if query.direction == "tail":
            psi = -_dist([x + y for x, y in zip(a, r)], e, config.norm)
        else:
            psi = -_dist([x - y for x, y in zip(a, r)], e, config.norm)
        num += w[j - 1] * psi
        den += w[j - 1]
    if den == 0.0:
        return None
    return num / den if config.renorm else num


def brute_force_rank(query, gold, filter_set, kg, store, config) -> int:
    """Filtered pessimistic rank of ``gold`` among the entities of ``E_i``.

    Scores within a relative 1e-9 of the gold's count as ties.

    ``filter_set`` is an iterable of known true ``(h, r, t)`` triples.
    """
    ents = kg.entities(query.snapshot)
    if gold not in ents:
        raise ProtocolError(f"gold entity {gold} not in E_{query.snapshot}")
    known = set()
    for h, r, t in filter_set:
        h, r, t = int(h), int(r), int(t)
        if r != query.relation:
            continue
        if query.direction == "tail" and h == query.anchor:
            known.add(t)
        if query.direction == "head" and t == query.anchor:
            known.add(h)
    w = _weights(query, kg, store, config)
    gold_score = brute_force_score(query, gold, kg, store, config, w)
    rank = 1
    for e in sorted(ents):
        if e == gold or e in known:
            continue
        s = brute_force_score(query, e, kg, store, config, w)
        if s is None:
            continue
        if gold_score is None or s >= gold_score - 1e-9 * max(1.0, abs(gold_score)):
            rank += 1
    return rank


def exhaustive_most_similar(store, entity, i):
    """``(x, sim)`` maximising cosine over explicit vectors in spaces ``1..i-1``; later x wins ties."""
    current = _vec(store.spaces[i - 1].explicit[entity])
    best = None
    for x in range(1, i):
        space = store.spaces[x - 1]
        if entity not in space.explicit:
            continue
        sim = _cos(_vec(space.explicit[entity]), current)
        if best is None or sim >= best[1]:
            best = (x, sim)
    return best


def finite_diff_grad_check(loss_fn, params, eps: float = 1e-4, kink_fn=None, kink_guard: float = 1e-6,
                           floor: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn(params) -> (loss, grads)`` with ``params`` and ``grads`` dicts of
    float64 arrays. ``kink_fn(params)`` may return the signed distances to the
    loss's non-differentiable points (e.g. hinge margins); a coordinate whose
    probe points straddle a kink, or come within ``kink_guard`` of one, is skipped.
    ``floor`` bounds the denominator so rounding noise on zero gradients does
    not count as relative error.
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    _, grads = loss_fn(params)
    worst = 0.0
    for name, arr in params.items():
        flat = arr.reshape(-1)
        g = np.asarray(grads[name], dtype=np.float64).reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            up = loss_fn(params)[0]
            k_up = None if kink_fn is None else np.asarray(kink_fn(params))
            flat[idx] = orig - eps
            down = loss_fn(params)[0]
            k_down = None if kink_fn is None else np.asarray(kink_fn(params))
            flat[idx] = orig
            if kink_fn is not None and k_up.size:
                if np.any(np.sign(k_up) != np.sign(k_down)) or min(np.abs(k_up).min(), np.abs(k_down).min()) < kink_guard:
                    continue
            numeric = (up - down) / (2 * eps)
            denom = max(abs(numeric), abs(g[idx]), floor)
            worst = max(worst, abs(numeric - g[idx]) / denom)
    return worst
