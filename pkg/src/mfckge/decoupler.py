"""Semantic decoupling of per-snapshot entity spaces.

After a space is trained, each explicit vector is compared against the same
entity's explicit vectors in earlier spaces. When the best cosine similarity
reaches ``theta`` the new vector is dropped and replaced by a pointer to the
most similar earlier one. Entities untouched by a snapshot get a pointer to
their nearest earlier explicit vector.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CorruptStore, IrreversibleError, ProtocolError
from .store import DROPPED, STATIC, EmbeddingStore, Pointer, nearest_explicit

CSV_HEADER = "snapshot,examined,dropped,retained,static_pointers,compression_ratio"


@dataclass
class DecouplingStats:
    snapshot: int
    examined: int = 0
    dropped: int = 0
    retained: int = 0
    static_pointers: int = 0
    compression_ratio: float = 1.0
    explicit_before: int = 0

    def csv_row(self) -> str:
        return (f"{self.snapshot},{self.examined},{self.dropped},{self.retained},"
                f"{self.static_pointers},{self.compression_ratio:.6f}")


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def most_similar_prior(store: EmbeddingStore, entity: int, i: int):
    """``(x, sim)`` of the most similar explicit vector in spaces ``1..i-1``.

    Ties go to the most recent space. Returns None without history.
    """
    current = store.space(i).explicit.get(entity)
    if current is None:
        raise ProtocolError(f"entity {entity} has no explicit entry at snapshot {i}")
    best = None
    for x in range(1, i):
        vec = store.spaces[x - 1].explicit.get(entity)
        if vec is None:
            continue
        sim = cosine(vec, current)
        if best is None or sim >= best[1]:
            best = (x, sim)
    return best


def compression_ratio(store: EmbeddingStore, through: int) -> float:
    """Explicit vectors kept over explicit vectors trained, spaces ``1..through``."""
    kept = trained = 0
    for s in store.spaces[:through]:
        n_drop = sum(1 for p in s.pointers.values() if p.kind == DROPPED)
        kept += len(s.explicit)
        trained += len(s.explicit) + n_drop
    return 1.0 if trained == 0 else kept / trained


def apply_semantic_decoupling(store: EmbeddingStore, i: int, theta: float) -> DecouplingStats:
    space = store.space(i)
    if not space.sealed:
        raise ProtocolError(f"space {i} must be sealed before decoupling")
    stats = DecouplingStats(snapshot=i, explicit_before=len(space.explicit))
    for e in sorted(space.explicit):
        match = most_similar_prior(store, e, i)
        if match is None:
            continue
        stats.examined += 1
        x, sim = match
        if sim >= theta:
            vec = space.explicit.pop(e)
            if store.keep_dropped:
                space.dropped_raw[e] = vec
            space.pointers[e] = Pointer(x, DROPPED)
            stats.dropped += 1
        else:
            stats.retained += 1
    store.touch()
    stats.compression_ratio = compression_ratio(store, i)
    return stats


def static_candidates(store: EmbeddingStore, i: int) -> list[int]:
    """Entities known before ``i`` with no entry at ``i`` but some earlier explicit vector."""
    space = store.space(i)
    out = []
    for e, first in sorted(store.first_appearance.items()):
        if first <= i - 1 and not space.has_entry(e) and nearest_explicit(store, e, i) is not None:
            out.append(e)
    return out


def assign_static_pointers(store: EmbeddingStore, i: int, entities) -> int:
    space = store.space(i)
    if not space.sealed:
        raise ProtocolError(f"space {i} must be sealed before assigning pointers")
    count = 0
    for e in entities:
        if space.has_entry(e):
            continue
        target = nearest_explicit(store, e, i)
        if target is None:
            raise CorruptStore(f"entity {e} has no explicit vector before snapshot {i}")
        space.pointers[e] = Pointer(target, STATIC)
        count += 1
    store.touch()
    return count


def recompress(store: EmbeddingStore, theta_new: float) -> list[DecouplingStats]:
    """Re-derive every pointer decision at a new threshold, snapshot by snapshot."""
    if not 0 < theta_new <= 1:
        raise ValueError("theta must lie in (0, 1]")
    original = store.theta_applied
    if original is not None and theta_new > original and not store.keep_dropped:
        raise IrreversibleError(
            f"theta {theta_new} > {original} needs the dropped raw vectors (train with --keep-dropped)")
    for s in store.spaces:
        for e in [e for e, p in s.pointers.items() if p.kind == STATIC]:
            del s.pointers[e]
        if store.keep_dropped:
            for e, vec in s.dropped_raw.items():
                s.explicit[e] = vec
                s.pointers.pop(e, None)
            s.dropped_raw = {}
    store.touch()

    out = []
    for s in store.spaces:
        i = s.index
        # earlier spaces are final; keep surviving drops single-hop
        for e, p in list(s.pointers.items()):
            if e not in store.spaces[p.target - 1].explicit:
                hop = store.spaces[p.target - 1].pointers.get(e)
                if hop is None:
                    raise CorruptStore(f"dangling pointer for entity {e} at snapshot {i}")
                s.pointers[e] = Pointer(hop.target, DROPPED)
        earlier_drops = len(s.pointers)
        stats = apply_semantic_decoupling(store, i, theta_new)
        stats.examined += earlier_drops
        stats.dropped += earlier_drops
        stats.explicit_before += earlier_drops
        stats.static_pointers = assign_static_pointers(store, i, static_candidates(store, i))
        out.append(stats)
    store.theta_applied = theta_new
    store.touch()
    return out
