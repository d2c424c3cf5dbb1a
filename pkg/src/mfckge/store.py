"""Multi-space embedding storage.

Each trained snapshot owns an entity space whose entries are either explicit
float32 vectors or pointers to an explicit vector of the same entity in an
earlier space. Relations live in one latest-wins space.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorruptStore, DatasetIOError, ProtocolError, ResolutionError, VersionError

FORMAT_NAME = "mfckge-checkpoint"
FORMAT_VERSION = 1
DEFAULT_DIM = 200

DROPPED = "dropped"
STATIC = "static"


@dataclass(frozen=True)
class Pointer:
    target: int
    kind: str = STATIC


@dataclass
class SnapshotSpace:
    index: int
    dim: int
    explicit: dict = field(default_factory=dict)
    pointers: dict = field(default_factory=dict)
    # raw vectors discarded by semantic decoupling, kept only with --keep-dropped
    dropped_raw: dict = field(default_factory=dict)
    sealed: bool = False

    def entry(self, entity):
        vec = self.explicit.get(entity)
        if vec is not None:
            return vec
        return self.pointers.get(entity)

    def has_entry(self, entity) -> bool:
        return entity in self.explicit or entity in self.pointers

    def checksum(self) -> str:
        h = hashlib.sha256()
        for e in sorted(self.explicit):
            h.update(b"E%d:" % e)
            h.update(self.explicit[e].tobytes())
        for e in sorted(self.pointers):
            p = self.pointers[e]
            h.update(b"P%d:%d:%s" % (e, p.target, p.kind.encode()))
        return h.hexdigest()


class EmbeddingStore:
    def __init__(self, dim: int = DEFAULT_DIM):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.spaces: list[SnapshotSpace] = []
        self.relations: dict[int, np.ndarray] = {}
        self.relation_updated: dict[int, int] = {}
        self.first_appearance: dict[int, int] = {}
        self.theta_applied: float | None = None
        self.keep_dropped = False
        self.meta: dict = {}
        self._version = 0
        self._cache: dict = {}

    # -- bookkeeping ---------------------------------------------------
    def touch(self):
        """Invalidate derived caches after any mutation."""
        self._version += 1
        self._cache.clear()

    @property
    def n_snapshots(self) -> int:
        return len(self.spaces)

    @property
    def n_entities(self) -> int:
        return 1 + max(self.first_appearance, default=-1)

    def space(self, i: int) -> SnapshotSpace:
        if not 1 <= i <= len(self.spaces):
            raise IndexError(f"no space for snapshot {i}")
        return self.spaces[i - 1]

    def register_entities(self, entities, i: int):
        for e in entities:
            self.first_appearance.setdefault(int(e), i)
        self.touch()

    def set_relation(self, rel: int, vec, i: int):
        self.relations[int(rel)] = np.asarray(vec, dtype=np.float32).copy()
        self.relation_updated[int(rel)] = i
        self.touch()

    def seal(self, i: int):
        self.space(i).sealed = True
        self.touch()

    def checksums(self) -> list[str]:
        return [s.checksum() for s in self.spaces]

    def full_checksum(self) -> str:
        h = hashlib.sha256()
        for c in self.checksums():
            h.update(c.encode())
        for r in sorted(self.relations):
            h.update(b"R%d:%d:" % (r, self.relation_updated[r]))
            h.update(self.relations[r].tobytes())
        for e in sorted(self.first_appearance):
            h.update(b"F%d:%d" % (e, self.first_appearance[e]))
        return h.hexdigest()

    # -- derived views -------------------------------------------------
    def relation_matrix(self) -> np.ndarray:
        key = ("relmat",)
        if key not in self._cache:
            n = 1 + max(self.relations, default=-1)
            mat = np.zeros((n, self.dim), dtype=np.float32)
            for r, v in self.relations.items():
                mat[r] = v
            self._cache[key] = mat
        return self._cache[key]

    def resolved_matrix(self, i: int):
        """All entities resolved at snapshot ``i`` as ``(matrix, mask)``.

        ``mask[e]`` is False where ``e`` is unrepresentable at ``i``.
        """
        key = ("resolved", i)
        if key not in self._cache:
            n = self.n_entities
            mat = np.zeros((n, self.dim), dtype=np.float32)
            mask = np.zeros(n, dtype=bool)
            for e in range(n):
                v = resolve(self, e, i)
                if v is not None:
                    mat[e] = v
                    mask[e] = True
            mat.setflags(write=False)
            mask.setflags(write=False)
            self._cache[key] = (mat, mask)
        return self._cache[key]


def resolve(store: EmbeddingStore, entity: int, i: int):
    """Vector representing ``entity`` at snapshot ``i``, or None if unrepresentable."""
    first = store.first_appearance.get(entity)
    if first is None or first > i:
        return None
    for j in range(min(i, len(store.spaces)), 0, -1):
        entry = store.spaces[j - 1].entry(entity)
        if entry is None:
            continue
        if isinstance(entry, Pointer):
            if not 1 <= entry.target < j:
                raise CorruptStore(f"pointer of entity {entity} at {j} targets {entry.target}")
            vec = store.spaces[entry.target - 1].explicit.get(entity)
            if vec is None:
                raise CorruptStore(f"dangling pointer: entity {entity} at {j} -> {entry.target}")
            return vec
        return entry
    return None


def nearest_explicit(store: EmbeddingStore, entity: int, before: int):
    """Largest j < ``before`` where ``entity`` is explicit, or None."""
    for j in range(min(before - 1, len(store.spaces)), 0, -1):
        if entity in store.spaces[j - 1].explicit:
            return j
    return None


def init_bound(dim: int) -> float:
    return 6.0 / np.sqrt(dim)


def random_vectors(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    b = init_bound(dim)
    return rng.uniform(-b, b, size=(n, dim)).astype(np.float32)


def allocate_space(store: EmbeddingStore, i: int, trainable_entities, inherit_from_prior, rng) -> SnapshotSpace:
    """Open space ``i`` with explicit entries for every trainable entity.

    Inherited entities copy their vector resolved at ``i - 1``; the rest are
    drawn uniformly from ``[-6/sqrt(dim), 6/sqrt(dim)]``.
    """
    if len(store.spaces) != i - 1:
        raise ProtocolError(f"cannot allocate space {i}: store holds {len(store.spaces)} spaces")
    if store.spaces and not store.spaces[-1].sealed:
        raise ProtocolError(f"space {i - 1} is not sealed")
    inherit = set(int(e) for e in inherit_from_prior)
    trainable = sorted(set(int(e) for e in trainable_entities))
    if not inherit <= set(trainable):
        raise ValueError("inherit_from_prior must be a subset of trainable_entities")
    space = SnapshotSpace(index=i, dim=store.dim)
    fresh = [e for e in trainable if e not in inherit]
    draws = random_vectors(rng, len(fresh), store.dim)
    for e, v in zip(fresh, draws):
        space.explicit[e] = v
    for e in sorted(inherit):
        vec = resolve(store, e, i - 1)
        if vec is None:
            raise ResolutionError(f"entity {e} cannot be resolved at snapshot {i - 1}")
        space.explicit[e] = vec.copy()
    store.spaces.append(space)
    for e in trainable:
        store.first_appearance.setdefault(e, i)
    store.touch()
    return space


def relation_embedding(store: EmbeddingStore, relation: int) -> np.ndarray:
    try:
        return store.relations[relation]
    except KeyError:
        raise KeyError(f"unknown relation {relation}") from None


# -- checkpoint IO ---------------------------------------------------------

def _write_matrix(path: Path, rows) -> dict:
    data = np.ascontiguousarray(np.stack(rows).astype("<f4")).tobytes()
    path.write_bytes(data)
    return {"file": path.name, "bytes": len(data), "sha256": hashlib.sha256(data).hexdigest()}


def _read_matrix(root: Path, info: dict, rows: int, dim: int) -> np.ndarray:
    path = root / info["file"]
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DatasetIOError(f"cannot read {path}: {exc}") from exc
    if len(data) != info["bytes"]:
        raise DatasetIOError(f"{path} is truncated: {len(data)} of {info['bytes']} bytes")
    if info["bytes"] != rows * dim * 4:
        raise VersionError(f"{path}: {rows} rows x dim {dim} disagrees with {info['bytes']} bytes")
    return np.frombuffer(data, dtype="<f4").reshape(rows, dim).astype(np.float32)


def save_checkpoint(store: EmbeddingStore, path) -> Path:
    root = Path(path)
    os.makedirs(root, exist_ok=True)
    for stale in root.glob("*.bin"):
        stale.unlink()
    spaces = []
    for s in store.spaces:
        ids = sorted(s.explicit)
        entries = {str(e): {"offset": k} for k, e in enumerate(ids)}
        for e in sorted(s.pointers):
            entries[str(e)] = {"pointer": s.pointers[e].target, "kind": s.pointers[e].kind}
        rec = {"index": s.index, "sealed": s.sealed, "rows": len(ids), "entries": entries}
        if ids:
            rec["matrix"] = _write_matrix(root / f"space_{s.index}.bin", [s.explicit[e] for e in ids])
        if s.dropped_raw:
            dids = sorted(s.dropped_raw)
            rec["dropped"] = {str(e): k for k, e in enumerate(dids)}
            rec["dropped_matrix"] = _write_matrix(root / f"dropped_{s.index}.bin", [s.dropped_raw[e] for e in dids])
        spaces.append(rec)
    rids = sorted(store.relations)
    relations = {"rows": len(rids),
                 "entries": {str(r): {"offset": k, "updated": store.relation_updated[r]} for k, r in enumerate(rids)}}
    if rids:
        relations["matrix"] = _write_matrix(root / "relations.bin", [store.relations[r] for r in rids])
    manifest = {
        "format": FORMAT_NAME,
        "format_version": FORMAT_VERSION,
        "dim": store.dim,
        "n_snapshots": store.n_snapshots,
        "n_entities": store.n_entities,
        "n_relations": len(rids),
        "theta_applied": store.theta_applied,
        "keep_dropped": store.keep_dropped,
        "first_appearance": {str(e): i for e, i in sorted(store.first_appearance.items())},
        "spaces": spaces,
        "relations": relations,
        "meta": store.meta,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8")
    return root


def load_checkpoint(path) -> EmbeddingStore:
    root = Path(path)
    try:
        manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise DatasetIOError(f"no manifest.json in {root}") from exc
    if manifest.get("format") != FORMAT_NAME or manifest.get("format_version") != FORMAT_VERSION:
        raise VersionError(f"unsupported checkpoint format {manifest.get('format')!r} "
                           f"v{manifest.get('format_version')}")
    dim = manifest["dim"]
    if not isinstance(dim, int) or dim <= 0:
        raise VersionError(f"invalid dim {dim!r}")
    store = EmbeddingStore(dim)
    store.theta_applied = manifest.get("theta_applied")
    store.keep_dropped = bool(manifest.get("keep_dropped", False))
    store.meta = manifest.get("meta", {})
    store.first_appearance = {int(e): int(i) for e, i in manifest["first_appearance"].items()}
    for rec in manifest["spaces"]:
        s = SnapshotSpace(index=rec["index"], dim=dim, sealed=rec["sealed"])
        mat = _read_matrix(root, rec["matrix"], rec["rows"], dim) if rec["rows"] else None
        for e, ent in rec["entries"].items():
            if "offset" in ent:
                s.explicit[int(e)] = mat[ent["offset"]].copy()
            else:
                s.pointers[int(e)] = Pointer(int(ent["pointer"]), ent.get("kind", STATIC))
        if "dropped" in rec:
            dmat = _read_matrix(root, rec["dropped_matrix"], len(rec["dropped"]), dim)
            s.dropped_raw = {int(e): dmat[k].copy() for e, k in rec["dropped"].items()}
        store.spaces.append(s)
    if len(store.spaces) != manifest["n_snapshots"]:
        raise VersionError("n_snapshots disagrees with the space table")
    rel = manifest["relations"]
    if rel["rows"]:
        rmat = _read_matrix(root, rel["matrix"], rel["rows"], dim)
        for r, ent in rel["entries"].items():
            store.relations[int(r)] = rmat[ent["offset"]].copy()
            store.relation_updated[int(r)] = int(ent["updated"])
    store.touch()
    return store


def stores_equal(a: EmbeddingStore, b: EmbeddingStore) -> bool:
    """Bit-level equality of two stores."""
    if a.dim != b.dim or a.first_appearance != b.first_appearance or len(a.spaces) != len(b.spaces):
        return False
    if a.relation_updated != b.relation_updated or a.theta_applied != b.theta_applied:
        return False
    for r in a.relations:
        if r not in b.relations or a.relations[r].tobytes() != b.relations[r].tobytes():
            return False
    for sa, sb in zip(a.spaces, b.spaces):
        if sa.checksum() != sb.checksum() or sa.sealed != sb.sealed:
            return False
        if sorted(sa.dropped_raw) != sorted(sb.dropped_raw):
            return False
        if any(sa.dropped_raw[e].tobytes() != sb.dropped_raw[e].tobytes() for e in sa.dropped_raw):
            return False
    return True


def checkpoint_digest(path) -> str:
    """Content hash of a checkpoint directory: the manifest pins every data file by sha256."""
    return hashlib.sha256((Path(path) / "manifest.json").read_bytes()).hexdigest()
