"""Growing knowledge graphs: loading, vocabularies, deltas and filter sets.

A growing KG is an ordered list of snapshots. Each snapshot holds its own
train/valid/test triples; entity and relation vocabularies are cumulative.
Snapshot ordinals are 1-based everywhere in the public API, while the
on-disk directories are numbered from 0.
"""
from __future__ import annotations

import enum
import hashlib
import logging
import os
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .errors import DatasetIOError, EmptySnapshot, InvariantViolation, ParseError

log = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


class TripleClass(enum.Enum):
    TOTALLY_NEW = "TotallyNew"
    PARTIALLY_NEW = "PartiallyNew"
    STATIC = "Static"


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.int64).reshape(-1, 3)
    arr.setflags(write=False)
    return arr


def as_triples(arr: np.ndarray) -> list[Triple]:
    return [Triple(int(h), int(r), int(t)) for h, r, t in arr]


@dataclass(frozen=True, eq=False)
class Snapshot:
    index: int
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    entities: frozenset
    relations: frozenset

    def split(self, name: str) -> np.ndarray:
        if name not in SPLITS:
            raise KeyError(name)
        return getattr(self, name)

    def all_triples(self) -> np.ndarray:
        return np.concatenate([self.train, self.valid, self.test])


@dataclass(frozen=True, eq=False)
class SnapshotDelta:
    index: int
    new_entities: frozenset
    new_relations: frozenset
    new_facts: np.ndarray
    train_delta: np.ndarray


class GrowingKG:
    """An immutable sequence of snapshots plus label side tables."""

    def __init__(self, snapshots, entity_labels=None, relation_labels=None):
        self._snapshots = list(snapshots)
        if entity_labels is None:
            n = 1 + max((max(s.entities, default=-1) for s in self._snapshots), default=-1)
            entity_labels = [str(k) for k in range(n)]
        if relation_labels is None:
            n = 1 + max((max(s.relations, default=-1) for s in self._snapshots), default=-1)
            relation_labels = [str(k) for k in range(n)]
        self.entity_labels = tuple(entity_labels)
        self.relation_labels = tuple(relation_labels)
        self.dropped_overlaps = 0

    # -- structure -----------------------------------------------------
    @property
    def n_snapshots(self) -> int:
        return len(self._snapshots)

    def __len__(self):
        return len(self._snapshots)

    def _check(self, i: int):
        if not 1 <= i <= len(self._snapshots):
            raise IndexError(f"snapshot {i} out of range 1..{len(self._snapshots)}")

    def snapshot(self, i: int) -> Snapshot:
        self._check(i)
        return self._snapshots[i - 1]

    def split(self, i: int, name: str) -> np.ndarray:
        return self.snapshot(i).split(name)

    def entities(self, i: int) -> frozenset:
        return self.snapshot(i).entities

    def relations(self, i: int) -> frozenset:
        return self.snapshot(i).relations

    @property
    def n_entities(self) -> int:
        return len(self.entity_labels)

    @property
    def n_relations(self) -> int:
        return len(self.relation_labels)

    # -- deltas --------------------------------------------------------
    @cached_property
    def _deltas(self) -> list[SnapshotDelta]:
        return compute_deltas(self)

    def delta(self, i: int) -> SnapshotDelta:
        self._check(i)
        return self._deltas[i - 1]

    def train_delta(self, i: int) -> np.ndarray:
        return self.delta(i).train_delta

    @cached_property
    def first_appearance(self) -> dict[int, int]:
        out = {}
        for d in self._deltas:
            for e in d.new_entities:
                out[e] = d.index
        return out

    @cached_property
    def relation_first_appearance(self) -> dict[int, int]:
        out = {}
        for d in self._deltas:
            for r in d.new_relations:
                out[r] = d.index
        return out

    # -- labels --------------------------------------------------------
    @cached_property
    def _entity_index(self):
        return {lab: k for k, lab in enumerate(self.entity_labels)}

    @cached_property
    def _relation_index(self):
        return {lab: k for k, lab in enumerate(self.relation_labels)}

    def entity_id(self, label: str) -> int:
        return self._entity_index[label]

    def relation_id(self, label: str) -> int:
        return self._relation_index[label]

    def checksum(self) -> str:
        h = hashlib.sha256()
        for s in self._snapshots:
            for name in SPLITS:
                h.update(name.encode())
                h.update(s.split(name).tobytes())
        h.update("\n".join(self.entity_labels).encode())
        h.update("\n".join(self.relation_labels).encode())
        return h.hexdigest()


def compute_deltas(kg: GrowingKG) -> list[SnapshotDelta]:
    """Per-snapshot additions over the previous snapshot.

    ``train_delta`` keeps the training triples of snapshot i that never
    occurred in any split of an earlier snapshot.
    """
    out = []
    prev_e: frozenset = frozenset()
    prev_r: frozenset = frozenset()
    seen: set = set()
    for i in range(1, kg.n_snapshots + 1):
        s = kg.snapshot(i)
        if not prev_e <= s.entities or not prev_r <= s.relations:
            raise InvariantViolation(f"vocabulary of snapshot {i} does not contain snapshot {i - 1}'s")
        new_facts = []
        local = set()
        for row in s.all_triples():
            key = (int(row[0]), int(row[1]), int(row[2]))
            if key not in seen and key not in local:
                local.add(key)
                new_facts.append(key)
        train_delta = [tuple(map(int, row)) for row in s.train if tuple(map(int, row)) not in seen]
        out.append(SnapshotDelta(
            index=i,
            new_entities=s.entities - prev_e,
            new_relations=s.relations - prev_r,
            new_facts=_frozen(np.array(new_facts, dtype=np.int64)),
            train_delta=_frozen(np.array(train_delta, dtype=np.int64)),
        ))
        seen |= local
        prev_e, prev_r = s.entities, s.relations
    return out


def classify_triple(t, prior_entities, prior_relations, prior_facts) -> TripleClass:
    h, r, tl = t
    if (h, r, tl) in prior_facts:
        return TripleClass.STATIC
    if h not in prior_entities and tl not in prior_entities and r not in prior_relations:
        return TripleClass.TOTALLY_NEW
    return TripleClass.PARTIALLY_NEW


def accumulated_filter_set(kg: GrowingKG, i: int) -> frozenset:
    """All true (h, r, t) triples from every split of snapshots 1..i."""
    if not 1 <= i <= kg.n_snapshots:
        raise IndexError(f"snapshot {i} out of range 1..{kg.n_snapshots}")
    out = set()
    for j in range(1, i + 1):
        for row in kg.snapshot(j).all_triples():
            out.add(Triple(int(row[0]), int(row[1]), int(row[2])))
    return frozenset(out)


# -- building & IO --------------------------------------------------------

class KGBuilder:
    """Interns labels in first-seen order while snapshots are appended."""

    def __init__(self):
        self.entity_labels: list[str] = []
        self.relation_labels: list[str] = []
        self._e: dict[str, int] = {}
        self._r: dict[str, int] = {}
        self.snapshots: list[Snapshot] = []
        self.dropped_overlaps = 0

    def _ent(self, lab):
        k = self._e.get(lab)
        if k is None:
            k = self._e[lab] = len(self.entity_labels)
            self.entity_labels.append(lab)
        return k

    def _rel(self, lab):
        k = self._r.get(lab)
        if k is None:
            k = self._r[lab] = len(self.relation_labels)
            self.relation_labels.append(lab)
        return k

    def add_snapshot(self, splits: dict[str, Iterable[tuple[str, str, str]]]):
        ents = set(self.snapshots[-1].entities) if self.snapshots else set()
        rels = set(self.snapshots[-1].relations) if self.snapshots else set()
        arrays = {}
        taken: set = set()
        for name in SPLITS:
            rows, local = [], set()
            for h, r, t in splits.get(name, ()):
                key = (self._ent(h), self._rel(r), self._ent(t))
                if key in local:
                    continue
                local.add(key)
                if key in taken:
                    self.dropped_overlaps += 1
                    continue
                rows.append(key)
                ents.update((key[0], key[2]))
                rels.add(key[1])
            taken |= local
            arrays[name] = _frozen(np.array(rows, dtype=np.int64))
        idx = len(self.snapshots) + 1
        if not sum(len(a) for a in arrays.values()):
            raise EmptySnapshot(f"snapshot {idx} has no triples")
        self.snapshots.append(Snapshot(idx, arrays["train"], arrays["valid"], arrays["test"],
                                       frozenset(ents), frozenset(rels)))

    def build(self) -> GrowingKG:
        kg = GrowingKG(self.snapshots, self.entity_labels, self.relation_labels)
        kg.dropped_overlaps = self.dropped_overlaps
        if self.dropped_overlaps:
            log.warning("dropped %d triples repeated across splits of one snapshot", self.dropped_overlaps)
        return kg


def _read_triples(path: Path):
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise DatasetIOError(f"missing dataset file {path}") from exc
    except OSError as exc:
        raise DatasetIOError(f"cannot read {path}: {exc}") from exc
    out = []
    for n, line in enumerate(text.split("\n"), start=1):
        line = line.rstrip("\r")
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            fields = line.split()
        if len(fields) != 3 or not all(fields):
            raise ParseError(path, n, f"expected 3 tab-separated fields, got {line!r}")
        out.append(tuple(fields))
    return out


def snapshot_dirs(root) -> list[Path]:
    root = Path(root)
    if not root.is_dir():
        raise DatasetIOError(f"dataset root {root} is not a directory")
    numbered = sorted((int(p.name), p) for p in root.iterdir() if p.is_dir() and p.name.isdigit())
    if not numbered:
        raise DatasetIOError(f"no snapshot directories under {root}")
    for expect, (k, _) in enumerate(numbered):
        if k != expect:
            raise DatasetIOError(f"snapshot directories must be numbered 0..n-1; missing {expect}")
    return [p for _, p in numbered]


def load_growing_kg(dataset_root) -> GrowingKG:
    builder = KGBuilder()
    for d in snapshot_dirs(dataset_root):
        splits = {name: _read_triples(d / f"{name}.txt") for name in SPLITS}
        try:
            builder.add_snapshot(splits)
        except EmptySnapshot as exc:
            raise EmptySnapshot(f"{d}: {exc}") from None
    return builder.build()


def write_growing_kg(kg: GrowingKG, root) -> Path:
    root = Path(root)
    for i in range(1, kg.n_snapshots + 1):
        d = root / str(i - 1)
        os.makedirs(d, exist_ok=True)
        for name in SPLITS:
            lines = [
                f"{kg.entity_labels[h]}\t{kg.relation_labels[r]}\t{kg.entity_labels[t]}\n"
                for h, r, t in kg.split(i, name)
            ]
            (d / f"{name}.txt").write_text("".join(lines), encoding="utf-8")
    return root


def kg_from_id_triples(snapshots: list[dict[str, list]]) -> GrowingKG:
    """Build a KG from integer triples, labelling ids by their own value.

    Handy for fixtures where ids should stay exactly as written.
    """
    builder = KGBuilder()
    all_e = sorted({x for s in snapshots for rows in s.values() for h, _, t in rows for x in (h, t)})
    all_r = sorted({r for s in snapshots for rows in s.values() for _, r, _ in rows})
    # pre-intern so ids equal labels when the id sets are dense
    if all_e == list(range(len(all_e))):
        for e in all_e:
            builder._ent(str(e))
    if all_r == list(range(len(all_r))):
        for r in all_r:
            builder._rel(str(r))
    for s in snapshots:
        builder.add_snapshot({k: [(str(h), str(r), str(t)) for h, r, t in v] for k, v in s.items()})
    return builder.build()


class AccessLoggingKG:
    """Proxy that records which snapshot's data each read touches.

    ``log`` collects ``(method, snapshot, split)`` tuples for the data accessors;
    everything else is delegated untouched. Delta computation runs on the
    wrapped graph, so only the caller's own reads are recorded.
    """

    _LOGGED = ("split", "train_delta", "delta", "snapshot", "entities", "relations")

    def __init__(self, kg: GrowingKG):
        self._kg = kg
        self.log: list[tuple] = []

    def __getattr__(self, name):
        attr = getattr(self._kg, name)
        if name not in self._LOGGED:
            return attr

        def logged(i, *args):
            self.log.append((name, i, args[0] if args else None))
            return attr(i, *args)
        return logged

    def reads_before(self, i: int) -> list[tuple]:
        """Logged reads of data belonging to snapshots earlier than ``i``."""
        return [rec for rec in self.log if rec[1] < i]

    def clear(self):
        self.log.clear()
