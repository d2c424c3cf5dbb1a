"""Desk-scale synthetic growing KGs.

Triples come from a latent translational model: entity and relation latents
are sampled, and a fact ``(h, r, t)`` picks ``t`` among the latents nearest to
``z_h + z_r``. The Facet pattern gives every entity one latent position per
relation domain, so facts of different domains pull an entity's embedding in
different directions; each snapshot focuses on one domain.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DatasetIOError
from .kg import SPLITS, load_growing_kg

PATTERNS = ("Equal", "Higher", "Lower", "EntityGrowth", "RelationGrowth", "Hybrid", "Facet")


@dataclass
class SynthSpec:
    n_snapshots: int = 3
    pattern: str = "Facet"
    n_entities: int = 500
    n_relations: int = 30
    n_domains: int = 3
    schedule: tuple = (3000, 3000, 3000)
    seed: int = 1
    latent_dim: int = 16
    noise_fraction: float = 0.05
    # Facet only
    hub_fraction: float = 1.0
    hub_tails: bool = False
    degree_skew: float = 0.0  # Zipf exponent of head popularity
    facet_correlation: float = 0.0
    repeat_fractions: tuple = ()
    tail_choices: int = 3
    relation_spread: float = 0.5
    split: tuple = (3, 1, 1)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.schedule = tuple(int(x) for x in self.schedule)
        self.repeat_fractions = tuple(float(x) for x in self.repeat_fractions)
        self.split = tuple(int(x) for x in self.split)
        self.validate()

    def validate(self):
        if self.pattern not in PATTERNS:
            raise ConfigError(f"unknown pattern {self.pattern!r}; choose from {PATTERNS}")
        if min(self.n_snapshots, self.n_entities, self.n_relations, self.n_domains, self.latent_dim) <= 0:
            raise ConfigError("all counts must be > 0")
        if len(self.schedule) != self.n_snapshots:
            raise ConfigError("schedule length must equal n_snapshots")
        if min(self.schedule) <= 0:
            raise ConfigError("schedule entries must be > 0")
        if self.pattern == "Facet" and self.n_domains > self.n_relations:
            raise ConfigError("more domains than relations")
        if self.repeat_fractions and len(self.repeat_fractions) != self.n_snapshots:
            raise ConfigError("repeat_fractions length must equal n_snapshots")
        if not 0 <= self.noise_fraction < 1 or not 0 < self.hub_fraction <= 1:
            raise ConfigError("noise_fraction in [0,1), hub_fraction in (0,1]")
        if not 0 <= self.facet_correlation <= 1:
            raise ConfigError("facet_correlation in [0,1]")
        s = self.schedule
        if self.pattern == "Higher" and not all(a < b for a, b in zip(s, s[1:])):
            raise ConfigError("Higher needs a strictly increasing schedule")
        if self.pattern == "Lower" and not all(a > b for a, b in zip(s, s[1:])):
            raise ConfigError("Lower needs a strictly decreasing schedule")
        if self.pattern == "Equal" and max(s) > 1.1 * min(s):
            raise ConfigError("Equal needs a nearly constant schedule")

    @classmethod
    def from_dict(cls, data: dict) -> "SynthSpec":
        return cls(**data)

    @classmethod
    def from_file(cls, path) -> "SynthSpec":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("schedule", "repeat_fractions", "split"):
            d[k] = list(d[k])
        return d


def _domains(n_relations, n_domains):
    return np.array([d for d in range(n_domains) for _ in range(n_relations // n_domains + (d < n_relations % n_domains))])


def _pools(spec: SynthSpec):
    """Entity/relation id pools available at each snapshot (cumulative counts)."""
    n = spec.n_snapshots
    grow_e = spec.pattern in ("Equal", "Higher", "Lower", "EntityGrowth", "Hybrid")
    grow_r = spec.pattern in ("RelationGrowth", "Hybrid")
    ents = [spec.n_entities * (s + 1) // n if grow_e else spec.n_entities for s in range(n)]
    rels = [spec.n_relations * (s + 1) // n if grow_r else spec.n_relations for s in range(n)]
    ents = [max(e, 2) for e in ents]
    rels = [max(r, 1) for r in rels]
    return ents, rels


class _Latent:
    def __init__(self, rng, spec: SynthSpec):
        L = spec.latent_dim
        self.rng = rng
        self.spec = spec
        self.domain_of = _domains(spec.n_relations, spec.n_domains) if spec.pattern == "Facet" \
            else np.zeros(spec.n_relations, dtype=int)
        n_fac = spec.n_domains if spec.pattern == "Facet" else 1
        shared = rng.normal(size=(spec.n_entities, L))
        own = rng.normal(size=(n_fac, spec.n_entities, L))
        c = spec.facet_correlation
        self.ent = np.sqrt(c) * shared[None] + np.sqrt(1 - c) * own  # (facet, entity, L)
        axis = rng.normal(size=(n_fac, L))
        axis *= 1.5 / np.linalg.norm(axis, axis=1, keepdims=True) * np.sqrt(L) / 2
        noise = rng.normal(size=(spec.n_relations, L))
        noise *= 1.5 / np.linalg.norm(noise, axis=1, keepdims=True) * np.sqrt(L) / 2
        fac = self.domain_of if spec.pattern == "Facet" else np.zeros(spec.n_relations, dtype=int)
        self.rel = axis[fac] + spec.relation_spread * noise if spec.pattern == "Facet" else noise
        self.facet_of_rel = fac

    def tail(self, h, r, pool):
        """One of the ``tail_choices`` nearest ids to ``z_h + z_r``; ``pool`` is a count or an id array."""
        ids = np.arange(pool) if np.isscalar(pool) else np.asarray(pool)
        f = self.facet_of_rel[r]
        target = self.ent[f, h] + self.rel[r]
        d = np.linalg.norm(self.ent[f, ids] - target, axis=1)
        d[ids == h] = np.inf
        order = np.argsort(d, kind="stable")
        pick = int(self.rng.integers(min(self.spec.tail_choices, len(ids) - 1)))
        return int(ids[order[pick]])


def _generate(spec: SynthSpec):
    rng = np.random.default_rng(spec.seed)
    lat = _Latent(rng, spec)
    ent_pool, rel_pool = _pools(spec)
    n_hubs = max(1, int(round(spec.hub_fraction * spec.n_entities)))
    hubs = np.sort(rng.permutation(spec.n_entities)[:n_hubs])
    popularity = 1.0 / (1.0 + rng.permutation(spec.n_entities)) ** spec.degree_skew
    seen: set = set()
    snapshots, dominant = [], []
    covered_e: set = set()
    covered_r: set = set()
    for s in range(spec.n_snapshots):
        target = spec.schedule[s]
        E, R = ent_pool[s], rel_pool[s]
        new_e = list(range(ent_pool[s - 1], E)) if s else list(range(E))
        new_r = list(range(rel_pool[s - 1], R)) if s else list(range(R))
        facts: list = []

        def add(tr):
            if tr[0] != tr[2] and tr not in seen:
                seen.add(tr)
                facts.append(tr)
                return True
            return False

        if spec.pattern == "Facet":
            d_now = s % spec.n_domains
            dominant.append(d_now)
            rep = spec.repeat_fractions[s] if spec.repeat_fractions else 0.0
            n_rep = int(round(rep * len(hubs)))
            rep_hubs = set(rng.permutation(hubs)[:n_rep].tolist()) if s and n_rep else set()
            d_prev = (s - 1) % spec.n_domains
            by_dom = [np.flatnonzero(lat.domain_of == d) for d in range(spec.n_domains)]
            noise_rels = np.flatnonzero(lat.domain_of <= min(s, spec.n_domains - 1))
            everyone = np.arange(E)
            # the first snapshot covers every entity; later facets attach to hubs
            heads = everyone if s == 0 else hubs
            tails = hubs if s and spec.hub_tails else everyone
            head_cdf = np.cumsum(popularity[heads])
            # repeating hubs only link among themselves, the rest among the others
            rep_pool = np.array(sorted(rep_hubs), dtype=np.int64)
            new_pool = np.setdiff1d(tails, rep_pool) if rep_hubs else tails
            attempts = 0
            while len(facts) < target:
                attempts += 1
                if attempts > 200 * target:
                    raise ConfigError(f"cannot find {target} distinct facts for snapshot {s + 1}")
                if rng.random() < spec.noise_fraction:
                    # noise only uses relations of domains introduced so far
                    r = int(noise_rels[rng.integers(len(noise_rels))])
                    add((int(heads[rng.integers(len(heads))]), r, int(tails[rng.integers(len(tails))])))
                    continue
                h = int(heads[np.searchsorted(head_cdf, rng.random() * head_cdf[-1], side="right")])
                if h in rep_hubs:
                    dom, pool = d_prev, rep_pool
                else:
                    dom, pool = d_now, new_pool
                r = int(by_dom[dom][rng.integers(len(by_dom[dom]))])
                add((h, r, lat.tail(h, r, pool)))
        else:
            dominant.append(0)
            # every newly available id gets at least one fact
            for e in new_e:
                r = int(rng.integers(R))
                for _ in range(20):
                    if add((e, r, lat.tail(e, r, E))):
                        break
                    r = int(rng.integers(R))
            for r in new_r:
                for _ in range(20):
                    h = int(rng.integers(E))
                    if add((h, r, lat.tail(h, r, E))):
                        break
            if len(facts) > target:
                raise ConfigError(f"schedule entry {target} too small for {len(facts)} new ids at snapshot {s + 1}")
            attempts = 0
            while len(facts) < target:
                attempts += 1
                if attempts > 200 * target:
                    raise ConfigError(f"cannot find {target} distinct facts for snapshot {s + 1}")
                if rng.random() < spec.noise_fraction:
                    add((int(rng.integers(E)), int(rng.integers(R)), int(rng.integers(E))))
                    continue
                h, r = int(rng.integers(E)), int(rng.integers(R))
                add((h, r, lat.tail(h, r, E)))
        snapshots.append(_split(rng, facts, spec.split, covered_e, covered_r))
    return snapshots, lat, dominant


def _split(rng, facts, ratio, covered_e, covered_r):
    """Shuffle and split 3:1:1; facts introducing unseen ids are forced into train."""
    order = rng.permutation(len(facts))
    n = len(facts)
    total = sum(ratio)
    n_train = int(round(n * ratio[0] / total))
    n_valid = int(round(n * ratio[1] / total))
    train, rest = [], []
    for k in order:
        h, r, t = facts[k]
        if h not in covered_e or t not in covered_e or r not in covered_r:
            train.append(facts[k])
            covered_e.update((h, t))
            covered_r.add(r)
        else:
            rest.append(facts[k])
    need = max(0, n_train - len(train))
    train.extend(rest[:need])
    rest = rest[need:]
    for h, r, t in train:
        covered_e.update((h, t))
        covered_r.add(r)
    n_valid = len(rest) // 2
    valid = rest[:n_valid]
    test = rest[n_valid:]
    return {"train": train, "valid": valid, "test": test}


def synthesize_growing_kg(spec: SynthSpec, out) -> Path:
    out = Path(out)
    snapshots, lat, dominant = _generate(spec)
    for s, splits in enumerate(snapshots):
        d = out / str(s)
        os.makedirs(d, exist_ok=True)
        for name in SPLITS:
            text = "".join(f"e{h}\tr{r}\te{t}\n" for h, r, t in splits[name])
            (d / f"{name}.txt").write_text(text, encoding="utf-8")
    rows = "".join(f"r{r},{int(lat.domain_of[r])}\n" for r in range(spec.n_relations))
    (out / "domains.csv").write_text("relation_id,domain_id\n" + rows, encoding="utf-8")
    srows = "".join(f"{s + 1},{d}\n" for s, d in enumerate(dominant))
    (out / "snapshot_domains.csv").write_text("snapshot,dominant_domain\n" + srows, encoding="utf-8")
    (out / "spec.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
    return out


def read_domains(path) -> tuple[dict, dict]:
    """``(relation label -> domain, snapshot -> dominant domain)`` sidecars."""
    path = Path(path)
    rel = {}
    for line in (path / "domains.csv").read_text(encoding="utf-8").splitlines()[1:]:
        lab, d = line.split(",")
        rel[lab] = int(d)
    snap = {}
    for line in (path / "snapshot_domains.csv").read_text(encoding="utf-8").splitlines()[1:]:
        s, d = line.split(",")
        snap[int(s)] = int(d)
    return rel, snap


STATS_HEADER = "snapshot,entities,relations,new_facts"


def dataset_stats(path) -> list[tuple[int, int, int, int]]:
    """Per-snapshot ``(i, |E_i|, |R_i|, |dT_i|)``."""
    try:
        kg = load_growing_kg(path)
    except DatasetIOError:
        raise
    except OSError as exc:
        raise DatasetIOError(str(exc)) from exc
    return [(i, len(kg.entities(i)), len(kg.relations(i)), len(kg.delta(i).new_facts))
            for i in range(1, kg.n_snapshots + 1)]


def stats_csv(rows) -> str:
    return STATS_HEADER + "\n" + "".join(f"{i},{e},{r},{t}\n" for i, e, r, t in rows)
