import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfckge.errors import DatasetIOError, EmptySnapshot, InvariantViolation, ParseError
from mfckge.kg import (AccessLoggingKG, GrowingKG, Snapshot, TripleClass, accumulated_filter_set, classify_triple,
                       kg_from_id_triples, load_growing_kg, write_growing_kg)


def _write(root, snaps):
    for k, splits in enumerate(snaps):
        d = root / str(k)
        d.mkdir(parents=True)
        for name in ("train", "valid", "test"):
            (d / f"{name}.txt").write_text("".join(f"{h}\t{r}\t{t}\n" for h, r, t in splits.get(name, [])))


def test_minimal_single_line(tmp_path):
    _write(tmp_path, [{"train": [("a", "r", "b")]}])
    kg = load_growing_kg(tmp_path)
    assert kg.n_snapshots == 1
    assert len(kg.entities(1)) == 2 and len(kg.relations(1)) == 1
    assert len(kg.delta(1).new_facts) == 1


def test_one_new_entity_in_second_snapshot(tmp_path):
    _write(tmp_path, [{"train": [("a", "r", "b"), ("b", "r", "c")]},
                      {"train": [("a", "r", "c"), ("c", "r", "d")]}])
    kg = load_growing_kg(tmp_path)
    assert kg.delta(2).new_entities == {kg.entity_id("d")}


def test_first_delta_is_whole_snapshot(toy_kg):
    d = toy_kg.delta(1)
    assert d.new_entities == toy_kg.entities(1)
    assert d.new_relations == toy_kg.relations(1)
    assert len(d.new_facts) == len(toy_kg.snapshot(1).all_triples())


def test_identical_snapshot_has_empty_deltas():
    rows = {"train": [(0, 0, 1), (1, 0, 2)], "test": [(2, 0, 0)]}
    kg = kg_from_id_triples([rows, rows])
    d = kg.delta(2)
    assert not d.new_entities and not d.new_relations
    assert len(d.new_facts) == 0 and len(d.train_delta) == 0


def test_toy_train_deltas(toy_kg):
    as_set = lambda a: {tuple(map(int, x)) for x in a}  # noqa: E731
    assert as_set(toy_kg.train_delta(2)) == {(0, 1, 3), (3, 1, 1)}
    assert as_set(toy_kg.train_delta(3)) == {(4, 2, 5), (0, 2, 4), (5, 2, 3)}


triples = st.lists(st.tuples(st.integers(0, 6), st.integers(0, 2), st.integers(0, 6)), min_size=1, max_size=12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.fixed_dictionaries({"train": triples, "test": triples}), min_size=1, max_size=3))
def test_deltas_match_set_differences(snaps):
    # make snapshots cumulative so vocabularies grow
    acc = {"train": [], "test": []}
    cum = []
    for s in snaps:
        acc = {k: acc[k] + s[k] for k in acc}
        cum.append({k: list(v) for k, v in acc.items()})
    kg = kg_from_id_triples(cum)
    seen, prev_e, prev_r = set(), set(), set()
    for i in range(1, kg.n_snapshots + 1):
        snap = kg.snapshot(i)
        facts = {tuple(map(int, x)) for x in snap.all_triples()}
        train = {tuple(map(int, x)) for x in snap.train}
        d = kg.delta(i)
        assert d.new_entities == snap.entities - prev_e
        assert d.new_relations == snap.relations - prev_r
        assert {tuple(map(int, x)) for x in d.new_facts} == facts - seen
        assert {tuple(map(int, x)) for x in d.train_delta} == train - seen
        seen |= facts
        prev_e, prev_r = set(snap.entities), set(snap.relations)


def test_classify_triple():
    assert classify_triple((7, 3, 8), {0, 1}, {0}, set()) is TripleClass.TOTALLY_NEW
    assert classify_triple((0, 3, 8), {0, 1}, {0}, set()) is TripleClass.PARTIALLY_NEW
    assert classify_triple((0, 0, 1), {0, 1}, {0}, {(0, 0, 1)}) is TripleClass.STATIC


def test_filter_set_single_snapshot(toy_kg):
    snap = toy_kg.snapshot(1)
    assert len(accumulated_filter_set(toy_kg, 1)) == len(snap.all_triples())


def test_filter_set_disjoint_sizes_add_up():
    kg = kg_from_id_triples([{"train": [(0, 0, 1)], "test": [(1, 0, 0)]},
                             {"train": [(1, 0, 2)], "valid": [(2, 0, 0)]}])
    assert len(accumulated_filter_set(kg, 2)) == 4


def test_filter_set_overlap_counted_once(toy_kg):
    # (0, 0, 1) and (3, 1, 1) recur in later snapshots
    total = sum(len(toy_kg.snapshot(i).all_triples()) for i in (1, 2, 3))
    assert len(accumulated_filter_set(toy_kg, 3)) == total - 2


def test_cross_split_duplicate_is_dropped():
    kg = kg_from_id_triples([{"train": [(0, 0, 1)], "test": [(0, 0, 1), (1, 0, 0)]}])
    assert len(kg.split(1, "test")) == 1
    assert kg.dropped_overlaps == 1


def test_vocabulary_must_grow():
    a = Snapshot(1, np.zeros((0, 3), int), np.zeros((0, 3), int), np.zeros((0, 3), int), frozenset({0, 1}), frozenset({0}))
    b = Snapshot(2, np.zeros((0, 3), int), np.zeros((0, 3), int), np.zeros((0, 3), int), frozenset({0}), frozenset({0}))
    with pytest.raises(InvariantViolation):
        GrowingKG([a, b]).delta(2)


def test_empty_snapshot_directory_is_an_error(tmp_path):
    _write(tmp_path, [{"train": [("a", "r", "b")]}, {}])
    with pytest.raises(EmptySnapshot):
        load_growing_kg(tmp_path)


def test_missing_root_and_gap(tmp_path):
    with pytest.raises(DatasetIOError):
        load_growing_kg(tmp_path / "nope")
    _write(tmp_path, [{"train": [("a", "r", "b")]}])
    (tmp_path / "2").mkdir()
    with pytest.raises(DatasetIOError):
        load_growing_kg(tmp_path)


def test_parse_error_reports_line(tmp_path):
    _write(tmp_path, [{"train": [("a", "r", "b")]}])
    (tmp_path / "0" / "train.txt").write_text("a\tr\tb\nbroken line with four\n")
    with pytest.raises(ParseError) as info:
        load_growing_kg(tmp_path)
    assert info.value.line_no == 2


def test_write_load_roundtrip(toy_kg, tmp_path):
    write_growing_kg(toy_kg, tmp_path)
    again = load_growing_kg(tmp_path)
    assert again.checksum() == toy_kg.checksum()


def test_access_logging_proxy(toy_kg):
    kg = AccessLoggingKG(toy_kg)
    kg.train_delta(3)
    kg.split(1, "test")
    assert kg.n_snapshots == 3
    assert kg.log == [("train_delta", 3, None), ("split", 1, "test")]
    assert kg.reads_before(3) == [("split", 1, "test")]
