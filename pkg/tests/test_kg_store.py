import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgpath.kg_store import (SELF_LOOP, START, Triple, TripleFormatError, Vocabulary, action_set,
                             build_graph, filter_leakage, inverse, load_dataset, load_triples)

from conftest import named_graph


def write(path, lines):
    path.write_text("".join(line + "\n" for line in lines))
    return path


def test_load_two_lines(tmp_path):
    triples, vocab = load_triples(write(tmp_path / "t.txt", ["a\tr\tb", "b\tr\tc"]))
    assert len(triples) == 2
    assert vocab.n_entities == 3
    assert vocab.n_loaded_relations == 1
    assert vocab.entities == ["a", "b", "c"]
    assert triples[0] == Triple(0, vocab.relation_ids["r"], 1)


def test_malformed_line_names_line_number(tmp_path):
    path = write(tmp_path / "t.txt", ["a\tr\tb", "a\tr"])
    with pytest.raises(TripleFormatError, match=r":2:"):
        load_triples(path)


def test_empty_file_raises(tmp_path):
    with pytest.raises(TripleFormatError):
        load_triples(write(tmp_path / "t.txt", []))


def test_umls_counts(umls):
    assert len(umls.train) == 5216
    assert umls.vocab.n_entities == 135
    assert umls.vocab.n_loaded_relations == 46
    assert (len(umls.valid), len(umls.test)) == (652, 661)


def test_ids_follow_first_appearance(tmp_path):
    a, va = load_triples(write(tmp_path / "a.txt", ["x\tp\ty", "z\tq\tx"]))
    b, vb = load_triples(write(tmp_path / "b.txt", ["x\tp\ty", "z\tq\tx"]))
    assert a == b and va.to_json() == vb.to_json()
    assert va.entities == ["x", "y", "z"]


def test_inverse_pairs_and_reserved():
    vocab = Vocabulary()
    r = vocab.add_relation("likes")
    assert vocab.relations[inverse(r)] == "likes_inv"
    assert inverse(inverse(r)) == r
    for reserved in (SELF_LOOP, START):
        with pytest.raises(ValueError):
            inverse(reserved)


def test_vocabulary_json_round_trip(tmp_path):
    vocab, _, _ = named_graph([("a", "r", "b"), ("b", "s", "c")])
    vocab.save(tmp_path / "v.json")
    loaded = Vocabulary.load(tmp_path / "v.json")
    assert loaded.to_json() == vocab.to_json()
    assert json.loads((tmp_path / "v.json").read_text())


def test_single_triple_augmentation():
    vocab, kg, _ = named_graph([("a", "r", "b")])
    a, b, r = vocab.entity_ids["a"], vocab.entity_ids["b"], vocab.relation_ids["r"]
    assert kg.adjacency[a] == [(SELF_LOOP, a), (r, b)]
    assert kg.adjacency[b] == [(SELF_LOOP, b), (inverse(r), a)]


def test_empty_graph_has_only_self_loops():
    vocab = Vocabulary()
    for e in "abc":
        vocab.add_entity(e)
    kg = build_graph([], vocab)
    assert kg.adjacency == [[(SELF_LOOP, e)] for e in range(3)]


def test_duplicates_stored_once(caplog):
    with caplog.at_level(logging.INFO):
        vocab, kg, _ = named_graph([("a", "r", "b"), ("a", "r", "b")])
    for acts in kg.adjacency:
        assert len(acts) == len(set(acts))
    assert kg.n_edges() == 2 + 2
    assert "duplicate" in caplog.text


def test_action_set_small_and_isolated():
    vocab, kg, _ = named_graph([("a", "r", "b"), ("a", "s", "c")], extra_entities=["lonely"])
    assert len(action_set(kg, vocab.entity_ids["a"], 10)) == 3
    lonely = vocab.entity_ids["lonely"]
    assert action_set(kg, lonely, 10) == [(SELF_LOOP, lonely)]


def test_action_set_cap_keeps_self_loop_and_smallest_edges():
    rows = [("hub", "r", f"n{i:03d}") for i in range(500)]
    vocab, kg, _ = named_graph(rows, cap=200)
    hub = vocab.entity_ids["hub"]
    acts = action_set(kg, hub, 200)
    assert len(acts) == 200 and acts[0] == (SELF_LOOP, hub)
    assert acts[1:] == sorted(kg.adjacency[hub][1:])[:199]
    assert kg.action_len[hub] == 200
    assert list(kg.action_ent[hub, :200]) == [e for _, e in acts]


def test_action_set_errors():
    vocab, kg, _ = named_graph([("a", "r", "b")])
    with pytest.raises(KeyError):
        action_set(kg, 99, 10)
    with pytest.raises(ValueError):
        action_set(kg, 0, 0)


def test_padded_arrays_are_read_only():
    _, kg, _ = named_graph([("a", "r", "b")])
    with pytest.raises(ValueError):
        kg.action_rel[0, 0] = 5


def test_filter_leakage_examples(caplog):
    a, c = Triple(0, 2, 1), Triple(2, 2, 3)
    assert filter_leakage([a, c], [], [a]) == [c]
    assert filter_leakage([a, c], [], []) == [a, c]
    with caplog.at_level(logging.WARNING):
        assert filter_leakage([a], [a], []) == []
    assert "removed every" in caplog.text


triple_lists = st.lists(st.tuples(st.sampled_from("abcdefg"), st.sampled_from(["p", "q", "r"]),
                                  st.sampled_from("abcdefg")), min_size=0, max_size=40)


@settings(max_examples=60)
@given(triple_lists)
def test_adjacency_invariants(rows):
    vocab = Vocabulary()
    for e in "abcdefg":
        vocab.add_entity(e)
    triples = [Triple(vocab.entity_ids[h], vocab.add_relation(r), vocab.entity_ids[t]) for h, r, t in rows]
    kg = build_graph(triples, vocab)
    total = 0
    for e, acts in enumerate(kg.adjacency):
        assert acts[0] == (SELF_LOOP, e)
        assert sum(r == SELF_LOOP for r, _ in acts) == 1
        assert acts[1:] == sorted(acts[1:])
        for r, t in acts[1:]:
            assert (inverse(r), e) in kg.adjacency[t]
        total += len(acts)
    # forward + inverse per unique triple, one self-loop per entity
    assert total == 2 * len(set(triples)) + vocab.n_entities
    for h, r, t in triples:
        assert kg.has_edge(h, r, t) and kg.has_edge(t, inverse(r), h)


@settings(max_examples=30)
@given(triple_lists, st.integers(1, 6))
def test_action_set_is_a_stable_prefix(rows, cap):
    vocab = Vocabulary()
    for e in "abcdefg":
        vocab.add_entity(e)
    triples = [Triple(vocab.entity_ids[h], vocab.add_relation(r), vocab.entity_ids[t]) for h, r, t in rows]
    kg1, kg2 = build_graph(triples, vocab), build_graph(list(reversed(triples)), vocab)
    for e in range(vocab.n_entities):
        acts = action_set(kg1, e, cap)
        assert acts == action_set(kg2, e, cap) == kg1.adjacency[e][:cap]
        assert acts[0] == (SELF_LOOP, e)


def test_dataset_with_separate_graph_and_distances(tmp_path):
    write(tmp_path / "graph.txt", ["a\tr\tb", "b\tr\tc"])
    write(tmp_path / "train.txt", ["a\tq\tc\t2"])
    write(tmp_path / "valid.txt", ["b\tq\tc\t1"])
    write(tmp_path / "test.txt", ["a\tq\tb\t1"])
    data = load_dataset(tmp_path)
    assert data.separate_graph
    assert len(data.graph) == 2
    assert data.train_dist == [2] and data.test_dist == [1]
    assert set(data.embedding_triples()) == set(data.graph) | set(data.train)


def test_dataset_filters_leaked_training_triples(tmp_path):
    write(tmp_path / "train.txt", ["a\tr\tb", "b\tr\tc"])
    write(tmp_path / "valid.txt", ["a\tr\tb"])
    write(tmp_path / "test.txt", ["c\tr\ta"])
    data = load_dataset(tmp_path)
    assert [tuple(t) for t in data.train] == [(1, 2, 2)]
    assert data.graph is data.train
    assert np.all(build_graph(data.graph, data.vocab).action_len >= 1)
