from pathlib import Path

import numpy as np
import pytest

from kgpath.embedding import EmbeddingTable, init_table
from kgpath.kg_store import Triple, Vocabulary, build_graph, load_dataset
from kgpath.numerics import make_rng

ROOT = Path(__file__).resolve().parents[1]
UMLS = ROOT / "data" / "umls"


def named_graph(rows, cap=200, extra_entities=()):
    """Build (vocab, kg, triples) from (head, relation, tail) name tuples."""
    vocab = Vocabulary()
    triples = []
    for h, r, t in rows:
        triples.append(Triple(vocab.add_entity(h), vocab.add_relation(r), vocab.add_entity(t)))
    for e in extra_entities:
        vocab.add_entity(e)
    return vocab, build_graph(triples, vocab, cap), triples


def random_table(vocab, dim=8, kind="distmult", seed=0):
    return init_table(kind, dim, vocab.n_entities, vocab.n_relations, make_rng(seed, "table"))


def random_graph(rng, n_entities, n_relations, n_triples, max_degree=None):
    """Random named triples; ``max_degree`` bounds the augmented out-degree (self-loop included)."""
    rows, degree = set(), {}
    attempts = 0
    while len(rows) < n_triples and attempts < 50 * n_triples:
        attempts += 1
        h, t = (f"e{int(x)}" for x in rng.integers(n_entities, size=2))
        r = f"r{int(rng.integers(n_relations))}"
        if h == t or (h, r, t) in rows:
            continue
        if max_degree and (degree.get(h, 1) >= max_degree or degree.get(t, 1) >= max_degree):
            continue
        rows.add((h, r, t))
        degree[h] = degree.get(h, 1) + 1
        degree[t] = degree.get(t, 1) + 1
    return sorted(rows)


@pytest.fixture(scope="session")
def umls():
    if not (UMLS / "train.txt").exists():
        pytest.skip("UMLS split not present")
    return load_dataset(UMLS)


@pytest.fixture(scope="session")
def umls_graph(umls):
    return build_graph(umls.graph, umls.vocab)


def small_table(vocab, dim=16, seed=0):
    """ComplEx table with modest random scores (no pretraining)."""
    rng = np.random.default_rng(seed)
    return EmbeddingTable("complex", rng.normal(scale=0.3, size=(vocab.n_entities, dim)),
                          rng.normal(scale=0.3, size=(vocab.n_relations, dim)))
