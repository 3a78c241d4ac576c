"""Triple loading, vocabularies and the augmented adjacency index."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

logger = logging.getLogger(__name__)

SELF_LOOP = 0
START = 1
N_RESERVED = 2
INVERSE_SUFFIX = "_inv"
DEFAULT_ACTION_CAP = 200


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


class TripleFormatError(ValueError):
    pass


@dataclass
class Vocabulary:
    """Name/id maps. Relation ids: 0 self-loop, 1 start, then (r, inv r) pairs."""

    entities: list[str] = field(default_factory=list)
    relations: list[str] = field(default_factory=lambda: ["SELF_LOOP", "START"])
    entity_ids: dict[str, int] = field(default_factory=dict)
    relation_ids: dict[str, int] = field(default_factory=lambda: {"SELF_LOOP": SELF_LOOP,
                                                                   "START": START})

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    @property
    def n_loaded_relations(self) -> int:
        return (len(self.relations) - N_RESERVED) // 2

    def add_entity(self, name: str) -> int:
        if name not in self.entity_ids:
            self.entity_ids[name] = len(self.entities)
            self.entities.append(name)
        return self.entity_ids[name]

    def add_relation(self, name: str) -> int:
        if name not in self.relation_ids:
            rid = len(self.relations)
            self.relation_ids[name] = rid
            self.relation_ids[name + INVERSE_SUFFIX] = rid + 1
            self.relations += [name, name + INVERSE_SUFFIX]
        return self.relation_ids[name]

    def to_json(self) -> dict:
        return {"entities": self.entity_ids, "relations": self.relation_ids}

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        vocab = cls()
        vocab.entities = sorted(obj["entities"], key=obj["entities"].get)
        vocab.entity_ids = dict(obj["entities"])
        vocab.relations = sorted(obj["relations"], key=obj["relations"].get)
        vocab.relation_ids = dict(obj["relations"])
        return vocab

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls.from_json(json.loads(Path(path).read_text()))


def inverse(relation: int) -> int:
    if relation < N_RESERVED:
        raise ValueError(f"reserved relation {relation} has no inverse")
    return relation ^ 1


def load_triples(path: str | Path, vocab: Vocabulary | None = None,
                 extra_columns: int = 0) -> tuple[list[Triple], Vocabulary]:
    """Parse a TAB-separated triple file, extending ``vocab`` in first-appearance order.

    With ``extra_columns`` > 0 each line may carry that many trailing fields
    (e.g. a distance label); they are parsed by :func:`load_labeled_triples`.
    """
    vocab = vocab if vocab is not None else Vocabulary()
    triples, _ = _read(path, vocab, extra_columns)
    return triples, vocab


def _read(path, vocab: Vocabulary, extra_columns: int):
    path = Path(path)
    triples: list[Triple] = []
    extras: list[list[str]] = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) not in (3, 3 + extra_columns):
                raise TripleFormatError(
                    f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
            h, r, t = parts[:3]
            triples.append(Triple(vocab.add_entity(h), vocab.add_relation(r), vocab.add_entity(t)))
            extras.append(parts[3:])
    if not triples:
        raise TripleFormatError(f"{path}: no triples")
    return triples, extras


def load_labeled_triples(path: str | Path, vocab: Vocabulary) -> tuple[list[Triple], list[int | None]]:
    """Query files with an optional fourth column holding a distance label."""
    triples, extras = _read(path, vocab, 1)
    return triples, [int(e[0]) if e else None for e in extras]


def filter_leakage(train: Iterable[Triple], valid: Iterable[Triple],
                   test: Iterable[Triple]) -> list[Triple]:
    held_out = set(valid) | set(test)
    kept = [t for t in train if t not in held_out]
    if not kept:
        logger.warning("leakage filter removed every training triple")
    return kept


class KnowledgeGraph:
    """Immutable augmented graph: forward, inverse and one self-loop edge per entity.

    ``adjacency[e]`` is a list of ``(relation, entity)`` pairs whose first entry
    is ``(SELF_LOOP, e)``; the rest is sorted. Padded arrays ``action_rel``,
    ``action_ent`` and ``action_len`` hold the capped action sets for batched
    lookups.
    """

    def __init__(self, vocab: Vocabulary, adjacency: list[list[tuple[int, int]]],
                 triples: frozenset, cap: int):
        self.vocab = vocab
        self.adjacency = adjacency
        self.triples = triples
        self.cap = cap
        n = vocab.n_entities
        self.action_len = np.array([min(len(a), cap) for a in adjacency], dtype=np.int64)
        width = int(self.action_len.max()) if n else 1
        self.action_rel = np.zeros((n, width), dtype=np.int64)
        self.action_ent = np.zeros((n, width), dtype=np.int64)
        for e, acts in enumerate(adjacency):
            k = self.action_len[e]
            arr = np.asarray(acts[:k], dtype=np.int64).reshape(-1, 2)
            self.action_rel[e, :k] = arr[:, 0]
            self.action_ent[e, :k] = arr[:, 1]
            self.action_ent[e, k:] = e
        for a in (self.action_rel, self.action_ent, self.action_len):
            a.setflags(write=False)

    @property
    def n_entities(self) -> int:
        return self.vocab.n_entities

    def n_edges(self) -> int:
        return sum(len(a) for a in self.adjacency)

    def has_edge(self, head: int, relation: int, tail: int) -> bool:
        return (relation, tail) in set(self.adjacency[head])


def build_graph(train_triples: Iterable[Triple], vocab: Vocabulary,
                cap: int = DEFAULT_ACTION_CAP) -> KnowledgeGraph:
    triples = list(train_triples)
    unique = set(triples)
    if len(unique) < len(triples):
        logger.info("dropped %d duplicate triples", len(triples) - len(unique))
    edges: list[set[tuple[int, int]]] = [set() for _ in range(vocab.n_entities)]
    for h, r, t in unique:
        edges[h].add((r, t))
        edges[t].add((inverse(r), h))
    adjacency = [[(SELF_LOOP, e)] + sorted(out) for e, out in enumerate(edges)]
    return KnowledgeGraph(vocab, adjacency, frozenset(unique), cap)


def action_set(kg: KnowledgeGraph, entity: int, cap: int | None = None) -> list[tuple[int, int]]:
    if not 0 <= entity < kg.n_entities:
        raise KeyError(f"unknown entity id {entity}")
    cap = kg.cap if cap is None else cap
    if cap < 1:
        raise ValueError("cap must be >= 1")
    return kg.adjacency[entity][:cap]


@dataclass
class Dataset:
    """A loaded split directory.

    ``graph`` holds the background triples the agent walks on. For plain
    link-prediction splits it is the (leakage-filtered) training set; when the
    directory carries a ``graph.txt`` the background graph is read from there
    and the query files are kept separate from it.
    """

    vocab: Vocabulary
    graph: list[Triple]
    train: list[Triple]
    valid: list[Triple]
    test: list[Triple]
    valid_dist: list[int | None]
    test_dist: list[int | None]
    train_dist: list[int | None]

    @property
    def separate_graph(self) -> bool:
        return self.graph is not self.train

    def embedding_triples(self) -> list[Triple]:
        """Facts the scoring model may see: background plus training queries."""
        if not self.separate_graph:
            return list(self.train)
        seen = set(self.graph)
        return list(self.graph) + [t for t in self.train if t not in seen]

    def stats(self) -> dict:
        return {"entities": self.vocab.n_entities, "relations": self.vocab.n_loaded_relations,
                "graph": len(self.graph), "train": len(self.train), "valid": len(self.valid),
                "test": len(self.test)}


def load_dataset(data_dir: str | Path) -> Dataset:
    data_dir = Path(data_dir)
    vocab = Vocabulary()
    graph_file = data_dir / "graph.txt"
    graph = load_triples(graph_file, vocab)[0] if graph_file.exists() else None
    train, train_d = load_labeled_triples(data_dir / "train.txt", vocab)
    valid, valid_d = load_labeled_triples(data_dir / "valid.txt", vocab)
    test, test_d = load_labeled_triples(data_dir / "test.txt", vocab)
    n_before = len(train)
    filtered = filter_leakage(train, valid, test)
    if len(filtered) != n_before:
        keep = set(filtered)
        train_d = [d for t, d in zip(train, train_d) if t in keep]
        logger.info("leakage filter removed %d training triples", n_before - len(filtered))
    train = filtered
    if graph is None:
        graph = train
    else:
        graph = filter_leakage(graph, valid, test)
    return Dataset(vocab, graph, train, valid, test, valid_d, test_d, train_d)
