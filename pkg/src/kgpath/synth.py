"""Synthetic graphs whose query answers sit a controlled number of hops away.

For every distance ``d`` a family of chains ``x_0 -> x_1 -> ... -> x_d`` is
built, each hop ``i`` labelled with base relation ``r{d}_{i}``, and the query
``(x_0, q{d}, x_d)`` is emitted. Each chain node has a layer index (its
position on the chain). Distractor edges join random nodes of the same family
whose layers differ by at most one, so no walk can advance more than one
layer per hop: the shortest path between a query's head and tail is exactly
``d`` hops. A BFS over the finished graph re-checks this for every query.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import make_rng


@dataclass
class SynthConfig:
    distances: tuple = (2, 3, 4, 5, 6, 7)
    n_chains: int = 50              # chains per distance
    entities_per_layer: int = 0     # 0: every chain gets private nodes; >0: layer pools shared by chains
    distractor_ratio: float = 2.0   # distractor edges per chain edge
    distractor_relations: int = 4   # size of the distractor relation pool per distance
    symmetric: bool = False         # second half of each path walks inverse relations
    split: tuple = (0.8, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        self.distances = tuple(int(d) for d in self.distances)
        if any(d < 2 for d in self.distances):
            raise ValueError("distances must be >= 2")
        if self.distractor_ratio < 0:
            raise ValueError("distractor_ratio must be >= 0")
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")


@dataclass
class SynthDataset:
    graph: list          # (head, relation, tail) name triples
    train: list          # (head, relation, tail, distance)
    valid: list
    test: list


def _hop_relation(d: int, hop: int, symmetric: bool) -> tuple[str, bool]:
    """Relation name for hop ``hop`` (1-based) and whether it is walked backwards."""
    if not symmetric:
        return f"r{d}_{hop}", False
    if hop <= math.ceil(d / 2):
        return f"r{d}_{hop}", False
    # mirror of the first half: hop d+1-k walks r{d}_k backwards
    return f"r{d}_{d + 1 - hop}", True


def generate(config: SynthConfig) -> SynthDataset:
    rng = make_rng(config.seed, "synth")
    graph: list[tuple[str, str, str]] = []
    queries: list[tuple[str, str, str, int]] = []
    for d in config.distances:
        layers: list[list[str]] = [[] for _ in range(d + 1)]
        pools = None
        if config.entities_per_layer:
            pools = [[f"d{d}_l{k}_{i}" for i in range(config.entities_per_layer)] for k in range(d + 1)]
            layers = [list(p) for p in pools]
        chain_edges: set[tuple[str, str, str]] = set()
        for c in range(config.n_chains):
            if pools is None:
                nodes = [f"d{d}_c{c}_{k}" for k in range(d + 1)]
                for k, n in enumerate(nodes):
                    layers[k].append(n)
            else:
                nodes = [pools[k][rng.integers(len(pools[k]))] for k in range(d + 1)]
                if nodes[0] == nodes[-1]:
                    continue
            for hop in range(1, d + 1):
                rel, backwards = _hop_relation(d, hop, config.symmetric)
                a, b = nodes[hop - 1], nodes[hop]
                chain_edges.add((b, rel, a) if backwards else (a, rel, b))
            queries.append((nodes[0], f"q{d}", nodes[-1], d))
        family_edges = sorted(chain_edges)
        n_distract = int(round(config.distractor_ratio * len(family_edges)))
        existing = set(family_edges)
        added = 0
        attempts = 0
        while added < n_distract and attempts < 50 * max(1, n_distract):
            attempts += 1
            k1 = int(rng.integers(d + 1))
            k2 = min(d, max(0, k1 + int(rng.integers(-1, 2))))
            u = layers[k1][rng.integers(len(layers[k1]))]
            v = layers[k2][rng.integers(len(layers[k2]))]
            rel = f"x{d}_{int(rng.integers(config.distractor_relations))}"
            if u == v or (u, rel, v) in existing:
                continue
            existing.add((u, rel, v))
            family_edges.append((u, rel, v))
            added += 1
        graph.extend(family_edges)
    queries = list(dict.fromkeys(queries))
    train, valid, test = _split(queries, config.split, rng)
    data = SynthDataset(graph, train, valid, test)
    verify_distances(data)
    return data


def _split(queries, fractions, rng):
    by_d: dict[int, list] = {}
    for q in queries:
        by_d.setdefault(q[3], []).append(q)
    train, valid, test = [], [], []
    for d in sorted(by_d):
        items = by_d[d]
        order = rng.permutation(len(items))
        n_valid = max(1, int(round(fractions[1] * len(items))))
        n_test = max(1, int(round(fractions[2] * len(items))))
        if n_valid + n_test >= len(items):
            raise ValueError(f"too few chains at distance {d} to split")
        picked = [items[i] for i in order]
        test += picked[:n_test]
        valid += picked[n_test:n_test + n_valid]
        train += picked[n_test + n_valid:]
    return train, valid, test


def bfs_distance(graph, source: str, target: str) -> float:
    """Hop distance ignoring edge direction (the walk may use inverse edges)."""
    adj: dict[str, set[str]] = {}
    for h, _, t in graph:
        adj.setdefault(h, set()).add(t)
        adj.setdefault(t, set()).add(h)
    return _bfs(adj, source).get(target, math.inf)


def _bfs(adj, source):
    dist = {source: 0}
    queue = deque([source])
    while queue:
        x = queue.popleft()
        for y in adj.get(x, ()):
            if y not in dist:
                dist[y] = dist[x] + 1
                queue.append(y)
    return dist


def verify_distances(data: SynthDataset) -> None:
    adj: dict[str, set[str]] = {}
    for h, _, t in data.graph:
        adj.setdefault(h, set()).add(t)
        adj.setdefault(t, set()).add(h)
    cache: dict[str, dict] = {}
    edges = {(h, t) for h, _, t in data.graph}
    for h, r, t, d in data.train + data.valid + data.test:
        if h not in cache:
            cache[h] = _bfs(adj, h)
        got = cache[h].get(t, math.inf)
        if got != d:
            raise AssertionError(f"query ({h}, {r}, {t}) labelled {d} but BFS distance is {got}")
        if (h, t) in edges and d > 1:
            raise AssertionError(f"query ({h}, {r}, {t}) is a background edge")


def write(data: SynthDataset, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "graph.txt").write_text("".join(f"{h}\t{r}\t{t}\n" for h, r, t in data.graph))
    for name in ("train", "valid", "test"):
        rows = getattr(data, name)
        (out / f"{name}.txt").write_text("".join(f"{h}\t{r}\t{t}\t{d}\n" for h, r, t, d in rows))
