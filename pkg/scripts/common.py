"""Helpers shared by the experiment scripts (not part of the package)."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, is_dataclass
from pathlib import Path

import numpy as np

from kgpath.embedding import EmbeddingTable, PretrainConfig, file_sha256, pretrain
from kgpath.kg_store import Dataset
from kgpath.numerics import make_rng
from kgpath.policy import Policy
from kgpath.search import rollout_batch

ROOT = Path(__file__).resolve().parents[1]
RESULTS = ROOT / "results"
RUNS = ROOT / "runs"

log = logging.getLogger("scripts")


def setup_logging() -> None:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")


def known_triples(data: Dataset) -> set:
    return set(data.train) | set(data.valid) | set(data.test)


def cached_embeddings(path: Path, config: PretrainConfig, data: Dataset,
                      seed: int = 0) -> tuple[EmbeddingTable, str, float]:
    """Pretrain once and reuse the table on later runs with the same path.

    Returns the table, its file digest and the pretraining time (0 when reused).
    """
    if path.exists():
        log.info("reusing embeddings %s", path)
        return EmbeddingTable.load(path), file_sha256(path), 0.0
    clock = Stopwatch()
    path.parent.mkdir(parents=True, exist_ok=True)
    table, _ = pretrain(config, data.embedding_triples(), data.vocab.n_entities, data.vocab.n_relations,
                        make_rng(seed, "pretrain"), valid=data.valid, known=known_triples(data))
    return table, table.save(path), clock()


def greedy_accuracy(policy: Policy, queries, max_steps: int, max_loops: int) -> float:
    """Fraction of queries whose dropout-free greedy walk ends on the answer."""
    q = np.asarray(queries, dtype=np.int64)
    batch = rollout_batch(policy, q[:, 0], q[:, 1], None, max_steps, max_loops, mode="greedy", track=False)
    return float((batch.final == q[:, 2]).mean())


def write_result(name: str, payload: dict) -> Path:
    RESULTS.mkdir(exist_ok=True)
    path = RESULTS / f"{name}.json"
    path.write_text(json.dumps(_plain(payload), indent=1, sort_keys=True) + "\n")
    log.info("wrote %s", path)
    return path


def read_result(name: str) -> dict | None:
    path = RESULTS / f"{name}.json"
    return json.loads(path.read_text()) if path.exists() else None


def _plain(obj):
    if is_dataclass(obj):
        return _plain(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


class Stopwatch:
    def __init__(self):
        self.start = time.perf_counter()

    def __call__(self) -> float:
        return round(time.perf_counter() - self.start, 1)
