"""Pretrained triple scoring functions (TransE, DistMult, ComplEx).

Scores follow a higher-is-more-plausible convention for every model kind.
ComplEx rows pack ``dim // 2`` complex numbers as ``[real parts ; imaginary parts]``.
"""
from __future__ import annotations

import hashlib
import json
import logging
import struct
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .kg_store import N_RESERVED, Triple
from .numerics import Adam, sigmoid_array

logger = logging.getLogger(__name__)

KINDS = ("transe", "distmult", "complex")
MAGIC = b"KGE1"
FORMAT_VERSION = 1


@dataclass
class EmbeddingTable:
    kind: str
    entity: np.ndarray    # (n_entities, dim)
    relation: np.ndarray  # (n_relations, dim); rows of reserved relations stay zero

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == "complex" and self.dim % 2:
            raise ValueError("ComplEx needs an even dimension")

    @property
    def dim(self) -> int:
        return self.entity.shape[1]

    def score(self, h: int, r: int, t: int) -> float:
        return float(score_arrays(self.kind, self.entity[h], self.relation[r], self.entity[t]))

    def score_all_tails(self, heads, relations) -> np.ndarray:
        """(B, n_entities) scores of every entity as tail for each (head, relation)."""
        h = self.entity[np.asarray(heads)]
        r = self.relation[np.asarray(relations)]
        if self.kind == "distmult":
            return (h * r) @ self.entity.T
        if self.kind == "complex":
            k = self.dim // 2
            hr, hi, rr, ri = h[:, :k], h[:, k:], r[:, :k], r[:, k:]
            query = np.concatenate([hr * rr - hi * ri, hr * ri + hi * rr], axis=1)
            return query @ self.entity.T
        target = h + r
        out = np.empty((len(target), len(self.entity)))
        chunk = max(1, 2_000_000 // max(1, self.entity.size))
        for start in range(0, len(target), chunk):
            diff = target[start:start + chunk, None, :] - self.entity[None, :, :]
            out[start:start + chunk] = -np.sqrt((diff * diff).sum(-1))
        return out

    def score_candidates(self, head: int, relation: int, candidates) -> np.ndarray:
        """Scores aligned with an action set: psi(head, relation, candidate entity)."""
        ents = np.array([e for _, e in candidates], dtype=np.int64)
        if ents.size == 0:
            raise ValueError("empty candidate set")
        return score_arrays(self.kind, self.entity[head][None, :], self.relation[relation][None, :],
                            self.entity[ents])

    # ------------------------------------------------------------ persistence

    def save(self, path: str | Path) -> str:
        """Write the binary table; returns its sha256."""
        header = MAGIC + struct.pack("<5I", FORMAT_VERSION, KINDS.index(self.kind), self.dim,
                                     self.entity.shape[0], self.relation.shape[0])
        blob = header + self.entity.astype("<f8").tobytes() + self.relation.astype("<f8").tobytes()
        Path(path).write_bytes(blob)
        return hashlib.sha256(blob).hexdigest()

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingTable":
        blob = Path(path).read_bytes()
        if blob[:4] != MAGIC:
            raise ValueError(f"{path}: not an embedding table (bad magic)")
        version, kind, dim, n_ent, n_rel = struct.unpack_from("<5I", blob, 4)
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        offset = 4 + 20
        ent = np.frombuffer(blob, "<f8", n_ent * dim, offset).reshape(n_ent, dim)
        offset += n_ent * dim * 8
        rel = np.frombuffer(blob, "<f8", n_rel * dim, offset).reshape(n_rel, dim)
        return cls(KINDS[kind], ent.astype(np.float64), rel.astype(np.float64))


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def score_arrays(kind: str, h: np.ndarray, r: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Row-wise scores; inputs broadcast along the leading axis."""
    if kind == "transe":
        d = h + r - t
        return -np.sqrt((d * d).sum(-1))
    if kind == "distmult":
        # h*t first: swapping h and t then gives bitwise-equal scores
        return (h * t * r).sum(-1)
    if kind == "complex":
        k = h.shape[-1] // 2
        hr, hi = h[..., :k], h[..., k:]
        rr, ri = r[..., :k], r[..., k:]
        tr, ti = t[..., :k], t[..., k:]
        return (hr * rr * tr + hi * rr * ti + hr * ri * ti - hi * ri * tr).sum(-1)
    raise ValueError(f"unknown model kind {kind!r}")


def score_gradients(kind: str, h, r, t):
    """d score / d (h, r, t) for row-aligned batches."""
    if kind == "distmult":
        return r * t, h * t, h * r
    if kind == "complex":
        k = h.shape[-1] // 2
        hr, hi = h[:, :k], h[:, k:]
        rr, ri = r[:, :k], r[:, k:]
        tr, ti = t[:, :k], t[:, k:]
        gh = np.concatenate([rr * tr + ri * ti, rr * ti - ri * tr], axis=1)
        gr = np.concatenate([hr * tr + hi * ti, hr * ti - hi * tr], axis=1)
        gt = np.concatenate([hr * rr - hi * ri, hi * rr + hr * ri], axis=1)
        return gh, gr, gt
    if kind == "transe":
        d = h + r - t
        unit = d / np.maximum(np.sqrt((d * d).sum(-1, keepdims=True)), 1e-12)
        return -unit, -unit, unit
    raise ValueError(f"unknown model kind {kind!r}")


# ---------------------------------------------------------------- pretraining

@dataclass
class PretrainConfig:
    kind: str = "complex"
    dim: int = 100
    negatives: int = 10
    batch_size: int = 256
    lr: float = 1e-3
    epochs: int = 500
    patience: int = 20
    eval_every: int = 5
    l2: float = 0.0


def init_table(kind: str, dim: int, n_entities: int, n_relations: int,
               rng: np.random.Generator) -> EmbeddingTable:
    bound = 1.0 / np.sqrt(dim)
    ent = rng.uniform(-bound, bound, (n_entities, dim))
    rel = rng.uniform(-bound, bound, (n_relations, dim))
    ent /= np.linalg.norm(ent, axis=1, keepdims=True)
    rel /= np.linalg.norm(rel, axis=1, keepdims=True)
    rel[:N_RESERVED] = 0.0
    return EmbeddingTable(kind, ent, rel)


def link_prediction_ranks(table: EmbeddingTable, queries: list[Triple],
                          known: set[Triple] | None = None) -> np.ndarray:
    """1-based tail ranks among all entities; ``known`` true tails are filtered out."""
    if not queries:
        return np.zeros(0)
    q = np.asarray(queries, dtype=np.int64)
    scores = table.score_all_tails(q[:, 0], q[:, 1])
    target = scores[np.arange(len(q)), q[:, 2]]
    if known:
        by_query: dict[tuple[int, int], list[int]] = {}
        for h, r, t in known:
            by_query.setdefault((h, r), []).append(t)
        for i, (h, r, t) in enumerate(q):
            others = [x for x in by_query.get((int(h), int(r)), ()) if x != t]
            scores[i, others] = -np.inf
    return 1 + (scores > target[:, None]).sum(axis=1)


def pretrain(config: PretrainConfig, triples: list[Triple], n_entities: int, n_relations: int,
             rng: np.random.Generator, valid: list[Triple] | None = None,
             known: set[Triple] | None = None) -> tuple[EmbeddingTable, list[dict]]:
    """Mini-batch BCE training with uniformly corrupted heads/tails.

    Each triple is also trained in reversed form with the inverse relation so
    that inverse relation rows carry meaning. Returns the best table (by
    filtered validation MRR when ``valid`` is given) and a per-check log.
    """
    if not triples:
        raise ValueError("pretraining needs at least one triple")
    table = init_table(config.kind, config.dim, n_entities, n_relations, rng)
    data = np.asarray(triples, dtype=np.int64)
    inv = np.stack([data[:, 2], data[:, 1] ^ 1, data[:, 0]], axis=1)
    data = np.unique(np.concatenate([data, inv]), axis=0)
    params = {"entity": table.entity, "relation": table.relation}
    opt = Adam(params, lr=config.lr)
    k = config.negatives
    log: list[dict] = []
    best_mrr, best, since_best = -1.0, None, 0
    t0 = time.time()
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(data))
        losses = []
        for bi, start in enumerate(range(0, len(data), config.batch_size)):
            pos = data[order[start:start + config.batch_size]]
            b = len(pos)
            neg = np.repeat(pos, k, axis=0)
            corrupt_col = 2 if bi % 2 == 0 else 0
            neg[:, corrupt_col] = rng.integers(0, n_entities, size=b * k)
            batch = np.concatenate([pos, neg])
            labels = np.concatenate([np.ones(b), np.zeros(b * k)])
            weights = np.concatenate([np.ones(b), np.full(b * k, 1.0 / k)]) / b
            h = table.entity[batch[:, 0]]
            r = table.relation[batch[:, 1]]
            t = table.entity[batch[:, 2]]
            s = score_arrays(config.kind, h, r, t)
            p = sigmoid_array(s)
            eps = 1e-12
            losses.append(float(-(weights * (labels * np.log(p + eps)
                                             + (1 - labels) * np.log(1 - p + eps))).sum()))
            ds = (weights * (p - labels))[:, None]
            gh, gr, gt = score_gradients(config.kind, h, r, t)
            g_ent = np.zeros_like(table.entity)
            g_rel = np.zeros_like(table.relation)
            np.add.at(g_ent, batch[:, 0], ds * gh)
            np.add.at(g_ent, batch[:, 2], ds * gt)
            np.add.at(g_rel, batch[:, 1], ds * gr)
            if config.l2:
                g_ent += config.l2 * table.entity
                g_rel += config.l2 * table.relation
            g_rel[:N_RESERVED] = 0.0
            opt.step({"entity": g_ent, "relation": g_rel})
            if config.kind == "transe":
                norms = np.linalg.norm(table.entity, axis=1, keepdims=True)
                table.entity /= np.maximum(norms, 1.0)
        mean_loss = float(np.mean(losses))
        if not np.isfinite(mean_loss) or not np.isfinite(table.entity).all():
            raise FloatingPointError(f"embedding pretraining diverged at epoch {epoch}")
        record = {"epoch": epoch, "loss": mean_loss}
        check = valid and (epoch % config.eval_every == 0 or epoch == config.epochs)
        if check:
            ranks = link_prediction_ranks(table, valid, known)
            record["valid_mrr"] = float(np.mean(1.0 / ranks))
            if record["valid_mrr"] > best_mrr:
                best_mrr, since_best = record["valid_mrr"], 0
                best = EmbeddingTable(config.kind, table.entity.copy(), table.relation.copy())
            else:
                since_best += config.eval_every
            logger.info("pretrain epoch %d loss %.4f valid_mrr %.4f (%.1fs)", epoch, mean_loss,
                        record["valid_mrr"], time.time() - t0)
        log.append(record)
        if check and since_best >= config.patience:
            break
    if best is None:
        best = EmbeddingTable(config.kind, table.entity.copy(), table.relation.copy())
    return best, log


def write_sidecar(path: str | Path, config: PretrainConfig, sha256: str, metrics: dict) -> None:
    Path(path).write_text(json.dumps({"config": asdict(config), "sha256": sha256,
                                      "metrics": metrics}, indent=1, sort_keys=True))

