"""REINFORCE training of the path policy."""
from __future__ import annotations

import json
import logging
import struct
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import numerics as nx
from .embedding import EmbeddingTable, file_sha256
from .evaluation import evaluate
from .kg_store import KnowledgeGraph, Triple
from .policy import PARAM_NAMES, Policy, PolicyConfig, init_params
from .search import BatchRollout, rollout_batch

logger = logging.getLogger(__name__)

MAGIC = b"GMH1"
FORMAT_VERSION = 1


@dataclass
class TrainConfig:
    max_steps: int = 3
    max_loops: int = 2
    action_cap: int = 200
    num_rollouts: int = 20
    batch_size: int = 32
    lr: float = 1e-3
    epochs: int = 400
    patience: int = 30
    aggregator: str = "scalar_product"
    dropout: str = "dad"
    dropout_rate: float = 0.5
    dad_standardize: bool = True
    gk_form: str = "raw"
    use_local: bool = True
    use_global: bool = True
    use_attention: bool = True
    baseline: bool = False
    clip_norm: float = 5.0
    mask_query_edge: bool = True
    valid_beam: int = 32
    valid_limit: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.max_steps < 1 or self.max_loops < 1 or self.num_rollouts < 1:
            raise ValueError("max_steps, max_loops and num_rollouts must be >= 1")

    def policy_config(self) -> PolicyConfig:
        return PolicyConfig(self.aggregator, self.use_local, self.use_global, self.use_attention,
                            self.dropout, self.dropout_rate, self.dad_standardize, self.gk_form)

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in obj.items() if k in names})


@dataclass
class Checkpoint:
    params: dict
    config: TrainConfig
    embedding_path: str = ""
    embedding_sha256: str = ""
    epoch: int = 0
    history: list = field(default_factory=list)

    def save(self, path: str | Path) -> None:
        blob = bytearray(MAGIC + struct.pack("<II", FORMAT_VERSION, len(PARAM_NAMES)))
        for name in PARAM_NAMES:
            arr = np.ascontiguousarray(self.params[name], dtype="<f8")
            encoded = name.encode()
            blob += struct.pack("<I", len(encoded)) + encoded
            blob += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
            blob += arr.tobytes()
        trailer = json.dumps({"config": asdict(self.config), "embedding_path": self.embedding_path,
                              "embedding_sha256": self.embedding_sha256, "epoch": self.epoch,
                              "history": self.history}, sort_keys=True).encode()
        blob += trailer + struct.pack("<Q", len(trailer))
        Path(path).write_bytes(bytes(blob))

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        blob = Path(path).read_bytes()
        if blob[:4] != MAGIC:
            raise ValueError(f"{path}: not a policy checkpoint (bad magic)")
        version, count = struct.unpack_from("<II", blob, 4)
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        offset = 12
        params = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", blob, offset)
            name = blob[offset + 4:offset + 4 + n].decode()
            offset += 4 + n
            (ndim,) = struct.unpack_from("<I", blob, offset)
            shape = struct.unpack_from(f"<{ndim}I", blob, offset + 4)
            offset += 4 + 4 * ndim
            size = int(np.prod(shape))
            params[name] = np.frombuffer(blob, "<f8", size, offset).reshape(shape).astype(np.float64)
            offset += 8 * size
        (tlen,) = struct.unpack_from("<Q", blob, len(blob) - 8)
        meta = json.loads(blob[len(blob) - 8 - tlen:len(blob) - 8])
        return cls(params, TrainConfig.from_dict(meta["config"]), meta["embedding_path"],
                   meta["embedding_sha256"], meta["epoch"], meta["history"])

    def load_embeddings(self) -> EmbeddingTable:
        """Load the referenced table, refusing a file whose content changed."""
        digest = file_sha256(self.embedding_path)
        if self.embedding_sha256 and digest != self.embedding_sha256:
            raise ValueError(f"embedding file {self.embedding_path} does not match the checkpoint "
                             f"(sha256 {digest[:12]} != {self.embedding_sha256[:12]})")
        return EmbeddingTable.load(self.embedding_path)


def reward(predicted, target):
    return (np.asarray(predicted) == np.asarray(target)).astype(np.int64)


def reinforce_loss(batch: BatchRollout, rewards: np.ndarray, baseline: bool = False):
    """-(1/B) sum_b (R_b - b) * sum_s log pi(a_s); b is the batch-mean reward when enabled."""
    r = np.asarray(rewards, dtype=np.float64)
    advantage = r - r.mean() if baseline else r
    return -(batch.log_prob * advantage).sum() * (1.0 / len(r))


def reinforce_gradients(batch: BatchRollout, rewards, baseline: bool = False) -> tuple[dict, dict]:
    loss = reinforce_loss(batch, rewards, baseline)
    grads = nx.backward(loss) if loss.requires_grad else {}
    stats = {"mean_reward": float(np.mean(rewards)), "mean_len": float(np.mean(batch.length)),
             "loss": float(loss.data)}
    return grads, stats


def train(config: TrainConfig, kg: KnowledgeGraph, table: EmbeddingTable, train_queries: list[Triple],
          valid_queries: list[Triple], known: set[Triple] | None = None, log_path=None,
          embedding_path: str = "", embedding_sha256: str = "",
          params: dict | None = None) -> Checkpoint:
    """Train, validating after each epoch; returns the best checkpoint by validation MRR.

    Validation uses the filtered protocol when ``known`` is given. All
    randomness flows from ``config.seed`` through named streams.
    """
    if not train_queries:
        raise ValueError("no training queries")
    params = {k: v.copy() for k, v in (params or init_params(table.dim, nx.make_rng(config.seed, "init"))).items()}
    policy = Policy(params, table, kg, config.policy_config())
    opt = nx.Adam(params, lr=config.lr)
    shuffle_rng = nx.make_rng(config.seed, "shuffle")
    rollout_rng = nx.make_rng(config.seed, "rollout.0")
    queries = np.asarray(train_queries, dtype=np.int64)
    valid = list(valid_queries)
    if config.valid_limit and len(valid) > config.valid_limit:
        pick = nx.make_rng(config.seed, "valid").choice(len(valid), config.valid_limit, replace=False)
        valid = [valid[i] for i in sorted(pick)]
    protocol = "filtered" if known is not None else "raw"
    log_fh = open(log_path, "w") if log_path else None
    best = Checkpoint({k: v.copy() for k, v in params.items()}, config, embedding_path,
                      embedding_sha256, 0, [])
    history: list[dict] = []
    best_mrr, since_best = -1.0, 0
    try:
        for epoch in range(1, config.epochs + 1):
            t0 = time.time()
            order = shuffle_rng.permutation(len(queries))
            rewards_seen, lens_seen, clipped = [], [], 0
            for start in range(0, len(order), config.batch_size):
                q = np.repeat(queries[order[start:start + config.batch_size]], config.num_rollouts, axis=0)
                batch = rollout_batch(policy, q[:, 0], q[:, 1], rollout_rng, config.max_steps,
                                      config.max_loops, "sample", training=True, answers=q[:, 2],
                                      mask_query_edge=config.mask_query_edge)
                r = reward(batch.final, q[:, 2])
                grads, stats = reinforce_gradients(batch, r, config.baseline)
                rewards_seen.append(stats["mean_reward"] * len(r))
                lens_seen.append(stats["mean_len"] * len(r))
                if grads:
                    grads, norm = nx.clip_global_norm(grads, config.clip_norm)
                    clipped += norm > config.clip_norm
                    opt.step(grads)
                if not all(np.isfinite(v).all() for v in params.values()):
                    raise FloatingPointError(f"non-finite policy parameters in epoch {epoch}")
            total = len(order) * config.num_rollouts
            record = {"epoch": epoch, "mean_reward": sum(rewards_seen) / total,
                      "mean_len": sum(lens_seen) / total, "clipped": int(clipped)}
            if valid:
                report = evaluate(policy, valid, config.valid_beam, config.max_steps,
                                  config.max_loops, known)[protocol]
                record["valid_mrr"] = report.mrr
            history.append(record)
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
            logger.info("epoch %d reward %.3f len %.2f valid_mrr %s (%.1fs)", epoch, record["mean_reward"],
                        record["mean_len"], record.get("valid_mrr"), time.time() - t0)
            score = record.get("valid_mrr", record["mean_reward"])
            if score > best_mrr:
                best_mrr, since_best = score, 0
                best = Checkpoint({k: v.copy() for k, v in params.items()}, config, embedding_path,
                                  embedding_sha256, epoch, [])
            else:
                since_best += 1
                if since_best >= config.patience:
                    break
    except FloatingPointError:
        logger.exception("training aborted; returning last good checkpoint")
    finally:
        if log_fh:
            log_fh.close()
    best.history = history
    return best
