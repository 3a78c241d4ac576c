"""History-dependent action policy.

At every step the agent scores its available actions twice: a local score
from the attended LSTM encoding of the path walked so far, and a global
score from the pretrained triple scorer applied to (query head, query
relation, candidate entity). The two are fused, optionally masked by
score-dependent action dropout, and normalised into a distribution.

Everything here is batched over rows (rollouts or beams); the scalar helpers
at the bottom wrap the batched code for single-query use.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .embedding import EmbeddingTable
from .kg_store import START, KnowledgeGraph
from .numerics import Tensor

AGGREGATORS = ("scalar_product", "sum")
DROPOUTS = ("dad", "random", "none")
GK_FORMS = ("raw", "sigmoid")
PARAM_NAMES = ("lstm.W", "lstm.b", "W1", "W2")


@dataclass
class PolicyConfig:
    aggregator: str = "scalar_product"
    use_local: bool = True
    use_global: bool = True
    use_attention: bool = True
    dropout: str = "dad"
    dropout_rate: float = 0.5  # drop probability for dropout="random"
    dad_standardize: bool = True
    gk_form: str = "raw"       # "sigmoid": fuse sigmoid(psi) instead of the raw score

    def __post_init__(self):
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"aggregator must be one of {AGGREGATORS}")
        if self.dropout not in DROPOUTS:
            raise ValueError(f"dropout must be one of {DROPOUTS}")
        if self.gk_form not in GK_FORMS:
            raise ValueError(f"gk_form must be one of {GK_FORMS}")
        if not (self.use_local or self.use_global):
            raise ValueError("at least one of local/global knowledge must be enabled")


def init_params(dim: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """LSTM (input 2*dim -> hidden 2*dim) plus the two fusion matrices."""
    d2 = 2 * dim
    b = np.zeros(4 * d2)
    b[d2:2 * d2] = 1.0  # forget gate
    return {
        "lstm.W": nx.init_uniform(rng, (2 * d2, 4 * d2), 2 * d2),
        "lstm.b": b,
        "W1": nx.init_uniform(rng, (d2, d2), d2),
        "W2": nx.init_uniform(rng, (d2, d2), d2),
    }


@dataclass
class Carry:
    hiddens: list      # Tensors (B, 2*dim), h_0 .. h_s
    cell: Tensor


class Policy:
    def __init__(self, params: dict[str, np.ndarray], table: EmbeddingTable, kg: KnowledgeGraph,
                 config: PolicyConfig | None = None):
        self.params = params
        self.table = table
        self.kg = kg
        self.config = config or PolicyConfig()
        self.dim = table.dim

    def tensors(self, params: dict[str, np.ndarray] | None = None, track: bool = True) -> dict:
        params = self.params if params is None else params
        if track:
            return {k: nx.parameter(params[k], k) for k in PARAM_NAMES}
        return {k: Tensor(params[k]) for k in PARAM_NAMES}

    def lstm_weights(self, t: dict) -> dict:
        return {"W": t["lstm.W"], "b": t["lstm.b"]}

    def step_input(self, relations, entities) -> np.ndarray:
        return np.concatenate([self.table.relation[relations], self.table.entity[entities]], axis=1)

    def query_embedding(self, heads, relations) -> np.ndarray:
        return np.concatenate([self.table.entity[heads], self.table.relation[relations]], axis=1)

    def start(self, t: dict, heads) -> Carry:
        heads = np.asarray(heads)
        zeros = Tensor(np.zeros((len(heads), 2 * self.dim)))
        x = self.step_input(np.full(len(heads), START), heads)
        h, c = nx.lstm_step(self.lstm_weights(t), zeros, zeros, x)
        return Carry([h], c)

    def advance(self, t: dict, carry: Carry, relations, entities) -> Carry:
        x = self.step_input(relations, entities)
        h, c = nx.lstm_step(self.lstm_weights(t), carry.hiddens[-1], carry.cell, x)
        return Carry(carry.hiddens + [h], c)

    def context(self, q: np.ndarray, hiddens: list) -> Tensor:
        if not self.config.use_attention:
            return hiddens[-1]
        return attend(q, hiddens)[1]

    def local_scores(self, t: dict, context: Tensor, rel_idx, ent_idx) -> Tensor:
        """lk[b, a] = [rel ; ent](action a) . W1 softmax(W2 c_b) (row-vector form)."""
        u = nx.softmax(nx.matmul(context, t["W2"]), axis=-1)
        u = nx.matmul(u, t["W1"])
        d = self.dim
        by_rel = nx.matmul(u[:, :d], self.table.relation.T)
        by_ent = nx.matmul(u[:, d:], self.table.entity.T)
        return nx.take_along(by_rel, rel_idx) + nx.take_along(by_ent, ent_idx)

    def action_scores(self, t: dict, heads, relations, global_all: np.ndarray, carry: Carry,
                      current):
        """Fused scores over the padded action sets of ``current``.

        Returns ``(fused, gk, rel_idx, ent_idx, valid)``; ``valid`` marks real
        (non-padding) actions.
        """
        current = np.asarray(current)
        lengths = self.kg.action_len[current]
        width = int(lengths.max())
        rel_idx = self.kg.action_rel[current, :width]
        ent_idx = self.kg.action_ent[current, :width]
        valid = np.arange(width)[None, :] < lengths[:, None]
        gk = np.take_along_axis(global_all, ent_idx, axis=1)
        cfg = self.config
        fuse_gk = nx.sigmoid_array(gk) if cfg.gk_form == "sigmoid" else gk
        if cfg.use_local:
            q = self.query_embedding(heads, relations)
            lk = self.local_scores(t, self.context(q, carry.hiddens), rel_idx, ent_idx)
            if cfg.use_global:
                fused = aggregate(lk, fuse_gk, cfg.aggregator)
            else:
                fused = lk
        else:
            fused = Tensor(fuse_gk)
        return fused, gk, rel_idx, ent_idx, valid

    def dropout_mask(self, rng: np.random.Generator, gk: np.ndarray, valid: np.ndarray) -> np.ndarray:
        cfg = self.config
        if cfg.dropout == "none":
            return valid.copy()
        if cfg.dropout == "dad":
            keep = dad_keep_probs(gk, valid, cfg.dad_standardize)
        else:
            keep = np.full(gk.shape, 1.0 - cfg.dropout_rate)
        draws = nx.sample_bernoulli(rng, keep).astype(bool)
        return force_mask(draws & valid, gk, valid)


def attend(q: np.ndarray, hiddens: list) -> tuple[Tensor, Tensor]:
    """Attention weights (B, T) of ``q`` over the hidden sequence and the weighted context."""
    scores = nx.stack([(h * q).sum(axis=1) for h in hiddens], axis=1)
    alpha = nx.softmax(scores, axis=1)
    context = hiddens[0] * alpha[:, 0:1]
    for m in range(1, len(hiddens)):
        context = context + hiddens[m] * alpha[:, m:m + 1]
    return alpha, context


def aggregate(lk, gk, mode: str = "scalar_product"):
    lk_shape = lk.shape if isinstance(lk, Tensor) else np.shape(lk)
    if lk_shape != np.shape(gk.data if isinstance(gk, Tensor) else gk):
        raise ValueError(f"length mismatch: {lk_shape} vs {np.shape(gk)}")
    if mode == "sum":
        return nx.add(lk, gk)
    if mode == "scalar_product":
        return nx.mul(lk, gk)
    raise ValueError(f"unknown aggregator {mode!r}")


def dad_keep_probs(gk: np.ndarray, valid: np.ndarray, standardize: bool = True) -> np.ndarray:
    """Keep probabilities sigmoid(gk), optionally on per-row standardised scores."""
    gk = np.asarray(gk, dtype=np.float64)
    if standardize:
        n = np.maximum(valid.sum(axis=1, keepdims=True), 1)
        mean = np.where(valid, gk, 0.0).sum(axis=1, keepdims=True) / n
        var = np.where(valid, (gk - mean) ** 2, 0.0).sum(axis=1, keepdims=True) / n
        gk = (gk - mean) / np.maximum(np.sqrt(var), 1e-6)
    return np.where(valid, nx.sigmoid_array(gk), 0.0)


def force_mask(mask: np.ndarray, gk: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Keep the self-loop (column 0) and at least one other valid action per row."""
    mask = mask.copy()
    mask[:, 0] = True
    others = valid.copy()
    others[:, 0] = False
    empty = others.any(axis=1) & ~(mask & others).any(axis=1)
    if empty.any():
        best = np.argmax(np.where(others, gk, -np.inf), axis=1)
        rows = np.nonzero(empty)[0]
        mask[rows, best[rows]] = True
    return mask


# ---------------------------------------------------------------- single-query helpers

@dataclass
class ActionDistribution:
    probs: np.ndarray
    log_probs: Tensor


def attention_weights(q, hiddens) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)[None, :]
    hs = [Tensor(np.asarray(h, dtype=np.float64)[None, :]) for h in hiddens]
    return attend(q, hs)[0].data[0]


def encode_history(policy: Policy, trajectory, params: dict | None = None) -> list[np.ndarray]:
    """Hidden states h_0..h_s for a path [(START, e_h), (r_1, e_1), ...]."""
    t = policy.tensors(params, track=False)
    (_, head), rest = trajectory[0], trajectory[1:]
    carry = policy.start(t, [head])
    for r, e in rest:
        carry = policy.advance(t, carry, [r], [e])
    return [h.data[0] for h in carry.hiddens]


def local_knowledge(policy: Policy, q, hiddens, actions, params: dict | None = None) -> np.ndarray:
    t = policy.tensors(params, track=False)
    hs = [Tensor(np.asarray(h, dtype=np.float64)[None, :]) for h in hiddens]
    q = np.asarray(q, dtype=np.float64)[None, :]
    ctx = policy.context(q, hs)
    rel_idx = np.array([[r for r, _ in actions]])
    ent_idx = np.array([[e for _, e in actions]])
    return policy.local_scores(t, ctx, rel_idx, ent_idx).data[0]


def dad_mask(rng: np.random.Generator, gk, training: bool, standardize: bool = True) -> np.ndarray:
    gk = np.asarray(gk, dtype=np.float64)[None, :]
    valid = np.ones(gk.shape, dtype=bool)
    if not training:
        return valid[0].astype(np.int64)
    draws = nx.sample_bernoulli(rng, dad_keep_probs(gk, valid, standardize)).astype(bool)
    return force_mask(draws, gk, valid)[0].astype(np.int64)


def action_distribution(fused, mask) -> ActionDistribution:
    fused = fused if isinstance(fused, Tensor) else Tensor(np.asarray(fused, dtype=np.float64))
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("every action is masked")
    logp = nx.log_softmax(fused, mask)
    return ActionDistribution(np.where(mask, np.exp(logp.data), 0.0), logp)
