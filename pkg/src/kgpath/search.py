"""Walking the graph for a query: stopping rule, state updates and rollouts."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import numerics as nx
from .kg_store import SELF_LOOP, START, KnowledgeGraph, Vocabulary
from .numerics import Tensor
from .policy import Policy

STOP_MAX_STEP = "max_step"
STOP_SELF_LOOP = "self_loop"


class SearchError(RuntimeError):
    pass


@dataclass(frozen=True)
class SearchState:
    head: int
    relation: int
    current: int
    step: int = 0
    loops: int = 0
    trajectory: tuple = ()
    stopped: bool = False


def init_state(query: tuple[int, int], max_steps: int, max_loops: int) -> SearchState:
    if max_steps < 1 or max_loops < 1:
        raise ValueError("max_steps and max_loops must be >= 1")
    head, relation = query[0], query[1]
    return SearchState(head, relation, head, trajectory=((START, head),))


def should_stop(state: SearchState, max_steps: int, max_loops: int) -> bool:
    return state.step >= max_steps or state.loops >= max_loops


def advance(state: SearchState, action: tuple[int, int], max_steps: int, max_loops: int) -> SearchState:
    """Take ``action``; consecutive self-loops count up, any real edge resets the count."""
    if state.stopped:
        raise SearchError("cannot advance a stopped search")
    relation, entity = action
    loops = state.loops + 1 if relation == SELF_LOOP else 0
    new = replace(state, current=entity, step=state.step + 1, loops=loops,
                  trajectory=state.trajectory + ((relation, entity),))
    return replace(new, stopped=should_stop(new, max_steps, max_loops))


# ---------------------------------------------------------------- batched rollouts

@dataclass
class BatchRollout:
    heads: np.ndarray
    relations: np.ndarray
    final: np.ndarray          # (B,) answer entity per row
    actions: np.ndarray        # (B, S) chosen action index, -1 after stopping
    path_rel: np.ndarray       # (B, S) relation taken, -1 after stopping
    path_ent: np.ndarray       # (B, S)
    masks: list                # per-step (B, width) boolean masks actually applied
    log_prob: Tensor           # (B,) summed log-probabilities of executed steps
    step_log_probs: list = field(default_factory=list)  # per-step (B,) Tensors, zero when inactive
    length: np.ndarray = None
    stopped_by: np.ndarray = None


def rollout_batch(policy: Policy, heads, relations, rng: np.random.Generator | None,
                  max_steps: int, max_loops: int, mode: str = "sample", training: bool = False,
                  answers=None, mask_query_edge: bool = False, params: dict | None = None,
                  forced: BatchRollout | None = None, track: bool = True) -> BatchRollout:
    """Run one rollout per row.

    ``training`` turns on action dropout. ``answers`` are only used to hide
    the query's own edge (h, r, t) when ``mask_query_edge`` is set; the
    policy never sees them. ``forced`` replays the actions and masks of a
    previous rollout, which makes the log-probability a smooth function of
    ``params`` (used for gradient checks).
    """
    if mode not in ("sample", "greedy"):
        raise ValueError(f"unknown mode {mode!r}")
    heads = np.asarray(heads, dtype=np.int64)
    relations = np.asarray(relations, dtype=np.int64)
    b = len(heads)
    t = policy.tensors(params, track=track)
    global_all = policy.table.score_all_tails(heads, relations)
    carry = policy.start(t, heads)
    current = heads.copy()
    loops = np.zeros(b, dtype=np.int64)
    steps = np.zeros(b, dtype=np.int64)
    active = np.ones(b, dtype=bool)
    stopped_by = np.full(b, "", dtype=object)
    actions = np.full((b, max_steps), -1, dtype=np.int64)
    path_rel = np.full((b, max_steps), -1, dtype=np.int64)
    path_ent = np.full((b, max_steps), -1, dtype=np.int64)
    masks, step_lps = [], []
    total = Tensor(np.zeros(b))
    for s in range(max_steps):
        if not active.any():
            break
        fused, gk, rel_idx, ent_idx, valid = policy.action_scores(
            t, heads, relations, global_all, carry, current)
        if forced is not None:
            mask = forced.masks[s]
        else:
            mask = valid.copy()
            if mask_query_edge and answers is not None:
                hide = ((current == heads)[:, None] & (rel_idx == relations[:, None])
                        & (ent_idx == np.asarray(answers)[:, None]))
                mask &= ~hide
            if training:
                mask = policy.dropout_mask(rng, gk, mask)
        logp = nx.log_softmax(fused, mask)
        if forced is not None:
            choice = np.where(active, forced.actions[:, s], 0)
        elif mode == "greedy":
            choice = np.argmax(logp.data, axis=1)
        else:
            choice = nx.sample_categorical_rows(rng, np.where(mask, np.exp(logp.data), 0.0))
        choice = np.where(active, choice, 0)
        chosen = nx.take_along(logp, choice[:, None])[:, 0] * active.astype(np.float64)
        total = total + chosen
        step_lps.append(chosen)
        masks.append(mask)
        rel = np.take_along_axis(rel_idx, choice[:, None], axis=1)[:, 0]
        ent = np.take_along_axis(ent_idx, choice[:, None], axis=1)[:, 0]
        actions[active, s] = choice[active]
        path_rel[active, s] = rel[active]
        path_ent[active, s] = ent[active]
        current = np.where(active, ent, current)
        steps += active
        loops = np.where(active, np.where(rel == SELF_LOOP, loops + 1, 0), loops)
        hit_loop = active & (loops >= max_loops)
        hit_max = active & ~hit_loop & (steps >= max_steps)
        stopped_by[hit_loop] = STOP_SELF_LOOP
        stopped_by[hit_max] = STOP_MAX_STEP
        active &= ~(hit_loop | hit_max)
        if active.any():
            carry = policy.advance(t, carry, np.where(active, rel, SELF_LOOP), current)
    return BatchRollout(heads, relations, current, actions, path_rel, path_ent, masks, total,
                        step_lps, steps, stopped_by)


@dataclass
class RolloutRecord:
    final: int
    actions: list[int]
    log_probs: list            # per-step log-probability Tensors (tape-connected)
    reward: int | None
    trajectory: list[tuple[int, int]]
    stopped_by: str


def rollout(kg: KnowledgeGraph, policy: Policy, query: tuple, rng: np.random.Generator | None,
            max_steps: int, max_loops: int, mode: str = "sample", training: bool = False,
            params: dict | None = None) -> RolloutRecord:
    """Single-query rollout. ``query`` is (head, relation) or (head, relation, tail);
    a tail, when present, is only used for the reward."""
    if not 0 <= query[0] < kg.n_entities:
        raise KeyError(f"unknown head entity {query[0]}")
    batch = rollout_batch(policy, [query[0]], [query[1]], rng, max_steps, max_loops, mode,
                          training, params=params)
    n = int(batch.length[0])
    path = [(int(batch.path_rel[0, i]), int(batch.path_ent[0, i])) for i in range(n)]
    final = int(batch.final[0])
    reward = int(final == query[2]) if len(query) > 2 else None
    return RolloutRecord(final, [int(a) for a in batch.actions[0, :n]],
                         [lp[0] for lp in batch.step_log_probs[:n]], reward,
                         [(START, int(query[0]))] + path, str(batch.stopped_by[0]))


def explanation_line(vocab: Vocabulary, query: tuple, trajectory, stopped_by: str) -> str:
    """One JSON line describing a walked path with names instead of ids."""
    h, r = query[0], query[1]
    out = {"query": [vocab.entities[h], vocab.relations[r]]
           + ([vocab.entities[query[2]]] if len(query) > 2 else []),
           "path": [[vocab.relations[rel], vocab.entities[ent]] for rel, ent in trajectory],
           "stopped_by": stopped_by}
    return json.dumps(out)
