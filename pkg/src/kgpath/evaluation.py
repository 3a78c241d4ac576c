"""Beam-search inference and ranking metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .kg_store import SELF_LOOP, START, Triple
from .numerics import Tensor
from .policy import Carry, Policy
from .search import STOP_MAX_STEP, STOP_SELF_LOOP

INF = math.inf
DEFAULT_BEAM = 128


def mrr(ranks) -> float:
    ranks = list(ranks)
    if not ranks:
        raise ValueError("no ranks")
    return float(np.mean([0.0 if r == INF else 1.0 / r for r in ranks]))


def hits_at(ranks, n: int) -> float:
    if n < 1:
        raise ValueError("n must be >= 1")
    ranks = list(ranks)
    if not ranks:
        raise ValueError("no ranks")
    return float(np.mean([r <= n for r in ranks]))


@dataclass
class RankedAnswer:
    entity: int
    score: float
    rank: int
    path: tuple = ()
    stopped_by: str = ""


@dataclass
class MetricsReport:
    mrr: float
    hits1: float
    hits3: float
    hits10: float
    ranks: list
    unanswered: int
    skipped: int = 0
    protocol: str = "raw"
    by_distance: dict = field(default_factory=dict)

    @classmethod
    def from_ranks(cls, ranks, skipped: int = 0, protocol: str = "raw", distances=None) -> "MetricsReport":
        by_distance = {}
        if distances is not None and any(d is not None for d in distances):
            for d in sorted({d for d in distances if d is not None}):
                sub = [r for r, dd in zip(ranks, distances) if dd == d]
                by_distance[int(d)] = {"mrr": mrr(sub), "hits1": hits_at(sub, 1),
                                       "hits10": hits_at(sub, 10), "count": len(sub)}
        return cls(mrr(ranks), hits_at(ranks, 1), hits_at(ranks, 3), hits_at(ranks, 10),
                   list(ranks), sum(r == INF for r in ranks), skipped, protocol, by_distance)

    def to_json(self) -> dict:
        return {"protocol": self.protocol, "mrr": self.mrr, "hits@1": self.hits1,
                "hits@3": self.hits3, "hits@10": self.hits10, "queries": len(self.ranks),
                "unanswered": self.unanswered, "skipped": self.skipped,
                "by_distance": {str(k): v for k, v in self.by_distance.items()},
                "ranks": [None if r == INF else int(r) for r in self.ranks]}

    def table(self) -> str:
        head = f"{'protocol':<10}{'MRR':>8}{'H@1':>8}{'H@3':>8}{'H@10':>8}{'n':>7}"
        row = (f"{self.protocol:<10}{self.mrr:>8.4f}{self.hits1:>8.4f}{self.hits3:>8.4f}"
               f"{self.hits10:>8.4f}{len(self.ranks):>7d}")
        return head + "\n" + row


def _drop_dominated(order, parents, cols, current, loops, steps, stopped, rel_idx, ent_idx,
                    live_pos, max_steps, max_loops):
    """Remove finished candidates whose entity already has a better finished candidate.

    Such a path can never change the final ranking, so dropping it only frees
    a beam slot.
    """
    seen: set[int] = set()
    kept = []
    for j in order:
        p, col = int(parents[j]), int(cols[j])
        if col < 0:
            done, entity = True, int(current[p])
        else:
            i = live_pos[p]
            entity = int(ent_idx[i, col])
            n_loops = loops[p] + 1 if rel_idx[i, col] == SELF_LOOP else 0
            done = steps[p] + 1 >= max_steps or n_loops >= max_loops
        if done:
            if entity in seen:
                continue
            seen.add(entity)
        kept.append(j)
    return np.asarray(kept, dtype=np.int64)


def beam_search(policy: Policy, query: tuple, beam: int, max_steps: int, max_loops: int,
                params: dict | None = None, dedupe_stopped: bool = True) -> list[RankedAnswer]:
    """Top-``beam`` paths by summed log-probability, reduced to one entry per final entity.

    Stopped beams stay in the pool with their final score. Candidates are
    ordered beam by beam (stopped beams contribute themselves, live beams
    their actions in action-set order) and a stable sort keeps that order
    among equal scores. With ``dedupe_stopped`` a finished path is dropped
    before truncation when a better finished path already ends at the same
    entity, so the last step keeps up to ``beam`` distinct answers.
    """
    if beam < 1:
        raise ValueError("beam width must be >= 1")
    head, relation = int(query[0]), int(query[1])
    t = policy.tensors(params, track=False)
    global_all = policy.table.score_all_tails([head], [relation])
    carry = policy.start(t, [head])
    current = np.array([head])
    score = np.zeros(1)
    loops = np.zeros(1, dtype=np.int64)
    steps = np.zeros(1, dtype=np.int64)
    stopped = np.zeros(1, dtype=bool)
    paths: list[tuple] = [((START, head),)]
    for _ in range(max_steps):
        live = np.nonzero(~stopped)[0]
        if live.size == 0:
            break
        live_carry = Carry([Tensor(h.data[live]) for h in carry.hiddens], Tensor(carry.cell.data[live]))
        n = live.size
        fused, _, rel_idx, ent_idx, valid = policy.action_scores(
            t, np.full(n, head), np.full(n, relation), np.repeat(global_all, n, axis=0),
            live_carry, current[live])
        logp = nx.log_softmax(fused, valid).data
        # candidate table: (parent row, action column or -1 for carried, score)
        parents, cols, scores = [], [], []
        live_pos = {int(row): i for i, row in enumerate(live)}
        for row in range(len(current)):
            if stopped[row]:
                parents.append(row)
                cols.append(-1)
                scores.append(score[row])
                continue
            i = live_pos[row]
            k = int(valid[i].sum())
            parents.extend([row] * k)
            cols.extend(range(k))
            scores.extend(score[row] + logp[i, :k])
        parents = np.asarray(parents)
        cols = np.asarray(cols)
        scores = np.asarray(scores, dtype=np.float64)
        order = np.argsort(-scores, kind="stable")
        if dedupe_stopped:
            order = _drop_dominated(order, parents, cols, current, loops, steps, stopped,
                                    rel_idx, ent_idx, live_pos, max_steps, max_loops)
        keep = order[:beam]
        parents, cols, scores = parents[keep], cols[keep], scores[keep]
        new_rel = np.full(len(keep), SELF_LOOP)
        new_ent = current[parents].copy()
        expanded = cols >= 0
        for j in np.nonzero(expanded)[0]:
            i = live_pos[int(parents[j])]
            new_rel[j] = rel_idx[i, cols[j]]
            new_ent[j] = ent_idx[i, cols[j]]
        new_loops = loops[parents].copy()
        new_steps = steps[parents].copy()
        new_loops[expanded] = np.where(new_rel[expanded] == SELF_LOOP, new_loops[expanded] + 1, 0)
        new_steps[expanded] += 1
        new_stopped = stopped[parents] | (new_steps >= max_steps) | (new_loops >= max_loops)
        paths = [paths[p] + ((int(new_rel[j]), int(new_ent[j])),) if expanded[j] else paths[p]
                 for j, p in enumerate(parents)]
        hiddens = [Tensor(h.data[parents]) for h in carry.hiddens]
        cell = Tensor(carry.cell.data[parents])
        base = Carry(hiddens, cell)
        grow = expanded & ~new_stopped
        if grow.any():
            nxt = policy.advance(t, base, new_rel, new_ent)
            # rows that did not grow keep a copy of their last hidden state; never read again
            hiddens = hiddens + [Tensor(np.where(grow[:, None], nxt.hiddens[-1].data, hiddens[-1].data))]
            cell = Tensor(np.where(grow[:, None], nxt.cell.data, cell.data))
            carry = Carry(hiddens, cell)
        else:
            carry = base
        current, score, loops, steps, stopped = new_ent, scores, new_loops, new_steps, new_stopped
    best: dict[int, tuple[float, int]] = {}
    for row, (e, s) in enumerate(zip(current, score)):
        e = int(e)
        if e not in best or s > best[e][0]:
            best[e] = (float(s), row)
    order = sorted(best.items(), key=lambda kv: (-kv[1][0], kv[0]))
    answers = []
    for rank, (e, (s, row)) in enumerate(order, start=1):
        why = STOP_SELF_LOOP if loops[row] >= max_loops else STOP_MAX_STEP
        answers.append(RankedAnswer(e, s, rank, paths[row], why))
    return answers


def rank_of(answers: list[RankedAnswer], target: int, exclude=()) -> float:
    """1-based position of ``target`` after removing ``exclude`` entities; inf if absent."""
    exclude = set(exclude) - {target}
    pos = 0
    for a in answers:
        if a.entity in exclude:
            continue
        pos += 1
        if a.entity == target:
            return pos
    return INF


def evaluate(policy: Policy, queries: list[Triple], beam: int, max_steps: int, max_loops: int,
             known: set[Triple] | None = None, distances=None, params: dict | None = None,
             on_query=None) -> dict[str, MetricsReport]:
    """Raw beam ranks, plus filtered ranks when ``known`` true triples are given.

    Raw ranks count every beam answer ahead of the target. Filtered ranks skip
    other entities ``x`` with ``(h, r, x)`` in ``known``. Queries whose head
    the graph does not know are skipped and counted.
    """
    tails: dict[tuple[int, int], set[int]] = {}
    for h, r, x in known or ():
        tails.setdefault((h, r), set()).add(x)
    raw, filt, kept_dist = [], [], []
    skipped = 0
    for i, (h, r, target) in enumerate(queries):
        if not 0 <= h < policy.kg.n_entities:
            skipped += 1
            continue
        answers = beam_search(policy, (h, r), beam, max_steps, max_loops, params)
        raw.append(rank_of(answers, target))
        filt.append(rank_of(answers, target, tails.get((h, r), ())))
        kept_dist.append(distances[i] if distances is not None else None)
        if on_query is not None:
            on_query(i, (h, r, target), answers)
    out = {"raw": MetricsReport.from_ranks(raw, skipped, "raw", kept_dist)}
    if known is not None:
        out["filtered"] = MetricsReport.from_ranks(filt, skipped, "filtered", kept_dist)
    return out
