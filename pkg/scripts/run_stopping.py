"""Adaptive stopping on a trained UMLS checkpoint.

    python scripts/run_stopping.py [--checkpoint runs/umls/policy.gmh] [--rollouts 10000]

Samples rollouts with the loop budget N=2, checks every trajectory against
the stopping rule, then replays the same queries with N=1 and compares the
mean walk length. Writes results/stopping.json.
"""
from __future__ import annotations

import argparse

import numpy as np

from common import RUNS, setup_logging, write_result

from kgpath.kg_store import SELF_LOOP, build_graph, load_dataset
from kgpath.numerics import make_rng
from kgpath.policy import Policy
from kgpath.search import rollout_batch
from kgpath.trainer import Checkpoint

DATA = RUNS.parent / "data" / "umls"


def stopping_violations(batch, max_steps: int, max_loops: int) -> int:
    """Trajectories that overrun S or keep walking after N consecutive self-loops."""
    bad = 0
    for i in range(len(batch.final)):
        n = int(batch.length[i])
        run, stop_at = 0, None
        for s, rel in enumerate(batch.path_rel[i, :n]):
            run = run + 1 if rel == SELF_LOOP else 0
            if stop_at is None and (s + 1 >= max_steps or run >= max_loops):
                stop_at = s + 1
        bad += n > max_steps or stop_at != n
    return bad


def run(checkpoint: Checkpoint, rollouts: int, seed: int = 0) -> dict:
    data = load_dataset(DATA)
    table = checkpoint.load_embeddings()
    kg = build_graph(data.graph, data.vocab, checkpoint.config.action_cap)
    policy = Policy(checkpoint.params, table, kg, checkpoint.config.policy_config())
    steps = checkpoint.config.max_steps
    queries = np.asarray(data.train, dtype=np.int64)
    pick = make_rng(seed, "stopping").integers(len(queries), size=rollouts)
    out = {}
    for loops in (2, 1):
        rng = make_rng(seed, "stopping-rollouts")
        lengths, bad = [], 0
        for lo in range(0, rollouts, 2500):
            q = queries[pick[lo:lo + 2500]]
            batch = rollout_batch(policy, q[:, 0], q[:, 1], rng, steps, loops, track=False)
            lengths.append(batch.length)
            bad += stopping_violations(batch, steps, loops)
        lengths = np.concatenate(lengths)
        out[f"N={loops}"] = {"mean_length": float(lengths.mean()), "violations": bad,
                             "rollouts": int(lengths.size)}
    out["max_steps"] = steps
    out["shorter_with_N1"] = out["N=1"]["mean_length"] < out["N=2"]["mean_length"]
    return out


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--checkpoint", default=str(RUNS / "umls" / "policy.gmh"))
    parser.add_argument("--rollouts", type=int, default=10_000)
    args = parser.parse_args()
    setup_logging()
    result = run(Checkpoint.load(args.checkpoint), args.rollouts)
    write_result("stopping", result)
    print(result)
