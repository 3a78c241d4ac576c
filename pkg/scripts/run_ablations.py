"""Dropout ablations on UMLS over several seeds.

    python scripts/run_ablations.py [--epochs 5] [--seeds 0 1 2] [--beam 32]

Compares score-differentiated dropout against no dropout and against
uniform random dropout at rate 0.5, all on the same cached embeddings.
Writes results/ablations.json with per-seed test metrics and the sign of
each paired difference.
"""
from __future__ import annotations

import argparse
from dataclasses import replace

from common import Stopwatch, known_triples, setup_logging, write_result
from run_umls import TRAIN, test_metrics, umls_setup

from kgpath.policy import Policy
from kgpath.trainer import train

VARIANTS = {"dad": {"dropout": "dad"}, "none": {"dropout": "none"},
            "random": {"dropout": "random", "dropout_rate": 0.5}}


def run(epochs: int, seeds: list[int], beam: int) -> dict:
    clock = Stopwatch()
    data, table, _, _, kg = umls_setup()
    runs = {}
    for seed in seeds:
        for name, knobs in VARIANTS.items():
            cfg = replace(TRAIN, epochs=epochs, seed=seed, patience=epochs, **knobs)
            ckpt = train(cfg, kg, table, data.train, data.valid, known_triples(data))
            metrics = test_metrics(Policy(ckpt.params, table, kg, cfg.policy_config()), data, cfg, beam)
            runs.setdefault(name, {})[seed] = metrics["filtered"]["mrr"]
            print(f"seed {seed} {name:<7} filtered MRR {metrics['filtered']['mrr']:.4f}", flush=True)
    margins = {
        "dad_minus_none": {s: runs["dad"][s] - runs["none"][s] for s in seeds},
        "dad_minus_random": {s: runs["dad"][s] - runs["random"][s] for s in seeds},
    }
    return {"filtered_mrr": runs, "margins": margins,
            "all_positive": {k: all(v > 0 for v in m.values()) for k, m in margins.items()},
            "epochs": epochs, "beam": beam, "seconds": clock(), "train_config": TRAIN}


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--epochs", type=int, default=5)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--beam", type=int, default=32)
    args = parser.parse_args()
    setup_logging()
    result = run(args.epochs, args.seeds, args.beam)
    write_result("ablations", result)
    print(result["margins"], result["all_positive"])
