"""Full UMLS pipeline: ComplEx pretraining, policy training, beam evaluation.

    python scripts/run_umls.py [--epochs 30] [--seed 0]

Embeddings are cached in runs/umls/ and reused when present (delete the
file to time the full pipeline). The policy checkpoint lands next to them
and is reused by run_stopping.py. Results go to results/umls.json.
"""
from __future__ import annotations

import argparse
from dataclasses import replace

from common import RUNS, Stopwatch, cached_embeddings, known_triples, setup_logging, write_result

from kgpath.embedding import PretrainConfig
from kgpath.evaluation import evaluate
from kgpath.kg_store import build_graph, load_dataset
from kgpath.policy import Policy
from kgpath.trainer import TrainConfig, train

DATA = RUNS.parent / "data" / "umls"
EMBED = PretrainConfig(kind="complex", dim=100)
TRAIN = TrainConfig(max_steps=3, max_loops=2, gk_form="sigmoid", lr=1e-3, baseline=True, epochs=30, patience=10,
                    valid_limit=150, valid_beam=32)
BEAM = 128


def umls_setup(seed: int = 0):
    data = load_dataset(DATA)
    table, digest, pretrain_s = cached_embeddings(RUNS / "umls" / "embeddings.kge", EMBED, data, seed)
    return data, table, digest, pretrain_s, build_graph(data.graph, data.vocab)


def test_metrics(policy: Policy, data, cfg: TrainConfig, beam: int = BEAM, limit: int = 0) -> dict:
    queries = data.test[:limit] if limit else data.test
    reports = evaluate(policy, queries, beam, cfg.max_steps, cfg.max_loops, known_triples(data))
    return {name: {k: v for k, v in r.to_json().items() if k not in ("ranks", "by_distance")}
            for name, r in reports.items()}


def run(epochs: int, seed: int) -> dict:
    clock = Stopwatch()
    data, table, digest, pretrain_s, kg = umls_setup(seed)
    cfg = replace(TRAIN, epochs=epochs, seed=seed)
    out = RUNS / "umls"
    ckpt = train(cfg, kg, table, data.train, data.valid, known_triples(data), log_path=out / "train_log.jsonl",
                 embedding_path=str(out / "embeddings.kge"), embedding_sha256=digest)
    ckpt.save(out / "policy.gmh")
    train_s = clock() - pretrain_s
    metrics = test_metrics(Policy(ckpt.params, table, kg, cfg.policy_config()), data, cfg)
    return {"metrics": metrics, "best_epoch": ckpt.epoch, "epochs_run": len(ckpt.history),
            "pretrain_seconds": pretrain_s, "train_seconds": train_s, "seconds": clock(),
            "beam": BEAM, "train_config": cfg, "embed_config": EMBED}


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--epochs", type=int, default=TRAIN.epochs)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    setup_logging()
    result = run(args.epochs, args.seed)
    write_result("umls", result)
    print(result["metrics"])
