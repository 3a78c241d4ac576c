"""Command line entry point: ``kgpath {pretrain,train,eval,synth}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import numerics as nx
from . import synth
from .config import ConfigError, RunConfig, parse_config
from .embedding import EmbeddingTable, file_sha256, pretrain, write_sidecar
from .evaluation import evaluate
from .kg_store import Dataset, Vocabulary, build_graph, load_dataset
from .policy import Policy
from .search import explanation_line
from .trainer import Checkpoint, train

logger = logging.getLogger("kgpath")

EMBEDDINGS_FILE = "embeddings.kge"
SIDECAR_FILE = "embeddings.json"
VOCAB_FILE = "vocab.json"
CHECKPOINT_FILE = "policy.gmh"
TRAIN_LOG = "train_log.jsonl"


class UsageError(Exception):
    pass


def _parse_set(items):
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value
    return out


def _resolve(args, flag_overrides: dict) -> RunConfig:
    overrides = _parse_set(args.set)
    overrides.update({k: v for k, v in flag_overrides.items() if v is not None})
    cfg = parse_config(args.config, overrides)
    logger.info("resolved config: %s", json.dumps(json.loads(cfg.to_json()), sort_keys=True))
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_config.json").write_text(cfg.to_json() + "\n")
    return out


def _load_data(cfg: RunConfig, vocab_path: Path | None = None) -> Dataset:
    if not cfg.data:
        raise UsageError("--data is required")
    if not Path(cfg.data).is_dir():
        raise UsageError(f"data directory {cfg.data} does not exist")
    data = load_dataset(cfg.data)
    if vocab_path is not None:
        _check_vocab(data, vocab_path)
    return data


def _check_vocab(data: Dataset, vocab_path: Path) -> None:
    if not vocab_path.exists():
        return
    saved = Vocabulary.load(vocab_path)
    if saved.entities != data.vocab.entities or saved.relations != data.vocab.relations:
        raise ValueError(f"{vocab_path} does not match the vocabulary of the data directory")


def cmd_pretrain(args) -> int:
    cfg = _resolve(args, {"data": args.data, "out": args.out, "model": args.model, "dim": args.dim})
    data = _load_data(cfg)
    out = _out_dir(cfg)
    rng = nx.make_rng(cfg.seed, "pretrain")
    triples = data.embedding_triples()
    known = set(data.train) | set(data.valid) | set(data.test) if cfg.filtered else None
    table, log = pretrain(cfg.pretrain_config(), triples, data.vocab.n_entities,
                          data.vocab.n_relations, rng, valid=data.valid, known=known)
    digest = table.save(out / EMBEDDINGS_FILE)
    data.vocab.save(out / VOCAB_FILE)
    write_sidecar(out / SIDECAR_FILE, cfg.pretrain_config(), digest, log[-1] if log else {})
    with open(out / "pretrain_log.jsonl", "w") as fh:
        fh.writelines(json.dumps(rec) + "\n" for rec in log)
    print(json.dumps({"embeddings": str(out / EMBEDDINGS_FILE), "sha256": digest}))
    return 0


def _verified_embeddings(path: Path) -> tuple[EmbeddingTable, str]:
    if not path.exists():
        raise UsageError(f"embedding file {path} does not exist")
    digest = file_sha256(path)
    sidecar = path.with_suffix(".json")
    if sidecar.exists():
        expected = json.loads(sidecar.read_text()).get("sha256")
        if expected and expected != digest:
            raise ValueError(f"{path} does not match its sidecar hash ({digest[:12]} != {expected[:12]})")
    return EmbeddingTable.load(path), digest


def cmd_train(args) -> int:
    cfg = _resolve(args, {"data": args.data, "out": args.out})
    emb_path = Path(args.embeddings).resolve()
    table, digest = _verified_embeddings(emb_path)
    vocab_path = emb_path.parent / VOCAB_FILE
    data = _load_data(cfg, vocab_path)
    if table.entity.shape[0] != data.vocab.n_entities or table.relation.shape[0] != data.vocab.n_relations:
        raise ValueError("embedding table does not match the data vocabulary")
    out = _out_dir(cfg)
    data.vocab.save(out / VOCAB_FILE)
    known = set(data.train) | set(data.valid) | set(data.test) if cfg.filtered else None
    kg = build_graph(data.graph, data.vocab, cfg.action_cap)
    ckpt = train(cfg.train_config(), kg, table, data.train, data.valid, known=known,
                 log_path=out / TRAIN_LOG, embedding_path=str(emb_path), embedding_sha256=digest)
    ckpt.save(out / CHECKPOINT_FILE)
    print(json.dumps({"checkpoint": str(out / CHECKPOINT_FILE), "best_epoch": ckpt.epoch}))
    return 0


def cmd_eval(args) -> int:
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.exists():
        raise UsageError(f"checkpoint {ckpt_path} does not exist")
    ckpt = Checkpoint.load(ckpt_path)
    cfg = _resolve(args, {"data": args.data, "out": args.out or str(ckpt_path.parent),
                          "beam": args.beam, "split": args.split,
                          "emit_paths": True if args.emit_paths else None,
                          "max_steps": ckpt.config.max_steps, "max_loops": ckpt.config.max_loops})
    table = ckpt.load_embeddings()
    vocab_path = ckpt_path.parent / VOCAB_FILE
    data = _load_data(cfg, vocab_path)
    out = _out_dir(cfg)
    kg = build_graph(data.graph, data.vocab, ckpt.config.action_cap)
    policy = Policy(ckpt.params, table, kg, ckpt.config.policy_config())
    queries = data.test if cfg.split == "test" else data.valid
    distances = data.test_dist if cfg.split == "test" else data.valid_dist
    known = set(data.train) | set(data.valid) | set(data.test)
    paths_fh = open(out / "paths.jsonl", "w") if cfg.emit_paths else None

    def emit(i, query, answers):
        if paths_fh is None:
            return
        hit = next((a for a in answers if a.entity == query[2]), None)
        top = hit or (answers[0] if answers else None)
        if top is None:
            return
        line = json.loads(explanation_line(data.vocab, query, top.path, top.stopped_by))
        line.update({"answer": data.vocab.entities[top.entity], "correct": hit is not None,
                     "score": top.score})
        paths_fh.write(json.dumps(line) + "\n")

    try:
        reports = evaluate(policy, queries, cfg.beam, cfg.max_steps, cfg.max_loops, known,
                           distances=distances, on_query=emit)
    finally:
        if paths_fh:
            paths_fh.close()
    metrics = {k: v.to_json() for k, v in reports.items()}
    (out / f"metrics_{cfg.split}.json").write_text(json.dumps(metrics, indent=1) + "\n")
    for report in reports.values():
        print(report.table())
    return 0


def cmd_synth(args) -> int:
    overrides = {"out": args.out, "distances": args.distances, "n_chains": args.n_chains}
    cfg = _resolve(args, overrides)
    data = synth.generate(cfg.synth_config())
    synth.write(data, cfg.out)
    print(json.dumps({"out": cfg.out, "graph_edges": len(data.graph), "train": len(data.train),
                      "valid": len(data.valid), "test": len(data.test)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kgpath", description="Multi-hop reasoning over knowledge graphs")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file with RunConfig fields")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config field")
        return p

    p = common(sub.add_parser("pretrain", help="train entity/relation embeddings"))
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", choices=["transe", "distmult", "complex"])
    p.add_argument("--dim", type=int)
    p.set_defaults(func=cmd_pretrain)

    p = common(sub.add_parser("train", help="train the path policy"))
    p.add_argument("--data", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("eval", help="beam-search evaluation"))
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out")
    p.add_argument("--beam", type=int)
    p.add_argument("--split", choices=["test", "valid"])
    p.add_argument("--emit-paths", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("synth", help="generate a long-distance synthetic dataset"))
    p.add_argument("--out", required=True)
    p.add_argument("--distances", help="comma separated, e.g. 4,5,6,7")
    p.add_argument("--n-chains", dest="n_chains")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s:%(name)s:%(message)s")
    if args.verbose:
        logger.setLevel(logging.INFO)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as err:
        parser.print_usage(sys.stderr)
        print(f"kgpath {args.command}: error: {err}", file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError) as err:
        print(f"kgpath {args.command}: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
