"""Command-line entry point.

Subcommands: train, eval, predict, explain, gradcheck, vocab-extract.
Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .data_model import DatasetError, Schema, load_benchmark_dataset, load_pairs_csv, pairs_csv_ids
from .embeddings import EmbeddingFileError, EmbeddingStore, load_word_embeddings
from .gradcheck import toy_gradient_check
from .models import VARIANTS, CheckpointError, Model, ModelConfig, load_checkpoint, save_checkpoint
from .train_eval import (TrainConfig, evaluate_scores, explain_pair, format_explanation, pr_curve,
                         predict_scores, train, vocabulary)

log = logging.getLogger("contrastlink")

EMBEDDINGS_ENV = "CONTRASTLINK_EMBEDDINGS"
GRADCHECK_TOLERANCE = 1e-4


class CommandError(RuntimeError):
    pass


class UsageError(CommandError):
    """Flags that parse but cannot be combined; exits like an argparse error."""


def _emit(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True), flush=True)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _input_hashes(paths) -> dict:
    files = {}
    for p in paths:
        if p is None:
            continue
        p = Path(p)
        if p.is_dir():
            for f in sorted(p.glob("*.csv")):
                files[str(f)] = _sha256(f)
        elif p.is_file():
            files[str(p)] = _sha256(p)
    combined = hashlib.sha256(json.dumps(files, sort_keys=True).encode()).hexdigest()
    return {"files": files, "combined": combined}


def write_manifest(path, args, inputs, extra=None) -> None:
    flags = {k: v for k, v in vars(args).items() if k not in ("func", "argv")}
    manifest = {
        "command": args.command,
        "flags": flags,
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "inputs": _input_hashes(inputs),
        "argv": args.argv,
    }
    if extra:
        manifest.update(extra)
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


# -- embeddings --------------------------------------------------------------

def _store_from_args(args, default_dim=None) -> tuple[EmbeddingStore, dict]:
    path = getattr(args, "embeddings", None) or (None if getattr(args, "hashed_embeddings", False)
                                                 else os.environ.get(EMBEDDINGS_ENV))
    if path:
        dim = args.dim or default_dim or 300
        store = load_word_embeddings(path, dim, args.oov_policy, args.oov_seed)
        spec = {"kind": "file", "path": str(Path(path).resolve()), "sha256": _sha256(Path(path)),
                "dim": dim, "oov_policy": args.oov_policy, "oov_seed": args.oov_seed}
        return store, spec
    if not getattr(args, "hashed_embeddings", False):
        raise UsageError(f"no embeddings: pass --embeddings PATH, --hashed-embeddings, or set {EMBEDDINGS_ENV}")
    dim = args.dim or default_dim or 64
    spec = {"kind": "hashed", "dim": dim, "oov_policy": "hashed-gaussian", "oov_seed": args.oov_seed}
    return EmbeddingStore(dim, {}, "hashed-gaussian", args.oov_seed), spec


def _store_for_checkpoint(model: Model, args) -> EmbeddingStore:
    if getattr(args, "embeddings", None) or getattr(args, "hashed_embeddings", False):
        store, _ = _store_from_args(args, model.config.d)
        return store
    spec = model.metadata.get("embeddings")
    if spec is None:
        raise CommandError("checkpoint does not record its embeddings; pass --embeddings or --hashed-embeddings")
    if spec["kind"] == "hashed":
        return EmbeddingStore(spec["dim"], {}, "hashed-gaussian", spec["oov_seed"])
    path = Path(spec["path"])
    if not path.is_file():
        raise CommandError(f"embedding file {path} recorded in the checkpoint is missing; pass --embeddings")
    return load_word_embeddings(path, spec["dim"], spec["oov_policy"], spec["oov_seed"])


def _check_schema(model: Model, schema: Schema) -> None:
    stored = tuple(model.metadata.get("schema") or ())
    if stored and stored != schema.attributes:
        raise CommandError(f"schema mismatch: checkpoint has {list(stored)}, data has {list(schema.attributes)}")
    if len(schema) != model.config.m:
        raise CommandError(f"schema mismatch: model expects {model.config.m} attributes, data has {len(schema)}")


# -- commands ----------------------------------------------------------------

def cmd_train(args) -> int:
    dataset = load_benchmark_dataset(args.data, seed=args.seed)
    store, emb_spec = _store_from_args(args)
    if args.lr == 0:
        log.warning("learning rate is 0; parameters will not change")
    config = ModelConfig(args.variant.replace("_", "-"), m=len(dataset.schema), d=store.dim, seed=args.seed)
    tconf = TrainConfig(learning_rate=args.lr, batch_size=args.batch_size, epochs=args.epochs, seed=args.seed)
    model = Model(config)
    t0 = time.perf_counter()
    best, history = train(model, dataset, store, tconf)
    train_seconds = time.perf_counter() - t0
    for row in history:
        _emit({"event": "epoch", **row})
    best.metadata.update({
        "schema": list(dataset.schema.attributes),
        "dataset": dataset.name,
        "embeddings": emb_spec,
        "train_config": {"learning_rate": args.lr, "batch_size": args.batch_size,
                         "epochs": args.epochs, "seed": args.seed},
    })
    for split in ("valid", "test"):
        pairs = dataset.split(split)
        if not pairs:
            continue
        labels = np.array([p.label for p in pairs])
        report = replace(evaluate_scores(predict_scores(best, pairs, store), labels, tconf.threshold),
                         runtime=train_seconds)
        _emit({"event": "metrics", "split": split, **report.as_dict()})
        print(f"{split}: {report.summary()}", file=sys.stderr)
    save_checkpoint(best, args.out)
    write_manifest(f"{args.out}.manifest.json", args, [args.data, getattr(args, "embeddings", None)],
                   {"dataset": dataset.name, "seeds": {"model": args.seed, "shuffle": args.seed,
                                                        "split": args.seed, "oov": args.oov_seed}})
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    dataset = load_benchmark_dataset(args.data, seed=model.metadata.get("train_config", {}).get("seed", 0))
    _check_schema(model, dataset.schema)
    store = _store_for_checkpoint(model, args)
    pairs = dataset.split(args.split)
    threshold = args.threshold if args.threshold is not None else model.metadata.get("threshold", 0.5)
    labels = np.array([p.label for p in pairs], dtype=np.int64)
    t0 = time.perf_counter()
    scores = predict_scores(model, pairs, store)
    report = replace(evaluate_scores(scores, labels, threshold), runtime=time.perf_counter() - t0)
    _emit({"event": "metrics", "split": args.split, **report.as_dict()})
    print(f"{args.split}: {report.summary()}", file=sys.stderr)
    curve_path = args.pr_curve or f"{args.checkpoint}.{args.split}.pr.csv"
    if labels.sum() > 0:
        pr_curve(scores, labels).to_csv(curve_path)
    write_manifest(f"{curve_path}.manifest.json", args, [args.checkpoint, args.data])
    return 0


def cmd_predict(args) -> int:
    model = load_checkpoint(args.checkpoint)
    schema, pairs = load_pairs_csv(args.pairs, require_label=False)
    _check_schema(model, schema)
    store = _store_for_checkpoint(model, args)
    ids = pairs_csv_ids(args.pairs)
    threshold = model.metadata.get("threshold", 0.5)
    scores = predict_scores(model, pairs, store)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "score", "match"])
        for i, s in zip(ids, scores):
            writer.writerow([i, repr(float(s)), int(s >= threshold)])
    write_manifest(f"{args.out}.manifest.json", args, [args.checkpoint, args.pairs])
    return 0


def cmd_explain(args) -> int:
    model = load_checkpoint(args.checkpoint)
    if args.pairs:
        schema, pairs = load_pairs_csv(args.pairs, require_label=False)
    elif args.data:
        dataset = load_benchmark_dataset(args.data, seed=model.metadata.get("train_config", {}).get("seed", 0))
        schema, pairs = dataset.schema, list(dataset.split(args.split))
    else:
        raise UsageError("explain needs --pairs or --data")
    _check_schema(model, schema)
    store = _store_for_checkpoint(model, args)
    if args.pair_index is not None:
        if not 0 <= args.pair_index < len(pairs):
            raise CommandError(f"pair index {args.pair_index} out of range (0..{len(pairs) - 1})")
        selected = [(args.pair_index, pairs[args.pair_index])]
    else:
        selected = list(enumerate(pairs))
    for i, pair in selected:
        expl = explain_pair(model, pair, store, schema)
        if args.json:
            _emit({"index": i, **expl})
        else:
            print(f"# pair {i}")
            print(format_explanation(expl))
    if args.manifest:
        write_manifest(args.manifest, args, [args.checkpoint, args.pairs, args.data])
    return 0


def cmd_gradcheck(args) -> int:
    variants = VARIANTS if args.variant == "all" else (args.variant,)
    worst = 0.0
    for variant in variants:
        for seed in range(args.seed, args.seed + args.seeds):
            err = toy_gradient_check(variant, seed=seed, eps=args.eps, fault=args.fault_inject)
            worst = max(worst, err)
            _emit({"event": "gradcheck", "variant": variant, "seed": seed, "max_rel_error": err,
                   "pass": err < GRADCHECK_TOLERANCE})
    if args.manifest:
        write_manifest(args.manifest, args, [])
    return 0 if worst < GRADCHECK_TOLERANCE else 1


def cmd_vocab_extract(args) -> int:
    dataset = load_benchmark_dataset(args.data)
    tokens = vocabulary(dataset.all_pairs())
    Path(args.out).write_text("".join(t + "\n" for t in tokens), encoding="utf-8")
    write_manifest(f"{args.out}.manifest.json", args, [args.data], {"token_count": len(tokens)})
    return 0


# -- parser ------------------------------------------------------------------

def _add_embedding_flags(p, required: bool) -> None:
    group = p.add_mutually_exclusive_group()
    group.add_argument("--embeddings", metavar="PATH",
                       help=f"word vectors in text format (default: ${EMBEDDINGS_ENV})")
    group.add_argument("--hashed-embeddings", action="store_true",
                       help="deterministic per-token Gaussian vectors, no file needed")
    p.add_argument("--dim", type=int, default=None,
                   help="embedding dimension (default 300 for files, 64 for hashed)")
    p.add_argument("--oov-policy", choices=("hashed-gaussian", "zero"), default="hashed-gaussian")
    p.add_argument("--oov-seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="contrastlink", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--variant", choices=VARIANTS, default="sum")
    _add_embedding_flags(p, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--out", default="model.ckpt", metavar="PATH")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a split and report F1, PRAUC, R@P=95%%")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--split", choices=("train", "valid", "test"), default="test")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--pr-curve", default=None, metavar="CSV")
    _add_embedding_flags(p, required=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="score a pairs CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pairs", required=True, metavar="CSV")
    p.add_argument("--out", required=True, metavar="CSV")
    _add_embedding_flags(p, required=False)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("explain", help="show token groups and weights for pairs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pairs", metavar="CSV")
    p.add_argument("--data", metavar="DIR")
    p.add_argument("--split", choices=("train", "valid", "test"), default="test")
    p.add_argument("--pair-index", type=int, default=None)
    p.add_argument("--json", action="store_true")
    p.add_argument("--manifest", default=None, metavar="PATH")
    _add_embedding_flags(p, required=False)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("gradcheck", help="finite-difference check of every variant")
    p.add_argument("--variant", choices=("all",) + VARIANTS, default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=5, help="number of consecutive seeds")
    p.add_argument("--eps", type=float, default=3e-5)
    p.add_argument("--fault-inject", type=float, default=0.0, help=argparse.SUPPRESS)
    p.add_argument("--manifest", default=None, metavar="PATH")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("vocab-extract", help="write the sorted token set of a dataset")
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--out", required=True, metavar="PATH")
    p.set_defaults(func=cmd_vocab_extract)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (CommandError, DatasetError, EmbeddingFileError, CheckpointError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
