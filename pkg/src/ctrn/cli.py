"""Command-line entry point: ``ctrn {train,eval,score,params,bench}``.

Settings come from defaults, then a flat ``key = value`` config file, then
flags, later sources winning.  Exit codes: 0 success, 2 invalid configuration,
3 data error, 4 checkpoint error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

from . import bench, checkpoint, metrics
from .data import (YAHOO_LENGTH_RANGE, Vocabulary, load_embeddings, random_embeddings, read_tsv)
from .errors import (CheckpointError, ConfigError, EmptySequenceError, LabelError, ParseError,
                     VocabularyError)
from .head import build_idf, load_stopwords
from .model import Ranker
from .optim import TrainConfig, format_log, train

log = logging.getLogger("ctrn")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CHECKPOINT = 0, 2, 3, 4

# keys that are not TrainConfig fields, with their types and defaults
RUN_KEYS = {
    "train_path": (str, None),
    "dev_path": (str, None),
    "test_path": (str, None),
    "embeddings_path": (str, None),
    "stopwords_path": (str, None),
    "checkpoint": (str, "model.ckpt"),
    "output": (str, None),
    "log_path": (str, None),
    "embedding_std": (float, 1.0),
    "length_filter": (bool, False),
}

_TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


def _parse_bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _key_type(key: str):
    if key in RUN_KEYS:
        return RUN_KEYS[key][0]
    ftype = _TRAIN_FIELDS[key].type
    return {"int": int, "float": float, "bool": bool, "str": str}[ftype if isinstance(ftype, str) else ftype.__name__]


def _convert(key: str, value):
    if key not in RUN_KEYS and key not in _TRAIN_FIELDS:
        raise ConfigError(f"unknown config key {key!r}", key)
    typ = _key_type(key)
    try:
        return _parse_bool(value) if typ is bool else typ(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {typ.__name__}", key) from None


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}", "config") from None
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'", "config")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key] = _convert(key, value)
    return values


def resolve_config(file_values: dict, flag_values: dict) -> tuple[TrainConfig, dict]:
    """Merge default < file < flags and validate; returns (TrainConfig, run paths)."""
    merged = {k: d for k, (_, d) in RUN_KEYS.items()}
    merged.update(dataclasses.asdict(TrainConfig()))
    merged.update(file_values)
    merged.update({k: _convert(k, v) for k, v in flag_values.items() if v is not None})
    run = {k: merged.pop(k) for k in RUN_KEYS}
    cfg = TrainConfig.from_dict(merged).validate()
    return cfg, run


# --- commands ----------------------------------------------------------

def _require_file(run: dict, key: str) -> str:
    path = run.get(key)
    if not path:
        raise ConfigError(f"{key} is required", key)
    if not os.path.isfile(path):
        raise ConfigError(f"{key}: no such file {path}", key)
    return path


def cmd_train(cfg: TrainConfig, run: dict) -> int:
    train_path = _require_file(run, "train_path")
    dev_path = _require_file(run, "dev_path")
    lengths = YAHOO_LENGTH_RANGE if run["length_filter"] else None
    train_set = read_tsv(train_path, lengths)
    dev_set = read_tsv(dev_path, lengths)

    vocab = Vocabulary.build(x.question + x.answer for x in train_set)
    if run["embeddings_path"]:
        table = load_embeddings(_require_file(run, "embeddings_path"), cfg.embedding_dim, vocab, cfg.seed)
    else:
        table = random_embeddings(vocab, cfg.embedding_dim, cfg.seed, std=run["embedding_std"])
    model = Ranker(cfg.model_config(), table, seed=cfg.seed, vocab=vocab)
    texts = {x.question for x in train_set} | {x.answer for x in train_set}
    model.idf, model.n_docs = build_idf(sorted(texts))
    if run["stopwords_path"]:
        model.stopwords = load_stopwords(_require_file(run, "stopwords_path"))

    result = train(model, train_set, dev_set, cfg)
    ckpt = run["output"] or run["checkpoint"]
    checkpoint.save(ckpt, model, cfg.to_dict())
    log_path = run["log_path"] or ckpt + ".log"
    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write(format_log(cfg, result.history))
    print(f"best dev {cfg.metric}={result.best_metric:.4f} at epoch {result.best_epoch}; "
          f"checkpoint {ckpt}; log {log_path}")
    return EXIT_OK


def _load_checkpoint(path: str):
    if not path or not os.path.isfile(path):
        raise ConfigError(f"checkpoint: no such file {path}", "checkpoint")
    return checkpoint.load(path)


def _score_file(model: Ranker, path: str):
    instances = read_tsv(path)
    if not instances:
        raise ParseError(f"{path} contains no instances")
    return instances, model.score(instances)


def cmd_eval(cfg: TrainConfig, run: dict, metric_names=("p@1", "mrr", "map")) -> int:
    model, _ = _load_checkpoint(run["checkpoint"])
    instances, scores = _score_file(model, _require_file(run, "test_path"))
    groups = metrics.build_groups([x.query_id for x in instances], scores, [x.label for x in instances])
    values = {name: metrics.METRICS[name](groups) for name in metric_names}
    print(", ".join(f"{name.upper()}={v:.4f}" for name, v in values.items()))
    if run["output"]:
        n = metrics.write_trec_run(run["output"], groups, run_tag=cfg.model)
        print(f"wrote {n} run lines to {run['output']}")
    return EXIT_OK


def cmd_score(cfg: TrainConfig, run: dict) -> int:
    model, _ = _load_checkpoint(run["checkpoint"])
    instances, scores = _score_file(model, _require_file(run, "test_path"))
    out = open(run["output"], "w", encoding="utf-8") if run["output"] else sys.stdout
    try:
        for i, (inst, s) in enumerate(zip(instances, scores)):
            out.write(f"{inst.query_id}\t{i}\t{s:.6f}\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_params(args) -> int:
    if args.kind in (None, "all"):
        print(bench.format_budget_table(bench.budget_table(args.m, args.d, args.h, args.k)))
    else:
        print(bench.param_count(args.kind, args.m, args.d, args.h, args.k))
    return EXIT_OK


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}", "L") from None


def cmd_bench(args) -> int:
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    samples = bench.time_models(kinds, _int_list(args.L), d=args.d, batch=args.batch,
                                reps=args.reps, m=args.m, k=args.k, seed=args.seed or 0)
    if args.output:
        bench.write_csv(args.output, samples)
    print("kind,L,d,median_ms")
    for s in samples:
        print(f"{s.kind},{s.L},{s.d},{s.median_ms:.3f}")
    return EXIT_OK


# --- argument parsing --------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", dest="output", help="output path (checkpoint, run file or CSV)")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    for key in list(_TRAIN_FIELDS) + list(RUN_KEYS):
        if key in ("seed", "output"):
            continue
        names = sorted({f"--{key}", f"--{key.replace('_', '-')}"})
        p.add_argument(*names, dest=key, default=None, metavar=key.upper())
    p.add_argument("--train", dest="train_path", default=None, help=argparse.SUPPRESS)
    p.add_argument("--dev", dest="dev_path", default=None, help=argparse.SUPPRESS)
    p.add_argument("--test", dest="test_path", default=None, help=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctrn", description="Cross temporal recurrent ranking")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, helptext in (("train", "train a ranker"), ("eval", "evaluate a checkpoint on a TSV"),
                           ("score", "write per-pair scores for a TSV")):
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        _add_run_flags(p)
        if name == "eval":
            p.add_argument("--metrics", default="p@1,mrr,map")

    p = sub.add_parser("params", help="parameter counts per model kind")
    _add_common(p)
    p.add_argument("--kind", default=None)
    p.add_argument("--m", type=int, default=300)
    p.add_argument("--d", type=int, default=512)
    p.add_argument("--h", type=int, default=128)
    p.add_argument("--k", type=int, default=2)

    p = sub.add_parser("bench", help="encoder runtime versus sequence length")
    _add_common(p)
    p.add_argument("--kinds", default="ctrn,qrnn,lstm")
    p.add_argument("--L", default="64,128,256")
    p.add_argument("--d", type=int, default=512)
    p.add_argument("--m", type=int, default=300)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--reps", type=int, default=7)
    return parser


def _run(args) -> int:
    if args.command == "params":
        return cmd_params(args)
    if args.command == "bench":
        return cmd_bench(args)
    file_values = read_config_file(args.config) if args.config else {}
    flags = {k: v for k, v in vars(args).items()
             if k in _TRAIN_FIELDS or k in RUN_KEYS}
    cfg, run = resolve_config(file_values, flags)
    if args.command == "train":
        return cmd_train(cfg, run)
    if args.command == "eval":
        names = [n.strip().lower() for n in args.metrics.split(",") if n.strip()]
        for n in names:
            if n not in metrics.METRICS:
                raise ConfigError(f"unknown metric {n!r}", "metrics")
        return cmd_eval(cfg, run, names)
    return cmd_score(cfg, run)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"config error ({exc.key}): {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, LabelError, VocabularyError, EmptySequenceError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT


if __name__ == "__main__":
    sys.exit(main())
