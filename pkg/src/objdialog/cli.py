"""Command-line interface: dataset generation, training, evaluation,
single-turn answering, and interaction-matrix tracing.

Every command is deterministic given its seed and config, exits 0 on
success, and on failure prints a single JSON line {"error": ...} to stderr
with a nonzero exit code. Reports go to stdout as JSON (or to --out).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import synthworld as sw
from . import training as tr
from .evaluation import SPLIT_CHOICES, evaluate
from .model import ABLATIONS

SPLIT_RATIOS = (0.7, 0.15, 0.15)
SPLIT_SEED = 0


def _emit(payload: dict, out_path=None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text + "\n")
    print(text)


def _load_data(data_dir):
    samples = sw.read_jsonl(os.path.join(data_dir, "data.jsonl"))
    vocab = sw.Vocab.load(os.path.join(data_dir, "vocab.json"))
    return samples, vocab


def cmd_gen_data(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    samples = sw.generate_dataset(args.seed, args.worlds, args.n, args.f, args.d, args.turns,
                                  grid=args.grid)
    vocab = sw.build_vocab(samples)
    splits = sw.build_splits(samples, ratios=SPLIT_RATIOS, seed=SPLIT_SEED)
    sw.write_jsonl(os.path.join(args.out, "data.jsonl"), samples)
    vocab.save(os.path.join(args.out, "vocab.json"))
    config = {"worlds": args.worlds, "turns": args.turns, "seed": args.seed, "n": args.n,
              "f": args.f, "d": args.d, "grid": args.grid,
              "split_ratios": list(SPLIT_RATIOS), "split_seed": SPLIT_SEED}
    stats = {"config": config, "vocab_size": len(vocab),
             "stats": sw.dataset_stats(samples, splits)}
    with open(os.path.join(args.out, "stats.json"), "w") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _emit(stats)
    return 0


def _train_config(args, vocab_size: int) -> tr.TrainConfig:
    raw = {}
    if args.config:
        with open(args.config) as fh:
            raw.update(json.load(fh))
    overrides = {
        "d": args.d, "heads": args.heads, "decoder_layers": args.decoder_layers,
        "graph_layers": args.graph_layers, "batch_size": args.batch_size,
        "epochs": args.epochs, "base_lr": args.base_lr, "seed": args.seed,
        "beam": args.beam, "max_answer_len": args.max_answer_len,
        "clip_norm": args.clip_norm, "question_weight": args.question_weight,
    }
    raw.update({k: v for k, v in overrides.items() if v is not None})
    if args.ablate:
        raw["ablate"] = sorted(set(raw.get("ablate", [])) | set(args.ablate))
    cfg = tr.TrainConfig.from_dict(raw)
    if cfg.vocab_size == 0:
        cfg.vocab_size = vocab_size
    if cfg.vocab_size != vocab_size:
        raise tr.CheckpointError(
            f"config vocab_size {cfg.vocab_size} does not match vocabulary of {vocab_size}")
    return cfg


def cmd_train(args) -> int:
    samples, vocab = _load_data(args.data)
    cfg = _train_config(args, len(vocab))
    splits = sw.build_splits(samples, ratios=SPLIT_RATIOS, seed=SPLIT_SEED)
    os.makedirs(args.out, exist_ok=True)
    log_path = os.path.join(args.out, "train_log.jsonl")
    mode = "a" if args.resume else "w"
    with open(log_path, mode) as log_fh:
        def log_fn(entry):
            log_fh.write(json.dumps(entry, sort_keys=True) + "\n")
        result = tr.train(cfg, splits["train"], splits["val"], vocab, args.out,
                          resume=args.resume, log_fn=log_fn, stop_epoch=args.stop_epoch)
    _emit({"config": cfg.to_dict(), "config_hash": tr.config_hash(cfg),
           "epochs_run": len(result.log), "best_val": result.best_val,
           "checkpoint": result.best_path, "last": result.last_path, "log": log_path})
    return 0


def _load_model(checkpoint_path, vocab):
    ckpt = tr.load_checkpoint(checkpoint_path)
    cfg: tr.TrainConfig = ckpt["config"]
    if cfg.vocab_size != len(vocab):
        raise tr.CheckpointError(
            f"checkpoint vocab_size {cfg.vocab_size} does not match vocabulary of {len(vocab)}")
    return tr.model_from_checkpoint(ckpt), cfg


def cmd_eval(args) -> int:
    samples, vocab = _load_data(args.data)
    model, cfg = _load_model(args.checkpoint, vocab)
    test = sw.build_splits(samples, ratios=SPLIT_RATIOS, seed=SPLIT_SEED)["test"]
    beam = cfg.beam if args.beam is None else args.beam
    report = evaluate(model, vocab, test, split=args.split, beam=beam, oracle=args.oracle)
    report["config_hash"] = tr.config_hash(cfg)
    report["checkpoint"] = args.checkpoint
    _emit(report, args.out)
    return 0


def _find_sample(samples, world_id):
    for sample in samples:
        if sample.world_id == world_id:
            return sample
    raise KeyError(f"unknown world id {world_id!r}")


def cmd_ask(args) -> int:
    samples, vocab = _load_data(args.data)
    model, cfg = _load_model(args.checkpoint, vocab)
    sample = _find_sample(samples, args.world)
    turn = args.turn - 1
    beam = cfg.beam if args.beam is None else args.beam
    tokens, logprob = model.predict_turn(sample, vocab, turn, beam=beam)
    _emit({"world_id": args.world, "turn": args.turn,
           "question": " ".join(sample.dialog[turn].question),
           "answer": " ".join(tokens),
           "reference": " ".join(sample.dialog[turn].answer),
           "logprob": logprob, "beam": beam, "config_hash": tr.config_hash(cfg)})
    return 0


def cmd_trace(args) -> int:
    samples, vocab = _load_data(args.data)
    model, cfg = _load_model(args.checkpoint, vocab)
    sample = _find_sample(samples, args.world)
    rows = model.trace_dialog(sample, vocab)
    payload = {"world_id": args.world, "config_hash": tr.config_hash(cfg),
               "objects": sample.objects,
               "turns": [{"turn": row["turn"], "question": " ".join(row["question"]),
                          "k": [[float(v) for v in r] for r in row["matrix"]],
                          "objects": sample.objects} for row in rows]}
    _emit(payload, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="objdialog",
        description="object-centric video dialog on synthetic trajectory worlds")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dialog dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--worlds", type=int, default=50)
    g.add_argument("--turns", type=int, default=6)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n", type=int, default=6, help="objects per world")
    g.add_argument("--f", type=int, default=20, help="frames per world")
    g.add_argument("--d", type=int, default=64, help="feature width")
    g.add_argument("--grid", type=int, default=8)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train a model on a generated dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config", help="flat JSON config; flags override file values")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--stop-epoch", type=int, default=None)
    t.add_argument("--ablate", action="append", choices=ABLATIONS, default=None)
    for flag, typ in (("--d", int), ("--heads", int), ("--decoder-layers", int),
                      ("--graph-layers", int), ("--batch-size", int), ("--epochs", int),
                      ("--base-lr", float), ("--seed", int), ("--beam", int),
                      ("--max-answer-len", int), ("--clip-norm", float),
                      ("--question-weight", float)):
        t.add_argument(flag, type=typ, default=None)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=SPLIT_CHOICES, default="test")
    e.add_argument("--beam", type=int, default=None)
    e.add_argument("--oracle", action="store_true",
                   help="score references against themselves (sanity mode)")
    e.add_argument("--out")
    e.set_defaults(fn=cmd_eval)

    a = sub.add_parser("ask", help="answer one question with teacher-forced history")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--world", required=True)
    a.add_argument("--turn", type=int, required=True, help="1-based turn index")
    a.add_argument("--beam", type=int, default=None)
    a.set_defaults(fn=cmd_ask)

    x = sub.add_parser("trace", help="export per-turn object interaction matrices")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--data", required=True)
    x.add_argument("--world", required=True)
    x.add_argument("--out")
    x.set_defaults(fn=cmd_trace)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except BrokenPipeError:
        return 1
    except Exception as err:  # single-line machine-parsable failure
        print(json.dumps({"error": f"{type(err).__name__}: {err}"}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
