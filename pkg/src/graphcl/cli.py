"""Command-line entry point: ``graphcl <subcommand> ...``.

Exit codes: 0 success, 1 input validation failure, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import load_config
from .corpus import (CorpusError, annotate_record, generate_synthetic_corpus, load_corpus, load_lexicon,
                     write_corpus)
from .graph import build_relation_graph, export_dot
from .tokenizer import Vocab, build_vocab, encode_words

log = logging.getLogger("graphcl")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    """Bad user input; reported on one line with exit code 1."""


def _read_corpus(path: str, allow_empty: bool = False):
    if not Path(path).is_file():
        raise UsageError(f"corpus not found: {path}")
    rep = load_corpus(path)
    if rep.malformed:
        raise rep.malformed[0]
    if rep.filtered:
        log.warning("%s: dropped %d record(s) by the length filter", path, len(rep.filtered))
    if not rep.accepted and not allow_empty:
        raise UsageError(f"{path}: no usable records ({rep.summary()})")
    log.info("%s: %s", path, rep.summary())
    return rep.accepted


def _read_vocab(path: str) -> Vocab:
    if not Path(path).is_file():
        raise UsageError(f"vocabulary not found: {path}")
    return Vocab.load(path)


def _corpus_vocab(records, max_size: int, min_freq: int = 1) -> Vocab:
    return build_vocab([r.words for r in records] + [r.impression_words for r in records], max_size, min_freq)


def _overrides(pairs: list[str] | None) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, _, v = item.partition("=")
        out[k.strip()] = v.strip()
    return out


def _config(args):
    if args.config and not Path(args.config).is_file():
        raise UsageError(f"config not found: {args.config}")
    try:
        return load_config(args.config, _overrides(args.set))
    except ValueError as err:
        raise UsageError(str(err)) from None


def _write_jsonl(rows, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def _figure_path(report: Path, suffix: str) -> Path:
    return report.with_name(report.stem + suffix + ".png")


# ---------------------------------------------------------------- subcommands

def cmd_synth(args) -> int:
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    write_corpus(generate_synthetic_corpus(args.count, args.seed), args.out)
    print(f"wrote {args.count} records to {args.out}")
    return EXIT_OK


def cmd_annotate(args) -> int:
    if not Path(args.lexicon).is_file():
        raise UsageError(f"lexicon not found: {args.lexicon}")
    try:
        lexicon = load_lexicon(args.lexicon)
    except ValueError as err:
        raise UsageError(f"{args.lexicon}: {err}") from None
    records = _read_corpus(args.inp)
    out = [annotate_record(r, lexicon) for r in records]
    write_corpus(out, args.out)
    n_ent = sum(len(r.entities) for r in out)
    print(f"annotated {len(out)} records ({n_ent} entities, heuristic) -> {args.out}")
    return EXIT_OK


def cmd_build_vocab(args) -> int:
    if args.max_size < 5:
        raise UsageError("--max-size must leave room beyond the four special tokens")
    vocab = _corpus_vocab(_read_corpus(args.corpus), args.max_size, args.min_freq)
    vocab.save(args.out)
    print(f"wrote {len(vocab)} tokens to {args.out}")
    return EXIT_OK


def cmd_build_graph(args) -> int:
    records = _read_corpus(args.corpus)
    match = [r for r in records if r.id == args.id]
    if not match:
        raise UsageError(f"record {args.id!r} not found in {args.corpus}")
    rec = match[0]
    vocab = _read_vocab(args.vocab) if args.vocab else _corpus_vocab(records, 8192)
    run = _config(args)
    tok = encode_words(rec.words, vocab)
    graph = build_relation_graph(tok, rec.entities, rec.dependencies, run.graph)
    Path(args.dot).write_text(export_dot(graph, tok, name=rec.id), encoding="utf-8")
    if args.json:
        Path(args.json).write_text(graph.to_json() + "\n", encoding="utf-8")
    print(f"{rec.id}: {graph.n} subwords, {len(graph.edges)} edges, {len(graph.key)} key tokens -> {args.dot}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .plotting import plot_loss_curve
    from .training import NonFiniteLoss, train_loop

    records = _read_corpus(args.corpus)
    vocab = _read_vocab(args.vocab)
    run = _config(args)
    out = Path(args.out)
    metrics_path = Path(args.metrics) if args.metrics else out.with_suffix(".metrics.jsonl")
    history = []
    start = time.time()
    with open(metrics_path, "w", encoding="utf-8") as log_fh:
        def on_step(rec):
            history.append(rec.to_json())
            log_fh.write(json.dumps(rec.to_json()) + "\n")
            if rec.step % max(1, args.log_every) == 0:
                log.info("step %d L=%.4f l_ge=%.4f l_con=%.4f", rec.step, rec.L, rec.l_ge, rec.l_con)

        try:
            ckpt, _ = train_loop(records, vocab, run, on_step)
        except NonFiniteLoss as err:
            save_checkpoint(err.checkpoint, out)
            print(f"error: {err}; last good parameters saved to {out}", file=sys.stderr)
            return EXIT_RUNTIME
    save_checkpoint(ckpt, out)
    if history:
        plot_loss_curve(history, out.with_suffix(".loss.png"))
        last = history[-1]
        print(f"trained {len(history)} steps in {time.time() - start:.1f}s: "
              f"l_ge={last['l_ge']:.4f} l_con={last['l_con']:.4f} -> {out}")
    return EXIT_OK


def _load_model(path: str):
    from .training import model_from_checkpoint

    if not Path(path).is_file():
        raise UsageError(f"checkpoint not found: {path}")
    try:
        return model_from_checkpoint(load_checkpoint(path))
    except CheckpointError as err:
        raise UsageError(str(err)) from None


def cmd_generate(args) -> int:
    from .evaluation import predict
    from .training import prepare_examples

    model, vocab, run = _load_model(args.ckpt)
    if args.beam is not None:
        if args.beam < 1:
            raise UsageError("--beam must be >= 1")
        run.generation.beam_size = args.beam
    records = _read_corpus(args.corpus)
    examples = prepare_examples(records, vocab, run)
    preds = predict(model, examples, vocab, run.generation, run.train.use_graph)
    _write_jsonl([{"id": ex.id, "impression": p} for ex, p in zip(examples, preds)], Path(args.out))
    print(f"wrote {len(preds)} impressions to {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .evaluation import evaluate_corpus
    from .plotting import plot_length_buckets
    from .training import prepare_examples

    model, vocab, run = _load_model(args.ckpt)
    if args.beam is not None:
        if args.beam < 1:
            raise UsageError("--beam must be >= 1")
        run.generation.beam_size = args.beam
    examples = prepare_examples(_read_corpus(args.corpus), vocab, run)
    rep = evaluate_corpus(model, examples, vocab, run.generation, run.train.use_graph)
    report = Path(args.report)
    _write_jsonl(rep.to_records(), report)
    plot_length_buckets(rep.buckets, _figure_path(report, ".buckets"))
    if args.dump_per_example:
        _write_jsonl([{k: round(v, 2) if isinstance(v, float) else v for k, v in row.items()}
                      for row in rep.per_example], Path(args.dump_per_example))
    sys.stdout.write(rep.table())
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .evaluation import run_ablation
    from .plotting import plot_ablation

    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    if not 0 <= args.eval_fraction < 1:
        raise UsageError("--eval-fraction must be in [0, 1)")
    records = _read_corpus(args.corpus)
    run = _config(args)
    n_eval = int(round(len(records) * args.eval_fraction))
    train, held = (records[: len(records) - n_eval], records[len(records) - n_eval :]) if n_eval else (records, records)
    if not train:
        raise UsageError("--eval-fraction leaves no training records")
    vocab = _corpus_vocab(train, run.vocab.vocab_size, run.vocab.min_freq)
    seeds = [run.train.seed + i for i in range(args.seeds)]
    rep = run_ablation(train, held, vocab, run, seeds)
    report = Path(args.report)
    rows = rep.to_records()
    _write_jsonl(rows, report)
    plot_ablation(rows, _figure_path(report, ".ablation"))
    sys.stdout.write(rep.table())
    failed = [r.name for r in rep.rows if r.failures]
    if failed:
        print(f"error: variant(s) failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="graphcl", description="Graph-enhanced contrastive summarization toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")

    sp = sub.add_parser("synth", help="write a synthetic annotated corpus")
    sp.add_argument("--out", required=True)
    sp.add_argument("--count", type=int, default=32)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("annotate", help="annotate a corpus with the heuristic lexicon annotator")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--lexicon", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_annotate)

    sp = sub.add_parser("build-vocab", help="harvest a subword vocabulary")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--max-size", type=int, default=8192)
    sp.add_argument("--min-freq", type=int, default=1)
    sp.set_defaults(func=cmd_build_vocab)

    sp = sub.add_parser("build-graph", help="export one record's relation graph as DOT")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--id", required=True)
    sp.add_argument("--dot", required=True)
    sp.add_argument("--vocab", help="vocabulary file (default: harvested from the corpus)")
    sp.add_argument("--json", help="also write the edge list and key set as JSON")
    with_config(sp)
    sp.set_defaults(func=cmd_build_graph)

    sp = sub.add_parser("train", help="train a model and write a checkpoint")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--vocab", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--metrics", help="per-step JSONL log (default: <out>.metrics.jsonl)")
    sp.add_argument("--log-every", type=int, default=50)
    with_config(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("generate", help="generate impressions with a checkpoint")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--beam", type=int)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("evaluate", help="ROUGE report with findings-length buckets")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--report", required=True)
    sp.add_argument("--beam", type=int)
    sp.add_argument("--dump-per-example", metavar="PATH")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("ablate", help="train and score the four model variants")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--report", required=True)
    sp.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds from the config seed")
    sp.add_argument("--eval-fraction", type=float, default=0.125,
                    help="trailing share of records held out for scoring (0 scores on the training records)")
    with_config(sp)
    sp.set_defaults(func=cmd_ablate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, CorpusError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as err:  # noqa: BLE001 - single-line diagnostic for any runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
