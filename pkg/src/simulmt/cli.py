"""Command-line front end.

Subcommands: gen-data, train, translate, evaluate, sweep, latency,
grad-check.  Every run is deterministic given its flags, input files, and
--seed.  Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import data as dio
from .decoding import DecodeConfig, decode_corpus, schedule_for_k
from .errors import DataError, NumericalError, PolicyError, SimulmtError
from .evaluation import (
    SWEEP_HEADER,
    anticipation_report,
    corpus_bleu,
    latency_for_sweep,
    sweep_rows,
)
from .experiments import default_grammar
from .latency import RMode, corpus_latency
from .model import ModelConfig, init_params, load_checkpoint, save_checkpoint
from .policy import PolicySchedule
from .training import TrainConfig, gradient_check, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit(2); the contract wants 1
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="simulmt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic parallel corpus")
    p.add_argument("--grammar", help="JSON file overriding grammar fields")
    p.add_argument("--n", type=int, required=True, help="number of sentence pairs")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--k", type=int, help="train with the wait-k schedule")
    group.add_argument("--full", action="store_true", help="train full-sentence")
    p.add_argument("--catchup", default=None, help="catchup frequency c = r - 1 (rational)")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--optimizer", choices=("sgd", "adam"), default="sgd")
    p.add_argument("--clip", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--ffn", type=int, default=64)
    p.add_argument("--encoder-mode", choices=("prefix_bidirectional", "unidirectional"),
                   default="prefix_bidirectional")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--loss-out", default=None, help="loss CSV path (default: <out>.loss.csv)")

    p = sub.add_parser("translate", help="decode a source file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--src", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--k", type=int, help="decode with the wait-k schedule")
    group.add_argument("--full", action="store_true", help="full-sentence decoding")
    p.add_argument("--catchup", default=None, help="catchup frequency c = r - 1 (rational)")
    p.add_argument("--test-time", action="store_true",
                   help="mark the run as test-time decoding (bookkeeping only)")
    p.add_argument("--beam", type=int, default=1, help="tail beam width")
    p.add_argument("--max-len", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="hypothesis file")
    p.add_argument("--trace", default=None, help="trace file")

    p = sub.add_parser("evaluate", help="score hypotheses against references")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True, help="reference file, or comma-separated files")
    p.add_argument("--trace", default=None)
    p.add_argument("--align", default=None)

    p = sub.add_parser("sweep", help="decode several checkpoints at several k")
    p.add_argument("--ckpts", required=True, help="name=path[,name=path...]")
    p.add_argument("--ks", required=True, help="comma-separated k values; 'inf' = full")
    p.add_argument("--src", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--beam", type=int, default=1)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="CSV output path")

    p = sub.add_parser("latency", help="latency metrics for a trace file")
    p.add_argument("--trace", required=True)
    p.add_argument("--r-mode", choices=("per-sentence", "corpus"), default="per-sentence")

    p = sub.add_parser("grad-check", help="finite-difference check of the gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    return parser


def _schedule_from_flags(k: Optional[int], full: bool, catchup: Optional[str]) -> PolicySchedule:
    if full:
        if catchup is not None:
            raise _UsageError("--catchup has no meaning with --full")
        return PolicySchedule.full_sentence()
    assert k is not None
    if catchup is not None:
        return PolicySchedule.wait_k_catchup(k, catchup)
    return PolicySchedule.wait_k(k)


def _cmd_gen_data(args) -> int:
    grammar = default_grammar(seed=args.seed)
    if args.grammar:
        try:
            overrides = json.loads(Path(args.grammar).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read grammar file {args.grammar}: {exc}") from None
        for key in ("src_order", "tgt_order"):
            if key in overrides:
                overrides[key] = tuple(overrides[key])
        fields = {**grammar.__dict__, **overrides, "seed": args.seed}
        grammar = dio.SyntheticGrammar(**fields)
    pairs = dio.generate_corpus(grammar, args.n)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dio.write_corpus(out / "corpus.src", out / "corpus.tgt", pairs)
    dio.write_alignments(out / "corpus.align", pairs)
    print(f"wrote {len(pairs)} pairs to {out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    pairs = dio.read_corpus(args.src, args.tgt)
    src_vocab = dio.build_vocab([s for s, _ in pairs])
    tgt_vocab = dio.build_vocab([t for _, t in pairs])
    corpus = [(src_vocab.encode(s), tgt_vocab.encode(t)) for s, t in pairs]
    schedule = _schedule_from_flags(args.k, args.full, args.catchup)
    model_cfg = ModelConfig(
        src_vocab_size=len(src_vocab),
        tgt_vocab_size=len(tgt_vocab),
        d_model=args.width,
        n_heads=args.heads,
        n_layers=args.layers,
        d_ff=args.ffn,
        encoder_mode=args.encoder_mode,
    )
    cfg = TrainConfig(
        schedule=schedule,
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        seed=args.seed,
        clip=args.clip,
        optimizer=args.optimizer,
    )
    params, history = train(corpus, cfg, model_config=model_cfg)
    meta = {"train_schedule": schedule.label(), "seed": args.seed}
    save_checkpoint(args.out, params, src_vocab, tgt_vocab, meta)
    loss_path = args.loss_out or f"{args.out}.loss.csv"
    dio.write_metrics_csv(
        loss_path, ["epoch", "mean_nll"],
        [[i, f"{nll:.10f}"] for i, nll in enumerate(history, start=1)],
    )
    print(f"saved {args.out} (final mean NLL {history[-1]:.6f})")
    return EXIT_OK


def _load_model(path):
    ckpt = load_checkpoint(path)
    if ckpt.src_vocab is None or ckpt.tgt_vocab is None:
        raise DataError(f"{path}: checkpoint carries no vocabulary")
    return ckpt


def _cmd_translate(args) -> int:
    ckpt = _load_model(args.ckpt)
    sentences = dio.read_sentences(args.src)
    ids = [ckpt.src_vocab.encode(s) for s in sentences]
    schedule = _schedule_from_flags(args.k, args.full, args.catchup)
    cfg = DecodeConfig(
        schedule=schedule, beam_width=args.beam, max_len=args.max_len, test_time=args.test_time
    )
    results = decode_corpus(ckpt.params, ids, cfg, jobs=args.jobs)
    dio.write_sentences(args.out, [ckpt.tgt_vocab.decode(r.tokens) for r in results])
    if args.trace:
        dio.write_traces(args.trace, [r.trace for r in results])
    print(f"decoded {len(results)} sentences to {args.out}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    hyps = dio.read_sentences(args.hyp)
    ref_files = args.ref.split(",")
    ref_sets = [dio.read_sentences(f) for f in ref_files]
    for f, refs in zip(ref_files, ref_sets):
        if len(refs) != len(hyps):
            raise DataError(f"{f}: {len(refs)} references vs {len(hyps)} hypotheses")
    references = [[rs[i] for rs in ref_sets] for i in range(len(hyps))]
    bleu = corpus_bleu(hyps, references)
    print(f"bleu {bleu:.6f}")
    if args.trace:
        traces = dio.read_traces(args.trace)
        if len(traces) != len(hyps):
            raise DataError(f"{args.trace}: {len(traces)} traces vs {len(hyps)} hypotheses")
        report = corpus_latency(traces, RMode.PER_SENTENCE)
        print(f"al {float(report.al):.6f}")
        print(f"ap {float(report.ap):.6f}")
        print(f"cw {float(report.cw):.6f}")
        if args.align:
            aligns = dio.read_alignments(args.align)
            if len(aligns) != len(hyps):
                raise DataError(f"{args.align}: alignment count mismatch")
            ant = anticipation_report(traces, hyps, ref_sets[0], aligns)
            print(f"anticipation_sentence_rate {ant.sentence_rate:.6f}")
            print(f"anticipation_word_rate {ant.word_rate:.6f}")
            acc = "nan" if ant.word_accuracy is None else f"{ant.word_accuracy:.6f}"
            print(f"anticipation_word_accuracy {acc}")
    return EXIT_OK


def _parse_ks(spec: str) -> list[Optional[int]]:
    ks: list[Optional[int]] = []
    for item in spec.split(","):
        item = item.strip()
        if item in ("inf", "full"):
            ks.append(None)
        else:
            try:
                ks.append(int(item))
            except ValueError:
                raise _UsageError(f"bad k value {item!r}") from None
    if not ks:
        raise _UsageError("--ks needs at least one value")
    return ks


def _cmd_sweep(args) -> int:
    ckpts = {}
    for item in args.ckpts.split(","):
        if "=" not in item:
            raise _UsageError(f"--ckpts entries must be name=path, got {item!r}")
        name, path = item.split("=", 1)
        ckpts[name] = _load_model(path)
    ks = _parse_ks(args.ks)
    sources = dio.read_sentences(args.src)
    references = dio.read_sentences(args.ref)
    if len(sources) != len(references):
        raise DataError("source and reference files differ in length")

    src_vocabs = {tuple(c.src_vocab.id_to_token) for c in ckpts.values()}
    tgt_vocabs = {tuple(c.tgt_vocab.id_to_token) for c in ckpts.values()}
    if len(src_vocabs) > 1 or len(tgt_vocabs) > 1:
        raise DataError("checkpoints do not share one vocabulary")

    labeled = []
    any_ckpt = next(iter(ckpts.values()))
    for name, ckpt in ckpts.items():
        ids = [ckpt.src_vocab.encode(s) for s in sources]
        for k in ks:
            cfg = DecodeConfig(schedule=schedule_for_k(k), beam_width=args.beam)
            results = decode_corpus(ckpt.params, ids, cfg, jobs=args.jobs)
            labeled.append((name, k, results))
    result = sweep_rows(labeled, references, any_ckpt.tgt_vocab)
    dio.write_metrics_csv(args.out, SWEEP_HEADER, result.to_csv_rows())
    print(f"wrote {len(result.rows)} sweep rows to {args.out}")
    return EXIT_OK


def _cmd_latency(args) -> int:
    traces = dio.read_traces(args.trace)
    mode = RMode.PER_SENTENCE if args.r_mode == "per-sentence" else RMode.CORPUS
    report = corpus_latency(traces, mode)
    print(f"sentences {len(traces)}")
    print(f"al {float(report.al):.6f}")
    print(f"ap {float(report.ap):.6f}")
    print(f"cw {float(report.cw):.6f}")
    print(f"r {float(report.r):.6f}")
    if report.incomplete_read:
        print("incomplete_read true")
    return EXIT_OK


def _cmd_grad_check(args) -> int:
    rng = np.random.default_rng(args.seed)
    cfg = ModelConfig(
        src_vocab_size=10, tgt_vocab_size=10, d_model=8, n_heads=2, n_layers=1, d_ff=16
    )
    params = init_params(cfg, args.seed)
    src = [int(x) for x in rng.integers(4, 10, size=5)]
    tgt = [int(x) for x in rng.integers(4, 10, size=5)]
    err = gradient_check(params, (src, tgt), PolicySchedule.wait_k(1))
    print(f"max_relative_error {err:.3e} (n_params {params.n_params()})")
    if not np.isfinite(err) or err >= args.tolerance:
        raise NumericalError(f"gradient check failed: {err:.3e} >= {args.tolerance:.1e}")
    return EXIT_OK


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "translate": _cmd_translate,
    "evaluate": _cmd_evaluate,
    "sweep": _cmd_sweep,
    "latency": _cmd_latency,
    "grad-check": _cmd_grad_check,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, PolicyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SimulmtError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
