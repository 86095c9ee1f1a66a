"""Quality scoring and anticipation measurement.

BLEU here is the plain corpus metric on whitespace tokens: geometric mean
of clipped 1..4-gram precisions times the brevity penalty, reported in
[0, 1].  The corpus variant is unsmoothed; the sentence-level variant uses
add-one smoothing on every n-gram order.

"Anticipation" is measured automatically from gold role alignments: a
hypothesis word at step t is anticipated when the trace shows g(t) strictly
below the 1-based source position of the role aligned to target position t,
i.e. the word was written before its source counterpart was read.  Its
accuracy is lexical agreement with the reference word at that position.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from math import exp, log
from typing import Optional, Sequence

from .data import AlignedRole
from .errors import DataError
from .latency import DecodingTrace, LatencyReport, RMode, corpus_latency

Tokens = Sequence[str]


def _ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _closest_ref_len(hyp_len: int, ref_lens: Sequence[int]) -> int:
    return min(ref_lens, key=lambda r: (abs(r - hyp_len), r))


def corpus_bleu(
    hypotheses: Sequence[Tokens],
    references: Sequence[Sequence[Tokens]],
    max_order: int = 4,
) -> float:
    """Corpus BLEU in [0, 1] with one or more references per sentence."""
    if not hypotheses:
        raise DataError("corpus_bleu needs at least one hypothesis")
    if len(hypotheses) != len(references):
        raise DataError(
            f"{len(hypotheses)} hypotheses vs {len(references)} reference sets"
        )
    matches = [0] * max_order
    totals = [0] * max_order
    hyp_len = 0
    ref_len = 0
    for hyp, refs in zip(hypotheses, references):
        if not refs:
            raise DataError("every sentence needs at least one reference")
        hyp_len += len(hyp)
        ref_len += _closest_ref_len(len(hyp), [len(r) for r in refs])
        for n in range(1, max_order + 1):
            hyp_counts = _ngrams(hyp, n)
            if not hyp_counts:
                continue
            best: Counter = Counter()
            for ref in refs:
                ref_counts = _ngrams(ref, n)
                for gram, c in ref_counts.items():
                    if c > best[gram]:
                        best[gram] = c
            totals[n - 1] += sum(hyp_counts.values())
            matches[n - 1] += sum(min(c, best[g]) for g, c in hyp_counts.items())
    if hyp_len == 0 or any(t == 0 for t in totals) or any(m == 0 for m in matches):
        return 0.0
    log_precision = sum(log(m / t) for m, t in zip(matches, totals)) / max_order
    bp = 1.0 if hyp_len > ref_len else exp(1.0 - ref_len / hyp_len)
    return bp * exp(log_precision)


def sentence_bleu(hypothesis: Tokens, references: Sequence[Tokens], max_order: int = 4) -> float:
    """Add-one-smoothed sentence BLEU in [0, 1]."""
    if not references:
        raise DataError("sentence_bleu needs at least one reference")
    log_precision = 0.0
    for n in range(1, max_order + 1):
        hyp_counts = _ngrams(hypothesis, n)
        best: Counter = Counter()
        for ref in references:
            for gram, c in _ngrams(ref, n).items():
                if c > best[gram]:
                    best[gram] = c
        total = sum(hyp_counts.values())
        match = sum(min(c, best[g]) for g, c in hyp_counts.items())
        log_precision += log((match + 1) / (total + 1)) / max_order
    hyp_len = len(hypothesis)
    if hyp_len == 0:
        return 0.0
    ref_len = _closest_ref_len(hyp_len, [len(r) for r in references])
    bp = 1.0 if hyp_len > ref_len else exp(1.0 - ref_len / hyp_len)
    return bp * exp(log_precision)


@dataclass(frozen=True)
class AnticipationReport:
    sentence_rate: float   # sentences with at least one anticipated word
    word_rate: float       # anticipated words / aligned emitted words
    word_accuracy: Optional[float]  # correct / anticipated, None if none anticipated
    n_sentences: int
    n_words: int
    n_anticipated: int


def anticipation_report(
    traces: Sequence[DecodingTrace],
    hypotheses: Sequence[Tokens],
    references: Sequence[Tokens],
    alignments: Sequence[Sequence[AlignedRole]],
) -> AnticipationReport:
    """Count words emitted before their aligned source position was read."""
    if not (len(traces) == len(hypotheses) == len(references) == len(alignments)):
        raise DataError("traces, hypotheses, references, and alignments must align")
    sent_hits = 0
    n_words = 0
    n_anticipated = 0
    n_correct = 0
    for trace, hyp, ref, align in zip(traces, hypotheses, references, alignments):
        if not align:
            raise DataError("missing alignment for a sentence")
        any_hit = False
        for entry in align:
            t = entry.tgt_pos
            if t > trace.tgt_len or t > len(hyp):
                continue  # the hypothesis never emitted this position
            n_words += 1
            if trace.g_values[t - 1] < entry.src_pos:
                n_anticipated += 1
                any_hit = True
                if t <= len(ref) and hyp[t - 1] == ref[t - 1]:
                    n_correct += 1
        if any_hit:
            sent_hits += 1
    n = len(traces)
    return AnticipationReport(
        sentence_rate=sent_hits / n,
        word_rate=(n_anticipated / n_words) if n_words else 0.0,
        word_accuracy=(n_correct / n_anticipated) if n_anticipated else None,
        n_sentences=n,
        n_words=n_words,
        n_anticipated=n_anticipated,
    )


def role_accuracy(
    hypotheses: Sequence[Tokens],
    references: Sequence[Tokens],
    alignments: Sequence[Sequence[AlignedRole]],
    role: str,
) -> float:
    """Fraction of sentences whose hypothesis realises a role exactly as the reference."""
    if not hypotheses:
        raise DataError("role_accuracy needs at least one sentence")
    hits = 0
    for hyp, ref, align in zip(hypotheses, references, alignments):
        positions = [a.tgt_pos for a in align if a.role == role]
        if not positions:
            continue
        ok = all(t <= len(hyp) and t <= len(ref) and hyp[t - 1] == ref[t - 1] for t in positions)
        hits += ok
    return hits / len(hypotheses)


@dataclass(frozen=True)
class SweepRow:
    label: str
    k: Optional[int]  # None = full-sentence decoding
    bleu: float
    al: float
    ap: float
    cw: float

    def csv_key(self) -> str:
        return f"{self.label}:{'inf' if self.k is None else self.k}"


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]

    def to_csv_rows(self) -> list[list]:
        return [
            [row.csv_key(), f"{row.bleu:.6f}", f"{row.al:.6f}", f"{row.ap:.6f}", f"{row.cw:.6f}"]
            for row in self.rows
        ]


SWEEP_HEADER = ["k", "bleu", "al", "ap", "cw"]


def latency_for_sweep(traces: Sequence[DecodingTrace]) -> LatencyReport:
    """Corpus latency over emitted words only (final <eos> steps trimmed).

    Trimming keeps the wait-k identity AL = k exact on equal-length data:
    the reported ratio r then matches words, not decoder steps.  A trace
    that would become empty is kept whole.
    """
    trimmed = []
    for tr in traces:
        cut = tr.without_final_step() if tr.ends_with_eos else tr
        trimmed.append(cut if cut is not None else tr)
    return corpus_latency(trimmed, RMode.PER_SENTENCE)


def sweep_rows(
    labeled_results: Sequence[tuple[str, Optional[int], Sequence]],
    references: Sequence[Tokens],
    tgt_vocab,
) -> SweepResult:
    """Build one sweep row per (label, k, decode results) entry."""
    rows = []
    for label, k, results in labeled_results:
        hyps = [tgt_vocab.decode(r.tokens) for r in results]
        bleu = corpus_bleu(hyps, [[ref] for ref in references])
        report = latency_for_sweep([r.trace for r in results])
        rows.append(
            SweepRow(
                label=label,
                k=k,
                bleu=bleu,
                al=float(report.al),
                ap=float(report.ap),
                cw=float(report.cw),
            )
        )
    return SweepResult(tuple(rows))
