"""Simultaneous decoding: greedy emission under a schedule, tail beam search.

Before the cutoff step (the first step at which the whole source has been
read) every target token is the argmax of the step distribution given the
schedule's source prefix.  From the cutoff step on, the remaining suffix is
produced by beam search conditioned on the fully read source; completed
hypotheses are ranked by length-normalized log probability, and the pure
greedy continuation is always kept in the candidate pool, so widening the
beam can never return a worse-scoring tail.

Prefix conditioning re-encodes the currently read source tokens from
scratch at each new read count (encodings are cached per count).  Unread
source positions therefore cannot influence any emission, which also makes
"test-time" schedule decoding with a full-sentence-trained model exactly
the truncated-source construction: the flag changes bookkeeping only.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import BOS, EOS
from .errors import DataError, PolicyError
from .latency import DecodingTrace
from .model import (
    AttentionMaskSpec,
    MaskMode,
    ModelParams,
    _log_softmax,
    decoder_forward,
    encode_source,
    encoder_forward,
)
from .policy import PolicyKind, PolicySchedule, cutoff_step


@dataclass(frozen=True)
class DecodeConfig:
    schedule: PolicySchedule
    beam_width: int = 1
    max_len: Optional[int] = None
    test_time: bool = False

    def __post_init__(self) -> None:
        if self.beam_width < 1:
            raise ValueError(f"beam width must be >= 1, got {self.beam_width}")
        if self.max_len is not None and self.max_len < 1:
            raise ValueError(f"max_len must be >= 1, got {self.max_len}")


@dataclass(frozen=True)
class Hypothesis:
    """Tokens emitted so far (ids, <eos> included once finished) and their score."""

    tokens: tuple[int, ...]
    log_prob: float
    alive: bool = True

    @property
    def normalized_score(self) -> float:
        return self.log_prob / max(1, len(self.tokens))


@dataclass(frozen=True)
class DecodeResult:
    tokens: tuple[int, ...]  # emitted ids, <eos> stripped
    trace: DecodingTrace
    log_prob: float
    ends_with_eos: bool
    test_time: bool = False


def _step_logp(params: ModelParams, enc: Optional[np.ndarray], prefix: list[int]) -> np.ndarray:
    ids = np.asarray(prefix, dtype=np.int64)[None]
    if enc is None or enc.shape[0] == 0:
        states = np.zeros((1, 1, params.config.d_model))
        allowed = np.zeros((1, 1, 1), dtype=bool)
    else:
        states = enc[None]
        allowed = np.ones((1, 1, enc.shape[0]), dtype=bool)
    hidden, _ = decoder_forward(params, ids, states, allowed)
    logits = hidden[0, -1] @ params["out_w"] + params["out_b"]
    return _log_softmax(logits)


class _PrefixEncoder:
    """Caches the scratch encoding of each distinct source prefix length."""

    def __init__(self, params: ModelParams, src_ids: Sequence[int]):
        self.params = params
        self.src_ids = list(src_ids)
        self._cache: dict[int, np.ndarray] = {}

    def states(self, g: int) -> Optional[np.ndarray]:
        if g == 0:
            return None
        if g not in self._cache:
            self._cache[g] = encode_source(self.params, self.src_ids[:g])
        return self._cache[g]


def decode(params: ModelParams, src_ids: Sequence[int], config: DecodeConfig) -> DecodeResult:
    """Translate one sentence under the configured schedule."""
    src_ids = list(src_ids)
    n = len(src_ids)
    if n == 0:
        raise DataError("cannot decode an empty source sentence")
    if any(i < 0 or i >= params.config.src_vocab_size for i in src_ids):
        raise DataError("source token id outside the model's vocabulary")
    schedule = config.schedule
    zero_source = schedule.kind is PolicyKind.ZERO_SOURCE
    max_len = config.max_len if config.max_len is not None else 2 * n + 8
    max_len = min(max_len, params.config.max_len - 1)  # room for <bos>
    cutoff = None if zero_source else cutoff_step(schedule, n)
    encoder = _PrefixEncoder(params, src_ids)

    tokens: list[int] = []
    g_trace: list[int] = []
    log_prob = 0.0
    ends_with_eos = False

    t = 1
    while len(tokens) < max_len:
        g = schedule.g(t, n) if not zero_source else 0
        if g == 0 and not zero_source:
            raise PolicyError(
                "schedule asks for an emission before any source was read; "
                "use the zero-source oracle explicitly if that is intended"
            )
        if cutoff is not None and t >= cutoff:
            break  # hand the rest to the tail search
        logp = _step_logp(params, encoder.states(g), [BOS] + tokens)
        nxt = int(np.argmax(logp))
        log_prob += float(logp[nxt])
        tokens.append(nxt)
        g_trace.append(g)
        if nxt == EOS:
            ends_with_eos = True
            break
        t += 1

    if not ends_with_eos and len(tokens) < max_len and cutoff is not None:
        best = _tail_beam(
            params,
            encoder.states(n),
            tokens,
            log_prob,
            config.beam_width,
            max_len,
        )
        new = best.tokens[len(tokens):]
        tokens = list(best.tokens)
        g_trace.extend([n] * len(new))
        log_prob = best.log_prob
        ends_with_eos = bool(tokens) and tokens[-1] == EOS

    if ends_with_eos:
        out_tokens = tuple(tokens[:-1])
    else:
        out_tokens = tuple(tokens)
    if not g_trace:  # schedule exhausted before any emission; cannot happen in practice
        raise PolicyError("decode produced no emissions")
    trace = DecodingTrace(n, len(g_trace), tuple(g_trace), ends_with_eos)
    return DecodeResult(out_tokens, trace, log_prob, ends_with_eos, config.test_time)


def _greedy_rollout(
    params: ModelParams,
    enc: np.ndarray,
    tokens: list[int],
    log_prob: float,
    max_len: int,
) -> Hypothesis:
    toks = list(tokens)
    lp = log_prob
    while len(toks) < max_len:
        logp = _step_logp(params, enc, [BOS] + toks)
        nxt = int(np.argmax(logp))
        lp += float(logp[nxt])
        toks.append(nxt)
        if nxt == EOS:
            return Hypothesis(tuple(toks), lp, alive=False)
    return Hypothesis(tuple(toks), lp, alive=True)


def _tail_beam(
    params: ModelParams,
    enc: np.ndarray,
    prefix: list[int],
    prefix_log_prob: float,
    width: int,
    max_len: int,
) -> Hypothesis:
    """Beam-search the suffix after the source is fully read.

    Candidates are completed hypotheses (ending in <eos>) plus, if the
    length budget runs out, the surviving unfinished ones; the greedy
    continuation is always a candidate.  Ranking is by log probability per
    emitted token, ties broken toward the lexicographically smaller token
    sequence for determinism.
    """
    alive: list[Hypothesis] = [Hypothesis(tuple(prefix), prefix_log_prob)]
    candidates: list[Hypothesis] = [_greedy_rollout(params, enc, prefix, prefix_log_prob, max_len)]

    while alive and len(alive[0].tokens) < max_len:
        expansions: list[Hypothesis] = []
        for hyp in alive:
            logp = _step_logp(params, enc, [BOS] + list(hyp.tokens))
            for v in range(logp.shape[0]):
                expansions.append(
                    Hypothesis(hyp.tokens + (v,), hyp.log_prob + float(logp[v]), v != EOS)
                )
        expansions.sort(key=lambda h: (-h.log_prob, h.tokens))
        alive = []
        for hyp in expansions[: width + len(expansions)]:
            if len(alive) >= width:
                break
            if hyp.alive:
                alive.append(hyp)
            else:
                candidates.append(hyp)
    candidates.extend(alive)  # length budget exhausted without <eos>

    finished = [h for h in candidates if not h.alive]
    pool = finished if finished else candidates
    # Dedupe (the greedy rollout usually reappears inside the beam).
    seen: dict[tuple[int, ...], Hypothesis] = {}
    for h in pool:
        seen.setdefault(h.tokens, h)
    return max(seen.values(), key=lambda h: (h.normalized_score, [-t for t in h.tokens]))


def _decode_group_greedy(
    params: ModelParams, ids: np.ndarray, config: DecodeConfig, indices: list[int]
) -> list[tuple[int, DecodeResult]]:
    """Lockstep greedy decoding for same-length sources (beam width 1 only)."""
    S, n = ids.shape
    schedule = config.schedule
    zero_source = schedule.kind is PolicyKind.ZERO_SOURCE
    max_len = config.max_len if config.max_len is not None else 2 * n + 8
    max_len = min(max_len, params.config.max_len - 1)
    d = params.config.d_model

    enc_cache: dict[int, np.ndarray] = {}

    def states(g: int) -> tuple[np.ndarray, np.ndarray]:
        if g == 0:
            return np.zeros((S, 1, d)), np.zeros((S, 1, 1), dtype=bool)
        if g not in enc_cache:
            if params.config.encoder_mode == "unidirectional":
                allowed = AttentionMaskSpec(MaskMode.UNIDIRECTIONAL).build(g, g)[None]
            else:
                allowed = AttentionMaskSpec(MaskMode.FULL).build(g, g)[None]
            enc_cache[g], _ = encoder_forward(params, ids[:, :g], allowed)
        return enc_cache[g], np.ones((S, 1, g), dtype=bool)

    tokens: list[list[int]] = [[] for _ in range(S)]
    g_trace: list[list[int]] = [[] for _ in range(S)]
    log_prob = np.zeros(S)
    finished = np.zeros(S, dtype=bool)
    prefix = np.full((S, 1), BOS, dtype=np.int64)

    for t in range(1, max_len + 1):
        g = schedule.g(t, n) if not zero_source else 0
        if g == 0 and not zero_source:
            raise PolicyError(
                "schedule asks for an emission before any source was read; "
                "use the zero-source oracle explicitly if that is intended"
            )
        enc, cross = states(g)
        hidden, _ = decoder_forward(params, prefix, enc, cross)
        logits = hidden[:, -1] @ params["out_w"] + params["out_b"]
        logp = _log_softmax(logits)
        nxt = np.argmax(logp, axis=-1)
        for i in range(S):
            if finished[i]:
                continue
            tokens[i].append(int(nxt[i]))
            g_trace[i].append(g)
            log_prob[i] += float(logp[i, nxt[i]])
            if nxt[i] == EOS:
                finished[i] = True
        if finished.all():
            break
        step_ids = np.where(finished, 0, nxt)  # finished rows feed <pad>; outputs ignored
        prefix = np.concatenate([prefix, step_ids[:, None]], axis=1)

    out = []
    for i in range(S):
        ends = bool(tokens[i]) and tokens[i][-1] == EOS
        emitted = tuple(tokens[i][:-1]) if ends else tuple(tokens[i])
        trace = DecodingTrace(n, len(g_trace[i]), tuple(g_trace[i]), ends)
        out.append(
            (indices[i], DecodeResult(emitted, trace, float(log_prob[i]), ends, config.test_time))
        )
    return out


def decode_corpus(
    params: ModelParams,
    sentences: Sequence[Sequence[int]],
    config: DecodeConfig,
    jobs: int = 1,
    batch_size: Optional[int] = 64,
) -> list[DecodeResult]:
    """Decode many sentences; results are independent of the worker count.

    With beam width 1 and ``batch_size`` set, same-length sources are
    decoded in lockstep batches, which is much faster than one-by-one;
    wider beams always decode sentence by sentence.
    """
    if config.beam_width == 1 and batch_size and batch_size > 1:
        for s in sentences:
            if len(s) == 0:
                raise DataError("cannot decode an empty source sentence")
            if any(i < 0 or i >= params.config.src_vocab_size for i in s):
                raise DataError("source token id outside the model's vocabulary")
        groups: dict[int, list[int]] = {}
        for idx, s in enumerate(sentences):
            groups.setdefault(len(s), []).append(idx)
        results: list[Optional[DecodeResult]] = [None] * len(sentences)
        for n in sorted(groups):
            idxs = groups[n]
            for start in range(0, len(idxs), batch_size):
                chunk = idxs[start : start + batch_size]
                ids = np.array([list(sentences[i]) for i in chunk], dtype=np.int64)
                for idx, res in _decode_group_greedy(params, ids, config, chunk):
                    results[idx] = res
        return results  # type: ignore[return-value]
    if jobs <= 1:
        return [decode(params, s, config) for s in sentences]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda s: decode(params, s, config), sentences))


def schedule_for_k(k: Optional[int]) -> PolicySchedule:
    """Map a wait-k value to a schedule; None (or "inf") means full-sentence."""
    if k is None:
        return PolicySchedule.full_sentence()
    return PolicySchedule.wait_k(k)


def decode_matrix(
    models: dict[str, ModelParams],
    test_ks: Sequence[Optional[int]],
    sources: Sequence[Sequence[int]],
    score_fn,
    beam_width: int = 1,
    jobs: int = 1,
) -> dict[tuple[str, Optional[int]], float]:
    """Evaluate every model under every test-time schedule.

    ``score_fn(results) -> float`` turns a list of DecodeResult into a
    corpus score (typically BLEU against fixed references).  All models
    must share one vocabulary.
    """
    sizes = {(m.config.src_vocab_size, m.config.tgt_vocab_size) for m in models.values()}
    if len(sizes) > 1:
        raise DataError(f"models disagree on vocabulary sizes: {sorted(sizes)}")
    table: dict[tuple[str, Optional[int]], float] = {}
    for label, params in models.items():
        for k in test_ks:
            config = DecodeConfig(schedule=schedule_for_k(k), beam_width=beam_width)
            results = decode_corpus(params, sources, config, jobs=jobs)
            table[(label, k)] = score_fn(results)
    return table
