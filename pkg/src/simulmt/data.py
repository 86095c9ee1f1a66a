"""Synthetic parallel data with controllable word-order divergence, plus file I/O.

The grammar builds sentences from four roles: a one-word subject, a
one-word object, a one-word verb, and a multi-word adjunct phrase whose
length varies to hit the configured sentence-length range.  Source and
target realise the same roles in different orders (e.g. verb-final source,
verb-second target), which is what makes anticipation measurable: with
``verb_determinism`` = 1 the source verb is a fixed function of the
subject and the first adjunct word, so a target-side verb emitted early
is predictable from tokens already read.

Every target sentence is exactly a re-ordering plus re-labelling of its
source roles (target tokens are the upper-cased source tokens), and a
gold role alignment is emitted alongside each pair.

File formats (all plain text, one sentence per line):

* corpus      -- two aligned token files, whitespace separated
* alignment   -- per line, space-separated ``role:src_pos:tgt_pos`` triples
                 with 1-based positions
* trace       -- ``src_len<TAB>tgt_len<TAB>actions`` with actions over R/W
* vocabulary  -- one token per line, listed in id order starting at id 4
* metrics     -- CSV with a header row
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DataError
from .latency import DecodingTrace, g_values_from_actions

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")

ROLES = ("subj", "adj", "obj", "verb")
_SRC_PREFIX = {"subj": "s", "adj": "a", "obj": "o", "verb": "v"}


@dataclass(frozen=True)
class AlignedRole:
    role: str
    src_pos: int  # 1-based
    tgt_pos: int  # 1-based


@dataclass(frozen=True)
class ParallelPair:
    src: tuple[str, ...]
    tgt: tuple[str, ...]
    alignment: tuple[AlignedRole, ...]


@dataclass(frozen=True)
class SyntheticGrammar:
    """Configuration for the synthetic reordering grammar."""

    subj_vocab: int = 12
    adj_vocab: int = 12
    obj_vocab: int = 12
    verb_vocab: int = 20
    src_order: tuple[str, ...] = ("subj", "adj", "obj", "verb")
    tgt_order: tuple[str, ...] = ("subj", "verb", "obj", "adj")
    verb_determinism: float = 1.0
    min_len: int = 4
    max_len: int = 8
    seed: int = 0

    def __post_init__(self) -> None:
        for order, name in ((self.src_order, "src_order"), (self.tgt_order, "tgt_order")):
            unknown = set(order) - set(ROLES)
            if unknown:
                raise DataError(f"{name} names unknown roles: {sorted(unknown)}")
        if set(self.src_order) != set(ROLES) or len(self.src_order) != len(ROLES):
            raise DataError("src_order must use each role exactly once")
        if set(self.tgt_order) != set(self.src_order):
            raise DataError(
                "inconsistent role orders: target roles must be drawn from the source roles"
            )
        if not 0.0 <= self.verb_determinism <= 1.0:
            raise DataError("verb_determinism must lie in [0, 1]")
        fixed = len(self.src_order) - 1  # all roles except the adjunct phrase
        if self.min_len < fixed + 1 or self.max_len < self.min_len:
            raise DataError(
                f"sentence length range [{self.min_len}, {self.max_len}] cannot fit "
                f"{fixed} one-word roles plus a non-empty adjunct"
            )

    def vocab_size(self, role: str) -> int:
        return {
            "subj": self.subj_vocab,
            "adj": self.adj_vocab,
            "obj": self.obj_vocab,
            "verb": self.verb_vocab,
        }[role]

    def verb_map(self) -> np.ndarray:
        """The injected map f: (subject index, first adjunct index) -> verb index."""
        rng = np.random.default_rng(self.seed ^ 0x5EED)
        return rng.integers(0, self.verb_vocab, size=(self.subj_vocab, self.adj_vocab))

    def expected_token_ratio(self) -> float:
        """E|target| / E|source| under the configured orders and lengths."""
        mean_adj = (self.min_len + self.max_len) / 2 - (len(self.src_order) - 1)
        src = sum(mean_adj if r == "adj" else 1 for r in self.src_order)
        tgt = sum(mean_adj if r == "adj" else 1 for r in self.tgt_order)
        return tgt / src


def _src_token(role: str, index: int) -> str:
    return f"{_SRC_PREFIX[role]}{index}"


def _tgt_token(role: str, index: int) -> str:
    return _src_token(role, index).upper()


def generate_corpus(grammar: SyntheticGrammar, n_pairs: int) -> list[ParallelPair]:
    """Deterministically sample parallel pairs with gold role alignments."""
    if n_pairs < 1:
        raise DataError(f"n_pairs must be >= 1, got {n_pairs}")
    rng = np.random.default_rng(grammar.seed)
    verb_map = grammar.verb_map()
    n_single = len(grammar.src_order) - 1
    pairs: list[ParallelPair] = []
    for _ in range(n_pairs):
        length = int(rng.integers(grammar.min_len, grammar.max_len + 1))
        adj_len = length - n_single
        subj = int(rng.integers(grammar.subj_vocab))
        obj = int(rng.integers(grammar.obj_vocab))
        adj = [int(i) for i in rng.integers(grammar.adj_vocab, size=adj_len)]
        if rng.random() < grammar.verb_determinism:
            verb = int(verb_map[subj, adj[0]])
        else:
            verb = int(rng.integers(grammar.verb_vocab))
        indices = {"subj": [subj], "obj": [obj], "verb": [verb], "adj": adj}

        src: list[str] = []
        src_pos: dict[str, list[int]] = {}
        for role in grammar.src_order:
            src_pos[role] = []
            for idx in indices[role]:
                src.append(_src_token(role, idx))
                src_pos[role].append(len(src))

        tgt: list[str] = []
        alignment: list[AlignedRole] = []
        for role in grammar.tgt_order:
            for word_i, idx in enumerate(indices[role]):
                tgt.append(_tgt_token(role, idx))
                alignment.append(AlignedRole(role, src_pos[role][word_i], len(tgt)))

        pairs.append(ParallelPair(tuple(src), tuple(tgt), tuple(alignment)))
    return pairs


class Vocab:
    """Token/id mapping with the fixed reserved ids pad=0, bos=1, eos=2, unk=3."""

    def __init__(self, tokens: Sequence[str]):
        for tok in tokens:
            if tok in RESERVED:
                raise DataError(f"reserved token {tok} cannot be re-registered")
        self.id_to_token: list[str] = list(RESERVED) + list(tokens)
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise DataError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocab) and self.id_to_token == other.id_to_token

    @property
    def tokens(self) -> list[str]:
        """Non-reserved tokens in id order."""
        return self.id_to_token[len(RESERVED):]

    def encode(self, words: Iterable[str]) -> list[int]:
        return [self.token_to_id.get(w, UNK) for w in words]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]


def build_vocab(sentences: Iterable[Sequence[str]]) -> Vocab:
    """Frequency-sorted vocabulary; ties broken lexicographically."""
    counts: Counter[str] = Counter()
    for sent in sentences:
        counts.update(sent)
    ordered = sorted(counts, key=lambda tok: (-counts[tok], tok))
    return Vocab(ordered)


# ---------------------------------------------------------------------------
# file I/O


def write_sentences(path: Path | str, sentences: Iterable[Sequence[str]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for sent in sentences:
            f.write(" ".join(sent) + "\n")


def read_sentences(path: Path | str) -> list[list[str]]:
    sentences = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            toks = line.split()
            if not toks:
                raise DataError(f"{path}:{lineno}: empty sentence")
            sentences.append(toks)
    return sentences


def write_corpus(src_path, tgt_path, pairs: Sequence[ParallelPair]) -> None:
    write_sentences(src_path, [p.src for p in pairs])
    write_sentences(tgt_path, [p.tgt for p in pairs])


def read_corpus(src_path, tgt_path) -> list[tuple[list[str], list[str]]]:
    src = read_sentences(src_path)
    tgt = read_sentences(tgt_path)
    if len(src) != len(tgt):
        raise DataError(
            f"corpus sides differ in length: {src_path} has {len(src)} lines, "
            f"{tgt_path} has {len(tgt)}"
        )
    return list(zip(src, tgt))


def write_alignments(path, pairs: Sequence[ParallelPair]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for pair in pairs:
            f.write(" ".join(f"{a.role}:{a.src_pos}:{a.tgt_pos}" for a in pair.alignment) + "\n")


def read_alignments(path) -> list[tuple[AlignedRole, ...]]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            triples = []
            for item in line.split():
                parts = item.split(":")
                if len(parts) != 3:
                    raise DataError(f"{path}:{lineno}: malformed alignment triple {item!r}")
                role, s, t = parts
                try:
                    triples.append(AlignedRole(role, int(s), int(t)))
                except ValueError:
                    raise DataError(f"{path}:{lineno}: non-integer position in {item!r}") from None
            out.append(tuple(triples))
    return out


def write_vocab(path, vocab: Vocab) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for tok in vocab.tokens:
            f.write(tok + "\n")


def read_vocab(path) -> Vocab:
    tokens = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            tok = line.strip()
            if not tok:
                raise DataError(f"{path}:{lineno}: empty vocabulary entry")
            tokens.append(tok)
    return Vocab(tokens)


def write_traces(path, traces: Sequence[DecodingTrace]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for tr in traces:
            f.write(f"{tr.src_len}\t{tr.tgt_len}\t{tr.actions}\n")


def read_traces(path) -> list[DecodingTrace]:
    traces = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields")
            try:
                src_len, tgt_len = int(parts[0]), int(parts[1])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer length field") from None
            actions = parts[2]
            if actions.count("R") != src_len or actions.count("W") != tgt_len:
                raise DataError(
                    f"{path}:{lineno}: action string does not match the declared lengths"
                )
            try:
                g = g_values_from_actions(actions)
            except Exception as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            traces.append(DecodingTrace(src_len, tgt_len, tuple(g)))
    return traces


def write_metrics_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def read_metrics_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        rows = list(reader)
    if not rows:
        raise DataError(f"{path}: empty metrics file")
    return rows[0], rows[1:]
