"""Read/write schedules for simultaneous decoding.

A schedule is a monotone non-decreasing function g(t) giving the number of
source tokens read before the t-th target token is emitted (t is 1-based).
Four families are provided:

* wait-k            -- read k tokens, then alternate one write per read.
* wait-k + catchup  -- wait-k with periodic extra writes (or extra reads,
                       for negative catchup) to track a target/source
                       length ratio different from 1.
* full-sentence     -- read everything before the first write.
* zero-source       -- never read; a diagnostic oracle for target-only
                       language modelling.

By convention g(0) = 0, so the wait before the very first emission is
g(1) itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Union

from .errors import PolicyError

Rational = Union[int, float, str, Fraction]


class PolicyKind(Enum):
    WAIT_K = "wait-k"
    WAIT_K_CATCHUP = "wait-k-catchup"
    FULL_SENTENCE = "full-sentence"
    ZERO_SOURCE = "zero-source"


def as_fraction(value: Rational) -> Fraction:
    """Coerce to an exact rational; floats go through their decimal repr."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(str(value))
    return Fraction(value)


def wait_k_g(k: int, t: int, src_len: int) -> int:
    """Wait-k read count before emission t: min(k + t - 1, src_len)."""
    if k < 0 or t < 1 or src_len < 1:
        raise PolicyError(f"wait_k_g outside domain: k={k}, t={t}, src_len={src_len}")
    return min(k + t - 1, src_len)


def wait_k_catchup_g(k: int, c: Rational, t: int, src_len: int) -> int:
    """Pointwise catchup read count: max(0, min(k + t - 1 - floor(c*t), src_len)).

    Here ``c`` is the per-emission catchup rate that appears directly inside
    the floor term: every 1/c emissions one write happens without a read
    (negative ``c`` inserts extra reads instead).  For very large positive
    ``c`` the raw sequence can momentarily decrease; schedule objects clamp
    to the running maximum, this pointwise form does not.
    """
    if t < 1 or src_len < 1:
        raise PolicyError(f"wait_k_catchup_g outside domain: t={t}, src_len={src_len}")
    c = as_fraction(c)
    return max(0, min(k + t - 1 - math.floor(c * t), src_len))


@dataclass(frozen=True)
class PolicySchedule:
    """A read/write schedule with its parameters.

    ``k`` is the initial wait in source tokens.  ``c`` is the catchup
    frequency in catchups per *source* token, i.e. c = r - 1 for a
    target/source length ratio r; negative values mean reverse (encoder)
    catchup.  Internally the floor formula advances at c/(1+c) = 1 - 1/r
    per emission so that the realised write/read ratio is exactly r in
    steady state: with c = 1/4 the schedule settles into five writes per
    four reads, and with c = -1/5 into four writes per five reads.
    """

    kind: PolicyKind
    k: int = 0
    c: Fraction = field(default_factory=lambda: Fraction(0))

    def __post_init__(self) -> None:
        if self.k < 0:
            raise PolicyError(f"initial wait k must be >= 0, got {self.k}")
        object.__setattr__(self, "c", as_fraction(self.c))
        if self.kind is PolicyKind.WAIT_K_CATCHUP and self.c <= -1:
            raise PolicyError(f"catchup frequency must exceed -1, got {self.c}")

    @classmethod
    def wait_k(cls, k: int) -> "PolicySchedule":
        return cls(PolicyKind.WAIT_K, k=k)

    @classmethod
    def wait_k_catchup(cls, k: int, c: Rational) -> "PolicySchedule":
        return cls(PolicyKind.WAIT_K_CATCHUP, k=k, c=as_fraction(c))

    @classmethod
    def full_sentence(cls) -> "PolicySchedule":
        return cls(PolicyKind.FULL_SENTENCE)

    @classmethod
    def zero_source(cls) -> "PolicySchedule":
        return cls(PolicyKind.ZERO_SOURCE)

    @property
    def step_rate(self) -> Fraction:
        """Per-emission catchup rate used inside the floor term."""
        return self.c / (1 + self.c)

    def label(self) -> str:
        if self.kind is PolicyKind.WAIT_K:
            return f"wait-{self.k}"
        if self.kind is PolicyKind.WAIT_K_CATCHUP:
            return f"wait-{self.k}+catchup({self.c})"
        return self.kind.value

    def _raw(self, t: int, src_len: int) -> int:
        if self.kind is PolicyKind.WAIT_K:
            return wait_k_g(self.k, t, src_len)
        if self.kind is PolicyKind.WAIT_K_CATCHUP:
            return wait_k_catchup_g(self.k, self.step_rate, t, src_len)
        if self.kind is PolicyKind.FULL_SENTENCE:
            return src_len
        return 0

    def g(self, t: int, src_len: int) -> int:
        """Tokens read before emission t, clamped to be monotone in t."""
        if t < 1 or src_len < 1:
            raise PolicyError(f"schedule evaluated outside domain: t={t}, src_len={src_len}")
        if self.kind is not PolicyKind.WAIT_K_CATCHUP:
            return self._raw(t, src_len)
        # Catchup with rate > 1 can dip; take the running maximum.
        return max(self._raw(s, src_len) for s in range(1, t + 1))

    def g_values(self, src_len: int, tgt_len: int) -> list[int]:
        """g(1..tgt_len) with the monotone clamp applied incrementally."""
        values: list[int] = []
        best = 0
        for t in range(1, tgt_len + 1):
            best = max(best, self._raw(t, src_len))
            values.append(best)
        return values

    def _cutoff_bound(self, src_len: int) -> int:
        if self.kind is PolicyKind.WAIT_K_CATCHUP:
            rate = self.step_rate
            if rate >= 1:
                # No net reading progress; only tiny sentences terminate.
                return src_len + self.k + 4 * max(1, rate.denominator)
            bound = Fraction(src_len - self.k + 1, 1) / (1 - rate)
            return max(1, math.ceil(bound)) + 4
        return src_len + self.k + 2


def cutoff_step(schedule: PolicySchedule, src_len: int) -> int:
    """Smallest t with g(t) = src_len (the step at which reading finishes)."""
    if src_len < 1:
        raise PolicyError(f"src_len must be >= 1, got {src_len}")
    if schedule.kind is PolicyKind.ZERO_SOURCE:
        raise PolicyError("zero-source schedule has no cutoff: g(t) never reaches src_len")
    if schedule.kind is PolicyKind.FULL_SENTENCE:
        return 1
    if schedule.kind is PolicyKind.WAIT_K:
        return max(1, src_len - schedule.k + 1)
    best = 0
    for t in range(1, schedule._cutoff_bound(src_len) + 1):
        best = max(best, schedule._raw(t, src_len))
        if best >= src_len:
            return t
    raise PolicyError(f"schedule {schedule.label()} never reads all {src_len} source tokens")


def schedule_to_actions(schedule: PolicySchedule, src_len: int, tgt_len: int) -> str:
    """Serialize a schedule as a string over R (read) and W (write).

    The result contains exactly src_len R's and tgt_len W's; the number of
    R's preceding the t-th W equals g(t).  Source tokens never read before
    the final write are appended as trailing R's.
    """
    if src_len < 1 or tgt_len < 1:
        raise PolicyError(f"lengths must be >= 1, got src={src_len}, tgt={tgt_len}")
    out: list[str] = []
    read = 0
    prev = 0
    for t in range(1, tgt_len + 1):
        g_t = schedule.g(t, src_len)
        if g_t < prev:
            raise PolicyError(f"schedule not monotone at t={t}: g={g_t} after {prev}")
        out.append("R" * (g_t - read))
        out.append("W")
        read = g_t
        prev = g_t
    out.append("R" * (src_len - read))
    return "".join(out)
