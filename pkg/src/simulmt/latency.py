"""Latency metrics over decoding traces: CW, AP, and AL.

All three read nothing but the realised read/write trace, and all are
computed in exact rational arithmetic (fractions.Fraction) so that corpus
aggregation is independent of summation order and the closed-form
identities hold exactly:

* consecutive wait   CW = src_len / #{t : g(t) > g(t-1)}       (g(0) = 0)
* average proportion AP = sum_t g(t) / (src_len * tgt_len)
* average lagging    AL = (1/tau) * sum_{t<=tau} (g(t) - (t-1)/r)

where tau is the first step at which the whole source has been read and
r is the target/source length ratio.  A trace that stops before reading
the whole source (early end-of-sentence) has no such step; AL then runs
to tgt_len and the report is flagged ``incomplete_read``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Optional, Sequence

from .errors import PolicyError
from .policy import PolicySchedule, Rational, as_fraction, schedule_to_actions


@dataclass(frozen=True)
class DecodingTrace:
    """The realised read/write history of one decoded sentence.

    ``g_values[t-1]`` is the number of source tokens read before target
    token t was emitted.  ``ends_with_eos`` marks the final step as an
    end-of-sentence emission so metrics can also be recomputed without it.
    """

    src_len: int
    tgt_len: int
    g_values: tuple[int, ...]
    ends_with_eos: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "g_values", tuple(int(g) for g in self.g_values))
        if self.src_len < 1 or self.tgt_len < 1:
            raise PolicyError(
                f"trace lengths must be >= 1, got src={self.src_len}, tgt={self.tgt_len}"
            )
        if len(self.g_values) != self.tgt_len:
            raise PolicyError(
                f"trace has {len(self.g_values)} g values for tgt_len={self.tgt_len}"
            )
        prev = 0
        for t, g in enumerate(self.g_values, start=1):
            if g < prev or g < 0 or g > self.src_len:
                raise PolicyError(f"invalid g({t})={g} (prev={prev}, src_len={self.src_len})")
            prev = g

    @classmethod
    def from_schedule(
        cls,
        schedule: PolicySchedule,
        src_len: int,
        tgt_len: int,
        ends_with_eos: bool = False,
    ) -> "DecodingTrace":
        return cls(src_len, tgt_len, tuple(schedule.g_values(src_len, tgt_len)), ends_with_eos)

    @classmethod
    def from_actions(cls, actions: str, ends_with_eos: bool = False) -> "DecodingTrace":
        return cls(
            actions.count("R"),
            actions.count("W"),
            tuple(g_values_from_actions(actions)),
            ends_with_eos,
        )

    @property
    def actions(self) -> str:
        out: list[str] = []
        read = 0
        for g in self.g_values:
            out.append("R" * (g - read))
            out.append("W")
            read = g
        out.append("R" * (self.src_len - read))
        return "".join(out)

    @property
    def incomplete_read(self) -> bool:
        return self.g_values[-1] < self.src_len

    def without_final_step(self) -> Optional["DecodingTrace"]:
        """The trace minus its last emission, or None if that empties it."""
        if self.tgt_len == 1:
            return None
        return DecodingTrace(self.src_len, self.tgt_len - 1, self.g_values[:-1], False)


def g_values_from_actions(actions: str) -> list[int]:
    """Inverse of schedule serialization: reads-before-write counts."""
    values: list[int] = []
    read = 0
    for ch in actions:
        if ch == "R":
            read += 1
        elif ch == "W":
            values.append(read)
        else:
            raise PolicyError(f"action string contains invalid character {ch!r}")
    return values


def trace_from_schedule(
    schedule: PolicySchedule, src_len: int, tgt_len: int
) -> DecodingTrace:
    """Round-trip helper: schedule -> action string -> trace."""
    return DecodingTrace.from_actions(schedule_to_actions(schedule, src_len, tgt_len))


def consecutive_wait(trace: DecodingTrace) -> Fraction:
    """Average source segment length between emissions: src_len / #read-steps."""
    prev = 0
    positive = 0
    for g in trace.g_values:
        if g > prev:
            positive += 1
        prev = g
    if positive == 0:
        raise PolicyError("degenerate trace: no step reads any source")
    return Fraction(trace.src_len, positive)


def average_proportion(trace: DecodingTrace) -> Fraction:
    """Normalized area under the read curve: sum g(t) / (|x| |y|)."""
    return Fraction(sum(trace.g_values), trace.src_len * trace.tgt_len)


def cutoff_of(trace: DecodingTrace) -> int:
    """First step with everything read, or tgt_len if the trace never gets there."""
    for t, g in enumerate(trace.g_values, start=1):
        if g == trace.src_len:
            return t
    return trace.tgt_len


def average_lagging(trace: DecodingTrace, r: Rational) -> Fraction:
    """Mean lag in source tokens behind the in-sync policy, up to the cutoff."""
    r = as_fraction(r)
    if r <= 0:
        raise PolicyError(f"length ratio r must be positive, got {r}")
    tau = cutoff_of(trace)
    total = Fraction(0)
    for t in range(1, tau + 1):
        total += trace.g_values[t - 1] - Fraction(t - 1, 1) / r
    return total / tau


class RMode(Enum):
    PER_SENTENCE = "per-sentence"
    CORPUS = "corpus"


@dataclass(frozen=True)
class LatencyReport:
    """CW/AP/AL values for one trace or averaged over a corpus.

    ``al`` counts every emission step including a final end-of-sentence
    token; ``al_excl_eos`` drops that step where the trace marks one, so
    both conventions stay available.  ``tgt_len_excl_eos`` carries the
    matching length.  ``r`` is the target/source ratio used for ``al``.
    """

    cw: Fraction
    ap: Fraction
    al: Fraction
    r: Fraction
    incomplete_read: bool = False
    al_excl_eos: Optional[Fraction] = None
    tgt_len_excl_eos: Optional[int] = None

    def as_floats(self) -> dict[str, float]:
        out = {"cw": float(self.cw), "ap": float(self.ap), "al": float(self.al), "r": float(self.r)}
        if self.al_excl_eos is not None:
            out["al_excl_eos"] = float(self.al_excl_eos)
        return out


def latency_report(trace: DecodingTrace, r: Optional[Rational] = None) -> LatencyReport:
    """Per-sentence report; r defaults to the trace's own tgt/src ratio."""
    ratio = as_fraction(r) if r is not None else Fraction(trace.tgt_len, trace.src_len)
    al_excl = None
    len_excl = None
    if trace.ends_with_eos:
        len_excl = trace.tgt_len - 1
        trimmed = trace.without_final_step()
        if trimmed is not None:
            ratio_excl = as_fraction(r) if r is not None else Fraction(trimmed.tgt_len, trimmed.src_len)
            al_excl = average_lagging(trimmed, ratio_excl)
    return LatencyReport(
        cw=consecutive_wait(trace),
        ap=average_proportion(trace),
        al=average_lagging(trace, ratio),
        r=ratio,
        incomplete_read=trace.incomplete_read,
        al_excl_eos=al_excl,
        tgt_len_excl_eos=len_excl,
    )


def corpus_latency(
    traces: Sequence[DecodingTrace], r_mode: RMode = RMode.PER_SENTENCE
) -> LatencyReport:
    """Arithmetic mean of per-sentence metrics over a corpus.

    PER_SENTENCE uses each trace's own tgt/src ratio for AL; CORPUS uses
    the pooled token ratio for every sentence.  Aggregation is exact, so
    the result does not depend on how the traces are ordered or chunked.
    """
    traces = list(traces)
    if not traces:
        raise PolicyError("corpus_latency needs at least one trace")
    corpus_r = Fraction(sum(t.tgt_len for t in traces), sum(t.src_len for t in traces))
    shared_r = corpus_r if r_mode is RMode.CORPUS else None
    reports = [latency_report(t, shared_r) for t in traces]
    n = len(reports)

    def mean(xs):
        return sum(xs, Fraction(0)) / n

    have_excl = [rep.al_excl_eos for rep in reports if rep.al_excl_eos is not None]
    return LatencyReport(
        cw=mean([rep.cw for rep in reports]),
        ap=mean([rep.ap for rep in reports]),
        al=mean([rep.al for rep in reports]),
        r=corpus_r,
        incomplete_read=any(rep.incomplete_read for rep in reports),
        al_excl_eos=(sum(have_excl, Fraction(0)) / len(have_excl)) if have_excl else None,
        tgt_len_excl_eos=None,
    )
