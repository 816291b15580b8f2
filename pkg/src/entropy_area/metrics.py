"""Token-entropy uncertainty metrics for generated sequences.

All entropies are reported in bits (log base 2); perplexity uses the
natural base. The 0 * log2(0) term is taken as 0 throughout.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction

SUM_TOLERANCE = 1e-9
EPSILON_FLOOR = 1e-12

BOXED_OPENER = "\\boxed{"

PROBE_MODES = ("exact_suffix", "fast_prompt")


def _entr2(p: float) -> float:
    """Single term -p*log2(p), with the 0*log(0) = 0 convention."""
    return -p * math.log2(p) if p > 0.0 else 0.0


@dataclass(frozen=True)
class TokenDistribution:
    """Top-k slice of a next-token distribution plus the residual tail mass.

    `entries` holds (token, probability) pairs sorted by probability,
    largest first. `epsilon` is the mass left outside the retained slice,
    1 - sum(p_i), clamped at zero against rounding.
    """

    entries: tuple[tuple[str, float], ...]
    vocab_size: int
    epsilon: float

    def __post_init__(self) -> None:
        if self.vocab_size < 1:
            raise ValueError(f"vocab_size must be >= 1, got {self.vocab_size}")
        if len(self.entries) > self.vocab_size:
            raise ValueError(
                f"{len(self.entries)} entries exceed vocab_size {self.vocab_size}"
            )
        total = math.fsum(p for _, p in self.entries)
        if total > 1.0 + SUM_TOLERANCE:
            raise ValueError(f"retained probability mass {total} exceeds 1")
        prev = 1.0
        for token, p in self.entries:
            if not isinstance(token, str):
                raise ValueError(f"token must be str, got {type(token).__name__}")
            if p < 0.0 or p > 1.0:
                raise ValueError(f"probability {p} for {token!r} outside [0, 1]")
            if p > prev + 1e-12:
                raise ValueError("entries must be sorted by descending probability")
            prev = p
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon {self.epsilon} outside [0, 1]")
        if abs(self.epsilon - max(0.0, 1.0 - total)) > SUM_TOLERANCE:
            raise ValueError(
                f"epsilon {self.epsilon} inconsistent with retained mass {total}"
            )

    @property
    def k(self) -> int:
        return len(self.entries)

    @classmethod
    def from_probs(
        cls, pairs: "list[tuple[str, float]] | dict[str, float]", vocab_size: int
    ) -> "TokenDistribution":
        """Build from unordered (token, probability) pairs; drops exact zeros."""
        items = list(pairs.items()) if isinstance(pairs, dict) else list(pairs)
        kept = [(t, float(p)) for t, p in items if p != 0.0]
        kept.sort(key=lambda tp: (-tp[1], tp[0]))
        mass = math.fsum(p for _, p in kept)
        return cls(tuple(kept), vocab_size, max(0.0, 1.0 - mass))

    @classmethod
    def from_logprobs(
        cls, pairs: "list[tuple[str, float]] | dict[str, float]", vocab_size: int
    ) -> "TokenDistribution":
        """Build from (token, log probability) pairs as served by an endpoint."""
        items = list(pairs.items()) if isinstance(pairs, dict) else list(pairs)
        return cls.from_probs([(t, math.exp(lp)) for t, lp in items], vocab_size)

    def probability_of(self, token: str) -> float:
        """Retained probability of `token`, summed over exact and
        leading-space spellings; 0.0 when absent from the slice."""
        return math.fsum(
            p for t, p in self.entries if t == token or t == " " + token
        )


def shannon_entropy(dist: TokenDistribution) -> float:
    """H = -sum_i p_i log2 p_i over the retained entries, in bits.

    The tail mass `epsilon` contributes nothing here; see
    `truncation_error_bound` for the worst-case size of what is missing.
    """
    total = math.fsum(p for _, p in dist.entries)
    if total > 1.0 + SUM_TOLERANCE:
        raise ValueError(f"probability mass {total} exceeds 1")
    for _, p in dist.entries:
        if p < 0.0:
            raise ValueError(f"negative probability {p}")
    return math.fsum(_entr2(p) for _, p in dist.entries)


def truncation_error_bound(epsilon: float, vocab_size: int, k: int) -> float:
    """Worst-case entropy missed by keeping only the top k of `vocab_size`
    tokens: epsilon * log2((V - K) / epsilon) bits.

    The maximum is attained when the unretained mass epsilon is spread
    uniformly over the remaining V - K tokens. epsilon below 1e-12 is
    clamped to 1e-12 to keep the logarithm finite; epsilon == 0 returns 0.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon {epsilon} outside [0, 1]")
    if k >= vocab_size:
        raise ValueError(f"k {k} must be smaller than vocab_size {vocab_size}")
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    if epsilon == 0.0:
        return 0.0
    eps = max(epsilon, EPSILON_FLOOR)
    return eps * math.log2((vocab_size - k) / eps)


@dataclass(frozen=True)
class EntropyTrace:
    """Per-position token entropies H_t for one generated sample.

    Positions run t = 1 .. T-1 where T indexes the final answer token; a
    stride s > 1 means only every s-th position was probed (the last
    position T-1 is always included by the harvester).
    """

    sample_id: str
    entropies: tuple[float, ...]
    probe_mode: str = "exact_suffix"
    stride: int = 1
    k_used: int = 20
    vocab_size: "int | None" = None

    def __post_init__(self) -> None:
        if self.probe_mode not in PROBE_MODES:
            raise ValueError(f"unknown probe mode {self.probe_mode!r}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        cap = math.log2(self.vocab_size) if self.vocab_size else None
        for h in self.entropies:
            if h < 0.0 or math.isnan(h):
                raise ValueError(f"entropy {h} must be non-negative")
            if cap is not None and h > cap + 1e-9:
                raise ValueError(f"entropy {h} exceeds log2(vocab_size) = {cap}")

    @property
    def position_count(self) -> int:
        """Number of positions actually probed."""
        return len(self.entropies)

    @property
    def covered_positions(self) -> int:
        """Number of generation positions the trace stands in for
        (stride * probed count; equals probed count at stride 1)."""
        return self.stride * len(self.entropies)


def eas(trace: EntropyTrace) -> float:
    """Entropy area score: the area under the per-position entropy curve.

    EAS = sum_{t=1}^{T-1} H_t at stride 1. With stride s > 1 the sampled
    sum is scaled by s, a left-Riemann estimate of the full-stride area.
    Empty traces score 0.
    """
    return float(trace.stride) * math.fsum(trace.entropies)


def mean_eas(trace: EntropyTrace) -> float:
    """Average per-position entropy: sum of sampled H_t over sampled count.

    mean_eas(trace) * trace.covered_positions == eas(trace); at stride 1
    covered_positions is just the number of probed positions.
    """
    if not trace.entropies:
        raise ValueError("mean_eas undefined for an empty trace")
    return math.fsum(trace.entropies) / len(trace.entropies)


@dataclass(frozen=True)
class TokenLogprobSeries:
    """Natural-log probabilities of each generated token in one sample."""

    sample_id: str
    logprobs: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.logprobs:
            raise ValueError("logprob series must hold at least one token")
        for lp in self.logprobs:
            if lp > 0.0 or math.isnan(lp):
                raise ValueError(f"logprob {lp} must be <= 0")

    @property
    def length(self) -> int:
        return len(self.logprobs)


def perplexity(series: TokenLogprobSeries) -> float:
    """PPL = exp(-(1/|S|) * sum_i ln P(x_i | x_<i)), natural base."""
    return math.exp(-math.fsum(series.logprobs) / series.length)


def response_length(series: TokenLogprobSeries) -> int:
    """Token count |S| of the generated sequence."""
    return series.length


@dataclass(frozen=True)
class AnswerSample:
    """Final answers from N repeated generations of one question.

    Answers are expected in canonical form (see `canonicalize_answer`);
    `correct_flags[i]` marks whether answer i matched the ground truth.
    """

    question_id: str
    answers: tuple[str, ...]
    correct_flags: tuple[bool, ...]

    def __post_init__(self) -> None:
        if not self.answers:
            raise ValueError("answer sample must hold at least one answer")
        if len(self.answers) != len(self.correct_flags):
            raise ValueError(
                f"{len(self.answers)} answers vs {len(self.correct_flags)} flags"
            )

    @property
    def n(self) -> int:
        return len(self.answers)

    @classmethod
    def from_raw(
        cls,
        question_id: str,
        answers: "list[str]",
        correct_flags: "list[bool]",
    ) -> "AnswerSample":
        return cls(
            question_id,
            tuple(canonicalize_answer(a) for a in answers),
            tuple(bool(f) for f in correct_flags),
        )


def canonicalize_answer(text: str) -> str:
    """Normalize an extracted answer string for equality comparison.

    Strips surrounding whitespace and a leftover boxed wrapper, then
    normalizes parseable numerics to an exact rational form so that
    "0.5", "1/2", and "2/4" compare equal. Everything else is compared
    case-sensitively as-is.
    """
    s = text.strip()
    if s.startswith(BOXED_OPENER) and s.endswith("}"):
        s = s[len(BOXED_OPENER):-1].strip()
    elif s.endswith("}") and s.count("}") > s.count("{"):
        # dangling closer cut from a boxed span
        s = s[:-1].strip()
    try:
        return str(Fraction(s))
    except (ValueError, ZeroDivisionError):
        return s


def answer_entropy(sample: AnswerSample) -> float:
    """Entropy of the empirical answer distribution, in bits.

    H = -sum_k (n_k / N) log2(n_k / N) over the unique answers; 0 when
    every repeat produced the same answer, log2(N) when all N differ.
    """
    n = sample.n
    counts = Counter(sample.answers)
    return math.fsum(_entr2(c / n) for c in counts.values())


def correctness_entropy(n_correct: int, n_total: int) -> float:
    """Binary entropy of the empirical correctness rate p = n_correct / N."""
    if n_total < 1:
        raise ValueError(f"n_total must be >= 1, got {n_total}")
    if n_correct < 0 or n_correct > n_total:
        raise ValueError(f"n_correct {n_correct} outside [0, {n_total}]")
    p = n_correct / n_total
    return _entr2(p) + _entr2(1.0 - p)
