"""Option-preference trajectories over probe positions.

Raw per-step option probabilities are turned into cumulative or
recency-decayed preference curves, and samples are grouped into
answer-entropy buckets for reporting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_ALPHA = 0.5

CROSSING_METHOD = "lead-changes"


@dataclass(frozen=True)
class OptionSeries:
    """Per-step probabilities of each candidate option for one sample.

    `probs[t][j]` is the probe-measured probability of option j at step
    t (steps in generation order). Rows need not sum to 1; mass outside
    the option set simply goes unassigned.
    """

    options: tuple[str, ...]
    probs: tuple[tuple[float, ...], ...]
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self) -> None:
        if not self.options:
            raise ValueError("option series needs at least one option")
        if self.alpha < 0.0 or math.isnan(self.alpha):
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        width = len(self.options)
        for i, row in enumerate(self.probs):
            if len(row) != width:
                raise ValueError(f"row {i} has {len(row)} entries, expected {width}")
            total = math.fsum(row)
            if total > 1.0 + 1e-9:
                raise ValueError(f"row {i} probability mass {total} exceeds 1")
            for p in row:
                if p < 0.0 or p > 1.0:
                    raise ValueError(f"row {i} probability {p} outside [0, 1]")

    @property
    def steps(self) -> int:
        return len(self.probs)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=float).reshape(
            len(self.probs), len(self.options)
        )


def cumulative_option_probs(series: OptionSeries) -> np.ndarray:
    """Running preference mass per option: C_t(v) = sum_{k<=t} P_k(v).

    Shape (steps, options); row t is monotone non-decreasing in t.
    """
    return np.cumsum(series.as_array(), axis=0)


def decayed_cumulative_option_probs(series: OptionSeries) -> np.ndarray:
    """Recency-weighted preference mass per option:

        P~_t(v) = sum_{k<=t} P_k(v) / (t - k + 1)^alpha

    alpha = 0 reduces to the plain cumulative sum (returned directly so
    the equality is exact); large alpha recovers the raw rows, since the
    k = t term always has weight exactly 1.
    """
    if series.alpha == 0.0:
        return cumulative_option_probs(series)
    arr = series.as_array()
    steps = arr.shape[0]
    if steps == 0:
        return arr.copy()
    gaps = np.arange(1, steps + 1, dtype=float)
    # weight by gap g = t - k + 1, computed in log space: exp(-alpha ln g)
    weights = np.exp(-series.alpha * np.log(gaps))
    out = np.empty_like(arr)
    for j in range(arr.shape[1]):
        out[:, j] = np.convolve(arr[:, j], weights)[:steps]
    return out


@dataclass(frozen=True)
class EntropyBucket:
    """Labeled answer-entropy band; `upper` is +inf for the open top band."""

    label: str
    lower: float
    upper: float

    def contains(self, h: float) -> bool:
        if self.label == "low":
            return self.lower <= h < self.upper
        if self.label == "medium":
            return self.lower <= h <= self.upper
        return self.lower < h <= self.upper


LOW_BUCKET = EntropyBucket("low", 0.0, 0.5)
MEDIUM_BUCKET = EntropyBucket("medium", 0.5, 1.5)
HIGH_BUCKET = EntropyBucket("high", 1.5, math.inf)

BUCKETS = (LOW_BUCKET, MEDIUM_BUCKET, HIGH_BUCKET)


def bucket_by_answer_entropy(answer_entropy_bits: float) -> EntropyBucket:
    """Band for an answer entropy value: low [0, 0.5), medium [0.5, 1.5],
    high (1.5, inf). Every non-negative value lands in exactly one band."""
    h = answer_entropy_bits
    if h < 0.0 or math.isnan(h):
        raise ValueError(f"answer entropy must be >= 0, got {h}")
    for bucket in BUCKETS:
        if bucket.contains(h):
            return bucket
    raise ValueError(f"answer entropy {h} fits no bucket")  # unreachable


def crossing_count(series: OptionSeries, curves: np.ndarray) -> int:
    """Number of lead changes along the given preference curves.

    The leader at each step is the option with the largest curve value;
    an exact tie keeps the previous leader when it is among the tied
    (first option index otherwise), so the count is deterministic.
    Single-step series have no adjacent steps and count 0.
    """
    curves = np.asarray(curves, dtype=float)
    if curves.ndim != 2 or curves.shape != (series.steps, len(series.options)):
        raise ValueError(
            f"curves shape {curves.shape} does not match series "
            f"({series.steps} steps x {len(series.options)} options)"
        )
    if curves.shape[0] < 2:
        return 0
    changes = 0
    leader = int(np.argmax(curves[0]))
    for row in curves[1:]:
        best = row.max()
        tied = np.flatnonzero(row == best)
        nxt = leader if leader in tied else int(tied[0])
        if nxt != leader:
            changes += 1
            leader = nxt
    return changes
