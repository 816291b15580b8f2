"""Deterministic synthetic probe backend and corpus generator.

Three behavioral archetypes cover the qualitative trajectory shapes seen
in real reasoning traces: `early_lockin` commits to one option almost
immediately, `mid_reversal` switches leaders near the midpoint, and
`persistent_tie` never separates the options. Their entropy areas are
ordered early_lockin < mid_reversal < persistent_tie by construction for
matched lengths, which makes them useful as pipeline ground truth.

All randomness is derived per (profile, position) from hashed string
seeds, so any position can be served independently, in any order, on any
platform, with identical results.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from .client import (
    DEFAULT_VOCAB_SIZE,
    MalformedResponse,
    ProbeRequest,
    PromptProbeRequest,
    _stride_positions,
)
from .metrics import BOXED_OPENER, TokenDistribution

ARCHETYPES = ("early_lockin", "mid_reversal", "persistent_tie")

# degenerate profiles used for protocol-level tests
SIMPLE_ARCHETYPES = ("point_mass", "uniform")

OPTION_LABELS = "ABCDEFGH"

LOCKIN_TARGET = 0.97     # lead probability the lockin archetype ramps to
REVERSAL_LEAD = 0.80     # steady-state lead probability around a reversal


@dataclass(frozen=True)
class SyntheticProfile:
    archetype: str
    length: int  # number of probe positions, i.e. T - 1
    seed: int
    option_count: int = 4

    def __post_init__(self) -> None:
        if self.archetype not in ARCHETYPES + SIMPLE_ARCHETYPES:
            raise ValueError(f"unknown archetype {self.archetype!r}")
        if self.length < 2:
            raise ValueError(f"length must be >= 2, got {self.length}")
        if not 2 <= self.option_count <= len(OPTION_LABELS):
            raise ValueError(
                f"option_count must be in [2, {len(OPTION_LABELS)}], "
                f"got {self.option_count}"
            )

    @property
    def options(self) -> tuple:
        return tuple(OPTION_LABELS[: self.option_count])


def _rng(profile: SyntheticProfile, stream: str, t: int = 0) -> random.Random:
    # str seeds hash through sha512 inside random.Random: stable everywhere
    return random.Random(
        f"{profile.archetype}:{profile.seed}:{profile.option_count}:{stream}:{t}"
    )


def _leaders(profile: SyntheticProfile) -> "tuple[int, int]":
    """(first-half leader, second-half leader); equal except for reversals."""
    rng = _rng(profile, "lead")
    first = rng.randrange(profile.option_count)
    if profile.archetype != "mid_reversal":
        return first, first
    second = (first + 1 + rng.randrange(profile.option_count - 1)) % profile.option_count
    return first, second


def _zero_sum_jitter(rng: random.Random, count: int, amplitude: float) -> list:
    js = [rng.uniform(-amplitude, amplitude) for _ in range(count)]
    mean = sum(js) / count
    return [j - mean for j in js]


def _option_probs(profile: SyntheticProfile, t: int) -> "list[float]":
    m = profile.option_count
    u = 1.0 / m
    lead1, lead2 = _leaders(profile)

    if profile.archetype == "point_mass":
        return [1.0 if j == lead1 else 0.0 for j in range(m)]

    if profile.archetype == "uniform":
        return [u] * m

    if profile.archetype == "persistent_tie":
        jitter = _zero_sum_jitter(_rng(profile, "tie", t), m, 0.02)
        return [u + jitter[j] for j in range(m)]

    if profile.archetype == "early_lockin":
        ramp = max(1, math.ceil(0.10 * profile.length))
        progress = min(1.0, t / ramp)
        rng = _rng(profile, "lock", t)
        p_lead = u + (LOCKIN_TARGET - u) * progress + rng.uniform(-0.004, 0.004)
        if t >= ramp:
            p_lead = min(0.985, max(0.955, p_lead))  # locked-in floor
        else:
            p_lead = min(0.985, max(0.05, p_lead))
        weights = [1.0 + rng.uniform(-0.2, 0.2) for _ in range(m - 1)]
        scale = (1.0 - p_lead) / sum(weights)
        probs = []
        w = iter(weights)
        for j in range(m):
            probs.append(p_lead if j == lead1 else next(w) * scale)
        return probs

    # mid_reversal: linear handoff from lead1 to lead2 around the midpoint
    base = (1.0 - REVERSAL_LEAD) / (m - 1)
    center = (profile.length + 1) / 2.0
    width = max(1.0, 0.08 * profile.length)
    x = max(-1.0, min(1.0, (t - center) / width))
    w = (x + 1.0) / 2.0
    probs = [base] * m
    probs[lead1] = base + (REVERSAL_LEAD - base) * (1.0 - w)
    probs[lead2] = base + (REVERSAL_LEAD - base) * w
    jitter = _zero_sum_jitter(_rng(profile, "rev", t), m, 0.01)
    return [max(0.0, p + j) for p, j in zip(probs, jitter)]


def synthetic_distribution(
    profile: SyntheticProfile, t: int, vocab_size: int = DEFAULT_VOCAB_SIZE
) -> TokenDistribution:
    """Probe distribution the synthetic model reports at position t."""
    if not 1 <= t <= profile.length:
        raise ValueError(f"position {t} outside [1, {profile.length}]")
    probs = _option_probs(profile, t)
    return TokenDistribution.from_probs(
        list(zip(profile.options, probs)), vocab_size
    )


def final_answer(profile: SyntheticProfile) -> str:
    """Option the synthetic model settles on: the leader of the last step."""
    dist = synthetic_distribution(profile, profile.length)
    return dist.entries[0][0]


def draw_answer(profile: SyntheticProfile, rng: random.Random) -> str:
    """One sampled answer from the final-step option distribution."""
    dist = synthetic_distribution(profile, profile.length)
    total = sum(p for _, p in dist.entries)
    roll = rng.random() * total
    acc = 0.0
    for token, p in dist.entries:
        acc += p
        if roll <= acc:
            return token
    return dist.entries[-1][0]


class SyntheticBackend:
    """Drop-in probe backend serving archetype profiles instead of HTTP."""

    def __init__(
        self,
        profiles: "dict[str, SyntheticProfile]",
        vocab_size: int = DEFAULT_VOCAB_SIZE,
        max_in_flight: int = 4,
    ):
        self._profiles = dict(profiles)
        self.vocab_size = vocab_size
        self.max_in_flight = max_in_flight

    def _profile(self, sample_id: str) -> SyntheticProfile:
        try:
            return self._profiles[sample_id]
        except KeyError:
            raise MalformedResponse(f"no synthetic profile for {sample_id!r}")

    def fetch_position(self, request: ProbeRequest) -> TokenDistribution:
        profile = self._profile(request.sample_id)
        return synthetic_distribution(profile, request.position, self.vocab_size)

    def fetch_prompt_positions(
        self, request: PromptProbeRequest
    ) -> "tuple[int, list[tuple[int, TokenDistribution]]]":
        profile = self._profile(request.sample_id)
        t_total = profile.length + 1
        pairs = [
            (t, synthetic_distribution(profile, t, self.vocab_size))
            for t in _stride_positions(t_total, request.stride)
        ]
        return t_total, pairs


# archetype-dependent mean token logprob, so perplexity tracks uncertainty
_BASE_LOGPROB = {"early_lockin": -0.7, "mid_reversal": -0.9, "persistent_tie": -1.1}


def _build_sample_rows(
    archetype: str, index: int, *, seed: int, min_length: int, max_length: int,
    option_count: int, draws: int, rounds: int,
) -> "tuple[dict, dict]":
    rng = random.Random(f"corpus:{seed}:{archetype}:{index}")
    length = rng.randint(min_length, max_length)
    profile = SyntheticProfile(
        archetype, length, seed=rng.randrange(2**31), option_count=option_count
    )
    sample_id = f"{archetype}-{index:04d}"

    if archetype == "persistent_tie":
        truth = rng.choice(profile.options)
        emitted = draw_answer(profile, rng)
    else:
        truth = final_answer(profile)
        emitted = truth

    tokens = [f"w{j} " for j in range(1, length)] + [BOXED_OPENER, emitted, "}"]
    text = "".join(tokens)
    base_lp = _BASE_LOGPROB[archetype]
    token_logprobs = [
        min(-0.01, rng.gauss(base_lp, 0.25)) for _ in range(len(tokens))
    ]

    round_answers = [draw_answer(profile, rng) for _ in range(rounds)]
    answers = [draw_answer(profile, rng) for _ in range(draws)]

    corpus_row = {
        "schema_version": 1,
        "sample_id": sample_id,
        "prompt": f"Synthetic question {sample_id}",
        "generated_text": text,
        "answer_text": truth,
        "options": list(profile.options),
        "tokens": tokens,
        "token_logprobs": token_logprobs,
        "answers_per_round": round_answers,
        "correct_per_round": [a == truth for a in round_answers],
        "synthetic": {
            "archetype": archetype,
            "length": length,
            "seed": profile.seed,
            "option_count": option_count,
        },
    }
    answers_row = {
        "schema_version": 1,
        "sample_id": sample_id,
        "answers": answers,
        "correct_flags": [a == truth for a in answers],
    }
    return corpus_row, answers_row


def generate_synthetic_corpus(
    *,
    samples_per_archetype: int = 20,
    min_length: int = 50,
    max_length: int = 64,
    option_count: int = 4,
    draws: int = 64,
    rounds: int = 4,
    seed: int = 0,
) -> "tuple[list[dict], list[dict]]":
    """Corpus and answer-draw rows for all three archetypes.

    Deterministic for a given seed: the same arguments produce the same
    rows byte for byte.
    """
    if samples_per_archetype < 1:
        raise ValueError("samples_per_archetype must be >= 1")
    if not 2 <= min_length <= max_length:
        raise ValueError(f"bad length range [{min_length}, {max_length}]")
    corpus_rows, answer_rows = [], []
    for archetype in ARCHETYPES:
        for index in range(samples_per_archetype):
            corpus_row, answers_row = _build_sample_rows(
                archetype, index, seed=seed, min_length=min_length,
                max_length=max_length, option_count=option_count,
                draws=draws, rounds=rounds,
            )
            corpus_rows.append(corpus_row)
            answer_rows.append(answers_row)
    return corpus_rows, answer_rows


def backend_from_corpus(rows: "list[dict]", **kwargs) -> SyntheticBackend:
    """Rebuild the serving profiles from corpus rows that carry them."""
    profiles = {}
    for row in rows:
        meta = row.get("synthetic")
        if not meta:
            continue
        profiles[row["sample_id"]] = SyntheticProfile(
            meta["archetype"], meta["length"], meta["seed"],
            meta.get("option_count", 4),
        )
    return SyntheticBackend(profiles, **kwargs)
