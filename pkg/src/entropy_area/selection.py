"""Budgeted training-sample selection strategies.

Every strategy is deterministic: random selection derives a portable
per-id key from SHA-256 rather than platform RNG state, and all other
strategies break score ties by ascending sample_id. Each call yields a
manifest that pins the strategy, parameters, and a content hash of the
input pool, so a selection can be reproduced byte-for-byte later.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from fractions import Fraction

DEFAULT_BUDGET = 5000

STRATEGIES = ("random", "length", "pass_rate", "eas")


@dataclass
class ScoreRecord:
    """Per-sample metric row consumed by the selection strategies.

    Unknown input fields ride along in `extra` and survive a rewrite.
    """

    sample_id: str
    eas: "float | None" = None
    mean_eas: "float | None" = None
    ppl: "float | None" = None
    token_length: "int | None" = None
    pass_rate: "Fraction | None" = None
    extra: dict = field(default_factory=dict)

    _KNOWN = ("sample_id", "eas", "mean_eas", "ppl", "token_length",
              "pass_correct", "pass_rounds", "schema_version")

    @classmethod
    def from_json(cls, row: dict) -> "ScoreRecord":
        rate = None
        if row.get("pass_rounds"):
            rate = Fraction(int(row["pass_correct"]), int(row["pass_rounds"]))
        length = row.get("token_length")
        return cls(
            sample_id=str(row["sample_id"]),
            eas=row.get("eas"),
            mean_eas=row.get("mean_eas"),
            ppl=row.get("ppl"),
            token_length=int(length) if length is not None else None,
            pass_rate=rate,
            extra={k: v for k, v in row.items() if k not in cls._KNOWN},
        )

    def to_json(self) -> dict:
        row = dict(self.extra)
        row["sample_id"] = self.sample_id
        for key in ("eas", "mean_eas", "ppl", "token_length"):
            value = getattr(self, key)
            if value is not None:
                row[key] = value
        if self.pass_rate is not None:
            # the reduced fraction round-trips exactly
            row["pass_correct"] = self.pass_rate.numerator
            row["pass_rounds"] = self.pass_rate.denominator
        return row


@dataclass(frozen=True)
class SelectionManifest:
    """Reproducible record of one selection run."""

    strategy: str
    budget: int
    selected_ids: tuple[str, ...]
    parameters: dict
    pool_hash: str
    seed: "int | None" = None
    short: bool = False  # fewer eligible records than the budget

    def to_json(self) -> dict:
        row = {
            "schema_version": 1,
            "strategy": self.strategy,
            "budget": self.budget,
            "selected_ids": list(self.selected_ids),
            "parameters": self.parameters,
            "pool_hash": self.pool_hash,
            "short": self.short,
        }
        if self.seed is not None:
            row["seed"] = self.seed
        return row


def pool_content_hash(pool: "list[ScoreRecord]") -> str:
    """SHA-256 over the canonical serialization of the pool rows."""
    digest = hashlib.sha256()
    for record in pool:
        canonical = json.dumps(record.to_json(), sort_keys=True, separators=(",", ":"))
        digest.update(canonical.encode("utf-8"))
        digest.update(b"\n")
    return digest.hexdigest()


def compute_pass_rate(correct_flags: "list[bool]", rounds: int) -> Fraction:
    """Exact pass rate over a fixed number of rounds; with 4 rounds the
    only possible values are 0, 1/4, 1/2, 3/4, 1."""
    if rounds < 1:
        raise ValueError(f"rounds must be >= 1, got {rounds}")
    if len(correct_flags) != rounds:
        raise ValueError(f"{len(correct_flags)} flags for {rounds} rounds")
    return Fraction(sum(bool(f) for f in correct_flags), rounds)


def _check_budget(budget: int) -> None:
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")


def _check_unique(pool: "list[ScoreRecord]") -> None:
    seen = set()
    for record in pool:
        if record.sample_id in seen:
            raise ValueError(f"duplicate sample_id {record.sample_id!r} in pool")
        seen.add(record.sample_id)


def _random_key(seed: int, sample_id: str) -> str:
    return hashlib.sha256(f"{seed}:{sample_id}".encode("utf-8")).hexdigest()


def select_random(
    pool: "list[ScoreRecord]", budget: int = DEFAULT_BUDGET, seed: int = 0
) -> SelectionManifest:
    """Uniform sample without replacement, in draw order.

    Each id is ranked by a counter-style SHA-256 key of (seed, id), so
    the same pool and seed select the same ids on any platform.
    """
    _check_budget(budget)
    _check_unique(pool)
    ranked = sorted(pool, key=lambda r: (_random_key(seed, r.sample_id), r.sample_id))
    chosen = ranked[:budget]
    return SelectionManifest(
        strategy="random",
        budget=budget,
        selected_ids=tuple(r.sample_id for r in chosen),
        parameters={"key": "sha256(seed:sample_id)"},
        pool_hash=pool_content_hash(pool),
        seed=seed,
        short=len(chosen) < budget,
    )


def select_by_length(
    pool: "list[ScoreRecord]", budget: int = DEFAULT_BUDGET
) -> SelectionManifest:
    """Longest responses first; ties broken by ascending sample_id.
    Records without a token length are excluded and reported."""
    _check_budget(budget)
    _check_unique(pool)
    eligible = [r for r in pool if r.token_length is not None]
    excluded = sorted(r.sample_id for r in pool if r.token_length is None)
    eligible.sort(key=lambda r: (-r.token_length, r.sample_id))
    chosen = eligible[:budget]
    return SelectionManifest(
        strategy="length",
        budget=budget,
        selected_ids=tuple(r.sample_id for r in chosen),
        parameters={"order": "token_length descending",
                    "excluded_missing_length": excluded},
        pool_hash=pool_content_hash(pool),
        short=len(chosen) < budget,
    )


def select_by_pass_rate(
    pool: "list[ScoreRecord]", budget: int = DEFAULT_BUDGET, rounds: int = 4
) -> SelectionManifest:
    """Hardest still-solvable questions first: drop pass rates 0 and 1,
    then order by ascending pass rate, ties by ascending sample_id."""
    _check_budget(budget)
    _check_unique(pool)
    if rounds < 1:
        raise ValueError(f"rounds must be >= 1, got {rounds}")
    excluded_missing = []
    eligible = []
    for record in pool:
        rate = record.pass_rate
        if rate is None:
            excluded_missing.append(record.sample_id)
            continue
        if (rate * rounds).denominator != 1:
            raise ValueError(
                f"pass rate {rate} of {record.sample_id!r} is not a multiple "
                f"of 1/{rounds}"
            )
        if rate != 0 and rate != 1:
            eligible.append(record)
    eligible.sort(key=lambda r: (r.pass_rate, r.sample_id))
    chosen = eligible[:budget]
    return SelectionManifest(
        strategy="pass_rate",
        budget=budget,
        selected_ids=tuple(r.sample_id for r in chosen),
        parameters={"rounds": rounds, "order": "pass_rate ascending",
                    "excluded_missing_rate": sorted(excluded_missing)},
        pool_hash=pool_content_hash(pool),
        short=len(chosen) < budget,
    )


def select_by_eas(
    pool: "list[ScoreRecord]", budget: int = DEFAULT_BUDGET
) -> SelectionManifest:
    """Highest entropy area first; ties broken by ascending sample_id."""
    _check_budget(budget)
    _check_unique(pool)
    eligible = [r for r in pool if r.eas is not None]
    excluded = sorted(r.sample_id for r in pool if r.eas is None)
    eligible.sort(key=lambda r: (-r.eas, r.sample_id))
    chosen = eligible[:budget]
    return SelectionManifest(
        strategy="eas",
        budget=budget,
        selected_ids=tuple(r.sample_id for r in chosen),
        parameters={"order": "eas descending",
                    "excluded_missing_eas": excluded},
        pool_hash=pool_content_hash(pool),
        short=len(chosen) < budget,
    )


def apply_length_cap(
    pool: "list[ScoreRecord]", max_tokens: int
) -> "tuple[list[ScoreRecord], list[str]]":
    """Optional pre-filter: keep records at or under the token cap.
    Returns (kept, excluded ids); records without a length are excluded
    because the cap cannot be checked."""
    if max_tokens < 1:
        raise ValueError(f"max_tokens must be >= 1, got {max_tokens}")
    kept, excluded = [], []
    for record in pool:
        if record.token_length is not None and record.token_length <= max_tokens:
            kept.append(record)
        else:
            excluded.append(record.sample_id)
    return kept, sorted(excluded)
