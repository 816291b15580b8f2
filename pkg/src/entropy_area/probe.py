"""Probe-context construction around the final boxed answer.

A probe at position t asks the model what it would answer if forced to
stop reasoning now: the context is the first t generated tokens, the
literal ``\\boxed{`` opener, and all but the last token of the
ground-truth answer, so the probed distribution targets the answer's
final token.
"""

from __future__ import annotations

import bisect
import json
import re
from dataclasses import dataclass

from .metrics import BOXED_OPENER


class AnswerNotFound(ValueError):
    """No boxed answer span could be located in the generated text."""


def tokenize_text(text: str) -> tuple[str, ...]:
    """Split text into whitespace-delimited pieces whose concatenation
    reproduces the input exactly (each piece keeps its trailing spacing).

    A fallback for corpora that ship plain text; real model tokens, when
    available, should be supplied instead.
    """
    if not text:
        return ()
    pieces = re.findall(r"\S+\s*", text)
    if not pieces:
        return (text,)
    lead = len(text) - sum(len(p) for p in pieces)
    if lead:
        pieces[0] = text[:lead] + pieces[0]
    return tuple(pieces)


@dataclass
class GeneratedSample:
    """One generated response: its token pieces, detokenized text, and the
    ground-truth answer. `answer_end_index` caches the located 1-based
    index T of the token that completes the final boxed answer."""

    sample_id: str
    tokens: tuple[str, ...]
    text: str
    answer_text: str
    answer_end_index: "int | None" = None
    answer_span: "tuple[int, int] | None" = None  # char [start, end) override

    def __post_init__(self) -> None:
        self.tokens = tuple(self.tokens)
        if "".join(self.tokens) != self.text:
            raise ValueError(
                f"tokens of {self.sample_id!r} do not concatenate to its text"
            )

    @classmethod
    def from_text(
        cls, sample_id: str, text: str, answer_text: str, **kwargs
    ) -> "GeneratedSample":
        return cls(sample_id, tokenize_text(text), text, answer_text, **kwargs)


def _token_index_of_char(tokens: tuple[str, ...], char_pos: int) -> int:
    """1-based index of the token containing the character at `char_pos`."""
    starts = []
    offset = 0
    for tok in tokens:
        starts.append(offset)
        offset += len(tok)
    if not 0 <= char_pos < offset:
        raise ValueError(f"character position {char_pos} outside text")
    return bisect.bisect_right(starts, char_pos)


def _last_boxed_span(text: str) -> "tuple[int, int]":
    """Char [start, end) of the content of the last \\boxed{...} span.

    Brace depth is tracked so nested braces inside the answer stay part
    of it; an unclosed span runs to the end of the text.
    """
    open_at = text.rfind(BOXED_OPENER)
    if open_at < 0:
        raise AnswerNotFound("no \\boxed{ span in generated text")
    start = open_at + len(BOXED_OPENER)
    depth = 1
    for i in range(start, len(text)):
        ch = text[i]
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return start, i
    return start, len(text)


def locate_answer_end(sample: GeneratedSample) -> int:
    """1-based index T of the token completing the final answer.

    Uses the sample's explicit answer span when present, otherwise the
    content of the last boxed span. Text after that span never affects
    the result.
    """
    if sample.answer_span is not None:
        start, end = sample.answer_span
        if not 0 <= start < end <= len(sample.text):
            raise ValueError(f"answer span {sample.answer_span} outside text")
    else:
        start, end = _last_boxed_span(sample.text)
        if end <= start:
            raise AnswerNotFound("boxed span is empty")
    return _token_index_of_char(sample.tokens, end - 1)


def _require_answer_end(sample: GeneratedSample) -> int:
    if sample.answer_end_index is None:
        sample.answer_end_index = locate_answer_end(sample)
    return sample.answer_end_index


@dataclass(frozen=True)
class ProbeContext:
    """Context sent to the backend for one probe position."""

    prefix_tokens: tuple[str, ...]
    answer_prefix_tokens: tuple[str, ...]
    position: int
    suffix_literal: str = BOXED_OPENER

    def __post_init__(self) -> None:
        if self.position < 1:
            raise ValueError(f"position must be >= 1, got {self.position}")

    def as_text(self) -> str:
        return (
            "".join(self.prefix_tokens)
            + self.suffix_literal
            + "".join(self.answer_prefix_tokens)
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "prefix_tokens": list(self.prefix_tokens),
                "answer_prefix_tokens": list(self.answer_prefix_tokens),
                "position": self.position,
                "suffix_literal": self.suffix_literal,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, payload: str) -> "ProbeContext":
        raw = json.loads(payload)
        return cls(
            tuple(raw["prefix_tokens"]),
            tuple(raw["answer_prefix_tokens"]),
            raw["position"],
            raw["suffix_literal"],
        )


def build_probe_context(
    sample: GeneratedSample, t: int, answer_tokens: "tuple[str, ...] | list[str]"
) -> ProbeContext:
    """Probe context at position t: (x_1..x_t, \\boxed{, first L-1 answer
    tokens), so the backend's next-token distribution is over the L-th
    (final) answer token."""
    answer_tokens = tuple(answer_tokens)
    if not answer_tokens:
        raise ValueError("answer_tokens must hold at least one token")
    big_t = _require_answer_end(sample)
    if not 1 <= t <= big_t - 1:
        raise ValueError(f"position {t} outside probe range [1, {big_t - 1}]")
    return ProbeContext(
        prefix_tokens=sample.tokens[:t],
        answer_prefix_tokens=answer_tokens[:-1],
        position=t,
    )


def enumerate_probe_positions(sample: GeneratedSample, stride: int = 1) -> list[int]:
    """Positions {1, 1+s, 1+2s, ...} clipped to [1, T-1], with T-1 always
    appended so the final pre-answer position is probed at any stride."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    big_t = _require_answer_end(sample)
    positions = list(range(1, big_t, stride))
    if big_t - 1 >= 1 and (not positions or positions[-1] != big_t - 1):
        positions.append(big_t - 1)
    return positions
