"""Probe construction: answer-span location, context text assembly, and the
position schedule."""

import random

import pytest

from entropy_area.metrics import BOXED_OPENER
from entropy_area.probe import (
    AnswerNotFound,
    GeneratedSample,
    ProbeContext,
    build_probe_context,
    enumerate_probe_positions,
    locate_answer_end,
    tokenize_text,
)


class TestTokenizeText:
    def test_concatenation_recovers_text(self):
        texts = [
            "Let x = 4.  Then \\boxed{4}",
            "  leading space",
            "trailing space  ",
            "one\ntwo\n\nthree",
            "",
            "\\boxed{a} mid \\boxed{b}",
        ]
        for text in texts:
            assert "".join(tokenize_text(text)) == text

    def test_simple_split(self):
        assert tokenize_text("a b c") == ("a ", "b ", "c")

    def test_leading_whitespace_folds_into_first_token(self):
        toks = tokenize_text("  x y")
        assert toks[0] == "  x "
        assert "".join(toks) == "  x y"


def sample_from(text, **kwargs):
    return GeneratedSample.from_text("s1", text, "ans", **kwargs)


class TestLocateAnswerEnd:
    def test_single_boxed_answer(self):
        s = sample_from("The sum is \\boxed{42} indeed")
        t = locate_answer_end(s)
        # the token at 1-based index T completes the answer's closing brace
        assert "\\boxed{42}" in "".join(s.tokens[:t])
        assert "\\boxed{42}" not in "".join(s.tokens[: t - 1])

    def test_last_span_wins(self):
        s = sample_from("First \\boxed{1} then later \\boxed{2} done")
        t = locate_answer_end(s)
        assert "\\boxed{2}" in "".join(s.tokens[:t])

    def test_nested_braces_matched_by_depth(self):
        s = sample_from("Answer: \\boxed{\\frac{1}{2}} end")
        t = locate_answer_end(s)
        assert "\\boxed{\\frac{1}{2}}" in "".join(s.tokens[:t])

    def test_unclosed_span_runs_to_end(self):
        s = sample_from("Answer: \\boxed{42")
        assert locate_answer_end(s) == len(s.tokens)

    def test_no_answer_raises(self):
        with pytest.raises(AnswerNotFound):
            locate_answer_end(sample_from("no final answer here"))

    def test_explicit_span_override(self):
        text = "alpha beta gamma delta"
        start = text.index("gamma")
        s = sample_from(text, answer_span=(start, start + len("gamma")))
        t = locate_answer_end(s)
        assert "gamma" in "".join(s.tokens[:t])

    def test_cached_index_is_reused(self):
        s = sample_from("x \\boxed{7} y")
        first = locate_answer_end(s)
        build_probe_context(s, t=1, answer_tokens=["7"])
        assert s.answer_end_index == first

    def test_token_text_consistency_enforced(self):
        with pytest.raises(ValueError):
            GeneratedSample("s", ("a ", "c"), "a b", "x")


class TestBuildProbeContext:
    def test_context_text_layout(self):
        s = sample_from("step one step two \\boxed{9}")
        ctx = build_probe_context(s, t=2, answer_tokens=["9"])
        assert ctx.as_text() == "step one " + BOXED_OPENER
        assert ctx.position == 2

    def test_answer_prefix_carries_all_but_last_token(self):
        s = sample_from("a b c d \\boxed{12}")
        ctx = build_probe_context(s, t=3, answer_tokens=["1", "2"])
        # the probed distribution targets the answer's final token
        assert ctx.as_text() == "a b c " + BOXED_OPENER + "1"

    def test_single_token_answer_has_empty_prefix(self):
        s = sample_from("a b \\boxed{5}")
        ctx = build_probe_context(s, t=1, answer_tokens=["5"])
        assert ctx.as_text().endswith(BOXED_OPENER)
        assert ctx.answer_prefix_tokens == ()

    def test_rejects_empty_answer(self):
        s = sample_from("a b \\boxed{5}")
        with pytest.raises(ValueError):
            build_probe_context(s, t=1, answer_tokens=[])

    def test_position_bounds(self):
        s = sample_from("a b c \\boxed{5}")
        t_end = locate_answer_end(s)
        with pytest.raises(ValueError):
            build_probe_context(s, t=0, answer_tokens=["5"])
        with pytest.raises(ValueError):
            build_probe_context(s, t=t_end, answer_tokens=["5"])

    def test_json_round_trip(self):
        s = sample_from("a b \\boxed{57}")
        ctx = build_probe_context(s, t=1, answer_tokens=["5", "7"])
        back = ProbeContext.from_json(ctx.to_json())
        assert back == ctx
        assert back.as_text() == ctx.as_text()


def sample_with_t(big_t):
    """A synthetic sample whose answer completes at 1-based token index big_t."""
    tokens = tuple(f"w{i} " for i in range(big_t))
    return GeneratedSample(
        "s", tokens, "".join(tokens), "x", answer_end_index=big_t
    )


class TestEnumerateProbePositions:
    def test_stride_one_covers_every_position(self):
        assert enumerate_probe_positions(sample_with_t(5), 1) == [1, 2, 3, 4]

    def test_stride_four(self):
        assert enumerate_probe_positions(sample_with_t(10), 4) == [1, 5, 9]

    def test_final_position_always_included(self):
        assert enumerate_probe_positions(sample_with_t(11), 4) == [1, 5, 9, 10]
        assert enumerate_probe_positions(sample_with_t(12), 5) == [1, 6, 11]

    def test_minimal_response(self):
        assert enumerate_probe_positions(sample_with_t(2), 1) == [1]
        assert enumerate_probe_positions(sample_with_t(2), 64) == [1]

    def test_no_positions_before_a_first_token_answer(self):
        assert enumerate_probe_positions(sample_with_t(1), 1) == []

    def test_rejects_nonpositive_stride(self):
        with pytest.raises(ValueError):
            enumerate_probe_positions(sample_with_t(10), 0)

    def test_schedule_is_sorted_unique_and_in_range(self):
        rng = random.Random(13)
        for _ in range(300):
            big_t = rng.randint(2, 5000)
            stride = rng.randint(1, 128)
            pos = enumerate_probe_positions(sample_with_t(big_t), stride)
            assert pos == sorted(set(pos))
            assert pos[0] == 1
            assert pos[-1] == big_t - 1
            assert all(1 <= p <= big_t - 1 for p in pos)
            # every point except a possibly off-grid final one sits on the grid
            assert all((p - 1) % stride == 0 for p in pos[:-1])
