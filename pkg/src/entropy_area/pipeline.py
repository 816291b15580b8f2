"""File-level pipeline steps shared by the CLI and library users.

Every function here is deterministic over its inputs: output files carry
no timestamps, JSON is written with sorted keys, and rows are ordered by
sample_id, so re-running a step over unchanged inputs reproduces its
outputs byte for byte.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .client import TraceStore, _stride_positions, distribution_from_record
from .metrics import (
    AnswerSample,
    EntropyTrace,
    TokenLogprobSeries,
    answer_entropy,
    correctness_entropy,
    eas,
    mean_eas,
    perplexity,
    shannon_entropy,
    truncation_error_bound,
)
from .probe import GeneratedSample, tokenize_text
from .stats import DegenerateInput, PairedSeries, linear_regression, pearson, zscore_normalize
from .trajectory import (
    OptionSeries,
    CROSSING_METHOD,
    bucket_by_answer_entropy,
    crossing_count,
    cumulative_option_probs,
    decayed_cumulative_option_probs,
)

SCHEMA_VERSION = 1

CORRELATION_METRICS = ("eas", "mean_eas", "ppl", "token_length")


def read_jsonl(path: "str | Path") -> "list[dict]":
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
    return rows


def write_jsonl(path: "str | Path", rows: "list[dict]") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def write_json(path: "str | Path", payload: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _require_unique_ids(rows: "list[dict]", what: str) -> None:
    seen = set()
    for row in rows:
        sid = row.get("sample_id")
        if sid is None:
            raise ValueError(f"{what} row without sample_id")
        if sid in seen:
            raise ValueError(f"duplicate sample_id {sid!r} in {what}")
        seen.add(sid)


def load_corpus_rows(path: "str | Path") -> "list[dict]":
    rows = read_jsonl(path)
    for row in rows:
        for field in ("sample_id", "generated_text", "answer_text"):
            if field not in row:
                raise ValueError(
                    f"corpus row {row.get('sample_id', '?')!r} missing {field!r}"
                )
    _require_unique_ids(rows, "corpus")
    return rows


def load_answer_rows(path: "str | Path") -> "dict[str, dict]":
    rows = read_jsonl(path)
    for row in rows:
        if "sample_id" not in row or "answers" not in row:
            raise ValueError("answers row missing sample_id or answers")
    _require_unique_ids(rows, "answers")
    return {row["sample_id"]: row for row in rows}


def corpus_sample(row: dict) -> GeneratedSample:
    """Build the probe-facing sample from a corpus row. Explicit token
    pieces are honored; otherwise the text is split by whitespace."""
    text = row["generated_text"]
    tokens = tuple(row["tokens"]) if row.get("tokens") else tokenize_text(text)
    span = tuple(row["answer_span"]) if row.get("answer_span") else None
    return GeneratedSample(
        sample_id=row["sample_id"],
        tokens=tokens,
        text=text,
        answer_text=row["answer_text"],
        answer_span=span,
    )


def sample_token_length(row: dict) -> "int | None":
    if row.get("tokens"):
        return len(row["tokens"])
    if row.get("token_logprobs"):
        return len(row["token_logprobs"])
    if row.get("generated_text"):
        return len(tokenize_text(row["generated_text"]))
    return None


def score_rows_from_store(
    store: TraceStore, corpus_rows: "list[dict] | None" = None,
    mode: str = "exact_suffix",
) -> "tuple[list[dict], dict]":
    """Score every completely-harvested sample in the store.

    Returns (score rows sorted by sample_id, run summary). Samples with
    missing positions are left out of the scores and counted in the
    summary; the summary also carries the truncation-bound table over all
    per-position epsilon values (mean and the 90th/95th/99th
    percentiles).
    """
    by_sample: dict = {}
    for record in store.records():
        if record["mode"] != mode:
            continue
        by_sample.setdefault(record["sample_id"], {})[record["t"]] = record

    corpus_by_id = {}
    if corpus_rows:
        _require_unique_ids(corpus_rows, "corpus")
        corpus_by_id = {row["sample_id"]: row for row in corpus_rows}

    score_rows = []
    incomplete = []
    epsilons = []
    k_seen = set()
    vocab_seen = set()
    for sample_id in sorted(by_sample):
        records = by_sample[sample_id]
        t_total = max(rec["t_total"] for rec in records.values())
        stride = min(rec["stride"] for rec in records.values())
        expected = _stride_positions(t_total, stride)
        if any(t not in records for t in expected):
            incomplete.append(sample_id)
            continue
        entropies = []
        for t in expected:
            record = records[t]
            epsilons.append(record["epsilon"])
            k_seen.add(record["k"])
            vocab_seen.add(record["vocab_size"])
            entropies.append(shannon_entropy(distribution_from_record(record)))
        trace = EntropyTrace(
            sample_id, tuple(entropies), probe_mode=mode, stride=stride,
            k_used=max(records[t]["k"] for t in expected),
            vocab_size=records[expected[0]]["vocab_size"],
        )
        row = {
            "schema_version": SCHEMA_VERSION,
            "sample_id": sample_id,
            "eas": eas(trace),
            "mean_eas": mean_eas(trace),
            "positions": len(expected),
            "stride": stride,
            "mode": mode,
            "k_used": trace.k_used,
            "t_total": t_total,
        }
        corpus_row = corpus_by_id.get(sample_id)
        if corpus_row:
            logprobs = corpus_row.get("token_logprobs")
            if logprobs:
                row["ppl"] = perplexity(
                    TokenLogprobSeries(sample_id, tuple(logprobs))
                )
            length = sample_token_length(corpus_row)
            if length is not None:
                row["token_length"] = length
            flags = corpus_row.get("correct_per_round")
            if flags:
                row["pass_correct"] = sum(bool(f) for f in flags)
                row["pass_rounds"] = len(flags)
        score_rows.append(row)

    summary = {
        "schema_version": SCHEMA_VERSION,
        "mode": mode,
        "samples_scored": len(score_rows),
        "samples_incomplete": sorted(incomplete),
        "positions_total": len(epsilons),
        "epsilon_summary": _epsilon_summary(epsilons, k_seen, vocab_seen),
    }
    return score_rows, summary


def _epsilon_summary(epsilons, k_seen, vocab_seen) -> "list[dict]":
    if not epsilons:
        return []
    k = max(k_seen)
    vocab = max(vocab_seen)
    arr = np.asarray(epsilons, dtype=float)
    stats = [
        ("mean", float(arr.mean())),
        ("p90", float(np.percentile(arr, 90))),
        ("p95", float(np.percentile(arr, 95))),
        ("p99", float(np.percentile(arr, 99))),
    ]
    return [
        {
            "statistic": name,
            "retained_mass": 1.0 - eps_value,
            "epsilon": eps_value,
            "max_entropy_gap_bits": truncation_error_bound(eps_value, vocab, k),
        }
        for name, eps_value in stats
    ]


def answer_sample_from_row(row: dict) -> AnswerSample:
    flags = row.get("correct_flags") or [False] * len(row["answers"])
    return AnswerSample.from_raw(row["sample_id"], row["answers"], flags)


def label_value(row: dict, label: str) -> float:
    """Reference uncertainty label for one answers row."""
    sample = answer_sample_from_row(row)
    if label == "answer_entropy":
        return answer_entropy(sample)
    if label == "correctness_entropy":
        if not row.get("correct_flags"):
            raise ValueError(
                f"answers row {row['sample_id']!r} has no correct_flags"
            )
        return correctness_entropy(sum(sample.correct_flags), sample.n)
    raise ValueError(f"unknown label {label!r}")


def correlate_scores(
    score_rows: "list[dict]",
    answers_by_id: "dict[str, dict]",
    label: str = "answer_entropy",
    metrics: "tuple[str, ...]" = CORRELATION_METRICS,
) -> "tuple[dict, list[dict]]":
    """Per-metric correlation against the reference label.

    Both axes are z-score normalized before the regression and the
    correlation (r is unchanged by the normalization; the slope and
    intercept refer to the normalized axes). Returns the report plus the
    normalized scatter rows behind it.
    """
    _require_unique_ids(score_rows, "scores")
    joined = [row for row in score_rows if row["sample_id"] in answers_by_id]
    if len(joined) < 3:
        raise DegenerateInput(
            f"only {len(joined)} samples join scores to answers; need 3"
        )
    labels = {
        row["sample_id"]: label_value(answers_by_id[row["sample_id"]], label)
        for row in joined
    }

    entries = []
    scatter = []
    for metric in metrics:
        rows = [r for r in joined if r.get(metric) is not None]
        if len(rows) < 3:
            entries.append({"metric": metric, "n": len(rows),
                            "skipped": "fewer than 3 values"})
            continue
        xs = [float(r[metric]) for r in rows]
        ys = [labels[r["sample_id"]] for r in rows]
        try:
            zx = zscore_normalize(xs)
            zy = zscore_normalize(ys)
        except DegenerateInput:
            entries.append({"metric": metric, "n": len(rows),
                            "skipped": "constant axis"})
            continue
        pairs = PairedSeries(tuple(zx), tuple(zy))
        r, p = pearson(pairs)
        slope, intercept = linear_regression(pairs)
        entries.append({
            "metric": metric, "r": r, "p": p,
            "slope": slope, "intercept": intercept, "n": len(rows),
        })
        for row, x, y in zip(rows, zx, zy):
            scatter.append({
                "metric": metric,
                "sample_id": row["sample_id"],
                "metric_z": x,
                "label_z": y,
            })
    report = {
        "schema_version": SCHEMA_VERSION,
        "label": label,
        "n_joined": len(joined),
        "metrics": entries,
    }
    return report, scatter


def write_scatter_csv(path: "str | Path", scatter: "list[dict]") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["metric,sample_id,metric_z,label_z"]
    for row in scatter:
        lines.append(
            f"{row['metric']},{row['sample_id']},"
            f"{row['metric_z']:.10g},{row['label_z']:.10g}"
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def trajectory_tables(
    store: TraceStore,
    corpus_rows: "list[dict]",
    answers_by_id: "dict[str, dict] | None" = None,
    mode: str = "exact_suffix",
    alpha: float = 0.5,
) -> "tuple[list[dict], list[dict]]":
    """Per-sample option-curve tables plus one summary row per sample.

    Samples without option labels are skipped (counted in the summary
    consumer via absence). Bucket labels come from the answers file when
    given. Raw probabilities are tabulated as-is; any display
    normalization is left to the renderer.
    """
    answers_by_id = answers_by_id or {}
    _require_unique_ids(corpus_rows, "corpus")
    tables = []
    summaries = []
    for row in sorted(corpus_rows, key=lambda r: r["sample_id"]):
        options = row.get("options")
        if not options:
            continue
        sample_id = row["sample_id"]
        records = store.positions(sample_id, mode)
        if not records:
            continue
        positions = sorted(records)
        series = OptionSeries(
            tuple(options),
            tuple(
                tuple(
                    distribution_from_record(records[t]).probability_of(label)
                    for label in options
                )
                for t in positions
            ),
            alpha=alpha,
        )
        raw = series.as_array()
        cumulative = cumulative_option_probs(series)
        decayed = decayed_cumulative_option_probs(series)
        entropies = [
            shannon_entropy(distribution_from_record(records[t]))
            for t in positions
        ]
        crossings = crossing_count(series, decayed)
        bucket_label = None
        h_answers = None
        answers_row = answers_by_id.get(sample_id)
        if answers_row:
            h_answers = label_value(answers_row, "answer_entropy")
            bucket_label = bucket_by_answer_entropy(h_answers).label
        tables.append({
            "sample_id": sample_id,
            "options": list(options),
            "positions": positions,
            "entropy": entropies,
            "raw": raw.tolist(),
            "cumulative": cumulative.tolist(),
            "decayed": decayed.tolist(),
        })
        summaries.append({
            "schema_version": SCHEMA_VERSION,
            "sample_id": sample_id,
            "alpha": alpha,
            "mode": mode,
            "steps": len(positions),
            "crossing_count": crossings,
            "crossing_method": CROSSING_METHOD,
            "answer_entropy": h_answers,
            "bucket": bucket_label,
        })
    return tables, summaries


def write_curve_csv(path: "str | Path", table: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    options = table["options"]
    header = ["position", "entropy"]
    for prefix in ("raw", "cum", "dec"):
        header.extend(f"{prefix}_{o}" for o in options)
    lines = [",".join(header)]
    for i, t in enumerate(table["positions"]):
        cells = [str(t), f"{table['entropy'][i]:.10g}"]
        for key in ("raw", "cumulative", "decayed"):
            cells.extend(f"{v:.10g}" for v in table[key][i])
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
