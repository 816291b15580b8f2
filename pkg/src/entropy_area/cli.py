"""Command-line pipeline: synth -> harvest -> score -> correlate /
trajectory / select, plus figure rendering via `report`.

Exit codes: 0 success, 2 backend unreachable, 3 input parse error,
4 insufficient data for correlation, 5 missing strategy inputs.
"""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click

from . import pipeline, report as report_mod
from .client import (
    BackendConfig,
    BackendError,
    HttpBackend,
    RetryPolicy,
    TraceStore,
)
from .metrics import PROBE_MODES
from .probe import AnswerNotFound
from .selection import (
    DEFAULT_BUDGET,
    ScoreRecord,
    apply_length_cap,
    select_by_eas,
    select_by_length,
    select_by_pass_rate,
    select_random,
)
from .stats import DegenerateInput
from .synthetic import backend_from_corpus, generate_synthetic_corpus
from .client import harvest_trace

EXIT_BACKEND = 2
EXIT_PARSE = 3
EXIT_INSUFFICIENT = 4
EXIT_STRATEGY_INPUT = 5


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Debug logging to stderr.")
def main(verbose: bool) -> None:
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


@main.command()
@click.option("--out-dir", type=click.Path(path_type=Path), required=True)
@click.option("--samples-per-archetype", default=20, show_default=True)
@click.option("--min-length", default=50, show_default=True)
@click.option("--max-length", default=64, show_default=True)
@click.option("--options", "option_count", default=4, show_default=True)
@click.option("--draws", default=64, show_default=True,
              help="Monte Carlo answer draws per question.")
@click.option("--rounds", default=4, show_default=True,
              help="Pass-rate evaluation rounds per question.")
@click.option("--seed", default=0, show_default=True)
def synth(out_dir: Path, samples_per_archetype: int, min_length: int,
          max_length: int, option_count: int, draws: int, rounds: int,
          seed: int) -> None:
    """Write a synthetic corpus plus reference answer draws."""
    try:
        corpus_rows, answer_rows = generate_synthetic_corpus(
            samples_per_archetype=samples_per_archetype,
            min_length=min_length, max_length=max_length,
            option_count=option_count, draws=draws, rounds=rounds, seed=seed,
        )
    except ValueError as exc:
        _fail(EXIT_PARSE, str(exc))
    pipeline.write_jsonl(out_dir / "corpus.jsonl", corpus_rows)
    pipeline.write_jsonl(out_dir / "answers.jsonl", answer_rows)
    click.echo(f"wrote {len(corpus_rows)} samples to {out_dir / 'corpus.jsonl'}")
    click.echo(f"wrote {len(answer_rows)} answer rows to {out_dir / 'answers.jsonl'}")


def _http_backend(endpoint, api_key, model, top_k, vocab_size, timeout,
                  max_in_flight, retries, backoff) -> HttpBackend:
    try:
        config = BackendConfig.from_env(
            endpoint_url=endpoint, api_key=api_key, model_name=model,
            top_k=top_k, vocab_size=vocab_size, timeout=timeout,
            max_in_flight=max_in_flight,
            retry=RetryPolicy(max_attempts=retries, backoff_base=backoff),
        )
    except ValueError as exc:
        _fail(EXIT_PARSE, str(exc))
    return HttpBackend(config)


@main.command()
@click.option("--corpus", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--traces", type=click.Path(path_type=Path), required=True,
              help="JSONL trace file; appended to and resumed from.")
@click.option("--backend", "backend_kind",
              type=click.Choice(["synthetic", "http"]), default="synthetic",
              show_default=True)
@click.option("--mode", type=click.Choice(list(PROBE_MODES)),
              default="exact_suffix", show_default=True)
@click.option("--stride", default=1, show_default=True)
@click.option("--endpoint", default=None, help="OpenAI-compatible base URL.")
@click.option("--api-key", default=None)
@click.option("--model", default="default", show_default=True)
@click.option("--top-k", default=20, show_default=True)
@click.option("--vocab-size", default=151_665, show_default=True)
@click.option("--timeout", default=30.0, show_default=True)
@click.option("--max-in-flight", default=4, show_default=True)
@click.option("--retries", default=3, show_default=True)
@click.option("--backoff", default=0.5, show_default=True)
def harvest(corpus: Path, traces: Path, backend_kind: str, mode: str,
            stride: int, endpoint, api_key, model, top_k, vocab_size,
            timeout, max_in_flight, retries, backoff) -> None:
    """Probe every corpus sample and append token distributions to the
    trace file. Already-harvested (sample, position, mode) keys are
    skipped, so interrupted runs can simply be re-run."""
    if stride < 1:
        _fail(EXIT_PARSE, f"stride must be >= 1, got {stride}")
    try:
        corpus_rows = pipeline.load_corpus_rows(corpus)
    except ValueError as exc:
        _fail(EXIT_PARSE, str(exc))
    if backend_kind == "synthetic":
        backend = backend_from_corpus(corpus_rows, max_in_flight=max_in_flight)
    else:
        backend = _http_backend(endpoint, api_key, model, top_k, vocab_size,
                                timeout, max_in_flight, retries, backoff)
    try:
        store = TraceStore(traces)
    except ValueError as exc:
        _fail(EXIT_PARSE, str(exc))

    harvested = 0
    complete = 0
    incomplete = []
    skipped = []
    failures_total = 0
    fetched_any = False
    for row in corpus_rows:
        try:
            sample = pipeline.corpus_sample(row)
        except ValueError as exc:
            _fail(EXIT_PARSE, str(exc))
        before = len(store.records())
        try:
            result = harvest_trace(
                backend, sample, mode=mode, stride=stride, store=store,
                option_labels=row.get("options"),
            )
        except AnswerNotFound as exc:
            skipped.append((sample.sample_id, str(exc)))
            continue
        except BackendError as exc:
            if not fetched_any:
                _fail(EXIT_BACKEND, f"backend unreachable: {exc}")
            incomplete.append(sample.sample_id)
            failures_total += 1
            continue
        if len(store.records()) > before:
            fetched_any = True
        failures_total += len(result.failures)
        if result.failures and not fetched_any:
            _fail(EXIT_BACKEND,
                  f"backend unreachable: {result.failures[0][1]}")
        harvested += 1
        if result.complete:
            complete += 1
        else:
            incomplete.append(sample.sample_id)
    store.close()
    click.echo(
        f"harvested {harvested} samples ({complete} complete, "
        f"{len(incomplete)} incomplete, {len(skipped)} skipped, "
        f"{failures_total} failed probes) -> {traces}"
    )
    for sample_id, reason in skipped:
        click.echo(f"skipped {sample_id}: {reason}", err=True)


@main.command()
@click.option("--traces", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--corpus", type=click.Path(exists=True, path_type=Path), default=None,
              help="Optional; adds ppl, token_length, and pass counts.")
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--summary", type=click.Path(path_type=Path), default=None,
              help="Run summary JSON (default: <out dir>/score_summary.json).")
@click.option("--mode", type=click.Choice(list(PROBE_MODES)),
              default="exact_suffix", show_default=True)
def score(traces: Path, corpus, out: Path, summary, mode: str) -> None:
    """Turn harvested traces into per-sample EAS scores."""
    try:
        store = TraceStore(traces)
        corpus_rows = pipeline.load_corpus_rows(corpus) if corpus else None
        score_rows, run_summary = pipeline.score_rows_from_store(
            store, corpus_rows, mode=mode
        )
    except ValueError as exc:
        _fail(EXIT_PARSE, str(exc))
    pipeline.write_jsonl(out, score_rows)
    summary_path = Path(summary) if summary else out.parent / "score_summary.json"
    pipeline.write_json(summary_path, run_summary)
    click.echo(
        f"scored {run_summary['samples_scored']} samples "
        f"({len(run_summary['samples_incomplete'])} incomplete) -> {out}"
    )


@main.command()
@click.option("--scores", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--answers", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--scatter", type=click.Path(path_type=Path), default=None,
              help="Normalized scatter CSV (default: <out dir>/scatter.csv).")
@click.option("--label", type=click.Choice(["answer_entropy", "correctness_entropy"]),
              default="answer_entropy", show_default=True)
def correlate(scores: Path, answers: Path, out: Path, scatter, label: str) -> None:
    """Correlate uncertainty metrics against repeated-answer labels."""
    try:
        score_rows = pipeline.read_jsonl(scores)
        answers_by_id = pipeline.load_answer_rows(answers)
    except ValueError as exc:
        _fail(EXIT_PARSE, str(exc))
    try:
        correlation, scatter_rows = pipeline.correlate_scores(
            score_rows, answers_by_id, label=label
        )
    except DegenerateInput as exc:
        _fail(EXIT_INSUFFICIENT, str(exc))
    except ValueError as exc:
        _fail(EXIT_PARSE, str(exc))
    pipeline.write_json(out, correlation)
    scatter_path = Path(scatter) if scatter else out.parent / "scatter.csv"
    pipeline.write_scatter_csv(scatter_path, scatter_rows)
    for entry in correlation["metrics"]:
        if "r" in entry:
            click.echo(
                f"{entry['metric']}: r={entry['r']:.4f} p={entry['p']:.3e} "
                f"n={entry['n']}"
            )
        else:
            click.echo(f"{entry['metric']}: skipped ({entry['skipped']})")


@main.command()
@click.option("--traces", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--corpus", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--answers", type=click.Path(exists=True, path_type=Path), default=None,
              help="Optional; attaches answer-entropy bucket labels.")
@click.option("--out-dir", type=click.Path(path_type=Path), required=True)
@click.option("--mode", type=click.Choice(list(PROBE_MODES)),
              default="exact_suffix", show_default=True)
@click.option("--alpha", default=0.5, show_default=True)
def trajectory(traces: Path, corpus: Path, answers, out_dir: Path, mode: str,
               alpha: float) -> None:
    """Export per-sample option-preference curves as CSV."""
    try:
        store = TraceStore(traces)
        corpus_rows = pipeline.load_corpus_rows(corpus)
        answers_by_id = pipeline.load_answer_rows(answers) if answers else None
        tables, summaries = pipeline.trajectory_tables(
            store, corpus_rows, answers_by_id, mode=mode, alpha=alpha
        )
    except ValueError as exc:
        _fail(EXIT_PARSE, str(exc))
    for table in tables:
        pipeline.write_curve_csv(out_dir / f"{table['sample_id']}.csv", table)
    pipeline.write_jsonl(out_dir / "summary.jsonl", summaries)
    click.echo(f"wrote {len(tables)} curve files to {out_dir}")


@main.command()
@click.option("--scores", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--strategy", type=click.Choice(["random", "length", "pass_rate", "eas"]),
              required=True)
@click.option("--budget", default=DEFAULT_BUDGET, show_default=True)
@click.option("--seed", default=0, show_default=True, help="random strategy only.")
@click.option("--rounds", default=4, show_default=True, help="pass_rate strategy only.")
@click.option("--max-length", default=None, type=int,
              help="Optional token-length cap applied before selection.")
@click.option("--out", type=click.Path(path_type=Path), required=True)
def select(scores: Path, strategy: str, budget: int, seed: int, rounds: int,
           max_length, out: Path) -> None:
    """Pick a training subset from scored samples; writes a manifest."""
    try:
        rows = pipeline.read_jsonl(scores)
        pool = [ScoreRecord.from_json(row) for row in rows]
    except (ValueError, KeyError) as exc:
        _fail(EXIT_PARSE, str(exc))
    cap_excluded = []
    if max_length is not None:
        pool, cap_excluded = apply_length_cap(pool, max_length)

    missing = None
    if strategy == "length" and not any(r.token_length is not None for r in pool):
        missing = "token_length"
    elif strategy == "pass_rate" and not any(r.pass_rate is not None for r in pool):
        missing = "pass rate counts"
    elif strategy == "eas" and not any(r.eas is not None for r in pool):
        missing = "eas"
    if missing:
        _fail(EXIT_STRATEGY_INPUT,
              f"strategy {strategy!r} needs {missing}, which no pool record has")

    try:
        if strategy == "random":
            manifest = select_random(pool, budget, seed)
        elif strategy == "length":
            manifest = select_by_length(pool, budget)
        elif strategy == "pass_rate":
            manifest = select_by_pass_rate(pool, budget, rounds)
        else:
            manifest = select_by_eas(pool, budget)
    except ValueError as exc:
        _fail(EXIT_PARSE, str(exc))
    payload = manifest.to_json()
    if max_length is not None:
        payload["parameters"]["max_length_cap"] = max_length
        payload["parameters"]["excluded_over_cap"] = cap_excluded
    pipeline.write_json(out, payload)
    click.echo(
        f"selected {len(manifest.selected_ids)} of {len(pool)} eligible "
        f"records ({strategy}) -> {out}"
        + (" [short]" if manifest.short else "")
    )


@main.command(name="report")
@click.option("--correlation", type=click.Path(exists=True, path_type=Path),
              default=None, help="Correlation report JSON.")
@click.option("--scatter", type=click.Path(exists=True, path_type=Path),
              default=None, help="Scatter CSV next to the correlation report.")
@click.option("--curves-dir", type=click.Path(exists=True, path_type=Path),
              default=None, help="Directory written by the trajectory command.")
@click.option("--scores", type=click.Path(exists=True, path_type=Path),
              default=None)
@click.option("--out-dir", type=click.Path(path_type=Path), required=True)
@click.option("--max-curves", default=6, show_default=True)
def report(correlation, scatter, curves_dir, scores, out_dir: Path,
           max_curves: int) -> None:
    """Render figures from previously written pipeline outputs."""
    wrote = []
    try:
        if correlation and scatter:
            corr = report_mod.load_json(correlation)
            scatter_rows = report_mod.load_scatter_csv(scatter)
            wrote.append(report_mod.render_correlation_figure(
                corr, scatter_rows, out_dir / "correlation.png"))
        if curves_dir:
            summaries = pipeline.read_jsonl(Path(curves_dir) / "summary.jsonl")
            for summary in summaries[:max_curves]:
                table = _table_from_csv(Path(curves_dir) / f"{summary['sample_id']}.csv")
                wrote.append(report_mod.render_trajectory_figure(
                    table, summary,
                    out_dir / f"trajectory_{summary['sample_id']}.png"))
        if scores:
            score_rows = pipeline.read_jsonl(scores)
            wrote.append(report_mod.render_eas_histogram(
                score_rows, out_dir / "eas_histogram.png"))
    except (ValueError, OSError) as exc:
        _fail(EXIT_PARSE, str(exc))
    if not wrote:
        _fail(EXIT_PARSE, "nothing to render; pass at least one input")
    for path in wrote:
        click.echo(f"wrote {path}")


def _table_from_csv(path: Path) -> dict:
    rows = report_mod.load_scatter_csv(path)  # generic DictReader
    if not rows:
        raise ValueError(f"{path} is empty")
    options = [c[len("raw_"):] for c in rows[0] if c.startswith("raw_")]
    table = {
        "sample_id": path.stem,
        "options": options,
        "positions": [int(r["position"]) for r in rows],
        "entropy": [float(r["entropy"]) for r in rows],
        "raw": [[float(r[f"raw_{o}"]) for o in options] for r in rows],
        "cumulative": [[float(r[f"cum_{o}"]) for o in options] for r in rows],
        "decayed": [[float(r[f"dec_{o}"]) for o in options] for r in rows],
    }
    return table


if __name__ == "__main__":
    main()
