"""Entropy-area uncertainty scoring for reasoning model outputs.

The package measures how long a model stays undecided while generating a
response: per-position token entropies are harvested by probing an
OpenAI-compatible endpoint with forced-answer contexts, summed into an
entropy area score (EAS), correlated against repeated-sampling labels,
and finally used to pick training subsets.
"""

from .client import (
    BackendConfig,
    BackendError,
    HttpBackend,
    HttpStatus,
    MalformedResponse,
    ProbeRequest,
    RetryPolicy,
    Timeout,
    TraceStore,
    fetch_topk_distribution,
    harvest_trace,
)
from .metrics import (
    AnswerSample,
    EntropyTrace,
    TokenDistribution,
    TokenLogprobSeries,
    answer_entropy,
    canonicalize_answer,
    correctness_entropy,
    eas,
    mean_eas,
    perplexity,
    response_length,
    shannon_entropy,
    truncation_error_bound,
)
from .probe import (
    AnswerNotFound,
    GeneratedSample,
    ProbeContext,
    build_probe_context,
    enumerate_probe_positions,
    locate_answer_end,
    tokenize_text,
)
from .selection import (
    ScoreRecord,
    SelectionManifest,
    compute_pass_rate,
    select_by_eas,
    select_by_length,
    select_by_pass_rate,
    select_random,
)
from .stats import (
    DegenerateInput,
    PairedSeries,
    linear_regression,
    pearson,
    regularized_incomplete_beta,
    student_t_cdf,
    zscore_normalize,
)
from .synthetic import (
    SyntheticBackend,
    SyntheticProfile,
    generate_synthetic_corpus,
    synthetic_distribution,
)
from .trajectory import (
    EntropyBucket,
    OptionSeries,
    bucket_by_answer_entropy,
    crossing_count,
    cumulative_option_probs,
    decayed_cumulative_option_probs,
)

__version__ = "0.1.0"
