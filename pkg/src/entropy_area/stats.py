"""Correlation statistics: z-scores, Pearson r with exact two-sided
p-values from the Student t distribution, and least-squares fits.

The t CDF is evaluated through the regularized incomplete beta function,
computed here with a modified Lentz continued fraction so the package
carries no statistical dependency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


class DegenerateInput(ValueError):
    """A statistic is undefined for the given data (e.g. zero variance)."""


@dataclass(frozen=True)
class PairedSeries:
    """Two aligned numeric series, e.g. a metric and its reference label."""

    xs: tuple[float, ...]
    ys: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.xs) != len(self.ys):
            raise ValueError(f"{len(self.xs)} xs vs {len(self.ys)} ys")
        for v in (*self.xs, *self.ys):
            if not math.isfinite(v):
                raise ValueError(f"non-finite value {v}")

    @property
    def n(self) -> int:
        return len(self.xs)


def zscore_normalize(values: "list[float] | tuple[float, ...]") -> list[float]:
    """(v - mean) / sigma with the population standard deviation
    (divisor n). Constant input has sigma 0 and is rejected."""
    vals = [float(v) for v in values]
    if len(vals) < 2:
        raise DegenerateInput(f"need at least 2 values, got {len(vals)}")
    mean = math.fsum(vals) / len(vals)
    var = math.fsum((v - mean) ** 2 for v in vals) / len(vals)
    if var == 0.0:
        raise DegenerateInput("constant series has zero variance")
    sigma = math.sqrt(var)
    return [(v - mean) / sigma for v in vals]


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function, evaluated by
    the modified Lentz method. Converges to 1e-14 within 300 terms for
    every (a, b, x) this package asks of it."""
    max_iterations = 300
    eps = 1e-14
    fpmin = 1e-300

    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < fpmin:
        d = fpmin
    d = 1.0 / d
    h = d
    for m in range(1, max_iterations + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError(f"incomplete beta did not converge for a={a} b={b} x={x}")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b), the regularized incomplete beta function on [0, 1]."""
    if a <= 0.0 or b <= 0.0:
        raise ValueError(f"shape parameters must be positive, got a={a} b={b}")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x {x} outside [0, 1]")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    # the continued fraction converges fast only below the split point
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: int) -> float:
    """P(|T| >= |t|) for T ~ Student t with df degrees of freedom:
    I_{df/(df+t^2)}(df/2, 1/2)."""
    if df < 1:
        raise ValueError(f"df must be >= 1, got {df}")
    if math.isinf(t):
        return 0.0
    x = df / (df + t * t)
    return min(1.0, max(0.0, regularized_incomplete_beta(df / 2.0, 0.5, x)))


def student_t_cdf(t: float, df: int) -> float:
    """CDF of the Student t distribution with df degrees of freedom."""
    tail = 0.5 * student_t_two_sided_p(t, df)
    return 1.0 - tail if t > 0 else tail


def pearson(pairs: PairedSeries) -> "tuple[float, float]":
    """Pearson correlation r and its two-sided p-value.

    p comes from t = r * sqrt((n - 2) / (1 - r^2)) against the Student t
    distribution with n - 2 degrees of freedom; |r| = 1 maps to p = 0 in
    the limit.
    """
    n = pairs.n
    if n < 3:
        raise DegenerateInput(f"need at least 3 pairs, got {n}")
    mx = math.fsum(pairs.xs) / n
    my = math.fsum(pairs.ys) / n
    dx = [x - mx for x in pairs.xs]
    dy = [y - my for y in pairs.ys]
    sxx = math.fsum(d * d for d in dx)
    syy = math.fsum(d * d for d in dy)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateInput("correlation undefined for a constant series")
    r = math.fsum(a * b for a, b in zip(dx, dy)) / math.sqrt(sxx * syy)
    r = min(1.0, max(-1.0, r))
    df = n - 2
    denom = 1.0 - r * r
    if denom <= 0.0:
        return r, 0.0
    t = r * math.sqrt(df / denom)
    return r, student_t_two_sided_p(t, df)


def linear_regression(pairs: PairedSeries) -> "tuple[float, float]":
    """Least-squares (slope, intercept) of y on x."""
    n = pairs.n
    if n < 2:
        raise DegenerateInput(f"need at least 2 pairs, got {n}")
    mx = math.fsum(pairs.xs) / n
    my = math.fsum(pairs.ys) / n
    sxx = math.fsum((x - mx) ** 2 for x in pairs.xs)
    if sxx == 0.0:
        raise DegenerateInput("regression undefined for constant xs")
    sxy = math.fsum((x - mx) * (y - my) for x, y in zip(pairs.xs, pairs.ys))
    slope = sxy / sxx
    return slope, my - slope * mx
