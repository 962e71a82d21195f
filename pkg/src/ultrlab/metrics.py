"""Ranking quality metrics, paired significance testing, and propensity
reporting.

Both metrics use exponential gains over 5-level grades:

    nDCG@k: gain 2^g - 1, discount 1/log2(rank + 1), normalized by the
            ideal ordering's DCG@k (0 when the ideal DCG is 0)
    ERR@k:  sum over ranks r <= k of (1/r) * R_r * prod_{j<r} (1 - R_j),
            with stopping probability R = (2^g - 1) / 2^4

Ties in model scores are broken by original document index before any
metric is computed, so evaluation is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import t as _student_t

from .data import MAX_GRADE

EVAL_KS = (1, 3, 5, 10)
METRIC_NAMES = ("ndcg", "err")


class MetricsError(ValueError):
    pass


def _check_grades(grades):
    g = np.asarray(grades)
    if g.size and (np.any(g < 0) or np.any(g > MAX_GRADE)):
        raise MetricsError(f"grades must be in 0..{MAX_GRADE}")
    return g.astype(np.float64)


def dcg_at_k(grades_ranked, k):
    g = _check_grades(grades_ranked)[:k]
    if g.size == 0:
        return 0.0
    ranks = np.arange(1, g.size + 1)
    return float(((2.0**g - 1.0) / np.log2(ranks + 1)).sum())


def ndcg_at_k(grades_ranked, k):
    if k < 1:
        raise MetricsError("k must be >= 1")
    ideal = dcg_at_k(np.sort(np.asarray(grades_ranked))[::-1], k)
    if ideal == 0.0:
        return 0.0
    return dcg_at_k(grades_ranked, k) / ideal


def err_at_k(grades_ranked, k):
    if k < 1:
        raise MetricsError("k must be >= 1")
    g = _check_grades(grades_ranked)[:k]
    stop = (2.0**g - 1.0) / (2.0**MAX_GRADE)
    total = 0.0
    survive = 1.0
    for r, p in enumerate(stop, start=1):
        total += survive * p / r
        survive *= 1.0 - p
    return float(total)


def rank_order(scores):
    """Indices sorted by descending score; equal scores keep document order."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def kendall_tau(a, b):
    """Tau-a rank correlation over the last axis (vectorized over lists)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricsError("kendall_tau inputs must share a shape")
    n = a.shape[-1]
    if n < 2:
        raise MetricsError("kendall_tau needs lists of length >= 2")
    i, j = np.triu_indices(n, k=1)
    concordance = np.sign(a[..., i] - a[..., j]) * np.sign(b[..., i] - b[..., j])
    return concordance.sum(axis=-1) / i.size


def paired_t_test(per_query_a, per_query_b):
    """Two-sided paired t-test p-value. Zero-variance differences return 1.0
    when the mean difference is zero (no evidence) and 0.0 otherwise."""
    a = np.asarray(per_query_a, dtype=np.float64)
    b = np.asarray(per_query_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise MetricsError(f"paired samples must be equal-length vectors, got {a.shape} vs {b.shape}")
    if a.size < 2:
        raise MetricsError("paired t-test needs at least two observations")
    d = a - b
    spread = d.std(ddof=1)
    if spread == 0.0:
        return 1.0 if d.mean() == 0.0 else 0.0
    statistic = d.mean() / (spread / np.sqrt(d.size))
    return float(2.0 * _student_t.sf(abs(statistic), d.size - 1))


@dataclass
class EvalReport:
    """Per-query and aggregate nDCG@K / ERR@K for one trained model."""

    method: str
    query_ids: list[str]
    per_query: dict  # (metric, k) -> np.ndarray aligned with query_ids
    p_values: dict | None = None  # (metric, k) -> p vs a baseline report

    def mean(self, metric, k):
        return float(self.per_query[(metric, k)].mean())

    def means(self):
        return {key: float(vals.mean()) for key, vals in self.per_query.items()}


def evaluate_ranker(score_fn, queries, ks=EVAL_KS):
    """Score every annotated query with ``score_fn(features) -> scores`` and
    collect nDCG@K / ERR@K per query."""
    if not queries:
        raise MetricsError("no annotated queries to evaluate")
    per_query = {("ndcg", k): np.empty(len(queries)) for k in ks}
    per_query.update({("err", k): np.empty(len(queries)) for k in ks})
    ids = []
    for qi, query in enumerate(queries):
        scores = score_fn(query.features)
        ranked = query.grades[rank_order(scores)]
        for k in ks:
            per_query[("ndcg", k)][qi] = ndcg_at_k(ranked, k)
            per_query[("err", k)][qi] = err_at_k(ranked, k)
        ids.append(query.query_id)
    return EvalReport(method="", query_ids=ids, per_query=per_query)


@dataclass
class ComparisonRow:
    metric: str
    k: int
    mean_a: float
    mean_b: float
    p_value: float
    significant: bool


def compare_reports(report_a, report_b, alpha=0.05, ks=EVAL_KS):
    """Paired per-query comparison of two reports over the same query set.
    Rows come out in a fixed (metric, k) order."""
    if report_a.query_ids != report_b.query_ids:
        raise MetricsError("reports evaluate different query sets; cannot pair per-query values")
    rows = []
    for metric in METRIC_NAMES:
        for k in ks:
            a = report_a.per_query[(metric, k)]
            b = report_b.per_query[(metric, k)]
            p = paired_t_test(a, b)
            rows.append(
                ComparisonRow(metric, k, float(a.mean()), float(b.mean()), p, p <= alpha)
            )
    return rows


@dataclass
class PropensityRow:
    position: int
    learned: float
    truth: float | None = None
    abs_deviation: float | None = None
    mean_ctr: float | None = None


def mean_ctr_per_position(sessions, max_position=10):
    shown = np.zeros(max_position)
    clicked = np.zeros(max_position)
    for s in sessions:
        n = min(s.length, max_position)
        shown[:n] += 1
        clicked[:n] += s.clicks[:n]
    with np.errstate(invalid="ignore"):
        ctr = np.where(shown > 0, clicked / np.maximum(shown, 1), 0.0)
    return ctr


def propensity_report(learned_normalized, truth_normalized=None, sessions=None):
    """Rows of learned normalized propensity beside the optional ground truth
    (with absolute deviation) and the optional per-position mean CTR."""
    learned = np.asarray(learned_normalized, dtype=np.float64)
    ctr = mean_ctr_per_position(sessions, len(learned)) if sessions is not None else None
    rows = []
    for i, value in enumerate(learned):
        row = PropensityRow(position=i + 1, learned=float(value))
        if truth_normalized is not None:
            row.truth = float(truth_normalized[i])
            row.abs_deviation = abs(row.learned - row.truth)
        if ctr is not None:
            row.mean_ctr = float(ctr[i])
        rows.append(row)
    return rows
