"""Position-based click simulation with known ground truth.

A click happens iff the document is examined and attractive, independently
per position: p(click at position i) = relevance_prob(grade) * (1/i)^gamma.
The examination family (1/i)^gamma keeps the true normalized propensity
analytic, so propensity recovery can be checked exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import MAX_GRADE, AnnotatedQuery, Session

TRUTH_LEN = 10


class SimulationError(ValueError):
    pass


@dataclass
class ClickModelConfig:
    propensity_exponent: float = 1.0  # gamma; examination prob is (1/i)^gamma
    noise: float = 0.1  # epsilon; click prob floor for grade-0 documents
    max_grade: int = MAX_GRADE
    seed: int = 0

    def __post_init__(self):
        if self.propensity_exponent < 0:
            raise SimulationError("propensity exponent must be >= 0")
        if not 0.0 <= self.noise < 1.0:
            raise SimulationError("noise must be in [0, 1)")


@dataclass
class GroundTruth:
    normalized_propensity: np.ndarray  # length TRUTH_LEN, first entry 1
    relevance_probs: np.ndarray  # indexed by grade 0..max_grade
    propensity_exponent: float


def relevance_prob(grade, noise, max_grade=MAX_GRADE):
    """epsilon + (1 - epsilon) * (2^grade - 1) / (2^max_grade - 1)."""
    if not 0 <= grade <= max_grade:
        raise SimulationError(f"grade {grade} outside 0..{max_grade}")
    gain = (2.0**grade - 1.0) / (2.0**max_grade - 1.0)
    return noise + (1.0 - noise) * gain


def examination_prob(position, gamma):
    return (1.0 / position) ** gamma


def export_ground_truth(cfg):
    positions = np.arange(1, TRUTH_LEN + 1)
    propensity = examination_prob(positions, cfg.propensity_exponent)
    return GroundTruth(
        normalized_propensity=propensity / propensity[0],
        relevance_probs=np.array(
            [relevance_prob(g, cfg.noise, cfg.max_grade) for g in range(cfg.max_grade + 1)]
        ),
        propensity_exponent=cfg.propensity_exponent,
    )


def simulate_session(query, ranking, cfg, rng, list_len=10):
    """Simulate one displayed list: the top ``list_len`` documents of
    ``ranking`` are examined with probability (1/i)^gamma and clicked when
    also attractive. ``ranking`` must be a permutation of the query's docs."""
    ranking = np.asarray(ranking)
    if sorted(ranking.tolist()) != list(range(query.length)):
        raise SimulationError(f"ranking is not a permutation of query {query.query_id} documents")
    shown = ranking[:list_len]
    grades = query.grades[shown]
    attract = np.array([relevance_prob(int(g), cfg.noise, cfg.max_grade) for g in grades])
    examine = examination_prob(np.arange(1, len(shown) + 1), cfg.propensity_exponent)
    clicks = (rng.random(len(shown)) < attract * examine).astype(np.int64)
    return Session(query.query_id, query.features[shown], clicks)


def rank_random(query, rng):
    return rng.permutation(query.length)


def rank_by_feature(query, feature_index):
    """Descending by one feature column, ties broken by document index."""
    column = query.features[:, feature_index]
    return np.argsort(-column, kind="stable")


# Fixed synthetic feature geometry: the first eight dimensions carry a graded
# relevance signal at varying signal-to-noise ratios, the rest are noise.
# Dimensions 12 and 13 are offset/scaled to exercise normalization.
_SIGNAL_GAIN = np.array([1.0, 1.6, 0.8, 1.2, 0.5, 2.0, 0.9, 1.4])
_SIGNAL_NOISE = np.array([0.75, 0.9, 0.5, 1.2, 0.6, 1.5, 1.0, 0.8])
_NOISE_SCALE = np.array([1.0, 1.0, 1.0, 1.0, 40.0, 7.5])
_NOISE_SHIFT = np.array([0.0, 0.0, 0.0, 0.0, 120.0, -3.0])


def synthetic_queries(n_queries, docs_per_query, rng, id_prefix="q"):
    """Generate annotated queries whose features predict the grade.

    Grades are uniform over 0..4; signal dimensions follow
    gain * grade/4 + noise * N(0,1), so feature 0 is a usable but imperfect
    production-ranker surrogate.
    """
    queries = []
    n_signal = len(_SIGNAL_GAIN)
    for qi in range(n_queries):
        grades = rng.integers(0, MAX_GRADE + 1, size=docs_per_query)
        z = grades / MAX_GRADE
        signal = _SIGNAL_GAIN * z[:, None] + _SIGNAL_NOISE * rng.standard_normal(
            (docs_per_query, n_signal)
        )
        noise = _NOISE_SHIFT + _NOISE_SCALE * rng.standard_normal(
            (docs_per_query, len(_NOISE_SCALE))
        )
        features = np.concatenate([signal, noise], axis=1)
        queries.append(AnnotatedQuery(f"{id_prefix}{qi}", features, grades))
    return queries


def simulate_corpus(queries, cfg, sessions_per_query, initial_ranker="random", list_len=10):
    """Simulate ``sessions_per_query`` displayed lists for every query.

    ``initial_ranker`` is "random" (fresh permutation per session) or
    "feature:<k>" (fixed ranking by feature column k, zero-based).
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5E55]))
    sessions = []
    for query in queries:
        fixed = None
        if initial_ranker.startswith("feature:"):
            fixed = rank_by_feature(query, int(initial_ranker.split(":", 1)[1]))
        elif initial_ranker != "random":
            raise SimulationError(f"unknown initial ranker {initial_ranker!r}")
        for _ in range(sessions_per_query):
            ranking = fixed if fixed is not None else rank_random(query, rng)
            sessions.append(simulate_session(query, ranking, cfg, rng, list_len=list_len))
    return sessions
