"""Dataset types and text formats for annotated queries and click sessions.

Annotated file, one document per line:

    <grade> qid:<id> 1:<float> 2:<float> ... 14:<float>

Session file, one session per line, per-document groups joined by " | ":

    qid:<id> | pos:1 click:0 1:<float> ... 14:<float> | pos:2 click:1 ...

Lines starting with '#' are headers/comments and are skipped. Floats are
serialized with repr(), so load -> save -> load round-trips bit-exactly.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

FEATURE_DIM = 14
MAX_GRADE = 4
TRAIN_LIST_LEN = 10


class DataFormatError(ValueError):
    pass


@dataclass
class Session:
    """One displayed result list in position order: row i holds the document
    shown at 1-based position i + 1."""

    query_id: str
    features: np.ndarray  # (n, FEATURE_DIM) float64
    clicks: np.ndarray  # (n,) int, values in {0, 1}

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.clicks = np.asarray(self.clicks, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[1] != FEATURE_DIM:
            raise DataFormatError(
                f"session {self.query_id}: features must be (n, {FEATURE_DIM}), got {self.features.shape}"
            )
        if self.clicks.shape != (self.features.shape[0],):
            raise DataFormatError(f"session {self.query_id}: clicks length mismatch")
        if not np.isin(self.clicks, (0, 1)).all():
            raise DataFormatError(f"session {self.query_id}: clicks must be 0/1")

    @property
    def length(self):
        return self.features.shape[0]


@dataclass
class AnnotatedQuery:
    """Expert-graded candidates for one query, grades in 0..MAX_GRADE."""

    query_id: str
    features: np.ndarray  # (n, FEATURE_DIM) float64
    grades: np.ndarray  # (n,) int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.grades = np.asarray(self.grades, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[1] != FEATURE_DIM:
            raise DataFormatError(
                f"query {self.query_id}: features must be (n, {FEATURE_DIM}), got {self.features.shape}"
            )
        if self.grades.shape != (self.features.shape[0],):
            raise DataFormatError(f"query {self.query_id}: grades length mismatch")
        if self.features.shape[0] < 1:
            raise DataFormatError(f"query {self.query_id}: needs at least one document")
        if ((self.grades < 0) | (self.grades > MAX_GRADE)).any():
            raise DataFormatError(f"query {self.query_id}: grades must be in 0..{MAX_GRADE}")

    @property
    def length(self):
        return self.features.shape[0]


@dataclass
class FeatureStats:
    """Per-dimension standardization statistics from the training sessions."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, features):
        safe = np.where(self.std < 1e-12, 1.0, self.std)
        out = (np.asarray(features, dtype=np.float64) - self.mean) / safe
        return np.where(self.std < 1e-12, 0.0, out)


def _parse_features(parts, lineno):
    if len(parts) != FEATURE_DIM:
        raise DataFormatError(f"line {lineno}: expected {FEATURE_DIM} features, got {len(parts)}")
    values = np.empty(FEATURE_DIM)
    for expected, token in enumerate(parts, start=1):
        key, _, raw = token.partition(":")
        if not raw:
            raise DataFormatError(f"line {lineno}: malformed feature token {token!r}")
        try:
            index = int(key)
            value = float(raw)
        except ValueError as err:
            raise DataFormatError(f"line {lineno}: malformed feature token {token!r}") from err
        if index != expected:
            raise DataFormatError(f"line {lineno}: feature index {index} out of order (expected {expected})")
        values[expected - 1] = value
    return values


def _format_features(values):
    return " ".join(f"{k}:{float(v)!r}" for k, v in enumerate(values, start=1))


def load_annotated(path):
    """Parse an annotated file into queries, grouped by qid in file order."""
    order = []
    grouped = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) < 2 or not parts[1].startswith("qid:"):
                raise DataFormatError(f"line {lineno}: expected '<grade> qid:<id> ...'")
            try:
                grade = int(parts[0])
            except ValueError as err:
                raise DataFormatError(f"line {lineno}: bad grade {parts[0]!r}") from err
            if not 0 <= grade <= MAX_GRADE:
                raise DataFormatError(f"line {lineno}: grade {grade} outside 0..{MAX_GRADE}")
            qid = parts[1][len("qid:"):]
            features = _parse_features(parts[2:], lineno)
            if qid not in grouped:
                grouped[qid] = ([], [])
                order.append(qid)
            grouped[qid][0].append(grade)
            grouped[qid][1].append(features)
    return [
        AnnotatedQuery(qid, np.array(grouped[qid][1]), np.array(grouped[qid][0]))
        for qid in order
    ]


def save_annotated(path, queries, header=None):
    lines = []
    if header:
        lines.extend(f"# {h}" for h in header)
    for query in queries:
        for grade, row in zip(query.grades, query.features):
            lines.append(f"{int(grade)} qid:{query.query_id} {_format_features(row)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_sessions(path):
    """Parse a session file; positions must be exactly 1..n for each session."""
    sessions = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            groups = [g.strip() for g in line.split("|")]
            head = groups[0].split()
            if len(head) != 1 or not head[0].startswith("qid:"):
                raise DataFormatError(f"line {lineno}: session must start with 'qid:<id>'")
            qid = head[0][len("qid:"):]
            seen = {}
            for group in groups[1:]:
                parts = group.split()
                if len(parts) < 2 or not parts[0].startswith("pos:") or not parts[1].startswith("click:"):
                    raise DataFormatError(
                        f"line {lineno}: query {qid}: group must start with 'pos:<i> click:<0|1>'"
                    )
                try:
                    pos = int(parts[0][len("pos:"):])
                    click = int(parts[1][len("click:"):])
                except ValueError as err:
                    raise DataFormatError(f"line {lineno}: query {qid}: bad pos/click") from err
                if click not in (0, 1):
                    raise DataFormatError(f"line {lineno}: query {qid}: click must be 0 or 1")
                if pos in seen:
                    raise DataFormatError(f"line {lineno}: query {qid}: duplicate position {pos}")
                seen[pos] = (click, _parse_features(parts[2:], lineno))
            n = len(seen)
            missing = [p for p in range(1, n + 1) if p not in seen]
            if missing:
                raise DataFormatError(
                    f"line {lineno}: query {qid}: positions have gaps (missing {missing[0]})"
                )
            clicks = np.array([seen[p][0] for p in range(1, n + 1)])
            features = np.array([seen[p][1] for p in range(1, n + 1)])
            sessions.append(Session(qid, features, clicks))
    return sessions


def save_sessions(path, sessions, header=None):
    lines = []
    if header:
        lines.extend(f"# {h}" for h in header)
    for s in sessions:
        groups = [f"qid:{s.query_id}"]
        for i in range(s.length):
            groups.append(f"pos:{i + 1} click:{int(s.clicks[i])} {_format_features(s.features[i])}")
        lines.append(" | ".join(groups))
    atomic_write_text(path, "\n".join(lines) + "\n")


def filter_sessions(sessions, list_len=TRAIN_LIST_LEN):
    """Keep sessions with at least ``list_len`` consecutive documents and at
    least one click within the top ``list_len``; truncate to that prefix."""
    kept = []
    for s in sessions:
        if s.length < list_len:
            continue
        if not s.clicks[:list_len].any():
            continue
        kept.append(Session(s.query_id, s.features[:list_len], s.clicks[:list_len]))
    return kept


def fit_feature_stats(train_sessions):
    if not train_sessions:
        raise ValueError("cannot fit feature statistics on an empty training set")
    stacked = np.concatenate([s.features for s in train_sessions], axis=0)
    return FeatureStats(mean=stacked.mean(axis=0), std=stacked.std(axis=0))


def normalize_sessions(sessions, stats):
    return [Session(s.query_id, stats.apply(s.features), s.clicks.copy()) for s in sessions]


def normalize_queries(queries, stats):
    return [AnnotatedQuery(q.query_id, stats.apply(q.features), q.grades.copy()) for q in queries]


def fit_and_apply_normalization(train_sessions, other_session_lists=()):
    """Standardize features to zero mean / unit variance using train-set
    statistics only; near-constant dimensions map to zero."""
    stats = fit_feature_stats(train_sessions)
    train_norm = normalize_sessions(train_sessions, stats)
    others_norm = [normalize_sessions(lst, stats) for lst in other_session_lists]
    return train_norm, others_norm, stats


def save_vector(path, values, header=None):
    """One-line float vector with optional '#' header lines."""
    lines = []
    if header:
        lines.extend(f"# {h}" for h in header)
    lines.append(" ".join(repr(float(v)) for v in values))
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_vector(path):
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            return np.array([float(tok) for tok in line.split()])
    raise DataFormatError(f"{path}: no vector line found")


def atomic_write_text(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)
