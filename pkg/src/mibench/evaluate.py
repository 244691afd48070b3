"""Within-session cross-validation and ROC-AUC scoring.

Folds for a session depend only on (run seed, dataset, subject, session) so
every pipeline sees the same splits.  Cells that fail are kept as missing
rows instead of being scored zero.
"""
from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
import struct
import time
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .datamodel import EpochSet, validate_epochset
from .errors import BenchError, MalformedCsv, SingleClassFold, TooFewTrials

log = logging.getLogger(__name__)

N_FOLDS = 5
CSV_HEADER = ("dataset", "subject", "session", "pipeline", "score", "n_trials")


def hash64(*parts) -> int:
    """Stable 64-bit hash of a tuple of strings/ints (blake2b)."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        data = str(part).encode("utf-8")
        h.update(struct.pack("<Q", len(data)))
        h.update(data)
    return int.from_bytes(h.digest(), "little")


def fold_seed(run_seed: int, dataset_id: str, subject_id: str, session_id: str) -> int:
    return hash64(run_seed, dataset_id, subject_id, session_id)


def stratified_kfold(labels, k: int = N_FOLDS, seed: int = 0):
    """Stratified k-fold split as a list of (train, test) index arrays.

    Each class is shuffled with a generator seeded by ``seed`` and dealt
    round-robin into folds; the dealing position carries over from one class
    to the next so fold sizes stay within one trial of each other.
    """
    y = np.asarray(labels)
    classes, counts = np.unique(y, return_counts=True)
    if k < 2:
        raise ValueError("k must be at least 2")
    if np.any(counts < k):
        raise TooFewTrials(f"each class needs >= {k} trials, got {dict(zip(classes.tolist(), counts.tolist()))}")
    rng = np.random.Generator(np.random.PCG64(seed))
    fold_of = np.empty(y.size, dtype=np.int64)
    offset = 0
    for c in classes:
        idx = np.flatnonzero(y == c)
        idx = idx[rng.permutation(idx.size)]
        fold_of[idx] = (offset + np.arange(idx.size)) % k
        offset += idx.size
    all_idx = np.arange(y.size)
    return [(all_idx[fold_of != f], all_idx[fold_of == f]) for f in range(k)]


def folds_digest(folds) -> str:
    h = hashlib.blake2b(digest_size=8)
    for _, test in folds:
        h.update(np.asarray(test, dtype="<i8").tobytes())
        h.update(b"|")
    return h.hexdigest()


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(positive score > negative score), ties count 1/2."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassFold("ROC-AUC needs both classes")
    ranks = rankdata(s, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def cross_val_auc(pipeline, X, y, folds) -> float:
    """Mean test-fold AUC of ``pipeline`` refit on each training fold."""
    aucs = []
    for train, test in folds:
        model = pipeline.fit(X[:, train], y[train])
        aucs.append(roc_auc(model.decision_function(X[:, test]), y[test]))
    return float(np.mean(aucs))


@dataclass(frozen=True)
class ScoreRow:
    dataset: str
    subject: str
    session: str
    pipeline: str
    score: float | None
    n_trials: int

    @property
    def key(self):
        return (self.dataset, self.subject, self.session, self.pipeline)


def evaluate_session(views: dict, pipelines, k: int = N_FOLDS, seed: int = 0, context: str = ""):
    """Score every pipeline on one session.

    ``views`` maps a band-set key to an ``EpochSet`` list (one per band)
    sharing labels; each pipeline picks its view via ``pipeline.view``.
    Returns {pipeline name: score or None}.
    """
    first = next(iter(views.values()))[0]
    validate_epochset(first, training=True)
    y = first.labels
    folds = stratified_kfold(y, k, seed)
    digest = folds_digest(folds)
    out = {}
    for pipe in pipelines:
        X = np.stack([e.data for e in views[pipe.view]])
        start = time.perf_counter()
        try:
            score = cross_val_auc(pipe.with_seed(seed), X, y, folds)
        except (BenchError, np.linalg.LinAlgError, ValueError) as exc:
            log.warning("%s %s failed: %s", context, pipe.name, exc)
            score = None
        log.info(
            "cell %s pipeline=%s score=%s folds=%s wall=%.3fs",
            context, pipe.name, "missing" if score is None else f"{score:.6f}",
            digest, time.perf_counter() - start,
        )
        out[pipe.name] = score
    return out


def evaluate_subject(session_views: dict, pipelines, k: int = N_FOLDS, run_seed: int = 0,
                     dataset_id: str = "", subject_id: str = "") -> list[ScoreRow]:
    """Cross-validate every pipeline on every session of one subject."""
    rows = []
    for session_id, views in session_views.items():
        seed = fold_seed(run_seed, dataset_id, subject_id, session_id)
        n_trials = next(iter(views.values()))[0].n_trials
        scores = evaluate_session(views, pipelines, k, seed, f"{dataset_id}/{subject_id}/{session_id}")
        for name, score in scores.items():
            rows.append(ScoreRow(dataset_id, subject_id, session_id, name, score, n_trials))
    return rows


def aggregate_sessions(rows) -> list[tuple[str, str, str, float | None, bool]]:
    """Average available session scores per (dataset, subject, pipeline).

    Returns rows (dataset, subject, pipeline, mean score or None, flagged),
    where ``flagged`` marks a mean taken over fewer sessions than exist.
    """
    groups: dict[tuple, list] = {}
    for r in rows:
        groups.setdefault((r.dataset, r.subject, r.pipeline), []).append(r.score)
    out = []
    for key in sorted(groups):
        vals = [v for v in groups[key] if v is not None and math.isfinite(v)]
        mean = float(np.mean(vals)) if vals else None
        out.append((*key, mean, len(vals) < len(groups[key])))
    return out


def sort_rows(rows):
    return sorted(rows, key=lambda r: r.key)


def write_scores_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(scores_csv_text(rows))


def scores_csv_text(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in sort_rows(rows):
        w.writerow([r.dataset, r.subject, r.session, r.pipeline,
                    "" if r.score is None else f"{r.score:.6f}", r.n_trials])
    return buf.getvalue()


def read_scores_csv(path) -> list[ScoreRow]:
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_HEADER:
            raise MalformedCsv(f"expected header {','.join(CSV_HEADER)}, got {header}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(CSV_HEADER):
                raise MalformedCsv(f"line {lineno}: expected {len(CSV_HEADER)} fields")
            try:
                score = float(rec[4]) if rec[4] != "" else None
                n_trials = int(rec[5])
            except ValueError as exc:
                raise MalformedCsv(f"line {lineno}: {exc}") from None
            if score is not None and not 0.0 <= score <= 1.0:
                raise MalformedCsv(f"line {lineno}: score {score} outside [0, 1]")
            rows.append(ScoreRow(rec[0], rec[1], rec[2], rec[3], score, n_trials))
    return rows
