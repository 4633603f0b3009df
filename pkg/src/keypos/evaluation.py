"""Metrics and the experiment harness: full-trajectory error, sensitivity,
precision/recall, key-position error, parameter grid search and PR output."""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .database import MultiDescriptor, TrajectoryDatabase
from .localization import MatchSet, PredictionResult, localize_descriptor
from .model import QueryParams, Trajectory

CSV_HEADER = "k_gist,k_ldb,k_bow,radius,n,precision,recall,f1"


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0


@dataclass(frozen=True)
class PrecisionRecall:
    precision: float
    recall: float
    degenerate: bool = False

    def __iter__(self):
        return iter((self.precision, self.recall))

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 0.0 if p + r == 0 else 2 * p * r / (p + r)


@dataclass(frozen=True)
class EvalRecord:
    query_index: int
    matched: bool
    min_index_diff: Optional[int]
    prediction: PredictionResult
    ground_truth_key: bool
    ground_truth_index: int


@dataclass(frozen=True)
class GridRow:
    params: QueryParams
    precision: float
    recall: float
    f1: float
    degenerate: bool = False


def index_error(ms: MatchSet, ground_truth_index: int) -> int:
    """Smallest |frame - truth| over the distinct matched frames."""
    frames = ms.distinct_frames
    if not frames:
        raise EvaluationError("index error of an empty match set")
    return min(abs(f - ground_truth_index) for f in frames)


def full_trajectory_error(records: Sequence[EvalRecord]) -> float:
    """Mean minimal index difference over matched queries (unmatched ones are skipped)."""
    diffs = [r.min_index_diff for r in records if r.matched]
    if not diffs:
        raise EvaluationError("no matched queries")
    return sum(diffs) / len(diffs)


def sensitivity(records: Sequence[EvalRecord]) -> float:
    if not records:
        raise EvaluationError("no query records")
    return sum(r.matched for r in records) / len(records)


def precision_recall(cc: ConfusionCounts) -> PrecisionRecall:
    """TP/(TP+FP) and TP/(TP+FN); a zero denominator yields 0 and sets ``degenerate``."""
    degenerate = False
    if cc.tp + cc.fp == 0:
        precision, degenerate = 0.0, True
    else:
        precision = cc.tp / (cc.tp + cc.fp)
    if cc.tp + cc.fn == 0:
        recall, degenerate = 0.0, True
    else:
        recall = cc.tp / (cc.tp + cc.fn)
    return PrecisionRecall(precision, recall, degenerate)


def confusion_from_run(records: Iterable[EvalRecord]) -> ConfusionCounts:
    tp = fp = fn = tn = 0
    for r in records:
        pred, truth = r.prediction.is_key_position, r.ground_truth_key
        if pred and truth:
            tp += 1
        elif pred:
            fp += 1
        elif truth:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp, fp, fn, tn)


def key_position_error(records: Sequence[EvalRecord]) -> float:
    """Mean index difference over true-positive key-position predictions."""
    diffs = [r.min_index_diff for r in records
             if r.prediction.is_key_position and r.ground_truth_key and r.min_index_diff is not None]
    if not diffs:
        raise EvaluationError("no true-positive key-position predictions")
    return sum(diffs) / len(diffs)


def ground_truth_index(query_index: int, n_db: int, alignment: str = "aligned") -> int:
    """``aligned``: query frame i matches database frame i; ``reverse``: frame N-1-i."""
    if alignment == "aligned":
        return query_index
    if alignment == "reverse":
        return n_db - 1 - query_index
    raise ValueError(f"unknown alignment {alignment!r}")


def extract_queries(db: TrajectoryDatabase, queries: Trajectory) -> list[MultiDescriptor]:
    ext = db.extractor()
    return [ext.extract(f) for f in queries.frames]


def evaluate(
    db: TrajectoryDatabase,
    queries: Trajectory,
    params: QueryParams,
    alignment: str = "aligned",
    descriptors: Optional[Sequence[MultiDescriptor]] = None,
) -> list[EvalRecord]:
    """Localize every query frame and pair the result with its ground truth.

    ``descriptors`` may carry pre-extracted query descriptors (they do not
    depend on ``params``), which is how grid search avoids re-extraction.
    """
    if descriptors is None:
        descriptors = extract_queries(db, queries)
    ground_truth_index(0, len(db), alignment)
    records = []
    for frame, q in zip(queries.frames, descriptors):
        gt = ground_truth_index(frame.index, len(db), alignment)
        pred = localize_descriptor(db, q, frame.geo, params)
        matched = pred.matched
        records.append(EvalRecord(
            query_index=frame.index,
            matched=matched,
            min_index_diff=index_error(pred.match_set, gt) if matched else None,
            prediction=pred,
            ground_truth_key=frame.is_key_position,
            ground_truth_index=gt,
        ))
    return records


def summarize(records: Sequence[EvalRecord]) -> dict:
    """All run-level metrics; metrics undefined for the run are NaN."""
    cc = confusion_from_run(records)
    pr = precision_recall(cc)

    def safe(fn):
        try:
            return fn(records)
        except EvaluationError:
            return math.nan

    return {
        "queries": len(records),
        "error": safe(full_trajectory_error),
        "sensitivity": safe(sensitivity),
        "precision": pr.precision,
        "recall": pr.recall,
        "f1": pr.f1,
        "key_position_error": safe(key_position_error),
        "tp": cc.tp, "fp": cc.fp, "fn": cc.fn, "tn": cc.tn,
    }


def grid_cell(
    db: TrajectoryDatabase,
    queries: Trajectory,
    params: QueryParams,
    alignment: str = "aligned",
    descriptors: Optional[Sequence[MultiDescriptor]] = None,
) -> GridRow:
    pr = precision_recall(confusion_from_run(evaluate(db, queries, params, alignment, descriptors)))
    return GridRow(params, pr.precision, pr.recall, pr.f1, pr.degenerate)


def _best_key(row: GridRow):
    p = row.params
    return (-row.f1, p.vote_threshold, p.radius, p.k_gist, p.k_ldb, p.k_bow)


def grid_search(
    db: TrajectoryDatabase,
    queries: Trajectory,
    k_gist: Sequence[int],
    k_ldb: Sequence[int],
    k_bow: Sequence[int],
    radius: Sequence[float],
    n: Sequence[int],
    legacy_degree_radius: bool = False,
    alignment: str = "aligned",
) -> tuple[list[GridRow], GridRow]:
    """Evaluate the full Cartesian product of parameter axes.

    Rows come back in axis order (k_gist outermost, n innermost). The best row
    maximises F1; ties go to the lexicographically smaller
    (n, radius, k_gist, k_ldb, k_bow).
    """
    axes = {"k_gist": k_gist, "k_ldb": k_ldb, "k_bow": k_bow, "radius": radius, "n": n}
    for name, values in axes.items():
        if len(values) == 0:
            raise ValueError(f"grid axis {name} is empty")
    grid = [
        QueryParams(kg, kl, kb, r, legacy_degree_radius, nn)
        for kg, kl, kb, r, nn in itertools.product(k_gist, k_ldb, k_bow, radius, n)
    ]
    descriptors = extract_queries(db, queries)
    rows = [grid_cell(db, queries, p, alignment, descriptors) for p in grid]
    return rows, min(rows, key=_best_key)


def _fmt(x: float) -> str:
    return repr(float(x))


def results_csv(rows: Sequence[GridRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER.split(","))
    for r in rows:
        p = r.params
        w.writerow([p.k_gist, p.k_ldb, p.k_bow, _fmt(p.radius), p.vote_threshold,
                    _fmt(r.precision), _fmt(r.recall), _fmt(r.f1)])
    return buf.getvalue()


def pr_scatter_svg(rows: Sequence[GridRow], size: int = 400) -> str:
    pad = 40
    span = size - 2 * pad
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="none" stroke="black"/>',
        f'<text x="{size / 2}" y="{size - 8}" text-anchor="middle" font-size="12">recall</text>',
        f'<text x="12" y="{size / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 12 {size / 2})">precision</text>',
    ]
    for r in rows:
        cx = pad + r.recall * span
        cy = pad + (1 - r.precision) * span
        parts.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="3" fill="steelblue"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_results(rows: Sequence[GridRow], path: str | Path) -> tuple[Path, Path]:
    """Write ``<path>`` (CSV) and the matching ``.svg`` PR scatter."""
    path = Path(path)
    if path.suffix.lower() != ".csv":
        path = path.with_suffix(".csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(results_csv(rows), encoding="utf-8")
    svg = path.with_suffix(".svg")
    svg.write_text(pr_scatter_svg(rows), encoding="utf-8")
    return path, svg
