"""Key-position prediction: GNSS radius filter, per-channel kNN, fusion, voting."""

from __future__ import annotations

import enum
import math
import time
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .bow import inverse_index_query
from .database import ConfigMismatch, MultiDescriptor, TrajectoryDatabase
from .ldb import hamming
from .model import FrameRecord, GeoCoordinate, QueryParams

EARTH_RADIUS_M = 6_371_000.0


class Channel(str, enum.Enum):
    GIST = "gist"
    LDB = "ldb"
    BOW = "bow"


@dataclass(frozen=True)
class MatchCandidate:
    frame_index: int
    channel: Channel
    distance_or_score: float
    is_key_position: bool
    key_position_id: Optional[int] = None


@dataclass(frozen=True)
class MatchSet:
    candidates: tuple[MatchCandidate, ...] = ()

    @property
    def distinct_frames(self) -> tuple[int, ...]:
        return tuple(sorted({c.frame_index for c in self.candidates}))

    def channel(self, ch: Channel) -> list[MatchCandidate]:
        return [c for c in self.candidates if c.channel == ch]

    def __bool__(self) -> bool:
        return bool(self.candidates)

    def __len__(self) -> int:
        return len(self.candidates)


@dataclass(frozen=True)
class PredictionResult:
    matched: bool
    is_key_position: bool
    votes: int
    majority_key_id: Optional[int]
    nearest_index: Optional[int]
    params_used: QueryParams
    match_set: MatchSet = field(default_factory=MatchSet)
    timings: dict = field(default_factory=dict, compare=False)


def geo_distance(a: GeoCoordinate, b: GeoCoordinate) -> float:
    """Haversine great-circle distance in metres."""
    la1, la2 = math.radians(a.lat), math.radians(b.lat)
    dlat = la2 - la1
    dlon = math.radians(b.lon - a.lon)
    h = math.sin(dlat / 2) ** 2 + math.cos(la1) * math.cos(la2) * math.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def geo_distances(lat: np.ndarray, lon: np.ndarray, q: GeoCoordinate) -> np.ndarray:
    la1 = np.radians(lat)
    la2 = math.radians(q.lat)
    dlat = la2 - la1
    dlon = math.radians(q.lon) - np.radians(lon)
    h = np.sin(dlat / 2) ** 2 + np.cos(la1) * math.cos(la2) * np.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def gnss_filter(db: TrajectoryDatabase, q: GeoCoordinate, params: QueryParams) -> np.ndarray:
    """Ascending indexes of database frames within ``params.radius`` of ``q``."""
    if params.legacy_degree_radius:
        d = np.hypot(db.lat - q.lat, db.lon - q.lon)
    else:
        d = geo_distances(db.lat, db.lon, q)
    return np.flatnonzero(d <= params.radius)


def _top_k(values: np.ndarray, frames: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.lexsort((frames, values))[:k]
    return frames[order], values[order]


def gist_knn(db: TrajectoryDatabase, q: MultiDescriptor, candidates: np.ndarray, k: int):
    diff = db.gist[candidates].astype(np.float64) - q.gist.values.astype(np.float64)
    return _top_k(np.sqrt(np.einsum("ij,ij->i", diff, diff)), candidates, k)


def ldb_knn(db: TrajectoryDatabase, q: MultiDescriptor, candidates: np.ndarray, k: int):
    return _top_k(hamming(db.ldb[candidates], q.ldb.bits), candidates, k)


def knn_match(
    db: TrajectoryDatabase,
    q: MultiDescriptor,
    candidates: Sequence[int] | np.ndarray,
    params: QueryParams,
) -> MatchSet:
    """Per-channel nearest neighbours among ``candidates``, concatenated.

    GIST (Euclidean) and LDB (Hamming) are brute force; BoW goes through the
    inverse index and may return fewer than ``k_bow`` frames. Within a channel
    candidates are ordered best first, ties broken by ascending frame index.
    """
    db.check_compatible(q)
    candidates = np.asarray(candidates, dtype=np.int64)
    if len(candidates) == 0:
        return MatchSet()
    if candidates.min() < 0 or candidates.max() >= len(db):
        raise IndexError("candidate frame index outside the database")
    out = []

    def add(frames, values, channel):
        for f, v in zip(frames.tolist() if isinstance(frames, np.ndarray) else frames, values):
            key = db.key_ids[f]
            out.append(MatchCandidate(int(f), channel, float(v), key is not None, key))

    if params.k_gist > 0:
        add(*gist_knn(db, q, candidates, params.k_gist), Channel.GIST)
    if params.k_ldb > 0:
        add(*ldb_knn(db, q, candidates, params.k_ldb), Channel.LDB)
    if params.k_bow > 0:
        hits = inverse_index_query(db.index, q.bow, params.k_bow, candidates)
        add([f for f, _ in hits], [s for _, s in hits], Channel.BOW)
    return MatchSet(tuple(out))


def predict_key_position(ms: MatchSet, params: QueryParams) -> PredictionResult:
    """Vote over distinct matched frames; key position iff votes >= n."""
    keys: dict[int, Optional[int]] = {}
    for c in ms.candidates:
        keys[c.frame_index] = c.key_position_id
    labelled = [k for k in keys.values() if k is not None]
    votes = len(labelled)
    majority = None
    if labelled:
        counts = Counter(labelled)
        best = max(counts.values())
        majority = min(k for k, n in counts.items() if n == best)
    nearest = None
    for ch in (Channel.GIST, Channel.LDB, Channel.BOW):
        first = ms.channel(ch)
        if first:
            nearest = first[0].frame_index
            break
    matched = bool(ms)
    return PredictionResult(
        matched=matched,
        is_key_position=matched and votes >= params.vote_threshold,
        votes=votes,
        majority_key_id=majority,
        nearest_index=nearest,
        params_used=params,
        match_set=ms,
    )


def localize_descriptor(
    db: TrajectoryDatabase,
    q: MultiDescriptor,
    geo: GeoCoordinate,
    params: QueryParams,
    timings: Optional[dict] = None,
) -> PredictionResult:
    """GNSS filter, kNN and voting for an already-extracted query descriptor."""
    if params.modalities is not None and params.modalities != db.config.ldb_modalities:
        raise ConfigMismatch(
            f"query asks for {params.modalities.value}, database built with {db.config.ldb_modalities.value}"
        )
    timings = {} if timings is None else timings
    t0 = time.perf_counter()
    cands = gnss_filter(db, geo, params)
    t1 = time.perf_counter()
    ms = knn_match(db, q, cands, params)
    t2 = time.perf_counter()
    result = predict_key_position(ms, params)
    t3 = time.perf_counter()
    timings.update(filter_ms=(t1 - t0) * 1e3, knn_ms=(t2 - t1) * 1e3, vote_ms=(t3 - t2) * 1e3)
    return replace(result, timings=timings)


def localize(db: TrajectoryDatabase, frame: FrameRecord, params: QueryParams) -> PredictionResult:
    """Full pipeline for one query frame; ``result.timings`` holds per-stage milliseconds."""
    timings: dict = {}
    t0 = time.perf_counter()
    frame.require(db.config.required_modalities())
    q = db.extractor().extract(frame, timings)
    timings["extract_ms"] = (time.perf_counter() - t0) * 1e3
    result = localize_descriptor(db, q, frame.geo, params, timings)
    timings["total_ms"] = (time.perf_counter() - t0) * 1e3
    return result
