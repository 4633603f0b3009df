"""Trajectory database: per-frame GIST/LDB/BoW descriptors plus the vocabulary
and inverse index, persisted as a self-describing ``KPDB`` file.

KPDB layout (little-endian)::

    b"KPDB" | u32 format version | u32 header length | header (UTF-8 JSON)
    then sections, each: 4-byte tag | u64 payload length | payload
      META  frame metadata table (structured records)
      GIST  float32 matrix, frames x gist length
      LDB_  packed bits, frames x bytes
      BOW_  u32 entry count per frame, then all word ids (u32), then weights (f64)
      INVX  u32 word count, then per word: u32 word, u32 n, u32 frames[n], f64 weights[n]
      VOCB  embedded KPVC vocabulary
"""

from __future__ import annotations

import json
import os
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import gist as gist_mod
from . import ldb as ldb_mod
from . import orb, preprocess
from .bow import BowVector, InverseIndex, Vocabulary, bow_transform, build_inverse_index
from .model import FrameRecord, GeoCoordinate, Modality, Trajectory, ValidationError, validate_trajectory

KPDB_MAGIC = b"KPDB"
KPDB_VERSION = 1

_META_DTYPE = np.dtype([
    ("index", "<i4"), ("t", "<f8"), ("lat", "<f8"), ("lon", "<f8"),
    ("key", "<i8"), ("view", "<i8"), ("has_key", "u1"), ("has_view", "u1"),
])


class ConfigMismatch(ValueError):
    """Query descriptors were not produced with the database's configuration."""


@dataclass(frozen=True)
class DescriptorConfig:
    gist_modalities: Modality = Modality.RGB
    ldb_modalities: Modality = Modality.RGB_IR_D
    alpha: float = preprocess.DEFAULT_ALPHA
    gist_orientations: tuple[int, ...] = gist_mod.DEFAULT_ORIENTATIONS
    gist_work_size: int = gist_mod.DEFAULT_WORK_SIZE
    gist_blocks: int = gist_mod.DEFAULT_BLOCKS
    ldb_levels: tuple[int, ...] = ldb_mod.GRID_LEVELS
    ldb_patch: int = ldb_mod.PATCH_SIZE
    fast_threshold: float = orb.FAST_THRESHOLD
    max_keypoints: int = orb.MAX_KEYPOINTS

    def __post_init__(self):
        object.__setattr__(self, "gist_modalities", Modality(self.gist_modalities))
        object.__setattr__(self, "ldb_modalities", Modality(self.ldb_modalities))
        object.__setattr__(self, "gist_orientations", tuple(int(n) for n in self.gist_orientations))
        object.__setattr__(self, "ldb_levels", tuple(int(g) for g in self.ldb_levels))

    def to_json(self) -> dict:
        d = asdict(self)
        d["gist_modalities"] = self.gist_modalities.value
        d["ldb_modalities"] = self.ldb_modalities.value
        d["gist_orientations"] = list(self.gist_orientations)
        d["ldb_levels"] = list(self.ldb_levels)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "DescriptorConfig":
        return cls(**d)

    def required_modalities(self) -> Modality:
        order = [Modality.RGB, Modality.RGB_IR, Modality.RGB_IR_D]
        return max(self.gist_modalities, self.ldb_modalities, key=order.index)


@dataclass(frozen=True, eq=False)
class MultiDescriptor:
    gist: gist_mod.GistDescriptor
    ldb: ldb_mod.LdbDescriptor
    bow: BowVector


@dataclass(frozen=True)
class FrameMeta:
    index: int
    timestamp: float
    geo: GeoCoordinate
    key_position_id: Optional[int] = None
    view_tag: Optional[int] = None

    @property
    def is_key_position(self) -> bool:
        return self.key_position_id is not None


class Extractor:
    """Computes the three descriptor channels for a frame under one configuration."""

    def __init__(self, config: DescriptorConfig, vocab: Vocabulary):
        self.config = config
        self.vocab = vocab
        self.bank = gist_mod.build_gabor_bank(
            len(config.gist_orientations), config.gist_orientations, config.gist_work_size
        )
        self.pattern = orb.PATTERN if vocab.pattern_seed == orb.PATTERN_SEED else orb.make_pattern(vocab.pattern_seed)

    def orb_features(self, gray: np.ndarray) -> np.ndarray:
        kps = orb.detect_fast(gray, self.config.fast_threshold, self.config.max_keypoints)
        return orb.orb_describe(gray, kps, pattern=self.pattern)[1]

    def extract(self, frame: FrameRecord, timings: Optional[dict] = None) -> MultiDescriptor:
        cfg = self.config
        t0 = time.perf_counter()
        gray = preprocess.to_grayscale(frame.rgb)
        g = gist_mod.gist_multimodal(frame, self.bank, cfg.gist_modalities, rgb_gray=gray)
        t1 = time.perf_counter()
        l = ldb_mod.ldb_compound(frame, cfg.ldb_modalities, cfg.alpha, cfg.ldb_levels, cfg.ldb_patch)
        t2 = time.perf_counter()
        b = bow_transform(self.orb_features(gray), self.vocab)
        t3 = time.perf_counter()
        if timings is not None:
            timings["gist_ms"] = (t1 - t0) * 1e3
            timings["ldb_ms"] = (t2 - t1) * 1e3
            timings["bow_ms"] = (t3 - t2) * 1e3
        return MultiDescriptor(g, l, b)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("KEYPOS_THREADS", "1")))
    except ValueError:
        return 1


def train_vocabulary_from_trajectory(traj: Trajectory, config: DescriptorConfig = DescriptorConfig(),
                                     branching: int = 9, depth: int = 3, seed: int = 0,
                                     pattern_seed: int = orb.PATTERN_SEED) -> Vocabulary:
    from .bow import train_vocabulary

    pattern = orb.PATTERN if pattern_seed == orb.PATTERN_SEED else orb.make_pattern(pattern_seed)
    corpus = []
    for f in traj.frames:
        gray = preprocess.to_grayscale(f.rgb)
        kps = orb.detect_fast(gray, config.fast_threshold, config.max_keypoints)
        corpus.append(orb.orb_describe(gray, kps, pattern=pattern)[1])
    return train_vocabulary(corpus, branching, depth, seed, pattern_seed)


@dataclass(frozen=True, eq=False)
class TrajectoryDatabase:
    frames: tuple[FrameMeta, ...]
    gist: np.ndarray  # (N, D) float32
    gist_layout: tuple[tuple[str, int, int], ...]
    ldb: np.ndarray  # (N, bytes) uint8
    ldb_bits: int
    ldb_layout: tuple[tuple[str, int, int], ...]
    bow: tuple[BowVector, ...]
    vocab: Vocabulary
    index: InverseIndex
    config: DescriptorConfig
    name: str = "database"

    def __post_init__(self):
        n = len(self.frames)
        if not (len(self.gist) == len(self.ldb) == len(self.bow) == n):
            raise ValueError("descriptor arrays disagree with frame count")
        object.__setattr__(self, "lat", np.array([f.geo.lat for f in self.frames], dtype=np.float64))
        object.__setattr__(self, "lon", np.array([f.geo.lon for f in self.frames], dtype=np.float64))
        object.__setattr__(self, "key_ids", [f.key_position_id for f in self.frames])

    def __len__(self) -> int:
        return len(self.frames)

    def extractor(self) -> Extractor:
        ext = self.__dict__.get("_extractor")
        if ext is None:
            ext = Extractor(self.config, self.vocab)
            object.__setattr__(self, "_extractor", ext)
        return ext

    def descriptor(self, i: int) -> MultiDescriptor:
        """The stored descriptors of frame ``i`` as a query-shaped object."""
        return MultiDescriptor(
            gist_mod.GistDescriptor(self.gist[i], self.gist_layout),
            ldb_mod.LdbDescriptor(self.ldb[i], self.ldb_bits, self.ldb_layout),
            self.bow[i],
        )

    def check_compatible(self, q: MultiDescriptor) -> None:
        if q.gist.layout != self.gist_layout:
            raise ConfigMismatch(f"GIST layout {q.gist.layout} differs from database {self.gist_layout}")
        if q.ldb.layout != self.ldb_layout or q.ldb.n_bits != self.ldb_bits:
            raise ConfigMismatch(f"LDB layout {q.ldb.layout} differs from database {self.ldb_layout}")
        if q.bow.vocab and q.bow.vocab != self.vocab.hash:
            raise ConfigMismatch("query BoW vector built with a different vocabulary")

    # -- persistence ---------------------------------------------------------
    def header(self) -> dict:
        return {
            "format": "KPDB",
            "format_version": KPDB_VERSION,
            "name": self.name,
            "frame_count": len(self),
            "modalities": {"gist": self.config.gist_modalities.value, "ldb": self.config.ldb_modalities.value},
            "config": self.config.to_json(),
            "gist_bank": self.extractor().bank.params(),
            "gist_layout": [list(x) for x in self.gist_layout],
            "gist_length": int(self.gist.shape[1]),
            "ldb_layout": [list(x) for x in self.ldb_layout],
            "ldb_bits": self.ldb_bits,
            "vocabulary_hash": self.vocab.hash,
        }

    def to_bytes(self) -> bytes:
        meta = np.zeros(len(self), dtype=_META_DTYPE)
        for i, f in enumerate(self.frames):
            meta[i] = (f.index, f.timestamp, f.geo.lat, f.geo.lon,
                       f.key_position_id or 0, f.view_tag or 0,
                       f.key_position_id is not None, f.view_tag is not None)
        counts = np.array([len(v) for v in self.bow], dtype="<u4")
        ids = np.concatenate([v.ids for v in self.bow] + [np.zeros(0, np.int64)]).astype("<u4")
        weights = np.concatenate([v.weights for v in self.bow] + [np.zeros(0)]).astype("<f8")
        inv = [struct.pack("<I", len(self.index.postings))]
        for word, (frames, w) in self.index.postings.items():
            inv.append(struct.pack("<II", word, len(frames)))
            inv.append(frames.astype("<u4").tobytes())
            inv.append(w.astype("<f8").tobytes())
        sections = [
            (b"META", meta.tobytes()),
            (b"GIST", self.gist.astype("<f4").tobytes()),
            (b"LDB_", np.ascontiguousarray(self.ldb, dtype=np.uint8).tobytes()),
            (b"BOW_", counts.tobytes() + ids.tobytes() + weights.tobytes()),
            (b"INVX", b"".join(inv)),
            (b"VOCB", self.vocab.to_bytes()),
        ]
        head = json.dumps(self.header(), sort_keys=True, separators=(",", ":")).encode("utf-8")
        out = [KPDB_MAGIC, struct.pack("<II", KPDB_VERSION, len(head)), head]
        for tag, payload in sections:
            out.append(tag + struct.pack("<Q", len(payload)))
            out.append(payload)
        return b"".join(out)

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "TrajectoryDatabase":
        if data[:4] != KPDB_MAGIC:
            raise ValueError(f"not a KPDB file (magic {data[:4]!r})")
        version, hlen = struct.unpack_from("<II", data, 4)
        if version != KPDB_VERSION:
            raise ValueError(f"unsupported KPDB version {version}")
        pos = 12
        header = json.loads(data[pos:pos + hlen].decode("utf-8"))
        pos += hlen
        sections = {}
        while pos < len(data):
            tag = data[pos:pos + 4]
            (length,) = struct.unpack_from("<Q", data, pos + 4)
            pos += 12
            sections[tag] = data[pos:pos + length]
            pos += length

        n = header["frame_count"]
        config = DescriptorConfig.from_json(header["config"])
        meta = np.frombuffer(sections[b"META"], dtype=_META_DTYPE, count=n)
        frames = tuple(
            FrameMeta(int(m["index"]), float(m["t"]), GeoCoordinate(float(m["lat"]), float(m["lon"])),
                      int(m["key"]) if m["has_key"] else None, int(m["view"]) if m["has_view"] else None)
            for m in meta
        )
        gist = np.frombuffer(sections[b"GIST"], dtype="<f4").reshape(n, header["gist_length"]).astype(np.float32)
        ldb = np.frombuffer(sections[b"LDB_"], dtype=np.uint8).reshape(n, -1).copy() if n else np.zeros((0, 0), np.uint8)
        vocab = Vocabulary.from_bytes(sections[b"VOCB"])
        if vocab.hash != header["vocabulary_hash"]:
            raise ValueError("embedded vocabulary does not match header hash")

        raw = sections[b"BOW_"]
        counts = np.frombuffer(raw, dtype="<u4", count=n)
        total = int(counts.sum())
        ids = np.frombuffer(raw, dtype="<u4", count=total, offset=4 * n).astype(np.int64)
        weights = np.frombuffer(raw, dtype="<f8", count=total, offset=4 * n + 4 * total).astype(np.float64)
        ends = np.cumsum(counts)
        bow = tuple(BowVector(ids[e - c:e].copy(), weights[e - c:e].copy(), vocab.hash)
                    for c, e in zip(counts.astype(np.int64), ends.astype(np.int64)))

        raw = sections[b"INVX"]
        (n_words,) = struct.unpack_from("<I", raw, 0)
        p = 4
        postings = {}
        for _ in range(n_words):
            word, k = struct.unpack_from("<II", raw, p)
            p += 8
            fr = np.frombuffer(raw, dtype="<u4", count=k, offset=p).astype(np.int64)
            p += 4 * k
            w = np.frombuffer(raw, dtype="<f8", count=k, offset=p).astype(np.float64)
            p += 8 * k
            postings[int(word)] = (fr, w)

        return cls(
            frames=frames,
            gist=gist,
            gist_layout=tuple(tuple(x) for x in header["gist_layout"]),
            ldb=ldb,
            ldb_bits=header["ldb_bits"],
            ldb_layout=tuple(tuple(x) for x in header["ldb_layout"]),
            bow=bow,
            vocab=vocab,
            index=InverseIndex(postings, bow),
            config=config,
            name=header.get("name", "database"),
        )

    @classmethod
    def load(cls, path: str | Path) -> "TrajectoryDatabase":
        return cls.from_bytes(Path(path).read_bytes())

    def to_json(self) -> dict:
        return {
            "header": self.header(),
            "frames": [
                {"index": f.index, "t": f.timestamp, "lat": f.geo.lat, "lon": f.geo.lon,
                 "key": f.key_position_id, "view": f.view_tag,
                 "gist": [float(x) for x in self.gist[i]],
                 "ldb": bytes(self.ldb[i]).hex(),
                 "bow": {str(k): v for k, v in self.bow[i].to_dict().items()}}
                for i, f in enumerate(self.frames)
            ],
            "inverse_index": {str(w): [[int(a), float(b)] for a, b in zip(fr, wt)]
                              for w, (fr, wt) in self.index.postings.items()},
        }


def build_database(
    traj: Trajectory,
    vocab: Vocabulary,
    config: DescriptorConfig = DescriptorConfig(),
    workers: Optional[int] = None,
    timings: Optional[dict] = None,
) -> TrajectoryDatabase:
    """Extract every frame's descriptors and index them.

    Raises:
        ValidationError: empty or invalid trajectory.
        MissingModalityError: a frame lacks a plane the config needs.
    """
    if len(traj) == 0:
        raise ValidationError("cannot build a database from an empty trajectory")
    validate_trajectory(traj)
    required = config.required_modalities()
    for f in traj.frames:
        f.require(required)

    ext = Extractor(config, vocab)
    t0 = time.perf_counter()
    workers = workers or worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            descs = list(pool.map(ext.extract, traj.frames))
    else:
        descs = [ext.extract(f) for f in traj.frames]
    t1 = time.perf_counter()
    bow = tuple(d.bow for d in descs)
    index = build_inverse_index(bow)
    if timings is not None:
        timings["extract_ms"] = (t1 - t0) * 1e3
        timings["index_ms"] = (time.perf_counter() - t1) * 1e3

    db = TrajectoryDatabase(
        frames=tuple(FrameMeta(f.index, f.timestamp, f.geo, f.key_position_id, f.view_tag) for f in traj.frames),
        gist=np.stack([d.gist.values for d in descs]).astype(np.float32),
        gist_layout=descs[0].gist.layout,
        ldb=np.stack([d.ldb.bits for d in descs]),
        ldb_bits=descs[0].ldb.n_bits,
        ldb_layout=descs[0].ldb.layout,
        bow=bow,
        vocab=vocab,
        index=index,
        config=config,
        name=traj.name,
    )
    object.__setattr__(db, "_extractor", ext)
    return db
