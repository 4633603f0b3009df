"""Bag-of-words over ORB descriptors: vocabulary tree, tf-idf vectors, L1
scoring and inverse-index retrieval.

The vocabulary is a k-majority tree over packed 256-bit descriptors. Leaves
are words; each word carries an idf weight.
"""

from __future__ import annotations

import hashlib
import math
import struct
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .ldb import hamming
from .orb import PATTERN_SEED

DEFAULT_BRANCHING = 9
DEFAULT_DEPTH = 3
KMAJORITY_ITERS = 20
DESC_BYTES = 32

KPVC_MAGIC = b"KPVC"
KPVC_VERSION = 1
_NODE_DTYPE = np.dtype([("parent", "<i4"), ("word", "<i4"), ("idf", "<f8"), ("desc", "u1", (DESC_BYTES,))])


class VocabularyMismatch(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class BowVector:
    """Sparse L1-normalised word histogram; ``ids`` sorted ascending."""

    ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.float64))
    vocab: Optional[str] = None

    @classmethod
    def from_dict(cls, entries: dict[int, float], vocab: Optional[str] = None) -> "BowVector":
        ids = np.array(sorted(entries), dtype=np.int64)
        return cls(ids, np.array([float(entries[i]) for i in ids], dtype=np.float64), vocab)

    def to_dict(self) -> dict[int, float]:
        return {int(i): float(w) for i, w in zip(self.ids, self.weights)}

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def empty(self) -> bool:
        return len(self.ids) == 0

    def same_entries(self, other: "BowVector") -> bool:
        return np.array_equal(self.ids, other.ids) and np.array_equal(self.weights, other.weights)


@dataclass(frozen=True, eq=False)
class Vocabulary:
    branching: int
    depth: int
    seed: int
    pattern_seed: int
    n_images: int
    node_parent: np.ndarray  # (n_nodes,) int32, -1 for the root
    node_word: np.ndarray  # (n_nodes,) int32, -1 for interior nodes
    node_desc: np.ndarray  # (n_nodes, 32) uint8
    idf: np.ndarray  # (n_words,) float64

    def __post_init__(self):
        n = len(self.node_parent)
        children = np.full((n, self.branching), -1, dtype=np.int64)
        fill = np.zeros(n, dtype=np.int64)
        for node in range(1, n):
            p = self.node_parent[node]
            children[p, fill[p]] = node
            fill[p] += 1
        object.__setattr__(self, "_children", children)
        object.__setattr__(self, "_hash", hashlib.sha256(self.to_bytes()).hexdigest())

    @property
    def n_words(self) -> int:
        return len(self.idf)

    @property
    def n_nodes(self) -> int:
        return len(self.node_parent)

    @property
    def hash(self) -> str:
        return self._hash

    def words_of(self, descs: np.ndarray) -> np.ndarray:
        """Descend the tree by nearest Hamming centroid (ties -> first child)."""
        cur = np.zeros(len(descs), dtype=np.int64)
        rows = np.arange(len(descs))
        for _ in range(self.depth + 1):
            ch = self._children[cur]
            active = ch[:, 0] >= 0
            if not active.any():
                break
            d = hamming(self.node_desc[ch], descs[:, None, :])
            d[ch < 0] = np.iinfo(np.int64).max
            nxt = ch[rows, np.argmin(d, axis=1)]
            cur = np.where(active, nxt, cur)
        return self.node_word[cur].astype(np.int64)

    # -- persistence ---------------------------------------------------------
    def to_bytes(self) -> bytes:
        nodes = np.zeros(self.n_nodes, dtype=_NODE_DTYPE)
        nodes["parent"] = self.node_parent
        nodes["word"] = self.node_word
        leaf = self.node_word >= 0
        nodes["idf"][leaf] = self.idf[self.node_word[leaf]]
        nodes["desc"] = self.node_desc
        header = struct.pack(
            "<4sIIIQQQII", KPVC_MAGIC, KPVC_VERSION, self.branching, self.depth,
            self.seed & 0xFFFF_FFFF_FFFF_FFFF, self.pattern_seed, self.n_images, self.n_nodes, self.n_words,
        )
        return header + nodes.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Vocabulary":
        hsize = struct.calcsize("<4sIIIQQQII")
        if len(data) < hsize:
            raise ValueError("truncated vocabulary file")
        magic, version, kb, depth, seed, pseed, n_images, n_nodes, n_words = struct.unpack_from("<4sIIIQQQII", data)
        if magic != KPVC_MAGIC:
            raise ValueError(f"not a vocabulary file (magic {magic!r})")
        if version != KPVC_VERSION:
            raise ValueError(f"unsupported vocabulary version {version}")
        nodes = np.frombuffer(data, dtype=_NODE_DTYPE, count=n_nodes, offset=hsize)
        word = nodes["word"].astype(np.int32)
        idf = np.zeros(n_words, dtype=np.float64)
        leaf = word >= 0
        idf[word[leaf]] = nodes["idf"][leaf]
        return cls(kb, depth, seed, pseed, n_images, nodes["parent"].astype(np.int32), word,
                   np.ascontiguousarray(nodes["desc"]), idf)

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls.from_bytes(Path(path).read_bytes())

    def to_json(self) -> dict:
        return {
            "format": "KPVC", "version": KPVC_VERSION, "branching": self.branching, "depth": self.depth,
            "seed": self.seed, "pattern_seed": self.pattern_seed, "n_images": self.n_images,
            "n_words": self.n_words, "hash": self.hash,
            "nodes": [
                {"id": i, "parent": int(p), "word": int(w), "desc": bytes(d).hex(),
                 **({"idf": float(self.idf[w])} if w >= 0 else {})}
                for i, (p, w, d) in enumerate(zip(self.node_parent, self.node_word, self.node_desc))
            ],
        }


def _majority(bits: np.ndarray, labels: np.ndarray, k: int, old: np.ndarray) -> np.ndarray:
    onehot = np.zeros((len(labels), k), dtype=np.float32)
    onehot[np.arange(len(labels)), labels] = 1.0
    counts = onehot.T @ bits
    sizes = onehot.sum(axis=0)
    centers = np.packbits(counts * 2 > sizes[:, None], axis=1)
    empty = sizes == 0
    centers[empty] = old[empty]
    return centers


def _kmajority(descs: np.ndarray, k: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """k-majority clustering with k-means++ seeding; returns (centers, labels)."""
    # k-means++ seeding on Hamming distance
    first = int(rng.integers(len(descs)))
    centers = [descs[first]]
    dmin = hamming(descs, descs[first]).astype(np.float64)
    for _ in range(1, k):
        weights = dmin**2
        total = weights.sum()
        if total == 0:
            break
        nxt = int(rng.choice(len(descs), p=weights / total))
        centers.append(descs[nxt])
        dmin = np.minimum(dmin, hamming(descs, descs[nxt]))
    centers = np.stack(centers)
    bits = np.unpackbits(descs, axis=1).astype(np.float32)
    labels = None
    for _ in range(KMAJORITY_ITERS):
        new_labels = np.argmin(hamming(descs[:, None, :], centers[None]), axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            return centers, labels
        labels = new_labels
        centers = _majority(bits, labels, len(centers), centers)
    return centers, np.argmin(hamming(descs[:, None, :], centers[None]), axis=1)


def train_vocabulary(
    corpus: Sequence[np.ndarray],
    branching: int = DEFAULT_BRANCHING,
    depth: int = DEFAULT_DEPTH,
    seed: int = 0,
    pattern_seed: int = PATTERN_SEED,
) -> Vocabulary:
    """Train a vocabulary tree from per-image descriptor arrays.

    ``corpus`` holds one packed ``(K_i, 32)`` array per training image; the
    image count is the idf document count. Node ids are assigned breadth
    first and each node seeds its own generator from ``(seed, node id)``, so
    the tree depends only on the inputs.
    """
    if branching < 2 or depth < 1:
        raise ValueError("branching must be >= 2 and depth >= 1")
    arrays = [np.asarray(c, dtype=np.uint8).reshape(-1, DESC_BYTES) for c in corpus]
    all_descs = np.concatenate(arrays) if arrays else np.zeros((0, DESC_BYTES), np.uint8)
    if len(all_descs) == 0:
        raise ValueError("empty training corpus")
    seed = int(seed) & 0xFFFF_FFFF_FFFF_FFFF

    parents = [-1]
    descs_of_node = [np.zeros(DESC_BYTES, np.uint8)]
    is_leaf = [False]
    queue = deque([(0, all_descs, 0)])
    while queue:
        node, members, level = queue.popleft()
        uniq = np.unique(members, axis=0)
        if level == depth or (level > 0 and len(uniq) == 1):
            is_leaf[node] = True
            continue
        if len(uniq) <= branching:
            centers = uniq
            labels = np.argmin(hamming(members[:, None, :], uniq[None]), axis=1)
        else:
            centers, labels = _kmajority(members, branching, np.random.default_rng([seed, node]))
        for c in range(len(centers)):
            sub = members[labels == c]
            if len(sub) == 0:
                continue
            child = len(parents)
            parents.append(node)
            descs_of_node.append(centers[c])
            is_leaf.append(False)
            queue.append((child, sub, level + 1))

    is_leaf = np.array(is_leaf)
    node_word = np.full(len(parents), -1, dtype=np.int32)
    node_word[is_leaf] = np.arange(int(is_leaf.sum()), dtype=np.int32)
    vocab = Vocabulary(
        branching, depth, seed, pattern_seed, len(arrays),
        np.array(parents, dtype=np.int32), node_word, np.stack(descs_of_node), np.zeros(int(is_leaf.sum())),
    )
    doc_freq = np.zeros(vocab.n_words, dtype=np.int64)
    for arr in arrays:
        if len(arr):
            doc_freq[np.unique(vocab.words_of(arr))] += 1
    n = len(arrays)
    idf = np.maximum(0.0, np.log(n / (1.0 + doc_freq)))
    return Vocabulary(branching, depth, seed, pattern_seed, n, vocab.node_parent, node_word, vocab.node_desc, idf)


def bow_transform(descs: np.ndarray, vocab: Vocabulary) -> BowVector:
    """tf-idf word histogram, L1-normalised; words with zero idf drop out."""
    descs = np.asarray(descs, dtype=np.uint8).reshape(-1, DESC_BYTES)
    if len(descs) == 0:
        return BowVector(vocab=vocab.hash)
    words, counts = np.unique(vocab.words_of(descs), return_counts=True)
    w = counts / len(descs) * vocab.idf[words]
    keep = w > 0
    words, w = words[keep], w[keep]
    if len(words) == 0:
        return BowVector(vocab=vocab.hash)
    return BowVector(words, w / w.sum(), vocab.hash)


def _lookup(v: BowVector, size: int) -> np.ndarray:
    dense = np.zeros(size)
    dense[v.ids] = v.weights
    return dense


def _score(a: BowVector, a_dense: np.ndarray, b: BowVector) -> float:
    # Terms whose exact sum is sum_w |a_w - b_w| over the union of supports:
    # |a_w - b_w| for w in b, plus a_w for w in a, minus a_w for w in a and b.
    # fsum rounds the exact sum once, so the result does not depend on term
    # order, is symmetric in (a, b), and s(v, v) is exactly 1.
    ab = a_dense[b.ids]
    shared = ab > 0
    if not shared.any():
        return 0.0
    terms = np.concatenate([np.abs(ab - b.weights), a.weights, -ab[shared]])
    s = 1.0 - 0.5 * math.fsum(terms.tolist())
    return min(1.0, max(0.0, s))


def bow_score(a: BowVector, b: BowVector) -> float:
    """L1 score ``1 - |a - b|_1 / 2`` in [0, 1]; 0 if either vector is empty."""
    if a.vocab and b.vocab and a.vocab != b.vocab:
        raise VocabularyMismatch("BoW vectors come from different vocabularies")
    if a.empty or b.empty:
        return 0.0
    size = int(max(a.ids[-1], b.ids[-1])) + 1
    return _score(a, _lookup(a, size), b)


@dataclass(frozen=True, eq=False)
class InverseIndex:
    """word -> (frame indexes ascending, weights), plus the indexed vectors for scoring."""

    postings: dict[int, tuple[np.ndarray, np.ndarray]]
    vectors: tuple[BowVector, ...]

    def reconstruct(self) -> list[dict[int, float]]:
        out: list[dict[int, float]] = [{} for _ in self.vectors]
        for word, (frames, weights) in self.postings.items():
            for f, w in zip(frames, weights):
                out[int(f)][word] = float(w)
        return out


def build_inverse_index(vectors: Sequence[BowVector]) -> InverseIndex:
    frames_of: dict[int, list[int]] = {}
    weights_of: dict[int, list[float]] = {}
    for f, v in enumerate(vectors):
        for word, w in zip(v.ids.tolist(), v.weights.tolist()):
            frames_of.setdefault(word, []).append(f)
            weights_of.setdefault(word, []).append(w)
    postings = {
        word: (np.array(frames_of[word], dtype=np.int64), np.array(weights_of[word], dtype=np.float64))
        for word in sorted(frames_of)
    }
    return InverseIndex(postings, tuple(vectors))


def inverse_index_query(
    index: InverseIndex,
    q: BowVector,
    k_bow: int,
    candidates: Optional[Iterable[int]] = None,
) -> list[tuple[int, float]]:
    """Top ``k_bow`` frames by L1 score among those sharing a word with ``q``.

    ``candidates=None`` means every indexed frame. Frames sharing no word are
    never returned, so the list may be shorter than ``k_bow``. Ordering is
    score descending, then frame index ascending.
    """
    ref = index.vectors[0].vocab if index.vectors else None
    if q.vocab and ref and q.vocab != ref:
        raise VocabularyMismatch("query and index come from different vocabularies")
    if q.empty or k_bow <= 0:
        return []
    lists = [index.postings[w][0] for w in q.ids.tolist() if w in index.postings]
    if not lists:
        return []
    hits = np.unique(np.concatenate(lists))
    if candidates is not None:
        hits = np.intersect1d(hits, np.fromiter(candidates, dtype=np.int64), assume_unique=False)
    size = 1 + max([int(q.ids[-1])] + [int(index.vectors[f].ids[-1]) for f in hits.tolist()])
    q_dense = _lookup(q, size)
    scored = [(-_score(q, q_dense, index.vectors[f]), f) for f in hits.tolist()]
    scored.sort()
    return [(f, -s) for s, f in scored[:k_bow]]
