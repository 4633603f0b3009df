import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from keypos.bow import (
    BowVector,
    Vocabulary,
    VocabularyMismatch,
    bow_score,
    bow_transform,
    build_inverse_index,
    inverse_index_query,
    train_vocabulary,
)
from keypos.ldb import hamming


def _corpus(seed=0, images=12, per=60):
    rng = np.random.default_rng(seed)
    protos = rng.integers(0, 256, (20, 32), dtype=np.uint8)
    out = []
    for _ in range(images):
        pick = protos[rng.integers(0, 20, per)]
        flips = rng.random((per, 256)) < 0.05
        out.append(pick ^ np.packbits(flips, axis=1))
    return out


def _naive_score(a: dict, b: dict) -> float:
    words = set(a) | set(b)
    return 1 - 0.5 * sum(abs(a.get(w, 0.0) - b.get(w, 0.0)) for w in words)


def _random_vector(rng, n_words=40, vocab="v"):
    k = int(rng.integers(1, 8))
    ids = rng.choice(n_words, k, replace=False)
    w = rng.random(k) + 0.01
    return BowVector.from_dict(dict(zip(ids.tolist(), (w / w.sum()).tolist())), vocab)


@pytest.fixture(scope="module")
def vocab():
    return train_vocabulary(_corpus(), branching=4, depth=2, seed=3)


class TestVocabulary:
    def test_word_bound(self, vocab):
        assert 1 <= vocab.n_words <= 16
        big = train_vocabulary(_corpus(1, images=20, per=200), 9, 3, seed=0)
        assert big.n_words <= 729

    def test_single_unique_descriptor(self):
        d = np.tile(np.arange(32, dtype=np.uint8), (50, 1))
        v = train_vocabulary([d[:25], d[25:]], 9, 3)
        assert v.n_words == 1
        assert bow_transform(d, v).empty  # word present in every image: idf 0

    def test_deterministic(self):
        a = train_vocabulary(_corpus(), 4, 2, seed=11)
        b = train_vocabulary(_corpus(), 4, 2, seed=11)
        assert a.to_bytes() == b.to_bytes() and a.hash == b.hash

    def test_idf(self, vocab):
        corpus = _corpus()
        assert (vocab.idf >= 0).all()
        df = np.zeros(vocab.n_words)
        for img in corpus:
            df[np.unique(vocab.words_of(img))] += 1
        assert np.allclose(vocab.idf, np.maximum(0, np.log(len(corpus) / (1 + df))))

    def test_tree_navigable(self, vocab):
        # every word is a leaf whose parent chain reaches the root within depth steps
        for node in np.flatnonzero(vocab.node_word >= 0):
            steps, cur = 0, node
            while cur != 0:
                cur = vocab.node_parent[cur]
                steps += 1
            assert 1 <= steps <= vocab.depth

    def test_every_descriptor_maps_to_a_word(self, vocab):
        rng = np.random.default_rng(9)
        words = vocab.words_of(rng.integers(0, 256, (300, 32), dtype=np.uint8))
        assert ((words >= 0) & (words < vocab.n_words)).all()

    def test_greedy_descent(self, vocab):
        rng = np.random.default_rng(10)
        descs = rng.integers(0, 256, (50, 32), dtype=np.uint8)
        children = {}
        for n, p in enumerate(vocab.node_parent):
            if p >= 0:
                children.setdefault(int(p), []).append(n)
        for d, w in zip(descs, vocab.words_of(descs)):
            cur = 0
            while cur in children:
                kids = children[cur]
                cur = kids[int(np.argmin([int(hamming(vocab.node_desc[k], d)) for k in kids]))]
            assert vocab.node_word[cur] == w

    def test_persistence(self, vocab, tmp_path):
        vocab.save(tmp_path / "v.kpvc")
        back = Vocabulary.load(tmp_path / "v.kpvc")
        assert back.to_bytes() == vocab.to_bytes() and back.hash == vocab.hash
        assert (tmp_path / "v.kpvc").read_bytes()[:4] == b"KPVC"
        assert vocab.to_json()["pattern_seed"] == vocab.pattern_seed

    def test_bad_file(self):
        with pytest.raises(ValueError):
            Vocabulary.from_bytes(b"XXXX" + bytes(60))

    @pytest.mark.parametrize("args", [([], 9, 3), ([np.zeros((0, 32), np.uint8)], 9, 3), (_corpus(), 1, 3), (_corpus(), 9, 0)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            train_vocabulary(*args)


class TestTransform:
    def test_empty(self, vocab):
        assert bow_transform(np.zeros((0, 32), np.uint8), vocab).empty

    def test_normalised(self, vocab):
        v = bow_transform(_corpus(5)[0], vocab)
        assert not v.empty and (v.weights > 0).all()
        assert abs(v.weights.sum() - 1) <= 1e-9
        assert list(v.ids) == sorted(v.ids)

    def test_one_word(self, vocab):
        leafs = np.flatnonzero((vocab.node_word >= 0))
        w_node = next(n for n in leafs if vocab.idf[vocab.node_word[n]] > 0)
        d = np.tile(vocab.node_desc[w_node], (7, 1))
        v = bow_transform(d, vocab)
        assert v.to_dict() == {int(vocab.node_word[w_node]): 1.0}

    def test_tf_idf(self, vocab):
        d = _corpus(6)[0]
        words = vocab.words_of(d)
        raw = {}
        for w in words.tolist():
            raw[w] = raw.get(w, 0) + vocab.idf[w] / len(words)
        raw = {w: x for w, x in raw.items() if x > 0}
        total = sum(raw.values())
        got = bow_transform(d, vocab).to_dict()
        assert got.keys() == raw.keys()
        for w in raw:
            assert got[w] == pytest.approx(raw[w] / total, abs=1e-12)


class TestScore:
    def test_examples(self):
        a = BowVector.from_dict({1: 0.5, 2: 0.5})
        b = BowVector.from_dict({1: 1.0})
        assert bow_score(a, b) == 0.5
        assert bow_score(BowVector.from_dict({1: 1.0}), BowVector.from_dict({2: 1.0})) == 0.0
        assert bow_score(a, a) == 1.0

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=80)
    def test_properties(self, seed):
        rng = np.random.default_rng(seed)
        a, b = _random_vector(rng), _random_vector(rng)
        s = bow_score(a, b)
        assert 0.0 <= s <= 1.0
        assert s == bow_score(b, a)
        assert bow_score(a, a) == 1.0
        if not set(a.to_dict()) & set(b.to_dict()):
            assert s == 0.0
        assert s == pytest.approx(_naive_score(a.to_dict(), b.to_dict()), abs=1e-12)

    def test_empty_scores_zero(self):
        assert bow_score(BowVector(), BowVector.from_dict({1: 1.0})) == 0.0

    def test_vocab_mismatch(self):
        with pytest.raises(VocabularyMismatch):
            bow_score(BowVector.from_dict({1: 1.0}, "a"), BowVector.from_dict({1: 1.0}, "b"))


class TestInverseIndex:
    def test_single_posting(self):
        idx = build_inverse_index([BowVector.from_dict({3: 1.0})])
        assert list(idx.postings) == [3]
        frames, weights = idx.postings[3]
        assert frames.tolist() == [0] and weights.tolist() == [1.0]

    def test_empty_vectors(self):
        assert build_inverse_index([BowVector() for _ in range(5)]).postings == {}

    def test_reconstruct(self):
        rng = np.random.default_rng(0)
        vecs = [_random_vector(rng) for _ in range(50)]
        idx = build_inverse_index(vecs)
        assert idx.reconstruct() == [v.to_dict() for v in vecs]
        for frames, _ in idx.postings.values():
            assert (np.diff(frames) > 0).all()

    def test_exact_query(self):
        rng = np.random.default_rng(1)
        vecs = [_random_vector(rng) for _ in range(20)]
        assert inverse_index_query(build_inverse_index(vecs), vecs[7], 1) == [(7, 1.0)]

    def test_empty_query(self):
        idx = build_inverse_index([BowVector.from_dict({1: 1.0})])
        assert inverse_index_query(idx, BowVector(), 5) == []

    def test_no_zero_padding(self):
        idx = build_inverse_index([BowVector.from_dict({1: 1.0}), BowVector.from_dict({2: 1.0})])
        assert inverse_index_query(idx, BowVector.from_dict({1: 1.0}), 5) == [(0, 1.0)]

    def test_vocab_mismatch(self):
        idx = build_inverse_index([BowVector.from_dict({1: 1.0}, "a")])
        with pytest.raises(VocabularyMismatch):
            inverse_index_query(idx, BowVector.from_dict({9: 1.0}, "b"), 3)

    @given(st.integers(0, 2**32 - 1), st.integers(1, 12))
    @settings(max_examples=40, deadline=None)
    def test_matches_brute_force(self, seed, k):
        rng = np.random.default_rng(seed)
        vecs = [_random_vector(rng, n_words=25) for _ in range(200)]
        idx = build_inverse_index(vecs)
        q = _random_vector(rng, n_words=25)
        cands = sorted(rng.choice(200, int(rng.integers(1, 200)), replace=False).tolist())
        sharing = [f for f in cands if set(vecs[f].to_dict()) & set(q.to_dict())]
        want = [(f, -s) for s, f in sorted((-bow_score(q, vecs[f]), f) for f in sharing)][:k]
        assert inverse_index_query(idx, q, k, cands) == want
