import hashlib
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from keypos import orb
from keypos.orb import (
    CIRCLE,
    PATTERN,
    Keypoint,
    centroid_angle,
    detect_fast,
    fast_score,
    make_pattern,
    orb_describe,
    pyramid,
)

BRESENHAM_16 = [(0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
                (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3)]


def _score_loop(img, y, x):
    """Largest t for which some 9-arc is entirely brighter or darker than centre by more than t."""
    d = [img[y + dy, x + dx] - img[y, x] for dx, dy in BRESENHAM_16]
    best = 0.0
    for start in range(16):
        arc = [d[(start + k) % 16] for k in range(9)]
        best = max(best, min(arc), min(-v for v in arc))
    return best


def _is_corner(img, y, x, t):
    return _score_loop(img, y, x) > t


def _textured(seed=0, h=120, w=160):
    rng = np.random.default_rng(seed)
    img = np.zeros((h, w))
    for _ in range(40):
        y, x = rng.integers(0, h), rng.integers(0, w)
        img[y:y + rng.integers(4, 20), x:x + rng.integers(4, 20)] = rng.random()
    return img


def _detect_oracle(gray, threshold, max_kp):
    """Full-map FAST with 3x3 peak test, margin, ranking and truncation."""
    rows = []
    for octave, img in enumerate(pyramid(gray)):
        h, w = img.shape
        if h <= 30 or w <= 30:
            break
        score = np.array([[_score_loop(img, y, x) if 3 <= y < h - 3 and 3 <= x < w - 3 else 0.0
                           for x in range(w)] for y in range(h)])
        padded = np.pad(score, 1, constant_values=-np.inf)
        s = orb.SCALE_FACTOR ** octave
        for y in range(15, h - 15):
            for x in range(15, w - 15):
                v = score[y, x]
                if v > threshold and v >= padded[y:y + 3, x:x + 3].max():
                    rows.append((-v, y * s, x * s, octave))
    rows.sort()
    return [(x, y, -nv, o) for nv, y, x, o in rows[:max_kp]]


def test_circle_is_bresenham_radius_3():
    assert [tuple(map(int, p)) for p in CIRCLE] == BRESENHAM_16


def test_pattern_frozen():
    digest = hashlib.sha256(PATTERN.astype("<i8").tobytes()).hexdigest()
    assert digest == "508e5dfcee40617cac35431c06e589044c175e044a056f9fe66c9163a7ddfc88"
    assert PATTERN.shape == (256, 4)
    assert ((PATTERN[:, :2] ** 2).sum(1) <= 225).all() and ((PATTERN[:, 2:] ** 2).sum(1) <= 225).all()
    assert np.array_equal(make_pattern(orb.PATTERN_SEED), PATTERN)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=10, deadline=None)
def test_fast_score_matches_loop(seed):
    img = np.random.default_rng(seed).random((14, 14))
    fs = fast_score(img)
    for y in range(3, 11):
        for x in range(3, 11):
            assert fs[y, x] == _score_loop(img, y, x)


def test_detect_matches_full_map_oracle():
    gray = _textured(1, 60, 70)
    got = [(k.x, k.y, k.response, k.octave) for k in detect_fast(gray, 0.05, 40)]
    want = _detect_oracle(gray, 0.05, 40)
    assert len(got) == len(want)
    for g, w in zip(got, want):
        assert g[0] == pytest.approx(w[0]) and g[1] == pytest.approx(w[1])
        assert g[2] == w[2] and g[3] == w[3]


def test_constant_image_has_no_keypoints():
    assert detect_fast(np.full((240, 320), 0.4)) == []


def test_bright_disc_rim():
    h, w = 120, 160
    yy, xx = np.mgrid[0:h, 0:w]
    img = np.where((yy - 60) ** 2 + (xx - 80) ** 2 <= 12 ** 2, 0.9, 0.1)
    kps = detect_fast(img)
    assert kps
    on_rim = [k for k in kps if k.octave == 0 and abs(math.hypot(k.x - 80, k.y - 60) - 12) <= 4]
    assert on_rim
    for k in on_rim:
        assert _is_corner(img, int(k.y), int(k.x), orb.FAST_THRESHOLD)


def test_cap_and_order():
    kps = detect_fast(_textured(2, 240, 320), max_keypoints=10)
    assert len(kps) <= 10
    keys = [(-k.response, k.y, k.x) for k in kps]
    assert keys == sorted(keys)


def test_keypoint_invariants():
    gray = _textured(3, 240, 320)
    levels = pyramid(gray)
    for k in detect_fast(gray):
        lx, ly = k.level_xy()
        h, w = levels[k.octave].shape
        assert 15 <= lx < w - 15 and 15 <= ly < h - 15
        assert 0 <= k.angle < 2 * math.pi


def test_threshold_positive():
    with pytest.raises(ValueError):
        detect_fast(np.zeros((64, 64)), threshold=0)


def test_centroid_right_half():
    img = np.zeros((41, 41))
    img[:, 21:] = 1.0  # all mass to the right of the centre column
    ang = centroid_angle(img, np.array([20]), np.array([20]))[0]
    # oracle moments over the radius-15 disc
    m10 = m01 = 0.0
    for v in range(-15, 16):
        for u in range(-15, 16):
            if u * u + v * v <= 225:
                m10 += u * img[20 + v, 20 + u]
                m01 += v * img[20 + v, 20 + u]
    assert math.atan2(m01, m10) == pytest.approx(0.0, abs=1e-12)
    assert min(ang, 2 * math.pi - ang) <= 0.05


def test_describe_shape_and_determinism():
    gray = _textured(4, 240, 320)
    kps = detect_fast(gray)
    k1, d1 = orb_describe(gray, kps)
    k2, d2 = orb_describe(gray, kps)
    assert d1.shape == (len(k1), 32) and d1.dtype == np.uint8
    assert np.unpackbits(d1, axis=1).shape[1] == 256
    assert np.array_equal(d1, d2) and k1 == k2


def test_describe_skips_border_keypoints():
    gray = _textured(5, 240, 320)
    good = detect_fast(gray, max_keypoints=3)
    bad = Keypoint(2.0, 2.0, 1.0, 0.0, 0)
    kept, descs = orb_describe(gray, [bad] + good)
    assert kept == good and len(descs) == len(good)


def test_rotation_steers_pattern():
    # a keypoint described at angle a on an image equals the same point on the image rotated by -a at angle 0
    gray = _textured(6, 101, 101)
    kp0 = Keypoint(50.0, 50.0, 1.0, 0.0, 0)
    kp90 = Keypoint(50.0, 50.0, 1.0, math.pi / 2, 0)
    rot = np.rot90(gray, k=-1).copy()  # clockwise quarter turn about the centre
    _, d_rot = orb_describe(rot, [kp90], n_levels=1)
    _, d_ref = orb_describe(gray, [kp0], n_levels=1)
    assert np.array_equal(d_rot, d_ref)
