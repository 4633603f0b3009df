"""FAST-9 corners on an image pyramid and rotated-BRIEF (ORB) descriptors."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import cv2
import numpy as np

log = logging.getLogger(__name__)

FAST_THRESHOLD = 20 / 255
MAX_KEYPOINTS = 500
N_LEVELS = 4
SCALE_FACTOR = 1.2
PATCH_RADIUS = 15  # centroid disc and BRIEF sampling radius
EDGE = PATCH_RADIUS
PATTERN_SEED = 0x0B_B1EF  # test-pattern seed, recorded in vocabulary headers
N_TESTS = 256
PATTERN_SIGMA = 31 / 5

# Bresenham circle of radius 3, clockwise from 12 o'clock, as (dx, dy)
CIRCLE = np.array([
    (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
    (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
])
ARC = 9


@dataclass(frozen=True)
class Keypoint:
    x: float  # level-0 pixel coordinates
    y: float
    response: float
    angle: float
    octave: int

    def level_xy(self, scale_factor: float = SCALE_FACTOR) -> tuple[int, int]:
        s = scale_factor**self.octave
        return int(round(self.x / s)), int(round(self.y / s))


def make_pattern(seed: int = PATTERN_SEED, n_tests: int = N_TESTS) -> np.ndarray:
    """Seeded Gaussian test pairs ``(n_tests, 4)`` as (x1, y1, x2, y2), all inside the sampling disc."""
    rng = np.random.default_rng(seed)
    pts = np.rint(rng.normal(0.0, PATTERN_SIGMA, size=(16 * n_tests, 2, 2))).astype(np.int64)
    inside = ((pts**2).sum(axis=2) <= PATCH_RADIUS**2).all(axis=1)
    distinct = (pts[:, 0] != pts[:, 1]).any(axis=1)
    pts = pts[inside & distinct][:n_tests]
    if len(pts) < n_tests:
        raise RuntimeError("pattern sampling exhausted")
    return pts.reshape(n_tests, 4)


PATTERN = make_pattern()

_dv, _du = np.mgrid[-PATCH_RADIUS:PATCH_RADIUS + 1, -PATCH_RADIUS:PATCH_RADIUS + 1]
_disc = _du**2 + _dv**2 <= PATCH_RADIUS**2
DISC_U = _du[_disc]
DISC_V = _dv[_disc]


def pyramid(gray: np.ndarray, n_levels: int = N_LEVELS, scale_factor: float = SCALE_FACTOR) -> list[np.ndarray]:
    h, w = gray.shape
    levels = [gray.astype(np.float32)]
    for lvl in range(1, n_levels):
        s = scale_factor**lvl
        size = (int(round(w / s)), int(round(h / s)))
        levels.append(cv2.resize(levels[0], size, interpolation=cv2.INTER_LINEAR))
    return levels


def _arc_scores(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """FAST-9 score at the given pixels: the largest threshold at which each is still a corner (0 if none)."""
    centre = img[ys, xs]
    d = np.stack([img[ys + dy, xs + dx] - centre for dx, dy in CIRCLE])
    d = np.concatenate([d, d[:ARC - 1]])  # cyclic wrap
    # sliding min/max over 9 consecutive circle pixels: windows of 2, 4, 8, then 9
    lo2, hi2 = np.minimum(d[:-1], d[1:]), np.maximum(d[:-1], d[1:])
    lo4, hi4 = np.minimum(lo2[:-2], lo2[2:]), np.maximum(hi2[:-2], hi2[2:])
    lo8, hi8 = np.minimum(lo4[:-4], lo4[4:]), np.maximum(hi4[:-4], hi4[4:])
    lo9 = np.minimum(lo8[:16], d[8:24])
    hi9 = np.maximum(hi8[:16], d[8:24])
    return np.maximum(np.maximum(lo9.max(axis=0), -hi9.min(axis=0)), 0.0)


def fast_score(img: np.ndarray) -> np.ndarray:
    """FAST-9 score map over the whole image; pixels within 3 px of the border score 0."""
    h, w = img.shape
    ys, xs = np.mgrid[3:h - 3, 3:w - 3]
    score = np.zeros_like(img)
    score[3:h - 3, 3:w - 3] = _arc_scores(img, ys.ravel(), xs.ravel()).reshape(h - 6, w - 6)
    return score


def _compass_candidates(img: np.ndarray, threshold: float) -> tuple[np.ndarray, np.ndarray]:
    """Pixels where >= 2 of the 4 compass pixels pass the test on the same side.

    Any 9 contiguous circle pixels include at least two compass pixels, so
    this is a necessary condition for a corner.
    """
    h, w = img.shape
    centre = img[3:h - 3, 3:w - 3]
    bright = np.zeros(centre.shape, np.uint8)
    dark = np.zeros(centre.shape, np.uint8)
    for dx, dy in CIRCLE[::4]:
        ring = img[3 + dy:h - 3 + dy, 3 + dx:w - 3 + dx]
        diff = ring - centre
        bright += diff > threshold
        dark += diff < -threshold
    ys, xs = np.nonzero((bright >= 2) | (dark >= 2))
    return ys + 3, xs + 3


def centroid_angle(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Intensity-centroid orientation over the radius-15 disc, in [0, 2*pi)."""
    patches = img[ys[:, None] + DISC_V[None], xs[:, None] + DISC_U[None]].astype(np.float64)
    m10 = patches @ DISC_U.astype(np.float64)
    m01 = patches @ DISC_V.astype(np.float64)
    return np.mod(np.arctan2(m01, m10), 2 * np.pi)


def detect_fast(
    gray: np.ndarray,
    threshold: float = FAST_THRESHOLD,
    max_keypoints: int = MAX_KEYPOINTS,
    n_levels: int = N_LEVELS,
    scale_factor: float = SCALE_FACTOR,
) -> list[Keypoint]:
    """FAST-9 keypoints over the pyramid with 3x3 non-maximum suppression.

    Ranked by response (descending), then level-0 y, then x; truncated to
    ``max_keypoints``. Keypoints keep a 15 px margin at their octave.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    found = []
    levels = pyramid(gray, n_levels, scale_factor)
    for octave, img in enumerate(levels):
        h, w = img.shape
        if h <= 2 * EDGE or w <= 2 * EDGE:
            break
        cy, cx = _compass_candidates(img, threshold)
        # non-candidates score <= threshold, so a sparse map suppresses like the full one
        score = np.zeros_like(img)
        score[cy, cx] = _arc_scores(img, cy, cx)
        peak = score == cv2.dilate(score, np.ones((3, 3), np.uint8))
        mask = peak & (score > threshold)
        mask[:EDGE] = mask[h - EDGE:] = False
        mask[:, :EDGE] = mask[:, w - EDGE:] = False
        ys, xs = np.nonzero(mask)
        if len(xs):
            found.append((xs, ys, score[ys, xs].astype(np.float64), np.full(len(xs), octave)))
    if not found:
        return []
    lx, ly, resp, octv = (np.concatenate(c) for c in zip(*found))
    scale = scale_factor ** octv.astype(np.float64)
    x, y = lx * scale, ly * scale
    order = np.lexsort((x, y, -resp))[:max_keypoints]
    angle = np.zeros(len(order))
    for octave in np.unique(octv[order]):
        sel = octv[order] == octave
        pick = order[sel]
        angle[sel] = centroid_angle(levels[octave], lx[pick], ly[pick])
    return [Keypoint(float(x[i]), float(y[i]), float(resp[i]), float(a), int(octv[i]))
            for i, a in zip(order, angle)]


def _smooth(img: np.ndarray) -> np.ndarray:
    return cv2.GaussianBlur(img, (7, 7), 2, borderType=cv2.BORDER_REFLECT_101)


def orb_describe(
    gray: np.ndarray,
    kps: Sequence[Keypoint],
    n_levels: int = N_LEVELS,
    scale_factor: float = SCALE_FACTOR,
    pattern: np.ndarray = PATTERN,
) -> tuple[list[Keypoint], np.ndarray]:
    """Rotated-BRIEF descriptors, 256 bits packed to ``(K, 32) uint8``.

    Returns the keypoints that were described (those violating the border
    margin are dropped and logged) and their descriptors, in input order.
    """
    levels = [_smooth(img) for img in pyramid(gray, n_levels, scale_factor)]
    by_octave: dict[int, list[int]] = {}
    for i, kp in enumerate(kps):
        lx, ly = kp.level_xy(scale_factor)
        if kp.octave >= len(levels):
            continue
        h, w = levels[kp.octave].shape
        if EDGE <= lx < w - EDGE and EDGE <= ly < h - EDGE:
            by_octave.setdefault(kp.octave, []).append(i)
    out = np.zeros((len(kps), N_TESTS // 8), dtype=np.uint8)
    valid = np.zeros(len(kps), dtype=bool)
    for octave, idx in by_octave.items():
        img = levels[octave]
        xy = np.array([kps[i].level_xy(scale_factor) for i in idx])
        ang = np.array([kps[i].angle for i in idx])
        c, s = np.cos(ang)[:, None], np.sin(ang)[:, None]

        def sample(px, py):
            rx = np.rint(c * px - s * py).astype(np.int64)
            ry = np.rint(s * px + c * py).astype(np.int64)
            return img[xy[:, 1:2] + ry, xy[:, 0:1] + rx]

        bits = sample(pattern[:, 0], pattern[:, 1]) < sample(pattern[:, 2], pattern[:, 3])
        out[idx] = np.packbits(bits, axis=1)
        valid[idx] = True
    skipped = len(kps) - int(valid.sum())
    if skipped:
        log.debug("orb_describe: skipped %d keypoints too close to the border", skipped)
    kept = [kp for kp, v in zip(kps, valid) if v]
    return kept, out[valid]


def detect_and_describe(gray: np.ndarray, threshold: float = FAST_THRESHOLD,
                        max_keypoints: int = MAX_KEYPOINTS) -> tuple[list[Keypoint], np.ndarray]:
    return orb_describe(gray, detect_fast(gray, threshold, max_keypoints))
