"""Seeded synthetic trajectories for deterministic testing.

A trajectory is rendered from wide procedural "strips": ordinary frames are
successive crops of one street strip (so temporal neighbours overlap
heavily), while each key position has its own facade strip and its frames are
different views (crops) of that facade. Depth and infrared planes are painted
from the same primitives, so all modalities agree geometrically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import cv2
import numpy as np

from .model import FRAME_HEIGHT, FRAME_WIDTH, FrameRecord, GeoCoordinate, Trajectory

EARTH_RADIUS_M = 6_371_000.0

# Start of the default polyline (any plausible urban location works).
DEFAULT_ORIGIN = (30.2650, 120.1200)

_PATH_STEP = 6  # px of strip scrolled between consecutive ordinary frames
_VIEW_STEP = 10  # px between consecutive views of a key position
_COLOR_LO, _COLOR_HI = 24, 188  # keeps x1.3 brightness and x0.5 dimming unclipped


@dataclass(frozen=True)
class SynthSpec:
    frame_count: int
    key_positions: tuple[tuple[int, int, int], ...] = ()  # (first, last inclusive, key id)
    geo_path: tuple[tuple[float, float], ...] = ()
    noise_seed: int = 0
    name: str = "synthetic"

    @classmethod
    def default(cls, frame_count: int, seed: int = 0, n_keys: int = 3) -> "SynthSpec":
        """Evenly spaced key spans on a bent polyline about 1 m per frame long."""
        span = max(5, frame_count // 12)
        keys = []
        for j in range(n_keys):
            centre = int(round((j + 1) * frame_count / (n_keys + 1)))
            first = max(0, centre - span // 2)
            last = min(frame_count - 1, first + span - 1)
            keys.append((first, last, j + 1))
        return cls(
            frame_count=frame_count,
            key_positions=tuple(keys),
            geo_path=default_geo_path(float(max(frame_count, 1))),
            noise_seed=seed,
        )


def default_geo_path(length_m: float, origin=DEFAULT_ORIGIN) -> tuple[tuple[float, float], ...]:
    """An L-shaped path: 60% north, then 40% east."""
    lat0, lon0 = origin
    north = 0.6 * length_m
    east = length_m - north
    dlat = math.degrees(north / EARTH_RADIUS_M)
    lat1 = lat0 + dlat
    dlon = math.degrees(east / (EARTH_RADIUS_M * math.cos(math.radians(lat1))))
    return ((lat0, lon0), (lat1, lon0), (lat1, lon0 + dlon))


def _haversine(a, b) -> float:
    la1, lo1, la2, lo2 = map(math.radians, (a[0], a[1], b[0], b[1]))
    h = math.sin((la2 - la1) / 2) ** 2 + math.cos(la1) * math.cos(la2) * math.sin((lo2 - lo1) / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(math.sqrt(h))


def interpolate_path(path: Sequence[tuple[float, float]], n: int) -> list[tuple[float, float]]:
    """``n`` points evenly spaced by arc length along a lat/lon polyline."""
    if len(path) == 0:
        path = default_geo_path(float(max(n, 1)))
    if len(path) == 1 or n == 1:
        return [tuple(path[0])] * n
    seg = [_haversine(path[i], path[i + 1]) for i in range(len(path) - 1)]
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    out = []
    for i in range(n):
        s = total * i / (n - 1)
        j = int(np.searchsorted(cum, s, side="right") - 1)
        j = min(max(j, 0), len(seg) - 1)
        u = 0.0 if seg[j] == 0 else (s - cum[j]) / seg[j]
        a, b = path[j], path[j + 1]
        out.append((a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])))
    return out


@dataclass
class _Strip:
    rgb: np.ndarray
    depth: np.ndarray
    ir: np.ndarray

    def crop(self, x0: int):
        sl = slice(x0, x0 + FRAME_WIDTH)
        return self.rgb[:, sl].copy(), self.depth[:, sl].copy(), self.ir[:, sl].copy()


def _color(rng) -> tuple[int, int, int]:
    return tuple(int(v) for v in rng.integers(_COLOR_LO, _COLOR_HI + 1, size=3))


def _paint(strip: _Strip, draw, rng) -> None:
    color = _color(rng)
    depth = int(rng.integers(1500, 9000))
    ir = int(rng.integers(30, 220))
    draw(strip.rgb, color)
    draw(strip.depth, depth)
    draw(strip.ir, ir)


def _background(width: int, rng) -> _Strip:
    top = np.array(_color(rng), dtype=np.float64)
    bottom = np.array(_color(rng), dtype=np.float64)
    ramp = np.linspace(0.0, 1.0, FRAME_HEIGHT)[:, None, None]
    rgb = np.broadcast_to(top * (1 - ramp) + bottom * ramp, (FRAME_HEIGHT, width, 3))
    depth_col = np.linspace(9500, 1200, FRAME_HEIGHT)[:, None]
    ir_col = np.linspace(60, 140, FRAME_HEIGHT)[:, None]
    return _Strip(
        rgb=np.ascontiguousarray(np.round(rgb).astype(np.uint8)),
        depth=np.ascontiguousarray(np.broadcast_to(np.round(depth_col), (FRAME_HEIGHT, width)).astype(np.uint16)),
        ir=np.ascontiguousarray(np.broadcast_to(np.round(ir_col), (FRAME_HEIGHT, width)).astype(np.uint8)),
    )


def _street_strip(width: int, rng) -> _Strip:
    strip = _background(width, rng)
    n_shapes = width // 3
    for _ in range(n_shapes):
        kind = int(rng.integers(0, 3))
        cx = int(rng.integers(-20, width + 20))
        cy = int(rng.integers(0, FRAME_HEIGHT))
        size = int(rng.integers(6, 40))
        if kind == 0:
            x1, y1 = cx + int(rng.integers(4, 2 * size)), cy + int(rng.integers(4, 2 * size))
            _paint(strip, lambda img, c: cv2.rectangle(img, (cx, cy), (x1, y1), c, -1, cv2.LINE_8), rng)
        elif kind == 1:
            axes = (size, int(rng.integers(4, size + 1)))
            angle = int(rng.integers(0, 180))
            _paint(strip, lambda img, c: cv2.ellipse(img, (cx, cy), axes, angle, 0, 360, c, -1, cv2.LINE_8), rng)
        else:
            pts = np.array([[cx + int(rng.integers(-size, size)), cy + int(rng.integers(-size, size))]
                            for _ in range(3)], dtype=np.int32)
            _paint(strip, lambda img, c: cv2.fillPoly(img, [pts], c, cv2.LINE_8), rng)
    return strip


def _facade_strip(width: int, rng) -> _Strip:
    strip = _background(width, rng)
    cell_w = int(rng.integers(14, 26))
    cell_h = int(rng.integers(14, 26))
    win_w = int(cell_w * rng.uniform(0.45, 0.75))
    win_h = int(cell_h * rng.uniform(0.45, 0.75))
    wall = _color(rng)
    cv2.rectangle(strip.rgb, (0, 10), (width - 1, FRAME_HEIGHT - 30), wall, -1)
    cv2.rectangle(strip.depth, (0, 10), (width - 1, FRAME_HEIGHT - 30), int(rng.integers(2500, 6000)), -1)
    cv2.rectangle(strip.ir, (0, 10), (width - 1, FRAME_HEIGHT - 30), int(rng.integers(40, 200)), -1)
    palette = [_color(rng) for _ in range(4)]
    for y in range(14, FRAME_HEIGHT - 30 - win_h, cell_h):
        for x in range(2, width - win_w, cell_w):
            c = palette[int(rng.integers(0, len(palette)))]
            cv2.rectangle(strip.rgb, (x, y), (x + win_w, y + win_h), c, -1, cv2.LINE_8)
            cv2.rectangle(strip.depth, (x, y), (x + win_w, y + win_h), int(rng.integers(2000, 7000)), -1)
            cv2.rectangle(strip.ir, (x, y), (x + win_w, y + win_h), int(rng.integers(20, 240)), -1)
    for _ in range(width // 60):
        x = int(rng.integers(0, width))
        w = int(rng.integers(3, 9))
        _paint(strip, lambda img, c: cv2.rectangle(img, (x, 0), (x + w, FRAME_HEIGHT - 1), c, -1, cv2.LINE_8), rng)
    return strip


def _check_spans(frame_count: int, spans) -> None:
    taken = np.zeros(frame_count, dtype=bool)
    for first, last, key_id in spans:
        if not (0 <= first <= last < frame_count):
            raise ValueError(f"key span {first}..{last} outside 0..{frame_count - 1}")
        if taken[first:last + 1].any():
            raise ValueError(f"key span {first}..{last} (id {key_id}) overlaps another span")
        taken[first:last + 1] = True


def synth_trajectory(spec: SynthSpec) -> Trajectory:
    """Render a deterministic multi-modal trajectory from ``spec``."""
    if spec.frame_count < 1:
        raise ValueError("frame_count must be >= 1")
    spans = sorted(spec.key_positions)
    _check_spans(spec.frame_count, spans)

    seed = int(spec.noise_seed) & 0xFFFF_FFFF_FFFF_FFFF
    key_of = {}
    for first, last, key_id in spans:
        for i in range(first, last + 1):
            key_of[i] = (key_id, i - first)
    n_street = spec.frame_count - len(key_of)

    street = _street_strip(FRAME_WIDTH + _PATH_STEP * max(n_street, 1), np.random.default_rng([seed, 0]))
    facades = {}
    for first, last, key_id in spans:
        width = FRAME_WIDTH + _VIEW_STEP * (last - first + 1)
        facades[key_id] = _facade_strip(width, np.random.default_rng([seed, 1, key_id & 0xFFFF_FFFF]))

    geo = interpolate_path(spec.geo_path, spec.frame_count)
    frames = []
    street_pos = 0
    for i in range(spec.frame_count):
        if i in key_of:
            key_id, view = key_of[i]
            rgb, depth, ir = facades[key_id].crop(view * _VIEW_STEP)
        else:
            key_id, view = None, None
            rgb, depth, ir = street.crop(street_pos * _PATH_STEP)
            street_pos += 1
        noise_rng = np.random.default_rng([seed, 2, i])
        rgb = np.clip(np.rint(rgb + noise_rng.normal(0.0, 1.5, rgb.shape)), 0, 255).astype(np.uint8)
        ir = np.clip(np.rint(ir + noise_rng.normal(0.0, 1.5, ir.shape)), 0, 255).astype(np.uint8)
        frames.append(FrameRecord(
            index=i,
            timestamp=float(i),
            rgb=rgb,
            depth=depth,
            infrared=ir,
            geo=GeoCoordinate(*geo[i]),
            key_position_id=key_id,
            view_tag=view,
        ))
    return Trajectory(tuple(frames), name=spec.name)


def perturb_trajectory(
    traj: Trajectory,
    noise_sigma: float = 5 / 255,
    gain: float = 1.3,
    seed: int = 0,
    reverse: bool = False,
    geo_noise_m: float = 0.0,
    name: Optional[str] = None,
) -> Trajectory:
    """Make a query trajectory: brightness gain and Gaussian noise on RGB and IR.

    ``noise_sigma`` is in [0,1] intensity units. Depth is left untouched. With
    ``reverse`` the frame order is flipped and frames are re-indexed.
    """
    frames = []
    src = traj.frames[::-1] if reverse else traj.frames
    for new_index, f in enumerate(src):
        rng = np.random.default_rng([int(seed) & 0xFFFF_FFFF_FFFF_FFFF, f.index])

        def jitter(img):
            out = img.astype(np.float64) * gain + rng.normal(0.0, noise_sigma * 255.0, img.shape)
            return np.clip(np.rint(out), 0, 255).astype(np.uint8)

        geo = f.geo
        if geo_noise_m > 0:
            dn, de = rng.normal(0.0, geo_noise_m, 2)
            geo = GeoCoordinate(
                geo.lat + math.degrees(dn / EARTH_RADIUS_M),
                geo.lon + math.degrees(de / (EARTH_RADIUS_M * math.cos(math.radians(geo.lat)))),
            )
        frames.append(FrameRecord(
            index=new_index,
            timestamp=float(new_index),
            rgb=jitter(f.rgb),
            depth=None if f.depth is None else f.depth.copy(),
            infrared=None if f.infrared is None else jitter(f.infrared),
            geo=geo,
            key_position_id=f.key_position_id,
            view_tag=f.view_tag,
        ))
    return Trajectory(tuple(frames), name=name or f"{traj.name}-query")
