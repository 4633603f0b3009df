"""Domain types and trajectory I/O.

Image planes are plain numpy arrays: RGB is ``(240, 320, 3) uint8``, infrared
``(240, 320) uint8`` and depth ``(240, 320) uint16`` in millimetres (0 means
no reading). A trajectory on disk is a JSON Lines index plus PNG files.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import cv2
import numpy as np

FRAME_WIDTH = 320
FRAME_HEIGHT = 240


class ValidationError(ValueError):
    """Raised when input data violates a frame or trajectory invariant."""


class MissingModalityError(ValueError):
    pass


class Modality(str, enum.Enum):
    RGB = "rgb"
    RGB_IR = "rgb-ir"
    RGB_IR_D = "rgb-ir-d"

    @property
    def needs_ir(self) -> bool:
        return self is not Modality.RGB

    @property
    def needs_depth(self) -> bool:
        return self is Modality.RGB_IR_D


@dataclass(frozen=True)
class GeoCoordinate:
    lat: float
    lon: float

    def problems(self) -> list[str]:
        out = []
        if not (np.isfinite(self.lat) and -90.0 <= self.lat <= 90.0):
            out.append(f"latitude {self.lat} outside [-90, 90]")
        if not (np.isfinite(self.lon) and -180.0 <= self.lon <= 180.0):
            out.append(f"longitude {self.lon} outside [-180, 180]")
        return out


@dataclass(frozen=True, eq=False)
class FrameRecord:
    index: int
    timestamp: float
    rgb: np.ndarray
    geo: GeoCoordinate
    depth: Optional[np.ndarray] = None
    infrared: Optional[np.ndarray] = None
    key_position_id: Optional[int] = None
    view_tag: Optional[int] = None

    @property
    def is_key_position(self) -> bool:
        return self.key_position_id is not None

    def require(self, modalities: Modality) -> None:
        """Raise MissingModalityError if a plane needed by ``modalities`` is absent."""
        if modalities.needs_ir and self.infrared is None:
            raise MissingModalityError(f"frame {self.index}: infrared plane required by {modalities.value}")
        if modalities.needs_depth and self.depth is None:
            raise MissingModalityError(f"frame {self.index}: depth plane required by {modalities.value}")


@dataclass(frozen=True, eq=False)
class Trajectory:
    frames: tuple[FrameRecord, ...]
    name: str = "trajectory"

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    def __getitem__(self, i: int) -> FrameRecord:
        return self.frames[i]


@dataclass(frozen=True)
class QueryParams:
    """Free parameters of a localization query.

    ``radius`` is in metres unless ``legacy_degree_radius`` is set, in which
    case it is a Euclidean radius in raw (lat, lon) degrees. ``modalities``
    of None means "whatever the database was built with".
    """

    k_gist: int = 5
    k_ldb: int = 5
    k_bow: int = 5
    radius: float = 30.0
    legacy_degree_radius: bool = False
    vote_threshold: int = 5
    modalities: Optional[Modality] = None

    def __post_init__(self):
        ks = (self.k_gist, self.k_ldb, self.k_bow)
        if any(k < 0 for k in ks) or sum(ks) == 0:
            raise ValueError(f"neighbour counts must be >= 0 and not all zero, got {ks}")
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if self.vote_threshold < 1:
            raise ValueError(f"vote threshold must be >= 1, got {self.vote_threshold}")
        if self.vote_threshold > sum(ks):
            raise ValueError(f"vote threshold {self.vote_threshold} exceeds k_gist+k_ldb+k_bow={sum(ks)}")
        if self.modalities is not None and not isinstance(self.modalities, Modality):
            object.__setattr__(self, "modalities", Modality(self.modalities))

    @property
    def k_total(self) -> int:
        return self.k_gist + self.k_ldb + self.k_bow


def validate_frame(frame: FrameRecord) -> list[str]:
    """Return a list of violated invariants; empty means the frame is valid."""
    report = []
    rgb = frame.rgb
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        report.append(f"rgb: expected 3 channels, got shape {rgb.shape}")
    elif rgb.shape[:2] != (FRAME_HEIGHT, FRAME_WIDTH):
        report.append(f"rgb: dimension {rgb.shape[1]}x{rgb.shape[0]}, expected {FRAME_WIDTH}x{FRAME_HEIGHT}")
    if rgb.dtype != np.uint8:
        report.append(f"rgb: expected 8-bit samples, got {rgb.dtype}")

    if frame.infrared is not None:
        ir = frame.infrared
        if ir.ndim != 2:
            report.append(f"infrared: expected 1 channel, got shape {ir.shape}")
        elif ir.shape != (FRAME_HEIGHT, FRAME_WIDTH):
            report.append(f"infrared: dimension {ir.shape[1]}x{ir.shape[0]}, expected {FRAME_WIDTH}x{FRAME_HEIGHT}")
        if ir.dtype != np.uint8:
            report.append(f"infrared: expected 8-bit samples, got {ir.dtype}")

    if frame.depth is not None:
        d = frame.depth
        if d.ndim != 2:
            report.append(f"depth: expected 1 channel, got shape {d.shape}")
        elif d.shape != (FRAME_HEIGHT, FRAME_WIDTH):
            report.append(f"depth: dimension {d.shape[1]}x{d.shape[0]}, expected {FRAME_WIDTH}x{FRAME_HEIGHT}")
        if d.dtype != np.uint16:
            report.append(f"depth: encoding must be 16-bit millimetres, got {d.dtype}")

    report.extend(frame.geo.problems())
    return report


def validate_trajectory(traj: Trajectory) -> None:
    last_t = -np.inf
    for expected, frame in enumerate(traj.frames):
        if frame.index != expected:
            raise ValidationError(f"frame indexes must be 0..N-1, got {frame.index} at position {expected}")
        if frame.timestamp < last_t:
            raise ValidationError(f"frame {frame.index}: timestamp decreases")
        last_t = frame.timestamp
        problems = validate_frame(frame)
        if problems:
            raise ValidationError(f"frame {frame.index}: " + "; ".join(problems))


# --- disk format -----------------------------------------------------------

def _read_png(path: Path, what: str, line_no: int) -> np.ndarray:
    if not path.is_file():
        raise FileNotFoundError(f"line {line_no}: {what} image not found: {path}")
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise OSError(f"line {line_no}: cannot decode {what} image {path}")
    if what == "rgb":
        if img.ndim == 3 and img.shape[2] == 4:
            img = img[:, :, :3]
        if img.ndim == 3:
            img = cv2.cvtColor(img, cv2.COLOR_BGR2RGB)
    return img


def _write_png(path: Path, img: np.ndarray, is_rgb: bool = False) -> None:
    if is_rgb:
        img = cv2.cvtColor(img, cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(str(path), img):
        raise OSError(f"cannot write {path}")


def load_trajectory(index_path: str | Path, name: Optional[str] = None) -> Trajectory:
    """Load a trajectory from a JSON Lines frame index.

    Records are taken in file order and re-numbered 0..N-1; the ``id`` field
    is kept only for error messages. Image paths are relative to the index.

    Raises:
        FileNotFoundError / OSError: unreadable index or image.
        ValidationError: malformed record, wrong image size/encoding, or
            coordinates out of range. The message names the offending line.
    """
    index_path = Path(index_path)
    if not index_path.is_file():
        raise FileNotFoundError(f"frame index not found: {index_path}")
    base = index_path.parent
    frames = []
    with open(index_path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if not isinstance(rec, dict):
                    raise TypeError("record is not an object")
                t = float(rec["t"])
                lat = float(rec["lat"])
                lon = float(rec["lon"])
                rgb_rel = rec["rgb"]
                key = rec.get("key")
                view = rec.get("view")
                key = None if key is None else int(key)
                view = None if view is None else int(view)
            except (ValueError, KeyError, TypeError) as exc:
                raise ValidationError(f"{index_path}: line {line_no}: malformed record ({exc})") from exc

            rgb = _read_png(base / rgb_rel, "rgb", line_no)
            depth = _read_png(base / rec["depth"], "depth", line_no) if rec.get("depth") else None
            ir = _read_png(base / rec["ir"], "ir", line_no) if rec.get("ir") else None
            frame = FrameRecord(
                index=len(frames),
                timestamp=t,
                rgb=rgb,
                depth=depth,
                infrared=ir,
                geo=GeoCoordinate(lat, lon),
                key_position_id=key,
                view_tag=view,
            )
            problems = validate_frame(frame)
            if problems:
                raise ValidationError(
                    f"{index_path}: line {line_no} (frame {rec.get('id')}): " + "; ".join(problems)
                )
            frames.append(frame)
    if frames and any(b.timestamp < a.timestamp for a, b in zip(frames, frames[1:])):
        raise ValidationError(f"{index_path}: timestamps must be non-decreasing")
    return Trajectory(tuple(frames), name=name or index_path.parent.name)


def write_trajectory(traj: Trajectory, directory: str | Path, index_name: str = "index.jsonl") -> Path:
    """Write ``traj`` as PNG files plus a JSON Lines index; returns the index path."""
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    lines = []
    for f in traj.frames:
        rec: dict = {"id": f.index, "t": f.timestamp}
        rgb_rel = f"images/{f.index:06d}_rgb.png"
        _write_png(directory / rgb_rel, f.rgb, is_rgb=True)
        rec["rgb"] = rgb_rel
        if f.depth is not None:
            rel = f"images/{f.index:06d}_depth.png"
            _write_png(directory / rel, f.depth)
            rec["depth"] = rel
        if f.infrared is not None:
            rel = f"images/{f.index:06d}_ir.png"
            _write_png(directory / rel, f.infrared)
            rec["ir"] = rel
        rec["lat"] = f.geo.lat
        rec["lon"] = f.geo.lon
        if f.key_position_id is not None:
            rec["key"] = f.key_position_id
        if f.view_tag is not None:
            rec["view"] = f.view_tag
        lines.append(json.dumps(rec))
    index_path = directory / index_name
    index_path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return index_path


def key_frame_indexes(frames: Sequence[FrameRecord]) -> list[int]:
    return [f.index for f in frames if f.key_position_id is not None]
