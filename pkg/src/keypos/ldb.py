"""Global LDB (Local Difference Binary) descriptor and Hamming distance.

The image is resized to a square patch and partitioned into g x g cells for
each grid level g. Every unordered cell pair contributes three comparison
bits: mean intensity, mean horizontal gradient, mean vertical gradient.
Bits are stored packed (``np.packbits`` big-endian bit order).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import cv2
import numpy as np

from . import preprocess
from .model import FrameRecord, Modality

PATCH_SIZE = 60
GRID_LEVELS = (2, 3, 4, 5)

# modality order inside a compound LDB vector
LDB_ORDER = {
    Modality.RGB: ("rgb",),
    Modality.RGB_IR: ("rgb", "ir"),
    Modality.RGB_IR_D: ("rgb", "depth", "ir"),
}


def ldb_bit_count(levels: Sequence[int] = GRID_LEVELS) -> int:
    return sum(3 * (g * g) * (g * g - 1) // 2 for g in levels)


@dataclass(frozen=True, eq=False)
class LdbDescriptor:
    bits: np.ndarray  # packed uint8
    n_bits: int
    layout: tuple[tuple[str, int, int], ...]  # (modality, bit offset, bit length)

    def unpacked(self) -> np.ndarray:
        return np.unpackbits(self.bits, count=self.n_bits).astype(bool)


def _cell_stats(patch: np.ndarray, g: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = patch.shape[0]
    c = n // g
    cells = patch.reshape(g, c, g, c)
    # np.gradient is central inside each cell and one-sided at its borders
    gy = np.gradient(cells, axis=1)
    gx = np.gradient(cells, axis=3)
    return (
        cells.mean(axis=(1, 3)).reshape(-1),
        gx.mean(axis=(1, 3)).reshape(-1),
        gy.mean(axis=(1, 3)).reshape(-1),
    )


def ldb_single(image: np.ndarray, levels: Sequence[int] = GRID_LEVELS, patch_size: int = PATCH_SIZE) -> np.ndarray:
    """Unpacked LDB bits (bool array) of a gray image.

    The image is area-resized to ``patch_size`` square first; ``patch_size``
    must be divisible by every grid level.
    """
    if image.ndim != 2 or min(image.shape) < 2:
        raise ValueError(f"degenerate image of shape {image.shape}")
    if any(patch_size % g for g in levels):
        raise ValueError(f"patch size {patch_size} not divisible by grid levels {tuple(levels)}")
    patch = preprocess.resize(image.astype(np.float64), patch_size, patch_size, cv2.INTER_AREA)
    out = []
    for g in levels:
        stats = _cell_stats(patch, g)
        i, j = np.triu_indices(g * g, k=1)
        out.append(np.stack([s[i] > s[j] for s in stats], axis=1).reshape(-1))
    return np.concatenate(out)


def ldb_planes(frame: FrameRecord, names: Sequence[str], alpha: float) -> list[np.ndarray]:
    out = []
    for name in names:
        if name == "rgb":
            out.append(preprocess.illumination_invariant(frame.rgb, alpha))
        elif name == "depth":
            out.append(preprocess.normalize_depth(frame.depth))
        else:
            out.append(preprocess.normalize_ir(frame.infrared))
    return out


def ldb_compound(
    frame: FrameRecord,
    modalities: Modality = Modality.RGB_IR_D,
    alpha: float = preprocess.DEFAULT_ALPHA,
    levels: Sequence[int] = GRID_LEVELS,
    patch_size: int = PATCH_SIZE,
) -> LdbDescriptor:
    """Concatenated LDB over RGB (illumination invariant), depth, infrared."""
    modalities = Modality(modalities)
    frame.require(modalities)
    names = LDB_ORDER[modalities]
    parts, layout, offset = [], [], 0
    for name, plane in zip(names, ldb_planes(frame, names, alpha)):
        bits = ldb_single(plane, levels, patch_size)
        parts.append(bits)
        layout.append((name, offset, len(bits)))
        offset += len(bits)
    bits = np.concatenate(parts)
    return LdbDescriptor(np.packbits(bits), len(bits), tuple(layout))


def hamming(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Popcount of XOR over the last axis of packed uint8 arrays (broadcasting)."""
    return np.bitwise_count(np.bitwise_xor(a, b)).sum(axis=-1, dtype=np.int64)


def ldb_distance(a: LdbDescriptor, b: LdbDescriptor) -> int:
    if a.layout != b.layout or a.n_bits != b.n_bits:
        raise ValueError(f"LDB layout mismatch: {a.layout} vs {b.layout}")
    return int(hamming(a.bits, b.bits))
