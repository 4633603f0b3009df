"""Holistic GIST descriptor from a frequency-domain log-Gabor bank."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import preprocess
from .model import FrameRecord, Modality

DEFAULT_SCALES = 3
DEFAULT_ORIENTATIONS = (8, 8, 4)
DEFAULT_WORK_SIZE = 128
DEFAULT_BLOCKS = 4
SIGMA_ON_F = 0.55  # radial bandwidth, ratio of Gaussian sigma to centre frequency on a log axis
DTHETA_ON_SIGMA = 1.5  # orientation spacing / angular sigma

# modality order inside a GIST vector
GIST_ORDER = {
    Modality.RGB: ("rgb",),
    Modality.RGB_IR: ("rgb", "ir"),
    Modality.RGB_IR_D: ("rgb", "ir", "depth"),
}


@dataclass(frozen=True, eq=False)
class GaborBank:
    filters: np.ndarray  # (n_filters, work_size, work_size) float32 transfer functions, fft2 layout
    scale_of_filter: np.ndarray
    orientation_of_filter: np.ndarray
    angle_of_filter: np.ndarray
    center_frequencies: tuple[float, ...]
    orientations_per_scale: tuple[int, ...]
    work_size: int

    def __len__(self) -> int:
        return len(self.filters)

    def params(self) -> dict:
        return {
            "orientations_per_scale": list(self.orientations_per_scale),
            "center_frequencies": list(self.center_frequencies),
            "work_size": self.work_size,
            "sigma_on_f": SIGMA_ON_F,
            "dtheta_on_sigma": DTHETA_ON_SIGMA,
        }


@dataclass(frozen=True, eq=False)
class GistDescriptor:
    values: np.ndarray  # float32
    layout: tuple[tuple[str, int, int], ...]  # (modality, offset, length)

    def __len__(self) -> int:
        return len(self.values)


def build_gabor_bank(
    scales: int = DEFAULT_SCALES,
    orientations_per_scale: Sequence[int] = DEFAULT_ORIENTATIONS,
    work_size: int = DEFAULT_WORK_SIZE,
    center_frequencies: Optional[Sequence[float]] = None,
) -> GaborBank:
    """Build log-Gabor transfer functions on a ``work_size`` square grid.

    Scale 0 is the finest (highest centre frequency); centre frequencies
    default to ``work_size/4``, ``work_size/8``, ... cycles per image. The
    log-radial profile is exactly zero at DC.
    """
    orientations_per_scale = tuple(int(n) for n in orientations_per_scale)
    if scales != len(orientations_per_scale):
        raise ValueError(f"{scales} scales but {len(orientations_per_scale)} orientation counts")
    if any(n < 1 for n in orientations_per_scale):
        raise ValueError("every scale needs at least one orientation")
    if work_size < 8 or work_size & (work_size - 1):
        raise ValueError(f"work_size must be a power of two >= 8, got {work_size}")
    if center_frequencies is None:
        center_frequencies = tuple(work_size / 4.0 / 2**s for s in range(scales))
    center_frequencies = tuple(float(f) for f in center_frequencies)
    if len(center_frequencies) != scales:
        raise ValueError("one centre frequency per scale required")

    f1d = np.fft.fftfreq(work_size) * work_size
    fy, fx = np.meshgrid(f1d, f1d, indexing="ij")
    radius = np.hypot(fx, fy)
    theta = np.arctan2(fy, fx)
    log_r = np.log(np.where(radius > 0, radius, 1.0))

    filters, scale_of, orient_of, angle_of = [], [], [], []
    for s, (f0, n_orient) in enumerate(zip(center_frequencies, orientations_per_scale)):
        radial = np.exp(-((log_r - np.log(f0)) ** 2) / (2 * np.log(SIGMA_ON_F) ** 2))
        radial[radius == 0] = 0.0
        sigma_theta = np.pi / n_orient / DTHETA_ON_SIGMA
        for o in range(n_orient):
            angle = o * np.pi / n_orient
            dtheta = np.angle(np.exp(1j * (theta - angle)))
            filters.append(radial * np.exp(-(dtheta**2) / (2 * sigma_theta**2)))
            scale_of.append(s)
            orient_of.append(o)
            angle_of.append(angle)
    return GaborBank(
        filters=np.stack(filters).astype(np.float32),
        scale_of_filter=np.array(scale_of),
        orientation_of_filter=np.array(orient_of),
        angle_of_filter=np.array(angle_of),
        center_frequencies=center_frequencies,
        orientations_per_scale=orientations_per_scale,
        work_size=work_size,
    )


def gist_descriptor(image: np.ndarray, bank: GaborBank, blocks: int = DEFAULT_BLOCKS) -> np.ndarray:
    """Block-averaged Gabor magnitudes, filter-major (``len(bank) * blocks**2`` values)."""
    n = bank.work_size
    if image.shape != (n, n):
        raise ValueError(f"image shape {image.shape} does not match bank work size {n}")
    if n % blocks:
        raise ValueError(f"{blocks} blocks do not tile {n} pixels")
    spectrum = np.fft.fft2(image.astype(np.float32))
    mag = np.abs(np.fft.ifft2(spectrum[None] * bank.filters))
    b = n // blocks
    return mag.reshape(len(bank), blocks, b, blocks, b).mean(axis=(2, 4), dtype=np.float64).reshape(-1)


def modality_planes(frame: FrameRecord, names: Sequence[str], rgb_gray: Optional[np.ndarray] = None) -> list[np.ndarray]:
    out = []
    for name in names:
        if name == "rgb":
            out.append(rgb_gray if rgb_gray is not None else preprocess.to_grayscale(frame.rgb))
        elif name == "ir":
            out.append(preprocess.normalize_ir(frame.infrared))
        else:
            out.append(preprocess.normalize_depth(frame.depth))
    return out


def gist_multimodal(
    frame: FrameRecord,
    bank: GaborBank,
    modalities: Modality = Modality.RGB,
    rgb_gray: Optional[np.ndarray] = None,
) -> GistDescriptor:
    """Concatenated GIST over the requested planes, in order RGB, IR, depth.

    Raises:
        MissingModalityError: if the frame lacks a required plane.
    """
    modalities = Modality(modalities)
    frame.require(modalities)
    names = GIST_ORDER[modalities]
    n = bank.work_size
    parts, layout, offset = [], [], 0
    for name, plane in zip(names, modality_planes(frame, names, rgb_gray)):
        work = preprocess.prefilter_normalize(preprocess.resize(plane, n, n))
        vec = gist_descriptor(work, bank)
        parts.append(vec)
        layout.append((name, offset, len(vec)))
        offset += len(vec)
    return GistDescriptor(np.concatenate(parts).astype(np.float32), tuple(layout))


def gist_distance(a: GistDescriptor, b: GistDescriptor) -> float:
    if a.layout != b.layout:
        raise ValueError(f"GIST layout mismatch: {a.layout} vs {b.layout}")
    d = a.values.astype(np.float64) - b.values.astype(np.float64)
    return float(np.sqrt(d @ d))
