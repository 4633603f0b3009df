"""Image normalisations shared by the descriptor channels.

Gray images are 2-D float64 arrays. RGB inputs are ``(H, W, 3)`` arrays on
the 8-bit intensity scale (uint8, or float for unquantised experiments).
"""

from __future__ import annotations

import cv2
import numpy as np

LUMA = np.array([0.299, 0.587, 0.114])
DEFAULT_ALPHA = 0.48
CHANNEL_FLOOR = 1.0 / 255.0

WHITEN_SIGMA = 4.0
CONTRAST_EPS = 0.01
DEPTH_CLAMP_MM = 10_000


def _check_rgb(rgb: np.ndarray) -> None:
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected a 3-channel image, got shape {rgb.shape}")


def to_grayscale(rgb: np.ndarray) -> np.ndarray:
    """Rec.601 luma scaled to [0, 1]."""
    _check_rgb(rgb)
    return rgb.astype(np.float64) @ (LUMA / 255.0)


def illumination_invariant(rgb: np.ndarray, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """Log-chromaticity image ``0.5 + log G - alpha log B - (1 - alpha) log R``.

    Channels are scaled to [0, 1] and floored at 1/255 before the log. Since
    the weights on the right sum to one, a uniform gain on all three channels
    cancels out.
    """
    _check_rgb(rgb)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    c = np.maximum(rgb.astype(np.float64) / 255.0, CHANNEL_FLOOR)
    lr, lg, lb = np.log(c[..., 0]), np.log(c[..., 1]), np.log(c[..., 2])
    return 0.5 + lg - alpha * lb - (1.0 - alpha) * lr


def prefilter_normalize(gray: np.ndarray, sigma: float = WHITEN_SIGMA, eps: float = CONTRAST_EPS) -> np.ndarray:
    """Whitening plus local contrast normalisation ahead of the Gabor bank.

    ``log(1 + 255 g)`` compresses the intensity range, a Gaussian low-pass is
    subtracted, and the residual is divided by ``eps`` plus its local
    (Gaussian-weighted) standard deviation.
    """
    if gray.ndim != 2 or min(gray.shape) == 0:
        raise ValueError(f"expected a non-empty 2-D image, got shape {gray.shape}")
    img = np.log1p(gray.astype(np.float64) * 255.0)
    if img.max() == img.min():
        # the low-pass reproduces a constant only up to rounding
        return np.zeros_like(img)
    low = cv2.GaussianBlur(img, (0, 0), sigma, borderType=cv2.BORDER_REFLECT)
    hi = img - low
    local_var = cv2.GaussianBlur(hi * hi, (0, 0), sigma, borderType=cv2.BORDER_REFLECT)
    return hi / (eps + np.sqrt(np.maximum(local_var, 0.0)))


def normalize_depth(depth: np.ndarray, clamp_mm: int = DEPTH_CLAMP_MM) -> np.ndarray:
    """Millimetre depth clamped at ``clamp_mm`` and mapped linearly to [0, 1]."""
    return np.minimum(depth.astype(np.float64), clamp_mm) / clamp_mm


def normalize_ir(ir: np.ndarray) -> np.ndarray:
    return ir.astype(np.float64) / 255.0


def resize(img: np.ndarray, width: int, height: int, interpolation=cv2.INTER_LINEAR) -> np.ndarray:
    if img.shape[1] == width and img.shape[0] == height:
        return img
    return cv2.resize(img, (width, height), interpolation=interpolation)
