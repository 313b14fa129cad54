"""Core pixel containers and low-level image operators.

Images are float64 numpy arrays in [0, 1], shaped (H, W) for grayscale or
(H, W, 3) for color. Binary masks are bool arrays shaped (H, W). Gradient
fields pair two (H, W) arrays (dx, dy) built by forward differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.ndimage as ndi


class ImagingError(ValueError):
    pass


@dataclass(frozen=True)
class GradientField:
    """Forward-difference gradient: dx along columns, dy along rows.

    Last column of dx and last row of dy are zero by construction.
    """

    dx: np.ndarray
    dy: np.ndarray

    def __post_init__(self):
        if self.dx.shape != self.dy.shape:
            raise ImagingError("dx and dy must share shape")


def as_image(data) -> np.ndarray:
    """Validate and return a float64 image in [0, 1] (1 or 3 channels)."""
    img = np.asarray(data, dtype=np.float64)
    if img.ndim not in (2, 3):
        raise ImagingError("image must be 2-D or 3-D")
    if img.ndim == 3 and img.shape[2] not in (1, 3):
        raise ImagingError("image must have 1 or 3 channels")
    if img.size == 0:
        raise ImagingError("zero-dimension image")
    if not np.all(np.isfinite(img)):
        raise ImagingError("image contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ImagingError("image values outside [0, 1]")
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    return img


def luma(img: np.ndarray) -> np.ndarray:
    """Rec.601 luma; identity on grayscale input."""
    if img.ndim == 2:
        return img
    return 0.299 * img[:, :, 0] + 0.587 * img[:, :, 1] + 0.114 * img[:, :, 2]


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(np.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, kernel radius ceil(3*sigma), replicate boundary."""
    if not np.isfinite(sigma) or sigma <= 0:
        raise ImagingError("sigma must be positive and finite")
    img = np.asarray(img, dtype=np.float64)
    k = _gaussian_kernel(sigma)

    def blur2d(ch):
        out = ndi.correlate1d(ch, k, axis=1, mode="nearest")
        return ndi.correlate1d(out, k, axis=0, mode="nearest")

    if img.ndim == 2:
        return blur2d(img)
    return np.stack([blur2d(img[:, :, c]) for c in range(img.shape[2])], axis=2)


def _square_structure(radius: int) -> np.ndarray:
    return np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Morphological dilation by a square element; outside treated as 0."""
    if radius < 1:
        raise ImagingError("radius must be >= 1")
    return ndi.binary_dilation(np.asarray(mask, dtype=bool),
                               structure=_square_structure(radius))


def erode(mask: np.ndarray, radius: int) -> np.ndarray:
    """Morphological erosion by a square element; shrinks at borders."""
    if radius < 1:
        raise ImagingError("radius must be >= 1")
    return ndi.binary_erosion(np.asarray(mask, dtype=bool),
                              structure=_square_structure(radius),
                              border_value=0)


_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
_SOBEL_Y = _SOBEL_X.T


def canny_edges(img: np.ndarray, low: float, high: float) -> np.ndarray:
    """Classic Canny on a single-channel image.

    Gaussian smooth (sigma 1), Sobel gradients, non-maximum suppression,
    hysteresis with 8-connectivity. Thresholds are fractions of the maximum
    gradient magnitude, so binary inputs need no rescaling.
    """
    if img.ndim != 2:
        raise ImagingError("canny_edges requires a single-channel image")
    if not (0.0 <= low < high <= 1.0):
        raise ImagingError("need 0 <= low < high <= 1")
    smooth = gaussian_blur(np.asarray(img, dtype=np.float64), 1.0)
    gx = ndi.correlate(smooth, _SOBEL_X, mode="nearest")
    gy = ndi.correlate(smooth, _SOBEL_Y, mode="nearest")
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak <= 0.0:
        return np.zeros(img.shape, dtype=bool)

    # Quantize gradient direction into 4 bins and suppress non-maxima along it.
    angle = np.mod(np.arctan2(gy, gx), np.pi)
    sector = ((angle + np.pi / 8) // (np.pi / 4)).astype(int) % 4
    padded = np.pad(mag, 1, mode="constant")
    offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    nms = np.zeros_like(mag)
    for s, (dr, dc) in offsets.items():
        fwd = padded[1 + dr:1 + dr + mag.shape[0], 1 + dc:1 + dc + mag.shape[1]]
        bwd = padded[1 - dr:1 - dr + mag.shape[0], 1 - dc:1 - dc + mag.shape[1]]
        keep = (mag > fwd) & (mag >= bwd) & (sector == s)
        nms[keep] = mag[keep]

    nms = nms / peak
    strong = nms >= high
    weak = nms >= low
    labels, n = ndi.label(weak, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        return np.zeros(img.shape, dtype=bool)
    keep_ids = np.unique(labels[strong])
    keep_ids = keep_ids[keep_ids > 0]
    return np.isin(labels, keep_ids)


def grad(img: np.ndarray) -> GradientField:
    """Forward differences with replicate boundary (last column/row zero)."""
    if img.ndim != 2:
        raise ImagingError("grad requires a single-channel image")
    dx = np.zeros_like(img, dtype=np.float64)
    dy = np.zeros_like(img, dtype=np.float64)
    dx[:, :-1] = img[:, 1:] - img[:, :-1]
    dy[:-1, :] = img[1:, :] - img[:-1, :]
    return GradientField(dx=dx, dy=dy)


def div(g: GradientField) -> np.ndarray:
    """Exact negative adjoint of grad: <grad u, g> = -<u, div g> for all u, g.

    The last column of g.dx and last row of g.dy never enter (grad zeroes
    them), so they are ignored here as well.
    """
    dx, dy = g.dx, g.dy
    out = np.zeros_like(dx)
    out[:, :-1] += dx[:, :-1]
    out[:, 1:] -= dx[:, :-1]
    out[:-1, :] += dy[:-1, :]
    out[1:, :] -= dy[:-1, :]
    return out
