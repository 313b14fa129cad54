"""Raster I/O: 8/16-bit PNG, binary PGM/PPM, little-endian PFM.

All readers return float64 data normalized to [0, 1] except PFM, which is
stored and returned as raw floats. False-color helpers render disparity and
flow fields for debug output.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

from .imaging import as_image


class IOError_(OSError):
    """Raised for unreadable files and unsupported formats."""


_RASTER_SUFFIXES = {".png", ".pgm", ".ppm"}


def load_image(path) -> np.ndarray:
    """Load a PNG/PGM/PPM image, scaled to [0, 1]; color kept as 3 channels."""
    path = Path(path)
    if not path.is_file():
        raise IOError_(f"unreadable file: {path}")
    if path.suffix.lower() not in _RASTER_SUFFIXES:
        raise IOError_(f"unsupported format: {path.suffix}")
    try:
        with PILImage.open(path) as im:
            im.load()
            if im.mode in ("I;16", "I;16B", "I"):
                arr = np.asarray(im, dtype=np.float64) / 65535.0
            elif im.mode in ("L", "P"):
                arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
            elif im.mode in ("RGB", "RGBA"):
                arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
            else:
                raise IOError_(f"unsupported pixel mode: {im.mode}")
    except (OSError, UnidentifiedImageError, SyntaxError) as exc:
        raise IOError_(f"unreadable file: {path} ({exc})") from exc
    if arr.size == 0:
        raise IOError_(f"zero-dimension image: {path}")
    return as_image(np.clip(arr, 0.0, 1.0))


def save_image(path, img: np.ndarray, bitdepth: int = 8) -> None:
    """Write an image in [0, 1] as PNG (8 or 16 bit) or binary PGM/PPM."""
    path = Path(path)
    img = as_image(img)
    suffix = path.suffix.lower()
    if suffix not in _RASTER_SUFFIXES:
        raise IOError_(f"unsupported format: {suffix}")
    if suffix == ".png" and bitdepth == 16:
        if img.ndim != 2:
            raise IOError_("16-bit PNG output supports grayscale only")
        data = np.round(img * 65535.0).astype(np.uint16)
        PILImage.fromarray(data).save(path)
        return
    data = np.round(img * 255.0).astype(np.uint8)
    if suffix == ".pgm":
        if img.ndim != 2:
            raise IOError_("PGM output requires grayscale")
        _write_pnm(path, data, b"P5")
        return
    if suffix == ".ppm":
        if img.ndim != 3:
            data = np.stack([data] * 3, axis=2)
        _write_pnm(path, data, b"P6")
        return
    PILImage.fromarray(data).save(path)


def _write_pnm(path: Path, data: np.ndarray, magic: bytes) -> None:
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(magic + b"\n%d %d\n255\n" % (w, h))
        f.write(data.tobytes())


def save_mask(path, mask: np.ndarray) -> None:
    """Write a binary mask as an 8-bit PGM (255 = true)."""
    save_image(path, np.asarray(mask, dtype=np.float64))


def load_mask(path, threshold: float = 0.5) -> np.ndarray:
    img = load_image(path)
    if img.ndim == 3:
        img = img.mean(axis=2)
    return img >= threshold


def save_pfm(path, data: np.ndarray) -> None:
    """Write 1- or 3-channel float data as little-endian PFM, bottom-up."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        magic = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        magic = b"PF"
    else:
        raise IOError_("PFM supports 1 or 3 channels")
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(magic + b"\n%d %d\n-1.0\n" % (w, h))
        f.write(np.flipud(data).tobytes())


def load_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic not in (b"Pf", b"PF"):
            raise IOError_("not a PFM file")
        w, h = map(int, f.readline().split())
        scale = float(f.readline())
        channels = 3 if magic == b"PF" else 1
        count = w * h * channels
        fmt = "<" if scale < 0 else ">"
        raw = f.read(count * 4)
        if len(raw) != count * 4:
            raise IOError_("truncated PFM data")
        data = np.array(struct.unpack(fmt + "%df" % count, raw), dtype=np.float32)
    data = data.reshape((h, w, channels)) if channels == 3 else data.reshape((h, w))
    return np.flipud(data).copy()


def disparity_to_color(disparity: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """False-color a disparity map (blue = near 0, red = max); invalid black."""
    d = np.asarray(disparity, dtype=np.float64)
    vmax = d[valid].max() if valid.any() else 1.0
    t = np.clip(d / max(vmax, 1e-12), 0.0, 1.0)
    r = np.clip(1.5 - np.abs(4.0 * t - 3.0), 0, 1)
    g = np.clip(1.5 - np.abs(4.0 * t - 2.0), 0, 1)
    b = np.clip(1.5 - np.abs(4.0 * t - 1.0), 0, 1)
    rgb = np.stack([r, g, b], axis=2)
    rgb[~valid] = 0.0
    return rgb


def flow_to_color(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """HSV-coded flow render: hue = direction, saturation = magnitude."""
    mag = np.hypot(u, v)
    scale = max(mag.max(), 1e-12)
    hue = np.mod(np.arctan2(-v, -u) / (2 * np.pi) + 1.0, 1.0)
    sat = np.clip(mag / scale, 0.0, 1.0)
    i = np.floor(hue * 6.0).astype(int) % 6
    f = hue * 6.0 - np.floor(hue * 6.0)
    p = 1.0 - sat
    q = 1.0 - f * sat
    t = 1.0 - (1.0 - f) * sat
    one = np.ones_like(hue)
    lut = [(one, t, p), (q, one, p), (p, one, t), (p, q, one), (t, p, one), (one, p, q)]
    rgb = np.zeros(hue.shape + (3,))
    for k, (rr, gg, bb) in enumerate(lut):
        sel = i == k
        rgb[sel, 0] = rr[sel]
        rgb[sel, 1] = gg[sel]
        rgb[sel, 2] = bb[sel]
    return rgb
