"""Occlusion-aware optical flow and the induced linear warp operator.

Flow is estimated coarse-to-fine with Horn-Schunck after blurring the fence
regions out of both frames, so the data term is not poisoned by occlusion
boundaries. The warp operator is a sparse bilinear resampling matrix whose
adjoint is exact (it is the transpose).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.ndimage as ndi
import scipy.sparse

from .imaging import dilate, gaussian_blur


class FlowError(ValueError):
    pass


@dataclass(frozen=True)
class FlowField:
    u: np.ndarray  # horizontal displacement, px
    v: np.ndarray  # vertical displacement, px


@dataclass(frozen=True)
class WarpOperator:
    """Sparse bilinear resampler: output pixel (r,c) samples (r+v, c+u).

    Rows of out-of-bounds pixels are empty; in-bounds rows have nonnegative
    weights summing to 1.
    """

    matrix: scipy.sparse.csr_matrix  # (H*W, H*W)
    in_bounds: np.ndarray  # (H, W) bool
    shape: tuple


def fill_from_valid(img: np.ndarray, invalid: np.ndarray, start_radius: int = 1) -> np.ndarray:
    """Replace invalid pixels by the mean of valid pixels in a growing window."""
    invalid = np.asarray(invalid, dtype=bool)
    if invalid.all():
        raise FlowError("no valid pixels to fill from")
    out = img.astype(np.float64).copy()
    channels = out[..., None] if out.ndim == 2 else out
    valid = (~invalid).astype(np.float64)
    masked = channels * valid[:, :, None]
    todo = invalid.copy()
    radius = start_radius
    while todo.any():
        size = 2 * radius + 1
        counts = ndi.uniform_filter(valid, size=size, mode="constant") * size * size
        sums = ndi.uniform_filter(masked, size=(size, size, 1), mode="constant") * size * size
        ready = todo & (counts > 0.5)
        if ready.any():
            channels[ready] = sums[ready] / counts[ready][:, None]
            todo &= ~ready
        radius += 1
    return channels[:, :, 0] if img.ndim == 2 else channels


def preblur_fences(img: np.ndarray, fence: np.ndarray, sigma: float = 2.0) -> np.ndarray:
    """Blur fence regions out of an image before flow estimation.

    Fence pixels are first filled from nearby background, then a Gaussian
    blur is applied only on a band around the fence; everything outside the
    band is returned bit-exact.
    """
    fence = np.asarray(fence, dtype=bool)
    if fence.shape != img.shape[:2]:
        raise FlowError("mask/image size mismatch")
    if fence.all():
        raise FlowError("fence mask covers the entire image")
    if not fence.any():
        return img.copy()
    filled = fill_from_valid(img, fence)
    blurred = gaussian_blur(filled, sigma)
    band = dilate(fence, int(np.ceil(3.0 * sigma)))
    out = img.astype(np.float64).copy()
    out[band] = blurred[band]
    return out


def _downsample(img: np.ndarray) -> np.ndarray:
    return gaussian_blur(img, 1.0)[::2, ::2]


def _resize_bilinear(arr: np.ndarray, shape) -> np.ndarray:
    h, w = arr.shape
    nh, nw = shape
    rows = np.linspace(0, h - 1, nh)
    cols = np.linspace(0, w - 1, nw)
    rc, cc = np.meshgrid(rows, cols, indexing="ij")
    return ndi.map_coordinates(arr, [rc, cc], order=1, mode="nearest")


def _warp_image(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    h, w = img.shape
    rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    return ndi.map_coordinates(img, [rr + v, cc + u], order=1, mode="nearest")


_HS_AVG = np.array([[1 / 12, 1 / 6, 1 / 12],
                    [1 / 6, 0.0, 1 / 6],
                    [1 / 12, 1 / 6, 1 / 12]])


def _hs_level(ref, tgt, u, v, alpha, iters):
    """Horn-Schunck increment solve at one pyramid level (Jacobi sweeps)."""
    warped = _warp_image(tgt, u, v)
    avg = 0.5 * (ref + warped)
    fx = np.gradient(avg, axis=1)
    fy = np.gradient(avg, axis=0)
    ft = warped - ref
    du = np.zeros_like(u)
    dv = np.zeros_like(v)
    denom = alpha ** 2 + fx ** 2 + fy ** 2
    for _ in range(iters):
        du_avg = ndi.correlate(du, _HS_AVG, mode="nearest")
        dv_avg = ndi.correlate(dv, _HS_AVG, mode="nearest")
        common = (fx * du_avg + fy * dv_avg + ft) / denom
        du = du_avg - fx * common
        dv = dv_avg - fy * common
    return u + du, v + dv


def estimate_flow(ref: np.ndarray, tgt: np.ndarray, levels: int = 4,
                  alpha: float = 15.0, iters: int = 200) -> FlowField:
    """Coarse-to-fine pyramidal Horn-Schunck flow from ref toward tgt."""
    if ref.shape != tgt.shape:
        raise FlowError("image size mismatch")
    if ref.ndim != 2:
        raise FlowError("flow estimation requires single-channel images")
    if min(ref.shape) < 2 ** levels:
        raise FlowError("image too small for the requested pyramid depth")
    # classic Horn-Schunck weights alpha against 8-bit intensity gradients
    pyr_ref = [ref.astype(np.float64) * 255.0]
    pyr_tgt = [tgt.astype(np.float64) * 255.0]
    for _ in range(levels - 1):
        pyr_ref.append(_downsample(pyr_ref[-1]))
        pyr_tgt.append(_downsample(pyr_tgt[-1]))

    u = np.zeros_like(pyr_ref[-1])
    v = np.zeros_like(pyr_ref[-1])
    for level in range(levels - 1, -1, -1):
        r_img, t_img = pyr_ref[level], pyr_tgt[level]
        if u.shape != r_img.shape:
            u = _resize_bilinear(u, r_img.shape) * 2.0
            v = _resize_bilinear(v, r_img.shape) * 2.0
        u, v = _hs_level(r_img, t_img, u, v, alpha, iters)
    return FlowField(u=u, v=v)


def build_warp(flow: FlowField) -> WarpOperator:
    """Materialize the bilinear resampling matrix induced by a flow field."""
    h, w = flow.u.shape
    n = h * w
    rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    sr = (rr + flow.v).ravel()
    sc = (cc + flow.u).ravel()
    in_bounds = (sr >= 0) & (sr <= h - 1) & (sc >= 0) & (sc <= w - 1)

    r0 = np.clip(np.floor(sr).astype(int), 0, h - 2 if h > 1 else 0)
    c0 = np.clip(np.floor(sc).astype(int), 0, w - 2 if w > 1 else 0)
    fr = sr - r0
    fc = sc - c0
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)

    rows_idx = np.arange(n)
    entries_rows = []
    entries_cols = []
    entries_vals = []
    for (ri, ci, wt) in (
        (r0, c0, (1 - fr) * (1 - fc)),
        (r0, c1, (1 - fr) * fc),
        (r1, c0, fr * (1 - fc)),
        (r1, c1, fr * fc),
    ):
        sel = in_bounds & (wt > 0)
        entries_rows.append(rows_idx[sel])
        entries_cols.append((ri * w + ci)[sel])
        entries_vals.append(wt[sel])
    mat = scipy.sparse.coo_matrix(
        (np.concatenate(entries_vals),
         (np.concatenate(entries_rows), np.concatenate(entries_cols))),
        shape=(n, n)).tocsr()
    mat.sum_duplicates()
    return WarpOperator(matrix=mat, in_bounds=in_bounds.reshape(h, w), shape=(h, w))


def identity_warp(shape) -> WarpOperator:
    h, w = shape
    return WarpOperator(matrix=scipy.sparse.identity(h * w, format="csr"),
                        in_bounds=np.ones((h, w), dtype=bool), shape=(h, w))


def _per_channel(img, fn):
    if img.ndim == 2:
        return fn(img)
    return np.stack([fn(img[:, :, c]) for c in range(img.shape[2])], axis=2)


def apply_warp(w: WarpOperator, img: np.ndarray) -> np.ndarray:
    """Sparse matrix-vector warp; out-of-bounds output pixels become 0."""
    if img.shape[:2] != w.shape:
        raise FlowError("image/operator size mismatch")
    return _per_channel(img, lambda ch: (w.matrix @ ch.ravel()).reshape(w.shape))


def apply_warp_adjoint(w: WarpOperator, img: np.ndarray) -> np.ndarray:
    """Transpose warp: scatters samples back to source pixels."""
    if img.shape[:2] != w.shape:
        raise FlowError("image/operator size mismatch")
    return _per_channel(img, lambda ch: (w.matrix.T @ ch.ravel()).reshape(w.shape))
