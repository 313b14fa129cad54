"""Fence segmentation from disparity: near-layer split, automatic scribbles,
scribble-constrained matting-Laplacian alpha solve, thresholding."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse
import scipy.sparse.linalg
from numpy.lib.stride_tricks import sliding_window_view

from .imaging import canny_edges, dilate, erode
from .stereo import DisparityMap

FOREGROUND = 1
BACKGROUND = 0
UNKNOWN = -1


class FenceMaskError(ValueError):
    pass


class MattingSolveError(RuntimeError):
    """Raised when the alpha solve stalls above the residual floor."""


@dataclass(frozen=True)
class ScribbleMap:
    """Per-pixel labels: 1 foreground, 0 background, -1 unknown."""

    labels: np.ndarray  # (H, W) int8

    @property
    def foreground(self) -> np.ndarray:
        return self.labels == FOREGROUND

    @property
    def background(self) -> np.ndarray:
        return self.labels == BACKGROUND


def near_layer_mask(dm: DisparityMap) -> np.ndarray:
    """Threshold valid disparities with Otsu (64 bins); near layer = true.

    Degenerate histograms (no separation) yield an all-false mask and a
    warning rather than an arbitrary split.
    """
    if not dm.valid.any():
        raise FenceMaskError("disparity map has no valid pixels")
    vals = dm.disparity[dm.valid]
    lo, hi = vals.min(), vals.max()
    if hi - lo < 1e-12:
        warnings.warn("disparity histogram is degenerate; no near layer found")
        return np.zeros(dm.valid.shape, dtype=bool)
    hist, edges = np.histogram(vals, bins=64, range=(lo, hi))
    threshold = otsu_threshold(hist, edges)
    if threshold is None:
        warnings.warn("disparity histogram is degenerate; no near layer found")
        return np.zeros(dm.valid.shape, dtype=bool)
    return dm.valid & (dm.disparity > threshold)


def otsu_threshold(hist: np.ndarray, edges: np.ndarray):
    """Exhaustive between-class-variance maximization over bin edges."""
    total = hist.sum()
    centers = 0.5 * (edges[:-1] + edges[1:])
    best, best_t = -1.0, None
    w0 = 0.0
    s0 = 0.0
    mean_all = float(np.dot(hist, centers)) / total
    for k in range(len(hist) - 1):
        w0 += hist[k]
        s0 += hist[k] * centers[k]
        w1 = total - w0
        if w0 == 0 or w1 == 0:
            continue
        m0 = s0 / w0
        m1 = (mean_all * total - s0) / w1
        between = w0 * w1 * (m0 - m1) ** 2
        if between > best:
            best = between
            best_t = edges[k + 1]
    return best_t if best > 0 else None


def generate_scribbles(raw: np.ndarray, dilate_r: int = 5, erode_r: int = 2,
                       canny_low: float = 0.1, canny_high: float = 0.3) -> ScribbleMap:
    """Background scribbles = Canny edges of the dilated mask; foreground =
    eroded mask. If erosion empties the mask, retry once with radius 1."""
    raw = np.asarray(raw, dtype=bool)
    if not raw.any():
        raise FenceMaskError("raw mask is empty")
    if raw.all():
        raise FenceMaskError("raw mask covers the whole frame")
    dilated = dilate(raw, dilate_r)
    background = canny_edges(dilated.astype(np.float64), canny_low, canny_high)
    foreground = erode(raw, erode_r)
    if not foreground.any() and erode_r > 1:
        foreground = erode(raw, 1)
    if not foreground.any():
        raise FenceMaskError("mask too thin: foreground scribbles vanish under erosion")
    labels = np.full(raw.shape, UNKNOWN, dtype=np.int8)
    labels[background] = BACKGROUND
    labels[foreground] = FOREGROUND
    labels[background & foreground] = UNKNOWN
    return ScribbleMap(labels=labels)


def matting_laplacian(img: np.ndarray, eps: float = 1e-5) -> scipy.sparse.csr_matrix:
    """Standard matting Laplacian over 3x3 windows (gray or color input)."""
    if img.ndim == 2:
        img = img[:, :, None]
    h, w, c = img.shape
    if h < 3 or w < 3:
        raise FenceMaskError("image too small for 3x3 matting windows")
    n = h * w
    idx = np.arange(n).reshape(h, w)
    win_idx = sliding_window_view(idx, (3, 3)).reshape(-1, 9)
    flat = img.reshape(n, c)
    win_px = flat[win_idx]  # (nwin, 9, c)

    mu = win_px.mean(axis=1, keepdims=True)
    centered = win_px - mu
    cov = np.einsum("wij,wik->wjk", centered, centered) / 9.0
    inv = np.linalg.inv(cov + (eps / 9.0) * np.eye(c))
    x = np.einsum("wij,wjk,wlk->wil", centered, inv, centered)
    vals = np.eye(9) - (1.0 + x) / 9.0

    rows = np.repeat(win_idx, 9, axis=1).ravel()
    cols = np.tile(win_idx, (1, 9)).ravel()
    lap = scipy.sparse.coo_matrix((vals.ravel(), (rows, cols)), shape=(n, n))
    return lap.tocsr()


def solve_alpha(img: np.ndarray, scribbles: ScribbleMap, eps: float = 1e-5,
                gamma: float = 1e2, cg_tol: float = 1e-6,
                cg_maxiter: int = 2000) -> np.ndarray:
    """Solve (L + gamma*S) alpha = gamma*s by conjugate gradient.

    S is the diagonal scribble indicator, s the scribble values. Scribbled
    pixels are overwritten with their exact labels afterwards.
    """
    fg = scribbles.foreground
    bg = scribbles.background
    if not fg.any() or not bg.any():
        raise FenceMaskError("scribbles must contain both classes")
    h, w = fg.shape
    lap = matting_laplacian(img, eps)
    known = (fg | bg).ravel().astype(np.float64)
    s = fg.ravel().astype(np.float64)
    a_mat = lap + gamma * scipy.sparse.diags(known)
    b = gamma * known * s
    x0 = s.copy()
    alpha, _ = scipy.sparse.linalg.cg(a_mat, b, x0=x0, rtol=cg_tol,
                                      maxiter=cg_maxiter)
    bnorm = np.linalg.norm(b)
    residual = np.linalg.norm(a_mat @ alpha - b) / max(bnorm, 1e-300)
    if residual > 1e-4:
        raise MattingSolveError(
            f"alpha solve stalled: relative residual {residual:.3e} after "
            f"{cg_maxiter} CG iterations")
    alpha = np.clip(alpha.reshape(h, w), 0.0, 1.0)
    alpha[fg] = 1.0
    alpha[bg] = 0.0
    return alpha


def threshold_alpha(alpha: np.ndarray, t: float = 0.5) -> np.ndarray:
    """Binary fence mask: true where alpha >= t."""
    if not (0.0 < t < 1.0):
        raise FenceMaskError("threshold must lie in (0, 1)")
    return np.asarray(alpha) >= t


def mask_for_frame(fence: np.ndarray, safety_dilate: int = 1) -> np.ndarray:
    """Visibility mask: complement of the fence grown by a safety margin."""
    fence = np.asarray(fence, dtype=bool)
    if safety_dilate > 0:
        fence = dilate(fence, safety_dilate)
    return ~fence


def drop_fence_colored_background(img: np.ndarray, scribbles: ScribbleMap,
                                  min_tol: float = 0.04) -> ScribbleMap:
    """Demote scribbles whose color contradicts their label.

    Disparity misses wire stretches that are self-similar under horizontal
    shift (the aperture problem on thin straight wires), so the dilated-mask
    contour can cross real fence, and the raw near layer can leak onto the
    background. Hard pins in the wrong class block the matting propagation.
    The foreground scribbles give a robust estimate of the fence color;
    background pins within a MAD-based tolerance of it, and foreground pins
    outside it, are set back to unknown.
    """
    fg = scribbles.foreground
    bg = scribbles.background
    if not fg.any() or not bg.any():
        return scribbles
    chans = img[:, :, None] if img.ndim == 2 else img
    fence_color = np.median(chans[fg], axis=0)
    dist = np.abs(chans - fence_color).max(axis=2)
    mad = np.median(dist[fg])
    tol = max(4.0 * 1.4826 * mad, min_tol)
    labels = scribbles.labels.copy()
    labels[bg & (dist <= tol)] = UNKNOWN
    labels[fg & (dist > tol)] = UNKNOWN
    if not (labels == BACKGROUND).any() or not (labels == FOREGROUND).any():
        return scribbles  # filter would erase a class; keep original pins
    return ScribbleMap(labels=labels)


def detect_fence(img: np.ndarray, dm: DisparityMap, dilate_r: int = 5,
                 erode_r: int = 2, canny_low: float = 0.1, canny_high: float = 0.3,
                 eps: float = 1e-5, gamma: float = 1e2,
                 alpha_t: float = 0.5):
    """Disparity -> refined fence mask; returns (mask, alpha, scribbles)."""
    raw = near_layer_mask(dm)
    if not raw.any():
        return np.zeros(raw.shape, dtype=bool), np.zeros(raw.shape), None
    scribbles = generate_scribbles(raw, dilate_r, erode_r, canny_low, canny_high)
    scribbles = drop_fence_colored_background(img, scribbles)
    alpha = solve_alpha(img, scribbles, eps=eps, gamma=gamma)
    return threshold_alpha(alpha, alpha_t), alpha, scribbles
