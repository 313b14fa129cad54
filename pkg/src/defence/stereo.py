"""Dense disparity from a rectified-ish stereo pair.

Pipeline: patch descriptors (census or zero-mean) -> negative-cosine matching
cost volume -> box-filter aggregation -> winner-take-all -> left-right
consistency check -> median fill.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.ndimage as ndi

PATCH_RADIUS = 4  # 9x9 patches
SENTINEL_COST = 1.0  # worst cost, assigned to out-of-frame candidates


class StereoError(ValueError):
    pass


@dataclass(frozen=True)
class CostVolume:
    """Matching costs in [-1, +1], indexed (row, col, disparity)."""

    cost: np.ndarray  # (H, W, d_max + 1)

    @property
    def d_max(self) -> int:
        return self.cost.shape[2] - 1


@dataclass(frozen=True)
class DisparityMap:
    disparity: np.ndarray  # (H, W) float, 0 where invalid
    valid: np.ndarray  # (H, W) bool


def _patch_offsets():
    r = PATCH_RADIUS
    return [(dr, dc) for dr in range(-r, r + 1) for dc in range(-r, r + 1)]


def extract_descriptor(img: np.ndarray, row: int, col: int, kind: str = "census") -> np.ndarray:
    """Descriptor of the 9x9 patch at (row, col); patch must be inside the image.

    census: 80 entries in {-1, +1}, +1 where neighbor > center.
    zeromean: 81 entries, patch minus its mean.
    """
    r = PATCH_RADIUS
    patch = img[row - r:row + r + 1, col - r:col + r + 1]
    if kind == "census":
        center = patch[r, r]
        vals = np.where(patch > center, 1.0, -1.0).ravel()
        return np.delete(vals, (2 * r + 1) * r + r)
    if kind == "zeromean":
        flat = patch.ravel().astype(np.float64)
        return flat - flat.mean()
    raise StereoError(f"unknown descriptor kind: {kind}")


def matching_cost(dl: np.ndarray, dr: np.ndarray) -> float:
    """Negative cosine similarity; 0 (neutral) if either descriptor is null."""
    if dl.shape != dr.shape:
        raise StereoError("descriptor length mismatch")
    nl = np.linalg.norm(dl)
    nr = np.linalg.norm(dr)
    if nl < 1e-12 or nr < 1e-12:
        return 0.0
    return float(-np.dot(dl, dr) / (nl * nr))


def _descriptor_stack(img: np.ndarray, kind: str) -> np.ndarray:
    """Unit-normalized descriptors for every pixel, shape (H, W, dim).

    Null descriptors (constant patches under zeromean) come out as zero
    vectors, which makes their cosine cost 0 for free.
    """
    h, w = img.shape
    r = PATCH_RADIUS
    padded = np.pad(img, r, mode="edge")
    if kind == "census":
        center = padded[r:r + h, r:r + w]
        planes = []
        for dr, dc in _patch_offsets():
            if dr == 0 and dc == 0:
                continue
            shifted = padded[r + dr:r + dr + h, r + dc:r + dc + w]
            planes.append(np.where(shifted > center, 1.0, -1.0))
        desc = np.stack(planes, axis=2)
    elif kind == "zeromean":
        planes = [padded[r + dr:r + dr + h, r + dc:r + dc + w]
                  for dr, dc in _patch_offsets()]
        desc = np.stack(planes, axis=2)
        desc = desc - desc.mean(axis=2, keepdims=True)
    else:
        raise StereoError(f"unknown descriptor kind: {kind}")
    norms = np.linalg.norm(desc, axis=2, keepdims=True)
    small = norms < 1e-12
    desc = np.where(small, 0.0, desc / np.where(small, 1.0, norms))
    return desc


def build_cost_volume(left: np.ndarray, right: np.ndarray, d_max: int,
                      kind: str = "census", direction: str = "left") -> CostVolume:
    """Negative-cosine cost volume over disparities 0..d_max.

    direction 'left': reference = first arg, match at col - d in the second.
    direction 'right': reference = first arg, match at col + d in the second.
    Out-of-frame candidates get the sentinel cost +1.
    """
    if left.shape != right.shape:
        raise StereoError("image size mismatch")
    if d_max >= left.shape[1]:
        raise StereoError("d_max must be smaller than the image width")
    h, w = left.shape
    desc_ref = _descriptor_stack(left, kind)
    desc_oth = _descriptor_stack(right, kind)
    cost = np.full((h, w, d_max + 1), SENTINEL_COST, dtype=np.float64)
    for d in range(d_max + 1):
        if direction == "left":
            if d == 0:
                a, b = desc_ref, desc_oth
                sl = slice(0, w)
            else:
                a, b = desc_ref[:, d:], desc_oth[:, :-d]
                sl = slice(d, w)
        elif direction == "right":
            if d == 0:
                a, b = desc_ref, desc_oth
                sl = slice(0, w)
            else:
                a, b = desc_ref[:, :-d], desc_oth[:, d:]
                sl = slice(0, w - d)
        else:
            raise StereoError(f"unknown direction: {direction}")
        dot = np.einsum("rck,rck->rc", a, b)
        both = (np.abs(a).sum(axis=2) > 0) & (np.abs(b).sum(axis=2) > 0)
        cost[:, sl, d] = np.where(both, -dot, 0.0)
    return CostVolume(cost=np.clip(cost, -1.0, 1.0))


def aggregate_costs(cv: CostVolume, radius: int) -> CostVolume:
    """Per-disparity-slice box filter, replicate boundary; radius 0 = identity."""
    if radius < 0:
        raise StereoError("radius must be >= 0")
    if radius == 0:
        return cv
    size = 2 * radius + 1
    out = ndi.uniform_filter(cv.cost, size=(size, size, 1), mode="nearest")
    return CostVolume(cost=out)


def winner_take_all(cv: CostVolume) -> DisparityMap:
    """Per-pixel argmin over disparity; ties break toward smaller d."""
    d = np.argmin(cv.cost, axis=2).astype(np.float64)
    return DisparityMap(disparity=d, valid=np.ones(d.shape, dtype=bool))


def left_right_check(dl: DisparityMap, dr: DisparityMap, tol: float = 1.0) -> DisparityMap:
    """Invalidate pixels whose left/right disparities disagree by more than tol."""
    if dl.disparity.shape != dr.disparity.shape:
        raise StereoError("disparity map size mismatch")
    h, w = dl.disparity.shape
    cols = np.arange(w)[None, :].repeat(h, axis=0)
    lookup = cols - np.round(dl.disparity).astype(int)
    in_frame = (lookup >= 0) & (lookup < w)
    rows = np.arange(h)[:, None].repeat(w, axis=1)
    counterpart = np.zeros((h, w))
    counterpart[in_frame] = dr.disparity[rows[in_frame], lookup[in_frame]]
    agree = np.abs(dl.disparity - counterpart) <= tol
    valid = dl.valid & in_frame & agree
    disp = np.where(valid, dl.disparity, 0.0)
    return DisparityMap(disparity=disp, valid=valid)


def _window_median(values: np.ndarray, valid: np.ndarray, radius: int):
    """Median over valid pixels in each (2r+1)^2 window, plus the valid count."""
    h, w = values.shape
    stack = []
    vstack = []
    pv = np.pad(np.where(valid, values, np.nan), radius, mode="constant",
                constant_values=np.nan)
    for dr in range(-radius, radius + 1):
        for dc in range(-radius, radius + 1):
            stack.append(pv[radius + dr:radius + dr + h, radius + dc:radius + dc + w])
    cube = np.stack(stack, axis=2)
    counts = np.sum(~np.isnan(cube), axis=2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN windows
        med = np.nanmedian(cube, axis=2)
    return med, counts


def median_fill(dm: DisparityMap, radius: int = 2) -> DisparityMap:
    """Fill invalid pixels from valid window medians, then 3x3 median smooth."""
    med, counts = _window_median(dm.disparity, dm.valid, radius)
    fill = (~dm.valid) & (counts >= 3)
    disp = np.where(fill, med, dm.disparity)
    valid = dm.valid | fill

    med2, counts2 = _window_median(disp, valid, 1)
    smooth_sel = valid & (counts2 > 0)
    disp = np.where(smooth_sel, med2, disp)
    disp = np.where(valid, disp, 0.0)
    return DisparityMap(disparity=disp, valid=valid)


def right_left_check(dr: DisparityMap, dl: DisparityMap, tol: float = 1.0) -> DisparityMap:
    """Consistency check for the right-referenced map (counterpart at col + d)."""
    if dr.disparity.shape != dl.disparity.shape:
        raise StereoError("disparity map size mismatch")
    h, w = dr.disparity.shape
    cols = np.arange(w)[None, :].repeat(h, axis=0)
    lookup = cols + np.round(dr.disparity).astype(int)
    in_frame = (lookup >= 0) & (lookup < w)
    rows = np.arange(h)[:, None].repeat(w, axis=1)
    counterpart = np.zeros((h, w))
    counterpart[in_frame] = dl.disparity[rows[in_frame], lookup[in_frame]]
    agree = np.abs(dr.disparity - counterpart) <= tol
    valid = dr.valid & in_frame & agree
    return DisparityMap(disparity=np.where(valid, dr.disparity, 0.0), valid=valid)


def compute_disparity_pair(left: np.ndarray, right: np.ndarray, d_max: int = 64,
                           kind: str = "census", agg_radius: int = 3,
                           lr_tol: float = 1.0, fill_radius: int = 2):
    """Left- and right-referenced disparity maps sharing one volume pair.

    Both maps go through their consistency check and median fill.
    """
    cv_l = aggregate_costs(build_cost_volume(left, right, d_max, kind, "left"), agg_radius)
    cv_r = aggregate_costs(build_cost_volume(right, left, d_max, kind, "right"), agg_radius)
    dl = winner_take_all(cv_l)
    dr = winner_take_all(cv_r)
    dm_left = median_fill(left_right_check(dl, dr, lr_tol), fill_radius)
    dm_right = median_fill(right_left_check(dr, dl, lr_tol), fill_radius)
    return dm_left, dm_right


def compute_disparity(left: np.ndarray, right: np.ndarray, d_max: int = 64,
                      kind: str = "census", agg_radius: int = 3,
                      lr_tol: float = 1.0, fill_radius: int = 2) -> DisparityMap:
    """Full left-referenced stereo chain with LR-check and median fill."""
    dm_left, _ = compute_disparity_pair(left, right, d_max, kind, agg_radius,
                                        lr_tol, fill_radius)
    return dm_left
