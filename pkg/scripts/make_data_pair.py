#!/usr/bin/env python3
"""Render the fenced stereo pair bundled in data/.

The pair imitates a hand-held photo of a garden scene taken through a
chain-link fence: a sky-to-ground color gradient, soft foliage blobs, mild
sensor noise, and a dark green fence grid with slightly varying wire color.
The fence sits much closer than the background, so its disparity between the
two views is far larger.
"""

import argparse
from pathlib import Path

import numpy as np

from defence import io
from defence.imaging import gaussian_blur
from defence.pipeline import SyntheticSceneSpec, _fence_pattern


def garden_background(h: int, w: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    rows = np.linspace(0.0, 1.0, h)[:, None, None]
    sky = np.array([0.65, 0.78, 0.92])
    ground = np.array([0.35, 0.47, 0.28])
    base = (1 - rows) * sky + rows * ground

    blobs = gaussian_blur(rng.random((h, w, 3)), 6.0)
    blobs = (blobs - blobs.mean()) * 1.8
    detail = gaussian_blur(rng.random((h, w, 3)), 1.2)
    detail = (detail - detail.mean()) * 0.5

    img = base + blobs + detail
    lo, hi = img.min(), img.max()
    return 0.25 + 0.7 * (img - lo) / (hi - lo)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="data")
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()

    h, w = 288, 384
    bg_disp, fence_disp = 6, 24
    wide = garden_background(h, w + 2 * bg_disp, args.seed)
    left_bg = wide[:, :w]
    right_bg = wide[:, bg_disp:bg_disp + w]

    spec = SyntheticSceneSpec(width=w, height=h, wire_width=5, cell_pitch=40,
                              orientation_deg=38.0, fence_disparity=fence_disp,
                              background_disparity=bg_disp)
    fence_l = _fence_pattern(h, w, spec, phase=0.0)
    fence_r = _fence_pattern(h, w, spec, phase=float(-fence_disp))

    rng = np.random.default_rng(args.seed + 1)
    wire_tint = gaussian_blur(rng.random((h, w)), 3.0)
    wire_tint = 0.06 + 0.10 * (wire_tint - wire_tint.min()) / np.ptp(wire_tint)
    wire = np.stack([wire_tint * 0.8, wire_tint * 1.1, wire_tint * 0.7], axis=2)

    left = left_bg.copy()
    left[fence_l] = wire[fence_l]
    right = right_bg.copy()
    right[fence_r] = wire[fence_r]

    noise = np.random.default_rng(args.seed + 2)
    left = np.clip(left + noise.normal(0, 0.004, left.shape), 0, 1)
    right = np.clip(right + noise.normal(0, 0.004, right.shape), 0, 1)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.save_image(out / "garden_left.png", left)
    io.save_image(out / "garden_right.png", right)
    io.save_mask(out / "garden_fence_left.pgm", fence_l)
    print(f"wrote {out}/garden_left.png, garden_right.png, garden_fence_left.pgm")


if __name__ == "__main__":
    main()
