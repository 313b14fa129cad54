"""End-to-end de-fencing pipeline, synthetic scene generation, evaluation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import fencemask, flow, imaging, io, solver, stereo


class ConfigError(ValueError):
    pass


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


DEBUG_FILES = (
    "disparity.pfm", "disparity.png", "scribbles.png", "alpha.png",
    "fence_left.pgm", "fence_right.pgm", "flow.pfm", "energy.csv",
)


@dataclass
class PipelineConfig:
    left: str = ""
    right: str = ""
    out: str = ""
    debug_dir: str | None = None
    # stereo
    d_max: int = 64
    patch_kind: str = "census"
    # 0 by default: the 9x9 descriptor support already aggregates, and box
    # filtering smears thin near-layer structures across the cost volume
    agg_radius: int = 0
    lr_tol: float = 1.0
    fill_radius: int = 2
    # fence mask
    dilate_r: int = 5
    erode_r: int = 2
    canny_low: float = 0.1
    canny_high: float = 0.3
    alpha_t: float = 0.5
    matting_eps: float = 1e-5
    matting_gamma: float = 1e2
    safety_dilate: int = 1
    # flow
    preblur_sigma: float = 2.0
    flow_levels: int = 4
    flow_alpha: float = 15.0
    flow_iters: int = 200
    # solver
    mu: float = 0.01
    lam: float = 0.1
    outer_iters: int = 100
    sd_iters: int = 10
    sd_step: float | str = "auto"
    tol: float = 1e-5

    def validate(self):
        checks = [
            ("d_max", self.d_max >= 1),
            ("patch_kind", self.patch_kind in ("census", "zeromean")),
            ("agg_radius", self.agg_radius >= 0),
            ("lr_tol", self.lr_tol >= 0),
            ("fill_radius", self.fill_radius >= 0),
            ("dilate_r", self.dilate_r >= 1),
            ("erode_r", self.erode_r >= 1),
            ("canny_low", 0.0 <= self.canny_low < self.canny_high),
            ("canny_high", self.canny_high <= 1.0),
            ("alpha_t", 0.0 < self.alpha_t < 1.0),
            ("matting_eps", self.matting_eps > 0),
            ("matting_gamma", self.matting_gamma > 0),
            ("safety_dilate", self.safety_dilate >= 0),
            ("preblur_sigma", self.preblur_sigma > 0),
            ("flow_levels", self.flow_levels >= 1),
            ("flow_alpha", self.flow_alpha > 0),
            ("flow_iters", self.flow_iters >= 1),
            ("mu", self.mu > 0),
            ("lam", self.lam > 0),
            ("outer_iters", self.outer_iters >= 1),
            ("sd_iters", self.sd_iters >= 1),
            ("sd_step", self.sd_step == "auto"
             or (isinstance(self.sd_step, float) and self.sd_step > 0)),
            ("tol", self.tol > 0),
        ]
        for name, ok in checks:
            if not ok:
                raise ConfigError(f"invalid value for config field '{name}'")

    def solver_config(self) -> solver.SolverConfig:
        return solver.SolverConfig(mu=self.mu, lam=self.lam,
                                   outer_iters=self.outer_iters,
                                   sd_iters=self.sd_iters,
                                   sd_step=self.sd_step, tol=self.tol)


_CONFIG_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def parse_config_file(path) -> dict:
    """Flat key = value config text, '#' comments, UTF-8."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def apply_config_values(cfg: PipelineConfig, values: dict) -> PipelineConfig:
    for key, raw in values.items():
        if key not in _CONFIG_TYPES:
            raise ConfigError(f"unknown config field '{key}'")
        current = getattr(cfg, key)
        if key == "sd_step":
            setattr(cfg, key, raw if raw == "auto" else float(raw))
        elif isinstance(current, bool):
            setattr(cfg, key, raw.lower() in ("1", "true", "yes"))
        elif isinstance(current, int):
            setattr(cfg, key, int(raw))
        elif isinstance(current, float):
            setattr(cfg, key, float(raw))
        else:
            setattr(cfg, key, raw)
    return cfg


@dataclass
class SyntheticSceneSpec:
    width: int = 320
    height: int = 240
    wire_width: int = 4
    cell_pitch: int = 32
    # diagonal wires minimize the background area occluded in both views:
    # axis-aligned wires shift nearly along themselves between the frames
    orientation_deg: float = 45.0
    fence_disparity: int = 20
    background_disparity: int = 5
    noise_sigma: float = 0.0
    seed: int = 0
    background_path: str | None = None
    fence_value: float = 0.1

    def validate(self):
        if self.wire_width < 1 or self.wire_width >= self.cell_pitch:
            raise ConfigError("invalid value for config field 'wire_width'")
        if not (self.fence_disparity > self.background_disparity >= 0):
            raise ConfigError("invalid value for config field 'fence_disparity'")
        if self.width < 16 or self.height < 16:
            raise ConfigError("invalid value for config field 'width'")
        if self.noise_sigma < 0:
            raise ConfigError("invalid value for config field 'noise_sigma'")


def _procedural_background(h: int, w: int, seed: int) -> np.ndarray:
    """Smooth colorful random texture with enough detail to match on."""
    rng = np.random.default_rng(seed)
    pad = 80  # room for horizontal shifting between views
    smooth = imaging.gaussian_blur(rng.random((h, w + 2 * pad, 3)), 4.0)
    fine = imaging.gaussian_blur(rng.random((h, w + 2 * pad, 3)), 1.0)
    # mostly smooth (so occluded patches extrapolate well) with a mild fine
    # component that keeps patch matching well-conditioned
    tex = 0.85 * smooth + 0.15 * fine
    lo, hi = tex.min(), tex.max()
    # keep the background clear of the dark fence color so alpha matting
    # has an unambiguous color separation to propagate
    return 0.30 + 0.65 * (tex - lo) / max(hi - lo, 1e-12)


def _fence_pattern(h: int, w: int, spec: SyntheticSceneSpec, phase: float) -> np.ndarray:
    """Regular grid of wires; phase shifts the pattern horizontally."""
    rr, cc = np.meshgrid(np.arange(h, dtype=float),
                         np.arange(w, dtype=float), indexing="ij")
    theta = math.radians(spec.orientation_deg)
    xr = (cc - phase) * math.cos(theta) + rr * math.sin(theta)
    yr = -(cc - phase) * math.sin(theta) + rr * math.cos(theta)
    on_x = np.mod(xr, spec.cell_pitch) < spec.wire_width
    on_y = np.mod(yr, spec.cell_pitch) < spec.wire_width
    return on_x | on_y


def generate_scene(spec: SyntheticSceneSpec) -> dict:
    """Render a fenced stereo pair with ground truth.

    The right view shifts the background by background_disparity and the
    fence by fence_disparity (fence occludes background). Returns left,
    right, the clean background, and the left-frame fence mask.
    """
    spec.validate()
    h, w = spec.height, spec.width
    if spec.background_path:
        wide = io.load_image(spec.background_path)
        if wide.shape[0] < h or wide.shape[1] < w + spec.background_disparity:
            raise ConfigError("background image too small for requested scene")
        pad = spec.background_disparity
        wide = wide[:h, :w + pad]
        if wide.ndim == 2:
            wide = np.stack([wide] * 3, axis=2)
        truth = wide[:, :w]
        right_bg = wide[:, pad:pad + w]
    else:
        pad = 80
        wide = _procedural_background(h, w, spec.seed)
        truth = wide[:, pad:pad + w]
        # left pixel (r, c) corresponds to right pixel (r, c - d)
        right_bg = wide[:, pad + spec.background_disparity:pad + spec.background_disparity + w]

    fence_left = _fence_pattern(h, w, spec, phase=0.0)
    fence_right = _fence_pattern(h, w, spec, phase=float(-spec.fence_disparity))

    left = truth.copy()
    left[fence_left] = spec.fence_value
    right = right_bg.copy()
    right[fence_right] = spec.fence_value

    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed + 1)
        left = left + rng.normal(0.0, spec.noise_sigma, size=left.shape)
        right = right + rng.normal(0.0, spec.noise_sigma, size=right.shape)
    left = np.clip(left, 0.0, 1.0)
    right = np.clip(right, 0.0, 1.0)
    return {
        "left": left,
        "right": right,
        "truth_background": truth,
        "truth_fence_left": fence_left,
        "truth_fence_right": fence_right,
    }


def evaluate(result: np.ndarray, truth: np.ndarray, region: np.ndarray) -> dict:
    """Region-restricted MSE and PSNR for [0, 1] images."""
    if result.shape != truth.shape or region.shape != result.shape[:2]:
        raise ConfigError("size mismatch between result, truth, and region")
    region = np.asarray(region, dtype=bool)
    if not region.any():
        raise ConfigError("evaluation region is empty")
    diff = (result - truth)
    if diff.ndim == 3:
        mse = float(np.mean(diff[region] ** 2))
    else:
        mse = float(np.mean(diff[region] ** 2))
    psnr = float("inf") if mse == 0.0 else 10.0 * math.log10(1.0 / mse)
    return {"mse": mse, "psnr": psnr}


def _initial_estimate(left: np.ndarray, visibility: np.ndarray) -> np.ndarray:
    """Left frame with fence pixels filled by a local average of visible ones."""
    return flow.fill_from_valid(left, ~visibility, start_radius=5)


def run_pipeline_arrays(left: np.ndarray, right: np.ndarray,
                        cfg: PipelineConfig, debug_dir=None):
    """Run the full de-fencing pipeline on in-memory images.

    Returns (defenced image, diagnostics dict). Stage failures raise
    PipelineError tagged with the stage name.
    """
    cfg.validate()
    if left.shape != right.shape:
        raise PipelineError("validate", "input image sizes differ")
    debug = Path(debug_dir) if debug_dir else None
    if debug:
        debug.mkdir(parents=True, exist_ok=True)
    diag = {}

    def stage(name, fn):
        try:
            return fn()
        except PipelineError:
            raise
        except Exception as exc:
            raise PipelineError(name, str(exc)) from exc

    luma_l = imaging.luma(left)
    luma_r = imaging.luma(right)

    dm_left, dm_right = stage("stereo", lambda: stereo.compute_disparity_pair(
        luma_l, luma_r, cfg.d_max, cfg.patch_kind, cfg.agg_radius,
        cfg.lr_tol, cfg.fill_radius))
    diag["disparity"] = dm_left

    def detect(img, dm):
        return fencemask.detect_fence(
            img, dm, cfg.dilate_r, cfg.erode_r, cfg.canny_low, cfg.canny_high,
            cfg.matting_eps, cfg.matting_gamma, cfg.alpha_t)

    fence_l, alpha_l, scribbles_l = stage("fencemask", lambda: detect(left, dm_left))
    fence_r, _, _ = stage("fencemask", lambda: detect(right, dm_right))
    vis_l = fencemask.mask_for_frame(fence_l, cfg.safety_dilate)
    vis_r = fencemask.mask_for_frame(fence_r, cfg.safety_dilate)
    diag["fence_left"] = fence_l
    diag["fence_right"] = fence_r
    diag["alpha"] = alpha_l

    blur_l = stage("flow", lambda: flow.preblur_fences(luma_l, fence_l, cfg.preblur_sigma))
    blur_r = stage("flow", lambda: flow.preblur_fences(luma_r, fence_r, cfg.preblur_sigma))
    # reference = right frame: flow carries each right pixel to its left-frame
    # position, so the induced operator maps the latent (left-aligned) image
    # into right-frame coordinates.
    fl = stage("flow", lambda: flow.estimate_flow(
        blur_r, blur_l, cfg.flow_levels, cfg.flow_alpha, cfg.flow_iters))
    warp_r = flow.build_warp(fl)
    diag["flow"] = fl

    obs = solver.ObservationSet(frames=[
        solver.Frame(y=left * _bmask(left, vis_l), visibility=vis_l,
                     warp=flow.identity_warp(vis_l.shape)),
        solver.Frame(y=right * _bmask(right, vis_r), visibility=vis_r,
                     warp=warp_r),
    ])
    x0 = _initial_estimate(left, vis_l)
    result, state = stage("solver", lambda: solver.solve(obs, cfg.solver_config(), x0))
    diag["state"] = state

    if debug:
        io.save_pfm(debug / "disparity.pfm", dm_left.disparity.astype(np.float32))
        io.save_image(debug / "disparity.png",
                      io.disparity_to_color(dm_left.disparity, dm_left.valid))
        io.save_image(debug / "scribbles.png", _scribble_render(scribbles_l, fence_l.shape))
        io.save_image(debug / "alpha.png", np.clip(alpha_l, 0.0, 1.0))
        io.save_mask(debug / "fence_left.pgm", fence_l)
        io.save_mask(debug / "fence_right.pgm", fence_r)
        io.save_pfm(debug / "flow.pfm",
                    np.stack([fl.u, fl.v, np.zeros_like(fl.u)], axis=2))
        with open(debug / "energy.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["iteration", "energy", "relative_change"])
            trace = state.energy_trace
            for i, e in enumerate(trace):
                rel = "" if i == 0 else abs(trace[i] - trace[i - 1]) / max(abs(trace[i - 1]), 1e-300)
                writer.writerow([i, f"{e:.10e}", rel if rel == "" else f"{rel:.6e}"])
    return result, diag


def _bmask(img, vis):
    return vis[:, :, None] if img.ndim == 3 else vis


def _scribble_render(scribbles, shape):
    """Green foreground, blue background scribbles on black."""
    img = np.zeros(shape + (3,))
    if scribbles is not None:
        img[scribbles.foreground, 1] = 1.0
        img[scribbles.background, 2] = 1.0
    return img


def run_pipeline(cfg: PipelineConfig) -> int:
    """File-based entry point; returns a process exit code.

    0 success, 2 config error, 3 I/O error, 4 numerical failure.
    """
    out_path = Path(cfg.out) if cfg.out else None
    try:
        cfg.validate()
        left = io.load_image(cfg.left)
        right = io.load_image(cfg.right)
    except ConfigError as exc:
        print(f"config error: {exc}")
        return 2
    except io.IOError_ as exc:
        print(f"i/o error: {exc}")
        return 3
    try:
        result, _ = run_pipeline_arrays(left, right, cfg, cfg.debug_dir)
        io.save_image(out_path, result)
    except PipelineError as exc:
        _cleanup_partial(out_path, cfg.debug_dir)
        print(f"pipeline failure: {exc}")
        return 4
    except (solver.SolverError, fencemask.MattingSolveError) as exc:
        _cleanup_partial(out_path, cfg.debug_dir)
        print(f"numerical failure: {exc}")
        return 4
    except io.IOError_ as exc:
        print(f"i/o error: {exc}")
        return 3
    return 0


def _cleanup_partial(out_path, debug_dir):
    if out_path and out_path.exists():
        out_path.unlink()
    if debug_dir:
        for name in DEBUG_FILES:
            p = Path(debug_dir) / name
            if p.exists():
                p.unlink()
