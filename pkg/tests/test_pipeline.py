"""Pipeline orchestration tests: config parsing, scene generation, metrics,
CLI round trip, exit codes, debug artifacts, determinism."""

import math

import numpy as np
import pytest

from defence import io
from defence.cli import main as cli_main
from defence.pipeline import (DEBUG_FILES, ConfigError, PipelineConfig,
                              PipelineError, SyntheticSceneSpec,
                              apply_config_values, evaluate, generate_scene,
                              parse_config_file, run_pipeline_arrays)

RNG = np.random.default_rng(13)

# a small, fast scene used for end-to-end plumbing tests
SMALL_SCENE = dict(width=160, height=120, wire_width=4, cell_pitch=32,
                   fence_disparity=16, background_disparity=4, seed=5)
SMALL_OVERRIDES = {"d_max": 24, "flow_levels": 3, "outer_iters": 60}


def _small_config(**extra):
    cfg = PipelineConfig()
    for k, v in {**SMALL_OVERRIDES, **extra}.items():
        setattr(cfg, k, v)
    return cfg


# --------------------------------------------------------------------------
# config parsing and validation
# --------------------------------------------------------------------------

def test_parse_config_file(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# comment\nd_max = 32\nmu=0.02  # trailing comment\n\n"
                 "patch_kind = zeromean\n", encoding="utf-8")
    values = parse_config_file(p)
    assert values == {"d_max": "32", "mu": "0.02", "patch_kind": "zeromean"}
    cfg = apply_config_values(PipelineConfig(), values)
    assert cfg.d_max == 32
    assert cfg.mu == 0.02
    assert cfg.patch_kind == "zeromean"


def test_parse_config_rejects_malformed_line(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("this is not a pair\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        parse_config_file(p)


def test_apply_config_rejects_unknown_field():
    with pytest.raises(ConfigError, match="unknown config field"):
        apply_config_values(PipelineConfig(), {"no_such_field": "1"})


@pytest.mark.parametrize("field,value", [
    ("d_max", 0), ("patch_kind", "sift"), ("agg_radius", -1),
    ("alpha_t", 1.5), ("preblur_sigma", 0.0), ("flow_levels", 0),
    ("mu", -1.0), ("lam", 0.0), ("outer_iters", 0), ("tol", 0.0),
])
def test_validate_names_offending_field(field, value):
    cfg = PipelineConfig()
    setattr(cfg, field, value)
    with pytest.raises(ConfigError, match=field):
        cfg.validate()


# --------------------------------------------------------------------------
# synthetic scene generator
# --------------------------------------------------------------------------

def test_scene_generator_invariants():
    with pytest.raises(ConfigError):
        generate_scene(SyntheticSceneSpec(wire_width=0))
    with pytest.raises(ConfigError):
        generate_scene(SyntheticSceneSpec(wire_width=32, cell_pitch=32))
    with pytest.raises(ConfigError):
        generate_scene(SyntheticSceneSpec(fence_disparity=5,
                                          background_disparity=5))


def test_scene_geometry_consistency():
    spec = SyntheticSceneSpec(**SMALL_SCENE)
    scene = generate_scene(spec)
    left, right = scene["left"], scene["right"]
    truth = scene["truth_background"]
    fl, fr = scene["truth_fence_left"], scene["truth_fence_right"]
    assert left.shape == right.shape == truth.shape
    # fence pixels carry the fence color; background pixels match truth
    assert np.allclose(left[fl], spec.fence_value)
    assert np.array_equal(left[~fl], truth[~fl])
    # background disparity: left (r, c) == right (r, c - d) off both fences
    d = spec.background_disparity
    both_bg = ~fl[:, d:] & ~fr[:, :-d]
    assert np.allclose(left[:, d:][both_bg], right[:, :-d][both_bg])
    # fence disparity relates the two fence masks the same way
    df = spec.fence_disparity
    assert np.array_equal(fl[:, df:], fr[:, :-df])


def test_scene_noise_is_seeded():
    spec = SyntheticSceneSpec(**{**SMALL_SCENE, "noise_sigma": 0.01})
    a = generate_scene(spec)
    b = generate_scene(spec)
    assert np.array_equal(a["left"], b["left"])
    assert not np.array_equal(a["left"], generate_scene(
        SyntheticSceneSpec(**{**SMALL_SCENE, "noise_sigma": 0.01, "seed": 6}))["left"])


# --------------------------------------------------------------------------
# evaluate
# --------------------------------------------------------------------------

def test_evaluate_exact_match_infinite_psnr():
    img = RNG.random((8, 8, 3))
    region = np.ones((8, 8), dtype=bool)
    m = evaluate(img, img.copy(), region)
    assert m["mse"] == 0.0
    assert math.isinf(m["psnr"])


def test_evaluate_uniform_error_closed_form():
    truth = np.full((10, 10), 0.5)
    result = truth + 0.1
    m = evaluate(result, truth, np.ones((10, 10), dtype=bool))
    assert m["mse"] == pytest.approx(0.01)
    assert m["psnr"] == pytest.approx(20.0)


def test_evaluate_matches_direct_summation():
    truth = RNG.random((9, 9))
    result = RNG.random((9, 9))
    region = RNG.random((9, 9)) > 0.4
    m = evaluate(result, truth, region)
    direct = np.mean([(result[r, c] - truth[r, c]) ** 2
                      for r in range(9) for c in range(9) if region[r, c]])
    assert m["mse"] == pytest.approx(direct, rel=1e-12)


def test_evaluate_rejects_empty_region_and_mismatch():
    img = np.zeros((4, 4))
    with pytest.raises(ConfigError):
        evaluate(img, img, np.zeros((4, 4), dtype=bool))
    with pytest.raises(ConfigError):
        evaluate(img, np.zeros((5, 4)), np.ones((4, 4), dtype=bool))


# --------------------------------------------------------------------------
# run_pipeline_arrays plumbing
# --------------------------------------------------------------------------

def test_pipeline_rejects_mismatched_sizes():
    with pytest.raises(PipelineError):
        run_pipeline_arrays(np.zeros((32, 32, 3)), np.zeros((32, 33, 3)),
                            PipelineConfig())


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    scene = generate_scene(SyntheticSceneSpec(**SMALL_SCENE))
    debug = tmp_path_factory.mktemp("debug")
    result, diag = run_pipeline_arrays(scene["left"], scene["right"],
                                       _small_config(), debug_dir=debug)
    return scene, result, diag, debug


def test_pipeline_small_scene_quality(small_run):
    scene, result, diag, _ = small_run
    a = scene["truth_fence_left"]
    iou = (a & diag["fence_left"]).sum() / max((a | diag["fence_left"]).sum(), 1)
    assert iou >= 0.8
    psnr = evaluate(result, scene["truth_background"], a)["psnr"]
    assert psnr >= 25.0


def test_pipeline_writes_all_debug_artifacts(small_run):
    _, _, _, debug = small_run
    for name in DEBUG_FILES:
        assert (debug / name).is_file(), name


def test_pipeline_deterministic(small_run):
    scene, result, _, _ = small_run
    again, _ = run_pipeline_arrays(scene["left"], scene["right"], _small_config())
    assert np.array_equal(result, again)


def test_pipeline_energy_csv_is_well_formed(small_run):
    _, _, _, debug = small_run
    lines = (debug / "energy.csv").read_text().strip().splitlines()
    assert lines[0] == "iteration,energy,relative_change"
    assert len(lines) >= 3
    energies = [float(line.split(",")[1]) for line in lines[1:]]
    assert energies[-1] <= energies[0]


# --------------------------------------------------------------------------
# CLI round trip and exit codes
# --------------------------------------------------------------------------

def _write_small_spec(path):
    path.write_text("".join(f"{k} = {v}\n" for k, v in SMALL_SCENE.items()),
                    encoding="utf-8")


def test_cli_synth_run_eval_roundtrip(tmp_path, capsys):
    spec = tmp_path / "scene.cfg"
    _write_small_spec(spec)
    scene_dir = tmp_path / "scene"
    assert cli_main(["synth", "--spec", str(spec),
                     "--out-dir", str(scene_dir)]) == 0
    for name in ("left.png", "right.png", "truth_background.png",
                 "truth_fence_left.pgm", "truth_fence_right.pgm"):
        assert (scene_dir / name).is_file()

    out = tmp_path / "defenced.png"
    sets = [f"--set={k}={v}" for k, v in SMALL_OVERRIDES.items()]
    assert cli_main(["run", "--left", str(scene_dir / "left.png"),
                     "--right", str(scene_dir / "right.png"),
                     "--out", str(out), *sets]) == 0
    assert out.is_file()

    assert cli_main(["eval", "--result", str(out),
                     "--truth", str(scene_dir / "truth_background.png"),
                     "--mask", str(scene_dir / "truth_fence_left.pgm")]) == 0
    printed = capsys.readouterr().out
    assert "mse=" in printed and "psnr=" in printed
    psnr = float(printed.rsplit("psnr=", 1)[1].split("dB")[0])
    assert psnr >= 25.0


def test_cli_run_bad_config_value_exits_2(tmp_path):
    code = cli_main(["run", "--left", "a.png", "--right", "b.png",
                     "--out", str(tmp_path / "o.png"), "--set", "d_max=-4"])
    assert code == 2


def test_cli_run_unknown_field_exits_2(tmp_path):
    code = cli_main(["run", "--left", "a.png", "--right", "b.png",
                     "--out", str(tmp_path / "o.png"), "--set", "bogus=1"])
    assert code == 2


def test_cli_run_missing_input_exits_3(tmp_path):
    code = cli_main(["run", "--left", str(tmp_path / "missing.png"),
                     "--right", str(tmp_path / "missing.png"),
                     "--out", str(tmp_path / "o.png")])
    assert code == 3


def test_cli_run_numerical_failure_exits_4_and_cleans_up(tmp_path):
    # a grossly oversized fixed descent step makes the solver blow up on any
    # pair with nonzero data residuals; partial outputs must be removed
    scene = generate_scene(SyntheticSceneSpec(**SMALL_SCENE))
    left = tmp_path / "l.png"
    right = tmp_path / "r.png"
    io.save_image(left, scene["left"])
    io.save_image(right, scene["right"])
    out = tmp_path / "o.png"
    debug = tmp_path / "dbg"
    sets = [f"--set={k}={v}" for k, v in SMALL_OVERRIDES.items()]
    code = cli_main(["run", "--left", str(left), "--right", str(right),
                     "--out", str(out), "--debug-dir", str(debug),
                     *sets, "--set", "sd_step=1e8"])
    assert code == 4
    assert not out.exists()
    for name in DEBUG_FILES:
        assert not (debug / name).exists()


def test_cli_synth_missing_spec_exits_3(tmp_path):
    assert cli_main(["synth", "--spec", str(tmp_path / "nope.cfg"),
                     "--out-dir", str(tmp_path / "d")]) == 3


def test_cli_eval_missing_file_exits_3(tmp_path):
    assert cli_main(["eval", "--result", str(tmp_path / "a.png"),
                     "--truth", str(tmp_path / "b.png"),
                     "--mask", str(tmp_path / "c.pgm")]) == 3
