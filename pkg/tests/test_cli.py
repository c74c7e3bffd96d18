"""Configuration round trips, orchestration outputs, exit codes."""

import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from blindsr import (
    CappedSimplexSpec,
    DenoiserSpec,
    ImageGrid,
    RegularizerSpec,
    datafit,
    phi_value,
)
from blindsr.cli import (
    EXIT_CONFIG,
    EXIT_IO,
    EXIT_OK,
    EXIT_TRANSPORT,
    RunConfig,
    load_preset,
    main,
    run_blind_sr,
)
from blindsr.imageio import load_image, load_kernel, load_raw


def small_synthetic_cfg(tmp_path, **overrides) -> RunConfig:
    cfg = RunConfig(
        mode="synthetic",
        output_dir=str(tmp_path / "out"),
        synthetic_size=32,
        kernel_size=5,
        max_iter=4,
        seed=7,
        noise_std=0.01,
    )
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg


def test_config_round_trip_identity():
    cfg = RunConfig(
        mode="real",
        input="obs.png",
        truth_image=None,
        output_dir="results",
        emit_every=5,
        seed=123,
        scale=4,
        kernel_size=9,
        noise_std=0.02,
        rho=0.25,
        alpha_x=0.9,
        eps=math.inf,
        lam=0.075,
        smoother_width=2.5,
        endpoint="tcp:127.0.0.1:9000",
        cap=0.6,
        terminal_denoise=True,
    )
    assert RunConfig.from_ini(cfg.to_ini()) == cfg


def test_config_round_trip_defaults():
    cfg = RunConfig()
    assert RunConfig.from_ini(cfg.to_ini()) == cfg


def test_config_rejects_unknown_keys():
    from blindsr.errors import ConfigError

    with pytest.raises(ConfigError):
        RunConfig.from_ini("[solver]\nwarp_factor = 9\n")
    with pytest.raises(ConfigError):
        RunConfig.from_ini("[starship]\nrho = 1\n")


def test_presets():
    flair = load_preset("flair")
    assert (flair.lam, flair.cap) == (0.15, 0.45)
    swi = load_preset("swi")
    assert (swi.lam, swi.cap) == (0.075, 0.6)
    for cfg in (flair, swi):
        assert (cfg.rho, cfg.alpha_x, cfg.alpha_theta) == (0.5, 1.34, 0.8)
        assert (cfg.gamma, cfg.nu, cfg.eps) == (0.5, 1e-4, 1e-5)
        assert (cfg.max_iter, cfg.scale, cfg.kernel_size) == (100, 2, 13)
        assert cfg.sigma == 0.06


def test_synthetic_run_writes_outputs(tmp_path):
    cfg = small_synthetic_cfg(tmp_path)
    assert run_blind_sr(cfg) == EXIT_OK
    out = Path(cfg.output_dir)
    for name in ("final_x.png", "final_x.f32", "final_kernel.f32",
                 "trace.csv", "summary.json"):
        assert (out / name).exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["iterations"] >= 1
    assert summary["stop_reason"] in ("tolerance", "max_iter")
    assert "psnr_final" in summary and "psnr_bicubic" in summary
    with open(out / "trace.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == summary["iterations"]
    assert list(rows[0].keys()) == [
        "k", "f", "phi", "F", "H", "lambda_k", "backtracks", "branch",
        "stationarity", "wall_ms",
    ]


def test_synthetic_run_deterministic(tmp_path):
    cfg1 = small_synthetic_cfg(tmp_path / "a")
    cfg2 = small_synthetic_cfg(tmp_path / "b")
    assert run_blind_sr(cfg1) == EXIT_OK
    assert run_blind_sr(cfg2) == EXIT_OK
    a, b = Path(cfg1.output_dir), Path(cfg2.output_dir)
    for name in ("final_x.png", "final_x.f32", "final_kernel.f32", "summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    # traces agree on everything except the wall-clock column
    rows_a = list(csv.reader((a / "trace.csv").open()))
    rows_b = list(csv.reader((b / "trace.csv").open()))
    for ra, rb in zip(rows_a, rows_b):
        assert ra[:-1] == rb[:-1]


def test_infinite_tolerance_single_iteration(tmp_path):
    cfg = small_synthetic_cfg(tmp_path, eps=math.inf)
    assert run_blind_sr(cfg) == EXIT_OK
    summary = json.loads((Path(cfg.output_dir) / "summary.json").read_text())
    assert summary["iterations"] == 1
    assert summary["stop_reason"] == "tolerance"


def test_emitted_iterates_reproduce_logged_objective(tmp_path):
    cfg = small_synthetic_cfg(tmp_path, emit_every=1, max_iter=3)
    assert run_blind_sr(cfg) == EXIT_OK
    out = Path(cfg.output_dir)
    with open(out / "trace.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    reg = RegularizerSpec(
        lam=cfg.lam, denoiser=DenoiserSpec(kind="gaussian_smoother", sigma=cfg.sigma)
    )
    # rebuild the observation exactly as the run did
    from blindsr import generate_synthetic, init_kernel, synthetic_scene

    scene = synthetic_scene(cfg.synthetic_size, cfg.synthetic_size, cfg.seed)
    spec = CappedSimplexSpec.for_kernel(cfg.kernel_size, cfg.cap)
    theta_true = init_kernel(cfg.kernel_size, cfg.true_kernel_std, spec)
    problem = generate_synthetic(scene, theta_true, cfg.scale, cfg.noise_std, cfg.seed)
    for row in rows:
        k = int(row["k"])
        x = ImageGrid(load_raw(out / f"iter_{k:05d}_x.f64"))
        theta = load_kernel(out / f"iter_{k:05d}_theta.f64")
        recomputed = datafit(x, theta, problem.b, cfg.scale) + phi_value(x, reg)
        assert abs(recomputed - float(row["F"])) <= 1e-8 * abs(float(row["F"]))


def test_exit_code_config_error(tmp_path):
    cfg = small_synthetic_cfg(tmp_path, mode="sideways")
    assert run_blind_sr(cfg) == EXIT_CONFIG
    cfg = small_synthetic_cfg(tmp_path, cap=0.001)  # empty constraint set
    assert run_blind_sr(cfg) == EXIT_CONFIG
    cfg = small_synthetic_cfg(tmp_path, mode="real", input=None)
    assert run_blind_sr(cfg) == EXIT_CONFIG
    cfg = small_synthetic_cfg(tmp_path, mode="real", input=str(tmp_path / "nope.png"))
    assert run_blind_sr(cfg) == EXIT_CONFIG


def test_exit_code_io_error(tmp_path):
    bad = tmp_path / "broken.png"
    bad.write_bytes(b"this is not a png")
    cfg = small_synthetic_cfg(tmp_path, mode="real", input=str(bad))
    assert run_blind_sr(cfg) == EXIT_IO


def test_exit_code_transport_error(tmp_path):
    cfg = small_synthetic_cfg(
        tmp_path, denoiser="external", endpoint="tcp:127.0.0.1:1"
    )
    assert run_blind_sr(cfg) == EXIT_TRANSPORT


def test_real_mode_run(tmp_path):
    # degrade a scene, save it, then run from the file as a real observation
    from blindsr import downsample, synthetic_scene
    from blindsr.imageio import save_image

    scene = synthetic_scene(32, 32, 3)
    obs = downsample(scene, 2)
    obs_path = tmp_path / "obs.f32"
    save_image(obs, obs_path)
    cfg = small_synthetic_cfg(tmp_path, mode="real", input=str(obs_path), max_iter=2)
    assert run_blind_sr(cfg) == EXIT_OK
    summary = json.loads((Path(cfg.output_dir) / "summary.json").read_text())
    assert "psnr_final" not in summary  # no ground truth in real mode


def test_main_with_flags(tmp_path):
    out = tmp_path / "cli_out"
    code = main([
        "--preset", "flair", "--synthetic", "--size", "32", "--kernel-size", "5",
        "--max-iter", "2", "--seed", "3", "--output-dir", str(out),
    ])
    assert code == EXIT_OK
    assert (out / "summary.json").exists()


def test_main_config_file_and_override(tmp_path):
    cfg = small_synthetic_cfg(tmp_path, max_iter=1)
    cfg_path = tmp_path / "run.cfg"
    cfg.save(cfg_path)
    out2 = tmp_path / "out2"
    code = main(["--config", str(cfg_path), "--output-dir", str(out2)])
    assert code == EXIT_OK
    assert (out2 / "summary.json").exists()


def test_main_missing_config_reports_io_error(tmp_path):
    code = main(["--config", str(tmp_path / "missing.cfg")])
    assert code == EXIT_IO
