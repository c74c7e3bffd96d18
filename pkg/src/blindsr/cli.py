"""Command-line entry point: configuration, orchestration, outputs.

A run loads (or synthesizes) an observation, builds the bicubic starting
image and the projected-Gaussian starting kernel, executes the solver, and
writes the final image (16-bit PNG plus raw float32), the final kernel (raw
float32), a CSV trace, and a JSON summary into the output directory.

Configuration is a flat INI file with one section per subsystem; two presets
(`flair`, `swi`) ship with the package and differ in the regularization
weight and the kernel cap. Precedence: built-in defaults, then preset, then
--config file, then individual flags.

Exit codes: 0 success, 1 configuration, 2 file I/O, 3 denoiser transport,
4 solver internal.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import io
import json
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

from .errors import (
    BlindSRError,
    ConfigError,
    InfeasibleSpecError,
    InvalidParameterError,
    TransportError,
)
from .imageio import ImageFormatError, load_image, load_kernel, save_image, save_kernel, save_raw
from .imaging import Problem, generate_synthetic
from .initialization import bicubic_init, init_kernel, psnr, synthetic_scene
from .projection import CappedSimplexSpec
from .regularizer import DenoiserSpec, RegularizerSpec
from .solver import SolverConfig, run as solver_run

__all__ = ["RunConfig", "load_preset", "run_blind_sr", "main"]

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_TRANSPORT = 3
EXIT_SOLVER = 4

_DENOISER_NAMES = {"identity": "identity", "gaussian": "gaussian_smoother", "external": "external"}


@dataclass
class RunConfig:
    """Flat run description; serializes to/from an INI file."""

    # [run]
    mode: str = "synthetic"
    input: Optional[str] = None
    truth_image: Optional[str] = None
    truth_kernel: Optional[str] = None
    output_dir: str = "out"
    emit_trace: bool = True
    emit_every: int = 0
    seed: int = 0
    # [problem]
    scale: int = 2
    kernel_size: int = 13
    noise_std: float = 0.01
    synthetic_size: int = 64
    true_kernel_std: float = 1.5
    # [solver]
    rho: float = 0.5
    alpha_x: float = 1.34
    alpha_theta: float = 0.8
    nu: float = 1e-4
    gamma: float = 0.5
    eps: float = 1e-5
    max_iter: int = 100
    terminal_denoise: bool = False
    validate_steps: bool = False
    # [regularizer]
    lam: float = 0.15
    denoiser: str = "gaussian"
    sigma: float = 0.06
    smoother_width: Optional[float] = None
    endpoint: Optional[str] = None
    vjp_mode: str = "exact"
    # [constraint]
    cap: float = 0.45
    init_kernel_std: float = 1.0

    _SECTIONS = {
        "run": ("mode", "input", "truth_image", "truth_kernel", "output_dir",
                "emit_trace", "emit_every", "seed"),
        "problem": ("scale", "kernel_size", "noise_std", "synthetic_size",
                    "true_kernel_std"),
        "solver": ("rho", "alpha_x", "alpha_theta", "nu", "gamma", "eps",
                   "max_iter", "terminal_denoise", "validate_steps"),
        "regularizer": ("lam", "denoiser", "sigma", "smoother_width", "endpoint",
                        "vjp_mode"),
        "constraint": ("cap", "init_kernel_std"),
    }

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        for section, names in self._SECTIONS.items():
            parser[section] = {}
            for name in names:
                value = getattr(self, name)
                if value is None:
                    parser[section][name] = ""
                elif isinstance(value, bool):
                    parser[section][name] = "true" if value else "false"
                elif isinstance(value, float):
                    parser[section][name] = repr(value)
                else:
                    parser[section][name] = str(value)
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser()
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        fields = {f.name: f for f in dataclasses.fields(cls) if not f.name.startswith("_")}
        kwargs = {}
        for section in parser.sections():
            if section not in cls._SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            for name, raw in parser[section].items():
                if name not in cls._SECTIONS[section]:
                    raise ConfigError(f"unknown key '{name}' in section [{section}]")
                kwargs[name] = _parse_value(fields[name], raw)
        return cls(**kwargs)

    def save(self, path):
        Path(path).write_text(self.to_ini(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_ini(Path(path).read_text(encoding="utf-8"))


def _parse_value(field: dataclasses.Field, raw: str):
    raw = raw.strip()
    type_name = str(field.type)
    if raw == "" and "Optional" in type_name:
        return None
    try:
        if "bool" in type_name:
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if "int" in type_name:
            return int(raw)
        if "float" in type_name:
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value '{raw}' for '{field.name}'") from exc
    return raw


def load_preset(name: str) -> RunConfig:
    """Built-in configuration: 'flair' or 'swi'."""
    try:
        text = resources.files("blindsr.presets").joinpath(f"{name}.cfg").read_text()
    except FileNotFoundError as exc:
        raise ConfigError(f"unknown preset '{name}'") from exc
    return RunConfig.from_ini(text)


def _build_specs(cfg: RunConfig):
    if cfg.mode not in ("synthetic", "real"):
        raise ConfigError(f"mode must be 'synthetic' or 'real', got '{cfg.mode}'")
    if cfg.denoiser not in _DENOISER_NAMES:
        raise ConfigError(f"denoiser must be one of {sorted(_DENOISER_NAMES)}")
    if cfg.mode == "real" and not cfg.input:
        raise ConfigError("real mode requires an input observation path")
    for label, path in (("input", cfg.input), ("truth_image", cfg.truth_image),
                        ("truth_kernel", cfg.truth_kernel)):
        if path and not Path(path).exists():
            raise ConfigError(f"{label} path does not exist: {path}")
    try:
        constraint = CappedSimplexSpec.for_kernel(cfg.kernel_size, cfg.cap)
        denoiser = DenoiserSpec(
            kind=_DENOISER_NAMES[cfg.denoiser],
            sigma=cfg.sigma,
            width=cfg.smoother_width,
            endpoint=cfg.endpoint,
            vjp_mode=cfg.vjp_mode,
        )
        regularizer = RegularizerSpec(lam=cfg.lam, denoiser=denoiser)
        solver_cfg = SolverConfig(
            regularizer=regularizer,
            constraint=constraint,
            rho=cfg.rho,
            alpha_x=cfg.alpha_x,
            alpha_theta=cfg.alpha_theta,
            nu=cfg.nu,
            gamma=cfg.gamma,
            eps=cfg.eps,
            max_iter=cfg.max_iter,
            terminal_denoise=cfg.terminal_denoise,
            validate_steps=cfg.validate_steps,
            keep_iterates=cfg.emit_every > 0,
        )
    except (InvalidParameterError, InfeasibleSpecError) as exc:
        raise ConfigError(str(exc)) from exc
    return constraint, solver_cfg


def _build_problem(cfg: RunConfig, constraint: CappedSimplexSpec) -> Problem:
    if cfg.mode == "synthetic":
        if cfg.input:
            x_true = load_image(cfg.input)
        else:
            x_true = synthetic_scene(cfg.synthetic_size, cfg.synthetic_size, cfg.seed)
        theta_true = init_kernel(cfg.kernel_size, cfg.true_kernel_std, constraint)
        return generate_synthetic(x_true, theta_true, cfg.scale, cfg.noise_std, cfg.seed)

    b = load_image(cfg.input)
    truth = None
    if cfg.truth_image:
        x_true = load_image(cfg.truth_image)
        theta_true = (
            load_kernel(cfg.truth_kernel)
            if cfg.truth_kernel
            else init_kernel(cfg.kernel_size, cfg.true_kernel_std, constraint)
        )
        truth = (x_true, theta_true)
    return Problem(b=b, s=cfg.scale, p=cfg.kernel_size,
                   ground_truth=truth, noise_std=cfg.noise_std)


def _execute(cfg: RunConfig) -> dict:
    constraint, solver_cfg = _build_specs(cfg)
    problem = _build_problem(cfg, constraint)

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    x0 = bicubic_init(problem.b, cfg.scale)
    theta0 = init_kernel(cfg.kernel_size, cfg.init_kernel_std, constraint)
    try:
        x_final, theta_final, trace = solver_run(problem, solver_cfg, x0, theta0)
    finally:
        solver_cfg.regularizer.denoiser.close()

    save_image(x_final, out / "final_x.png")
    save_image(x_final, out / "final_x.f32")
    save_kernel(theta_final, out / "final_kernel.f32")
    if cfg.emit_trace:
        trace.write_csv(out / "trace.csv")
    if cfg.emit_every > 0:
        for record in trace.records:
            if record.k % cfg.emit_every == 0 and record.x is not None:
                save_raw(record.x.data, out / f"iter_{record.k:05d}_x.f64")
                save_raw(record.theta.data, out / f"iter_{record.k:05d}_theta.f64")

    summary = {
        "final_F": trace.records[-1].F if trace.records else trace.initial_F,
        "iterations": trace.iterations,
        "stop_reason": trace.stop_reason,
    }
    if problem.ground_truth is not None:
        x_true = problem.ground_truth[0]
        summary["psnr_final"] = psnr(x_final, x_true, peak=1.0)
        summary["psnr_bicubic"] = psnr(x0, x_true, peak=1.0)
    (out / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return summary


def run_blind_sr(cfg: RunConfig) -> int:
    """Execute one configured run; exceptions become categorized exit codes."""
    try:
        summary = _execute(cfg)
    except ConfigError as exc:
        print(f"error (config): {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ImageFormatError, OSError) as exc:
        print(f"error (io): {exc}", file=sys.stderr)
        return EXIT_IO
    except TransportError as exc:
        print(f"error (transport): {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except BlindSRError as exc:
        print(f"error (solver): {exc}", file=sys.stderr)
        return EXIT_SOLVER
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _add_override(parser: argparse.ArgumentParser, flag: str, name: str, typ, help_text: str):
    parser.add_argument(flag, dest=name, type=typ, default=None, help=help_text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blindsr",
        description="Blind single-image super-resolution with a plug-and-play prior.",
    )
    parser.add_argument("--config", default=None, help="INI config file")
    parser.add_argument("--preset", choices=["flair", "swi"], default=None,
                        help="start from a named built-in configuration")
    parser.add_argument("--input", default=None, help="observation image path")
    parser.add_argument("--output-dir", dest="output_dir", default=None)
    parser.add_argument("--synthetic", action="store_const", const=True, default=None,
                        help="synthesize the observation from a scene + kernel")
    parser.add_argument("--truth-image", dest="truth_image", default=None)
    parser.add_argument("--truth-kernel", dest="truth_kernel", default=None)
    parser.add_argument("--denoiser", choices=sorted(_DENOISER_NAMES), default=None)
    parser.add_argument("--endpoint", default=None, help="external denoiser descriptor")
    parser.add_argument("--vjp-mode", dest="vjp_mode",
                        choices=["exact", "residual_approx"], default=None)
    parser.add_argument("--terminal-denoise", dest="terminal_denoise",
                        action="store_const", const=True, default=None)
    parser.add_argument("--validate-steps", dest="validate_steps",
                        action="store_const", const=True, default=None)
    _add_override(parser, "--seed", "seed", int, "RNG seed")
    _add_override(parser, "--scale", "scale", int, "super-resolution factor s")
    _add_override(parser, "--kernel-size", "kernel_size", int, "kernel side p (odd)")
    _add_override(parser, "--noise-std", "noise_std", float, "synthetic noise level")
    _add_override(parser, "--size", "synthetic_size", int, "synthetic scene side")
    _add_override(parser, "--true-kernel-std", "true_kernel_std", float,
                  "synthetic blur kernel std")
    _add_override(parser, "--init-kernel-std", "init_kernel_std", float,
                  "starting kernel std")
    _add_override(parser, "--rho", "rho", float, "reflection weight")
    _add_override(parser, "--alpha-x", "alpha_x", float, "image step size")
    _add_override(parser, "--alpha-theta", "alpha_theta", float, "kernel step size")
    _add_override(parser, "--nu", "nu", float, "Armijo constant")
    _add_override(parser, "--gamma", "gamma", float, "backtracking factor")
    _add_override(parser, "--eps", "eps", float, "stopping tolerance")
    _add_override(parser, "--max-iter", "max_iter", int, "iteration cap")
    _add_override(parser, "--lam", "lam", float, "regularization weight")
    _add_override(parser, "--sigma", "sigma", float, "denoiser noise-level parameter")
    _add_override(parser, "--smoother-width", "smoother_width", float,
                  "explicit Gaussian smoother width (pixels)")
    _add_override(parser, "--cap", "cap", float, "kernel entry upper bound M")
    _add_override(parser, "--emit-every", "emit_every", int,
                  "write iterate snapshots every N iterations (0 = off)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_preset(args.preset) if args.preset else RunConfig()
        if args.config:
            cfg = RunConfig.from_ini(Path(args.config).read_text(encoding="utf-8"))
    except ConfigError as exc:
        print(f"error (config): {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error (io): {exc}", file=sys.stderr)
        return EXIT_IO

    for field in dataclasses.fields(RunConfig):
        if field.name.startswith("_") or not hasattr(args, field.name):
            continue
        value = getattr(args, field.name)
        if value is not None:
            setattr(cfg, field.name, value)
    if args.synthetic:
        cfg.mode = "synthetic"
    elif args.input:
        cfg.mode = "real"
    return run_blind_sr(cfg)


if __name__ == "__main__":
    sys.exit(main())
