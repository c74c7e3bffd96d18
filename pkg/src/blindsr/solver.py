"""Alternating solver for the blind super-resolution objective.

Minimizes F(x, theta) = 0.5*||S(theta*x) - b||^2 + phi(x) over x free and
theta constrained to the capped simplex, by alternating two asymmetric block
updates per outer iteration:

* x-block, a forward-reflected-backward step: reflect with the difference of
  the last two prior gradients, y_k = x_k + rho*(grad_phi(x_{k-1}) -
  grad_phi(x_k)), then take the proximal step of the data term,
  x_{k+1} = prox_datafit(y_k - alpha_x * grad_phi(x_k), theta_k).
* theta-block, a projected gradient step with an Armijo backtracking line
  search on the step fraction lambda in (0, 1], followed by a comparison
  that keeps the projected point itself whenever it fits the data strictly
  better than the line-search point. Both candidates lie in the constraint
  set, the projected point by construction and the line-search point by
  convexity.

Progress is tracked by the merit value H(x, y, theta) = F(x, theta) +
||x - y||^2 / (4*alpha_x), which decreases monotonically along iterations
whenever rho < 1/(2*L_phi) and alpha_x < (1 - 2*L_phi*rho)/(2*L_phi) hold
for the Lipschitz constant L_phi of grad phi. The run stops when the
relative change of f + phi drops below the tolerance, or at the iteration
cap. One denoiser evaluation and one VJP per outer iteration in steady
state: the prior value/gradient of each new iterate is computed once and
cached.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .errors import InvalidParameterError, SolverError
from .imaging import ImageGrid, KernelGrid, Problem, datafit, grad_theta_datafit
from .projection import CappedSimplexSpec, project_capped_simplex
from .prox import ProxWorkspace, prox_datafit
from .regularizer import (
    RegularizerSpec,
    estimate_lphi,
    induced_denoise,
    phi_and_grad,
    phi_value,
)

__all__ = [
    "SolverConfig",
    "SolverState",
    "IterationRecord",
    "IterationTrace",
    "x_update",
    "theta_update",
    "ThetaStepRecord",
    "merit_value",
    "stationarity_residual",
    "run",
]

BACKTRACK_CAP = 60
FEASIBILITY_TOL = 1e-12
MERIT_FEASIBILITY_TOL = 1e-9
RUNAWAY_FACTOR = 1e6

TRACE_COLUMNS = (
    "k",
    "f",
    "phi",
    "F",
    "H",
    "lambda_k",
    "backtracks",
    "branch",
    "stationarity",
    "wall_ms",
)


@dataclass
class SolverConfig:
    """Every scalar of the iteration plus the prior and constraint specs."""

    regularizer: RegularizerSpec
    constraint: CappedSimplexSpec
    rho: float = 0.5
    alpha_x: float = 1.34
    alpha_theta: float = 0.8
    nu: float = 1e-4
    gamma: float = 0.5
    eps: float = 1e-5
    max_iter: int = 100
    terminal_denoise: bool = False
    validate_steps: bool = False
    keep_iterates: bool = False

    def __post_init__(self):
        if self.rho < 0:
            raise InvalidParameterError(f"rho must be >= 0, got {self.rho}")
        if self.alpha_x <= 0 or self.alpha_theta <= 0:
            raise InvalidParameterError("step sizes must be positive")
        if not 0 < self.nu < 1:
            raise InvalidParameterError(f"nu must lie in (0,1), got {self.nu}")
        if not 0 < self.gamma < 1:
            raise InvalidParameterError(f"gamma must lie in (0,1), got {self.gamma}")
        if not self.eps > 0:
            raise InvalidParameterError(f"eps must be positive, got {self.eps}")
        if self.max_iter < 1:
            raise InvalidParameterError("max_iter must be >= 1")

    def step_conditions_ok(self, lphi: float) -> bool:
        """Whether (rho, alpha_x) satisfy the merit-decrease hypotheses."""
        if lphi <= 0:
            return True
        return self.rho < 1.0 / (2.0 * lphi) and self.alpha_x < (
            1.0 - 2.0 * lphi * self.rho
        ) / (2.0 * lphi)


@dataclass
class SolverState:
    """Rolling state between outer iterations."""

    k: int
    x_prev: ImageGrid
    x_curr: ImageGrid
    theta_curr: KernelGrid
    grad_phi_prev: ImageGrid
    grad_phi_curr: ImageGrid
    phi_curr: float
    objective: float  # f(x_k, theta_k) + phi(x_k)


@dataclass
class ThetaStepRecord:
    """Everything needed to re-verify one theta step after the fact."""

    theta_hat: KernelGrid
    lambda_k: float
    backtracks: int
    branch: str  # "projected" | "linesearch"
    slope: float  # <grad_theta f, d>
    f_base: float  # f(x_{k+1}, theta_k)
    f_linesearch: float  # f(x_{k+1}, theta_k + lambda*d)
    f_projected: float  # f(x_{k+1}, theta_hat)
    cap_hit: bool = False


@dataclass
class IterationRecord:
    k: int
    f: float
    phi: float
    F: float
    H: float
    lambda_k: float
    backtracks: int
    branch: str
    stationarity: float
    wall_ms: float
    f_base: float
    f_linesearch: float
    f_projected: float
    slope: float
    cap_hit: bool
    x: Optional[ImageGrid] = None
    theta: Optional[KernelGrid] = None
    theta_hat: Optional[KernelGrid] = None


@dataclass
class IterationTrace:
    """Append-only per-iteration log of a run."""

    initial_f: float = math.nan
    initial_phi: float = math.nan
    initial_F: float = math.nan
    initial_H: float = math.nan
    records: List[IterationRecord] = field(default_factory=list)
    stop_reason: str = "unfinished"
    step_conditions_ok: Optional[bool] = None
    lphi: Optional[float] = None

    @property
    def iterations(self) -> int:
        return len(self.records)

    def append(self, record: IterationRecord):
        self.records.append(record)

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(",".join(TRACE_COLUMNS) + "\n")
            for r in self.records:
                fh.write(
                    f"{r.k},{r.f!r},{r.phi!r},{r.F!r},{r.H!r},{r.lambda_k!r},"
                    f"{r.backtracks},{r.branch},{r.stationarity!r},{r.wall_ms!r}\n"
                )


def x_update(state: SolverState, problem: Problem, cfg: SolverConfig,
             workspace: Optional[ProxWorkspace] = None) -> ImageGrid:
    """Reflected forward step then proximal backward step on the data term."""
    y = state.x_curr.data + cfg.rho * (
        state.grad_phi_prev.data - state.grad_phi_curr.data
    )
    v = ImageGrid(y - cfg.alpha_x * state.grad_phi_curr.data)
    return prox_datafit(
        v, state.theta_curr, problem.b, problem.s, cfg.alpha_x, workspace
    )


def theta_update(
    state: SolverState, x_new: ImageGrid, problem: Problem, cfg: SolverConfig
) -> Tuple[KernelGrid, ThetaStepRecord]:
    """Projected gradient step with Armijo backtracking and candidate choice."""
    theta = state.theta_curr
    grad = grad_theta_datafit(x_new, theta, problem.b, problem.s)
    target = theta.data - cfg.alpha_theta * grad.data
    theta_hat = project_capped_simplex(KernelGrid(target), cfg.constraint)
    d = theta_hat.data - theta.data
    slope = float(np.vdot(grad.data, d).real)

    f_base = datafit(x_new, theta, problem.b, problem.s)
    lam = 1.0
    backtracks = 0
    while True:
        trial = KernelGrid(theta.data + lam * d)
        f_trial = datafit(x_new, trial, problem.b, problem.s)
        if f_trial <= f_base + cfg.nu * lam * slope:
            break
        if backtracks >= BACKTRACK_CAP:
            # floating-point stall; keep the current kernel and flag it
            return theta, ThetaStepRecord(
                theta_hat=theta_hat,
                lambda_k=lam,
                backtracks=backtracks,
                branch="linesearch",
                slope=slope,
                f_base=f_base,
                f_linesearch=f_trial,
                f_projected=datafit(x_new, theta_hat, problem.b, problem.s),
                cap_hit=True,
            )
        lam *= cfg.gamma
        backtracks += 1

    f_hat = datafit(x_new, theta_hat, problem.b, problem.s)
    if f_hat < f_trial:
        accepted, branch = theta_hat, "projected"
    else:
        accepted, branch = trial, "linesearch"
    return accepted, ThetaStepRecord(
        theta_hat=theta_hat,
        lambda_k=lam,
        backtracks=backtracks,
        branch=branch,
        slope=slope,
        f_base=f_base,
        f_linesearch=f_trial,
        f_projected=f_hat,
    )


def _theta_feasible(theta: KernelGrid, spec: CappedSimplexSpec, tol: float) -> bool:
    d = theta.data
    return bool(
        np.all(d >= -tol)
        and np.all(d <= spec.cap + tol)
        and abs(float(d.sum()) - 1.0) <= tol
    )


def merit_value(
    x: ImageGrid,
    y: ImageGrid,
    theta: KernelGrid,
    problem: Problem,
    cfg: SolverConfig,
) -> float:
    """H(x, y, theta); +inf when theta leaves the constraint set."""
    if not _theta_feasible(theta, cfg.constraint, MERIT_FEASIBILITY_TOL):
        return math.inf
    f = datafit(x, theta, problem.b, problem.s)
    phi = phi_value(x, cfg.regularizer)
    diff = x.data - y.data
    return f + phi + float(np.vdot(diff, diff).real) / (4.0 * cfg.alpha_x)


def stationarity_residual(
    x_new: ImageGrid,
    x_curr: ImageGrid,
    theta_hat: KernelGrid,
    theta_curr: KernelGrid,
    cfg: SolverConfig,
) -> float:
    """Prox-gradient fixed-point surrogate: zero iff both blocks are stationary."""
    dx = float(np.linalg.norm(x_new.data - x_curr.data))
    dtheta = float(np.linalg.norm(theta_hat.data - theta_curr.data))
    return dx / cfg.alpha_x + dtheta / cfg.alpha_theta


def run(
    problem: Problem,
    cfg: SolverConfig,
    init_x: ImageGrid,
    init_theta: KernelGrid,
) -> Tuple[ImageGrid, KernelGrid, IterationTrace]:
    """Full alternating loop; deterministic given inputs.

    Stops when |F_{k+1} - F_k| / |F_k| <= eps (F = f + phi) or after
    max_iter iterations. Returns the final image (terminal-denoised when
    configured), the final kernel, and the trace.
    """
    if init_x.shape != problem.high_res_shape:
        raise InvalidParameterError(
            f"init_x shape {init_x.shape} does not match problem "
            f"high-res shape {problem.high_res_shape}"
        )
    theta0 = init_theta
    if not _theta_feasible(theta0, cfg.constraint, FEASIBILITY_TOL):
        theta0 = project_capped_simplex(theta0, cfg.constraint)

    trace = IterationTrace()
    if cfg.validate_steps:
        lphi = (
            cfg.regularizer.lphi_estimate
            if cfg.regularizer.lphi_estimate is not None
            else estimate_lphi(cfg.regularizer, init_x.shape)
        )
        trace.lphi = lphi
        trace.step_conditions_ok = cfg.step_conditions_ok(lphi)
        if not trace.step_conditions_ok:
            warnings.warn(
                f"step sizes rho={cfg.rho}, alpha_x={cfg.alpha_x} violate the "
                f"merit-decrease conditions for L_phi~{lphi:.4g}; the merit "
                "value may oscillate",
                RuntimeWarning,
                stacklevel=2,
            )

    phi0, gphi0 = phi_and_grad(init_x, cfg.regularizer)
    f0 = datafit(init_x, theta0, problem.b, problem.s)
    state = SolverState(
        k=0,
        x_prev=init_x,
        x_curr=init_x,
        theta_curr=theta0,
        grad_phi_prev=gphi0,
        grad_phi_curr=gphi0,
        phi_curr=phi0,
        objective=f0 + phi0,
    )
    trace.initial_f = f0
    trace.initial_phi = phi0
    trace.initial_F = f0 + phi0
    trace.initial_H = f0 + phi0  # x_{-1} = x_0, so the coupling term is zero

    x0_norm = init_x.norm()
    workspace = ProxWorkspace()

    for k in range(cfg.max_iter):
        tic = time.perf_counter()
        x_new = x_update(state, problem, cfg, workspace)
        phi_new, gphi_new = phi_and_grad(x_new, cfg.regularizer)
        theta_new, step = theta_update(state, x_new, problem, cfg)

        f_new = datafit(x_new, theta_new, problem.b, problem.s)
        objective_new = f_new + phi_new
        dx = x_new.data - state.x_curr.data
        merit = objective_new + float(np.vdot(dx, dx).real) / (4.0 * cfg.alpha_x)
        sres = stationarity_residual(
            x_new, state.x_curr, step.theta_hat, state.theta_curr, cfg
        )
        wall_ms = (time.perf_counter() - tic) * 1e3

        trace.append(
            IterationRecord(
                k=k,
                f=f_new,
                phi=phi_new,
                F=objective_new,
                H=merit,
                lambda_k=step.lambda_k,
                backtracks=step.backtracks,
                branch=step.branch,
                stationarity=sres,
                wall_ms=wall_ms,
                f_base=step.f_base,
                f_linesearch=step.f_linesearch,
                f_projected=step.f_projected,
                slope=step.slope,
                cap_hit=step.cap_hit,
                x=x_new if cfg.keep_iterates else None,
                theta=theta_new if cfg.keep_iterates else None,
                theta_hat=step.theta_hat if cfg.keep_iterates else None,
            )
        )

        if not _theta_feasible(theta_new, cfg.constraint, FEASIBILITY_TOL):
            raise SolverError(f"kernel left the constraint set at iteration {k}")

        previous = state.objective
        state = SolverState(
            k=k + 1,
            x_prev=state.x_curr,
            x_curr=x_new,
            theta_curr=theta_new,
            grad_phi_prev=state.grad_phi_curr,
            grad_phi_curr=gphi_new,
            phi_curr=phi_new,
            objective=objective_new,
        )

        if x_new.norm() > RUNAWAY_FACTOR * max(x0_norm, 1.0):
            trace.stop_reason = "diverged"
            break
        change = abs(objective_new - previous)
        if (change <= cfg.eps * abs(previous)) or (previous == 0.0 and change <= cfg.eps):
            trace.stop_reason = "tolerance"
            break
    else:
        trace.stop_reason = "max_iter"

    x_final = state.x_curr
    if cfg.terminal_denoise:
        x_final = induced_denoise(x_final, cfg.regularizer)
    return x_final, state.theta_curr, trace
