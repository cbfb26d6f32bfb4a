"""Closed-loop simulation of the perturbed follower against the reference.

The plant is the head-point model with an additive velocity disturbance on
the position channels.  Disturbances are a pure function of (seed, substep
index), held constant within each integration substep, so identical seeds
reproduce identical realizations bit for bit across strategies and runs.
The simulation clock is logical: solve times are measured and logged but
never enter the dynamics.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .controllers import (
    CertifiedParams,
    ControllerConfig,
    FeedbackGain,
    NrmpcController,
    TubeController,
)
from .error_frame import Disturbance, input_error as input_error_of, tracking_error
from .kinematics import BodyInput, Pose, RobotParams, input_index, wrap_angle
from .ocp import HorizonConfig, TerminalGains, Weights
from .reference import ReferenceSpec, reference_at
from .solver import NumericalBreakdown, SolverOptions

DISTURBANCE_MODES = ("seeded-random", "worst-case-constant-direction", "zero")


@dataclass(frozen=True)
class DisturbanceModel:
    """Bounded disturbance generator; every sample satisfies ||d|| <= eta exactly."""

    eta: float
    mode: str = "seeded-random"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.eta < 0.0:
            raise ValueError(f"disturbance bound must be non-negative, got {self.eta}")
        if self.mode not in DISTURBANCE_MODES:
            raise ValueError(f"unknown disturbance mode {self.mode!r}")


def sample_disturbance(model: DisturbanceModel, substep: int) -> Disturbance:
    """Disturbance held over one integration substep; deterministic in (seed, substep)."""
    if model.mode == "zero" or model.eta == 0.0:
        return Disturbance(0.0, 0.0)
    if model.mode == "worst-case-constant-direction":
        return Disturbance(model.eta, 0.0)
    rng = np.random.default_rng((model.seed, substep))
    angle = rng.uniform(0.0, 2.0 * math.pi)
    mag = rng.uniform(0.0, model.eta)
    d = Disturbance(mag * math.cos(angle), mag * math.sin(angle))
    assert d.norm <= model.eta + 1e-15
    return d


def _rk4_perturbed(xi: np.ndarray, law, d: np.ndarray, t: float, h: float, rho: float) -> np.ndarray:
    """One RK4 substep of the head model with the control law evaluated at the
    stage times/states and the disturbance held constant."""

    def f(tt: float, x: np.ndarray) -> np.ndarray:
        u = law.input_at(tt, Pose(x[0], x[1], x[2]))
        c, s = math.cos(x[2]), math.sin(x[2])
        ro = rho * u.omega
        return np.array([u.v * c - ro * s + d[0], u.v * s + ro * c + d[1], u.omega])

    k1 = f(t, xi)
    k2 = f(t + 0.5 * h, xi + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, xi + 0.5 * h * k2)
    k4 = f(t + h, xi + h * k3)
    out = xi + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NumericalBreakdown("non-finite state during plant integration")
    return out


class _ConstantLaw:
    def __init__(self, u: BodyInput):
        self.first_input = u
        self._u = u

    def input_at(self, t: float, pose: Pose) -> BodyInput:
        return self._u


def integrate_perturbed(
    head: Pose,
    u: Union[BodyInput, object],
    model: DisturbanceModel,
    dt: float,
    substeps: int,
    rho: float,
    t0: float = 0.0,
    substep_offset: int = 0,
) -> Pose:
    """Propagate the perturbed head model over one interval.

    ``u`` is either a constant body input or a control law with an
    ``input_at(t, pose)`` method; the disturbance is held constant within each
    substep and indexed by ``substep_offset + i``.  The heading is wrapped
    once at the end.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    law = _ConstantLaw(u) if isinstance(u, BodyInput) else u
    h = dt / substeps
    xi = head.as_array()
    for i in range(substeps):
        d = sample_disturbance(model, substep_offset + i)
        xi = _rk4_perturbed(xi, law, np.array([d.d_x, d.d_y]), t0 + i * h, h, rho)
    return Pose(float(xi[0]), float(xi[1]), wrap_angle(float(xi[2])))


@dataclass
class SimLog:
    """Complete record of one closed-loop run.

    Substep series have length n_steps*m + 1; rows at multiples of m are the
    sampling instants.  Per-step series have length n_steps.  Solve times are
    wall-clock measurements and are the only non-deterministic columns.
    """

    strategy: str
    seed: int
    eta: float
    delta: float
    substeps: int
    n_steps: int
    feedback_mode: str
    disturbance_mode: str
    forced: bool
    # substep series
    t: np.ndarray = field(default=None)
    actual: np.ndarray = field(default=None)  # (n, 3) wrapped heading
    ref: np.ndarray = field(default=None)  # (n, 3) wrapped heading
    err: np.ndarray = field(default=None)  # (n, 3)
    u_applied: np.ndarray = field(default=None)  # (n, 2)
    input_idx: np.ndarray = field(default=None)
    pfe: np.ndarray = field(default=None)  # (n, 2)
    dist: np.ndarray = field(default=None)  # (n, 2) disturbance held after each node
    stage_cost: np.ndarray = field(default=None)
    state_cost: np.ndarray = field(default=None)
    input_cost: np.ndarray = field(default=None)
    # per-step series
    t_k: np.ndarray = field(default=None)
    j_opt: np.ndarray = field(default=None)
    solver_iters: np.ndarray = field(default=None)
    solve_time: np.ndarray = field(default=None)
    feasible: np.ndarray = field(default=None)
    fallback: np.ndarray = field(default=None)
    candidate_violation: np.ndarray = field(default=None)
    funnel_excess: np.ndarray = field(default=None)  # nrmpc: worst node excess per step
    reset_deviation: np.ndarray = field(default=None)  # actual vs predicted at interval end
    total_runtime: float = 0.0

    @property
    def n_substep_rows(self) -> int:
        return self.n_steps * self.substeps + 1

    def position_error_norms(self) -> np.ndarray:
        return np.hypot(self.err[:, 0], self.err[:, 1])

    def terminal_window_mean_error(self, window_s: float = 10.0) -> float:
        mask = self.t >= self.t[-1] - window_s + 1e-9
        return float(np.mean(self.position_error_norms()[mask]))

    def feasibility_rate(self) -> float:
        return float(np.mean(self.feasible.astype(float)))

    def cumulative_costs(self) -> dict:
        """Trapezoid-integrated realized costs over the whole run."""
        out = {}
        for name, series in (
            ("stage", self.stage_cost),
            ("state", self.state_cost),
            ("input", self.input_cost),
        ):
            out[name] = float(np.trapz(series, self.t))
        out["total"] = out["stage"]
        return out


@dataclass(frozen=True)
class SimConfig:
    """Everything a closed-loop run needs."""

    params: RobotParams
    weights: Weights
    horizon: HorizonConfig
    gains: TerminalGains
    feedback_gain: FeedbackGain
    reference: ReferenceSpec
    initial_head: Pose
    eta: float
    epsilon: float
    duration: float
    seed: int
    strategy: str = "tube"
    feedback_mode: str = "continuous"
    disturbance_mode: str = "seeded-random"
    solver_options: SolverOptions = SolverOptions()
    forced: bool = False


class CertificationError(RuntimeError):
    """Raised when a run is requested with a failing certificate and no override."""

    def __init__(self, cert: CertifiedParams):
        names = ", ".join(c.name for c in cert.failed())
        super().__init__(f"parameter certification failed: {names}")
        self.cert = cert


def run_closed_loop(cfg: SimConfig, cert: CertifiedParams) -> SimLog:
    """Simulate one strategy for the configured duration and log everything.

    The caller certifies parameters first (see ``certify_tube`` /
    ``certify_nrmpc``); a failing certificate aborts unless the config is
    marked ``forced``, in which case the run proceeds and the log is
    watermarked.
    """
    if cfg.strategy not in ("tube", "nrmpc"):
        raise ValueError(f"unknown strategy {cfg.strategy!r}")
    if not cert.all_passed and not cfg.forced:
        raise CertificationError(cert)

    t_wall = time.perf_counter()
    n_steps = round(cfg.duration / cfg.horizon.delta)
    m = cfg.horizon.m
    h = cfg.horizon.h_sub
    rho = cfg.params.rho

    ctrl_cfg = ControllerConfig(
        params=cfg.params,
        weights=cfg.weights,
        horizon=cfg.horizon,
        gains=cfg.gains,
        reference=cfg.reference,
        solver_options=cfg.solver_options,
    )
    if cfg.strategy == "tube":
        controller = TubeController(
            ctrl_cfg, cert, cfg.feedback_gain, cfg.initial_head, cfg.feedback_mode
        )
    else:
        controller = NrmpcController(ctrl_cfg, cert)

    model = DisturbanceModel(eta=cfg.eta, mode=cfg.disturbance_mode, seed=cfg.seed)

    n_rows = n_steps * m + 1
    log = SimLog(
        strategy=cfg.strategy,
        seed=cfg.seed,
        eta=cfg.eta,
        delta=cfg.horizon.delta,
        substeps=m,
        n_steps=n_steps,
        feedback_mode=cfg.feedback_mode,
        disturbance_mode=cfg.disturbance_mode,
        forced=cfg.forced,
        t=np.empty(n_rows),
        actual=np.empty((n_rows, 3)),
        ref=np.empty((n_rows, 3)),
        err=np.empty((n_rows, 3)),
        u_applied=np.empty((n_rows, 2)),
        input_idx=np.empty(n_rows),
        pfe=np.zeros((n_rows, 2)),
        dist=np.zeros((n_rows, 2)),
        stage_cost=np.empty(n_rows),
        state_cost=np.empty(n_rows),
        input_cost=np.empty(n_rows),
        t_k=np.empty(n_steps),
        j_opt=np.empty(n_steps),
        solver_iters=np.zeros(n_steps, dtype=int),
        solve_time=np.zeros(n_steps),
        feasible=np.zeros(n_steps, dtype=bool),
        fallback=np.zeros(n_steps, dtype=bool),
        candidate_violation=np.full(n_steps, np.nan),
        funnel_excess=np.full(n_steps, np.nan),
        reset_deviation=np.full(n_steps, np.nan),
    )

    xi = cfg.initial_head.as_array()

    def record_row(row: int, t: float, law, nominal_xi: np.ndarray) -> None:
        pose = Pose(xi[0], xi[1], wrap_angle(xi[2]))
        ref_pose, _ = reference_at(cfg.reference, t)
        e = tracking_error(ref_pose, pose)
        u = law.input_at(t, pose)
        ue = input_error_of(u, cfg.reference.v_r, e.theta_rf, rho)
        state_c = cfg.weights.q1 * e.x_rf**2 + cfg.weights.q2 * e.y_rf**2
        input_c = cfg.weights.p1 * ue.e_v**2 + cfg.weights.p2 * ue.e_w**2
        log.t[row] = t
        log.actual[row] = [pose.x, pose.y, pose.theta]
        log.ref[row] = [ref_pose.x, ref_pose.y, ref_pose.theta]
        log.err[row] = [e.x_rf, e.y_rf, e.theta_rf]
        log.u_applied[row] = [u.v, u.omega]
        log.input_idx[row] = input_index(u, cfg.params)
        log.pfe[row] = xi[:2] - nominal_xi[:2]
        log.stage_cost[row] = state_c + input_c
        log.state_cost[row] = state_c
        log.input_cost[row] = input_c

    for k in range(n_steps):
        t_k = k * cfg.horizon.delta
        pose_k = Pose(xi[0], xi[1], wrap_angle(xi[2]))
        law, diag = controller.step(pose_k, t_k)
        sol = diag.solution
        log.t_k[k] = t_k
        log.j_opt[k] = sol.cost
        log.solver_iters[k] = sol.iterations
        log.solve_time[k] = sol.solve_time
        log.feasible[k] = sol.feasible
        log.fallback[k] = diag.fallback
        log.candidate_violation[k] = diag.candidate_violation
        if cfg.strategy == "nrmpc":
            excess = -math.inf
            for j in range(1, cfg.horizon.N + 1):
                bound = cert.r * cfg.horizon.N / j
                excess = max(excess, sol.predicted_errors[j].norm - bound)
            log.funnel_excess[k] = excess

        for i in range(m):
            row = k * m + i
            record_row(row, t_k + i * h, law, diag.nominal_trail[i])
            d = sample_disturbance(model, row)
            log.dist[row] = [d.d_x, d.d_y]
            xi = _rk4_perturbed(xi, law, np.array([d.d_x, d.d_y]), t_k + i * h, h, rho)
        log.reset_deviation[k] = float(np.linalg.norm(xi[:2] - diag.nominal_trail[m, :2]))
        xi[2] = wrap_angle(xi[2])

        if k == n_steps - 1:
            record_row(n_steps * m, n_steps * cfg.horizon.delta, law, diag.nominal_trail[m])

    log.total_runtime = time.perf_counter() - t_wall
    return log
