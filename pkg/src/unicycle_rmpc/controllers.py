"""Closed-loop strategies and the sufficient-condition certifier.

Two controllers are provided:

* ``TubeController`` solves the tightened problem from an internally
  propagated nominal state and wraps the first optimal control with an
  ancillary feedback law, confining the real trajectory to a tube around
  the nominal one.
* ``NrmpcController`` re-solves from the measured (disturbed) state each
  period and applies the first control open loop, with a shrinking funnel
  constraint and a tightened terminal ball keeping the recursion feasible.

``certify_tube`` / ``certify_nrmpc`` evaluate every sufficient condition the
designs rely on and report each check with its numeric left- and right-hand
sides; failed checks are reported, never raised.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .error_frame import affine_input_matrix, affine_input_matrix_inv
from .kinematics import (
    BodyInput,
    Pose,
    RobotParams,
    propagate_head_constant,
)
from .ocp import (
    ConstraintSpec,
    HorizonConfig,
    TerminalBall,
    TerminalDiamond,
    TerminalGains,
    TranscribedProblem,
    Weights,
    gain_interval,
    propagate_interval,
    transcribe,
)
from .reference import ReferenceSpec, build_window
from .solver import OcpSolution, SolverOptions, WarmStart, shift_warm_start, solve

log = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class FeedbackGain:
    """Diagonal ancillary feedback gain; both entries must be negative."""

    k_x: float
    k_y: float

    def __post_init__(self) -> None:
        if not (self.k_x < 0.0 and self.k_y < 0.0):
            raise ValueError(f"feedback gains must be negative, got ({self.k_x}, {self.k_y})")

    def as_matrix(self) -> np.ndarray:
        return np.diag([self.k_x, self.k_y])


@dataclass(frozen=True)
class Check:
    """One sufficient condition with its numeric sides, e.g. lhs < rhs."""

    name: str
    lhs: float
    relation: str
    rhs: float
    passed: bool


@dataclass(frozen=True)
class CertifiedParams:
    """Derived constants plus the pass/fail record of every sufficient condition."""

    lambda_r: float
    lambda_tube: Optional[float]
    diamond_level: Optional[float]
    tube_halfwidth_x: Optional[float]
    tube_halfwidth_y: Optional[float]
    r: Optional[float]
    epsilon: Optional[float]
    k_tilde: float
    checks: tuple[Check, ...]

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]


def _interval_check(name: str, k: float, p: float, q: float) -> Check:
    lo, hi = gain_interval(p, q)
    ok = (not math.isnan(lo)) and lo < k < hi
    return Check(name=name, lhs=k, relation=f"in ({lo:.6g}, {hi:.6g})", rhs=hi, passed=ok)


def _common_checks(w: Weights, gains: TerminalGains) -> list[Check]:
    return [
        Check("weight_product_axis1", w.p1 * w.q1, "<", 0.25, w.p1 * w.q1 < 0.25),
        Check("weight_product_axis2", w.p2 * w.q2, "<", 0.25, w.p2 * w.q2 < 0.25),
        _interval_check("terminal_gain_axis1", gains.k1_t, w.p1, w.q1),
        _interval_check("terminal_gain_axis2", gains.k2_t, w.p2, w.q2),
    ]


def lambda_reference(v_r_max: float, a: float) -> float:
    """Input-set fraction consumed by the reference feedforward: sqrt(2) max|v_r| / a."""
    return SQRT2 * abs(v_r_max) / a


def certify_tube(
    params: RobotParams,
    w: Weights,
    gains: TerminalGains,
    K: FeedbackGain,
    eta: float,
    v_r_max: float,
) -> CertifiedParams:
    """Derive and check every sufficient condition of the tube design."""
    lam_r = lambda_reference(v_r_max, params.a)
    lam_tube = SQRT2 / 2.0 - eta * SQRT2 / params.a
    level = params.a * (lam_tube - lam_r)
    checks = _common_checks(w, gains)
    checks.append(
        Check(
            "reference_speed_margin",
            abs(v_r_max),
            "<",
            params.a * lam_tube / SQRT2,
            abs(v_r_max) < params.a * lam_tube / SQRT2,
        )
    )
    checks.append(Check("tube_scale_above_reference", lam_tube, ">", lam_r, lam_tube > lam_r))
    checks.append(
        Check("disturbance_below_half_speed", eta, "<", params.a / 2.0, eta < params.a / 2.0)
    )
    return CertifiedParams(
        lambda_r=lam_r,
        lambda_tube=lam_tube,
        diamond_level=level,
        tube_halfwidth_x=eta / abs(K.k_x),
        tube_halfwidth_y=eta / abs(K.k_y),
        r=None,
        epsilon=None,
        k_tilde=gains.k_min,
        checks=tuple(checks),
    )


def funnel_radius(params: RobotParams, gains: TerminalGains, v_r_max: float) -> float:
    """Inscribed-ball radius of the full-scale terminal diamond: a(1-lambda_r)/||k||."""
    lam_r = lambda_reference(v_r_max, params.a)
    return params.a * (1.0 - lam_r) / math.hypot(gains.k1_t, gains.k2_t)


def iss_margin_rhs(
    params: RobotParams,
    w: Weights,
    eta: float,
    h: HorizonConfig,
    r: float,
    epsilon: float,
) -> float:
    """Right-hand side of the disturbance-vs-decrease margin inequality.

    Uses q = max(q1, q2) inside the perturbation terms; the left-hand side
    uses min(q1, q2) * epsilon^2.
    """
    a, T, delta = params.a, h.T, h.delta
    q = w.q_max
    e2 = math.exp(2.0 * a * T) - math.exp(2.0 * a * delta)
    term1 = 0.5 * eta * math.exp(a * T) * (r + epsilon)
    term2 = q * q * eta * eta * delta / (2.0 * a) * e2
    term3 = 2.0 * q * q * eta * r / (SQRT2 * a) * math.sqrt(T * T / delta - T) * math.sqrt(e2)
    return term1 + term2 + term3


def certify_nrmpc(
    params: RobotParams,
    w: Weights,
    gains: TerminalGains,
    eta: float,
    v_r_max: float,
    h: HorizonConfig,
    epsilon: float,
) -> CertifiedParams:
    """Derive and check every sufficient condition of the funnel/reset design."""
    lam_r = lambda_reference(v_r_max, params.a)
    r = funnel_radius(params, gains, v_r_max)
    k_tilde = gains.k_min
    checks = _common_checks(w, gains)
    checks.append(
        Check(
            "reference_speed_margin",
            abs(v_r_max),
            "<",
            params.a / SQRT2,
            abs(v_r_max) < params.a / SQRT2,
        )
    )
    checks.append(Check("terminal_ball_inside_funnel", epsilon, "<", r, epsilon < r))
    eta_bound = math.exp(-params.a * h.T) * (r - epsilon) / h.delta
    checks.append(Check("disturbance_feasibility_bound", eta, "<=", eta_bound, eta <= eta_bound))
    contraction = k_tilde * h.delta
    needed = math.log(r / epsilon) if epsilon > 0 else math.inf
    checks.append(
        Check("gain_period_contraction", contraction, ">=", needed, contraction >= needed)
    )
    eps_floor = r * (h.T - h.delta) / h.T
    checks.append(
        Check("funnel_terminal_compatibility", epsilon, ">=", eps_floor, epsilon >= eps_floor)
    )
    lhs = w.q_min * epsilon * epsilon
    rhs = iss_margin_rhs(params, w, eta, h, r, epsilon)
    checks.append(Check("iss_margin", lhs, ">", rhs, lhs > rhs))
    return CertifiedParams(
        lambda_r=lam_r,
        lambda_tube=None,
        diamond_level=None,
        tube_halfwidth_x=None,
        tube_halfwidth_y=None,
        r=r,
        epsilon=epsilon,
        k_tilde=k_tilde,
        checks=tuple(checks),
    )


def tube_constraint_spec(cert: CertifiedParams, gains: TerminalGains) -> ConstraintSpec:
    return ConstraintSpec(
        input_scale=cert.lambda_tube,
        terminal=TerminalDiamond(level=cert.diamond_level, k1=gains.k1_t, k2=gains.k2_t),
        funnel_radius=None,
    )


def nrmpc_constraint_spec(cert: CertifiedParams) -> ConstraintSpec:
    return ConstraintSpec(
        input_scale=1.0,
        terminal=TerminalBall(radius=cert.epsilon),
        funnel_radius=cert.r,
    )


def tube_feedback(
    actual_head: Pose,
    nominal_opt_head: Pose,
    u_star: BodyInput,
    K: FeedbackGain,
    rho: float,
) -> BodyInput:
    """Ancillary law u = M(theta_f)^-1 [ M(theta*) u* + K (p_fh - p*_fh) ]."""
    target = affine_input_matrix(nominal_opt_head.theta, rho) @ u_star.as_array()
    dev = actual_head.position - nominal_opt_head.position
    target = target + K.as_matrix() @ dev
    u = affine_input_matrix_inv(actual_head.theta, rho) @ target
    return BodyInput(float(u[0]), float(u[1]))


@dataclass(frozen=True)
class StepDiagnostics:
    """Per-step record of what the optimizer did and the nominal bookkeeping.

    ``nominal_trail`` holds the substep states (m+1, 3) of the strategy's
    nominal trajectory over the interval: the internally propagated nominal
    under the first optimal control for the tube strategy, the predicted
    trajectory from the measured state for the reset strategy.
    """

    solution: OcpSolution
    fallback: bool
    candidate_violation: float  # NaN when no warm-start candidate existed
    nominal_trail: np.ndarray


class IntervalControlLaw:
    """Control signal over one sampling interval, evaluable at any instant."""

    def __init__(self, fn: Callable[[float, Pose], BodyInput], first: BodyInput):
        self._fn = fn
        self.first_input = first

    def input_at(self, t: float, pose: Pose) -> BodyInput:
        return self._fn(t, pose)


def _choose(
    solution: OcpSolution,
    candidate: Optional[WarmStart],
    problem: TranscribedProblem,
    tol: float,
) -> tuple[OcpSolution, bool]:
    """Prefer feasible outcomes; among feasible ones prefer the cheaper.

    Falling back to the shifted candidate when the solver failed keeps the
    step well-defined: the candidate is the constructive feasibility argument
    made executable.
    """
    if candidate is None:
        return solution, False
    cand_feasible = candidate.violation <= tol
    if solution.feasible and (not cand_feasible or solution.cost <= candidate.cost + 1e-12):
        return solution, False
    if not solution.feasible and not cand_feasible:
        return solution, False
    # materialize the candidate as a solution record
    wheels = candidate.z[: 2 * problem.N].reshape(problem.N, 2)
    nodes = problem.propagate_nodes(wheels)
    u = problem.body_inputs(wheels)
    ev_cost, ev_viol = problem.point_diagnostics(problem.pack(wheels, nodes[1:]))
    cand_solution = OcpSolution(
        wheel_controls=wheels.copy(),
        state_nodes=nodes,
        controls=tuple(BodyInput(float(v), float(w)) for v, w in u),
        predicted_errors=tuple(problem.node_errors(nodes)),
        cost=float(ev_cost),
        kkt_residual=float("nan"),
        constraint_violation=float(ev_viol),
        iterations=0,
        outer_iterations=0,
        feasible=bool(ev_viol <= tol),
        hit_iteration_cap=False,
        solve_time=0.0,
        eq_multipliers=candidate.eq_multipliers,
        ineq_multipliers=candidate.ineq_multipliers,
    )
    fallback = not solution.feasible
    return cand_solution, fallback


@dataclass(frozen=True)
class ControllerConfig:
    """Everything both strategies need to build and solve their problems."""

    params: RobotParams
    weights: Weights
    horizon: HorizonConfig
    gains: TerminalGains
    reference: ReferenceSpec
    solver_options: SolverOptions = SolverOptions()


class TubeController:
    """Tube strategy: nominal-state optimization plus continuous ancillary feedback.

    The nominal head is initialized from the measured state once and then
    advanced internally by the first optimal control of each step; the real
    system only enters through the feedback term.  A single instance is a
    sequential state machine; run independent instances for parallel studies.
    """

    def __init__(
        self,
        cfg: ControllerConfig,
        cert: CertifiedParams,
        K: FeedbackGain,
        initial_head: Pose,
        feedback_mode: str = "continuous",
    ):
        if cert.lambda_tube is None:
            raise ValueError("certificate does not carry tube parameters")
        if feedback_mode not in ("continuous", "zoh"):
            raise ValueError(f"unknown feedback mode {feedback_mode!r}")
        self.cfg = cfg
        self.cert = cert
        self.K = K
        self.feedback_mode = feedback_mode
        self.spec = tube_constraint_spec(cert, cfg.gains)
        self.nominal_head = initial_head.as_array()
        self.last_solution: Optional[OcpSolution] = None

    def step(self, actual_head: Pose, t_k: float) -> tuple[IntervalControlLaw, StepDiagnostics]:
        cfg = self.cfg
        window = build_window(
            cfg.reference, t_k, cfg.horizon.N * cfg.horizon.m + 1, cfg.horizon.h_sub
        )
        problem = transcribe(
            self.nominal_head, window, self.spec, cfg.weights, cfg.horizon, cfg.params
        )
        candidate = None
        if self.last_solution is not None:
            candidate = shift_warm_start(self.last_solution, problem, cfg.gains)
        solution = solve(
            problem,
            warm_start=candidate,
            u_ff=BodyInput(cfg.reference.v_r, cfg.reference.omega_r),
            options=cfg.solver_options,
        )
        solution, fallback = _choose(solution, candidate, problem, cfg.solver_options.tol)
        if fallback:
            log.warning("t=%.2f: infeasible solve, using shifted candidate", t_k)

        u_star = solution.first_input
        nominal_at = self.nominal_head.copy()
        rho = cfg.params.rho
        K = self.K

        if self.feedback_mode == "zoh":
            u_held = tube_feedback(
                actual_head,
                Pose(nominal_at[0], nominal_at[1], nominal_at[2]),
                u_star,
                K,
                rho,
            )
            law = IntervalControlLaw(lambda t, pose: u_held, u_held)
        else:

            def control(t: float, pose: Pose, _t0=t_k) -> BodyInput:
                xi = propagate_head_constant(nominal_at, u_star, rho, t - _t0)
                return tube_feedback(pose, Pose(xi[0], xi[1], xi[2]), u_star, K, rho)

            law = IntervalControlLaw(control, control(t_k, actual_head))

        trail = propagate_interval(
            nominal_at[None, :],
            np.array([[u_star.v, u_star.omega]]),
            cfg.horizon.h_sub,
            cfg.horizon.m,
            rho,
        )[0]
        # advance the internal nominal state with the same integrator the
        # transcription uses, so the next warm start re-propagates exactly
        self.nominal_head = trail[-1].copy()
        self.last_solution = solution
        diag = StepDiagnostics(
            solution=solution,
            fallback=fallback,
            candidate_violation=candidate.violation if candidate is not None else float("nan"),
            nominal_trail=trail,
        )
        return law, diag


class NrmpcController:
    """Reset strategy: solve from the measured state, apply the first control open loop."""

    def __init__(self, cfg: ControllerConfig, cert: CertifiedParams):
        if cert.r is None or cert.epsilon is None:
            raise ValueError("certificate does not carry funnel parameters")
        self.cfg = cfg
        self.cert = cert
        self.spec = nrmpc_constraint_spec(cert)
        self.last_solution: Optional[OcpSolution] = None

    def step(self, actual_head: Pose, t_k: float) -> tuple[IntervalControlLaw, StepDiagnostics]:
        cfg = self.cfg
        window = build_window(
            cfg.reference, t_k, cfg.horizon.N * cfg.horizon.m + 1, cfg.horizon.h_sub
        )
        problem = transcribe(
            actual_head, window, self.spec, cfg.weights, cfg.horizon, cfg.params
        )
        candidate = None
        if self.last_solution is not None:
            candidate = shift_warm_start(self.last_solution, problem, cfg.gains)
        solution = solve(
            problem,
            warm_start=candidate,
            u_ff=BodyInput(cfg.reference.v_r, cfg.reference.omega_r),
            options=cfg.solver_options,
        )
        solution, fallback = _choose(solution, candidate, problem, cfg.solver_options.tol)
        if fallback:
            log.warning("t=%.2f: infeasible solve, using shifted candidate", t_k)

        u0 = solution.first_input
        law = IntervalControlLaw(lambda t, pose: u0, u0)
        trail = propagate_interval(
            actual_head.as_array()[None, :],
            np.array([[u0.v, u0.omega]]),
            cfg.horizon.h_sub,
            cfg.horizon.m,
            cfg.params.rho,
        )[0]
        self.last_solution = solution
        diag = StepDiagnostics(
            solution=solution,
            fallback=fallback,
            candidate_violation=candidate.violation if candidate is not None else float("nan"),
            nominal_trail=trail,
        )
        return law, diag
