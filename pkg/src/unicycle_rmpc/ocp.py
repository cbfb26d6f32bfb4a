"""Finite-horizon tracking problem: cost, terminal machinery, and transcription.

The optimal-control problem is transcribed by direct multiple shooting:

* decision variables are N wheel-speed pairs (the coupled input constraint is
  an axis-aligned box in wheel coordinates, so the inner solver can project
  onto it exactly) plus the shooting poses at nodes 1..N (N-1 interior nodes
  and the terminal node),
* equality constraints are the N RK4 integration defects,
* inequality constraints are the terminal-set membership at node N and,
  when a funnel is configured, the shrinking position bound at nodes 1..N.

The stage cost is integrated with the trapezoid rule on the RK4 substep grid.
Derivatives are hand-coded for this model family (no autodiff).  Because the
head model's velocity depends on the heading only, each RK4 substep reduces
to Simpson's rule in the heading angle (the two middle stages coincide), the
state Jacobian of a substep is the identity plus one heading column, and all
sensitivity recursions collapse to closed-form cumulative sums.

Headings are kept unwrapped inside the transcription so every quantity stays
smooth; wrapping happens only when poses are exported.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .error_frame import InputError, TrackingError
from .kinematics import BodyInput, Pose, RobotParams, wrap_angle
from .reference import ReferenceWindow


@dataclass(frozen=True)
class Weights:
    """Diagonal state weights (q1, q2) and input weights (p1, p2), all positive.

    The terminal machinery additionally needs p_i * q_i < 1/4; that condition
    is reported by the parameter certifier rather than enforced here, so that
    out-of-range configurations can still be constructed and diagnosed.
    """

    q1: float
    q2: float
    p1: float
    p2: float

    def __post_init__(self) -> None:
        for name in ("q1", "q2", "p1", "p2"):
            v = getattr(self, name)
            if not (v > 0.0 and math.isfinite(v)):
                raise ValueError(f"weight {name} must be positive, got {v}")

    @property
    def q_min(self) -> float:
        return min(self.q1, self.q2)

    @property
    def q_max(self) -> float:
        return max(self.q1, self.q2)


@dataclass(frozen=True)
class HorizonConfig:
    """Prediction horizon T split into N sampling intervals of length delta,
    each integrated with m RK4 substeps."""

    T: float
    delta: float
    m: int = 5
    N: int = field(init=False)

    def __post_init__(self) -> None:
        if self.delta <= 0.0 or self.T <= 0.0:
            raise ValueError("horizon T and sampling period delta must be positive")
        n = round(self.T / self.delta)
        if n < 1 or abs(n * self.delta - self.T) > 1e-9 * max(1.0, abs(self.T)):
            raise ValueError("T must equal N*delta for integer N")
        if self.m < 1:
            raise ValueError("substep count m must be >= 1")
        object.__setattr__(self, "N", n)

    @property
    def h_sub(self) -> float:
        return self.delta / self.m


@dataclass(frozen=True)
class TerminalGains:
    """Feedback gains (1/s) of the local terminal controller.

    The admissible interval ((1-sqrt(1-4 p q))/(2p), (1+sqrt(1-4 p q))/(2p))
    couples the gains to the cost weights; the certifier reports membership.
    """

    k1_t: float
    k2_t: float

    def __post_init__(self) -> None:
        if not (self.k1_t > 0.0 and self.k2_t > 0.0):
            raise ValueError("terminal gains must be positive")

    @property
    def k_min(self) -> float:
        return min(self.k1_t, self.k2_t)


def gain_interval(p: float, q: float) -> tuple[float, float]:
    """Admissible terminal-gain interval for one axis; requires p*q < 1/4."""
    disc = 1.0 - 4.0 * p * q
    if disc <= 0.0:
        return (math.nan, math.nan)
    root = math.sqrt(disc)
    return ((1.0 - root) / (2.0 * p), (1.0 + root) / (2.0 * p))


@dataclass(frozen=True)
class TerminalDiamond:
    """Terminal set {k1|x_rf| + k2|y_rf| <= level} in the error frame."""

    level: float
    k1: float
    k2: float


@dataclass(frozen=True)
class TerminalBall:
    """Terminal set {||p_rf|| <= radius}."""

    radius: float


@dataclass(frozen=True)
class ConstraintSpec:
    """Input-scale, terminal set, and optional funnel of one problem instance."""

    input_scale: float
    terminal: Union[TerminalDiamond, TerminalBall]
    funnel_radius: Optional[float] = None

    def __post_init__(self) -> None:
        if not (0.0 < self.input_scale <= 1.0):
            raise ValueError(f"input scale must lie in (0, 1], got {self.input_scale}")
        if isinstance(self.terminal, TerminalDiamond) and self.terminal.level <= 0.0:
            raise ValueError("terminal diamond level must be positive")
        if self.funnel_radius is not None:
            if self.funnel_radius <= 0.0:
                raise ValueError("funnel radius must be positive")
            if (
                isinstance(self.terminal, TerminalBall)
                and self.terminal.radius >= self.funnel_radius
            ):
                raise ValueError("terminal ball radius must be smaller than the funnel radius")


# ---------------------------------------------------------------------------
# Scalar cost / terminal operations
# ---------------------------------------------------------------------------


def stage_cost(e: TrackingError, ue: InputError, w: Weights) -> float:
    """q1 x_rf^2 + q2 y_rf^2 + p1 e_v^2 + p2 e_w^2 (heading is unpenalized)."""
    return w.q1 * e.x_rf**2 + w.q2 * e.y_rf**2 + w.p1 * ue.e_v**2 + w.p2 * ue.e_w**2


def terminal_penalty(e: TrackingError) -> float:
    """Half squared norm of the terminal position error."""
    return 0.5 * (e.x_rf**2 + e.y_rf**2)


def terminal_controller(e: TrackingError, v_r: float, gains: TerminalGains, rho: float) -> BodyInput:
    """Local feedback law: v = k1 x_rf + v_r cos(theta_rf), omega = (k2 y_rf + v_r sin(theta_rf))/rho."""
    return BodyInput(
        gains.k1_t * e.x_rf + v_r * math.cos(e.theta_rf),
        (gains.k2_t * e.y_rf + v_r * math.sin(e.theta_rf)) / rho,
    )


def in_terminal_diamond(e: TrackingError, gains: TerminalGains, level: float) -> bool:
    """Membership in {k1|x_rf| + k2|y_rf| <= level} with boundary slack."""
    if level <= 0.0:
        raise ValueError(f"diamond level must be positive, got {level}")
    return gains.k1_t * abs(e.x_rf) + gains.k2_t * abs(e.y_rf) <= level + 1e-12


# ---------------------------------------------------------------------------
# Batched propagation with closed-form sensitivities
# ---------------------------------------------------------------------------


def _propagate(
    starts: np.ndarray,
    u: np.ndarray,
    h: float,
    m: int,
    rho: float,
    need_sens: bool,
):
    """Propagate each row of ``starts`` under its constant body input for m
    RK4 substeps of size h.

    Returns (X, trig, C, GU):
      X    (B, m+1, 3)  substep states (exact heading at every node),
      trig (B, m+1, 2)  cos/sin of the heading at the substep nodes,
      C    (B, m+1, 2)  d position / d start-heading (the only nontrivial
                        entries of the state sensitivity, which is I plus
                        this heading column),
      GU   (B, m+1, 2, 2) d position / d (v, omega); the heading rows are
                        analytically [0, i*h].
    C and GU are None when ``need_sens`` is false.
    """
    starts = np.atleast_2d(starts)
    u = np.atleast_2d(u)
    B = starts.shape[0]
    v = u[:, 0]
    om = u[:, 1]
    ro = rho * om

    # stage angles on the half-substep grid; the two middle RK4 stages share
    # the same angle, so one substep is Simpson's rule over [theta, theta+h*om]
    jj = 0.5 * h * np.arange(2 * m + 1)
    ang = starts[:, 2:3] + om[:, None] * jj[None, :]
    ca = np.cos(ang)
    sa = np.sin(ang)
    kx = v[:, None] * ca - ro[:, None] * sa
    ky = v[:, None] * sa + ro[:, None] * ca

    ie = 2 * np.arange(m)
    dpx = (h / 6.0) * (kx[:, ie] + 4.0 * kx[:, ie + 1] + kx[:, ie + 2])
    dpy = (h / 6.0) * (ky[:, ie] + 4.0 * ky[:, ie + 1] + ky[:, ie + 2])

    X = np.empty((B, m + 1, 3))
    X[:, 0] = starts
    X[:, 1:, 0] = starts[:, 0:1] + np.cumsum(dpx, axis=1)
    X[:, 1:, 1] = starts[:, 1:2] + np.cumsum(dpy, axis=1)
    X[:, :, 2] = ang[:, ::2]
    trig = np.stack([ca[:, ::2], sa[:, ::2]], axis=-1)

    if not need_sens:
        return X, trig, None, None

    C = np.zeros((B, m + 1, 2))
    C[:, 1:, 0] = np.cumsum(-dpy, axis=1)
    C[:, 1:, 1] = np.cumsum(dpx, axis=1)

    sc = ca[:, ie] + 4.0 * ca[:, ie + 1] + ca[:, ie + 2]
    ss = sa[:, ie] + 4.0 * sa[:, ie + 1] + sa[:, ie + 2]
    # heading-coupling of the omega column: the middle stage enters twice
    a2x = -(2.0 * ky[:, ie + 1] + ky[:, ie + 2])
    a2y = 2.0 * kx[:, ie + 1] + kx[:, ie + 2]
    step_u = np.empty((B, m, 2, 2))
    step_u[:, :, 0, 0] = (h / 6.0) * sc
    step_u[:, :, 1, 0] = (h / 6.0) * ss
    step_u[:, :, 0, 1] = -(rho * h / 6.0) * ss + (h * h / 6.0) * a2x
    step_u[:, :, 1, 1] = (rho * h / 6.0) * sc + (h * h / 6.0) * a2y
    # chaining through the heading rows [0, i*h] of the running sensitivity
    ih = h * np.arange(m)
    step_u[:, :, 0, 1] += -dpy * ih[None, :]
    step_u[:, :, 1, 1] += dpx * ih[None, :]
    GU = np.zeros((B, m + 1, 2, 2))
    GU[:, 1:] = np.cumsum(step_u, axis=1)
    return X, trig, C, GU


def propagate_interval(x0: np.ndarray, u_body: np.ndarray, h: float, m: int, rho: float) -> np.ndarray:
    """Substep states of each interval: returns (batch, m+1, 3)."""
    X, _, _, _ = _propagate(np.asarray(x0, float), np.asarray(u_body, float), h, m, rho, False)
    return X


# ---------------------------------------------------------------------------
# Transcription
# ---------------------------------------------------------------------------


@dataclass
class EvalResult:
    cost: float
    grad: Optional[np.ndarray]
    c_eq: np.ndarray  # (N, 3) integration defects
    g_ineq: np.ndarray  # (n_ineq,)
    ineq_grads: Optional[np.ndarray]  # terminal rows w.r.t. node N, (rows, 3)
    eq_contrib: Optional[tuple]  # (C_end (N,2), GU_end (N,2,2)) defect sensitivities

    @property
    def violation(self) -> float:
        v_eq = float(np.max(np.abs(self.c_eq))) if self.c_eq.size else 0.0
        v_in = float(np.max(self.g_ineq)) if self.g_ineq.size else 0.0
        return max(v_eq, max(0.0, v_in))


class TranscribedProblem:
    """One multiple-shooting instance of the tracking problem.

    Decision vector layout: ``[wheels (N,2) row-major | poses at nodes 1..N
    (N,3) row-major]``.  Node 0 is the fixed initial head pose.
    """

    def __init__(
        self,
        x0: np.ndarray,
        window: ReferenceWindow,
        spec: ConstraintSpec,
        weights: Weights,
        horizon: HorizonConfig,
        params: RobotParams,
    ):
        n_expected = horizon.N * horizon.m + 1
        if window.times.shape[0] != n_expected:
            raise ValueError(
                f"reference window has {window.times.shape[0]} nodes, expected {n_expected}"
            )
        self.x0 = np.asarray(x0, dtype=float).copy()
        self.window = window
        self.spec = spec
        self.weights = weights
        self.horizon = horizon
        self.params = params

        N, m = horizon.N, horizon.m
        self.N = N
        self.m = m
        self.h = horizon.h_sub
        self.dim = 5 * N
        self.n_control_pairs = N
        self.n_interior_poses = N - 1
        self.n_defect_constraints = N
        self.n_terminal_constraints = 1

        self.wheel_bound = spec.input_scale * params.a
        lo = np.full(self.dim, -np.inf)
        hi = np.full(self.dim, np.inf)
        lo[: 2 * N] = -self.wheel_bound
        hi[: 2 * N] = self.wheel_bound
        self.bounds_lo = lo
        self.bounds_hi = hi

        # wheel -> body map [[1/2, 1/2], [-1/(2 rho), 1/(2 rho)]]
        r2 = 1.0 / (2.0 * params.rho)
        self._t_wb = np.array([[0.5, 0.5], [-r2, r2]])

        if spec.funnel_radius is not None:
            j = np.arange(1, N + 1, dtype=float)
            self.funnel_bounds = spec.funnel_radius * N / j
            self.n_funnel_constraints = N
        else:
            self.funnel_bounds = np.zeros(0)
            self.n_funnel_constraints = 0

        self._n_terminal_rows = 4 if isinstance(spec.terminal, TerminalDiamond) else 1
        self.n_ineq = self._n_terminal_rows + self.n_funnel_constraints

        # reference samples rearranged on the (interval, substep) grid
        base = (np.arange(N) * m)[:, None] + np.arange(m + 1)[None, :]
        self._ref_p = window.positions[base]  # (N, m+1, 2)
        self._ref_th = window.headings[base]  # (N, m+1)
        node_idx = np.arange(1, N + 1) * m
        self._node_ref_p = window.positions[node_idx]
        self._quad_w = np.full(m + 1, self.h)
        self._quad_w[0] = 0.5 * self.h
        self._quad_w[-1] = 0.5 * self.h

    # -- decision-vector packing ------------------------------------------

    def split(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        N = self.N
        return z[: 2 * N].reshape(N, 2), z[2 * N :].reshape(N, 3)

    def pack(self, wheels: np.ndarray, nodes: np.ndarray) -> np.ndarray:
        return np.concatenate([wheels.reshape(-1), nodes.reshape(-1)])

    def clip_to_bounds(self, z: np.ndarray) -> np.ndarray:
        return np.clip(z, self.bounds_lo, self.bounds_hi)

    def body_inputs(self, wheels: np.ndarray) -> np.ndarray:
        return wheels @ self._t_wb.T

    def propagate_nodes(self, wheels: np.ndarray) -> np.ndarray:
        """Exactly propagated node states (N+1, 3) under the given wheel controls."""
        u = self.body_inputs(wheels)
        nodes = np.empty((self.N + 1, 3))
        nodes[0] = self.x0
        x = self.x0[None, :]
        for j in range(self.N):
            x = propagate_interval(x, u[j : j + 1], self.h, self.m, self.params.rho)[:, -1]
            nodes[j + 1] = x[0]
        return nodes

    def initial_guess(self, u_ff: BodyInput) -> np.ndarray:
        """Cold start: constant feedforward wheels, nodes by forward propagation."""
        wl = u_ff.v - self.params.rho * u_ff.omega
        wr = u_ff.v + self.params.rho * u_ff.omega
        wheels = np.tile(np.clip([wl, wr], -self.wheel_bound, self.wheel_bound), (self.N, 1))
        nodes = self.propagate_nodes(wheels)
        return self.pack(wheels, nodes[1:])

    # -- evaluation ---------------------------------------------------------

    def evaluate(self, z: np.ndarray, need_grad: bool = True) -> EvalResult:
        N, m = self.N, self.m
        w = self.weights
        rho = self.params.rho
        v_r = self.window.v_r
        wheels, nodes = self.split(z)
        u = self.body_inputs(wheels)
        starts = np.vstack([self.x0[None, :], nodes[:-1]])

        X, trig, C, GU = _propagate(starts, u, self.h, m, rho, need_grad)
        c = trig[:, :, 0]
        s = trig[:, :, 1]

        # tracking error and input error on the full substep grid, batched
        dx = self._ref_p[:, :, 0] - X[:, :, 0]
        dy = self._ref_p[:, :, 1] - X[:, :, 1]
        x_rf = c * dx + s * dy
        y_rf = -s * dx + c * dy
        th_rf = self._ref_th - X[:, :, 2]
        cth = np.cos(th_rf)
        sth = np.sin(th_rf)
        ev = -u[:, 0:1] + v_r * cth
        ew = -rho * u[:, 1:2] + v_r * sth
        L = w.q1 * x_rf**2 + w.q2 * y_rf**2 + w.p1 * ev**2 + w.p2 * ew**2
        cost = float(np.sum(L * self._quad_w[None, :]))

        # terminal penalty at node N (a decision variable)
        node_n = nodes[-1]
        rp_T = self.window.positions[-1]
        dpx = node_n[0] - rp_T[0]
        dpy = node_n[1] - rp_T[1]
        cost += 0.5 * (dpx * dpx + dpy * dpy)

        c_eq = X[:, m, :] - nodes

        g_ineq = np.empty(self.n_ineq)
        ineq_grads = np.zeros((self._n_terminal_rows, 3)) if need_grad else None
        if isinstance(self.spec.terminal, TerminalDiamond):
            td = self.spec.terminal
            cN = math.cos(node_n[2])
            sN = math.sin(node_n[2])
            ex = cN * (-dpx) + sN * (-dpy)
            ey = -sN * (-dpx) + cN * (-dpy)
            gx = np.array([-cN, -sN, ey])
            gy = np.array([sN, -cN, -ex])
            row = 0
            for s1 in (1.0, -1.0):
                for s2 in (1.0, -1.0):
                    g_ineq[row] = s1 * td.k1 * ex + s2 * td.k2 * ey - td.level
                    if need_grad:
                        ineq_grads[row] = s1 * td.k1 * gx + s2 * td.k2 * gy
                    row += 1
        else:
            eps = self.spec.terminal.radius
            sq = dpx * dpx + dpy * dpy
            g_ineq[0] = (sq - eps * eps) / (2.0 * eps)
            if need_grad:
                ineq_grads[0] = np.array([dpx / eps, dpy / eps, 0.0])

        if self.n_funnel_constraints:
            dpn = nodes[:, :2] - self._node_ref_p
            sqn = np.sum(dpn * dpn, axis=1)
            bnd = self.funnel_bounds
            g_ineq[self._n_terminal_rows :] = (sqn - bnd * bnd) / (2.0 * bnd)

        grad = None
        eq_contrib = None
        if need_grad:
            dr1 = 2.0 * w.q1 * x_rf
            dr2 = 2.0 * w.q2 * y_rf
            dp1 = 2.0 * w.p1 * ev
            dp2 = 2.0 * w.p2 * ew
            dLdx0 = -dr1 * c + dr2 * s
            dLdx1 = -dr1 * s - dr2 * c
            dLdth = dr1 * y_rf - dr2 * x_rf + v_r * (dp1 * sth - dp2 * cth)

            wq = self._quad_w[None, :]
            # gradient w.r.t. each interval's start state through the chain
            gS = np.empty((N, 3))
            gS[:, 0] = np.sum(wq * dLdx0, axis=1)
            gS[:, 1] = np.sum(wq * dLdx1, axis=1)
            gS[:, 2] = np.sum(wq * (dLdx0 * C[:, :, 0] + dLdx1 * C[:, :, 1] + dLdth), axis=1)
            # gradient w.r.t. the interval's body input
            ihh = self.h * np.arange(m + 1)[None, :]
            gU = np.empty((N, 2))
            gU[:, 0] = np.sum(
                wq * (dLdx0 * GU[:, :, 0, 0] + dLdx1 * GU[:, :, 1, 0] - dp1), axis=1
            )
            gU[:, 1] = np.sum(
                wq
                * (
                    dLdx0 * GU[:, :, 0, 1]
                    + dLdx1 * GU[:, :, 1, 1]
                    + dLdth * ihh
                    - rho * dp2
                ),
                axis=1,
            )

            grad = np.zeros(self.dim)
            grad[: 2 * N] = (gU @ self._t_wb).reshape(-1)
            gnode = np.zeros((N, 3))
            gnode[: N - 1] = gS[1:]
            gnode[N - 1, 0] += dpx
            gnode[N - 1, 1] += dpy
            grad[2 * N :] += gnode.reshape(-1)
            eq_contrib = (C[:, m, :], GU[:, m, :, :])

        return EvalResult(
            cost=cost,
            grad=grad,
            c_eq=c_eq,
            g_ineq=g_ineq,
            ineq_grads=ineq_grads,
            eq_contrib=eq_contrib,
        )

    def al_value_and_grad(
        self,
        z: np.ndarray,
        lam: np.ndarray,
        mu: np.ndarray,
        rho_pen: float,
        ev: Optional[EvalResult] = None,
    ) -> tuple[float, np.ndarray, EvalResult]:
        """Augmented-Lagrangian value and gradient (rho_pen = 0 gives the
        plain Lagrangian, used for the KKT residual)."""
        if ev is None:
            ev = self.evaluate(z, need_grad=True)
        N = self.N
        cdef = ev.c_eq
        y = lam + rho_pen * cdef
        val = ev.cost + float(np.sum(lam * cdef)) + 0.5 * rho_pen * float(np.sum(cdef * cdef))

        if rho_pen > 0.0:
            mu_hat = np.maximum(0.0, mu + rho_pen * ev.g_ineq)
            val += float(np.sum(mu_hat**2 - mu**2)) / (2.0 * rho_pen)
        else:
            mu_hat = mu
            val += float(np.sum(mu * ev.g_ineq))

        grad = ev.grad.copy()
        C_end, GU_end = ev.eq_contrib
        # defect rows: d c_b / d start_b = I plus heading column C_end,
        # d c_b / d u_b = GU_end with heading row [0, delta],
        # d c_b / d node_{b+1} = -I
        gu = np.empty((N, 2))
        gu[:, 0] = GU_end[:, 0, 0] * y[:, 0] + GU_end[:, 1, 0] * y[:, 1]
        gu[:, 1] = (
            GU_end[:, 0, 1] * y[:, 0]
            + GU_end[:, 1, 1] * y[:, 1]
            + self.horizon.delta * y[:, 2]
        )
        grad[: 2 * N] += (gu @ self._t_wb).reshape(-1)
        gnode = np.zeros((N, 3))
        gnode[: N - 1, 0] = y[1:, 0]
        gnode[: N - 1, 1] = y[1:, 1]
        gnode[: N - 1, 2] = C_end[1:, 0] * y[1:, 0] + C_end[1:, 1] * y[1:, 1] + y[1:, 2]
        gnode -= y
        t_rows = self._n_terminal_rows
        if np.any(mu_hat[:t_rows]):
            gnode[N - 1] += mu_hat[:t_rows] @ ev.ineq_grads
        if self.n_funnel_constraints:
            mf = mu_hat[t_rows:]
            if np.any(mf):
                dpn = self.split(z)[1][:, :2] - self._node_ref_p
                gnode[:, :2] += (mf / self.funnel_bounds)[:, None] * dpn
        grad[2 * N :] += gnode.reshape(-1)
        return val, grad, ev

    def point_diagnostics(self, z: np.ndarray) -> tuple[float, float]:
        """(cost, constraint violation) at a point, without gradients."""
        ev = self.evaluate(z, need_grad=False)
        return ev.cost, ev.violation

    # -- reporting ----------------------------------------------------------

    def node_errors(self, nodes_full: np.ndarray) -> list[TrackingError]:
        """Tracking errors at the N+1 shooting nodes of a node trajectory."""
        out = []
        for j in range(self.N + 1):
            idx = j * self.m
            x = nodes_full[j]
            cj, sj = math.cos(x[2]), math.sin(x[2])
            ddx = self.window.positions[idx, 0] - x[0]
            ddy = self.window.positions[idx, 1] - x[1]
            out.append(
                TrackingError(
                    cj * ddx + sj * ddy,
                    -sj * ddx + cj * ddy,
                    wrap_angle(self.window.headings[idx] - x[2]),
                )
            )
        return out

    def describe(self) -> str:
        """Human-readable diagnostic dump of the instance (format unversioned)."""
        buf = io.StringIO()
        print("multiple-shooting tracking problem", file=buf)
        print(f"  intervals N={self.N}, substeps m={self.m}, h={self.h:.6g} s", file=buf)
        print(
            f"  decision dim {self.dim}: {self.n_control_pairs} wheel pairs, "
            f"{self.n_interior_poses} interior poses + terminal pose",
            file=buf,
        )
        print(
            f"  constraints: {self.n_defect_constraints} defects (3 rows each), "
            f"{self.n_terminal_constraints} terminal set ({self._n_terminal_rows} rows), "
            f"{self.n_funnel_constraints} funnel rows",
            file=buf,
        )
        print(f"  wheel box: |w| <= {self.wheel_bound:.6g} m/s", file=buf)
        print(f"  terminal: {self.spec.terminal}", file=buf)
        if self.n_funnel_constraints:
            print(f"  funnel bounds: {np.array2string(self.funnel_bounds, precision=6)}", file=buf)
        print(f"  initial head: {np.array2string(self.x0, precision=6)}", file=buf)
        print(
            f"  window: t in [{self.window.times[0]:.6g}, {self.window.times[-1]:.6g}], "
            f"v_r={self.window.v_r:.6g}, omega_r={self.window.omega_r:.6g}",
            file=buf,
        )
        return buf.getvalue()


def transcribe(
    initial_head: Pose,
    window: ReferenceWindow,
    spec: ConstraintSpec,
    weights: Weights,
    horizon: HorizonConfig,
    params: RobotParams,
) -> TranscribedProblem:
    """Build the multiple-shooting NLP for one sampling instant."""
    x0 = initial_head.as_array() if isinstance(initial_head, Pose) else np.asarray(initial_head)
    return TranscribedProblem(x0, window, spec, weights, horizon, params)


def total_cost(
    initial_head: Pose,
    controls: Sequence[BodyInput],
    window: ReferenceWindow,
    weights: Weights,
    horizon: HorizonConfig,
    params: RobotParams,
) -> float:
    """Cost of applying a piecewise-constant control sequence from an initial head pose.

    Trapezoidal quadrature of the stage cost on the RK4 substep grid plus the
    terminal penalty; exact for constant integrands.
    """
    N, m, h = horizon.N, horizon.m, horizon.h_sub
    if len(controls) != N:
        raise ValueError(f"expected {N} controls, got {len(controls)}")
    rho = params.rho
    w = weights
    x = initial_head.as_array() if isinstance(initial_head, Pose) else np.asarray(initial_head)
    quad = np.full(m + 1, h)
    quad[0] = quad[-1] = 0.5 * h
    cost = 0.0
    for j in range(N):
        u = np.array([[controls[j].v, controls[j].omega]])
        X, trig, _, _ = _propagate(x[None, :], u, h, m, rho, False)
        idx = slice(j * m, j * m + m + 1)
        rp = window.positions[idx]
        rth = window.headings[idx]
        c = trig[0, :, 0]
        s = trig[0, :, 1]
        dx = rp[:, 0] - X[0, :, 0]
        dy = rp[:, 1] - X[0, :, 1]
        x_rf = c * dx + s * dy
        y_rf = -s * dx + c * dy
        th_rf = rth - X[0, :, 2]
        ev = -u[0, 0] + window.v_r * np.cos(th_rf)
        ew = -rho * u[0, 1] + window.v_r * np.sin(th_rf)
        L = w.q1 * x_rf**2 + w.q2 * y_rf**2 + w.p1 * ev**2 + w.p2 * ew**2
        cost += float(np.sum(L * quad))
        x = X[0, -1]
    dp = x[:2] - window.positions[-1]
    return cost + 0.5 * float(dp @ dp)
