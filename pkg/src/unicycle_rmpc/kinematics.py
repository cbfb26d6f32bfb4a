"""Unicycle and head-point kinematics, wheel-speed algebra, and the coupled input set.

The robot is a differential-drive unicycle.  Wheel speeds are bounded by the
same constant ``a`` on both sides, which induces the coupled ("diamond")
constraint ``|v|/a + |omega|/b <= 1`` on the body input, with ``b = a/rho``.
In wheel coordinates the same set is the axis-aligned box
``max(|v_left|, |v_right|) <= a``; the solver exploits that equivalence.

All types are immutable values and all operations are pure functions, so
everything here is safe to use from any number of threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi

# Absolute slack used for diamond/box boundary membership so that inputs
# produced by the optimizer at active constraints still test as members.
BOUNDARY_TOL = 1e-12


def wrap_angle(theta: float) -> float:
    """Reduce an angle modulo 2*pi into (-pi, pi] (the +pi boundary is kept)."""
    w = theta % TWO_PI
    if w > math.pi:
        w -= TWO_PI
    return w


def wrap_angle_array(theta: np.ndarray) -> np.ndarray:
    """Vectorized :func:`wrap_angle`."""
    w = np.mod(theta, TWO_PI)
    return np.where(w > math.pi, w - TWO_PI, w)


@dataclass(frozen=True)
class Pose:
    """Planar pose: position in meters, heading in radians in (-pi, pi]."""

    x: float
    y: float
    theta: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta], dtype=float)

    @staticmethod
    def from_array(xi: np.ndarray) -> "Pose":
        return Pose(float(xi[0]), float(xi[1]), wrap_angle(float(xi[2])))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


@dataclass(frozen=True)
class BodyInput:
    """Body-frame control: linear velocity v (m/s) and angular velocity omega (rad/s)."""

    v: float
    omega: float

    def as_array(self) -> np.ndarray:
        return np.array([self.v, self.omega], dtype=float)


@dataclass(frozen=True)
class WheelSpeeds:
    """Left/right driving-wheel rim speeds in m/s."""

    v_left: float
    v_right: float


@dataclass(frozen=True)
class RobotParams:
    """Mechanical parameters: max wheel speed a, half wheelbase rho, derived b = a/rho.

    ``b`` is computed once at construction so there is a single canonical
    rounding of a/rho used everywhere.
    """

    a: float
    rho: float
    b: float = field(init=False)

    def __post_init__(self) -> None:
        if not (self.a > 0.0 and math.isfinite(self.a)):
            raise ValueError(f"max wheel speed a must be positive, got {self.a}")
        if not (self.rho > 0.0 and math.isfinite(self.rho)):
            raise ValueError(f"half wheelbase rho must be positive, got {self.rho}")
        object.__setattr__(self, "b", self.a / self.rho)


def wheels_to_body(w: WheelSpeeds, params: RobotParams) -> BodyInput:
    """Body input from wheel speeds: v = (vL + vR)/2, omega = (vR - vL)/(2 rho)."""
    v = 0.5 * (w.v_left + w.v_right)
    omega = (w.v_right - w.v_left) / (2.0 * params.rho)
    return BodyInput(v, omega)


def body_to_wheels(u: BodyInput, params: RobotParams) -> WheelSpeeds:
    """Inverse of :func:`wheels_to_body`: vL = v - rho*omega, vR = v + rho*omega."""
    return WheelSpeeds(u.v - params.rho * u.omega, u.v + params.rho * u.omega)


def input_index(u: BodyInput, params: RobotParams) -> float:
    """The coupled-constraint index |v|/a + |omega|/b; admissible inputs have index <= 1."""
    return abs(u.v) / params.a + abs(u.omega) / params.b


def input_in_set(u: BodyInput, lam: float, params: RobotParams) -> bool:
    """Membership of u in the scaled input set {|v|/a + |omega|/b <= lam}.

    ``lam`` must lie in (0, 1].  Boundary membership is accepted with a small
    absolute slack on the index.
    """
    if not (0.0 < lam <= 1.0):
        raise ValueError(f"input-set scale must lie in (0, 1], got {lam}")
    return input_index(u, params) <= lam + BOUNDARY_TOL


def head_pose(xi: Pose, rho: float) -> Pose:
    """Pose of the head point a distance rho ahead of the wheel-axis midpoint."""
    return Pose(xi.x + rho * math.cos(xi.theta), xi.y + rho * math.sin(xi.theta), xi.theta)


def f_unicycle(xi: Pose, u: BodyInput) -> np.ndarray:
    """Axle-point kinematics: (v cos(theta), v sin(theta), omega)."""
    c, s = math.cos(xi.theta), math.sin(xi.theta)
    return np.array([u.v * c, u.v * s, u.omega], dtype=float)


def f_head(xi_h: Pose, u: BodyInput, rho: float) -> np.ndarray:
    """Head-point kinematics: fully actuated in position through the heading.

    (v cos(theta) - rho omega sin(theta), v sin(theta) + rho omega cos(theta), omega)
    """
    c, s = math.cos(xi_h.theta), math.sin(xi_h.theta)
    return np.array(
        [u.v * c - rho * u.omega * s, u.v * s + rho * u.omega * c, u.omega], dtype=float
    )


def f_head_array(xi: np.ndarray, u: np.ndarray, rho: float) -> np.ndarray:
    """Batched head kinematics. ``xi`` is (..., 3), ``u`` is (..., 2)."""
    c = np.cos(xi[..., 2])
    s = np.sin(xi[..., 2])
    v = u[..., 0]
    ro = rho * u[..., 1]
    return np.stack([v * c - ro * s, v * s + ro * c, u[..., 1]], axis=-1)


def propagate_head_constant(xi: np.ndarray, u: BodyInput, rho: float, t: float) -> np.ndarray:
    """Exact flow of the head model under a constant body input for time t.

    Closed form: the heading advances linearly and the position follows a
    circular arc (straight line when omega == 0).  Heading is left unwrapped.
    """
    x0, y0, th0 = float(xi[0]), float(xi[1]), float(xi[2])
    v, om = u.v, u.omega
    th = th0 + om * t
    if abs(om) < 1e-12:
        c0, s0 = math.cos(th0), math.sin(th0)
        return np.array([x0 + v * t * c0, y0 + v * t * s0, th], dtype=float)
    x = x0 + (v / om) * (math.sin(th) - math.sin(th0)) + rho * (math.cos(th) - math.cos(th0))
    y = y0 - (v / om) * (math.cos(th) - math.cos(th0)) + rho * (math.sin(th) - math.sin(th0))
    return np.array([x, y, th], dtype=float)
