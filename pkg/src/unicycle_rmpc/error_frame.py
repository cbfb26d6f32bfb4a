"""Frenet-frame tracking-error coordinates and their dynamics.

The tracking error expresses the reference position relative to the follower
head in the follower's moving frame:

    p_rf = R(theta_f)^T (p_r - p_fh),      theta_rf = theta_r - theta_f.

The transpose (world-to-body) sense is the one consistent with the error
dynamics implemented in :func:`error_dynamics`; differentiating the error
with the plain rotation instead flips the sign of the skew term.  The
finite-difference consistency test in the suite pins this down, including
the disturbance term, which enters as ``-R(theta_f)^T d_p``.

Pure functions on immutable values; unrestricted concurrent use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kinematics import BodyInput, Pose, wrap_angle


@dataclass(frozen=True)
class TrackingError:
    """Position error (x_rf, y_rf) in the follower frame plus heading error."""

    x_rf: float
    y_rf: float
    theta_rf: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x_rf, self.y_rf, self.theta_rf], dtype=float)

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x_rf, self.y_rf], dtype=float)

    @property
    def norm(self) -> float:
        return math.hypot(self.x_rf, self.y_rf)


@dataclass(frozen=True)
class InputError:
    """Velocity-space mismatch between follower input and reference motion.

    The second component carries the rho*omega scaling, hence both components
    are in m/s.
    """

    e_v: float
    e_w: float

    def as_array(self) -> np.ndarray:
        return np.array([self.e_v, self.e_w], dtype=float)


@dataclass(frozen=True)
class Disturbance:
    """Additive velocity disturbance on the position channels (heading is clean)."""

    d_x: float
    d_y: float

    def as_array(self) -> np.ndarray:
        return np.array([self.d_x, self.d_y], dtype=float)

    @property
    def norm(self) -> float:
        return math.hypot(self.d_x, self.d_y)


def rotation(theta: float) -> np.ndarray:
    """Counter-clockwise rotation matrix [[c, -s], [s, c]]."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]], dtype=float)


def tracking_error(ref: Pose, follower_head: Pose) -> TrackingError:
    """Reference pose expressed in the follower head's frame."""
    c, s = math.cos(follower_head.theta), math.sin(follower_head.theta)
    dx = ref.x - follower_head.x
    dy = ref.y - follower_head.y
    return TrackingError(
        c * dx + s * dy,
        -s * dx + c * dy,
        wrap_angle(ref.theta - follower_head.theta),
    )


def input_error(u_f: BodyInput, v_r: float, theta_rf: float, rho: float) -> InputError:
    """(-v_f + v_r cos(theta_rf), -rho*omega_f + v_r sin(theta_rf))."""
    return InputError(
        -u_f.v + v_r * math.cos(theta_rf),
        -rho * u_f.omega + v_r * math.sin(theta_rf),
    )


def error_dynamics(
    e: TrackingError,
    u_f: BodyInput,
    v_r: float,
    d: Disturbance,
    theta_f: float,
    rho: float,
    omega_r: float = 0.0,
) -> np.ndarray:
    """Time derivative (x_rf', y_rf', theta_rf') of the tracking error.

    Position rows: skew(omega_f) * p_rf + input error - R(theta_f)^T d_p.
    Heading row: omega_r - omega_f.
    """
    ue = input_error(u_f, v_r, e.theta_rf, rho)
    c, s = math.cos(theta_f), math.sin(theta_f)
    dbx = c * d.d_x + s * d.d_y
    dby = -s * d.d_x + c * d.d_y
    return np.array(
        [
            u_f.omega * e.y_rf + ue.e_v - dbx,
            -u_f.omega * e.x_rf + ue.e_w - dby,
            omega_r - u_f.omega,
        ],
        dtype=float,
    )


def affine_input_matrix(theta: float, rho: float) -> np.ndarray:
    """M(theta) = [[cos, -rho sin], [sin, rho cos]]; maps body input to head velocity."""
    if rho <= 0.0:
        raise ValueError(f"rho must be positive, got {rho}")
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -rho * s], [s, rho * c]], dtype=float)


def affine_input_matrix_inv(theta: float, rho: float) -> np.ndarray:
    """Closed-form inverse of :func:`affine_input_matrix`."""
    if rho <= 0.0:
        raise ValueError(f"rho must be positive, got {rho}")
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, s], [-s / rho, c / rho]], dtype=float)
