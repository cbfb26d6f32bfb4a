"""Closed-form reference trajectories for the virtual leader.

The reference is a unicycle driven by a constant input (v_r, omega_r), so its
pose is available in closed form at any time: a circular arc for
omega_r != 0 and a straight line otherwise.  Evaluating it exactly (rather
than integrating it) keeps reference drift out of the error budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kinematics import BodyInput, Pose, RobotParams, input_in_set, wrap_angle


@dataclass(frozen=True)
class ReferenceSpec:
    """Constant-input reference: linear/angular velocity and initial pose."""

    v_r: float
    omega_r: float
    initial: Pose

    def validate(self, params: RobotParams) -> None:
        if not input_in_set(BodyInput(self.v_r, self.omega_r), 1.0, params):
            raise ValueError(
                f"reference input (v_r={self.v_r}, omega_r={self.omega_r}) "
                "violates the wheel-speed constraint"
            )


def reference_heading_unwrapped(spec: ReferenceSpec, t: float) -> float:
    return spec.initial.theta + spec.omega_r * t


def reference_position(spec: ReferenceSpec, t: float) -> tuple[float, float]:
    x0, y0, th0 = spec.initial.x, spec.initial.y, spec.initial.theta
    if abs(spec.omega_r) < 1e-12:
        return x0 + spec.v_r * t * math.cos(th0), y0 + spec.v_r * t * math.sin(th0)
    th = th0 + spec.omega_r * t
    ratio = spec.v_r / spec.omega_r
    return (
        x0 + ratio * (math.sin(th) - math.sin(th0)),
        y0 - ratio * (math.cos(th) - math.cos(th0)),
    )


def reference_at(spec: ReferenceSpec, t: float) -> tuple[Pose, BodyInput]:
    """Reference pose (heading wrapped) and input at absolute time t."""
    x, y = reference_position(spec, t)
    return (
        Pose(x, y, wrap_angle(reference_heading_unwrapped(spec, t))),
        BodyInput(spec.v_r, spec.omega_r),
    )


@dataclass(frozen=True)
class ReferenceWindow:
    """Reference samples on the prediction grid of one optimization problem.

    ``times`` are absolute times at the N*m+1 integration substep nodes,
    ``positions`` is (n, 2) and ``headings`` (n,) with unwrapped headings so
    that heading differences stay smooth across the window.
    """

    times: np.ndarray
    positions: np.ndarray
    headings: np.ndarray
    v_r: float
    omega_r: float


def build_window(spec: ReferenceSpec, t_start: float, n_nodes: int, h: float) -> ReferenceWindow:
    """Sample the reference at t_start + i*h for i in 0..n_nodes-1."""
    times = t_start + h * np.arange(n_nodes)
    xs = np.empty(n_nodes)
    ys = np.empty(n_nodes)
    for i, t in enumerate(times):
        xs[i], ys[i] = reference_position(spec, float(t))
    headings = spec.initial.theta + spec.omega_r * times
    return ReferenceWindow(
        times=times,
        positions=np.column_stack([xs, ys]),
        headings=headings,
        v_r=spec.v_r,
        omega_r=spec.omega_r,
    )
