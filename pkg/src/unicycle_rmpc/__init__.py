"""Robust model-predictive tracking for a disturbed unicycle robot.

Two closed-loop strategies over a shared trajectory optimizer:

* tube MPC: a nominal problem with tightened input/terminal sets plus an
  ancillary feedback law that confines the real state to a tube around the
  nominal optimal trajectory;
* NRMPC: nominal MPC re-solved from the measured state each period with a
  shrinking funnel constraint, applied open loop.

See the ``cli`` module (``unicycle-rmpc`` entry point) for the experiment
driver and ``simulation.run_closed_loop`` for the library-level harness.
"""

from .controllers import (
    CertifiedParams,
    Check,
    ControllerConfig,
    FeedbackGain,
    NrmpcController,
    TubeController,
    certify_nrmpc,
    certify_tube,
    tube_feedback,
)
from .error_frame import (
    Disturbance,
    InputError,
    TrackingError,
    affine_input_matrix,
    error_dynamics,
    input_error,
    rotation,
    tracking_error,
)
from .kinematics import (
    BodyInput,
    Pose,
    RobotParams,
    WheelSpeeds,
    body_to_wheels,
    f_head,
    f_unicycle,
    head_pose,
    input_in_set,
    wheels_to_body,
    wrap_angle,
)
from .ocp import (
    ConstraintSpec,
    HorizonConfig,
    TerminalBall,
    TerminalDiamond,
    TerminalGains,
    Weights,
    in_terminal_diamond,
    stage_cost,
    terminal_controller,
    terminal_penalty,
    total_cost,
    transcribe,
)
from .reference import ReferenceSpec, reference_at
from .simulation import (
    DisturbanceModel,
    SimConfig,
    SimLog,
    integrate_perturbed,
    run_closed_loop,
    sample_disturbance,
)
from .solver import NumericalBreakdown, OcpSolution, SolverOptions, shift_warm_start, solve

__version__ = "0.1.0"

__all__ = [
    "BodyInput",
    "CertifiedParams",
    "Check",
    "ConstraintSpec",
    "ControllerConfig",
    "Disturbance",
    "DisturbanceModel",
    "FeedbackGain",
    "HorizonConfig",
    "InputError",
    "NrmpcController",
    "NumericalBreakdown",
    "OcpSolution",
    "Pose",
    "ReferenceSpec",
    "RobotParams",
    "SimConfig",
    "SimLog",
    "SolverOptions",
    "TerminalBall",
    "TerminalDiamond",
    "TerminalGains",
    "TrackingError",
    "TubeController",
    "WheelSpeeds",
    "Weights",
    "affine_input_matrix",
    "body_to_wheels",
    "certify_nrmpc",
    "certify_tube",
    "error_dynamics",
    "f_head",
    "f_unicycle",
    "head_pose",
    "in_terminal_diamond",
    "input_error",
    "input_in_set",
    "integrate_perturbed",
    "reference_at",
    "rotation",
    "run_closed_loop",
    "sample_disturbance",
    "shift_warm_start",
    "solve",
    "stage_cost",
    "terminal_controller",
    "terminal_penalty",
    "total_cost",
    "tracking_error",
    "transcribe",
    "tube_feedback",
    "wheels_to_body",
    "wrap_angle",
]
