"""Command-line interface: certify / run / compare / gain-sweep.

Configuration is a line-oriented ``key = value`` format with ``[section]``
headers.  All physical quantities are SI (meters, seconds, radians, m/s).
Unknown keys and malformed values are reported with their line numbers; a
configuration either parses completely or not at all.

Exit codes: 0 success, 1 certification failure, 2 parse error,
3 runtime/solver abort.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .controllers import (
    CertifiedParams,
    FeedbackGain,
    certify_nrmpc,
    certify_tube,
)
from .kinematics import Pose, RobotParams
from .ocp import HorizonConfig, TerminalGains, Weights
from .reference import ReferenceSpec
from .simulation import (
    DISTURBANCE_MODES,
    CertificationError,
    SimConfig,
    SimLog,
    run_closed_loop,
)
from .solver import NumericalBreakdown

EXIT_OK = 0
EXIT_CERTIFICATION = 1
EXIT_PARSE = 2
EXIT_RUNTIME = 3

CSV_COLUMNS = [
    "t",
    "x_f",
    "y_f",
    "theta_f",
    "x_r",
    "y_r",
    "theta_r",
    "x_rf",
    "y_rf",
    "theta_rf",
    "v_f",
    "omega_f",
    "input_index",
    "pfe_x",
    "pfe_y",
    "J_opt",
    "stage_cost",
    "state_cost",
    "input_cost",
    "solver_iters",
    "solve_time_s",
    "feasible",
    "fallback",
]

# section -> key -> (type, unit/notes, required)
_SCHEMA = {
    "robot": {
        "a": (float, "max wheel speed, m/s", True),
        "rho": (float, "half wheelbase, m", True),
    },
    "weights": {
        "q1": (float, "state weight, 1/m^2 s", True),
        "q2": (float, "state weight, 1/m^2 s", True),
        "p1": (float, "input weight, s/m^2", True),
        "p2": (float, "input weight, s/m^2", True),
        "k1_t": (float, "terminal gain, 1/s", True),
        "k2_t": (float, "terminal gain, 1/s", True),
    },
    "horizon": {
        "T": (float, "prediction horizon, s", True),
        "delta": (float, "sampling period, s", True),
        "substeps": (int, "RK4 substeps per interval", True),
    },
    "tube": {
        "kx": (float, "feedback gain (negative), 1/s", True),
        "ky": (float, "feedback gain (negative), 1/s", True),
    },
    "nrmpc": {
        "epsilon": (float, "terminal ball radius, m", True),
    },
    "reference": {
        "v_r": (float, "reference linear velocity, m/s", True),
        "omega_r": (float, "reference angular velocity, rad/s", True),
        "x0": (float, "reference initial x, m", True),
        "y0": (float, "reference initial y, m", True),
        "theta0": (float, "reference initial heading, rad", True),
    },
    "sim": {
        "eta": (float, "disturbance bound, m/s", True),
        "duration": (float, "simulated time, s", True),
        "seed": (int, "disturbance seed", True),
        "strategy": (str, "tube | nrmpc", True),
        "initial_x": (float, "follower head initial x, m", True),
        "initial_y": (float, "follower head initial y, m", True),
        "initial_theta": (float, "follower head initial heading, rad", True),
        "feedback": (str, "continuous | zoh (tube only)", False),
        "disturbance": (str, " | ".join(DISTURBANCE_MODES), False),
    },
    "output": {
        "dir": (str, "output directory", False),
    },
}

_DEFAULTS = {
    ("sim", "feedback"): "continuous",
    ("sim", "disturbance"): "seeded-random",
    ("output", "dir"): "out",
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully validated experiment description."""

    params: RobotParams
    weights: Weights
    horizon: HorizonConfig
    gains: TerminalGains
    feedback_gain: FeedbackGain
    reference: ReferenceSpec
    initial_head: Pose
    eta: float
    epsilon: float
    strategy: str
    duration: float
    seed: int
    feedback_mode: str
    disturbance_mode: str
    output_dir: str


class ConfigParseError(ValueError):
    """Carries the full list of line-numbered configuration errors."""

    def __init__(self, errors: list[str]):
        super().__init__("\n".join(errors))
        self.errors = errors


def bundled_config_path() -> Path:
    """Path of the packaged reference configuration."""
    return Path(resources.files("unicycle_rmpc") / "configs" / "epuck_paper.cfg")


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a configuration; raises ConfigParseError with all
    line-numbered problems at once."""
    errors: list[str] = []
    values: dict[tuple[str, str], object] = {}
    section: Optional[str] = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SCHEMA:
                errors.append(f"line {lineno}: unknown section [{section}]")
                section = None
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value', got {line!r}")
            continue
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if section is None:
            errors.append(f"line {lineno}: key {key!r} outside any known section")
            continue
        schema = _SCHEMA[section]
        if key not in schema:
            errors.append(f"line {lineno}: unknown key {key!r} in section [{section}]")
            continue
        typ, unit, _req = schema[key]
        try:
            if typ is float:
                parsed: object = float(value)
                if not math.isfinite(parsed):
                    raise ValueError
            elif typ is int:
                parsed = int(value)
            else:
                parsed = value
        except ValueError:
            errors.append(
                f"line {lineno}: key {key!r} expects {typ.__name__} ({unit}), got {value!r}"
            )
            continue
        if (section, key) in values:
            errors.append(f"line {lineno}: duplicate key {key!r} in section [{section}]")
            continue
        values[(section, key)] = parsed

    for sec, keys in _SCHEMA.items():
        for key, (_typ, unit, required) in keys.items():
            if (sec, key) not in values:
                if required:
                    errors.append(f"missing required key [{sec}] {key} ({unit})")
                else:
                    values[(sec, key)] = _DEFAULTS[(sec, key)]

    if errors:
        raise ConfigParseError(errors)

    def v(sec: str, key: str):
        return values[(sec, key)]

    try:
        params = RobotParams(a=v("robot", "a"), rho=v("robot", "rho"))
        weights = Weights(
            q1=v("weights", "q1"), q2=v("weights", "q2"),
            p1=v("weights", "p1"), p2=v("weights", "p2"),
        )
        horizon = HorizonConfig(
            T=v("horizon", "T"), delta=v("horizon", "delta"), m=v("horizon", "substeps")
        )
        gains = TerminalGains(k1_t=v("weights", "k1_t"), k2_t=v("weights", "k2_t"))
        feedback_gain = FeedbackGain(k_x=v("tube", "kx"), k_y=v("tube", "ky"))
        reference = ReferenceSpec(
            v_r=v("reference", "v_r"),
            omega_r=v("reference", "omega_r"),
            initial=Pose(v("reference", "x0"), v("reference", "y0"), v("reference", "theta0")),
        )
        reference.validate(params)
        strategy = v("sim", "strategy")
        if strategy not in ("tube", "nrmpc"):
            raise ValueError(f"[sim] strategy must be 'tube' or 'nrmpc', got {strategy!r}")
        feedback_mode = v("sim", "feedback")
        if feedback_mode not in ("continuous", "zoh"):
            raise ValueError(f"[sim] feedback must be 'continuous' or 'zoh', got {feedback_mode!r}")
        disturbance_mode = v("sim", "disturbance")
        if disturbance_mode not in DISTURBANCE_MODES:
            raise ValueError(f"[sim] disturbance must be one of {DISTURBANCE_MODES}")
        eta = v("sim", "eta")
        if eta < 0:
            raise ValueError("[sim] eta must be non-negative")
        duration = v("sim", "duration")
        if duration <= 0:
            raise ValueError("[sim] duration must be positive")
        return ExperimentConfig(
            params=params,
            weights=weights,
            horizon=horizon,
            gains=gains,
            feedback_gain=feedback_gain,
            reference=reference,
            initial_head=Pose(
                v("sim", "initial_x"), v("sim", "initial_y"), v("sim", "initial_theta")
            ),
            eta=eta,
            epsilon=v("nrmpc", "epsilon"),
            strategy=strategy,
            duration=duration,
            seed=v("sim", "seed"),
            feedback_mode=feedback_mode,
            disturbance_mode=disturbance_mode,
            output_dir=v("output", "dir"),
        )
    except ValueError as exc:
        raise ConfigParseError([str(exc)]) from exc


def load_config(path: Path) -> ExperimentConfig:
    return parse_config(path.read_text())


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def write_csv(log: SimLog, path: Path) -> None:
    """Fixed-column CSV at substep resolution; floats use shortest round-trip
    decimals.  Solver columns repeat the owning step's values on substep rows."""
    m = log.substeps
    with open(path, "w", newline="") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for row in range(log.n_substep_rows):
            k = min(row // m, log.n_steps - 1)
            cells = [
                _fmt(log.t[row]),
                _fmt(log.actual[row, 0]),
                _fmt(log.actual[row, 1]),
                _fmt(log.actual[row, 2]),
                _fmt(log.ref[row, 0]),
                _fmt(log.ref[row, 1]),
                _fmt(log.ref[row, 2]),
                _fmt(log.err[row, 0]),
                _fmt(log.err[row, 1]),
                _fmt(log.err[row, 2]),
                _fmt(log.u_applied[row, 0]),
                _fmt(log.u_applied[row, 1]),
                _fmt(log.input_idx[row]),
                _fmt(log.pfe[row, 0]),
                _fmt(log.pfe[row, 1]),
                _fmt(log.j_opt[k]),
                _fmt(log.stage_cost[row]),
                _fmt(log.state_cost[row]),
                _fmt(log.input_cost[row]),
                str(int(log.solver_iters[k])),
                _fmt(log.solve_time[k]),
                str(int(log.feasible[k])),
                str(int(log.fallback[k])),
            ]
            fh.write(",".join(cells) + "\n")


def read_csv(path: Path) -> dict[str, list[float]]:
    """Parse a CSV produced by :func:`write_csv` back into column arrays."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        cols: dict[str, list[float]] = {h: [] for h in header}
        for line in fh:
            for h, cell in zip(header, line.strip().split(",")):
                cols[h].append(float(cell))
    return cols


def summarize(log: SimLog) -> dict:
    return {
        "strategy": log.strategy,
        "seed": log.seed,
        "forced": log.forced,
        "max_abs_pfe": float(np.max(np.abs(log.pfe))),
        "terminal_window_mean_err": log.terminal_window_mean_error(),
        "min_input_index": float(np.min(log.input_idx)),
        "max_input_index": float(np.max(log.input_idx)),
        "feasibility_rate": log.feasibility_rate(),
        "fallback_steps": int(np.sum(log.fallback)),
        "total_runtime_s": log.total_runtime,
    }


def _write_json(data: dict, path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _certify(cfg: ExperimentConfig, strategy: str) -> CertifiedParams:
    if strategy == "tube":
        return certify_tube(
            cfg.params, cfg.weights, cfg.gains, cfg.feedback_gain, cfg.eta, abs(cfg.reference.v_r)
        )
    return certify_nrmpc(
        cfg.params, cfg.weights, cfg.gains, cfg.eta, abs(cfg.reference.v_r),
        cfg.horizon, cfg.epsilon,
    )


def print_certificate(cert: CertifiedParams, strategy: str, out=sys.stdout) -> None:
    print(f"certification [{strategy}]", file=out)
    derived = {
        "lambda_r": cert.lambda_r,
        "lambda_tube": cert.lambda_tube,
        "diamond_level": cert.diamond_level,
        "tube_halfwidth_x": cert.tube_halfwidth_x,
        "tube_halfwidth_y": cert.tube_halfwidth_y,
        "r": cert.r,
        "epsilon": cert.epsilon,
        "k_tilde": cert.k_tilde,
    }
    for name, val in derived.items():
        if val is not None:
            print(f"  {name} = {val:.6g}", file=out)
    for c in cert.checks:
        verdict = "PASS" if c.passed else "FAIL"
        print(f"  {c.name}: {c.lhs:.6g} ({c.relation}) {c.rhs:.6g} -> {verdict}", file=out)


def cmd_certify(cfg: ExperimentConfig, out=sys.stdout) -> int:
    cert = _certify(cfg, cfg.strategy)
    print_certificate(cert, cfg.strategy, out)
    return EXIT_OK if cert.all_passed else EXIT_CERTIFICATION


def _sim_config(cfg: ExperimentConfig, strategy: str, forced: bool) -> SimConfig:
    return SimConfig(
        params=cfg.params,
        weights=cfg.weights,
        horizon=cfg.horizon,
        gains=cfg.gains,
        feedback_gain=cfg.feedback_gain,
        reference=cfg.reference,
        initial_head=cfg.initial_head,
        eta=cfg.eta,
        epsilon=cfg.epsilon,
        duration=cfg.duration,
        seed=cfg.seed,
        strategy=strategy,
        feedback_mode=cfg.feedback_mode,
        disturbance_mode=cfg.disturbance_mode,
        forced=forced,
    )


def _run_one(cfg: ExperimentConfig, strategy: str, force: bool, out) -> tuple[SimLog, CertifiedParams]:
    cert = _certify(cfg, strategy)
    if not cert.all_passed:
        if not force:
            print_certificate(cert, strategy, out)
            raise CertificationError(cert)
        print(f"warning: running {strategy} with failing certificate (--force)", file=out)
    return run_closed_loop(_sim_config(cfg, strategy, force), cert), cert


def cmd_run(cfg: ExperimentConfig, out_dir: Path, force: bool = False, out=sys.stdout) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        log, _cert = _run_one(cfg, cfg.strategy, force, out)
    except CertificationError:
        return EXIT_CERTIFICATION
    csv_path = out_dir / f"{cfg.strategy}.csv"
    write_csv(log, csv_path)
    _write_json(summarize(log), out_dir / f"{cfg.strategy}_summary.json")
    print(f"wrote {csv_path}", file=out)
    return EXIT_OK


def cmd_compare(cfg: ExperimentConfig, out_dir: Path, force: bool = False, out=sys.stdout) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    logs = {}
    try:
        for strategy in ("tube", "nrmpc"):
            logs[strategy], _ = _run_one(cfg, strategy, force, out)
    except CertificationError:
        return EXIT_CERTIFICATION
    comparison: dict = {"seed": cfg.seed}
    for strategy, log in logs.items():
        write_csv(log, out_dir / f"{strategy}.csv")
        costs = log.cumulative_costs()
        comparison[strategy] = {
            "cumulative_total_cost": costs["total"],
            "cumulative_stage_cost": costs["stage"],
            "cumulative_state_cost": costs["state"],
            "cumulative_input_cost": costs["input"],
            "mean_solve_time_s": float(np.mean(log.solve_time)),
            "feasibility_rate": log.feasibility_rate(),
        }
    _write_json(comparison, out_dir / "comparison.json")
    print(f"wrote {out_dir / 'comparison.json'}", file=out)
    return EXIT_OK


def cmd_gain_sweep(
    cfg: ExperimentConfig,
    gains: list[float],
    out_dir: Path,
    force: bool = False,
    out=sys.stdout,
) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    report = {"seed": cfg.seed, "gains": []}
    for k in gains:
        cfg_k = replace(cfg, feedback_gain=FeedbackGain(k_x=k, k_y=k))
        try:
            log, cert = _run_one(cfg_k, "tube", force, out)
        except CertificationError:
            return EXIT_CERTIFICATION
        tag = f"tube_k{abs(k):g}".replace(".", "p")
        write_csv(log, out_dir / f"{tag}.csv")
        report["gains"].append(
            {
                "k": k,
                "max_abs_pfe": float(np.max(np.abs(log.pfe))),
                "predicted_halfwidth": cert.tube_halfwidth_x,
                "csv": f"{tag}.csv",
            }
        )
    _write_json(report, out_dir / "gain_sweep.json")
    print(f"wrote {out_dir / 'gain_sweep.json'}", file=out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unicycle-rmpc",
        description="Robust MPC tracking for a disturbed unicycle robot",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument(
            "--config",
            type=Path,
            default=None,
            help="configuration file (defaults to the bundled reference setup)",
        )
        p.add_argument("--seed", type=int, default=None, help="override [sim] seed")
        p.add_argument("--out", type=Path, default=None, help="override [output] dir")
        p.add_argument("--force", action="store_true", help="run despite failing certification")
        p.add_argument(
            "--feedback",
            choices=["continuous", "zoh"],
            default=None,
            help="override [sim] feedback mode",
        )

    for name in ("certify", "run", "compare", "gain-sweep"):
        p = sub.add_parser(name)
        common(p)
        if name == "gain-sweep":
            p.add_argument(
                "--gains",
                type=str,
                default="-1,-2.3,-4",
                help="comma-separated negative diagonal feedback gains",
            )
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    config_path = args.config if args.config is not None else bundled_config_path()
    try:
        cfg = load_config(config_path)
    except FileNotFoundError:
        print(f"error: config file not found: {config_path}", file=sys.stderr)
        return EXIT_PARSE
    except ConfigParseError as exc:
        for err in exc.errors:
            print(f"error: {err}", file=sys.stderr)
        return EXIT_PARSE

    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.feedback is not None:
        cfg = replace(cfg, feedback_mode=args.feedback)
    out_dir = args.out if args.out is not None else Path(cfg.output_dir)

    try:
        if args.command == "certify":
            return cmd_certify(cfg)
        if args.command == "run":
            return cmd_run(cfg, out_dir, force=args.force)
        if args.command == "compare":
            return cmd_compare(cfg, out_dir, force=args.force)
        if args.command == "gain-sweep":
            gains = [float(g) for g in args.gains.split(",") if g.strip()]
            return cmd_gain_sweep(cfg, gains, out_dir, force=args.force)
    except NumericalBreakdown as exc:
        print(f"error: solver abort: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: I/O failure ({exc})", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
