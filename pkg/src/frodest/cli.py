"""Command line front end.

Subcommands
-----------
simulate   generate a trajectory CSV from a model file or the built-in
           synthetic scenario
estimate   run the recursive estimator over a trajectory (optionally
           cross-checked against the batch least-squares solver)
analyze    check assumptions and, when they hold, emit guarantee
           constants as JSON
repro-eeg  run the synthetic scenario through several truncation
           depths and emit measured-vs-estimated and error CSVs

Exit codes: 0 success, 1 configuration problem, 2 model problem,
3 numerical failure.  Every run writes a manifest with the resolved
configuration and its hash; outputs carry full float precision, so a
repeated run with the same inputs is byte-identical.

The environment variable FRODEST_THREADS caps the worker threads used
by repro-eeg when fanning out over truncation depths (default 1).
"""
from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from .analysis import (
    DEFAULT_WINDOW_CAP,
    check_assumptions,
    covariance_bounds,
    iss_constants,
    write_analysis_json,
)
from .errors import (
    ConfigError,
    FrodestError,
    GuaranteeUnavailableError,
    ModelError,
    NumericError,
)
from .estimator import EstimatorConfig, batch_wls_oracle, me_run, write_estimation_csv
from .model import (
    FodnModel,
    NoiseBounds,
    build_v_approximation,
    disturbance_residuals,
    expand_model,
    load_model,
    save_model,
)
from .simulator import (
    Trajectory,
    gen_bounded_noise,
    read_trajectory_csv,
    simulate_exact,
    simulate_vapprox,
    synth_eeg_scenario,
    write_trajectory_csv,
)

SYNTH_MODEL = "synth-eeg"

# Scenario-scale estimator defaults; overridable through the config file.
DEFAULT_Q_SCALE = 0.0025
DEFAULT_R_SCALE = 0.01


@dataclass
class ExperimentConfig:
    """Resolved experiment description (defaults < file < flags)."""

    model: Optional[str] = None
    v: int = 2
    horizon: int = 150
    seed: int = 0
    noise: NoiseBounds = field(default_factory=lambda: NoiseBounds(0.05, 0.1))
    estimator: dict = field(default_factory=dict)
    x0: Optional[list] = None
    inputs: Optional[list] = None
    trajectory: Optional[str] = None
    measurements_from: str = "exact"
    window_cap: int = DEFAULT_WINDOW_CAP
    out: str = "out"

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "v": self.v,
            "horizon": self.horizon,
            "seed": self.seed,
            "noise": {"b_w": self.noise.b_w, "b_v": self.noise.b_v},
            "estimator": self.estimator,
            "x0": self.x0,
            "inputs": self.inputs,
            "trajectory": self.trajectory,
            "measurements_from": self.measurements_from,
            "window_cap": self.window_cap,
            "out": self.out,
        }


def _load_config_file(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    return doc


def resolve_config(args) -> ExperimentConfig:
    """Combine defaults, an optional config file, and command flags."""
    cfg = ExperimentConfig()
    doc = _load_config_file(args.config) if getattr(args, "config", None) else {}

    known = {
        "model",
        "v",
        "horizon",
        "seed",
        "noise",
        "estimator",
        "x0",
        "inputs",
        "trajectory",
        "measurements_from",
        "window_cap",
        "out",
    }
    for key in doc:
        if key not in known:
            raise ConfigError(f"unknown config key '{key}'")

    for key in ("model", "trajectory", "measurements_from", "out"):
        if key in doc:
            setattr(cfg, key, doc[key])
    for key in ("v", "horizon", "seed", "window_cap"):
        if key in doc:
            try:
                setattr(cfg, key, int(doc[key]))
            except (TypeError, ValueError):
                raise ConfigError(f"config key '{key}' must be an integer")
    if "noise" in doc:
        noise = doc["noise"]
        if not isinstance(noise, dict) or set(noise) - {"b_w", "b_v"}:
            raise ConfigError("config key 'noise' must be {'b_w': .., 'b_v': ..}")
        try:
            cfg.noise = NoiseBounds(
                b_w=float(noise.get("b_w", cfg.noise.b_w)),
                b_v=float(noise.get("b_v", cfg.noise.b_v)),
            )
        except ModelError as exc:
            raise ConfigError(str(exc))
    if "estimator" in doc:
        if not isinstance(doc["estimator"], dict):
            raise ConfigError("config key 'estimator' must be an object")
        cfg.estimator = doc["estimator"]
    for key in ("x0", "inputs"):
        if key in doc:
            setattr(cfg, key, doc[key])

    for flag in ("model", "seed", "v", "horizon", "out"):
        val = getattr(args, flag, None)
        if val is not None:
            setattr(cfg, flag, val)

    if cfg.v < 1:
        raise ConfigError(f"truncation depth must be >= 1, got {cfg.v}")
    if cfg.horizon < 1:
        raise ConfigError(f"horizon must be >= 1, got {cfg.horizon}")
    if cfg.measurements_from not in ("exact", "vapprox"):
        raise ConfigError(
            "measurements_from must be 'exact' or 'vapprox', got "
            f"'{cfg.measurements_from}'"
        )
    return cfg


def _weight_matrix(name: str, spec, size: int, default_scale: float) -> np.ndarray:
    if spec is None:
        return default_scale * np.eye(size)
    if isinstance(spec, (int, float)):
        if spec <= 0:
            raise ConfigError(f"estimator.{name} scalar must be positive")
        return float(spec) * np.eye(size)
    try:
        mat = np.array(spec, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"estimator.{name} must be a scalar or a matrix")
    if mat.shape != (size, size):
        raise ConfigError(
            f"estimator.{name} must be {size} x {size}, got shape {mat.shape}"
        )
    return mat


def build_estimator_config(cfg: ExperimentConfig, n: int, q: int, dim: int) -> EstimatorConfig:
    spec = cfg.estimator
    unknown = set(spec) - {"Q", "R", "P0", "x0_hat"}
    if unknown:
        raise ConfigError(f"unknown estimator config keys {sorted(unknown)}")
    x0_spec = spec.get("x0_hat", "zero")
    if isinstance(x0_spec, str):
        if x0_spec != "zero":
            raise ConfigError(f"estimator.x0_hat string must be 'zero', got '{x0_spec}'")
        x0_hat = np.zeros(dim)
    else:
        x0_hat = np.asarray(x0_spec, dtype=float).reshape(-1)
        if x0_hat.shape[0] != dim:
            raise ConfigError(
                f"estimator.x0_hat must have length {dim}, got {x0_hat.shape[0]}"
            )
    return EstimatorConfig(
        Q=_weight_matrix("Q", spec.get("Q"), n, DEFAULT_Q_SCALE),
        R=_weight_matrix("R", spec.get("R"), q, DEFAULT_R_SCALE),
        P0=_weight_matrix("P0", spec.get("P0"), dim, 1.0),
        x0_hat=x0_hat,
    )


def _env_threads() -> int:
    raw = os.environ.get("FRODEST_THREADS")
    if raw is None:
        return 1
    try:
        val = int(raw)
    except ValueError:
        raise ConfigError(f"FRODEST_THREADS must be an integer, got '{raw}'")
    if val < 1:
        raise ConfigError(f"FRODEST_THREADS must be >= 1, got {val}")
    return val


def write_manifest(outdir: str, command: str, cfg: ExperimentConfig) -> None:
    resolved = cfg.to_dict()
    blob = json.dumps(resolved, sort_keys=True).encode("utf-8")
    doc = {
        "command": command,
        "config": resolved,
        "config_sha256": hashlib.sha256(blob).hexdigest(),
        "versions": {
            "frodest": __version__,
            "numpy": np.__version__,
            "python": "%d.%d" % sys.version_info[:2],
        },
    }
    with open(os.path.join(outdir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _obtain_model_and_trajectory(cfg: ExperimentConfig):
    """Produce (model, trajectory) per the resolved configuration."""
    if cfg.model == SYNTH_MODEL:
        model, traj = synth_eeg_scenario(cfg.seed, steps=cfg.horizon)
        return model, traj
    if cfg.model is None:
        raise ConfigError("a model file (or 'synth-eeg') is required")
    model = load_model(cfg.model)
    if cfg.trajectory is not None:
        return model, read_trajectory_csv(cfg.trajectory)
    steps = cfg.horizon
    if cfg.inputs is None:
        u = np.zeros((steps, model.m))
    else:
        u = np.asarray(cfg.inputs, dtype=float)
        if u.ndim == 1 and model.m == 1:
            u = u[:, None]
        if u.shape != (steps, model.m):
            raise ConfigError(
                f"config inputs must be {steps} x {model.m}, got shape {u.shape}"
            )
    w, vn = gen_bounded_noise(cfg.noise, (model.p, model.q), steps, cfg.seed)
    x0 = np.zeros(model.n) if cfg.x0 is None else np.asarray(cfg.x0, dtype=float)
    traj = simulate_exact(model, u, w, x0, steps, meas_noise=vn)
    return model, traj


def cmd_simulate(args) -> int:
    cfg = resolve_config(args)
    model, traj = _obtain_model_and_trajectory(cfg)
    os.makedirs(cfg.out, exist_ok=True)
    write_trajectory_csv(traj, os.path.join(cfg.out, "trajectory.csv"))
    if cfg.model == SYNTH_MODEL:
        save_model(model, os.path.join(cfg.out, "model.json"))
    write_manifest(cfg.out, "simulate", cfg)
    print(f"wrote {traj.horizon + 1} rows to {cfg.out}/trajectory.csv")
    return 0


def cmd_estimate(args) -> int:
    cfg = resolve_config(args)
    model, traj = _obtain_model_and_trajectory(cfg)
    steps = traj.horizon
    expanded = expand_model(model, max(steps, cfg.v))
    vapprox = build_v_approximation(expanded, model, cfg.v)

    if cfg.measurements_from == "exact":
        measurements = traj.outputs
        truth = traj.states
    else:
        if traj.meas_noise is None:
            raise ConfigError(
                "measurements_from = 'vapprox' needs a generated trajectory; "
                "a trajectory file does not record its measurement noise"
            )
        resid = disturbance_residuals(expanded, traj.disturbances)
        approx = simulate_vapprox(
            vapprox,
            traj.inputs,
            resid,
            vapprox.lift_initial_state(traj.states[0]),
            meas_noise=traj.meas_noise,
        )
        measurements = approx.outputs
        truth = approx.states

    est_config = build_estimator_config(cfg, model.n, model.q, vapprox.dim)
    states = me_run(vapprox, est_config, traj.inputs, measurements)

    os.makedirs(cfg.out, exist_ok=True)
    write_estimation_csv(
        os.path.join(cfg.out, "estimation.csv"),
        states,
        measurements,
        vapprox.C,
        true_states=truth,
    )
    if getattr(args, "oracle", False):
        x_batch, cost = batch_wls_oracle(vapprox, est_config, traj.inputs, measurements)
        gap = float(np.linalg.norm(states[-1].x_hat - x_batch))
        with open(os.path.join(cfg.out, "oracle.json"), "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "batch_cost": cost,
                    "batch_terminal": [float(v) for v in x_batch],
                    "recursive_terminal": [float(v) for v in states[-1].x_hat],
                    "terminal_gap": gap,
                },
                fh,
                indent=2,
                sort_keys=True,
            )
            fh.write("\n")
    write_manifest(cfg.out, "estimate", cfg)
    print(f"wrote {len(states)} estimates to {cfg.out}/estimation.csv")
    return 0


def cmd_analyze(args) -> int:
    cfg = resolve_config(args)
    if cfg.model == SYNTH_MODEL:
        model, _ = synth_eeg_scenario(cfg.seed, steps=1)
    elif cfg.model is None:
        raise ConfigError("a model file (or 'synth-eeg') is required")
    else:
        model = load_model(cfg.model)
    expanded = expand_model(model, cfg.v)
    vapprox = build_v_approximation(expanded, model, cfg.v)
    est_config = build_estimator_config(cfg, model.n, model.q, vapprox.dim)

    report = check_assumptions(vapprox, est_config, window_cap=cfg.window_cap)
    bundle, note = None, None
    try:
        pi_lo, pi_hi = covariance_bounds(report)
        bundle = iss_constants(report, pi_lo, pi_hi)
    except GuaranteeUnavailableError as exc:
        note = str(exc)

    os.makedirs(cfg.out, exist_ok=True)
    write_analysis_json(os.path.join(cfg.out, "analysis.json"), report, bundle, note)
    write_manifest(cfg.out, "analyze", cfg)
    verdict = "all assumptions hold" if report.all_satisfied else (
        "failing: " + ", ".join(report.failing())
    )
    print(f"wrote {cfg.out}/analysis.json ({verdict})")
    return 0


def _repro_one(vapprox, traj, est_config, outdir: str) -> float:
    """Run one truncation depth and write its figure-shaped CSVs."""
    import csv as _csv

    states = me_run(vapprox, est_config, traj.inputs, traj.outputs)
    q = vapprox.C.shape[0]
    n = vapprox.layout.n
    steps = traj.horizon
    c_prime = vapprox.C[:, :n]
    true_out = traj.states[1:] @ c_prime.T

    os.makedirs(outdir, exist_ok=True)
    sup_err = 0.0
    with open(os.path.join(outdir, "outputs.csv"), "w", encoding="utf-8", newline="") as fo, open(
        os.path.join(outdir, "errors.csv"), "w", encoding="utf-8", newline=""
    ) as fe:
        wo = _csv.writer(fo)
        we = _csv.writer(fe)
        wo.writerow(
            ["k"]
            + [f"measured_{i + 1}" for i in range(q)]
            + [f"estimated_{i + 1}" for i in range(q)]
        )
        we.writerow(
            ["k"]
            + [f"meas_err_{i + 1}" for i in range(q)]
            + [f"est_err_{i + 1}" for i in range(q)]
        )
        for k in range(1, steps + 1):
            y_hat = vapprox.C @ states[k].x_hat
            meas_err = traj.outputs[k - 1] - true_out[k - 1]
            est_err = y_hat - true_out[k - 1]
            sup_err = max(sup_err, float(np.linalg.norm(est_err)))
            wo.writerow(
                [str(k)]
                + [repr(float(v)) for v in traj.outputs[k - 1]]
                + [repr(float(v)) for v in y_hat]
            )
            we.writerow(
                [str(k)]
                + [repr(float(v)) for v in meas_err]
                + [repr(float(v)) for v in est_err]
            )
    return sup_err


def cmd_repro_eeg(args) -> int:
    cfg = resolve_config(args)
    try:
        v_list = [int(tok) for tok in args.v_list.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"--v-list must be comma-separated integers, got '{args.v_list}'")
    if not v_list:
        raise ConfigError("--v-list must name at least one truncation depth")
    if any(v < 1 for v in v_list):
        raise ConfigError("truncation depths must be >= 1")

    model, traj = synth_eeg_scenario(cfg.seed, steps=cfg.horizon)
    expanded = expand_model(model, max(cfg.horizon, max(v_list)))

    def run_one(v: int) -> tuple:
        vapprox = build_v_approximation(expanded, model, v)
        est_config = build_estimator_config(cfg, model.n, model.q, vapprox.dim)
        sup = _repro_one(vapprox, traj, est_config, os.path.join(cfg.out, f"v{v}"))
        return v, sup

    os.makedirs(cfg.out, exist_ok=True)
    workers = min(_env_threads(), len(v_list))
    results = {}
    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            for v, sup in pool.map(run_one, v_list):
                results[v] = sup
    else:
        for v in v_list:
            v, sup = run_one(v)
            results[v] = sup

    meas_sup = float(
        np.max(np.linalg.norm(traj.meas_noise, axis=1)) if traj.meas_noise is not None else 0.0
    )
    summary = {
        "seed": cfg.seed,
        "horizon": cfg.horizon,
        "sup_meas_err": meas_sup,
        "sup_est_err": {str(v): results[v] for v in sorted(results)},
    }
    with open(os.path.join(cfg.out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(cfg.out, "repro-eeg", cfg)
    for v in sorted(results):
        print(f"v={v}: sup estimation error {results[v]:.6f}")
    return 0


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which collides with the
    # model-error code; route usage problems to the config code instead
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="frodest", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_v=True):
        p.add_argument("--model", help=f"model JSON path or '{SYNTH_MODEL}'")
        p.add_argument("--config", help="experiment config JSON path")
        p.add_argument("--seed", type=int, help="random seed")
        p.add_argument("--horizon", type=int, help="number of steps N")
        p.add_argument("--out", help="output directory")
        if with_v:
            p.add_argument("--v", type=int, help="truncation depth")

    p_sim = sub.add_parser("simulate", parents=[], help="generate a trajectory CSV")
    common(p_sim, with_v=False)
    p_sim.set_defaults(func=cmd_simulate)

    p_est = sub.add_parser("estimate", help="run the recursive estimator")
    common(p_est)
    p_est.add_argument(
        "--oracle",
        action="store_true",
        help="also solve the batch program and report the terminal gap",
    )
    p_est.set_defaults(func=cmd_estimate)

    p_ana = sub.add_parser("analyze", help="check assumptions and emit guarantees")
    common(p_ana)
    p_ana.set_defaults(func=cmd_analyze)

    p_rep = sub.add_parser(
        "repro-eeg", help="synthetic scenario across several truncation depths"
    )
    common(p_rep, with_v=False)
    p_rep.add_argument(
        "--v-list",
        default="2,10,20",
        help="comma-separated truncation depths (default 2,10,20)",
    )
    p_rep.set_defaults(func=cmd_repro_eeg)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except ModelError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, np.linalg.LinAlgError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except FrodestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
