"""Trajectory generation for fractional-order network models.

Ground truth is always produced from the full growing-memory recursion
(every available lag, no truncation).  The companion realization can be
driven separately, either to replicate the exact trajectory (when fed
the exact residual sequence) or as an approximate simulator in its own
right (when fed only the disturbance channel).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, ModelError
from .model import (
    ExpandedModel,
    FodnModel,
    NoiseBounds,
    VApprox,
    expand_model,
)

__all__ = [
    "Trajectory",
    "simulate_exact",
    "simulate_vapprox",
    "gen_bounded_noise",
    "synth_eeg_scenario",
    "write_trajectory_csv",
    "read_trajectory_csv",
]


@dataclass(frozen=True)
class Trajectory:
    """Aligned sample arrays for one run of length N.

    Attributes
    ----------
    states : numpy.ndarray
        (N+1, n); row k is x[k].
    inputs : numpy.ndarray
        (N, m); row k is u[k].
    disturbances : numpy.ndarray
        (N, p); row k is w[k].
    outputs : numpy.ndarray
        (N, q); row i is the measurement z[i+1].  Measurements start at
        step one, the initial state is never observed directly.
    meas_noise : numpy.ndarray or None
        (N, q); row i is the noise inside z[i+1].  None when unknown,
        e.g. for trajectories read back from disk.
    """

    states: np.ndarray
    inputs: np.ndarray
    disturbances: np.ndarray
    outputs: np.ndarray
    meas_noise: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        for name in ("states", "inputs", "disturbances", "outputs"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != 2:
                raise ModelError(f"{name} must be 2-D, got shape {arr.shape}")
            object.__setattr__(self, name, arr)
        if self.meas_noise is not None:
            object.__setattr__(
                self, "meas_noise", np.asarray(self.meas_noise, dtype=float)
            )
        steps = self.states.shape[0] - 1
        for name in ("inputs", "disturbances", "outputs"):
            if getattr(self, name).shape[0] != steps:
                raise ModelError(
                    f"{name} must have {steps} rows to match states, got "
                    f"{getattr(self, name).shape[0]}"
                )
        if self.meas_noise is not None and self.meas_noise.shape != self.outputs.shape:
            raise ModelError("meas_noise must match outputs in shape")

    @property
    def horizon(self) -> int:
        return self.states.shape[0] - 1


def _as_steps(name: str, arr, steps: int, width: int) -> np.ndarray:
    if arr is None:
        return np.zeros((steps, width))
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 1 and width == 1:
        arr = arr[:, None]
    if arr.shape != (steps, width):
        raise ModelError(f"{name} must have shape ({steps}, {width}), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ModelError(f"{name} contains non-finite entries")
    return arr


def simulate_exact(
    model: FodnModel,
    inputs,
    disturbances,
    x0,
    steps: int,
    meas_noise=None,
    expanded: Optional[ExpandedModel] = None,
) -> Trajectory:
    """Run the full-memory recursion for a number of steps.

    Parameters
    ----------
    model : FodnModel
    inputs : array_like or None
        u[0..N-1]; zeros when None.
    disturbances : array_like or None
        w[0..N-1]; zeros when None.
    x0 : array_like
        Initial state x[0].
    steps : int
        Horizon N >= 1.
    meas_noise : array_like or None
        Measurement noise v[1..N] as an (N, q) array; zeros when None.
    expanded : ExpandedModel, optional
        Reusable expansion; must reach lag N.  Expanded on demand when
        omitted.

    Returns
    -------
    Trajectory
    """
    steps = int(steps)
    if steps < 1:
        raise ConfigError(f"horizon must be >= 1, got {steps}")
    n, m, p, q = model.n, model.m, model.p, model.q
    u = _as_steps("inputs", inputs, steps, m)
    w = _as_steps("disturbances", disturbances, steps, p)
    vn = _as_steps("meas_noise", meas_noise, steps, q)
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape[0] != n:
        raise ModelError(f"x0 must have length {n}, got {x0.shape[0]}")

    if expanded is None:
        expanded = expand_model(model, steps)
    elif expanded.lag_horizon < steps:
        raise ModelError(
            f"expansion horizon {expanded.lag_horizon} too shallow for {steps} steps"
        )

    states = np.zeros((steps + 1, n))
    states[0] = x0
    for k in range(steps):
        nxt = np.einsum(
            "jab,jb->a", expanded.A_check[1 : k + 2], states[k::-1]
        )
        if m:
            nxt += np.einsum("jab,jb->a", expanded.B_check[: k + 1], u[k::-1])
        if p:
            nxt += np.einsum("jab,jb->a", expanded.G_check[: k + 1], w[k::-1])
        states[k + 1] = nxt

    outputs = states[1:] @ model.output_map.T + vn
    return Trajectory(
        states=states, inputs=u, disturbances=w, outputs=outputs, meas_noise=vn
    )


def simulate_vapprox(
    vapprox: VApprox,
    inputs,
    residuals,
    x0_tilde,
    meas_noise=None,
) -> Trajectory:
    """Iterate the companion realization under a given residual sequence.

    The horizon is the number of residual rows.  ``x0_tilde`` may be the
    full stacked vector or a bare initial state, which is lifted over
    zero history registers.

    Returns a Trajectory whose ``states`` are the stacked vectors and
    whose ``disturbances`` slot carries the residuals that drove them.
    """
    r = np.asarray(residuals, dtype=float)
    n, m = vapprox.layout.n, vapprox.layout.m
    if r.ndim != 2 or r.shape[1] != n:
        raise ModelError(f"residuals must be N x {n}, got shape {r.shape}")
    steps = r.shape[0]
    if steps < 1:
        raise ConfigError("at least one residual row is required")
    u = _as_steps("inputs", inputs, steps, m)
    vn = _as_steps("meas_noise", meas_noise, steps, vapprox.C.shape[0])

    x0_tilde = np.asarray(x0_tilde, dtype=float).reshape(-1)
    if x0_tilde.shape[0] == n and n != vapprox.dim:
        x0_tilde = vapprox.lift_initial_state(x0_tilde)
    if x0_tilde.shape[0] != vapprox.dim:
        raise ModelError(
            f"x0_tilde must have length {vapprox.dim} (or {n} to lift), "
            f"got {x0_tilde.shape[0]}"
        )

    states = np.zeros((steps + 1, vapprox.dim))
    states[0] = x0_tilde
    for k in range(steps):
        states[k + 1] = (
            vapprox.A_tilde @ states[k] + vapprox.B_tilde @ u[k] + vapprox.G_tilde @ r[k]
        )
    outputs = states[1:] @ vapprox.C.T + vn
    return Trajectory(
        states=states, inputs=u, disturbances=r, outputs=outputs, meas_noise=vn
    )


def gen_bounded_noise(bounds: NoiseBounds, dims, steps: int, seed) -> tuple:
    """Draw disturbance and measurement noise uniformly inside norm balls.

    Each sample is an independent uniform draw from the closed Euclidean
    ball of the corresponding radius: a standard normal direction is
    normalized and scaled by ``radius * U**(1/dim)``.  Disturbances are
    drawn before measurement noise from a single generator, so one seed
    fixes both.

    Parameters
    ----------
    bounds : NoiseBounds
    dims : tuple
        (p, q) sample widths.
    steps : int
        Number of samples of each kind.
    seed : int or numpy.random.Generator

    Returns
    -------
    (numpy.ndarray, numpy.ndarray)
        w of shape (steps, p) and v of shape (steps, q).
    """
    p, q = int(dims[0]), int(dims[1])
    steps = int(steps)
    if steps < 0 or p < 0 or q < 0:
        raise ConfigError("noise dimensions and horizon must be nonnegative")
    rng = np.random.default_rng(seed)

    def ball(radius: float, dim: int) -> np.ndarray:
        if dim == 0:
            return np.zeros((steps, 0))
        out = np.zeros((steps, dim))
        if radius == 0.0:
            return out
        direction = rng.standard_normal((steps, dim))
        norms = np.linalg.norm(direction, axis=1)
        radii = radius * rng.uniform(size=steps) ** (1.0 / dim)
        ok = norms > 0
        out[ok] = direction[ok] * (radii[ok] / norms[ok])[:, None]
        return out

    return ball(bounds.b_w, p), ball(bounds.b_v, q)


def synth_eeg_scenario(seed, n_channels: int = 4, steps: int = 150):
    """Build and run a small EEG-like network with per-channel orders.

    Each channel carries its own fractional difference order drawn from
    [0.4, 1.1]; channels are coupled through a weak random matrix with a
    stabilizing diagonal shift, encoded with an order-1/order-0 matrix
    pair so the coupling acts on the previous step.  A single shared
    input feeds every channel through a column of ones, the disturbance
    enters every channel, and all channels are measured.

    Parameters
    ----------
    seed : int or numpy.random.Generator
    n_channels : int
    steps : int

    Returns
    -------
    (FodnModel, Trajectory)
    """
    n = int(n_channels)
    steps = int(steps)
    if n < 1 or steps < 1:
        raise ConfigError("n_channels and steps must be positive")
    rng = np.random.default_rng(seed)

    orders = rng.uniform(0.4, 1.1, size=n)
    coupling = rng.uniform(-0.08, 0.08, size=(n, n))
    np.fill_diagonal(coupling, coupling.diagonal() - 0.2)

    state_terms = [(np.outer(e, e), orders[i]) for i, e in enumerate(np.eye(n))]
    # the (coupling, 1) / (-coupling, 0) pair contributes exactly
    # coupling @ x[k] to the explicit update and nothing at other lags
    state_terms.append((coupling, 1.0))
    state_terms.append((-coupling, 0.0))

    b_order = rng.uniform(0.4, 1.1)
    g_order = rng.uniform(0.4, 1.1)
    model = FodnModel(
        state_terms=state_terms,
        input_terms=[(np.ones((n, 1)), b_order)],
        disturbance_terms=[(np.eye(n), g_order)],
        output_map=np.eye(n),
    )

    phase = rng.uniform(0.0, 2.0 * np.pi)
    k_grid = np.arange(steps)
    u = 0.6 * np.sin(2.0 * np.pi * k_grid / 40.0 + phase)[:, None]

    bounds = NoiseBounds(b_w=0.05, b_v=0.1)
    w, vn = gen_bounded_noise(bounds, (n, n), steps, rng)

    x0 = rng.uniform(-0.5, 0.5, size=n)
    traj = simulate_exact(model, u, w, x0, steps, meas_noise=vn)
    return model, traj


def _fmt(value: float) -> str:
    return repr(float(value))


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """Write a trajectory to CSV with full float precision.

    Columns are k, x_1.., u_1.., w_1.., z_1..; the final row has empty
    input and disturbance cells (those run one step shorter) and the
    first row has empty measurement cells (measurements start at one).
    """
    n = traj.states.shape[1]
    m = traj.inputs.shape[1]
    p = traj.disturbances.shape[1]
    q = traj.outputs.shape[1]
    steps = traj.horizon
    header = (
        ["k"]
        + [f"x_{i + 1}" for i in range(n)]
        + [f"u_{i + 1}" for i in range(m)]
        + [f"w_{i + 1}" for i in range(p)]
        + [f"z_{i + 1}" for i in range(q)]
    )
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(steps + 1):
            row = [str(k)]
            row += [_fmt(v) for v in traj.states[k]]
            if k < steps:
                row += [_fmt(v) for v in traj.inputs[k]]
                row += [_fmt(v) for v in traj.disturbances[k]]
            else:
                row += [""] * (m + p)
            if k >= 1:
                row += [_fmt(v) for v in traj.outputs[k - 1]]
            else:
                row += [""] * q
            writer.writerow(row)


def _count_prefixed(header, prefix: str) -> int:
    return sum(1 for name in header if name.startswith(prefix))


def read_trajectory_csv(path) -> Trajectory:
    """Read a trajectory CSV written by `write_trajectory_csv`."""
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ModelError(f"cannot read trajectory file {path}: {exc}")
    if not rows or rows[0][:1] != ["k"]:
        raise ModelError(f"trajectory file {path} lacks the expected header")
    header = rows[0]
    n = _count_prefixed(header, "x_")
    m = _count_prefixed(header, "u_")
    p = _count_prefixed(header, "w_")
    q = _count_prefixed(header, "z_")
    if len(header) != 1 + n + m + p + q:
        raise ModelError(f"trajectory header of {path} has unrecognized columns")
    body = rows[1:]
    steps = len(body) - 1
    if steps < 0:
        raise ModelError(f"trajectory file {path} has no data rows")

    states = np.zeros((steps + 1, n))
    inputs = np.zeros((steps, m))
    dists = np.zeros((steps, p))
    outputs = np.zeros((steps, q))
    for k, row in enumerate(body):
        if len(row) != len(header):
            raise ModelError(f"row {k} of {path} has {len(row)} cells")
        if int(row[0]) != k:
            raise ModelError(f"row {k} of {path} is labeled {row[0]}")
        cells = row[1:]
        states[k] = [float(c) for c in cells[:n]]
        if k < steps:
            inputs[k] = [float(c) for c in cells[n : n + m]]
            dists[k] = [float(c) for c in cells[n + m : n + m + p]]
        if k >= 1:
            outputs[k - 1] = [float(c) for c in cells[n + m + p :]]
    return Trajectory(
        states=states, inputs=inputs, disturbances=dists, outputs=outputs
    )
