"""Minimum-energy state estimation for the companion realization.

Two routes to the same estimate:

* `me_run` / `me_step`: the recursive form.  Each step propagates the
  weighting matrix P through a prediction/correction pair (correction
  stored in Joseph form) and updates the estimate with the optimal gain.
* `batch_wls_oracle`: the underlying weighted least-squares program
  solved directly over the whole window, minimizing the energy of the
  residual and measurement noise sequences plus the initial deviation.
  It is the reference the recursion is checked against.

For positive definite weights both produce identical terminal
estimates; the recursion is the O(N) version.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import ConfigError, NumericError
from .model import VApprox

__all__ = [
    "EstimatorConfig",
    "EstimatorState",
    "me_step",
    "me_run",
    "batch_wls_oracle",
    "write_estimation_csv",
]

_SYM_RTOL = 1e-12
_ASYM_GUARD = 1e-9


def _check_weight(name: str, mat: np.ndarray, size: Optional[int] = None) -> np.ndarray:
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ConfigError(f"{name} must be a square matrix, got shape {mat.shape}")
    if size is not None and mat.shape[0] != size:
        raise ConfigError(f"{name} must be {size} x {size}, got {mat.shape[0]}")
    if not np.all(np.isfinite(mat)):
        raise ConfigError(f"{name} contains non-finite entries")
    scale = max(1.0, float(np.linalg.norm(mat)))
    if np.linalg.norm(mat - mat.T) > _SYM_RTOL * scale:
        raise ConfigError(f"{name} is not symmetric within {_SYM_RTOL}")
    if np.linalg.eigvalsh(mat)[0] <= 0.0:
        raise ConfigError(f"{name} is not positive definite")
    return mat


def _normalize_weight(name: str, value):
    """Return either one validated matrix or a tuple of them."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 2:
        return _check_weight(name, arr)
    if arr.ndim == 3:
        return tuple(_check_weight(f"{name}[{i}]", w) for i, w in enumerate(arr))
    if isinstance(value, (list, tuple)):
        return tuple(
            _check_weight(f"{name}[{i}]", np.asarray(w, dtype=float))
            for i, w in enumerate(value)
        )
    raise ConfigError(f"{name} must be a matrix or a sequence of matrices")


@dataclass(frozen=True)
class EstimatorConfig:
    """Weights and prior for one estimation run.

    Q weights the residual sequence (indexed from step 0), R the
    measurement noise (indexed from step 1), P0 the deviation from the
    prior estimate ``x0_hat`` of the stacked initial state.  Q and R may
    be single matrices (held constant) or per-step sequences.
    """

    Q: object
    R: object
    P0: np.ndarray
    x0_hat: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "Q", _normalize_weight("Q", self.Q))
        object.__setattr__(self, "R", _normalize_weight("R", self.R))
        object.__setattr__(self, "P0", _check_weight("P0", self.P0))
        x0 = np.asarray(self.x0_hat, dtype=float).reshape(-1)
        if not np.all(np.isfinite(x0)):
            raise ConfigError("x0_hat contains non-finite entries")
        if x0.shape[0] != self.P0.shape[0]:
            raise ConfigError(
                f"x0_hat length {x0.shape[0]} does not match P0 size {self.P0.shape[0]}"
            )
        object.__setattr__(self, "x0_hat", x0)

    @property
    def time_invariant(self) -> bool:
        return isinstance(self.Q, np.ndarray) and isinstance(self.R, np.ndarray)

    def Q_at(self, k: int) -> np.ndarray:
        """Residual weight for step k >= 0."""
        if isinstance(self.Q, np.ndarray):
            return self.Q
        if not 0 <= k < len(self.Q):
            raise ConfigError(f"Q sequence has no entry for step {k}")
        return self.Q[k]

    def R_at(self, k: int) -> np.ndarray:
        """Measurement weight for step k >= 1."""
        if isinstance(self.R, np.ndarray):
            return self.R
        if not 1 <= k <= len(self.R):
            raise ConfigError(f"R sequence has no entry for step {k}")
        return self.R[k - 1]


@dataclass(frozen=True)
class EstimatorState:
    """Filter state after absorbing measurements up to step k.

    ``gain`` and ``M`` are the gain and pre-correction weighting that
    produced this state; both are None at k = 0.
    """

    k: int
    x_hat: np.ndarray
    P: np.ndarray
    gain: Optional[np.ndarray] = None
    M: Optional[np.ndarray] = None


def me_step(
    state: EstimatorState,
    u_k,
    y_next,
    C_next: np.ndarray,
    Q_k: np.ndarray,
    R_next: np.ndarray,
    vapprox: VApprox,
) -> EstimatorState:
    """Advance the recursive estimator by one step.

    Propagates through the companion dynamics, then corrects with the
    measurement at the next step.  The weighting update is stored in
    Joseph form, which keeps it symmetric for any gain.

    Raises
    ------
    NumericError
        If the innovation Gramian C M C' + R cannot be factorized, or
        the updated weighting loses symmetry beyond roundoff levels.
    """
    a, b, g, d = vapprox.A_tilde, vapprox.B_tilde, vapprox.G_tilde, vapprox.dim
    u_k = np.zeros(b.shape[1]) if u_k is None else np.asarray(u_k, dtype=float).reshape(-1)
    y_next = np.asarray(y_next, dtype=float).reshape(-1)
    C_next = np.asarray(C_next, dtype=float)
    if C_next.ndim != 2 or C_next.shape[1] != d:
        raise ConfigError(f"C must be q x {d}, got shape {C_next.shape}")
    if y_next.shape[0] != C_next.shape[0]:
        raise ConfigError(
            f"measurement length {y_next.shape[0]} does not match C rows {C_next.shape[0]}"
        )

    x_pred = a @ state.x_hat + b @ u_k
    m_next = a @ state.P @ a.T + g @ Q_k @ g.T
    m_next = 0.5 * (m_next + m_next.T)

    s = C_next @ m_next @ C_next.T + R_next
    try:
        s_fac = scipy.linalg.cho_factor(0.5 * (s + s.T), lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise NumericError(
            f"innovation Gramian is not positive definite at step {state.k + 1}: {exc}"
        )
    gain = scipy.linalg.cho_solve(s_fac, C_next @ m_next).T

    closed = np.eye(d) - gain @ C_next
    p_next = closed @ m_next @ closed.T + gain @ R_next @ gain.T
    asym = np.linalg.norm(p_next - p_next.T)
    if asym > _ASYM_GUARD * max(1.0, np.linalg.norm(p_next)):
        raise NumericError(
            f"weighting update lost symmetry at step {state.k + 1} "
            f"(asymmetry {asym:.3e})"
        )
    p_next = 0.5 * (p_next + p_next.T)

    x_next = x_pred + gain @ (y_next - C_next @ x_pred)
    return EstimatorState(
        k=state.k + 1, x_hat=x_next, P=p_next, gain=gain, M=m_next
    )


def me_run(
    vapprox: VApprox,
    config: EstimatorConfig,
    inputs,
    measurements,
) -> list:
    """Run the recursive estimator over a measurement record.

    Parameters
    ----------
    vapprox : VApprox
    config : EstimatorConfig
        P0 and x0_hat must match the stacked dimension.
    inputs : array_like or None
        u[0..N-1]; zeros when None.
    measurements : array_like
        y[1..N], one row per step; N may be zero.

    Returns
    -------
    list of EstimatorState
        States 0..N in order.
    """
    d, q = vapprox.dim, vapprox.C.shape[0]
    n = vapprox.layout.n
    y = np.asarray(measurements, dtype=float)
    if y.size == 0:
        y = y.reshape(0, q)
    if y.ndim != 2 or y.shape[1] != q:
        raise ConfigError(f"measurements must be N x {q}, got shape {y.shape}")
    steps = y.shape[0]
    m = vapprox.B_tilde.shape[1]
    u = np.zeros((steps, m)) if inputs is None else np.asarray(inputs, dtype=float)
    if u.ndim == 1 and m == 1:
        u = u[:, None]
    if u.shape != (steps, m):
        raise ConfigError(f"inputs must be {steps} x {m}, got shape {u.shape}")
    if config.P0.shape[0] != d:
        raise ConfigError(f"P0 must be {d} x {d} for this realization")
    if steps:
        _check_weight("Q", config.Q_at(0), n)
        _check_weight("R", config.R_at(1), q)

    states = [EstimatorState(k=0, x_hat=config.x0_hat.copy(), P=config.P0.copy())]
    for k in range(steps):
        states.append(
            me_step(
                states[-1],
                u[k],
                y[k],
                vapprox.C,
                config.Q_at(k),
                config.R_at(k + 1),
                vapprox,
            )
        )
    return states


def batch_wls_oracle(
    vapprox: VApprox,
    config: EstimatorConfig,
    inputs,
    measurements,
    steps: Optional[int] = None,
    return_states: bool = False,
):
    """Solve the windowed estimation program directly as stacked least squares.

    Decision variables are the stacked initial state and the residual
    sequence; interior states are eliminated through the dynamics.  The
    rows are weighted by inverse Cholesky factors of P0, Q and R, so the
    squared residual norm of the solution equals the program cost.

    Parameters
    ----------
    vapprox, config, inputs, measurements
        As in `me_run`.
    steps : int, optional
        Window length N; defaults to the number of measurement rows.
    return_states : bool
        Also return the full smoothed state sequence (the recursion
        never exposes interior estimates; this solver can).

    Returns
    -------
    (x_N, cost) or (x_N, cost, states)

    Raises
    ------
    NumericError
        If the stacked system is rank deficient.  It never is for
        positive definite weights; a deficiency indicates a broken
        caller-supplied weighting and is reported, not patched.
    """
    d, q = vapprox.dim, vapprox.C.shape[0]
    n = vapprox.layout.n
    m = vapprox.B_tilde.shape[1]
    y = np.asarray(measurements, dtype=float)
    if y.size == 0:
        y = y.reshape(0, q)
    if y.ndim != 2 or y.shape[1] != q:
        raise ConfigError(f"measurements must be N x {q}, got shape {y.shape}")
    if steps is None:
        steps = y.shape[0]
    steps = int(steps)
    if steps < 1:
        raise ConfigError(f"window length must be >= 1, got {steps}")
    if y.shape[0] < steps:
        raise ConfigError(f"need {steps} measurement rows, got {y.shape[0]}")
    u = np.zeros((steps, m)) if inputs is None else np.asarray(inputs, dtype=float)
    if u.ndim == 1 and m == 1:
        u = u[:, None]
    if u.shape[0] < steps or u.shape[1] != m:
        raise ConfigError(f"inputs must cover {steps} steps with width {m}")
    if config.P0.shape[0] != d:
        raise ConfigError(f"P0 must be {d} x {d} for this realization")

    a, b, g = vapprox.A_tilde, vapprox.B_tilde, vapprox.G_tilde

    powers = [np.eye(d)]
    for _ in range(steps):
        powers.append(a @ powers[-1])

    # driven part of x_k with zero initial state and zero residuals
    drift = [np.zeros(d)]
    for k in range(steps):
        drift.append(a @ drift[-1] + b @ u[k])

    def inv_chol(name, w, size):
        w = _check_weight(name, w, size)
        return scipy.linalg.solve_triangular(
            scipy.linalg.cholesky(w, lower=True), np.eye(size), lower=True
        )

    n_cols = d + steps * n
    n_rows = d + steps * n + steps * q
    h = np.zeros((n_rows, n_cols))
    rhs = np.zeros(n_rows)

    f0 = inv_chol("P0", config.P0, d)
    h[:d, :d] = f0
    rhs[:d] = f0 @ config.x0_hat
    row = d
    for i in range(steps):
        fq = inv_chol(f"Q[{i}]", config.Q_at(i), n)
        h[row : row + n, d + i * n : d + (i + 1) * n] = fq
        row += n
    for k in range(1, steps + 1):
        fr = inv_chol(f"R[{k}]", config.R_at(k), q)
        c = vapprox.C
        h[row : row + q, :d] = fr @ (c @ powers[k])
        for i in range(k):
            h[row : row + q, d + i * n : d + (i + 1) * n] = fr @ (
                c @ (powers[k - 1 - i] @ g)
            )
        rhs[row : row + q] = fr @ (y[k - 1] - c @ drift[k])
        row += q

    theta, _, rank, _ = scipy.linalg.lstsq(h, rhs)
    if rank < n_cols:
        raise NumericError(
            f"stacked least-squares system is rank deficient ({rank} < {n_cols}); "
            "the supplied weights do not determine a unique trajectory"
        )
    cost = float(np.sum((h @ theta - rhs) ** 2))

    x_bar = theta[:d]
    residuals = theta[d:].reshape(steps, n)
    trajectory = np.zeros((steps + 1, d))
    trajectory[0] = x_bar
    for k in range(steps):
        trajectory[k + 1] = a @ trajectory[k] + b @ u[k] + g @ residuals[k]
    if return_states:
        return trajectory[steps], cost, trajectory
    return trajectory[steps], cost


def write_estimation_csv(path, states, measurements, C, true_states=None) -> None:
    """Write per-step estimates alongside measurements and errors.

    Columns: k, the stacked estimate, the measurement, the predicted
    measurement, an error norm and the trace of the weighting matrix.
    The error column compares the leading estimate block against
    ``true_states`` rows when provided, and otherwise falls back to the
    measurement prediction error.
    """
    y = np.asarray(measurements, dtype=float)
    c = np.asarray(C, dtype=float)
    d = states[0].x_hat.shape[0]
    q = c.shape[0]
    truth = None if true_states is None else np.asarray(true_states, dtype=float)
    header = (
        ["k"]
        + [f"xhat_{i + 1}" for i in range(d)]
        + [f"y_{i + 1}" for i in range(q)]
        + [f"yhat_{i + 1}" for i in range(q)]
        + ["err_norm", "trace_P"]
    )
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for state in states:
            k = state.k
            row = [str(k)] + [repr(float(v)) for v in state.x_hat]
            y_hat = c @ state.x_hat
            if k >= 1:
                row += [repr(float(v)) for v in y[k - 1]]
                row += [repr(float(v)) for v in y_hat]
            else:
                row += [""] * (2 * q)
            if truth is not None:
                width = min(truth.shape[1], d)
                err = float(np.linalg.norm(state.x_hat[:width] - truth[k, :width]))
                row.append(repr(err))
            elif k >= 1:
                row.append(repr(float(np.linalg.norm(y[k - 1] - y_hat))))
            else:
                row.append("")
            row.append(repr(float(np.trace(state.P))))
            writer.writerow(row)
