"""Certification of the estimator: assumption checks and guarantees.

`check_assumptions` measures the spectral constants of a companion
realization and searches for the smallest controllability and
observability windows.  When every assumption holds,
`covariance_bounds` produces uniform lower and upper bounds on the
eigenvalues of the filter weighting matrix, and `iss_constants`
converts those into an input-to-state stability envelope for the
estimation error: a geometrically decaying term plus gains on the
residual and measurement-noise magnitudes.

The bounds follow conservative backward recursions evaluated once,
which is exact here because every supported scenario is
time-invariant.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import json
import math
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import ConfigError, GuaranteeUnavailableError
from .estimator import EstimatorConfig
from .model import COND_LIMIT, VApprox

__all__ = [
    "AssumptionReport",
    "GuaranteeBundle",
    "state_transition",
    "controllability_gramian",
    "observability_gramian",
    "check_assumptions",
    "covariance_bounds",
    "iss_constants",
    "write_analysis_json",
]

# Relative eigenvalue floor separating "positive definite" from noise.
PD_TOL = 1e-10
DEFAULT_WINDOW_CAP = 64
# Bisection target and resolution for the contraction margin search.
ETA_TARGET = 0.99
EPS3_RESOLUTION = 1e-6


def _pd_floor(scale: float) -> float:
    return PD_TOL * max(1.0, scale)


def state_transition(a_tilde: np.ndarray, k: int, k0: int) -> np.ndarray:
    """Transition matrix over [k0, k], i.e. the (k - k0)-th power."""
    if k < k0:
        raise ConfigError(f"need k >= k0, got k={k}, k0={k0}")
    a = np.asarray(a_tilde, dtype=float)
    return np.linalg.matrix_power(a, k - k0)


def controllability_gramian(
    a_tilde: np.ndarray, g_tilde: np.ndarray, k0: int, k: int
) -> np.ndarray:
    """Disturbance-channel reachability Gramian over (k0, k].

    Sum over j = 0 .. k-k0-1 of A^j G G' (A^j)'.
    """
    if k <= k0:
        raise ConfigError(f"window must be nonempty, got k0={k0}, k={k}")
    a = np.asarray(a_tilde, dtype=float)
    g = np.asarray(g_tilde, dtype=float)
    ggt = g @ g.T
    w = np.zeros_like(ggt)
    t = np.eye(a.shape[0])
    for _ in range(k - k0):
        w += t @ ggt @ t.T
        t = a @ t
    return 0.5 * (w + w.T)


def _output_at(c_seq, i: int) -> np.ndarray:
    if isinstance(c_seq, np.ndarray) and c_seq.ndim == 2:
        return c_seq
    try:
        return np.asarray(c_seq[i], dtype=float)
    except (IndexError, TypeError) as exc:
        raise ConfigError(f"no output map available for step {i}: {exc}")


def observability_gramian(a_tilde: np.ndarray, c_seq, k0: int, k: int) -> np.ndarray:
    """Observability Gramian over (k0, k].

    Sum over i = k0+1 .. k of (A^{i-k0})' C_i' C_i A^{i-k0}; a constant
    matrix or a per-step sequence of output maps is accepted.  Note the
    powers start at one: the window's first usable measurement is the
    one taken after the initial step.
    """
    if k <= k0:
        raise ConfigError(f"window must be nonempty, got k0={k0}, k={k}")
    a = np.asarray(a_tilde, dtype=float)
    if isinstance(c_seq, (list, tuple)) or (
        isinstance(c_seq, np.ndarray) and c_seq.ndim == 3
    ):
        pass
    else:
        c_seq = np.asarray(c_seq, dtype=float)
    w = np.zeros_like(a)
    t = np.eye(a.shape[0])
    for i in range(k0 + 1, k + 1):
        t = a @ t
        c = _output_at(c_seq, i)
        w += t.T @ (c.T @ c) @ t
    return 0.5 * (w + w.T)


def _containment_factor(a: np.ndarray, b: np.ndarray) -> float:
    """Largest eps >= 0 such that a - eps * b is positive semidefinite.

    Both arguments must be symmetric positive semidefinite.  When b is
    singular the problem is reduced to the range of b through a Schur
    complement; a zero b makes every eps feasible and yields inf.
    """
    lam, vec = np.linalg.eigh(0.5 * (b + b.T))
    cut = _pd_floor(lam[-1] if lam.size else 0.0)
    pos = lam > cut
    if not np.any(pos):
        return math.inf
    if np.all(pos):
        vals = scipy.linalg.eigh(0.5 * (a + a.T), 0.5 * (b + b.T), eigvals_only=True)
        return max(0.0, float(vals[0]))
    v1 = vec[:, pos]
    v0 = vec[:, ~pos]
    a11 = v1.T @ a @ v1
    a10 = v1.T @ a @ v0
    a00 = v0.T @ a @ v0
    schur = a11 - a10 @ np.linalg.pinv(a00) @ a10.T
    scale = 1.0 / np.sqrt(lam[pos])
    m = scale[:, None] * schur * scale[None, :]
    vals = np.linalg.eigvalsh(0.5 * (m + m.T))
    return max(0.0, float(vals[0]))


@dataclass(frozen=True)
class AssumptionReport:
    """Measured constants and window sizes for one realization.

    ``satisfied`` maps each named assumption to a boolean; the report
    keeps references to the analyzed realization and weights so the
    guarantee computations can pick up where the check left off.
    """

    alpha_lo: float
    alpha_hi: float
    beta: float
    gamma: float
    theta_lo: float
    theta_hi: float
    rho_lo: float
    rho_hi: float
    N_c: Optional[int]
    delta: float
    N_o: Optional[int]
    epsilon: float
    a_invertible: bool
    window_cap: int
    satisfied: dict
    vapprox: VApprox = field(repr=False)
    config: EstimatorConfig = field(repr=False)

    @property
    def all_satisfied(self) -> bool:
        return all(self.satisfied.values())

    def failing(self) -> list:
        return [name for name, ok in self.satisfied.items() if not ok]


def check_assumptions(
    vapprox: VApprox,
    config: EstimatorConfig,
    window_cap: int = DEFAULT_WINDOW_CAP,
) -> AssumptionReport:
    """Measure every constant the guarantees depend on.

    Nothing is thrown for an unsatisfiable assumption; the report says
    what failed and downstream guarantee calls refuse to proceed.

    Parameters
    ----------
    vapprox : VApprox
    config : EstimatorConfig
        Weight spectra enter the constants; sequences are scanned for
        their extreme eigenvalues.
    window_cap : int
        Largest window tried in the controllability and observability
        searches.
    """
    if window_cap < 1:
        raise ConfigError(f"window cap must be >= 1, got {window_cap}")
    a, g, c = vapprox.A_tilde, vapprox.G_tilde, vapprox.C

    sv_a = np.linalg.svd(a, compute_uv=False)
    alpha_lo, alpha_hi = float(sv_a[-1] ** 2), float(sv_a[0] ** 2)
    beta = float(np.linalg.svd(g, compute_uv=False)[0] ** 2) if g.size else 0.0
    gamma = float(np.linalg.svd(c, compute_uv=False)[0] ** 2)

    def spectrum(weight):
        mats = [weight] if isinstance(weight, np.ndarray) else list(weight)
        lo = min(float(np.linalg.eigvalsh(w)[0]) for w in mats)
        hi = max(float(np.linalg.eigvalsh(w)[-1]) for w in mats)
        return lo, hi

    theta_lo, theta_hi = spectrum(config.Q)
    rho_lo, rho_hi = spectrum(config.R)

    ggt = g @ g.T
    ctc = c.T @ c
    n_c, delta = None, 0.0
    w_c = np.zeros_like(a)
    t = np.eye(a.shape[0])
    for window in range(1, window_cap + 1):
        w_c += t @ ggt @ t.T
        t = a @ t
        evals = np.linalg.eigvalsh(0.5 * (w_c + w_c.T))
        if evals[0] > _pd_floor(evals[-1]):
            n_c, delta = window, float(evals[0])
            break

    n_o, epsilon = None, 0.0
    w_o = np.zeros_like(a)
    t = np.eye(a.shape[0])
    for window in range(1, window_cap + 1):
        t = a @ t
        w_o += t.T @ ctc @ t
        phi_gram = t.T @ t
        eps = _containment_factor(0.5 * (w_o + w_o.T), phi_gram)
        # eps is a ratio of the two Gramian scales, so its positivity
        # threshold lives on that ratio scale
        top_w = max(float(np.linalg.eigvalsh(w_o)[-1]), 0.0)
        top_phi = max(float(np.linalg.eigvalsh(phi_gram)[-1]), PD_TOL)
        if eps > _pd_floor(top_w / top_phi):
            n_o, epsilon = window, float(eps)
            break

    satisfied = {
        "state_matrix_sum_invertible": bool(
            np.isfinite(vapprox.a0_condition) and vapprox.a0_condition < COND_LIMIT
        ),
        "transition_spectrum": alpha_lo > _pd_floor(alpha_hi),
        "uniform_controllability": n_c is not None,
        "uniform_observability": n_o is not None,
        "weight_spectrum": theta_lo > 0.0 and rho_lo > 0.0,
    }
    return AssumptionReport(
        alpha_lo=alpha_lo,
        alpha_hi=alpha_hi,
        beta=beta,
        gamma=gamma,
        theta_lo=theta_lo,
        theta_hi=theta_hi,
        rho_lo=rho_lo,
        rho_hi=rho_hi,
        N_c=n_c,
        delta=delta,
        N_o=n_o,
        epsilon=epsilon,
        a_invertible=satisfied["state_matrix_sum_invertible"],
        window_cap=int(window_cap),
        satisfied=satisfied,
        vapprox=vapprox,
        config=config,
    )


def _require_certifiable(report: AssumptionReport) -> None:
    if not report.all_satisfied:
        raise GuaranteeUnavailableError(
            "guarantees require every assumption to hold; failing: "
            + ", ".join(report.failing())
        )
    if not report.config.time_invariant:
        raise GuaranteeUnavailableError(
            "guarantee recursions are evaluated once and need constant Q and R"
        )
    if not np.isfinite(report.epsilon):
        raise GuaranteeUnavailableError(
            "observability containment factor is degenerate"
        )


def covariance_bounds(report: AssumptionReport) -> tuple:
    """Uniform eigenvalue bounds (pi_lo, pi_hi) on the filter weighting.

    Both come from conservative backward recursions over one window:
    the lower bound discounts the reachability of the residual channel,
    the upper bound discounts the information added by measurements.
    Valid for every step k >= max(N_c, N_o).
    """
    _require_certifiable(report)
    vapprox, config = report.vapprox, report.config
    a, g, c = vapprox.A_tilde, vapprox.G_tilde, vapprox.C
    a_inv = np.linalg.inv(a)
    gqg = g @ config.Q_at(0) @ g.T

    beta1 = report.gamma / report.rho_lo
    lam = np.zeros_like(a)
    prod1 = 1.0
    for _ in range(report.N_c):
        alpha1 = 1.0 / (1.0 + beta1 * max(float(np.linalg.eigvalsh(lam)[-1]), 0.0))
        lam = a_inv @ (gqg + alpha1 * lam) @ a_inv.T
        lam = 0.5 * (lam + lam.T)
        prod1 *= alpha1
    gamma1 = report.theta_lo * prod1
    geo_lo = sum((2.0 / report.alpha_lo) ** i for i in range(report.N_c))
    pi_lo = 1.0 / (2.0 ** report.N_c / (gamma1 * report.delta) + 2.0 * beta1 * geo_lo)

    beta2 = report.beta * report.theta_hi
    ctrc = c.T @ np.linalg.solve(config.R_at(1), c)
    ctrc = 0.5 * (ctrc + ctrc.T)
    psi = np.zeros_like(a)
    prod2 = 1.0
    for _ in range(report.N_o):
        z = ctrc + psi
        z_top = max(float(np.linalg.eigvalsh(z)[-1]), 0.0)
        alpha2 = 1.0 / (1.0 + beta2 * z_top**2)
        psi = alpha2 * (a.T @ z @ z @ a)
        psi = 0.5 * (psi + psi.T)
        prod2 *= alpha2
    gamma2 = prod2 / report.rho_hi
    geo_hi = sum((2.0 * report.alpha_hi) ** i for i in range(report.N_o))
    pi_hi = 2.0 ** report.N_o / (gamma2 * report.epsilon) + 2.0 * beta2 * geo_hi

    return float(pi_lo), float(pi_hi)


@dataclass(frozen=True)
class GuaranteeBundle:
    """Certified constants: weighting bounds plus the error envelope.

    The estimation error against the finite-memory reference obeys

        ||e[k]|| <= max(sigma * tau**(k - k0) * ||e[k0]||,
                        chi * sup ||r||, psi * sup ||v||)

    for k >= k0 >= max(N_c, N_o), with tau < 1.
    """

    pi_lo: float
    pi_hi: float
    eps3: float
    eta3: float
    gamma3: float
    sigma: float
    tau: float
    chi: float
    psi: float

    def envelope(self, e0_norm: float, steps_since: int, r_sup: float, v_sup: float) -> float:
        """Evaluate the error bound ``steps_since`` steps after anchoring."""
        return max(
            self.sigma * self.tau**steps_since * e0_norm,
            self.chi * r_sup,
            self.psi * v_sup,
        )


def iss_constants(
    report: AssumptionReport,
    pi_lo: float,
    pi_hi: float,
    eps3: Optional[float] = None,
) -> GuaranteeBundle:
    """Derive the decay and gain constants of the error envelope.

    Parameters
    ----------
    report : AssumptionReport
        Must have every assumption satisfied.
    pi_lo, pi_hi : float
        Output of `covariance_bounds` for the same report.
    eps3 : float, optional
        Margin trading decay speed against gain size.  When omitted,
        the largest margin in (0, 1] keeping the contraction factor at
        or under 0.99 is found by bisection.

    Raises
    ------
    GuaranteeUnavailableError
        If no margin yields a contraction factor below one, or an
        explicit margin makes the bound vacuous.
    """
    _require_certifiable(report)
    if not (pi_lo > 0.0 and pi_hi > 0.0 and pi_lo <= pi_hi):
        raise ConfigError(f"invalid weighting bounds ({pi_lo}, {pi_hi})")
    vapprox, config = report.vapprox, report.config
    a, g = vapprox.A_tilde, vapprox.G_tilde
    a_inv = np.linalg.inv(a)
    gqg = g @ config.Q_at(0) @ g.T
    n_c = report.N_c

    sig = np.zeros_like(a)
    prod3 = 1.0
    for _ in range(n_c):
        s_top = max(float(np.linalg.eigvalsh(sig)[-1]), 0.0)
        prod3 *= 1.0 / (1.0 + s_top / pi_lo)
        sig = a_inv @ (gqg + sig) @ a_inv.T
        sig = 0.5 * (sig + sig.T)
    gamma3 = prod3 / 2.0**n_c

    fill = (
        gamma3
        * report.theta_lo
        * report.delta
        / (report.theta_lo * report.delta + report.alpha_hi**n_c * pi_hi)
    )
    base = 1.0 - fill

    def eta_of(margin: float) -> float:
        return base * (1.0 + margin) ** n_c

    if eps3 is not None:
        eps3 = float(eps3)
        if eps3 <= 0.0:
            raise ConfigError(f"margin must be positive, got {eps3}")
        eta3 = eta_of(eps3)
        if eta3 >= 1.0:
            raise GuaranteeUnavailableError(
                f"explicit margin {eps3} gives contraction factor {eta3:.6f} >= 1; "
                "the decay bound is vacuous"
            )
    else:
        if base >= ETA_TARGET:
            raise GuaranteeUnavailableError(
                f"no margin can reach contraction target {ETA_TARGET}: "
                f"already {base:.6f} with a zero margin"
            )
        if eta_of(1.0) <= ETA_TARGET:
            eps3 = 1.0
        else:
            lo, hi = 0.0, 1.0
            while hi - lo > EPS3_RESOLUTION:
                mid = 0.5 * (lo + hi)
                if eta_of(mid) <= ETA_TARGET:
                    lo = mid
                else:
                    hi = mid
            eps3 = lo
        if eps3 <= 0.0:
            raise GuaranteeUnavailableError(
                "contraction margin collapsed below the search resolution"
            )
        eta3 = eta_of(eps3)

    grow = (1.0 + eps3) ** n_c
    sigma = math.sqrt(3.0 * pi_hi / pi_lo) * (grow / eta3) ** ((n_c - 1) / (2.0 * n_c))
    tau = eta3 ** (1.0 / (2.0 * n_c))
    chi = math.sqrt(
        3.0 * pi_hi * n_c * grow / (eps3 * report.theta_lo * (1.0 - eta3))
    )
    psi = math.sqrt(
        6.0 * pi_hi * n_c * (1.0 + eps3) ** (n_c - 1) / (report.rho_lo * (1.0 - eta3))
    )
    return GuaranteeBundle(
        pi_lo=float(pi_lo),
        pi_hi=float(pi_hi),
        eps3=eps3,
        eta3=eta3,
        gamma3=gamma3,
        sigma=sigma,
        tau=tau,
        chi=chi,
        psi=psi,
    )


def write_analysis_json(
    path,
    report: AssumptionReport,
    bundle: Optional[GuaranteeBundle] = None,
    note: Optional[str] = None,
) -> None:
    """Serialize a report (and guarantees, when available) to JSON."""
    doc = {
        "assumptions": {
            "state_matrix_sum_invertible": {
                "satisfied": report.satisfied["state_matrix_sum_invertible"],
            },
            "transition_spectrum": {
                "satisfied": report.satisfied["transition_spectrum"],
                "alpha_lo": report.alpha_lo,
                "alpha_hi": report.alpha_hi,
                "beta": report.beta,
                "gamma": report.gamma,
            },
            "uniform_controllability": {
                "satisfied": report.satisfied["uniform_controllability"],
                "N_c": report.N_c,
                "delta": report.delta,
            },
            "uniform_observability": {
                "satisfied": report.satisfied["uniform_observability"],
                "N_o": report.N_o,
                "epsilon": report.epsilon if np.isfinite(report.epsilon) else None,
            },
            "weight_spectrum": {
                "satisfied": report.satisfied["weight_spectrum"],
                "theta_lo": report.theta_lo,
                "theta_hi": report.theta_hi,
                "rho_lo": report.rho_lo,
                "rho_hi": report.rho_hi,
            },
        },
        "window_cap": report.window_cap,
        "all_satisfied": report.all_satisfied,
        "guarantees": None,
        "note": note,
    }
    if bundle is not None:
        doc["guarantees"] = {
            "pi_lo": bundle.pi_lo,
            "pi_hi": bundle.pi_hi,
            "eps3": bundle.eps3,
            "eta3": bundle.eta3,
            "gamma3": bundle.gamma3,
            "sigma": bundle.sigma,
            "tau": bundle.tau,
            "chi": bundle.chi,
            "psi": bundle.psi,
        }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
