"""Shared generators and independent reference implementations.

The reference simulator here deliberately avoids the library's
expansion path: coefficients come from scipy's binomial, and each step
solves the implicit update directly.
"""
import numpy as np
import pytest
from scipy.special import binom

from frodest import (
    EstimatorConfig,
    FodnModel,
    GuaranteeUnavailableError,
    build_v_approximation,
    check_assumptions,
    covariance_bounds,
    expand_model,
    iss_constants,
)


def direct_coefficients(alpha: float, horizon: int) -> np.ndarray:
    """(-1)^j binom(alpha, j) straight from the gamma function."""
    j = np.arange(horizon + 1)
    return (-1.0) ** j * binom(alpha, j)


def simulate_direct(model: FodnModel, inputs, disturbances, x0, steps: int) -> np.ndarray:
    """Advance the implicit multi-order form one solve at a time.

    Every step isolates x[k+1] from
    sum_i A_i diff^{a_i} x[k+1] = sum_i B_i diff^{b_i} u[k] + sum_i G_i diff^{g_i} w[k]
    by moving the known history to the right-hand side.
    """
    n = model.n
    u = np.zeros((steps, model.m)) if inputs is None else np.asarray(inputs, float)
    w = np.zeros((steps, model.p)) if disturbances is None else np.asarray(disturbances, float)
    states = np.zeros((steps + 1, n))
    states[0] = np.asarray(x0, float)
    a_sum = sum(mat for mat, _ in model.state_terms)
    for k in range(steps):
        rhs = np.zeros(n)
        for mat, order in model.input_terms:
            cb = direct_coefficients(order, k)
            rhs += mat @ (cb @ u[k::-1])
        for mat, order in model.disturbance_terms:
            cg = direct_coefficients(order, k)
            rhs += mat @ (cg @ w[k::-1])
        known = np.zeros(n)
        for mat, order in model.state_terms:
            ca = direct_coefficients(order, k + 1)
            known += mat @ (ca[1:] @ states[k::-1])
        states[k + 1] = np.linalg.solve(a_sum, rhs - known)
    return states


def random_spd(rng, size: int, lo: float = 0.5, hi: float = 2.0) -> np.ndarray:
    """Random symmetric matrix with eigenvalues inside [lo, hi]."""
    basis = np.linalg.qr(rng.standard_normal((size, size)))[0]
    eigs = rng.uniform(lo, hi, size=size)
    return basis @ np.diag(eigs) @ basis.T


def random_model(
    rng,
    n_max: int = 3,
    m_max: int = 1,
    p_max: int = 2,
    order_hi: float = 1.2,
    force_m=None,
    force_p=None,
) -> FodnModel:
    """Random multi-term model with a well-conditioned matrix sum."""
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(0, m_max + 1)) if force_m is None else force_m
    p = int(rng.integers(0, p_max + 1)) if force_p is None else force_p
    q = int(rng.integers(1, n + 1))

    state_terms = [(np.eye(n) + 0.3 * rng.standard_normal((n, n)), rng.uniform(0.1, order_hi))]
    for _ in range(int(rng.integers(0, 2))):
        state_terms.append(
            (0.3 * rng.standard_normal((n, n)), rng.uniform(0.1, order_hi))
        )
    input_terms = [
        (rng.standard_normal((n, m)), rng.uniform(0.1, order_hi))
        for _ in range(int(rng.integers(1, 3)) if m else 0)
    ]
    dist_terms = [
        (rng.standard_normal((n, p)), rng.uniform(0.1, order_hi))
        for _ in range(int(rng.integers(1, 3)) if p else 0)
    ]
    return FodnModel(
        state_terms=state_terms,
        input_terms=input_terms,
        disturbance_terms=dist_terms,
        output_map=rng.standard_normal((q, n)),
    )


def random_estimation_instance(rng, horizon_max: int = 10, invertible: bool = False):
    """Random realization, condition-bounded weights, and raw data.

    Measurements are arbitrary; the recursion/batch equivalence is an
    algebraic identity and needs no consistency between data and model.
    With ``invertible`` the transition matrix is kept comfortably
    nonsingular (which rules out input registers: their newest row is
    structurally zero), as the information-form identity requires.
    """
    while True:
        model = random_model(rng, force_m=0 if invertible else None)
        v = int(rng.integers(1, 4))
        steps = int(rng.integers(1, horizon_max + 1))
        expanded = expand_model(model, max(v, steps))
        vapprox = build_v_approximation(expanded, model, v)
        if not invertible:
            break
        sv = np.linalg.svd(vapprox.A_tilde, compute_uv=False)
        if sv[-1] > 1e-2:
            break
    d, n, q = vapprox.dim, model.n, model.q
    config = EstimatorConfig(
        Q=random_spd(rng, n),
        R=random_spd(rng, q),
        P0=random_spd(rng, d),
        x0_hat=rng.standard_normal(d),
    )
    inputs = rng.standard_normal((steps, model.m))
    measurements = rng.standard_normal((steps, q))
    return vapprox, config, inputs, measurements


def random_certifiable_system(rng, steps: int = 200, require_guarantees: bool = False):
    """Input-free system whose companion form passes every assumption.

    Resamples until the transition matrix is invertible and modestly
    stable, so long filter runs stay well scaled.  With
    ``require_guarantees`` it also keeps resampling until the guarantee
    constants come out non-vacuous, which the conservative window
    recursions do not promise for every certifiable draw.
    """
    while True:
        n = int(rng.integers(1, 4))
        v = int(rng.integers(1, 4))
        p = int(rng.integers(1, 3))
        model_try = FodnModel(
            state_terms=[
                (np.eye(n) + 0.2 * rng.standard_normal((n, n)), rng.uniform(0.3, 1.1)),
                (0.2 * rng.standard_normal((n, n)), rng.uniform(0.3, 1.1)),
            ],
            disturbance_terms=[(rng.standard_normal((n, p)), rng.uniform(0.3, 1.1))],
            output_map=np.eye(n) + 0.2 * rng.standard_normal((n, n)),
        )
        expanded = expand_model(model_try, steps + 1)
        vapprox = build_v_approximation(expanded, model_try, v)
        spectrum = np.abs(np.linalg.eigvals(vapprox.A_tilde))
        if spectrum.max() > 0.95 or spectrum.min() < 1e-4:
            continue
        config = EstimatorConfig(
            Q=random_spd(rng, n),
            R=random_spd(rng, model_try.q),
            P0=random_spd(rng, vapprox.dim),
            x0_hat=rng.standard_normal(vapprox.dim),
        )
        report = check_assumptions(vapprox, config, window_cap=16)
        if not report.all_satisfied:
            continue
        if require_guarantees:
            try:
                iss_constants(report, *covariance_bounds(report))
            except GuaranteeUnavailableError:
                continue
        return model_try, expanded, vapprox, config, report


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
