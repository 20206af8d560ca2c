import json
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from frodest import (
    ConfigError,
    EstimatorConfig,
    GuaranteeUnavailableError,
    build_v_approximation,
    check_assumptions,
    controllability_gramian,
    covariance_bounds,
    expand_model,
    iss_constants,
    observability_gramian,
    state_transition,
    write_analysis_json,
)
from frodest.analysis import _containment_factor
from frodest.model import FodnModel

from conftest import random_certifiable_system, random_spd


def scalar_lift(order=1.0, v=1):
    model = FodnModel(
        state_terms=[(np.array([[1.0]]), order)],
        disturbance_terms=[(np.array([[1.0]]), 0.0)],
        output_map=np.array([[1.0]]),
    )
    return build_v_approximation(expand_model(model, max(v, 3)), model, v)


def unit_config(dim=1):
    return EstimatorConfig(
        Q=np.eye(1), R=np.eye(1), P0=np.eye(dim), x0_hat=np.zeros(dim)
    )


def test_state_transition_is_matrix_power():
    a = np.array([[0.5, 1.0], [0.0, 0.5]])
    assert_allclose(state_transition(a, 3, 0), a @ a @ a, rtol=0, atol=0)
    assert_allclose(state_transition(a, 5, 5), np.eye(2), rtol=0, atol=0)
    with pytest.raises(ConfigError):
        state_transition(a, 1, 2)


def test_gramian_hand_sums():
    a = np.array([[0.7]])
    g = np.array([[1.0]])
    c = np.array([[1.0]])
    assert controllability_gramian(a, g, 0, 1).item() == pytest.approx(1.0)
    assert controllability_gramian(a, g, 0, 2).item() == pytest.approx(1.0 + 0.49)
    assert observability_gramian(a, c, 0, 1).item() == pytest.approx(0.49)
    assert observability_gramian(a, c, 0, 2).item() == pytest.approx(0.49 + 0.49**2)
    with pytest.raises(ConfigError):
        controllability_gramian(a, g, 3, 3)
    with pytest.raises(ConfigError):
        observability_gramian(a, c, 3, 2)


def test_gramians_match_brute_force():
    rng = np.random.default_rng(11)
    for _ in range(6):
        d = int(rng.integers(1, 5))
        a = rng.standard_normal((d, d)) * 0.5
        g = rng.standard_normal((d, int(rng.integers(1, 3))))
        c = rng.standard_normal((int(rng.integers(1, 3)), d))
        k0, k = 2, 2 + int(rng.integers(1, 6))
        w_c = sum(
            np.linalg.matrix_power(a, j) @ g @ g.T @ np.linalg.matrix_power(a, j).T
            for j in range(k - k0)
        )
        w_o = sum(
            np.linalg.matrix_power(a, i - k0).T
            @ c.T
            @ c
            @ np.linalg.matrix_power(a, i - k0)
            for i in range(k0 + 1, k + 1)
        )
        assert_allclose(controllability_gramian(a, g, k0, k), w_c, atol=1e-12)
        assert_allclose(observability_gramian(a, c, k0, k), w_o, atol=1e-12)


def test_observability_gramian_per_step_maps():
    a = np.array([[0.9, 0.1], [0.0, 0.8]])
    c = np.array([[1.0, 0.5]])
    seq = [np.full((1, 2), 99.0), c, c, c]
    assert_allclose(
        observability_gramian(a, seq, 0, 3),
        observability_gramian(a, c, 0, 3),
        rtol=0,
        atol=0,
    )
    with pytest.raises(ConfigError):
        observability_gramian(a, [c], 0, 3)


def test_containment_factor_identity_weight():
    a = np.diag([2.0, 5.0])
    assert _containment_factor(a, np.eye(2)) == pytest.approx(2.0, rel=1e-12)


def test_containment_factor_singular_weight():
    # feasible direction only lives on the range of b
    assert _containment_factor(np.eye(2), np.diag([1.0, 0.0])) == pytest.approx(1.0)
    coupled = np.array([[1.0, 1.0], [1.0, 1.0]])
    assert _containment_factor(coupled, np.diag([1.0, 0.0])) == pytest.approx(0.0, abs=1e-12)
    assert _containment_factor(np.eye(2), np.zeros((2, 2))) == math.inf


def test_containment_factor_is_maximal():
    rng = np.random.default_rng(23)
    for _ in range(12):
        d = int(rng.integers(1, 5))
        a = random_spd(rng, d)
        singular = bool(rng.integers(0, 2))
        if singular and d > 1:
            u = rng.standard_normal((d, d - 1))
            b = u @ u.T
        else:
            b = random_spd(rng, d)
        eps = _containment_factor(a, b)
        scale = float(np.linalg.eigvalsh(a)[-1])
        # feasibility just below eps
        gap = a - (eps * (1.0 - 1e-9)) * b
        assert np.linalg.eigvalsh(gap)[0] > -1e-8 * max(1.0, scale)
        if not singular or d == 1:
            # maximality just above eps
            over = a - (eps + 1e-6 * max(1.0, eps)) * b
            assert np.linalg.eigvalsh(over)[0] < 0


def test_scalar_assumption_constants_frozen():
    report = check_assumptions(scalar_lift(), unit_config())
    assert report.all_satisfied
    assert report.failing() == []
    assert report.alpha_lo == pytest.approx(1.0)
    assert report.alpha_hi == pytest.approx(1.0)
    assert report.beta == pytest.approx(1.0)
    assert report.gamma == pytest.approx(1.0)
    assert report.theta_lo == report.theta_hi == pytest.approx(1.0)
    assert report.rho_lo == report.rho_hi == pytest.approx(1.0)
    assert report.N_c == 1 and report.delta == pytest.approx(1.0)
    assert report.N_o == 1 and report.epsilon == pytest.approx(1.0)
    assert report.a_invertible


def test_scalar_covariance_bounds_frozen():
    report = check_assumptions(scalar_lift(), unit_config())
    pi_lo, pi_hi = covariance_bounds(report)
    assert pi_lo == pytest.approx(0.25, rel=1e-12)
    assert pi_hi == pytest.approx(6.0, rel=1e-12)


def test_scalar_iss_constants_frozen():
    report = check_assumptions(scalar_lift(), unit_config())
    pi_lo, pi_hi = covariance_bounds(report)
    # margin solving base * (1 + eps) = 0.99 exactly, base = 13/14
    eps_star = 0.99 * 14.0 / 13.0 - 1.0
    bundle = iss_constants(report, pi_lo, pi_hi, eps3=eps_star)
    assert bundle.gamma3 == pytest.approx(0.5, rel=1e-12)
    assert bundle.eta3 == pytest.approx(0.99, rel=1e-12)
    assert bundle.sigma == pytest.approx(math.sqrt(72.0), rel=1e-12)
    assert bundle.tau == pytest.approx(math.sqrt(0.99), rel=1e-12)
    assert bundle.psi == pytest.approx(60.0, rel=1e-9)
    chi_sq = 3.0 * 6.0 * (1.0 + eps_star) / (eps_star * 0.01)
    assert bundle.chi == pytest.approx(math.sqrt(chi_sq), rel=1e-9)


def test_scalar_iss_bisection_matches_closed_form():
    report = check_assumptions(scalar_lift(), unit_config())
    bundle = iss_constants(report, *covariance_bounds(report))
    eps_star = 0.99 * 14.0 / 13.0 - 1.0
    assert bundle.eps3 == pytest.approx(eps_star, abs=2e-6)
    assert bundle.eta3 <= 0.99 + 1e-12
    assert bundle.tau < 1.0


def test_envelope_evaluation():
    report = check_assumptions(scalar_lift(), unit_config())
    bundle = iss_constants(report, *covariance_bounds(report))
    flat = bundle.envelope(0.0, 5, 0.1, 0.2)
    assert flat == pytest.approx(max(bundle.chi * 0.1, bundle.psi * 0.2))
    decay0 = bundle.envelope(1.0, 0, 0.0, 0.0)
    decay9 = bundle.envelope(1.0, 9, 0.0, 0.0)
    assert decay0 == pytest.approx(bundle.sigma)
    assert decay9 == pytest.approx(bundle.sigma * bundle.tau**9)
    assert decay9 < decay0


def test_deeper_lift_needs_wider_windows():
    va = scalar_lift(order=0.5, v=2)
    narrow = check_assumptions(va, unit_config(dim=2), window_cap=1)
    assert narrow.N_c is None and narrow.N_o is None
    assert not narrow.all_satisfied
    assert set(narrow.failing()) == {"uniform_controllability", "uniform_observability"}
    with pytest.raises(GuaranteeUnavailableError):
        covariance_bounds(narrow)

    wide = check_assumptions(va, unit_config(dim=2), window_cap=8)
    assert wide.N_c == 2 and wide.N_o == 2
    assert wide.all_satisfied
    pi_lo, pi_hi = covariance_bounds(wide)
    assert 0.0 < pi_lo <= pi_hi < math.inf


def test_input_registers_break_certification():
    model = FodnModel(
        state_terms=[(np.array([[1.0]]), 1.0)],
        input_terms=[(np.array([[1.0]]), 0.0)],
        disturbance_terms=[(np.array([[1.0]]), 0.0)],
        output_map=np.array([[1.0]]),
    )
    va = build_v_approximation(expand_model(model, 3), model, 1)
    report = check_assumptions(va, unit_config(dim=va.dim), window_cap=8)
    assert not report.satisfied["transition_spectrum"]
    assert not report.satisfied["uniform_controllability"]
    with pytest.raises(GuaranteeUnavailableError):
        covariance_bounds(report)


def test_time_varying_weights_refuse_guarantees():
    config = EstimatorConfig(
        Q=[np.eye(1), 2.0 * np.eye(1)],
        R=np.eye(1),
        P0=np.eye(1),
        x0_hat=np.zeros(1),
    )
    report = check_assumptions(scalar_lift(), config, window_cap=4)
    assert report.all_satisfied
    with pytest.raises(GuaranteeUnavailableError):
        covariance_bounds(report)
    with pytest.raises(GuaranteeUnavailableError):
        iss_constants(report, 0.1, 1.0)


def test_iss_rejects_hopeless_or_bad_margins():
    report = check_assumptions(scalar_lift(), unit_config())
    pi_lo, pi_hi = covariance_bounds(report)
    # an enormous upper bound starves the contraction of information
    with pytest.raises(GuaranteeUnavailableError):
        iss_constants(report, pi_lo, 1e6)
    with pytest.raises(GuaranteeUnavailableError):
        iss_constants(report, pi_lo, pi_hi, eps3=0.2)
    with pytest.raises(ConfigError):
        iss_constants(report, pi_lo, pi_hi, eps3=-0.1)
    with pytest.raises(ConfigError):
        iss_constants(report, -1.0, pi_hi)
    with pytest.raises(ConfigError):
        iss_constants(report, pi_hi, pi_lo)


def test_random_certifiable_systems_yield_finite_guarantees(rng):
    for _ in range(4):
        _, _, _, config, report = random_certifiable_system(
            rng, require_guarantees=True
        )
        pi_lo, pi_hi = covariance_bounds(report)
        assert 0.0 < pi_lo <= pi_hi < math.inf
        bundle = iss_constants(report, pi_lo, pi_hi)
        assert 0.0 < bundle.tau < 1.0
        assert bundle.eta3 < 1.0
        for value in (bundle.sigma, bundle.chi, bundle.psi):
            assert np.isfinite(value) and value > 0.0


def test_analysis_json_document(tmp_path):
    report = check_assumptions(scalar_lift(), unit_config())
    bundle = iss_constants(report, *covariance_bounds(report))
    path = tmp_path / "analysis.json"
    write_analysis_json(path, report, bundle, note="ok")
    doc = json.loads(path.read_text())
    assert doc["all_satisfied"] is True
    assert doc["note"] == "ok"
    assert doc["window_cap"] == report.window_cap
    assert set(doc["assumptions"]) == {
        "state_matrix_sum_invertible",
        "transition_spectrum",
        "uniform_controllability",
        "uniform_observability",
        "weight_spectrum",
    }
    assert doc["assumptions"]["uniform_controllability"]["N_c"] == 1
    assert doc["guarantees"]["pi_lo"] == pytest.approx(0.25)
    assert doc["guarantees"]["pi_hi"] == pytest.approx(6.0)

    bare = tmp_path / "bare.json"
    write_analysis_json(bare, report)
    doc = json.loads(bare.read_text())
    assert doc["guarantees"] is None
    assert doc["note"] is None
