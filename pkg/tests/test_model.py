import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from frodest import (
    AssumptionViolationError,
    FodnModel,
    ModelError,
    NoiseBounds,
    build_v_approximation,
    disturbance_residuals,
    expand_model,
    load_model,
    residual_r,
    save_model,
    simulate_exact,
)

from conftest import direct_coefficients, random_model


def scalar_model(alpha=0.5):
    return FodnModel(
        state_terms=[(np.array([[1.0]]), alpha)],
        disturbance_terms=[(np.array([[1.0]]), 0.0)],
        output_map=np.array([[1.0]]),
    )


def test_scalar_expansion_frozen_values():
    exp = expand_model(scalar_model(0.5), 3)
    assert_allclose(exp.A_check[:, 0, 0], [0.0, 0.5, 0.125, 0.0625], atol=1e-15)
    assert_allclose(exp.G_check[:, 0, 0], [1.0, 0.0, 0.0, 0.0], atol=0)
    assert exp.lag_horizon == 3


def test_expansion_matches_direct_construction(rng):
    # rebuild the lag matrices from scratch out of binomial rows
    model = random_model(rng, force_m=1, force_p=2)
    horizon = 12
    exp = expand_model(model, horizon)
    n = model.n
    a_hat = np.zeros((horizon + 1, n, n))
    for mat, order in model.state_terms:
        a_hat += direct_coefficients(order, horizon)[:, None, None] * mat
    b_hat = np.zeros((horizon + 1, n, model.m))
    for mat, order in model.input_terms:
        b_hat += direct_coefficients(order, horizon)[:, None, None] * mat
    a0 = a_hat[0]
    for j in range(1, horizon + 1):
        assert_allclose(exp.A_check[j], -np.linalg.solve(a0, a_hat[j]), rtol=1e-12, atol=1e-13)
        assert_allclose(exp.B_check[j], np.linalg.solve(a0, b_hat[j]), rtol=1e-12, atol=1e-13)


def test_singular_state_sum_rejected():
    with pytest.raises(AssumptionViolationError, match="singular"):
        FodnModel(
            state_terms=[(np.eye(2), 0.5), (-np.eye(2), 0.9)],
            output_map=np.eye(2),
        )
    lopsided = FodnModel(
        state_terms=[(np.diag([1.0, 1e-6]), 0.5)],
        output_map=np.eye(2),
    )  # conditioned but legal
    with pytest.raises(AssumptionViolationError):
        FodnModel(
            state_terms=[(np.diag([1.0, 0.0]), 0.5)],
            output_map=np.eye(2),
        )
    assert lopsided.n == 2


def test_model_validation_errors():
    with pytest.raises(ModelError):
        FodnModel(state_terms=[], output_map=np.eye(1))
    with pytest.raises(ModelError):
        FodnModel(state_terms=[(np.eye(2), -0.3)], output_map=np.eye(2))
    with pytest.raises(ModelError):
        FodnModel(state_terms=[(np.eye(2), 0.3)], output_map=np.eye(3))
    with pytest.raises(ModelError):
        FodnModel(
            state_terms=[(np.eye(2), 0.3)],
            input_terms=[(np.ones((3, 1)), 0.5)],
            output_map=np.eye(2),
        )
    with pytest.raises(ModelError):
        NoiseBounds(b_w=-0.1, b_v=0.0)


def test_companion_layout_with_inputs():
    model = FodnModel(
        state_terms=[(np.eye(2), 0.7)],
        input_terms=[(np.array([[1.0], [2.0]]), 0.4)],
        output_map=np.array([[1.0, 0.0]]),
    )
    exp = expand_model(model, 6)
    va = build_v_approximation(exp, model, 3)
    L = va.layout
    assert va.dim == 3 * (2 + 1) == 9
    a = va.A_tilde
    # top row carries the lag matrices
    assert_allclose(a[L.state_slice(0), L.state_slice(1)], exp.A_check[2], atol=0)
    assert_allclose(a[L.state_slice(0), L.input_slice(2)], exp.B_check[3], atol=0)
    # shift registers
    assert_allclose(a[L.state_slice(2), L.state_slice(1)], np.eye(2), atol=0)
    assert_allclose(a[L.input_slice(1), L.input_slice(0)], np.eye(1), atol=0)
    # newest input register is fed by B only
    assert_allclose(a[L.input_slice(0)], 0.0, atol=0)
    assert_allclose(va.B_tilde[L.state_slice(0)], exp.B_check[0], atol=0)
    assert_allclose(va.B_tilde[L.input_slice(0)], np.eye(1), atol=0)
    assert_allclose(va.G_tilde[L.state_slice(0)], np.eye(2), atol=0)
    assert_allclose(va.C[:, :2], model.output_map, atol=0)
    assert np.all(va.C[:, 2:] == 0)
    # nothing outside the mask
    assert np.all(a[~L.transition_mask()] == 0)


def test_companion_layout_drops_input_registers_without_inputs():
    model = scalar_model(0.5)
    va = build_v_approximation(expand_model(model, 5), model, 4)
    assert va.dim == 4
    assert va.B_tilde.shape == (4, 0)
    assert_allclose(va.A_tilde[0], [0.5, 0.125, 0.0625, 0.0390625], rtol=1e-12)


def test_companion_depth_bounds():
    model = scalar_model()
    exp = expand_model(model, 4)
    with pytest.raises(ModelError):
        build_v_approximation(exp, model, 0)
    with pytest.raises(ModelError):
        build_v_approximation(exp, model, 5)


def test_residual_disturbance_only_below_depth(rng):
    model = random_model(rng, force_p=2, force_m=0)
    steps = 6
    traj = simulate_exact(model, None, rng.standard_normal((steps, 2)), rng.standard_normal(model.n), steps)
    exp = expand_model(model, steps + 1)
    k = 2
    v = 5  # v >= k+1 silences both truncation tails
    want = np.zeros(model.n)
    for j in range(k + 1):
        want += exp.G_check[j] @ traj.disturbances[k - j]
    got = residual_r(traj, exp, v, k)
    assert_allclose(got, want, rtol=1e-12, atol=1e-14)
    tail_only = residual_r(traj, exp, v, k, include_disturbance=False)
    assert_allclose(tail_only, 0.0, atol=0)


def test_residual_needs_deep_enough_expansion(rng):
    model = random_model(rng, force_p=1, force_m=0)
    steps = 8
    traj = simulate_exact(model, None, rng.standard_normal((steps, 1)), np.zeros(model.n), steps)
    shallow = expand_model(model, 4)
    with pytest.raises(ModelError, match="re-expand|stops"):
        residual_r(traj, shallow, 2, 7)


def test_residual_tail_shrinks_with_depth(rng):
    model = random_model(rng, n_max=3, force_m=1, force_p=1)
    steps = 30
    u = rng.standard_normal((steps, 1))
    w = 0.1 * rng.standard_normal((steps, 1))
    traj = simulate_exact(model, u, w, rng.standard_normal(model.n), steps)
    exp = expand_model(model, steps + 1)
    sups = []
    for v in (1, 4, 8, 16):
        tail = [
            np.linalg.norm(
                residual_r(traj, exp, v, k, include_disturbance=False)
            )
            for k in range(steps)
        ]
        sups.append(max(tail))
    assert sups[0] >= sups[1] >= sups[2] >= sups[3]
    assert sups[3] < sups[0] or sups[0] == 0.0


def test_disturbance_residuals_matches_pointwise(rng):
    model = random_model(rng, force_p=2, force_m=0)
    steps = 7
    w = rng.standard_normal((steps, 2))
    exp = expand_model(model, steps)
    seq = disturbance_residuals(exp, w)
    traj_like = type("H", (), {"states": np.zeros((steps + 1, model.n)), "inputs": np.zeros((steps, 0)), "disturbances": w})
    for k in range(steps):
        assert_allclose(
            seq[k],
            residual_r(traj_like, exp, exp.lag_horizon, k, include_truncation_tail=False),
            rtol=1e-12,
            atol=1e-14,
        )


def test_model_json_round_trip(tmp_path, rng):
    model = random_model(rng, force_m=1, force_p=2)
    path = tmp_path / "model.json"
    save_model(model, path)
    back = load_model(path)
    assert back.dims == model.dims
    for (m1, o1), (m2, o2) in zip(model.state_terms, back.state_terms):
        assert_allclose(m1, m2, rtol=0, atol=0)
        assert o1 == o2
    assert_allclose(back.output_map, model.output_map, atol=0)


def test_model_file_validation(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("not json")
    with pytest.raises(ModelError):
        load_model(bad)
    with pytest.raises(ModelError):
        load_model(tmp_path / "missing.json")

    doc = {
        "state_terms": [{"A": [[1.0]], "a": 0.5}],
        "C": [[1.0]],
        "dims": {"n": 2},
    }
    mismatched = tmp_path / "mismatch.json"
    mismatched.write_text(json.dumps(doc))
    with pytest.raises(ModelError, match="dims"):
        load_model(mismatched)

    no_c = tmp_path / "noc.json"
    no_c.write_text(json.dumps({"state_terms": [{"A": [[1.0]], "a": 0.5}]}))
    with pytest.raises(ModelError, match="C"):
        load_model(no_c)
