"""Disturbance model, internal-model basis, and exosystem behavior.

The initial-state construction is the one derived quantity here, so it is
checked against an independent scipy integration of the exosystem before
any closed-loop test depends on it.
"""

import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from rigiform import (
    DisturbanceSpec,
    EdgeDisturbance,
    InternalModelBasis,
    check_observability,
    default_basis,
    exosystem_initial_state,
    exosystem_output,
    lambda_matrix,
    mu_closed_form,
    propagate_exosystem,
)


def _two_tone_spec():
    return DisturbanceSpec(
        (1.0, 2.5),
        (
            EdgeDisturbance(0.7, (1.2, 0.4), (0.3, -1.1)),
            EdgeDisturbance(-2.0, (0.0, 0.9), (0.0, 2.2)),
            EdgeDisturbance(19.0, (0.5, 0.0), (1.4, 0.0)),
        ),
    )


def test_lambda_matrix_offset_only():
    assert np.array_equal(lambda_matrix(()), np.array([[0.0]]))


def test_lambda_matrix_single_tone_literal():
    expected = np.array([
        [0.0, 0.0, 0.0],
        [0.0, 0.0, -2.0],
        [0.0, 2.0, 0.0],
    ])
    assert np.array_equal(lambda_matrix((2.0,)), expected)


def test_lambda_matrix_spectrum():
    eigs = np.linalg.eigvals(lambda_matrix((1.0, 3.0)))
    got = sorted(eigs, key=lambda v: (round(v.imag, 9), round(v.real, 9)))
    want = [-3j, -1j, 0.0, 1j, 3j]
    assert np.allclose(got, want, atol=1e-12)


def test_frequency_validation():
    with pytest.raises(ValueError, match="distinct"):
        DisturbanceSpec((1.0, 1.0), (EdgeDisturbance(0.0, (1.0, 1.0), (0.0, 0.0)),))
    with pytest.raises(ValueError, match="positive"):
        lambda_matrix((0.0,))
    with pytest.raises(ValueError, match="positive"):
        lambda_matrix((-1.0,))
    with pytest.raises(ValueError, match="finite"):
        lambda_matrix((math.inf,))


def test_default_basis_is_observable():
    basis = default_basis((1.0,))
    assert np.array_equal(basis.vector, np.array([1.0, 1.0, 0.0]))
    assert check_observability(basis)
    flat = default_basis(())
    assert np.array_equal(flat.vector, np.array([1.0]))
    assert check_observability(flat)


def test_observability_frozen_cases():
    assert check_observability(InternalModelBasis(1.0, (1.0, 0.0), (1.0,)))
    # killing the offset channel makes the constant mode unobservable
    assert not check_observability(InternalModelBasis(0.0, (1.0, 0.0), (1.0,)))
    # a zeroed sin/cos pair hides that tone
    assert not check_observability(InternalModelBasis(1.0, (1.0, 0.0, 0.0, 0.0), (1.0, 2.0)))
    assert check_observability(InternalModelBasis(1.0, (1.0, 1.0, 0.0, 0.0), (1.0, 2.0)))


def test_initial_state_constant_disturbance():
    spec = DisturbanceSpec((), (EdgeDisturbance(19.0),))
    basis = default_basis(())
    state = exosystem_initial_state(spec, basis)
    assert state.t == 0.0
    assert np.array_equal(state.w, np.array([[19.0]]))
    assert np.array_equal(exosystem_output(basis, state.w), np.array([19.0]))


def test_initial_state_pure_sine_literal():
    # amplitude 1, phase 0, frequency 2, sin-only pickup: w0 = (0, 0, -1)
    spec = DisturbanceSpec((2.0,), (EdgeDisturbance(0.0, (1.0,), (0.0,)),))
    basis = InternalModelBasis(1.0, (1.0, 0.0), (2.0,))
    state = exosystem_initial_state(spec, basis)
    assert np.allclose(state.w, np.array([[0.0, 0.0, -1.0]]), atol=1e-15)


def test_initial_state_zero_spec_is_zero():
    spec = DisturbanceSpec((1.0,), (EdgeDisturbance(0.0, (0.0,), (0.0,)),))
    state = exosystem_initial_state(spec, default_basis((1.0,)))
    assert np.array_equal(state.w, np.zeros((1, 3)))


def test_initial_state_error_paths():
    spec = DisturbanceSpec((1.0,), (EdgeDisturbance(1.0, (1.0,), (0.0,)),))
    with pytest.raises(ValueError, match="b1 is zero"):
        exosystem_initial_state(spec, InternalModelBasis(0.0, (1.0, 0.0), (1.0,)))
    with pytest.raises(ValueError, match="unrepresentable"):
        exosystem_initial_state(spec, InternalModelBasis(1.0, (0.0, 0.0), (1.0,)))
    with pytest.raises(ValueError, match="frequency lists differ"):
        exosystem_initial_state(spec, default_basis((2.0,)))


def test_initial_state_reproduces_output_via_scipy():
    """Oracle: integrate dw/dt = L w with scipy and compare b' w to the
    closed-form disturbance on a dense grid."""
    spec = _two_tone_spec()
    basis = default_basis(spec.frequencies)
    state = exosystem_initial_state(spec, basis)
    lam = basis.dynamics_matrix
    times = np.linspace(0.0, 10.0, 401)
    for k in range(spec.edge_count):
        sol = solve_ivp(
            lambda _, w: lam @ w,
            (0.0, 10.0),
            state.w[k],
            t_eval=times,
            rtol=1e-12,
            atol=1e-14,
        )
        assert sol.success
        got = basis.vector @ sol.y
        want = mu_closed_form(spec, times)[:, k]
        assert np.abs(got - want).max() < 1e-8


def test_propagate_matches_closed_form():
    spec = _two_tone_spec()
    basis = default_basis(spec.frequencies)
    times, states = propagate_exosystem(spec, basis, t_end=20.0, dt=1e-3, output_every=20)
    mu = exosystem_output(basis, states)
    assert np.abs(mu - mu_closed_form(spec, times)).max() < 1e-8


def test_propagation_conserves_tone_energy():
    # each sin/cos pair rotates, so its squared norm is an invariant
    spec = _two_tone_spec()
    basis = default_basis(spec.frequencies)
    _, states = propagate_exosystem(spec, basis, t_end=50.0, dt=1e-3, output_every=100)
    p = spec.p
    for i in range(p):
        pair = states[:, :, (1 + i, 1 + p + i)]
        energy = (pair ** 2).sum(axis=2)
        assert np.abs(energy - energy[0]).max() < 1e-8


def test_negative_amplitude_is_normalized():
    raw = EdgeDisturbance(0.0, (-2.0,), (0.5,))
    assert raw.amplitudes == (2.0,)
    assert -math.pi < raw.phases[0] <= math.pi
    spec_raw = DisturbanceSpec((1.5,), (raw,))
    times = np.linspace(0.0, 8.0, 200)
    manual = -2.0 * np.sin(1.5 * times + 0.5)
    assert np.abs(mu_closed_form(spec_raw, times)[:, 0] - manual).max() < 1e-12


def test_zero_amplitude_phase_is_canonical():
    d = EdgeDisturbance(1.0, (0.0,), (2.7,))
    assert d.phases == (0.0,)


def test_edge_disturbance_validation():
    with pytest.raises(ValueError, match="one phase per amplitude"):
        EdgeDisturbance(0.0, (1.0, 2.0), (0.0,))
    with pytest.raises(ValueError, match="finite"):
        EdgeDisturbance(math.nan)
    spec_edges = (EdgeDisturbance(0.0, (1.0,), (0.0,)),)
    with pytest.raises(ValueError, match="amplitude"):
        DisturbanceSpec((1.0, 2.0), spec_edges)
    with pytest.raises(ValueError, match="at least one edge"):
        DisturbanceSpec((1.0,), ())


def test_basis_validation():
    with pytest.raises(ValueError, match="two entries per frequency"):
        InternalModelBasis(1.0, (1.0,), (1.0,))
    with pytest.raises(ValueError, match="finite"):
        InternalModelBasis(math.inf, (), ())


def test_mu_closed_form_scalar_matches_vector():
    spec = _two_tone_spec()
    times = np.linspace(0.0, 5.0, 50)
    table = mu_closed_form(spec, times)
    assert table.shape == (50, spec.edge_count)
    rows = np.stack([mu_closed_form(spec, float(t)) for t in times])
    assert np.array_equal(table, rows)


def test_exosystem_output_broadcasts():
    spec = _two_tone_spec()
    basis = default_basis(spec.frequencies)
    state = exosystem_initial_state(spec, basis)
    single = exosystem_output(basis, state.w)
    assert single.shape == (3,)
    stacked = exosystem_output(basis, np.stack([state.w, state.w]))
    assert stacked.shape == (2, 3)
    assert np.array_equal(stacked[0], single)
    assert np.abs(single - mu_closed_form(spec, 0.0)).max() < 1e-12
