import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import expm

from qoed.errors import ContractError
from qoed.linalg import hermitian_check
from qoed.model import (ModelParams, effective_hamiltonian, rwa_hamiltonian, unitary, unitary_closed,
                        unitary_numeric, unitary_rwa)

coupling = st.floats(-5, 5, allow_nan=False)
durations = st.floats(0.0, 10.0, allow_nan=False)
kinds = st.sampled_from(["rwa", "closed"])

ZERO_POSITIONS = [(i, j) for i in range(4) for j in range(4)
                  if (i, j) not in {(0, 0), (1, 1), (1, 2), (2, 1), (2, 2), (3, 3)}]


def test_params_defaults_and_validation():
    p = ModelParams(1.0, 1.0)
    assert p.free == ("F", "G") and p.delta_omega == 1.0 and p.propagator == "rwa"
    assert p.omega == pytest.approx(np.sqrt(2))
    assert np.array_equal(p.free_values(), [1.0, 1.0])
    q = p.with_free([2.0, 3.0])
    assert (q.F, q.G, q.delta_omega) == (2.0, 3.0, 1.0)
    assert p.shifted("G", 0.5).G == 1.5
    for bad in (dict(F=np.nan, G=0), dict(F=0, G=0, delta_omega=np.inf), dict(F=0, G=0, free=("X",)),
                dict(F=0, G=0, free=()), dict(F=0, G=0, propagator="nope"), dict(F=0, G=0, free=("F", "F"))):
        with pytest.raises(ContractError):
            ModelParams(**bad)
    with pytest.raises(ContractError):
        p.with_free([1.0])


@pytest.mark.parametrize("fn", [unitary_closed, unitary_rwa])
def test_identity_at_zero_time(fn):
    assert np.array_equal(fn(ModelParams(0.7, -1.3, 0.4), 0.0).u, np.eye(4))


@given(coupling, coupling, st.floats(-3, 3), durations, kinds)
def test_unitary_and_zero_pattern(F, G, dw, t, kind):
    u = unitary(ModelParams(F, G, dw, propagator=kind), t).u
    assert np.max(np.abs(u.conj().T @ u - np.eye(4))) <= 1e-10
    assert max(abs(u[i, j]) for i, j in ZERO_POSITIONS) <= 1e-12


@given(coupling, coupling, st.floats(-3, 3), st.floats(0, 5), st.floats(0, 5))
def test_closed_semigroup(F, G, dw, t, s):
    p = ModelParams(F, G, dw, propagator="closed")
    lhs = unitary_closed(p, t).u @ unitary_closed(p, s).u
    assert np.max(np.abs(lhs - unitary_closed(p, t + s).u)) <= 1e-10


@given(coupling, coupling, st.floats(-3, 3), st.floats(0.01, 10), kinds)
def test_global_phase_periodicity_in_g(F, G, dw, t, kind):
    p = ModelParams(F, G, dw, propagator=kind)
    shifted = ModelParams(F, G + np.pi / t, dw, propagator=kind)
    assert np.max(np.abs(unitary(shifted, t).u + unitary(p, t).u)) <= 1e-10


def test_effective_hamiltonian_limits():
    h = effective_hamiltonian(ModelParams(0.0, 0.8, 0.0))
    assert np.allclose(h, np.diag([0.8, -0.8, -0.8, 0.8]), atol=0)


@given(coupling, coupling, st.floats(-3, 3))
def test_effective_hamiltonian_hermitian(F, G, dw):
    p = ModelParams(F, G, dw)
    assert hermitian_check(effective_hamiltonian(p)).max_asymmetry <= 1e-14
    assert hermitian_check(rwa_hamiltonian(p, 0.37)).max_asymmetry <= 1e-14


@pytest.mark.parametrize("t", [0.3, 1.0, 4.2, 10.0])
def test_effective_hamiltonian_generates_closed_form(t):
    p = ModelParams(1.0, 1.0, 1.0, propagator="closed")
    assert np.max(np.abs(expm(-1j * effective_hamiltonian(p) * t) - unitary_closed(p, t).u)) <= 1e-9


def test_rwa_commutator_free_limit():
    # F = 0: H(t) is diagonal and time independent, so U = exp(-i H t)
    p = ModelParams(0.0, 0.6, 1.3)
    t = 2.1
    assert np.max(np.abs(expm(-1j * rwa_hamiltonian(p, 0.0) * t) - unitary_rwa(p, t).u)) <= 1e-12


@pytest.mark.parametrize("kind", ["rwa", "closed"])
def test_numeric_oracle_at_truth(kind):
    p = ModelParams(1.1, 0.9, 1.0, propagator=kind)
    assert np.max(np.abs(unitary_numeric(p, 1.0).u - unitary(p, 1.0).u)) <= 1e-8
    assert np.array_equal(unitary_numeric(p, 0.0, steps=100).u, np.eye(4))
    with pytest.raises(ContractError):
        unitary_numeric(p, 1.0, steps=10)


@pytest.mark.parametrize("kind", ["rwa", "closed"])
def test_numeric_fourth_order(kind):
    p = ModelParams(1.1, 0.9, 1.0, propagator=kind)
    exact = unitary(p, 3.0).u
    errs = [np.max(np.abs(unitary_numeric(p, 3.0, steps=n).u - exact)) for n in (500, 1000, 2000)]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    assert all(12 < r < 20 for r in ratios), ratios


@pytest.mark.parametrize("kind", ["rwa", "closed"])
def test_rabi_formula(kind):
    # |ud> stays in the {ud, du} block with the two-level Rabi population
    F, G, dw, t = 1.1, 0.9, 1.0, 1.0
    u = unitary(ModelParams(F, G, dw, propagator=kind), t).u
    om = np.hypot(F, dw)
    expected = np.cos(om * t) ** 2 + dw ** 2 * np.sin(om * t) ** 2 / om ** 2
    assert abs(abs(u[1, 1]) ** 2 - expected) <= 1e-14


@pytest.mark.parametrize("fn", [unitary_closed, unitary_rwa])
def test_small_omega_series(fn):
    G, t = 0.4, 1.0
    prev = None
    for x in np.geomspace(1e-8, 1e-4, 25):
        F = x / t
        u = fn(ModelParams(F, G, 0.0), t).u
        # off-diagonal magnitude F sin(Ωt)/Ω with Ω = F
        series = F * t * (1 - x * x / 6)
        assert abs(abs(u[1, 2]) - series) <= 1e-10
        if prev is not None:
            assert abs(abs(u[1, 2]) - prev) <= 1e-4
        prev = abs(u[1, 2])
    u0 = fn(ModelParams(0.0, G, 0.0), t).u
    assert np.max(np.abs(u0.conj().T @ u0 - np.eye(4))) <= 1e-14
