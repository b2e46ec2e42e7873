import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize_scalar

from conftest import random_psd
from qoed.design import (DesignOptions, DesignWeights, a_objective, brute_force_design, equivalence_gap,
                         load_design_weights, merged_support, optimize_a_design, save_design, schur_certificate)
from qoed.errors import ContractError, NotEstimableError
from qoed.fisher import FisherMatrix, experiment_fisher, menu_fisher
from qoed.linalg import sym_eigvals
from qoed.menu import optimal_pair_menu, suboptimal_menu


def random_menu(seed, n=5, p=2):
    rng = np.random.default_rng(seed)
    # rank-one matrices mimic single-setting Fisher information
    vs = rng.normal(size=(n, p))
    return np.einsum("ni,nj->nij", vs, vs) + 1e-3 * np.array([random_psd(rng, p) for _ in range(n)])


@pytest.fixture(scope="module")
def pair(theta_p):
    return [experiment_fisher(e, theta_p) for e in optimal_pair_menu()]


def test_weights_validation():
    for w in ([], [0.5, 0.6], [1.2, -0.2]):
        with pytest.raises(ContractError):
            DesignWeights(np.array(w))
    w = DesignWeights.from_support(5, [1, 3], [0.25, 0.75])
    assert list(w.support) == [1, 3] and len(w) == 5
    with pytest.raises(ContractError):
        DesignWeights.from_support(3, [3], [1.0])


def test_optimal_pair_weights(pair):
    res = optimize_a_design(pair)
    assert res.converged
    assert res.weights.weights == pytest.approx([0.2, 0.8], abs=0.02)
    # independent one-dimensional oracle
    line = minimize_scalar(lambda a: a_objective(pair, [a, 1 - a]), bounds=(0, 1), method="bounded",
                           options={"xatol": 1e-10})
    assert res.weights.weights[0] == pytest.approx(line.x, abs=1e-4)
    assert res.objective == pytest.approx(line.fun, rel=1e-8)


def test_identical_copies():
    f = random_psd(np.random.default_rng(0), 2, 0.5)
    res = optimize_a_design([f, f, f])
    assert res.objective == pytest.approx(np.trace(np.linalg.inv(f)), rel=1e-12)
    rng = np.random.default_rng(1)
    for w in rng.dirichlet(np.ones(3), 5):
        assert a_objective([f, f, f], w) == pytest.approx(res.objective, rel=1e-12)
    assert len(res.merged_support) == 1 and res.merged_support[0].ids == (0, 1, 2)


def test_single_experiment_gap_is_zero():
    f = random_psd(np.random.default_rng(2), 2, 0.5)
    assert equivalence_gap([f], [1.0]) == 0.0


def test_suboptimal_uniform_gap_positive(theta_p):
    st_ = menu_fisher(suboptimal_menu(), theta_p)
    assert equivalence_gap(st_, np.full(12, 1 / 12)) > 1e-3


def test_gap_linearity_identity():
    m = random_menu(3)
    w = np.random.default_rng(3).dirichlet(np.ones(5))
    finv = np.linalg.inv(np.tensordot(w, m, axes=1))
    d = np.array([np.trace(finv @ mi @ finv) for mi in m])
    assert w @ d == pytest.approx(np.trace(finv), rel=1e-12)
    assert equivalence_gap(m, w) == pytest.approx(d.max() - np.trace(finv), rel=1e-12)


def test_singular_inputs():
    rank1 = np.array([[[1.0, 0.0], [0.0, 0.0]], [[2.0, 0.0], [0.0, 0.0]]])
    with pytest.raises(NotEstimableError):
        optimize_a_design(rank1)
    with pytest.raises(NotEstimableError):
        optimize_a_design(np.zeros((3, 2, 2)))
    with pytest.raises(NotEstimableError):
        equivalence_gap(rank1, [0.5, 0.5])


def test_full_menu_design(full_design, full_fisher):
    res = full_design
    assert res.converged and 0.81 <= res.objective <= 0.86
    assert res.equivalence_gap <= 1e-5 * res.objective
    assert len(res.merged_support) <= 6
    assert sorted(c.weight for c in res.merged_support) == pytest.approx([0.2, 0.8], abs=0.02)
    hist = np.array(res.history)
    assert np.all(np.diff(hist) <= 1e-15 * hist[:-1])
    rng = np.random.default_rng(4)
    for w in rng.dirichlet(np.ones(len(full_fisher.m)), 100):
        assert res.objective <= a_objective(full_fisher, w)


def test_support_classes_match_optimal_pair(full_design, pair):
    for c in full_design.merged_support:
        ref = pair[0].m if c.weight < 0.5 else pair[1].m
        assert np.max(np.abs(c.fisher - ref)) <= 0.01 * np.max(np.abs(ref))


def test_non_convergence_reports_best_so_far():
    m = random_menu(5, n=6)
    res = optimize_a_design(m, DesignOptions(max_iters=1, exchange_every=0, gap_tol=1e-14))
    assert not res.converged
    assert res.objective <= a_objective(m, np.full(6, 1 / 6))


@settings(max_examples=15)
@given(st.integers(0, 2**31))
def test_random_menu_against_brute_force(seed):
    m = random_menu(seed)
    res = optimize_a_design(m)
    bf = brute_force_design(m, 0.02)
    obj_bf = a_objective(m, bf)
    assert res.objective <= obj_bf * (1 + 1e-9)
    assert res.objective == pytest.approx(obj_bf, rel=5e-3)


@settings(max_examples=25)
@given(st.integers(0, 2**31), st.floats(1e-3, 1e3))
def test_scale_covariance(seed, c):
    m = random_menu(seed)
    a, b = optimize_a_design(m), optimize_a_design(c * m)
    assert b.objective == pytest.approx(a.objective / c, rel=1e-9)
    assert np.max(np.abs(a.weights.weights - b.weights.weights)) <= 1e-6


@settings(max_examples=25)
@given(st.integers(0, 2**31))
def test_permutation_invariance(seed):
    m = random_menu(seed, n=6)
    perm = np.random.default_rng(seed).permutation(6)
    a, b = optimize_a_design(m), optimize_a_design(m[perm])
    assert b.objective == pytest.approx(a.objective, rel=1e-9)
    assert np.max(np.abs(a.weights.weights[perm] - b.weights.weights)) <= 1e-6


@settings(max_examples=20)
@given(st.integers(0, 2**31))
def test_dirichlet_domination(seed):
    m = random_menu(seed, n=6, p=3)
    res = optimize_a_design(m)
    assert res.converged
    for w in np.random.default_rng(seed).dirichlet(np.ones(6), 100):
        assert res.objective <= a_objective(m, w)


def test_brute_force_examples(pair):
    assert brute_force_design(pair, 0.01).weights == pytest.approx([0.2, 0.8], abs=0.01)
    assert brute_force_design(pair[:1], 0.01).weights == pytest.approx([1.0])
    f = pair[0].m
    assert brute_force_design([f, f, f], 0.02).weights == pytest.approx([0.0, 0.0, 1.0])
    with pytest.raises(ContractError):
        brute_force_design([f] * 7, 0.02)
    with pytest.raises(ContractError):
        brute_force_design([f, f], 0.05)


def test_schur_examples():
    rng = np.random.default_rng(6)
    f = random_psd(rng, 2, 0.5)
    finv = np.linalg.inv(f)
    assert schur_certificate(finv, f)
    assert not schur_certificate(finv - 0.01 * np.eye(2), f)
    with pytest.raises(ContractError):
        schur_certificate(np.eye(3), f)


def test_schur_agrees_with_direct_test():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        p = int(rng.integers(2, 4))
        f = random_psd(rng, p, 0.1)
        finv = np.linalg.inv(f)
        r = random_psd(rng, p)
        assert schur_certificate(finv + r, f)
        q = finv + rng.normal(scale=0.3, size=(p, p))
        q = 0.5 * (q + q.T)
        direct = np.linalg.eigvalsh(q - finv)[0] >= 0
        margin = abs(np.linalg.eigvalsh(q - finv)[0])
        if margin > 1e-6:
            assert schur_certificate(q, f) == direct


def test_design_certificate_on_optimum(full_design):
    f = full_design.fisher
    assert schur_certificate(np.linalg.inv(f.m) + 1e-9 * np.eye(2), f)
    assert sym_eigvals(f.m)[0] > 0


def test_design_json_round_trip(tmp_path, full_design, full_fisher):
    path = tmp_path / "design.json"
    save_design(path, full_design, {"meta": {"version": "x"}})
    doc = json.loads(path.read_text())
    assert {"theta_at", "objective", "gap", "support", "options", "iterations", "converged"} <= set(doc)
    w = load_design_weights(path)
    assert len(w) == len(full_fisher.m)
    assert a_objective(full_fisher, w) == pytest.approx(full_design.objective, rel=1e-9)
    classes = merged_support(full_fisher, w)
    assert [c.ids for c in classes] == [c.ids for c in full_design.merged_support]
    with pytest.raises(ContractError):
        load_design_weights({"support": []})


def test_multistart_needs_seed_and_is_deterministic():
    with pytest.raises(ContractError):
        DesignOptions(multistart=3)
    m = random_menu(8)
    a = optimize_a_design(m, DesignOptions(multistart=3, seed=1))
    b = optimize_a_design(m, DesignOptions(multistart=3, seed=1))
    assert np.array_equal(a.weights.weights, b.weights.weights)
