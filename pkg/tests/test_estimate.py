import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import gammaln
from scipy.stats import multinomial

from qoed.design import DesignWeights
from qoed.errors import ContractError, InvalidStartError
from qoed.estimate import (GridLogProb, GridSpec, OutcomeDataset, adaptive_loop, allocate_runs, default_grid,
                           estimate, log_likelihood, mle_grid, mle_refine, mse_curve, round_seed, sample_dataset)
from qoed.fisher import outcome_probs
from qoed.menu import BlochVector, ExperimentMenu, build_full_menu, optimal_pair_menu, suboptimal_menu, \
    vectors_to_angles
from qoed.model import ModelParams

TRUTH = ModelParams(1.1, 0.9)
GUESS = ModelParams(1.0, 1.0)
OPT_W = [0.2, 0.8]


def stationary_menu(n=3, t=1.0):
    zero = np.zeros((n, 2, 2))
    return ExperimentMenu(zero, zero, np.full(n, t))


def test_allocation_examples():
    assert allocate_runs(OPT_W, 200).tolist() == [40, 160]
    assert allocate_runs([1.0], 7).tolist() == [7]
    u = allocate_runs(np.full(12, 1 / 12), 200)
    assert u.sum() == 200 and set(u.tolist()) == {16, 17}
    # equal remainders go to the lower index
    assert allocate_runs([0.5, 0.5], 3).tolist() == [2, 1]
    with pytest.raises(ContractError):
        allocate_runs([1.0], 0)


@given(st.integers(0, 2**31), st.integers(1, 10**6), st.integers(1, 30))
def test_allocation_properties(seed, n, k):
    w = np.random.default_rng(seed).dirichlet(np.ones(k))
    a = allocate_runs(w, n)
    assert a.sum() == n and np.all(np.abs(a - w * n) < 1)


def test_sampling_stationary_and_deterministic():
    ds = sample_dataset(stationary_menu(), np.full(3, 1 / 3), TRUTH, 30, seed=5)
    assert ds.counts[:, 1:].sum() == 0 and ds.total_n == 30
    m = suboptimal_menu()
    a = sample_dataset(m, np.full(12, 1 / 12), TRUTH, 500, seed=11)
    b = sample_dataset(m, np.full(12, 1 / 12), TRUTH, 500, seed=11)
    c = sample_dataset(m, np.full(12, 1 / 12), TRUTH, 500, seed=12)
    assert a == b and a != c


def test_sampling_streams_are_per_experiment():
    # the counts of one experiment do not depend on which others are sampled alongside it
    m = suboptimal_menu()
    w = np.zeros(12)
    w[[3, 7]] = 0.5
    both = sample_dataset(m, w, TRUTH, 400, seed=3)
    w2 = np.zeros(12)
    w2[[3, 9]] = 0.5
    other = sample_dataset(m, w2, TRUTH, 400, seed=3)
    assert both.entries[0] == other.entries[0]


def test_sampling_frequencies():
    m = optimal_pair_menu().subset([1])
    ds = sample_dataset(m, [1.0], TRUTH, 10**6, seed=2)
    p = outcome_probs(m[0], TRUTH)
    sigma = np.sqrt(p * (1 - p) / 1e6)
    assert np.all(np.abs(ds.counts[0] / 1e6 - p) <= 4 * sigma + 1e-12)


def test_log_likelihood_examples():
    menu = stationary_menu()
    assert log_likelihood(OutcomeDataset(()), menu, TRUTH) == 0.0
    # |up up> measured along x on qubit 1: outcomes 0 and 2 are equally likely
    z, x = np.array([0.0, 0.0]), np.array([np.pi / 2, 0.0])
    half = ExperimentMenu(np.array([[z, z]]), np.array([[x, z]]), [1.0])
    ds = OutcomeDataset.from_counts([0], [[1, 0, 0, 0]])
    assert log_likelihood(ds, half, TRUTH) == pytest.approx(np.log(0.5), abs=1e-12)
    impossible = OutcomeDataset.from_counts([0], [[3, 1, 0, 0]])
    assert log_likelihood(impossible, menu, TRUTH) == -np.inf
    with pytest.raises(ContractError):
        log_likelihood(OutcomeDataset.from_counts([5], [[1, 0, 0, 0]]), menu, TRUTH)


def test_log_likelihood_against_multinomial_pmf():
    m = suboptimal_menu()
    ds = sample_dataset(m, np.full(12, 1 / 12), TRUTH, 600, seed=4)
    for theta in (TRUTH, GUESS, ModelParams(0.5, 2.0)):
        ref = 0.0
        for e in ds.entries:
            c = np.array(e.counts)
            ref += multinomial.logpmf(c, e.n_runs, outcome_probs(m[e.id], theta))
            ref -= gammaln(e.n_runs + 1) - gammaln(c + 1).sum()
        assert log_likelihood(ds, m, theta) == pytest.approx(ref, rel=1e-10)


@settings(max_examples=30)
@given(st.floats(0, 3), st.floats(0, 2 * np.pi), st.sampled_from([1.0, 1.1, 1.4]))
def test_log_likelihood_g_periodicity(f, g, t):
    m = suboptimal_menu().with_times([t])
    ds = sample_dataset(m, np.full(12, 1 / 12), TRUTH, 240, seed=9)
    a = log_likelihood(ds, m, ModelParams(f, g))
    b = log_likelihood(ds, m, ModelParams(f, g + np.pi / t))
    if np.isfinite(a):
        assert abs(a - b) <= 1e-8
    else:
        assert b == a


def test_grid_spec_text_and_defaults():
    g = GridSpec.parse("0:3:31,0.5:2:16")
    assert GridSpec.parse(g.to_text()) == g and g.step == pytest.approx((0.1, 0.1))
    assert default_grid([1.0]) == GridSpec(0.0, 3.0, 301, 0.0, np.pi, 301)
    assert default_grid([2.0]).g_max == pytest.approx(np.pi / 2)
    assert default_grid([1.0, 1.1, 1.4]).g_max == pytest.approx(2 * np.pi)
    for bad in ("0:3:1,0:1:5", "0:3,0:1:5", "3:0:4,0:1:5"):
        with pytest.raises(ContractError):
            GridSpec.parse(bad)


def test_surface_matches_pointwise_likelihood():
    m = optimal_pair_menu()
    ds = sample_dataset(m, OPT_W, TRUTH, 200, seed=1)
    grid = GridSpec(0.0, 3.0, 31, 0.0, np.pi, 29)
    surf = mle_grid(ds, m, grid)
    rng = np.random.default_rng(0)
    for i, j in zip(rng.integers(0, 31, 25), rng.integers(0, 29, 25)):
        ref = log_likelihood(ds, m, ModelParams(surf.f_axis[i], surf.g_axis[j]))
        assert surf.loglik[i, j] == pytest.approx(ref, rel=1e-10) or surf.loglik[i, j] == ref == -np.inf
    i, j = np.unravel_index(np.argmax(surf.loglik), surf.loglik.shape)
    assert surf.argmax == (surf.f_axis[i], surf.g_axis[j])


def test_default_grid_single_shot():
    m = optimal_pair_menu()
    ds = sample_dataset(m, OPT_W, TRUTH, 200, seed=1)
    surf = mle_grid(ds, m)
    assert surf.loglik.shape == (301, 301)
    refined = mle_refine(ds, m, surf.argmax, step=0.01)
    assert abs(surf.argmax[0] - refined.F) <= 0.05 and abs(surf.argmax[1] - refined.G) <= 0.05
    assert np.hypot(refined.F - 1.1, refined.G - 0.9) <= 0.25


def test_flat_surface_tie_break():
    ds = OutcomeDataset.from_counts([0, 1], [[5, 0, 0, 0], [2, 0, 0, 0]])
    surf = mle_grid(ds, stationary_menu(), GridSpec(0.5, 3.0, 11, 0.25, 3.0, 12))
    assert np.max(np.abs(surf.loglik)) <= 1e-12
    assert surf.argmax == (0.5, 0.25)


def test_multi_time_breaks_periodicity():
    base = optimal_pair_menu()
    single_grid = GridSpec(0.0, 3.0, 61, 0.0, 2 * np.pi, 241)
    ds1 = sample_dataset(base, OPT_W, TRUTH, 2000, seed=7)
    s1 = mle_grid(ds1, base, single_grid)
    multi = base.with_times([1.0, 1.1, 1.4])
    ds3 = sample_dataset(multi, np.repeat(OPT_W, 3) / 3, TRUTH, 6000, seed=7)
    s3 = mle_grid(ds3, multi)
    for surf, n_peaks in ((s1, 2), (s3, 1)):
        top = surf.loglik >= surf.loglik.max() - 5.0
        gs = surf.g_axis[np.nonzero(top)[1]]
        # count clusters of near-maximal G values separated by more than 1
        clusters = 1 + int(np.sum(np.diff(np.sort(gs)) > 1.0))
        assert clusters == n_peaks
    assert abs(s3.argmax[1] - 0.9) < 0.2


def test_outcome_relabeling_equivariance():
    m = suboptimal_menu()
    ds = sample_dataset(m, np.full(12, 1 / 12), TRUTH, 600, seed=8)
    mv = m.meas_vectors.copy()
    mv[:, 0] *= -1  # flip the qubit-1 axis: outcome 2*a1 + a2 maps to 2*(1-a1) + a2
    flipped = ExperimentMenu(m.prep_angles, vectors_to_angles(mv), m.times)
    ds_f = OutcomeDataset.from_counts(ds.ids, ds.counts[:, [2, 3, 0, 1]])
    grid = GridSpec(0.1, 3.0, 30, 0.0, np.pi, 30)
    a, b = mle_grid(ds, m, grid), mle_grid(ds_f, flipped, grid)
    fin = np.isfinite(a.loglik)
    assert np.array_equal(fin, np.isfinite(b.loglik))
    assert np.allclose(a.loglik[fin], b.loglik[fin], rtol=1e-10, atol=1e-9)


def test_refine_contracts():
    m = optimal_pair_menu()
    ds = sample_dataset(m, OPT_W, TRUTH, 400, seed=3)
    est, surf = estimate(ds, m)
    start_ll = np.max(surf.loglik)
    assert log_likelihood(ds, m, est) >= start_ll
    again = mle_refine(ds, m, est.free_values(), step=1e-3)
    assert np.max(np.abs(again.free_values() - est.free_values())) <= 1e-6
    stat = OutcomeDataset.from_counts([0], [[3, 1, 0, 0]])
    with pytest.raises(InvalidStartError):
        mle_refine(stat, stationary_menu(), (1.0, 1.0))
    with pytest.raises(ContractError):
        mle_refine(ds, m, (1.0,))


def test_refine_consistency_large_n():
    m = optimal_pair_menu()
    ds = sample_dataset(m, OPT_W, TRUTH, 10**5, seed=21)
    est, _ = estimate(ds, m)
    assert np.hypot(est.F - 1.1, est.G - 0.9) <= 0.02


def test_dataset_json_and_invariants(tmp_path):
    ds = sample_dataset(suboptimal_menu(), np.full(12, 1 / 12), TRUTH, 100, seed=4)
    ds.save(tmp_path / "d.json")
    back = OutcomeDataset.load(tmp_path / "d.json")
    assert back.entries == ds.entries and back.seed == 4
    with pytest.raises(ContractError):
        OutcomeDataset.from_counts([0, 0], [[1, 0, 0, 0], [1, 0, 0, 0]])
    with pytest.raises(ContractError):
        OutcomeDataset.from_json({"entries": [{"id": 0, "n_runs": 3, "counts": [1, 1, 0, 0]}]})
    pooled = ds.pooled(ds)
    assert pooled.total_n == 200 and np.array_equal(pooled.counts, 2 * ds.counts)


def test_round_seeds_distinct():
    seeds = {round_seed(1, k) for k in range(100)}
    assert len(seeds) == 100 and round_seed(1, 3) == round_seed(1, 3)


@pytest.fixture(scope="module")
def reduced_menu(full_design, full_menu):
    ids = np.union1d(np.arange(0, len(full_menu), 97), full_design.weights.support)
    return full_menu.subset(ids)


def test_adaptive_single_round_is_single_shot(reduced_menu):
    from qoed.design import optimize_a_design
    from qoed.fisher import menu_fisher
    trace = adaptive_loop(reduced_menu, GUESS, TRUTH, 1, 200, seed=5)
    design = optimize_a_design(menu_fisher(reduced_menu, GUESS))
    ds = sample_dataset(reduced_menu, design.weights, TRUTH, 200, round_seed(5, 1))
    est, _ = estimate(ds, reduced_menu, template=GUESS)
    assert len(trace) == 1 and trace[0].dataset == ds
    assert np.array_equal(trace[0].estimate.free_values(), est.free_values())


def test_adaptive_median_error_trend(reduced_menu):
    grid = GridSpec(0.0, 3.0, 121, 0.0, np.pi, 121)
    err = np.array([[np.hypot(r.estimate.F - 1.1, r.estimate.G - 0.9)
                     for r in adaptive_loop(reduced_menu, GUESS, TRUTH, 3, 200, seed=s, grid=grid)]
                    for s in range(50)])
    med = np.median(err, axis=0)
    assert np.all(np.diff(med) <= 0), med


def test_adaptive_stable_when_guess_is_truth(reduced_menu):
    trace = adaptive_loop(reduced_menu, GUESS, GUESS, 2, 20000, seed=3)
    assert np.hypot(*(trace[0].estimate.free_values() - GUESS.free_values())) <= 0.01
    s1 = {c.ids for c in trace[0].design.merged_support}
    s2 = {c.ids for c in trace[1].design.merged_support}
    assert s1 == s2


def test_mse_curve_reference_and_saturation(theta_t):
    m = optimal_pair_menu()
    tab = mse_curve(m, OPT_W, TRUTH, GUESS, [5000, 10000], trials=400, seed=3)
    assert tab.reference[0] == pytest.approx(2 * tab.reference[1], rel=1e-14)
    assert tab.reference[1] == pytest.approx(0.8327 / 1e4, rel=0.01)
    assert tab.mse_mean[1] == pytest.approx(tab.reference[1], rel=0.25)
    assert tab.estimates.shape == (2, 400, 2)
    with pytest.raises(ContractError):
        mse_curve(m, OPT_W, TRUTH, GUESS, [100], trials=5, seed=1)


def test_mse_table_csv(tmp_path):
    tab = mse_curve(optimal_pair_menu(), OPT_W, TRUTH, GUESS, [100], trials=10, seed=1,
                    grid=GridSpec(0, 3, 31, 0, np.pi, 31))
    tab.write_csv(tmp_path / "m.csv", ["version=x"])
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "# version=x" and lines[1].startswith("n,mse_optimal,mse_reference")
