import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import spearmanr

from clselect.errors import DegenerateMaskError, ParameterDomainError
from clselect.estimator import (
    ComponentMask,
    EstimatorConfig,
    JackknifeSet,
    MaskObjective,
    ObjectiveValue,
    PENALTY_PRESETS,
    fit_mask,
    g0_common_location,
    g_hat,
    g_hat_penalized,
    jackknife_groups,
    one_step_pseudo_values,
    penalty_weight,
    sandwich_variance,
    solve_mcle,
)
from clselect.harness import brute_force_optimum
from clselect.model import (
    CommonLocationFamily,
    CommonLocationSpec,
    Dataset,
    ExchangeablePairFamily,
    ExchangeableSpec,
    OrdinalProbitFamily,
    OrdinalProbitSpec,
    simulate_common_location,
    simulate_exchangeable,
    simulate_ordinal,
)


def closed_form_g(x, bits):
    """Log of the centred squared weighted sums minus twice the log mask size."""
    w = np.asarray(bits, float)
    r = (x - x.mean(axis=0)) @ w
    return math.log(np.sum(r * r)) - 2 * math.log(w.sum())


# --- ComponentMask ---------------------------------------------------------------


@given(st.integers(1, 12).flatmap(lambda M: st.tuples(st.just(M), st.integers(0, 2**M - 1))))
def test_mask_key_round_trip(args):
    M, key = args
    mask = ComponentMask.from_key(key, M)
    assert mask.key == key
    assert ComponentMask.from_bitstring(mask.bitstring()) == mask
    assert mask.popcount == bin(key).count("1")


def test_mask_equality_is_bitwise():
    a = ComponentMask([1, 0, 1])
    assert a == ComponentMask.from_indices([0, 2], 3)
    assert hash(a) == hash(ComponentMask.from_bitstring("101"))
    assert a != ComponentMask([1, 0, 1, 0])
    assert ComponentMask([0, 0]).is_degenerate


# --- McLE -----------------------------------------------------------------------


def test_mcle_closed_form_examples():
    data = Dataset(np.array([[0.0, 2.0], [2.0, 4.0]]))
    fam = CommonLocationFamily(2)
    assert solve_mcle(fam, data, [1, 1])[0] == pytest.approx(2.0)
    assert solve_mcle(fam, data, [0, 1])[0] == pytest.approx(3.0)


def test_mcle_rejects_empty_mask():
    data = Dataset(np.array([[0.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(DegenerateMaskError):
        solve_mcle(CommonLocationFamily(2), data, [0, 0])


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.integers(1, 2**6 - 1))
def test_mcle_newton_matches_closed_form(seed, key):
    data = simulate_common_location(CommonLocationSpec(6, 4, 0.5, mu=0.3), 15, seed)
    fam = CommonLocationFamily(6)
    mask = ComponentMask.from_key(key, 6)
    closed = solve_mcle(fam, data, mask)
    newton = solve_mcle(fam, data, mask, np.array([5.0]), EstimatorConfig(use_closed_form=False))
    assert newton[0] == pytest.approx(closed[0], abs=1e-10)


def test_pairwise_mcle_consistent_for_single_pair():
    data = simulate_exchangeable(ExchangeableSpec(2, 0.5), 20_000, 13)
    fam = ExchangeablePairFamily(2)
    rho = solve_mcle(fam, data, [1], fam.pilot(data))
    se = math.sqrt(sandwich_variance(fam, data, [1], rho).estimate_variance[0, 0])
    assert abs(rho[0] - 0.5) < 3 * se
    assert np.abs(fam.scores(rho, data).sum()) < 1e-9


def test_ordinal_mcle_solves_score_equation():
    spec = OrdinalProbitSpec(5, 0.4, [-0.5, 0.5], case_fraction=0.3)
    data = simulate_ordinal(spec, 400, 2)
    fam = OrdinalProbitFamily(spec)
    theta = solve_mcle(fam, data, np.ones(5, bool), np.zeros(1))
    assert abs(fam.scores(theta, data).sum()) <= 1e-9
    assert abs(theta[0] - 0.4) < 0.3


# --- pseudo-values and the objective -------------------------------------------


def test_pseudo_values_two_point_example():
    data = Dataset(np.array([[0.0], [2.0]]))
    fam = CommonLocationFamily(1)
    for inner in ("jacobian", "outer"):
        jk = one_step_pseudo_values(fam, data, [1], np.array([1.0]), EstimatorConfig(inner=inner))
        np.testing.assert_allclose(jk.pseudo_values[:, 0], [2.0, 0.0])
        assert g_hat(jk).g == pytest.approx(math.log(2.0))


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.integers(1, 2**5 - 1), st.sampled_from([5, 25]))
def test_pseudo_values_equal_exact_leave_one_out(seed, key, n):
    data = simulate_common_location(CommonLocationSpec(5, 3, 0.6), n, seed)
    fam = CommonLocationFamily(5)
    mask = ComponentMask.from_key(key, 5)
    mu = solve_mcle(fam, data, mask)
    jk = one_step_pseudo_values(fam, data, mask, mu)
    keep = np.ones(n, bool)
    for i in range(n):
        keep[i] = False
        loo = solve_mcle(fam, data.subset(keep), mask)[0]
        keep[i] = True
        assert jk.pseudo_values[i, 0] == pytest.approx(loo, abs=1e-10)


@settings(max_examples=20)
@given(st.integers(0, 10_000), st.sampled_from([5, 25]))
def test_g_hat_matches_closed_form_with_constant(seed, n):
    data = simulate_common_location(CommonLocationSpec(10, 8, 0.5), n, seed)
    fam = CommonLocationFamily(10)
    rng = np.random.default_rng(seed)
    for _ in range(5):
        bits = rng.random(10) < 0.5
        if not bits.any():
            bits[0] = True
        jk = one_step_pseudo_values(fam, data, bits, solve_mcle(fam, data, bits))
        expected = closed_form_g(data.observations, bits) - 2 * math.log(n - 1)
        assert g_hat(jk).g == pytest.approx(expected, abs=1e-8)


def test_jackknife_set_arithmetic():
    jk = JackknifeSet(np.array([[2.0], [0.0]]), 1)
    np.testing.assert_allclose(jk.mean, [1.0])
    np.testing.assert_allclose(jk.scatter, [[2.0]])
    np.testing.assert_allclose(jk.variance(), [[1.0]])


def test_g_hat_degenerate_pseudo_values():
    jk = JackknifeSet(np.array([[1.5], [1.5], [1.5]]), 1)
    assert g_hat(jk).g == math.inf
    eps = 1e-3
    value = g_hat(jk, ridge=eps).g
    assert math.isfinite(value) and value >= math.log(eps) - 1e-12


def test_g_hat_ridge_multivariate_duplicates():
    pv = np.array([[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]])
    jk = JackknifeSet(pv, 1)
    assert g_hat(jk).g == math.inf
    assert g_hat(jk, ridge=0.01).g >= 2 * math.log(0.01) - 1e-12


def test_singular_inner_matrix_signals_infinity():
    # with the outer-product inner matrix a component whose scores vanish at theta is singular
    data = Dataset(np.array([[1.0], [1.0], [1.0]]))
    jk = one_step_pseudo_values(CommonLocationFamily(1), data, [1], np.array([1.0]), EstimatorConfig(inner="outer"))
    assert jk.singular
    assert g_hat(jk).g == math.inf


def test_g_hat_invariant_to_observation_order():
    data = simulate_common_location(CommonLocationSpec(6, 4, 0.7), 30, 1)
    perm = np.random.default_rng(0).permutation(30)
    shuffled = Dataset(data.observations[perm])
    fam = CommonLocationFamily(6)
    mask = ComponentMask([1, 1, 0, 1, 0, 1])
    a = MaskObjective(fam, data)(mask)
    b = MaskObjective(fam, shuffled)(mask)
    assert a == pytest.approx(b, abs=1e-12)


def test_g_hat_invariant_to_component_order():
    data = simulate_common_location(CommonLocationSpec(6, 4, 0.7), 30, 2)
    perm = np.array([5, 3, 1, 0, 2, 4])
    permuted = Dataset(data.observations[:, perm])
    fam = CommonLocationFamily(6)
    bits = np.array([1, 1, 0, 1, 0, 1], bool)
    a = MaskObjective(fam, data)(bits)
    b = MaskObjective(fam, permuted)(bits[perm])
    assert a == pytest.approx(b, abs=1e-12)


def test_empty_mask_objective_is_infinite():
    data = simulate_common_location(CommonLocationSpec(3, 2, 0.5), 10, 0)
    assert MaskObjective(CommonLocationFamily(3), data)([0, 0, 0]) == math.inf


def test_mask_objective_is_pure():
    data = simulate_exchangeable(ExchangeableSpec(4, 0.5), 20, 3)
    obj = MaskObjective(ExchangeablePairFamily(4), data)
    masks = [ComponentMask.from_key(k, 6) for k in (5, 63, 17, 5, 40, 63)]
    first = [obj(m) for m in masks]
    again = [MaskObjective(ExchangeablePairFamily(4), data)(m) for m in reversed(masks)]
    assert first == list(reversed(again))


def test_delete_k_groups_partition_observations():
    groups = jackknife_groups(23, 5, seed=4)
    flat = np.sort(np.concatenate(groups))
    np.testing.assert_array_equal(flat, np.arange(23))
    assert [len(g) for g in groups] == [5, 5, 5, 5, 3]
    again = jackknife_groups(23, 5, seed=4)
    assert all(np.array_equal(a, b) for a, b in zip(groups, again))
    with pytest.raises(ParameterDomainError):
        jackknife_groups(5, 5)


def test_delete_k_standard_error_close_to_delete_one():
    data = simulate_common_location(CommonLocationSpec(5, 3, 0.5), 200, 8)
    fam = CommonLocationFamily(5)
    bits = np.ones(5, bool)
    se1 = fit_mask(fam, data, bits).standard_error[0]
    se10 = fit_mask(fam, data, bits, se_group_size=10).standard_error[0]
    assert se10 == pytest.approx(se1, rel=0.35)


# --- penalty ---------------------------------------------------------------------


def test_penalized_objective_examples():
    bits6 = ComponentMask([1] * 6 + [0] * 4)
    assert g_hat_penalized(1.0, bits6, 0.0).total == 1.0
    assert g_hat_penalized(1.0, bits6, 1.0).total == pytest.approx(7.0)
    lam = PENALTY_PRESETS["bic"](100)
    assert lam == pytest.approx(2.302585, abs=1e-6)
    assert g_hat_penalized(0.0, ComponentMask([1]), lam).total == pytest.approx(2.302585, abs=1e-6)


def test_infinite_objective_propagates_through_penalty():
    value = g_hat_penalized(ObjectiveValue(math.inf), ComponentMask([1, 1]), 3.0)
    assert value.total == math.inf and not value.finite


@given(st.floats(-10, 10), st.floats(0.01, 5), st.integers(1, 19))
def test_penalized_total_monotone_in_popcount(g, lam, k):
    small = g_hat_penalized(g, ComponentMask([1] * k + [0] * (20 - k)), lam).total
    large = g_hat_penalized(g, ComponentMask([1] * (k + 1) + [0] * (19 - k)), lam).total
    assert large > small


def test_penalty_weight_scales():
    assert penalty_weight(1.0, 100) == pytest.approx(0.02)
    assert penalty_weight(1.0, 100, "raw") == 1.0
    with pytest.raises(ParameterDomainError):
        penalty_weight(-1.0, 100)


# --- sandwich ---------------------------------------------------------------------


def test_sandwich_scalar_reduction():
    data = simulate_common_location(CommonLocationSpec(1, 0, 0.0), 40, 3)
    fam = CommonLocationFamily(1)
    mu = solve_mcle(fam, data, [1])
    est = sandwich_variance(fam, data, [1], mu)
    assert est.V_hat[0, 0] == pytest.approx(est.K_hat[0, 0] / est.H_hat[0, 0] ** 2, rel=1e-12)


def test_sandwich_pooled_mean_variance():
    data = simulate_common_location(CommonLocationSpec(2, 0, 0.0), 200_000, 5)
    fam = CommonLocationFamily(2)
    mu = solve_mcle(fam, data, [1, 1])
    est = sandwich_variance(fam, data, [1, 1], mu)
    assert data.n * est.estimate_variance[0, 0] == pytest.approx(0.5, abs=0.01)
    np.testing.assert_allclose(est.H_hat, est.H_hat.T)
    assert est.K_hat[0, 0] >= 0


def test_sandwich_and_jackknife_rank_masks_alike():
    data = simulate_common_location(CommonLocationSpec(10, 8, 0.9), 500, 17)
    fam = CommonLocationFamily(10)
    obj = MaskObjective(fam, data)
    rng = np.random.default_rng(3)
    g, v = [], []
    for _ in range(10):
        bits = rng.random(10) < 0.5
        bits[rng.integers(10)] = True
        g.append(obj(bits))
        mu = solve_mcle(fam, data, bits)
        v.append(math.log(sandwich_variance(fam, data, bits, mu).V_hat[0, 0]))
    assert spearmanr(g, v).statistic >= 0.8


# --- analytic log-variance ------------------------------------------------------------


def test_g0_examples():
    assert g0_common_location([1, 0, 0], 0.5, 2) == 0.0
    assert g0_common_location(np.ones(10), 0.5, 8) == pytest.approx(math.log(0.38), abs=1e-12)
    assert g0_common_location(np.ones(10), 0.5, 8) == pytest.approx(-0.9676, abs=1e-4)
    two_uncorrelated = np.r_[np.zeros(8), np.ones(2)]
    assert g0_common_location(two_uncorrelated, 0.5, 8) == pytest.approx(-math.log(2))
    plus_one = two_uncorrelated.copy()
    plus_one[0] = 1
    assert g0_common_location(plus_one, 0.5, 8) == pytest.approx(-math.log(3))
    with pytest.raises(DegenerateMaskError):
        g0_common_location(np.zeros(4), 0.5, 2)


@pytest.mark.parametrize("rho", [0.5, 0.9])
def test_g0_argmin_keeps_uncorrelated_block(rho):
    d, d_star = 10, 8

    def g0(mask):
        return g0_common_location(mask.bits, rho, d_star)

    mask, value = brute_force_optimum(g0, d)
    assert mask.bits[d_star:].all()
    # best number of correlated picks, found by scanning all counts
    by_count = [g0(ComponentMask(np.r_[np.ones(c), np.zeros(d_star - c), np.ones(2)])) for c in range(d_star + 1)]
    assert mask.bits[:d_star].sum() == int(np.argmin(by_count))
    assert value == pytest.approx(min(by_count), abs=1e-12)
    if rho == 0.9:
        assert mask.bits[:d_star].sum() == 1
