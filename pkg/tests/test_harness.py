import math

import numpy as np
import pytest

from clselect.errors import ParameterDomainError
from clselect.estimator import ComponentMask, g0_common_location
from clselect.harness import (
    ExperimentPlan,
    brute_force_optimum,
    common_location_optimum,
    distance_to_optimal_set,
    enumerate_objective,
    gls_location,
    hamming_distance,
    relative_efficiency,
    run_figure1,
    run_table1,
    run_table3,
)
from clselect.model import CommonLocationSpec, simulate_common_location


def plan(table, **kw):
    conf = {"table": table, "n": "20", "d": "4", "rho": "0.6", "B": "4", "seed": "3", "T": "30"}
    conf.update({k: str(v) for k, v in kw.items()})
    return ExperimentPlan.from_config(conf)


# --- oracles ---------------------------------------------------------------------


def test_brute_force_g0_matches_scan():
    def g0(mask):
        return g0_common_location(mask.bits, 0.9, 2)

    values = [g0(ComponentMask.from_key(k, 3)) for k in range(1, 8)]
    mask, value = brute_force_optimum(g0, 3)
    assert value == min(values)
    assert mask.key == 1 + int(np.argmin(values))


def test_brute_force_single_component_and_ties():
    mask, value = brute_force_optimum(lambda m: 2.0, 1)
    assert mask == ComponentMask([1]) and value == 2.0
    mask, _ = brute_force_optimum(lambda m: 0.0, 5)
    assert mask.key == 1


def test_brute_force_guard():
    with pytest.raises(ParameterDomainError):
        brute_force_optimum(lambda m: 0.0, 21)
    with pytest.raises(ParameterDomainError):
        enumerate_objective(lambda m: 0.0, 0)


def test_hamming_distance_examples():
    a = ComponentMask([1, 0, 1, 1])
    assert hamming_distance(a, a) == 0
    assert hamming_distance([1, 0, 1], [0, 0, 1]) == 1
    assert hamming_distance(a.bits, ~a.bits) == 4
    with pytest.raises(ParameterDomainError):
        hamming_distance([1, 0], [1, 0, 0])


def test_optimal_structure_and_distance():
    spec = CommonLocationSpec(50, 40, 0.9)
    c, value, canonical = common_location_optimum(spec)
    assert c == 1
    # one correlated plus ten uncorrelated components: log 11 - 2 log 11
    assert value == pytest.approx(-math.log(11), abs=1e-12)
    assert distance_to_optimal_set(canonical, spec) == 0
    # any other single correlated pick is also optimal
    other = canonical.bits.copy()
    other[0], other[5] = False, True
    assert distance_to_optimal_set(other, spec) == 0
    # dropping two uncorrelated components and adding two correlated ones costs 4
    worse = canonical.bits.copy()
    worse[[45, 46]] = False
    worse[[1, 2]] = True
    assert distance_to_optimal_set(worse, spec) == 4


@pytest.mark.parametrize("d,d_star,rho", [(8, 6, 0.9), (6, 6, 0.3), (7, 3, 0.5)])
def test_optimum_structure_matches_enumeration(d, d_star, rho):
    spec = CommonLocationSpec(d, d_star, rho)
    _, value, canonical = common_location_optimum(spec)
    best, best_value = brute_force_optimum(lambda m: g0_common_location(m.bits, rho, d_star), d)
    assert value == pytest.approx(best_value, abs=1e-12)
    assert distance_to_optimal_set(best, spec) == 0


def test_gls_equals_equal_weights_without_correlation():
    spec = CommonLocationSpec(6, 0, 0.0, mu=1.5)
    data = simulate_common_location(spec, 30, 2)
    assert gls_location(data, spec.covariance()) == pytest.approx(data.observations.mean(), abs=1e-10)


def test_relative_efficiency_is_variance_ratio():
    a = np.array([1.0, 3.0, 2.0, 6.0])
    b = np.array([1.0, 2.0, 1.5, 2.5])
    re, se = relative_efficiency(a, b)
    assert re == pytest.approx(a.var(ddof=1) / b.var(ddof=1))
    assert se > 0


# --- plans ------------------------------------------------------------------------


def test_plan_grid_and_defaults():
    p = ExperimentPlan.from_config({"table": "table1", "n": "50,100", "d": "10", "rho": "0.5,0.9", "seed": "1"})
    assert len(p.cells) == 4
    assert all(c["d_star"] == 8 for c in p.cells)
    assert p.B == 50 and p.sampler.xi == 0.7
    assert p.methods[0] == "no-selection"


def test_plan_validation():
    with pytest.raises(ParameterDomainError):
        ExperimentPlan.from_config({"table": "table9", "n": "5", "d": "2", "rho": "0.1"})
    with pytest.raises(ParameterDomainError):
        plan("table1", B=0)
    with pytest.raises(ParameterDomainError):
        plan("table1", methods="cls9")
    with pytest.raises(ParameterDomainError):
        plan("table1", rho=1.5)


# --- experiments ----------------------------------------------------------------


def test_table1_summary_rows_and_invariants():
    summary = run_table1(plan("table1"))
    methods = {r["method"] for r in summary.rows}
    assert methods == {"no-selection", "cls1-min", "cls1-threshold", "cls2", "mle-known", "mle-unknown"}
    for row in summary.rows:
        if row["n_ok"]:
            assert row["var"] >= 0
        if row["method"] in ("cls1-min", "cls1-threshold", "cls2") and row["n_ok"]:
            assert 1 <= row["mean_count"] <= 4
    assert summary.row("no-selection")["mean_count"] == 4


def test_table1_order_independent_across_workers():
    p = plan("table1", B=3, methods="no-selection,cls1-min,cls2")
    serial = run_table1(p, jobs=1)
    parallel = run_table1(p, jobs=2)
    assert serial.to_csv_text() == parallel.to_csv_text()


def test_single_replicate_marks_standard_errors_unavailable():
    summary = run_table1(plan("table1", B=1, methods="no-selection,cls1-min"))
    row = summary.row("cls1-min")
    assert row["var"] == 0.0 and math.isnan(row["var_se"]) and math.isnan(row["count_se"])
    assert ",NA," in summary.to_csv_text()


def test_mle_unknown_not_applicable_when_d_not_below_n():
    summary = run_table1(plan("table1", n=4, d=5, B=2, methods="no-selection,mle-unknown"))
    assert not summary.row("mle-unknown")["valid"]


def test_table3_single_pair_coincides_with_no_selection():
    summary = run_table3(plan("table3", d=2, n=30, B=20, methods="apw,cls1-min"))
    row = summary.row("cls1-min")
    assert row["re"] == pytest.approx(1.0, abs=1e-12)
    assert row["mean_count"] == 1


def test_table3_reports_relative_efficiency():
    summary = run_table3(plan("table3", d=4, n=15, B=6, methods="apw,cls1-min,cls1-threshold"))
    assert summary.row("apw")["re"] == 1.0
    row = summary.row("cls1-min")
    assert row["re"] > 0 and row["re_se"] >= 0
    assert 1 <= row["mean_count"] <= 6


def test_figure1_series_shapes():
    p = plan("figure1", d=12, n=40, rho=0.9, T=60)
    res = run_figure1(p)
    assert len(res.objective) == 60 and len(res.stable_objective) == 60 and len(res.hamming) == 60
    assert len(res.frequencies) == 12
    assert res.series_csv("hamming").startswith("sweep,distance\r\n")
    limits = {row[3] for row in res.objective}
    assert len(limits) == 1
    for t, g_lam, g, _ in res.objective:
        assert g_lam >= g


def test_figure1_uncorrelated_frequencies_dominate():
    p = plan("figure1", d=12, d_star=8, n=100, rho=0.9, T=200)
    res = run_figure1(p)
    freq = np.array([f for _, _, f in res.frequencies])
    lowest_uncorrelated = freq[8:].min()
    assert np.sum(freq[:8] >= lowest_uncorrelated) <= 1
