import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridplan.grid_model import BusKind, ConventionalMachine, load_fixture, without_renewables
from gridplan.security import (
    Contingency,
    ContingencyKind,
    SeverityWeights,
    Status,
    apply_contingency,
    enumerate_n1,
    rank_contingencies,
    ranked_csv,
    report_json,
    severity_index,
)
from gridplan.steady_state import DC_LINEAR, LimitReport, check_limits, solve_power_flow

from conftest import FIXTURES


@pytest.fixture(scope="module")
def overload():
    return load_fixture("overload3")


@pytest.mark.parametrize("name", FIXTURES)
def test_n1_count(name):
    case = load_fixture(name)
    conts = enumerate_n1(case)
    assert len(conts) == len(case.branches) + len(case.machines)
    kinds = [c.kind for c in conts]
    assert kinds == sorted(kinds, key=lambda k: k is ContingencyKind.MACHINE_OUTAGE)


def test_n1_without_machines(overload):
    assert len(enumerate_n1(dataclasses.replace(overload, machines=()))) == 3


def test_ninebus_has_twelve(ninebus):
    ids = [c.id for c in enumerate_n1(ninebus)]
    assert len(ids) == 12
    assert ids[:2] == ["branch:L45", "branch:L56"] and ids[-1] == "machine:G3"


def test_apply_is_non_destructive(ninebus):
    before = dataclasses.replace(ninebus)
    for c in enumerate_n1(ninebus):
        apply_contingency(ninebus, c)
    assert ninebus == before
    post = apply_contingency(ninebus, Contingency.branch("L45")).case
    restored = dataclasses.replace(post, branches=ninebus.branches)
    assert restored == ninebus


def test_parallel_circuit_takes_full_transfer():
    case = load_fixture("doublecircuit")
    pre = solve_power_flow(case, DC_LINEAR)
    post = apply_contingency(case, Contingency.branch("C1"))
    assert post.feasible
    sol = solve_power_flow(post.case, DC_LINEAR)
    assert sol.p_from[0] == pytest.approx(pre.p_from.sum())


def test_idle_machine_outage_leaves_flow_unchanged(overload):
    idle = ConventionalMachine("G9", "3", 100.0, 3.0, 0.0, 0.0, 0.3)
    case = dataclasses.replace(overload, machines=overload.machines + (idle,))
    post = apply_contingency(case, Contingency.machine("G9"))
    assert post.feasible
    a = solve_power_flow(case)
    b = solve_power_flow(post.case)
    np.testing.assert_array_equal(a.vm, b.vm)
    np.testing.assert_array_equal(a.p_from, b.p_from)


def test_radial_branch_islands(ninebus):
    post = apply_contingency(ninebus, Contingency.branch("T2"))
    assert not post.feasible and "2" in post.reason


def test_machine_outage_redispatch(overload):
    post = apply_contingency(overload, Contingency.machine("G2"))
    assert post.feasible
    g1 = post.case.machine("G1")
    assert g1.p_set == pytest.approx(150.0)
    assert post.case.bus("3").kind is BusKind.PQ


def test_slack_machine_outage_promotes_largest(overload):
    post = apply_contingency(overload, Contingency.machine("G1"))
    assert post.feasible
    assert post.case.slack_bus.id == "3"
    assert post.case.bus("1").kind is BusKind.PQ
    assert solve_power_flow(post.case).converged


def test_insufficient_headroom(ninebus):
    post = apply_contingency(ninebus, Contingency.machine("G1"))
    assert not post.feasible and "headroom" in post.reason


def test_severity_zero_when_clean(overload):
    sol = solve_power_flow(overload)
    lim = check_limits(overload, sol)
    s = severity_index(overload, sol, lim, 0.5)
    assert (s.voltage_term, s.thermal_term, s.margin_term, s.total) == (0.0, 0.0, 0.0, 0.0)


def test_severity_thermal_substitution(overload):
    sol = solve_power_flow(overload)
    lim = LimitReport(thermal_violations=[("L1", 1.5)], loadings={"L1": 1.5, "L2": 0.3})
    s = severity_index(overload, sol, lim, 1.0)
    assert s.thermal_term == 0.5 and s.total == 0.5


def test_severity_margin_term(overload):
    sol = solve_power_flow(overload)
    lim = LimitReport(loadings={"L1": 0.5})
    assert severity_index(overload, sol, lim, 0.05).margin_term == pytest.approx(0.75)


def test_diverged_gets_penalty(overload):
    w = SeverityWeights(divergence_penalty=1e6)
    s = severity_index(overload, None, None, None, w)
    assert s.diverged and s.total == 1e6 and s.status is Status.DIVERGED


@settings(max_examples=60, deadline=None)
@given(
    loadings=st.lists(st.floats(0.0, 3.0), min_size=3, max_size=3),
    vm=st.floats(0.7, 0.95),
    bump=st.floats(0.0, 1.0),
    which=st.integers(0, 3),
)
def test_severity_monotone(loadings, vm, bump, which):
    case = load_fixture("overload3")
    sol = solve_power_flow(case)
    ids = ["L1", "L2", "L3"]

    def report(lds, v):
        return LimitReport(
            thermal_violations=[(i, x) for i, x in zip(ids, lds) if x > 1],
            voltage_violations=[("2", v, "v_min")] if v < 0.95 else [],
            loadings=dict(zip(ids, lds)),
        )

    base = severity_index(case, sol, report(loadings, vm), 0.3).total
    lds = list(loadings)
    v = vm
    if which < 3:
        lds[which] += bump
    else:
        v -= bump * 0.1
    assert severity_index(case, sol, report(lds, v), 0.3).total >= base


def test_overload_ranked_first_every_level(overload):
    rep = rank_contingencies(overload)
    assert len(rep.levels) == 11
    for lv in rep.levels:
        assert lv.worst.contingency.id == "branch:L3"
        assert lv.worst.score.thermal_term > 0
        assert not lv.secure


def test_ranking_is_permutation_and_deterministic(overload):
    a = rank_contingencies(overload, penetration_levels=[0.0, 1.0])
    b = rank_contingencies(overload, penetration_levels=[0.0, 1.0])
    assert ranked_csv(a) == ranked_csv(b)
    assert report_json(a) == report_json(b)
    ids = sorted(c.id for c in enumerate_n1(overload))
    for lv in a.levels:
        assert sorted(r.contingency.id for r in lv.results) == ids


def test_workers_do_not_change_ranking(overload):
    a = rank_contingencies(overload, penetration_levels=[0.5])
    b = rank_contingencies(overload, penetration_levels=[0.5], workers=2)
    assert ranked_csv(a) == ranked_csv(b)


def test_zero_weights_give_id_order(overload):
    w = SeverityWeights(voltage=0.0, thermal=0.0, margin=0.0)
    rep = rank_contingencies(overload, penetration_levels=[0.0], weights=w)
    got = [r.contingency.id for r in rep.levels[0].results]
    assert got == ["branch:L1", "branch:L2", "branch:L3", "machine:G1", "machine:G2"]
    assert rep.levels[0].secure


def test_level_zero_equals_renewable_free(overload, ninebus):
    for case in (overload, ninebus):
        a = rank_contingencies(case, penetration_levels=[0.0]).levels[0]
        b = rank_contingencies(without_renewables(case), penetration_levels=[0.0]).levels[0]
        assert [(r.contingency.id, r.score) for r in a.results] == [(r.contingency.id, r.score) for r in b.results]


def test_top_k_limits_ac_refinement(overload):
    rep = rank_contingencies(overload, penetration_levels=[0.0], top_k=1)
    screens = {r.contingency.id: r.screen for r in rep.levels[0].results}
    assert screens["branch:L3"] == "ac"
    assert list(screens.values()).count("ac") == 1


def test_csv_header(overload):
    head = ranked_csv(rank_contingencies(overload, penetration_levels=[0.0])).splitlines()[0]
    assert head.startswith("penetration,rank,contingency_id,kind,total,voltage_term,thermal_term,margin_term,diverged")
