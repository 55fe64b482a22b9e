import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridplan.adequacy import (
    DEFAULT_LEVELS,
    MONTE_CARLO,
    ElccUndefined,
    analytic_adequacy,
    build_outage_table,
    case_outage_table,
    compute_elcc,
    compute_lole,
    compute_lolp,
    level_seed,
    monte_carlo_lole,
    penetration_sweep,
    sweep_csv,
)
from gridplan.grid_model import ConventionalMachine, RenewableKind, RenewablePlant, set_penetration, without_renewables


def unit(cap, q, uid="U"):
    return ConventionalMachine(uid, "1", cap, 4.0, 0.0, cap, 0.3, forced_outage_rate=q)


def enumerate_table(units):
    """Exhaustive 2^n enumeration of (capacity out -> probability)."""
    out = {}
    for states in itertools.product((0, 1), repeat=len(units)):
        p = 1.0
        c = 0.0
        for (cap, q), down in zip(units, states):
            p *= q if down else 1 - q
            c += cap if down else 0.0
        if p > 0:
            out[c] = out.get(c, 0.0) + p
    return out


def assert_table_matches(units):
    table = build_outage_table([unit(c, q, f"U{i}") for i, (c, q) in enumerate(units)])
    oracle = enumerate_table(units)
    got = table.as_dict()
    for c in set(got) | set(oracle):
        assert abs(got.get(c, 0.0) - oracle.get(c, 0.0)) <= 1e-12


def test_two_unit_table():
    t = build_outage_table([unit(100, 0.1), unit(100, 0.1)])
    assert t.as_dict() == pytest.approx({0.0: 0.81, 100.0: 0.18, 200.0: 0.01}, abs=1e-15)
    assert t.total_capacity == 200.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 500), st.floats(0.0, 1.0)), min_size=1, max_size=10))
def test_table_matches_enumeration(units):
    assert_table_matches([(float(c), q) for c, q in units])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 300), st.floats(0.001, 0.5)), min_size=1, max_size=8),
       st.floats(0.0, 2000.0))
def test_shortage_probability_matches_enumeration(units, load):
    table = build_outage_table([unit(float(c), q, f"U{i}") for i, (c, q) in enumerate(units)])
    total = sum(c for c, _ in units)
    oracle = sum(p for c, p in enumerate_table([(float(c), q) for c, q in units]).items() if total - c < load)
    assert table.shortage_probability(load) == pytest.approx(oracle, abs=1e-12)
    assert math.fsum(table.probability) == pytest.approx(1.0, abs=1e-12)


def test_ninebus_table_matches_enumeration(ninebus):
    units = [(m.p_max, m.forced_outage_rate) for m in ninebus.machines]
    table = case_outage_table(ninebus, penetration=0.0)
    oracle = enumerate_table(units)
    for c, p in oracle.items():
        assert abs(table.as_dict()[c] - p) <= 1e-12


def test_hand_lole_lolp(twounit):
    res = analytic_adequacy(twounit)
    assert abs(res.lole - 69.35) <= 1e-9
    assert abs(res.lolp - 0.19) <= 1e-9


def test_firm_unit_never_raises_lole(ninebus):
    base = case_outage_table(ninebus, 0.0)
    more = build_outage_table(ninebus.machines + (unit(200.0, 0.0, "X"),), ninebus.renewables, 0.0)
    peaks = np.full(365, 3000.0)
    assert compute_lole(more, peaks) <= compute_lole(base, peaks)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 3000.0), st.floats(0.0, 500.0))
def test_lole_monotone_in_load(ninebus_load, extra):
    from gridplan.grid_model import load_fixture

    table = case_outage_table(load_fixture("ninebus"), 0.0)
    a = compute_lole(table, np.full(365, ninebus_load))
    b = compute_lole(table, np.full(365, ninebus_load + extra))
    assert b >= a


def test_lolp_uses_annual_peak(twounit):
    table = case_outage_table(twounit)
    peaks = np.full(365, 50.0)
    peaks[100] = 150.0
    assert compute_lolp(table, peaks) == pytest.approx(0.19)
    assert compute_lole(table, peaks) == pytest.approx(0.19 + 364 * 0.01)


def test_profile_length_checked(twounit):
    with pytest.raises(ValueError):
        compute_lole(case_outage_table(twounit), np.ones(364))


def test_level_zero_identical_to_renewable_free(ninebus):
    a = case_outage_table(set_penetration(ninebus, 0.0))
    b = case_outage_table(without_renewables(ninebus))
    assert np.array_equal(a.capacity_on_outage, b.capacity_on_outage)
    assert np.array_equal(a.probability, b.probability)
    ra = analytic_adequacy(set_penetration(ninebus, 0.0))
    rb = analytic_adequacy(without_renewables(ninebus))
    assert (ra.lole, ra.lolp) == (rb.lole, rb.lolp)


def test_default_sweep_has_eleven_levels(ninebus):
    res = penetration_sweep(ninebus)
    assert len(DEFAULT_LEVELS) == 11
    assert [r.penetration for r in res] == list(DEFAULT_LEVELS)
    assert res[0].penetration == 0.0 and res[-1].penetration == 1.0
    assert res[-1].lole < res[0].lole


def test_multi_state_between_firm_and_nothing(ninebus):
    case = set_penetration(ninebus, 1.0)
    firm = analytic_adequacy(case).lole
    multi = analytic_adequacy(case, multi_state=True).lole
    none = analytic_adequacy(without_renewables(ninebus)).lole
    assert firm < multi < none


def test_monte_carlo_consistent_and_reproducible(twounit):
    a = monte_carlo_lole(twounit, samples=50_000, seed=11)
    b = monte_carlo_lole(twounit, samples=50_000, seed=11)
    assert a == b
    assert abs(a.lole - 69.35) <= 3 * a.mc_std_err
    assert abs(a.lolp - 0.19) < 0.01
    c = monte_carlo_lole(twounit, samples=50_000, seed=12)
    assert c.lole != a.lole


def test_monte_carlo_sweep_needs_seed(ninebus):
    with pytest.raises(ValueError):
        penetration_sweep(ninebus, study=MONTE_CARLO)


def test_level_seed_independent_of_grid(ninebus):
    full = penetration_sweep(ninebus, [0.0, 0.5, 1.0], MONTE_CARLO, samples=200, seed=5)
    alone = penetration_sweep(ninebus, [0.5], MONTE_CARLO, samples=200, seed=5)
    assert full[1] == alone[0]
    assert level_seed(5, 0.5) != level_seed(5, 0.6)


def elcc_oracle(case, cap, q, step=0.1):
    """Largest multiple of `step` in [0, cap] whose added load keeps LOLE at or below baseline."""
    peaks = np.asarray(case.profiles[0].daily_peaks) if len(case.profiles) == 1 else None
    units = [(m.p_max, m.forced_outage_rate) for m in case.machines]
    base = enumerate_table(units)
    total = sum(c for c, _ in units)
    with_c = enumerate_table(units + [(cap, q)])

    def lole(table, tot, add):
        return sum(sum(p for c, p in table.items() if tot - c < d + add) for d in peaks)

    baseline = lole(base, total, 0.0)
    best = 0.0
    for k in range(int(round(cap / step)) + 1):
        dl = k * step
        if lole(with_c, total + cap, dl) <= baseline * (1 + 1e-12):
            best = dl
    return best


def test_elcc_firm_candidate_is_full(twounit):
    assert compute_elcc(twounit, unit(100.0, 0.0, "C")) == pytest.approx(100.0, abs=0.5)


@pytest.mark.parametrize("q", [0.05, 0.2, 0.5])
def test_elcc_matches_grid_oracle(twounit, q):
    got = compute_elcc(twounit, unit(100.0, q, "C"))
    want = elcc_oracle(twounit, 100.0, q)
    assert abs(got - want) <= 0.1 + 1e-9


def test_elcc_undefined_cases(twounit):
    with pytest.raises(ElccUndefined):
        compute_elcc(twounit, unit(0.0, 0.0, "C"))
    import dataclasses

    lossless = dataclasses.replace(
        twounit, machines=tuple(dataclasses.replace(m, forced_outage_rate=0.0) for m in twounit.machines))
    with pytest.raises(ElccUndefined):
        compute_elcc(lossless, unit(100.0, 0.1, "C"))


def test_elcc_renewable_candidate(twounit):
    plant = RenewablePlant("W", "1", 100.0, RenewableKind.SOLAR_PV, output_fraction=1.0)
    assert compute_elcc(twounit, plant) == pytest.approx(100.0, abs=0.5)


def test_sweep_csv_columns(twounit):
    text = sweep_csv(penetration_sweep(twounit, [0.0]))
    assert text.splitlines()[0] == "penetration,lole,lolp,method,std_err"
