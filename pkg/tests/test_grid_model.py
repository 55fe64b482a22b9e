import dataclasses
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridplan.grid_model import (
    Branch,
    Bus,
    BusKind,
    CaseParseError,
    CaseValidationError,
    ConventionalMachine,
    GridCase,
    RenewableKind,
    RenewablePlant,
    aggregate_inertia,
    case_from_dict,
    case_to_dict,
    dumps_case,
    load_case,
    load_fixture,
    loads_case,
    natural_key,
    set_penetration,
    system_daily_peaks,
    validate,
)

from conftest import FIXTURES


def tiny(**over):
    buses = (Bus("1", 138.0, BusKind.SLACK), Bus("2", 138.0, BusKind.PQ, load_p=50.0))
    branches = (Branch("L1", "1", "2", 0.0, 0.1, 0.0, 100.0),)
    machines = (ConventionalMachine("G1", "1", 100.0, 5.0, 50.0, 100.0, 0.3),)
    kw = dict(buses=buses, branches=branches, machines=machines)
    kw.update(over)
    return GridCase(**kw)


def rules(case):
    return {(v.entity, v.rule) for v in validate(case)}


@pytest.mark.parametrize("name", FIXTURES)
def test_fixtures_valid_and_round_trip(name):
    case = load_fixture(name)
    assert validate(case) == []
    again = loads_case(dumps_case(case))
    assert again == case
    assert dumps_case(again) == dumps_case(case)


def test_ninebus_counts(ninebus):
    assert (len(ninebus.buses), len(ninebus.branches), len(ninebus.machines), len(ninebus.renewables)) == (9, 9, 3, 1)
    assert aggregate_inertia(ninebus) == pytest.approx(2475 * 9.55 + 1920 * 3.33 + 1280 * 2.35)


def test_aggregate_inertia_single_machine():
    assert aggregate_inertia(tiny()) == 500.0


def test_dangling_reference_is_named():
    br = Branch("L9", "1", "7", 0.0, 0.1, 0.0, 100.0)
    got = rules(tiny(branches=tiny().branches + (br,)))
    assert ("branch L9", "bus reference resolves") in got


def test_zero_inertia_rejected_unless_flagged():
    bad = dataclasses.replace(tiny().machines[0], h=0.0)
    assert ("machine G1", "h > 0") in rules(tiny(machines=(bad,)))
    assert ("case", "at least one conventional machine") in rules(tiny(machines=()))
    assert ("case", "at least one conventional machine") not in rules(tiny(machines=(), allow_zero_inertia=True))


def test_islanded_bus_and_slack_count():
    extra = Bus("3", 138.0, BusKind.PQ)
    assert ("case", "network is connected") in rules(tiny(buses=tiny().buses + (extra,)))
    two = tuple(dataclasses.replace(b, kind=BusKind.SLACK) for b in tiny().buses)
    assert ("case", "exactly one slack bus") in rules(tiny(buses=two))


def test_decoupled_plant_coupling():
    p = RenewablePlant("W1", "2", 100.0, RenewableKind.WIND_TYPE4, inertia_coupling=0.3)
    assert ("renewable W1", "converter-decoupled plant requires inertia_coupling = 0") in rules(
        tiny(renewables=(p,)))
    ok = dataclasses.replace(p, kind=RenewableKind.WIND_TYPE3)
    assert validate(tiny(renewables=(ok,))) == []


def test_output_state_probabilities():
    p = RenewablePlant("W1", "2", 100.0, RenewableKind.SOLAR_PV, output_states=((0.0, 0.5), (1.0, 0.4)))
    assert ("renewable W1", "output_states probabilities sum to 1") in rules(tiny(renewables=(p,)))


def test_parse_rejects_unknown_fields_and_version():
    doc = case_to_dict(tiny())
    with pytest.raises(CaseParseError):
        case_from_dict({**doc, "colour": 1})
    doc2 = json.loads(json.dumps(doc))
    doc2["buses"][0]["colour"] = "red"
    with pytest.raises(CaseParseError, match="colour"):
        case_from_dict(doc2)
    with pytest.raises(CaseParseError, match="format_version"):
        case_from_dict({**doc, "format_version": 2})


def test_load_never_repairs(tmp_path):
    doc = case_to_dict(tiny())
    doc["machines"][0]["h"] = -1.0
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(CaseValidationError) as exc:
        load_case(p)
    assert any(v.entity == "machine G1" for v in exc.value.violations)


def test_defaulted_bounds_flagged_and_preserved():
    doc = case_to_dict(tiny())
    for b in doc["buses"]:
        del b["v_min"], b["v_max"]
    case = case_from_dict(doc)
    assert all(b.bounds_defaulted for b in case.buses)
    assert case.bus("1").v_min == 0.95
    assert "v_min" not in case_to_dict(case)["buses"][0]
    assert "v_min" in case_to_dict(tiny())["buses"][0]
    nine = load_fixture("ninebus")
    assert not nine.bus("5").bounds_defaulted and nine.bus("1").bounds_defaulted


def test_system_load_sums_profiles(ninebus):
    peaks = system_daily_peaks(ninebus)
    assert peaks.shape == (365,)
    assert peaks.max() <= 900 + 1000 + 1250


def test_set_penetration_bounds(ninebus):
    assert set_penetration(ninebus, 1.0).renewable("W1").output_mw == 1000.0
    with pytest.raises(ValueError):
        set_penetration(ninebus, 1.2)
    with pytest.raises(ValueError):
        set_penetration(ninebus, -0.1)


def test_natural_key_orders_digits():
    assert sorted(["L10", "L2", "L1"], key=natural_key) == ["L1", "L2", "L10"]


@settings(max_examples=50, deadline=None)
@given(
    h=st.floats(0.5, 12.0), s=st.floats(10.0, 2000.0), load=st.floats(0.0, 90.0),
    x=st.floats(0.01, 0.5), frac=st.floats(0.0, 1.0),
)
def test_round_trip_property(h, s, load, x, frac):
    case = tiny(
        buses=(Bus("1", 138.0, BusKind.SLACK), Bus("2", 138.0, BusKind.PQ, load_p=load)),
        branches=(Branch("L1", "1", "2", 0.0, x, 0.0, 100.0),),
        machines=(ConventionalMachine("G1", "1", s, h, 50.0, 100.0, 0.3),),
        renewables=(RenewablePlant("W1", "2", 40.0, RenewableKind.SOLAR_PV, output_fraction=frac),),
    )
    assert loads_case(dumps_case(case)) == case
