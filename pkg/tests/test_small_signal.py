import dataclasses
import json
import time

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gridplan.dynamics import swing_rhs
from gridplan.grid_model import set_penetration
from gridplan.small_signal import (
    Band,
    ModeDescriptor,
    classify_band,
    intermittency_study,
    linearize,
    mode_table_csv,
    modes,
    study_report_json,
)


def lossless(case):
    """Resistance-free branches, reactive-only loads, no plants, no damping."""
    buses = tuple(dataclasses.replace(b, load_p=0.0) for b in case.buses)
    branches = tuple(dataclasses.replace(br, r=0.0) for br in case.branches)
    p = {"G1": -300.0, "G2": 200.0, "G3": 100.0}
    machines = tuple(dataclasses.replace(m, damping=0.0, p_set=p[m.id], p_min=-1000.0) for m in case.machines)
    return dataclasses.replace(case, buses=buses, branches=branches, machines=machines, renewables=())


def fd_matrix(eq, h=1e-6):
    n = len(eq.machine_ids)
    x0 = np.concatenate([eq.delta0, np.zeros(n)])
    cols = [(swing_rhs(eq, x0 + h * e) - swing_rhs(eq, x0 - h * e)) / (2 * h) for e in np.eye(2 * n)]
    return np.column_stack(cols)


@pytest.mark.parametrize("level", [0.0, 0.5, 1.0])
def test_state_matrix_matches_finite_differences(ninebus, level):
    model = linearize(set_penetration(ninebus, level))
    fd = fd_matrix(model.equilibrium)
    assert np.max(np.abs(model.a - fd)) / np.max(np.abs(model.a)) <= 1e-5


def test_undamped_modes_are_imaginary(ninebus):
    model = linearize(lossless(ninebus))
    ms = modes(model)
    assert len(ms.oscillatory) == 2
    for m in ms.modes:
        assert abs(m.sigma) < 1e-9
        assert m.damping_ratio == pytest.approx(0.0, abs=1e-9)
    # the angle-reference pair sits at the origin
    assert len(ms.zero_modes) == 2


def faddeev_leverrier(a):
    """Characteristic polynomial coefficients (highest power first) in extended precision."""
    n = a.rows
    coeffs = [mpmath.mpf(1)]
    m = mpmath.zeros(n, n)
    ident = mpmath.eye(n)
    c = mpmath.mpf(1)
    for k in range(1, n + 1):
        m = a * m + c * ident
        c = -sum((a * m)[i, i] for i in range(n)) / k
        coeffs.append(c)
    return coeffs


def test_eigenvalues_match_characteristic_polynomial(ninebus):
    model = linearize(ninebus)
    mpmath.mp.dps = 60
    a = mpmath.matrix(model.a.tolist())
    roots = mpmath.polyroots(faddeev_leverrier(a), maxsteps=500, extraprec=400)
    oracle = np.array([complex(r) for r in roots])
    got = modes(model).eigenvalues
    for lam in got:
        assert np.min(np.abs(oracle - lam)) < 1e-8


def test_mode_structure(ninebus):
    ms = modes(linearize(ninebus))
    assert len(ms.zero_modes) == 1 and abs(ms.zero_modes[0]) < 1e-6
    assert len(ms.oscillatory) == 2
    assert [m.band for m in ms.oscillatory] == [Band.INTERPLANT, Band.LOCAL_PLANT]
    assert all(m.damping_ratio > 0 for m in ms.oscillatory)
    assert ms.least_damped() == min(ms.oscillatory, key=lambda m: m.damping_ratio)


def test_band_sweep():
    for k in range(0, 501):
        f = k / 100
        if 10 <= k < 100:
            want = Band.INTER_AREA
        elif 100 <= k < 200:
            want = Band.INTERPLANT
        elif 200 <= k <= 300:
            want = Band.LOCAL_PLANT
        else:
            want = Band.OUT_OF_BAND
        assert classify_band(f) is want, f


def test_band_edges_and_errors():
    assert classify_band(0.1) is Band.INTER_AREA
    assert classify_band(np.nextafter(0.1, 0)) is Band.OUT_OF_BAND
    assert classify_band(1.0) is Band.INTERPLANT
    assert classify_band(3.0) is Band.LOCAL_PLANT
    assert classify_band(np.nextafter(3.0, 4)) is Band.OUT_OF_BAND
    with pytest.raises(ValueError):
        classify_band(-0.5)


@given(st.floats(0.01, 50.0), st.floats(-5.0, 5.0))
def test_descriptor_relations(omega, sigma):
    m = ModeDescriptor.from_eigenvalue(complex(sigma, omega))
    assert m.frequency == pytest.approx(omega / (2 * np.pi))
    assert m.damping_ratio == pytest.approx(-sigma / abs(complex(sigma, omega)))
    assert -1 <= m.damping_ratio <= 1


def test_mode_table_columns(ninebus):
    text = mode_table_csv(modes(linearize(ninebus)))
    assert text.splitlines()[0] == "frequency_hz,damping_ratio,sigma,omega,band"


def test_short_horizon_rejected(ninebus):
    with pytest.raises(ValueError, match="20 s"):
        intermittency_study(ninebus, "W1", [100.0], horizon=15.0)


def test_intermittency_zero_size_and_infeasible(ninebus):
    rep = intermittency_study(ninebus, "W1", [0.0, 800.0], operating_points=[0.5])
    by = {(r.direction, r.size): r for r in rep.records}
    zero = by[("drop", 0.0)]
    assert zero.feasible and zero.max_freq_dev == 0.0 and zero.max_voltage_dev == 0.0
    assert zero.f_min == zero.f_max == 60.0
    assert not by[("drop", 800.0)].feasible and "exceeds" in by[("drop", 800.0)].reason
    assert not by[("rise", 800.0)].feasible
    assert zero.flagged == (zero.min_damping < rep.damping_floor)


def test_intermittency_full_grid_runtime(ninebus):
    t0 = time.perf_counter()
    rep = intermittency_study(ninebus, "W1", [200.0])
    elapsed = time.perf_counter() - t0
    assert len(rep.records) == 22
    assert elapsed < 60.0
    assert [r.penetration for r in rep.records[::2]] == [round(0.1 * k, 10) for k in range(11)]
    feasible = [r for r in rep.records if r.feasible]
    assert all(r.initial_rocof < 0 for r in feasible if r.direction == "drop")
    doc = json.loads(study_report_json(rep))
    assert doc["horizon_s"] == 20.0 and len(doc["records"]) == 22
