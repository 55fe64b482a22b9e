"""Regenerate the case files shipped in src/gridplan/data.

ninebus: the classic 9-bus / 3-machine network (impedances in pu as in the
usual textbook data) with loads, ratings and machines scaled by ten on a
1000 MVA base, plus a 1000 MW type-4 wind plant at bus 9.

smib: one machine feeding a stiff source through a single reactance.
overload3: triangle network where losing line L3 overloads the detour.
doublecircuit: two buses joined by two identical parallel lines.
twounit: two 100 MW units (FOR 0.1) serving a flat 150 MW daily peak.
twomachine: two identical governed machines and a load on one bus.
"""

import json
import math
from pathlib import Path

DATA = Path(__file__).resolve().parents[1] / "src" / "gridplan" / "data"


def seasonal(peak, low_fraction, phase=0.0):
    # distinct daily peaks with a winter/summer double hump
    out = []
    for d in range(365):
        s = 0.5 * (1 + math.cos(2 * math.pi * (d - 200 + phase) / 365))
        w = 0.5 * (1 + math.cos(4 * math.pi * (d - 15 + phase) / 365))
        frac = low_fraction + (1 - low_fraction) * (0.7 * s + 0.3 * w) + 0.002 * ((d * 37) % 11)
        out.append(round(min(frac, 1.0) * peak, 3))
    return out


def ninebus():
    buses = [
        {"id": "1", "base_kv": 16.5, "kind": "slack", "v_set": 1.04},
        {"id": "2", "base_kv": 18.0, "kind": "pv", "v_set": 1.025},
        {"id": "3", "base_kv": 13.8, "kind": "pv", "v_set": 1.025},
        {"id": "4", "base_kv": 230.0, "kind": "pq", "v_min": 0.9, "v_max": 1.1},
        {"id": "5", "base_kv": 230.0, "kind": "pq", "v_min": 0.9, "v_max": 1.1, "load_p": 900.0, "load_q": 300.0},
        {"id": "6", "base_kv": 230.0, "kind": "pq", "v_min": 0.9, "v_max": 1.1},
        {"id": "7", "base_kv": 230.0, "kind": "pq", "v_min": 0.9, "v_max": 1.1, "load_p": 1000.0, "load_q": 350.0},
        {"id": "8", "base_kv": 230.0, "kind": "pq", "v_min": 0.9, "v_max": 1.1},
        {"id": "9", "base_kv": 230.0, "kind": "pq", "v_min": 0.9, "v_max": 1.1, "load_p": 1250.0, "load_q": 500.0},
    ]
    rows = [
        ("T1", "1", "4", 0.0, 0.0576, 0.0, 2500.0),
        ("L45", "4", "5", 0.017, 0.092, 0.158, 2500.0),
        ("L56", "5", "6", 0.039, 0.17, 0.358, 1500.0),
        ("T3", "3", "6", 0.0, 0.0586, 0.0, 3000.0),
        ("L67", "6", "7", 0.0119, 0.1008, 0.209, 1500.0),
        ("L78", "7", "8", 0.0085, 0.072, 0.149, 2500.0),
        ("T2", "8", "2", 0.0, 0.0625, 0.0, 2500.0),
        ("L89", "8", "9", 0.032, 0.161, 0.306, 2500.0),
        ("L94", "9", "4", 0.01, 0.085, 0.176, 2500.0),
    ]
    branches = [dict(zip(("id", "from_bus", "to_bus", "r", "x", "b_shunt", "thermal_rating"), r)) for r in rows]
    gov = {"droop_r": 0.05, "time_const": 0.5, "deadband": 0.0}
    machines = [
        {"id": "G1", "bus": "1", "s_rated": 2475.0, "h": 9.55, "p_set": 1500.0, "p_min": 0.0, "p_max": 2400.0,
         "xd_t": 0.1505, "damping": 1.0, "forced_outage_rate": 0.05, "governor": gov, "agc_participation": 0.5},
        {"id": "G2", "bus": "2", "s_rated": 1920.0, "h": 3.33, "p_set": 1100.0, "p_min": 0.0, "p_max": 1800.0,
         "xd_t": 0.230, "damping": 1.0, "forced_outage_rate": 0.04, "governor": gov, "agc_participation": 0.3},
        {"id": "G3", "bus": "3", "s_rated": 1280.0, "h": 2.35, "p_set": 600.0, "p_min": 0.0, "p_max": 1200.0,
         "xd_t": 0.232, "damping": 1.0, "forced_outage_rate": 0.06, "governor": gov, "agc_participation": 0.2},
    ]
    renewables = [
        {"id": "W1", "bus": "9", "nameplate": 1000.0, "kind": "wind_type4", "output_fraction": 0.5,
         "inertia_coupling": 0.0, "synthetic_inertia_gain": 0.0, "forced_outage_rate": 0.0,
         "output_states": [[0.0, 0.2], [0.25, 0.2], [0.5, 0.2], [0.75, 0.2], [1.0, 0.2]]},
    ]
    profiles = [
        {"bus": "5", "daily_peaks": seasonal(900.0, 0.55, 0.0)},
        {"bus": "7", "daily_peaks": seasonal(1000.0, 0.55, 9.0)},
        {"bus": "9", "daily_peaks": seasonal(1250.0, 0.55, -6.0)},
    ]
    return {
        "format_version": 1, "name": "ninebus", "system_frequency": 60.0, "base_mva": 1000.0,
        "buses": buses, "branches": branches, "machines": machines, "renewables": renewables,
        "profiles": profiles,
    }


def smib():
    return {
        "format_version": 1, "name": "smib", "system_frequency": 60.0, "base_mva": 100.0,
        "buses": [
            {"id": "G", "base_kv": 20.0, "kind": "pv", "v_set": 1.0},
            {"id": "INF", "base_kv": 230.0, "kind": "slack", "v_set": 1.0},
        ],
        "branches": [
            {"id": "L1", "from_bus": "G", "to_bus": "INF", "r": 0.0, "x": 0.2, "b_shunt": 0.0,
             "thermal_rating": 500.0},
        ],
        "machines": [
            {"id": "G1", "bus": "G", "s_rated": 100.0, "h": 5.0, "p_set": 80.0, "p_max": 100.0,
             "xd_t": 0.3, "damping": 0.0},
            {"id": "INFM", "bus": "INF", "s_rated": 1.0e6, "h": 1.0e4, "p_set": 0.0, "p_min": -1.0e6,
             "p_max": 1.0e6, "xd_t": 1.0e-4, "damping": 0.0},
        ],
    }


def _bus(bid, kind, **kw):
    return {"id": bid, "base_kv": 138.0, "kind": kind, **kw}


def _line(lid, a, b, x, rating, r=0.0, bsh=0.0):
    return {"id": lid, "from_bus": a, "to_bus": b, "r": r, "x": x, "b_shunt": bsh, "thermal_rating": rating}


def overload3():
    # G2 at bus 3 serves the 150 MW load at bus 2. dc flows with everything in:
    # L3 carries 100 MW, the detour L2-L1 50 MW. Losing L3 sends all 150 MW
    # through L2 (rating 100) and L1 (rating 120): thermal term 0.5 + 0.25
    return {
        "format_version": 1, "name": "overload3", "system_frequency": 60.0, "base_mva": 100.0,
        "buses": [_bus("1", "slack"), _bus("2", "pq", load_p=150.0), _bus("3", "pv")],
        "branches": [_line("L1", "1", "2", 0.1, 120.0), _line("L2", "1", "3", 0.1, 100.0),
                     _line("L3", "3", "2", 0.1, 120.0)],
        "machines": [
            {"id": "G1", "bus": "1", "s_rated": 200.0, "h": 4.0, "p_set": 0.0, "p_max": 200.0, "xd_t": 0.3},
            {"id": "G2", "bus": "3", "s_rated": 200.0, "h": 4.0, "p_set": 150.0, "p_max": 200.0, "xd_t": 0.3},
        ],
        "renewables": [
            {"id": "PV1", "bus": "2", "nameplate": 30.0, "kind": "solar_pv", "output_fraction": 0.0},
        ],
    }


def doublecircuit():
    return {
        "format_version": 1, "name": "doublecircuit", "system_frequency": 60.0, "base_mva": 100.0,
        "buses": [_bus("1", "slack"), _bus("2", "pq", load_p=100.0)],
        "branches": [_line("C1", "1", "2", 0.2, 150.0), _line("C2", "1", "2", 0.2, 150.0)],
        "machines": [
            {"id": "G1", "bus": "1", "s_rated": 200.0, "h": 4.0, "p_set": 100.0, "p_max": 200.0, "xd_t": 0.3},
        ],
    }


def twounit():
    unit = {"s_rated": 100.0, "h": 4.0, "p_set": 75.0, "p_max": 100.0, "xd_t": 0.3, "forced_outage_rate": 0.1}
    return {
        "format_version": 1, "name": "twounit", "system_frequency": 60.0, "base_mva": 100.0,
        "buses": [_bus("1", "slack", load_p=150.0)],
        "branches": [],
        "machines": [{"id": "U1", "bus": "1", **unit}, {"id": "U2", "bus": "1", **unit}],
        "profiles": [{"bus": "1", "daily_peaks": [150.0] * 365}],
    }


def twomachine():
    gov = {"droop_r": 0.05, "time_const": 0.5, "deadband": 0.0}
    unit = {"s_rated": 500.0, "h": 4.0, "p_set": 300.0, "p_max": 450.0, "xd_t": 0.25, "damping": 0.0,
            "governor": gov, "agc_participation": 0.5}
    return {
        "format_version": 1, "name": "twomachine", "system_frequency": 60.0, "base_mva": 100.0,
        "buses": [_bus("1", "slack", load_p=600.0, load_q=100.0)],
        "branches": [],
        "machines": [{"id": "G1", "bus": "1", **unit}, {"id": "G2", "bus": "1", **unit}],
    }


FIXTURES = {"ninebus": ninebus, "smib": smib, "overload3": overload3, "doublecircuit": doublecircuit,
            "twounit": twounit, "twomachine": twomachine}


if __name__ == "__main__":
    for name, doc in ((n, f()) for n, f in FIXTURES.items()):
        (DATA / f"{name}.json").write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
        print("wrote", DATA / f"{name}.json")
