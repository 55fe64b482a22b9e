"""
Small-signal modal analysis.

`linearize` builds the 2n x 2n state matrix of the classical multi-machine
model (states: rotor angle and speed deviation per machine) from analytic
partial derivatives of the reduced-network electrical power. `modes` computes
its eigenvalues with a dense LAPACK solver and classifies each oscillatory
pair into the electromechanical bands

    inter-area   [0.1, 1.0) Hz
    interplant   [1.0, 2.0) Hz
    local plant  [2.0, 3.0] Hz

Anything else (control or torsional modes included) is out of band.
`intermittency_study` sweeps renewable drop/rise events over operating points.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .dynamics import (
    ControlOptions,
    Equilibrium,
    frequency_metrics,
    init_equilibrium,
    plant_current,
    reduce_network,
    renewable_event,
    simulate,
)
from .grid_model import GridCase, set_penetration

MIN_HORIZON = 20.0
DAMPING_FLOOR = 0.03


class Band(str, Enum):
    INTER_AREA = "inter_area"
    INTERPLANT = "interplant"
    LOCAL_PLANT = "local_plant"
    OUT_OF_BAND = "out_of_band"


BAND_EDGES = ((0.1, 1.0, Band.INTER_AREA), (1.0, 2.0, Band.INTERPLANT), (2.0, 3.0, Band.LOCAL_PLANT))


class EigenSolverError(RuntimeError):
    pass


def classify_band(frequency: float) -> Band:
    """Half-open bands [a, b) except the local-plant band, which includes 3.0 Hz."""
    if frequency < 0 or math.isnan(frequency):
        raise ValueError(f"frequency must be >= 0, got {frequency!r}")
    for lo, hi, band in BAND_EDGES:
        if lo <= frequency < hi or (band is Band.LOCAL_PLANT and frequency == hi):
            return band
    return Band.OUT_OF_BAND


@dataclass(frozen=True)
class LinearModel:
    a: np.ndarray
    machine_ids: tuple[str, ...]
    equilibrium: Equilibrium

    @property
    def n_machines(self) -> int:
        return len(self.machine_ids)


@dataclass(frozen=True)
class ModeDescriptor:
    eigenvalue: complex
    frequency: float
    damping_ratio: float
    band: Band

    @property
    def sigma(self) -> float:
        return self.eigenvalue.real

    @property
    def omega(self) -> float:
        return self.eigenvalue.imag

    @classmethod
    def from_eigenvalue(cls, lam: complex) -> "ModeDescriptor":
        lam = complex(lam.real, abs(lam.imag))
        mag = abs(lam)
        zeta = -lam.real / mag if mag > 0 else 0.0
        freq = lam.imag / (2 * math.pi)
        return cls(lam, freq, float(np.clip(zeta, -1.0, 1.0)), classify_band(freq))


@dataclass(frozen=True)
class ModeSet:
    modes: list[ModeDescriptor]
    zero_modes: list[complex]
    eigenvalues: np.ndarray

    @property
    def oscillatory(self) -> list[ModeDescriptor]:
        return [m for m in self.modes if m.frequency > 0]

    @property
    def min_damping(self) -> Optional[float]:
        osc = self.oscillatory
        return min(m.damping_ratio for m in osc) if osc else None

    def least_damped(self) -> Optional[ModeDescriptor]:
        osc = self.oscillatory
        return min(osc, key=lambda m: m.damping_ratio) if osc else None


def power_sensitivity(eq: Equilibrium, net=None, delta=None) -> np.ndarray:
    """Synchronising matrix dP_elec,i / d delta_j, pu on system base."""
    net = reduce_network(eq) if net is None else net
    delta = eq.delta0 if delta is None else delta
    w = eq.coi_weights
    e_c = eq.e_mag * np.exp(1j * delta)
    c = net.t_cur @ plant_current(eq, eq.plant_p0, w @ delta)
    cur = net.y_red @ e_c + c
    # dI/d delta_j = Y[:, j] * j E_j + c * j w_j
    di = net.y_red * (1j * e_c)[None, :] + np.outer(1j * c, w)
    k = (e_c[:, None] * np.conj(di)).real
    k[np.diag_indices_from(k)] += (1j * e_c * np.conj(cur)).real
    return k


def linearize(case: GridCase, equilibrium: Optional[Equilibrium] = None) -> LinearModel:
    """State matrix of [d delta; d dw] about an equilibrium (governors excluded)."""
    eq = init_equilibrium(case) if equilibrium is None else equilibrium
    if eq.case != case:
        raise ValueError("equilibrium was computed for a different case")
    if np.max(np.abs(eq.residual)) > 1e-6:
        raise ValueError("equilibrium invalid: initial accelerating power not zero")
    n = len(eq.machine_ids)
    w_s = case.omega_s
    k = power_sensitivity(eq)
    gain = w_s / (2.0 * eq.h * eq.s_rated) * case.base_mva
    a = np.zeros((2 * n, 2 * n))
    a[:n, n:] = np.eye(n)
    a[n:, :n] = -gain[:, None] * k
    a[n:, n:] = np.diag(-eq.damping / (2.0 * eq.h))
    return LinearModel(a, eq.machine_ids, eq)


def modes(model: LinearModel, zero_tol: float = 1e-6) -> ModeSet:
    """Eigen-modes of a linear model.

    Eigenvalues within ``zero_tol * max(1, ||A||)`` of the origin form the
    angle-reference (zero) mode and are returned separately. Conjugate pairs
    are reported once, non-oscillatory real eigenvalues appear with frequency
    0. Modes are sorted by frequency, then by real part.
    """
    a = model.a
    try:
        lam = scipy.linalg.eigvals(a, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigenSolverError(f"eigenvalue computation failed: {exc}") from exc
    scale = max(1.0, float(np.linalg.norm(a, 2)))
    is_zero = np.abs(lam) <= zero_tol * scale
    zero = [complex(x) for x in lam[is_zero]]
    rest = lam[~is_zero]
    imag_tol = 1e-9 * scale
    picked = [x for x in rest if x.imag > imag_tol or abs(x.imag) <= imag_tol]
    n_pairs = sum(1 for x in rest if x.imag > imag_tol)
    if n_pairs != sum(1 for x in rest if x.imag < -imag_tol):
        raise EigenSolverError("eigenvalues do not pair into conjugates")
    descr = [ModeDescriptor.from_eigenvalue(complex(x.real, 0.0 if abs(x.imag) <= imag_tol else x.imag))
             for x in picked]
    descr.sort(key=lambda m: (m.frequency, m.sigma))
    return ModeSet(descr, zero, lam)


def mode_table_csv(mode_set: ModeSet) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["frequency_hz", "damping_ratio", "sigma", "omega", "band"])
    for m in mode_set.modes:
        w.writerow([repr(m.frequency), repr(m.damping_ratio), repr(m.sigma), repr(m.omega), m.band.value])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# intermittency study


@dataclass(frozen=True)
class IntermittencyRecord:
    plant: str
    size: float
    direction: str
    penetration: float
    feasible: bool
    reason: str = ""
    f_min: float = float("nan")
    f_max: float = float("nan")
    v_min: float = float("nan")
    v_max: float = float("nan")
    max_freq_dev: float = float("nan")
    max_voltage_dev: float = float("nan")
    initial_rocof: float = float("nan")
    min_damping: Optional[float] = None
    worst_mode: Optional[ModeDescriptor] = None
    flagged: bool = False

    @property
    def key(self) -> tuple:
        return (self.penetration, self.direction, self.size)


@dataclass(frozen=True)
class IntermittencyReport:
    plant: str
    horizon: float
    damping_floor: float
    records: list[IntermittencyRecord] = field(default_factory=list)

    @property
    def flagged(self) -> list[IntermittencyRecord]:
        return [r for r in self.records if r.flagged]


def _with_output(case: GridCase, plant_id: str, fraction: float) -> GridCase:
    plants = tuple(
        dataclasses.replace(p, output_fraction=min(max(fraction, 0.0), 1.0)) if p.id == plant_id else p
        for p in case.renewables
    )
    return dataclasses.replace(case, renewables=plants)


def _one_combination(case, plant_id, size, direction, level, horizon, step, t_event, ramp, floor, controls):
    base = set_penetration(case, level)
    plant = base.renewable(plant_id)
    try:
        ev = renewable_event(base, plant_id, direction, size, ramp, t_start=t_event)
    except ValueError as exc:
        return IntermittencyRecord(plant_id, size, direction, level, False, str(exc))
    try:
        eq = init_equilibrium(base)
        trace = simulate(base, eq, [ev], horizon, step, controls)
    except Exception as exc:  # noqa: BLE001 - recorded, study continues
        return IntermittencyRecord(plant_id, size, direction, level, False, f"simulation failed: {exc}")
    f = trace.coi_frequency
    v = trace.bus_vm
    fm = frequency_metrics(trace, event_time=t_event)
    sign = -1.0 if direction == "drop" else 1.0
    post_frac = plant.output_fraction + sign * size / plant.nameplate if plant.nameplate > 0 else 0.0
    try:
        post = _with_output(base, plant_id, post_frac)
        ms = modes(linearize(post))
    except Exception as exc:  # noqa: BLE001
        return IntermittencyRecord(plant_id, size, direction, level, False, f"re-linearisation failed: {exc}")
    md = ms.min_damping
    return IntermittencyRecord(
        plant=plant_id, size=size, direction=direction, penetration=level, feasible=True,
        f_min=float(f.min()), f_max=float(f.max()),
        v_min=float(v.min()), v_max=float(v.max()),
        max_freq_dev=float(np.max(np.abs(f - f[0]))),
        max_voltage_dev=float(np.max(np.abs(v - v[0]))),
        initial_rocof=fm.initial_rocof,
        min_damping=md, worst_mode=ms.least_damped(),
        flagged=md is not None and md < floor,
    )


def _run_job(job):
    return _one_combination(*job)


def intermittency_study(
    case: GridCase,
    plant_id: str,
    event_sizes: Sequence[float],
    directions: Sequence[str] = ("drop", "rise"),
    operating_points: Optional[Sequence[float]] = None,
    horizon: float = MIN_HORIZON,
    step: float = 0.005,
    t_event: float = 1.0,
    ramp_duration: float = 0.0,
    damping_floor: float = DAMPING_FLOOR,
    controls: ControlOptions = ControlOptions(governors=True),
    workers: int = 1,
) -> IntermittencyReport:
    """Drop/rise events of a renewable plant at each pre-disturbance output level.

    Every (size, direction, operating point) combination gets a nonlinear run
    of at least 20 s, frequency and voltage extrema, and the mode set of the
    post-event operating point. Combinations whose least-damped oscillatory
    mode falls below `damping_floor` are flagged; infeasible ones are kept
    with the reason.
    """
    if horizon < MIN_HORIZON:
        raise ValueError(
            f"horizon {horizon} s is below the 20 s minimum needed to capture oscillatory behaviour"
        )
    case.renewable(plant_id)
    if not event_sizes:
        raise ValueError("at least one event size is required")
    points = [round(0.1 * k, 10) for k in range(11)] if operating_points is None else list(operating_points)
    for d in directions:
        if d not in ("drop", "rise"):
            raise ValueError(f"direction must be 'drop' or 'rise', got {d!r}")
    jobs = [(case, plant_id, float(s), d, float(p), horizon, step, t_event, ramp_duration,
             damping_floor, controls) for p in points for d in directions for s in event_sizes]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            records = list(pool.map(_run_job, jobs))
    else:
        records = [_run_job(j) for j in jobs]
    records.sort(key=lambda r: r.key)
    return IntermittencyReport(plant_id, horizon, damping_floor, records)


def _mode_dict(m: Optional[ModeDescriptor]):
    if m is None:
        return None
    return {"frequency_hz": m.frequency, "damping_ratio": m.damping_ratio, "sigma": m.sigma,
            "omega": m.omega, "band": m.band.value}


def study_report_json(report: IntermittencyReport) -> str:
    def num(x):
        return None if x is None or (isinstance(x, float) and math.isnan(x)) else x

    rows = []
    for r in report.records:
        rows.append({
            "penetration": r.penetration, "direction": r.direction, "size_mw": r.size,
            "feasible": r.feasible, "reason": r.reason,
            "f_min": num(r.f_min), "f_max": num(r.f_max), "v_min": num(r.v_min), "v_max": num(r.v_max),
            "max_freq_dev": num(r.max_freq_dev), "max_voltage_dev": num(r.max_voltage_dev),
            "initial_rocof": num(r.initial_rocof), "min_damping": r.min_damping,
            "worst_mode": _mode_dict(r.worst_mode), "flagged": r.flagged,
        })
    doc = {
        "plant": report.plant, "horizon_s": report.horizon,
        "damping_floor": report.damping_floor,
        "damping_floor_note": "implementer default, not a published threshold",
        "records": rows,
    }
    return json.dumps(doc, indent=1, sort_keys=True)
