"""
Multi-machine electromechanical dynamics
========================================

Classical machine model: constant EMF behind transient reactance, loads as
constant admittances and renewable plants as current injections, all folded
into a Kron-reduced network among machine internal nodes. Rotor motion per
machine follows

    d(delta)/dt = dw
    d(dw)/dt    = w_s / (2 H S_n) * (P_mech - P_elec - D * S_n * dw / w_s)

with powers in MW and `dw` the speed deviation in rad/s. Optional first-order
droop governors with deadband, a single integral AGC loop and ROCOF-driven
synthetic inertia on renewable plants sit on top. Integration is fixed-step
RK4 so a run is reproducible bit-for-bit.

Renewable current phasors rotate with the centre-of-inertia angle (the
converter tracks the grid), which keeps the model invariant to a common
rotation of all rotor angles.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional, Sequence

import numpy as np

from .grid_model import GridCase, RenewablePlant
from .steady_state import PowerFlowSolution, admittance_matrix, solve_power_flow

UFLS_THRESHOLD_OFFSET = 0.7  # Hz below nominal; 59.3 Hz on a 60 Hz system
UFLS_DWELL = 0.1
ROCOF_WINDOW = 0.5
BOLTED = None


class SimulationError(RuntimeError):
    def __init__(self, message, last_time=float("nan"), trace=None):
        super().__init__(message)
        self.last_time = last_time
        self.trace = trace


class EventKind(str, Enum):
    POWER_STEP = "power_step"
    POWER_RAMP = "power_ramp"
    BUS_FAULT = "bus_fault"
    ELEMENT_TRIP = "element_trip"
    RENEWABLE_DROP = "renewable_drop"
    RENEWABLE_RISE = "renewable_rise"


@dataclass(frozen=True)
class MachineState:
    delta: float
    omega: float
    e_internal: float


@dataclass(frozen=True)
class DisturbanceEvent:
    """A scheduled disturbance.

    target is a machine id (power_step / power_ramp: change of mechanical
    power, negative = loss of generation), a bus id (bus_fault), a branch or
    machine id (element_trip) or a plant id (renewable_drop / renewable_rise).
    `fault_impedance` is in pu on system base; None means a bolted fault.
    """

    t_start: float
    kind: EventKind
    target: str
    magnitude: float = 0.0
    duration: float = 0.0
    fault_impedance: Optional[complex] = BOLTED
    clear_branch: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", EventKind(self.kind))
        if self.t_start < 0:
            raise ValueError("event t_start must be >= 0")
        if self.duration < 0:
            raise ValueError("event duration must be >= 0")

    def to_dict(self) -> dict:
        z = self.fault_impedance
        return {
            "t_start": self.t_start, "kind": self.kind.value, "target": self.target,
            "magnitude": self.magnitude, "duration": self.duration,
            "fault_impedance": None if z is None else [z.real, z.imag],
            "clear_branch": self.clear_branch,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DisturbanceEvent":
        z = d.get("fault_impedance")
        return cls(
            t_start=float(d["t_start"]), kind=EventKind(d["kind"]), target=str(d["target"]),
            magnitude=float(d.get("magnitude", 0.0)), duration=float(d.get("duration", 0.0)),
            fault_impedance=None if z is None else complex(z[0], z[1]),
            clear_branch=d.get("clear_branch"),
        )


@dataclass(frozen=True)
class ControlOptions:
    governors: bool = False
    agc: bool = False
    # MW per (Hz * s); default is frequency bias / agc_time
    agc_gain: Optional[float] = None
    agc_time: float = 30.0
    synthetic_inertia: bool = False
    rocof_filter: float = 0.05


@dataclass
class DynamicTrace:
    time: np.ndarray
    delta: np.ndarray
    omega: np.ndarray
    bus_vm: np.ndarray
    coi_frequency: np.ndarray
    p_elec: np.ndarray
    machine_ids: tuple[str, ...]
    bus_ids: tuple[str, ...]
    metadata: dict = field(default_factory=dict)

    @property
    def step(self) -> float:
        return self.metadata["step"]

    @property
    def event_time(self) -> float:
        events = self.metadata.get("events") or []
        return min((e["t_start"] for e in events), default=0.0)

    def bus_voltage(self, bus_id: str) -> np.ndarray:
        return self.bus_vm[:, self.bus_ids.index(bus_id)]


@dataclass(frozen=True)
class FrequencyMetrics:
    nadir: float
    nadir_time: float
    initial_rocof: float
    settling_frequency: Optional[float]
    ufls_tripped: bool


@dataclass(frozen=True)
class RideThroughEnvelope:
    voltage: tuple[tuple[float, float, float], ...]
    frequency: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        for name, pts in (("voltage", self.voltage), ("frequency", self.frequency)):
            if not pts:
                raise ValueError(f"{name} curve is empty")
            ts = [p[0] for p in pts]
            if any(b <= a for a, b in zip(ts, ts[1:])):
                raise ValueError(f"{name} curve times must be strictly increasing")
            if any(not lo < hi for _, lo, hi in pts):
                raise ValueError(f"{name} curve needs min < max at every point")

    @staticmethod
    def _interp(pts, t):
        ts = np.array([p[0] for p in pts])
        return np.interp(t, ts, [p[1] for p in pts]), np.interp(t, ts, [p[2] for p in pts])

    def voltage_bounds(self, t):
        return self._interp(self.voltage, t)

    def frequency_bounds(self, t):
        return self._interp(self.frequency, t)


def default_envelope(system_frequency: float = 60.0) -> RideThroughEnvelope:
    """Two-segment illustrative envelope; not taken from any grid code.

    Zero voltage tolerated for 0.15 s, linear recovery to 0.9 pu at 3 s, upper
    voltage bound 1.2 pu; frequency kept within 57.0-61.8 Hz (scaled to the
    nominal frequency).
    """
    k = system_frequency / 60.0
    return RideThroughEnvelope(
        voltage=((0.0, 0.0, 1.2), (0.15, 0.0, 1.2), (3.0, 0.9, 1.2)),
        frequency=((0.0, 57.0 * k, 61.8 * k),),
    )


@dataclass(frozen=True)
class RideThroughResult:
    plant: str
    passed: bool
    # (time, quantity, value, bound name, bound value)
    first_violation: Optional[tuple[float, str, float, str, float]] = None


# ---------------------------------------------------------------------------
# equilibrium and network reduction


@dataclass(frozen=True)
class Equilibrium:
    case: GridCase
    machine_ids: tuple[str, ...]
    states: tuple[MachineState, ...]
    p_mech: np.ndarray          # MW
    p_pf: np.ndarray            # MW, machine output from the power flow
    x_sys: np.ndarray           # transient reactance, pu on system base
    h: np.ndarray
    s_rated: np.ndarray
    damping: np.ndarray
    machine_bus: np.ndarray     # bus index per machine
    y_load: np.ndarray          # pu admittance per bus
    v0: np.ndarray              # complex bus voltages
    plant_ids: tuple[str, ...]
    plant_bus: np.ndarray
    plant_p0: np.ndarray        # MW
    pf: PowerFlowSolution
    residual: np.ndarray        # initial accelerating power, pu

    @property
    def delta0(self) -> np.ndarray:
        return np.array([s.delta for s in self.states])

    @property
    def e_mag(self) -> np.ndarray:
        return np.array([s.e_internal for s in self.states])

    @property
    def coi_weights(self) -> np.ndarray:
        hs = self.h * self.s_rated
        return hs / hs.sum()

    @property
    def delta_coi0(self) -> float:
        return float(self.coi_weights @ self.delta0)


def _machine_outputs(case: GridCase, sol: PowerFlowSolution):
    idx = case.bus_index()
    p = np.zeros(len(case.machines))
    q = np.zeros(len(case.machines))
    by_bus: dict[int, list[int]] = {}
    for k, m in enumerate(case.machines):
        by_bus.setdefault(idx[m.bus], []).append(k)
    for b, ks in by_bus.items():
        pset = np.array([case.machines[k].p_set for k in ks])
        srat = np.array([case.machines[k].s_rated for k in ks])
        pshare = pset / pset.sum() if pset.sum() > 0 else srat / srat.sum()
        for j, k in enumerate(ks):
            p[k] = sol.p_gen[b] * pshare[j]
            q[k] = sol.q_gen[b] * srat[j] / srat.sum()
    return p, q


def init_equilibrium(case: GridCase, pf_tol: float = 1e-10) -> Equilibrium:
    """Pre-disturbance state: machines at synchronous speed with EMFs behind x'd.

    Solves the ac power flow (tight tolerance), places each machine's internal
    EMF behind its transient reactance, and sets mechanical power equal to the
    electrical power of the reduced network so initial accelerations vanish.
    """
    sol = solve_power_flow(case, tol=pf_tol, max_iter=50)
    base = case.base_mva
    idx = case.bus_index()
    v0 = sol.voltage
    p_mw, q_mvar = _machine_outputs(case, sol)
    mb = np.array([idx[m.bus] for m in case.machines], dtype=int)
    x_sys = np.array([m.xd_t * base / m.s_rated for m in case.machines])
    i_g = np.conj((p_mw + 1j * q_mvar) / base / v0[mb])
    e = v0[mb] + 1j * x_sys * i_g
    load_s = np.array([complex(b.load_p, b.load_q) for b in case.buses]) / base
    y_load = np.conj(load_s) / np.abs(v0) ** 2
    plants = case.renewables
    eq = Equilibrium(
        case=case,
        machine_ids=tuple(m.id for m in case.machines),
        states=tuple(MachineState(float(np.angle(ek)), 0.0, float(abs(ek))) for ek in e),
        p_mech=np.zeros(len(case.machines)),
        p_pf=p_mw,
        x_sys=x_sys,
        h=np.array([m.h for m in case.machines]),
        s_rated=np.array([m.s_rated for m in case.machines]),
        damping=np.array([m.damping for m in case.machines]),
        machine_bus=mb,
        y_load=y_load,
        v0=v0,
        plant_ids=tuple(p.id for p in plants),
        plant_bus=np.array([idx[p.bus] for p in plants], dtype=int),
        plant_p0=np.array([p.output_mw for p in plants]),
        pf=sol,
        residual=np.zeros(len(case.machines)),
    )
    net = reduce_network(eq)
    pe = net.electrical_power(eq.delta0, eq.e_mag, plant_current(eq, eq.plant_p0, eq.delta_coi0))
    object.__setattr__(eq, "p_mech", pe * base)
    object.__setattr__(eq, "residual", pe - p_mw / base)
    return eq


def plant_current(eq: Equilibrium, plant_mw: np.ndarray, delta_coi: float) -> np.ndarray:
    """Bus current injections (pu) of renewable plants at the given outputs."""
    i_bus = np.zeros(len(eq.case.buses), dtype=complex)
    if len(eq.plant_ids):
        rot = np.exp(1j * (delta_coi - eq.delta_coi0))
        np.add.at(i_bus, eq.plant_bus, plant_mw / eq.case.base_mva / np.conj(eq.v0[eq.plant_bus]) * rot)
    return i_bus


@dataclass(frozen=True)
class ReducedNetwork:
    y_red: np.ndarray        # machine x machine
    t_cur: np.ndarray        # machine x bus: machine current per injected bus current
    v_from_e: np.ndarray     # bus x machine
    v_from_i: np.ndarray     # bus x bus

    def machine_currents(self, e_c, i_bus):
        return self.y_red @ e_c + self.t_cur @ i_bus

    def electrical_power(self, delta, e_mag, i_bus) -> np.ndarray:
        """Machine electrical output, pu on system base."""
        e_c = e_mag * np.exp(1j * delta)
        return (e_c * np.conj(self.machine_currents(e_c, i_bus))).real

    def bus_voltages(self, delta, e_mag, i_bus) -> np.ndarray:
        e_c = e_mag * np.exp(1j * delta)
        return self.v_from_e @ e_c + self.v_from_i @ i_bus


def reduce_network(
    eq: Equilibrium,
    tripped_branches: Sequence[str] = (),
    faults: Optional[Mapping[str, Optional[complex]]] = None,
    tripped_machines: Sequence[str] = (),
) -> ReducedNetwork:
    """Kron-reduce the augmented network onto the machine internal nodes.

    `faults` maps bus id -> fault impedance (pu, None = bolted). Bolted buses
    are held at zero voltage; tripped machines get zero rows and columns.
    """
    case = eq.case
    idx = case.bus_index()
    nb, ng = len(case.buses), len(eq.machine_ids)
    ynn = admittance_matrix(case, skip_branches=set(tripped_branches)) + np.diag(eq.y_load)
    active = np.array([mid not in set(tripped_machines) for mid in eq.machine_ids])
    yg = np.where(active, 1.0 / (1j * eq.x_sys), 0.0)
    ygg = np.diag(yg)
    ygn = np.zeros((ng, nb), dtype=complex)
    ygn[np.arange(ng), eq.machine_bus] = -yg
    np.add.at(ynn, (eq.machine_bus, eq.machine_bus), yg)
    grounded = set()
    for bus_id, z in (faults or {}).items():
        if z is None or z == 0:
            grounded.add(idx[bus_id])
        else:
            ynn[idx[bus_id], idx[bus_id]] += 1.0 / z
    keep = np.array([i for i in range(nb) if i not in grounded], dtype=int)
    zkk = np.linalg.inv(ynn[np.ix_(keep, keep)])
    yng = ygn.T
    y_red = ygg - ygn[:, keep] @ zkk @ yng[keep, :]
    t_cur = np.zeros((ng, nb), dtype=complex)
    t_cur[:, keep] = ygn[:, keep] @ zkk
    v_from_e = np.zeros((nb, ng), dtype=complex)
    v_from_i = np.zeros((nb, nb), dtype=complex)
    v_from_e[keep, :] = -zkk @ yng[keep, :]
    v_from_i[np.ix_(keep, keep)] = zkk
    return ReducedNetwork(y_red, t_cur, v_from_e, v_from_i)


# ---------------------------------------------------------------------------
# closed-form frequency relations


def eq2_deviation(machines: Sequence[tuple[float, float]], f_s: float, delta_p: float) -> float:
    """Inertial frequency response f_s / sum(H_i * S_n,i) * dP, evaluated as written.

    Note the absence of the factor 2 that appears in the swing equation; the
    physically consistent initial ROCOF is `rocof_reference`.
    """
    total = sum(h * s for h, s in machines)
    if not total > 0:
        raise ValueError("aggregate inertia sum(H*S) must be positive")
    return f_s / total * delta_p


def rocof_reference(machines: Sequence[tuple[float, float]], f_s: float, delta_p: float) -> float:
    """Initial centre-of-inertia ROCOF f_s * dP / (2 * sum(H_i * S_n,i)), Hz/s."""
    total = sum(h * s for h, s in machines)
    if not total > 0:
        raise ValueError("aggregate inertia sum(H*S) must be positive")
    return f_s * delta_p / (2.0 * total)


def droop_deviation(case: GridCase, delta_p: float, include_damping: bool = True) -> float:
    """Quasi-steady frequency deviation (Hz) after a generation change `delta_p` MW.

    Aggregate droop law df = dP / sum(S_i / (R_i f_s)); machine damping acts on
    absolute speed and adds sum(D_i S_i / f_s) to the stiffness.
    """
    f_s = case.system_frequency
    beta = sum(m.s_rated / (m.governor.droop_r * f_s) for m in case.machines if m.governor)
    if include_damping:
        beta += sum(m.damping * m.s_rated / f_s for m in case.machines)
    if not beta > 0:
        raise ValueError("no frequency-responsive machines")
    return delta_p / beta


def synthetic_inertia(plant: RenewablePlant, coi_rocof: float, headroom: Optional[float] = None) -> float:
    """Extra MW a plant injects for a measured ROCOF: -gain * rocof, clipped to [0, headroom]."""
    room = plant.headroom_mw if headroom is None else headroom
    return float(np.clip(-plant.synthetic_inertia_gain * coi_rocof, 0.0, max(room, 0.0)))


# ---------------------------------------------------------------------------
# events


def renewable_event(
    case: GridCase,
    plant_id: str,
    kind: str,
    magnitude: float,
    ramp_duration: float = 0.0,
    t_start: float = 1.0,
) -> DisturbanceEvent:
    """Drop or rise of a plant's output; ramp_duration 0 gives a step."""
    plant = case.renewable(plant_id)
    if magnitude < 0:
        raise ValueError("magnitude must be >= 0; choose kind drop or rise")
    if kind in ("drop", EventKind.RENEWABLE_DROP):
        bound, ek = plant.output_mw, EventKind.RENEWABLE_DROP
    elif kind in ("rise", EventKind.RENEWABLE_RISE):
        bound, ek = plant.headroom_mw, EventKind.RENEWABLE_RISE
    else:
        raise ValueError(f"unknown renewable event kind {kind!r}")
    if magnitude > bound + 1e-9:
        raise ValueError(f"{ek.value} of {magnitude} MW exceeds available {bound} MW at plant {plant_id}")
    return DisturbanceEvent(t_start=t_start, kind=ek, target=plant_id, magnitude=magnitude,
                            duration=ramp_duration)


def _check_events(eq: Equilibrium, events: Sequence[DisturbanceEvent]):
    case = eq.case
    machines = set(eq.machine_ids)
    buses = {b.id for b in case.buses}
    branches = {br.id for br in case.branches}
    plants = set(eq.plant_ids)
    for ev in events:
        k = ev.kind
        ok = {
            EventKind.POWER_STEP: ev.target in machines,
            EventKind.POWER_RAMP: ev.target in machines,
            EventKind.BUS_FAULT: ev.target in buses,
            EventKind.ELEMENT_TRIP: ev.target in branches or ev.target in machines,
            EventKind.RENEWABLE_DROP: ev.target in plants,
            EventKind.RENEWABLE_RISE: ev.target in plants,
        }[k]
        if not ok:
            raise ValueError(f"{k.value} event references missing element {ev.target!r}")
        if ev.clear_branch is not None and ev.clear_branch not in branches:
            raise ValueError(f"fault clearing references missing branch {ev.clear_branch!r}")
        if k in (EventKind.RENEWABLE_DROP, EventKind.RENEWABLE_RISE):
            p = case.renewable(ev.target)
            bound = p.output_mw if k is EventKind.RENEWABLE_DROP else p.headroom_mw
            if ev.magnitude > bound + 1e-9:
                raise ValueError(f"{k.value} of {ev.magnitude} MW exceeds {bound} MW at plant {ev.target}")


class _Ramp:
    """Continuous profile magnitude * clip((t - t0) / dur, 0, 1)."""

    def __init__(self, slot, t0, dur, magnitude):
        self.slot, self.t0, self.dur, self.magnitude = slot, t0, dur, magnitude

    def value(self, t):
        return self.magnitude * min(max((t - self.t0) / self.dur, 0.0), 1.0)


# ---------------------------------------------------------------------------
# simulation


def simulate(
    case: GridCase,
    states: Optional[Equilibrium] = None,
    events: Sequence[DisturbanceEvent] = (),
    horizon: float = 20.0,
    step: float = 0.005,
    controls: ControlOptions = ControlOptions(),
    initial_offset: Optional[np.ndarray] = None,
) -> DynamicTrace:
    """Integrate the swing equations with fixed-step RK4.

    Step-type events (power_step, renewable events with zero duration, faults,
    trips) take effect at the grid point nearest their start time; ramps are
    evaluated continuously. `initial_offset` perturbs the initial state
    [delta; dw] for small-signal checks.
    """
    if not 0 < step <= 0.01 + 1e-15:
        raise ValueError("integration step must be in (0, 10 ms]")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if states is None:
        eq = init_equilibrium(case)
    elif states.case is case or states.case == case:
        eq = states
    else:
        raise ValueError("equilibrium was computed for a different case")
    _check_events(eq, events)
    base = case.base_mva
    f_s = case.system_frequency
    w_s = 2 * math.pi * f_s
    ng, nb = len(eq.machine_ids), len(case.buses)
    midx = {m: i for i, m in enumerate(eq.machine_ids)}
    pidx = {p: i for i, p in enumerate(eq.plant_ids)}
    machines = case.machines
    plants = case.renewables

    gov = np.array([m.governor is not None for m in machines]) & controls.governors
    droop = np.array([m.governor.droop_r if m.governor else 1.0 for m in machines])
    tg = np.array([m.governor.time_const if m.governor else 1.0 for m in machines])
    dband = np.array([m.governor.deadband if m.governor else 0.0 for m in machines])
    alpha = np.array([m.agc_participation for m in machines], dtype=float)
    use_agc = controls.agc and alpha.sum() > 0
    if use_agc:
        alpha = alpha / alpha.sum()
        bias = sum(m.s_rated / (m.governor.droop_r * f_s) for m in machines if m.governor) or \
            sum(m.s_rated for m in machines) / (0.05 * f_s)
        k_agc = controls.agc_gain if controls.agc_gain is not None else bias / controls.agc_time
    else:
        k_agc = 0.0
    si_gain = np.array([p.synthetic_inertia_gain for p in plants]) if controls.synthetic_inertia \
        else np.zeros(len(plants))
    use_si = bool(np.any(si_gain > 0))
    t_f = controls.rocof_filter

    n_steps = int(round(horizon / step))
    times = np.arange(n_steps + 1) * step

    # event bookkeeping
    discrete: dict[int, list] = {}
    mech_ramps: list[_Ramp] = []
    plant_ramps: list[_Ramp] = []

    def at(t):
        return int(round(t / step))

    for ev in events:
        k0 = at(ev.t_start)
        if ev.kind is EventKind.POWER_STEP or (ev.kind is EventKind.POWER_RAMP and ev.duration == 0):
            discrete.setdefault(k0, []).append(("mech", midx[ev.target], ev.magnitude))
        elif ev.kind is EventKind.POWER_RAMP:
            mech_ramps.append(_Ramp(midx[ev.target], times[k0], ev.duration, ev.magnitude))
        elif ev.kind in (EventKind.RENEWABLE_DROP, EventKind.RENEWABLE_RISE):
            sign = -1.0 if ev.kind is EventKind.RENEWABLE_DROP else 1.0
            if ev.duration == 0:
                discrete.setdefault(k0, []).append(("plant", pidx[ev.target], sign * ev.magnitude))
            else:
                plant_ramps.append(_Ramp(pidx[ev.target], times[k0], ev.duration, sign * ev.magnitude))
        elif ev.kind is EventKind.BUS_FAULT:
            discrete.setdefault(k0, []).append(("fault_on", ev.target, ev.fault_impedance))
            k1 = at(ev.t_start + ev.duration)
            discrete.setdefault(k1, []).append(("fault_off", ev.target, ev.clear_branch))
        elif ev.kind is EventKind.ELEMENT_TRIP:
            discrete.setdefault(k0, []).append(("trip", ev.target, None))

    mech_offset = np.zeros(ng)
    plant_offset = np.zeros(len(plants))
    faults: dict[str, Optional[complex]] = {}
    tripped_br: set[str] = set()
    tripped_m: set[str] = set()
    cache: dict[tuple, ReducedNetwork] = {}

    def network():
        key = (tuple(sorted(tripped_br)), tuple(sorted(faults.items(), key=lambda kv: kv[0])),
               tuple(sorted(tripped_m)))
        if key not in cache:
            cache[key] = reduce_network(eq, tripped_br, faults, tripped_m)
        return cache[key]

    e_mag = eq.e_mag
    hs = eq.h * eq.s_rated
    accel = w_s / (2.0 * hs)
    damp = eq.damping * eq.s_rated / w_s
    p_mech0 = eq.p_mech
    p_plant0 = eq.plant_p0
    headroom0 = np.array([p.nameplate for p in plants]) - p_plant0
    delta_coi0 = eq.delta_coi0
    active = np.ones(ng, dtype=bool)

    # state layout: delta | dw | p_gov | p_agc | f_filter
    n_state = 3 * ng + 2
    y = np.zeros(n_state)
    y[:ng] = eq.delta0
    y[-1] = f_s
    if initial_offset is not None:
        y[: 2 * ng] += np.asarray(initial_offset, dtype=float)

    def weights():
        w = np.where(active, hs, 0.0)
        return w / w.sum()

    wts = weights()

    def algebraic(t, yv, net):
        delta = yv[:ng]
        dw = yv[ng: 2 * ng]
        dcoi = wts @ delta
        f_coi = f_s + (wts @ dw) / (2 * math.pi)
        p_plant = p_plant0 + plant_offset
        for r in plant_ramps:
            p_plant[r.slot] += r.value(t)
        if use_si:
            rocof = (f_coi - yv[-1]) / t_f
            room = np.maximum(headroom0 - (p_plant - p_plant0), 0.0)
            p_plant = p_plant + np.clip(-si_gain * rocof, 0.0, room)
        i_bus = plant_current(eq, p_plant, dcoi) if len(plants) else np.zeros(nb, dtype=complex)
        return delta, dw, f_coi, i_bus

    def rhs(t, yv, net):
        delta, dw, f_coi, i_bus = algebraic(t, yv, net)
        pe = net.electrical_power(delta, e_mag, i_bus) * base
        p_gov = yv[2 * ng: 3 * ng]
        p_agc = yv[3 * ng]
        pm = p_mech0 + mech_offset + p_gov
        for r in mech_ramps:
            pm[r.slot] += r.value(t)
        dydt = np.zeros(n_state)
        if use_agc:
            pm = pm + np.where(gov, 0.0, alpha * p_agc)
            dydt[3 * ng] = -k_agc * (f_coi - f_s)
        ddw = accel * (pm - pe - damp * dw)
        dydt[:ng] = np.where(active, dw, 0.0)
        dydt[ng: 2 * ng] = np.where(active, ddw, 0.0)
        if gov.any():
            df = dw / (2 * math.pi)
            df_eff = np.sign(df) * np.maximum(np.abs(df) - dband, 0.0)
            u = -df_eff / (droop * f_s) * eq.s_rated
            if use_agc:
                u = u + alpha * p_agc
            dydt[2 * ng: 3 * ng] = np.where(gov & active, (u - p_gov) / tg, 0.0)
        if use_si:
            dydt[-1] = (f_coi - yv[-1]) / t_f
        return dydt

    out_delta = np.empty((n_steps + 1, ng))
    out_dw = np.empty((n_steps + 1, ng))
    out_v = np.empty((n_steps + 1, nb))
    out_f = np.empty(n_steps + 1)
    out_pe = np.empty((n_steps + 1, ng))

    def record(k, net):
        t = times[k]
        delta, dw, f_coi, i_bus = algebraic(t, y, net)
        out_delta[k] = delta
        out_dw[k] = dw
        out_f[k] = f_coi
        out_v[k] = np.abs(net.bus_voltages(delta, e_mag, i_bus))
        out_pe[k] = net.electrical_power(delta, e_mag, i_bus) * base

    def partial(k):
        return _make_trace(times[:k], out_delta[:k], out_dw[:k], out_v[:k], out_f[:k], out_pe[:k],
                           eq, case, step, events, controls)

    h = step
    for k in range(n_steps + 1):
        for item in discrete.get(k, ()):
            kind, target, val = item
            if kind == "mech":
                mech_offset[target] += val
            elif kind == "plant":
                plant_offset[target] += val
            elif kind == "fault_on":
                faults[target] = val
            elif kind == "fault_off":
                faults.pop(target, None)
                if val is not None:
                    tripped_br.add(val)
            elif kind == "trip":
                if target in midx:
                    tripped_m.add(target)
                    active[midx[target]] = False
                    wts = weights()
                else:
                    tripped_br.add(target)
        net = network()
        record(k, net)
        if k == n_steps:
            break
        t = times[k]
        k1 = rhs(t, y, net)
        k2 = rhs(t + h / 2, y + h / 2 * k1, net)
        k3 = rhs(t + h / 2, y + h / 2 * k2, net)
        k4 = rhs(t + h, y + h * k3, net)
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise SimulationError(f"numerical blow-up after t = {t:.6g} s", t, partial(k + 1))

    return _make_trace(times, out_delta, out_dw, out_v, out_f, out_pe, eq, case, step, events, controls)


def _make_trace(times, delta, dw, vm, f, pe, eq, case, step, events, controls) -> DynamicTrace:
    return DynamicTrace(
        time=times, delta=delta, omega=dw, bus_vm=vm, coi_frequency=f, p_elec=pe,
        machine_ids=eq.machine_ids, bus_ids=tuple(b.id for b in case.buses),
        metadata={
            "step": step,
            "integrator": "rk4",
            "system_frequency": case.system_frequency,
            "events": [e.to_dict() for e in events],
            "controls": {
                "governors": controls.governors, "agc": controls.agc, "agc_gain": controls.agc_gain,
                "agc_time": controls.agc_time, "synthetic_inertia": controls.synthetic_inertia,
            },
        },
    )


# ---------------------------------------------------------------------------
# post-processing


def frequency_metrics(
    trace: DynamicTrace,
    ufls_threshold: Optional[float] = None,
    ufls_dwell: float = UFLS_DWELL,
    event_time: Optional[float] = None,
    rocof_window: float = ROCOF_WINDOW,
    settle_window: float = 5.0,
    settle_band: float = 0.01,
) -> FrequencyMetrics:
    """Nadir, initial ROCOF, settling frequency and UFLS pickup of the COI frequency.

    Initial ROCOF is the least-squares slope over the first `rocof_window`
    seconds after the event. UFLS trips when the frequency stays below the
    threshold for at least `ufls_dwell` seconds (each sample held for one step).
    """
    t, f = trace.time, trace.coi_frequency
    if t.size == 0:
        raise ValueError("empty trace")
    f_s = trace.metadata.get("system_frequency", 60.0)
    if ufls_threshold is None:
        ufls_threshold = f_s - UFLS_THRESHOLD_OFFSET
    t_e = trace.event_time if event_time is None else event_time
    k = int(np.argmin(f))
    win = (t >= t_e - 1e-12) & (t <= t_e + rocof_window + 1e-12)
    if win.sum() >= 2:
        tw, fw = t[win] - t_e, f[win]
        tc = tw - tw.mean()
        rocof = float(np.dot(tc, fw - fw.mean()) / np.dot(tc, tc))
    else:
        rocof = 0.0
    dt = float(t[1] - t[0]) if t.size > 1 else 0.0
    below = f < ufls_threshold
    tripped = False
    run = 0
    for flag in below:
        run = run + 1 if flag else 0
        if run * dt >= ufls_dwell - 1e-12 and run > 0:
            tripped = True
            break
    tail = t >= t[-1] - settle_window
    ft = f[tail]
    settling = float(ft.mean()) if ft.size and ft.max() - ft.min() <= settle_band else None
    return FrequencyMetrics(
        nadir=float(f[k]), nadir_time=float(t[k]), initial_rocof=rocof,
        settling_frequency=settling, ufls_tripped=tripped,
    )


def primary_secondary_response(
    case: GridCase,
    event: DisturbanceEvent,
    horizon: float = 300.0,
    step: float = 0.01,
    agc: bool = True,
    **metric_kwargs,
) -> tuple[DynamicTrace, FrequencyMetrics]:
    """Run one event with governors on (and AGC unless disabled)."""
    if not any(m.governor for m in case.machines):
        raise ValueError("primary response needs at least one governor-equipped machine")
    if agc and not sum(m.agc_participation for m in case.machines) > 0:
        raise ValueError("secondary response needs agc_participation > 0 on some machine")
    trace = simulate(case, None, [event], horizon, step, ControlOptions(governors=True, agc=agc))
    return trace, frequency_metrics(trace, **metric_kwargs)


def monitored_plants(case: GridCase) -> dict[str, str]:
    return {p.id: p.bus for p in case.renewables}


def check_ride_through(
    trace: DynamicTrace,
    envelope: RideThroughEnvelope,
    monitored: Mapping[str, str],
    event_time: Optional[float] = None,
    atol: float = 0.0,
) -> dict[str, RideThroughResult]:
    """Compare post-event bus voltage and COI frequency with the envelope (bounds inclusive).

    `monitored` maps plant id -> bus id. Reports the earliest violation per plant.
    """
    t_e = trace.event_time if event_time is None else event_time
    post = trace.time >= t_e - 1e-12
    ts = trace.time[post] - t_e
    f = trace.coi_frequency[post]
    f_lo, f_hi = envelope.frequency_bounds(ts)
    v_lo, v_hi = envelope.voltage_bounds(ts)
    results = {}
    for plant, bus in monitored.items():
        v = trace.bus_voltage(bus)[post]
        candidates = []
        for q, val, lo, hi in (("voltage", v, v_lo, v_hi), ("frequency", f, f_lo, f_hi)):
            bad_lo = val < lo - atol
            bad_hi = val > hi + atol
            for bad, name, bound in ((bad_lo, "min", lo), (bad_hi, "max", hi)):
                if bad.any():
                    i = int(np.argmax(bad))
                    candidates.append((float(ts[i] + t_e), q, float(val[i]), name, float(bound[i])))
        if candidates:
            results[plant] = RideThroughResult(plant, False, min(candidates))
        else:
            results[plant] = RideThroughResult(plant, True, None)
    return results


# ---------------------------------------------------------------------------
# exports


def trace_csv(trace: DynamicTrace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = ["time"]
    head += [f"delta_{m}" for m in trace.machine_ids]
    head += [f"omega_{m}" for m in trace.machine_ids]
    head += [f"v_{b}" for b in trace.bus_ids]
    head += ["coi_frequency"]
    w.writerow(head)
    for k in range(trace.time.size):
        row = [trace.time[k], *trace.delta[k], *trace.omega[k], *trace.bus_vm[k], trace.coi_frequency[k]]
        w.writerow([repr(float(x)) for x in row])
    return buf.getvalue()


def metrics_to_dict(m: FrequencyMetrics) -> dict:
    return {
        "nadir_hz": m.nadir, "nadir_time_s": m.nadir_time, "initial_rocof_hz_per_s": m.initial_rocof,
        "settling_frequency_hz": m.settling_frequency, "ufls_tripped": m.ufls_tripped,
    }


def summary_json(trace: DynamicTrace, metrics: FrequencyMetrics, ride_through=None) -> str:
    doc = {"metrics": metrics_to_dict(metrics), "metadata": trace.metadata}
    if ride_through is not None:
        doc["ride_through"] = {
            p: {"passed": r.passed, "first_violation": r.first_violation} for p, r in sorted(ride_through.items())
        }
    return json.dumps(doc, indent=1, sort_keys=True)


def swing_rhs(eq: Equilibrium, x: np.ndarray, net: Optional[ReducedNetwork] = None) -> np.ndarray:
    """Right-hand side of the uncontrolled swing equations for state x = [delta; dw]."""
    case = eq.case
    ng = len(eq.machine_ids)
    net = reduce_network(eq) if net is None else net
    delta, dw = x[:ng], x[ng:]
    dcoi = eq.coi_weights @ delta
    pe = net.electrical_power(delta, eq.e_mag, plant_current(eq, eq.plant_p0, dcoi)) * case.base_mva
    w_s = case.omega_s
    ddw = w_s / (2 * eq.h * eq.s_rated) * (eq.p_mech - pe - eq.damping * eq.s_rated / w_s * dw)
    return np.concatenate([dw, ddw])
