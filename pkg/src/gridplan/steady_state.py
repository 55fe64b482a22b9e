"""
Operating-point solution and steady-state screening.

Power flow is solved either with a full Newton-Raphson iteration in polar
coordinates or with the lossless linear (dc) approximation. The resulting
operating point is screened against branch thermal ratings and bus voltage
limits, and `loadability_margin` estimates the distance to the voltage-collapse
nose by scaling load until Newton stops converging.
"""

from __future__ import annotations

import dataclasses
import io
import json
import csv
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .grid_model import BusKind, GridCase

AC_NEWTON = "ac_newton"
DC_LINEAR = "dc_linear"
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 20


class PowerFlowError(RuntimeError):
    """Newton failed: iteration cap reached, divergence, or a singular Jacobian."""

    def __init__(self, message, iterations=0, max_mismatch=float("nan"), bus=None):
        super().__init__(message)
        self.iterations = iterations
        self.max_mismatch = max_mismatch
        self.bus = bus


@dataclass(frozen=True)
class PowerFlowSolution:
    method: str
    bus_ids: tuple[str, ...]
    vm: np.ndarray
    va: np.ndarray
    branch_ids: tuple[str, ...]
    p_from: np.ndarray
    q_from: np.ndarray
    p_to: np.ndarray
    q_to: np.ndarray
    # generation at each bus (machines incl. slack), MW / MVAr
    p_gen: np.ndarray
    q_gen: np.ndarray
    slack_p: float
    slack_q: float
    converged: bool
    iterations: int
    max_mismatch: float
    message: str = ""

    @property
    def voltage(self) -> np.ndarray:
        return self.vm * np.exp(1j * self.va)

    @property
    def losses(self) -> float:
        return float(np.sum(self.p_from + self.p_to))


@dataclass(frozen=True)
class LimitReport:
    thermal_violations: list[tuple[str, float]] = field(default_factory=list)
    voltage_violations: list[tuple[str, float, str]] = field(default_factory=list)
    worst_loading: float = 0.0
    worst_voltage_dev: float = 0.0
    loadings: dict[str, float] = field(default_factory=dict)
    # buses whose limits were not given in the case (implementer defaults)
    defaulted_bounds: list[str] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return not self.thermal_violations and not self.voltage_violations


@dataclass(frozen=True)
class LoadabilityMargin:
    margin: float
    lambda_star: float
    capped: bool

    def __float__(self) -> float:
        return self.margin

    def __str__(self) -> str:
        return f">= {self.margin:g}" if self.capped else f"{self.margin:g}"


# ---------------------------------------------------------------------------
# network matrices


def admittance_matrix(case: GridCase, skip_branches=()) -> np.ndarray:
    """Dense bus admittance matrix (pu) with pi-equivalent branches."""
    idx = case.bus_index()
    n = len(case.buses)
    y = np.zeros((n, n), dtype=complex)
    for br in case.branches:
        if br.id in skip_branches:
            continue
        f, t = idx[br.from_bus], idx[br.to_bus]
        ys = 1.0 / complex(br.r, br.x)
        ysh = 0.5j * br.b_shunt
        y[f, f] += ys + ysh
        y[t, t] += ys + ysh
        y[f, t] -= ys
        y[t, f] -= ys
    return y


def scheduled_injections(case: GridCase) -> tuple[np.ndarray, np.ndarray]:
    """Specified net injection per bus in pu: (machines + renewables) - load.

    Renewables are unity power factor negative loads. The slack entry is
    meaningless for the solver but kept for completeness.
    """
    idx = case.bus_index()
    n = len(case.buses)
    p = np.zeros(n)
    q = np.zeros(n)
    for i, b in enumerate(case.buses):
        p[i] -= b.load_p
        q[i] -= b.load_q
    for m in case.machines:
        p[idx[m.bus]] += m.p_set
        q[idx[m.bus]] += m.q_set
    for r in case.renewables:
        p[idx[r.bus]] += r.output_mw
    return p / case.base_mva, q / case.base_mva


def _bus_sets(case: GridCase):
    kinds = [b.kind for b in case.buses]
    slack = [i for i, k in enumerate(kinds) if k is BusKind.SLACK]
    if len(slack) != 1:
        raise ValueError("power flow needs exactly one slack bus")
    pv = [i for i, k in enumerate(kinds) if k is BusKind.PV]
    pq = [i for i, k in enumerate(kinds) if k is BusKind.PQ]
    return slack[0], np.array(pv, dtype=int), np.array(pq, dtype=int)


def mismatch(ybus, v, p_spec, q_spec, pvpq, pq) -> np.ndarray:
    """Power mismatch [dP(pv+pq); dQ(pq)] in pu for complex bus voltages `v`."""
    s = v * np.conj(ybus @ v)
    return np.concatenate([s.real[pvpq] - p_spec[pvpq], s.imag[pq] - q_spec[pq]])


def jacobian(ybus, v, pvpq, pq) -> np.ndarray:
    """Analytic polar Jacobian d[P;Q]/d[theta(pvpq); |V|(pq)]."""
    ibus = ybus @ v
    vnorm = v / np.abs(v)
    ds_dvm = np.diag(v) @ np.conj(ybus @ np.diag(vnorm)) + np.diag(np.conj(ibus) * vnorm)
    ds_dva = 1j * np.diag(v) @ np.conj(np.diag(ibus) - ybus @ np.diag(v))
    j11 = ds_dva.real[np.ix_(pvpq, pvpq)]
    j12 = ds_dvm.real[np.ix_(pvpq, pq)]
    j21 = ds_dva.imag[np.ix_(pq, pvpq)]
    j22 = ds_dvm.imag[np.ix_(pq, pq)]
    return np.block([[j11, j12], [j21, j22]])


def _pivot_bus(jac, pvpq, pq, case) -> str:
    _, _, vt = np.linalg.svd(jac)
    k = int(np.argmax(np.abs(vt[-1])))
    cols = list(pvpq) + list(pq)
    return case.buses[cols[k]].id


def _newton(case, ybus, v0, tol, max_iter):
    slack, pv, pq = _bus_sets(case)
    p_spec, q_spec = scheduled_injections(case)
    pvpq = np.concatenate([pv, pq]).astype(int)
    npvpq = len(pvpq)
    v = v0.astype(complex).copy()
    va, vm = np.angle(v), np.abs(v)
    f = mismatch(ybus, v, p_spec, q_spec, pvpq, pq)
    err = float(np.max(np.abs(f))) if f.size else 0.0
    it = 0
    while err > tol:
        if it >= max_iter:
            raise PowerFlowError(f"no convergence after {it} iterations (max mismatch {err:.3e} pu)",
                                 it, err)
        jac = jacobian(ybus, v, pvpq, pq)
        if not np.all(np.isfinite(jac)) or np.linalg.cond(jac) > 1e14:
            bus = _pivot_bus(jac, pvpq, pq, case) if np.all(np.isfinite(jac)) else None
            raise PowerFlowError(f"singular Jacobian at bus {bus}", it, err, bus)
        dx = np.linalg.solve(jac, -f)
        va[pvpq] += dx[:npvpq]
        vm[pq] += dx[npvpq:]
        v = vm * np.exp(1j * va)
        it += 1
        f = mismatch(ybus, v, p_spec, q_spec, pvpq, pq)
        err = float(np.max(np.abs(f))) if f.size else 0.0
        if not np.isfinite(err) or err > 1e10 or np.any(vm <= 0):
            raise PowerFlowError(f"Newton diverged at iteration {it}", it, err)
    return v, it, err


def flat_start(case: GridCase) -> np.ndarray:
    return np.array([b.v_set if b.kind is not BusKind.PQ else 1.0 for b in case.buses], dtype=complex)


def _finish(case, ybus, v, method, it, err, converged=True, message="") -> PowerFlowSolution:
    idx = case.bus_index()
    base = case.base_mva
    nb = len(case.branches)
    pf, qf, pt, qt = (np.zeros(nb) for _ in range(4))
    for k, br in enumerate(case.branches):
        f, t = idx[br.from_bus], idx[br.to_bus]
        ys = 1.0 / complex(br.r, br.x)
        ysh = 0.5j * br.b_shunt
        i_f = (ys + ysh) * v[f] - ys * v[t]
        i_t = (ys + ysh) * v[t] - ys * v[f]
        sf, st = v[f] * np.conj(i_f) * base, v[t] * np.conj(i_t) * base
        pf[k], qf[k], pt[k], qt[k] = sf.real, sf.imag, st.real, st.imag
    s_inj = v * np.conj(ybus @ v) * base
    p_gen, q_gen = _generation(case, s_inj)
    slack = idx[case.slack_bus.id]
    return PowerFlowSolution(
        method=method,
        bus_ids=tuple(b.id for b in case.buses),
        vm=np.abs(v),
        va=np.angle(v),
        branch_ids=tuple(br.id for br in case.branches),
        p_from=pf, q_from=qf, p_to=pt, q_to=qt,
        p_gen=p_gen, q_gen=q_gen,
        slack_p=float(p_gen[slack]), slack_q=float(q_gen[slack]),
        converged=converged, iterations=it, max_mismatch=err, message=message,
    )


def _generation(case, s_inj_mw):
    idx = case.bus_index()
    p = s_inj_mw.real.copy()
    q = s_inj_mw.imag.copy()
    for i, b in enumerate(case.buses):
        p[i] += b.load_p
        q[i] += b.load_q
    for r in case.renewables:
        p[idx[r.bus]] -= r.output_mw
    return p, q


def _dc(case: GridCase) -> PowerFlowSolution:
    idx = case.bus_index()
    n = len(case.buses)
    slack, _, _ = _bus_sets(case)
    bmat = np.zeros((n, n))
    for br in case.branches:
        f, t = idx[br.from_bus], idx[br.to_bus]
        b = 1.0 / br.x
        bmat[f, f] += b
        bmat[t, t] += b
        bmat[f, t] -= b
        bmat[t, f] -= b
    p_spec, _ = scheduled_injections(case)
    keep = [i for i in range(n) if i != slack]
    theta = np.zeros(n)
    if keep:
        theta[keep] = np.linalg.solve(bmat[np.ix_(keep, keep)], p_spec[keep])
    base = case.base_mva
    pf = np.array([(theta[idx[br.from_bus]] - theta[idx[br.to_bus]]) / br.x * base for br in case.branches])
    p_inj = bmat @ theta * base
    p_gen, _ = _generation(case, p_inj.astype(complex))
    zeros = np.zeros(len(case.branches))
    return PowerFlowSolution(
        method=DC_LINEAR,
        bus_ids=tuple(b.id for b in case.buses),
        vm=np.ones(n), va=theta,
        branch_ids=tuple(br.id for br in case.branches),
        p_from=pf, q_from=zeros.copy(), p_to=-pf, q_to=zeros.copy(),
        p_gen=p_gen, q_gen=np.zeros(n),
        slack_p=float(p_gen[slack]), slack_q=0.0,
        converged=True, iterations=0, max_mismatch=0.0,
    )


def solve_power_flow(
    case: GridCase,
    method: str = AC_NEWTON,
    *,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    v0: Optional[np.ndarray] = None,
    raise_on_failure: bool = True,
) -> PowerFlowSolution:
    """Solve the network operating point.

    Parameters
    ----------
    method : {"ac_newton", "dc_linear"}
    tol : float
        Convergence tolerance on the largest power mismatch, pu.
    v0 : array, optional
        Complex start voltages; flat start by default.
    raise_on_failure : bool
        When False a failed Newton solve returns a solution flagged
        ``converged=False`` carrying the last mismatch and the reason.
    """
    if method == DC_LINEAR:
        return _dc(case)
    if method != AC_NEWTON:
        raise ValueError(f"unknown power flow method {method!r}")
    ybus = admittance_matrix(case)
    start = flat_start(case) if v0 is None else np.asarray(v0, dtype=complex)
    try:
        v, it, err = _newton(case, ybus, start, tol, max_iter)
    except PowerFlowError as exc:
        if raise_on_failure:
            raise
        return _finish(case, ybus, start, AC_NEWTON, exc.iterations, exc.max_mismatch,
                       converged=False, message=str(exc))
    return _finish(case, ybus, v, AC_NEWTON, it, err)


def check_limits(case: GridCase, sol: PowerFlowSolution) -> LimitReport:
    """Screen a converged solution against thermal ratings and voltage bounds."""
    if not sol.converged:
        raise ValueError(f"cannot check limits of a non-converged solution ({sol.message})")
    thermal, loadings = [], {}
    for k, br in enumerate(case.branches):
        sf = abs(complex(sol.p_from[k], sol.q_from[k]))
        st = abs(complex(sol.p_to[k], sol.q_to[k]))
        loading = max(sf, st) / br.thermal_rating
        loadings[br.id] = loading
        if loading > 1.0:
            thermal.append((br.id, loading))
    voltage, worst_dev = [], 0.0
    for i, b in enumerate(case.buses):
        vm = float(sol.vm[i])
        if vm < b.v_min:
            voltage.append((b.id, vm, "v_min"))
            worst_dev = max(worst_dev, b.v_min - vm)
        elif vm > b.v_max:
            voltage.append((b.id, vm, "v_max"))
            worst_dev = max(worst_dev, vm - b.v_max)
    return LimitReport(
        thermal_violations=thermal,
        voltage_violations=voltage,
        worst_loading=max(loadings.values(), default=0.0),
        worst_voltage_dev=worst_dev,
        loadings=loadings,
        defaulted_bounds=[b.id for b in case.buses if b.bounds_defaulted],
    )


def scale_load(case: GridCase, lam: float, direction: Optional[Mapping[str, float]] = None) -> GridCase:
    """Load at bus b becomes load_b * (1 + (lam - 1) * w_b); w_b = 1 for all buses by default."""
    buses = []
    for b in case.buses:
        w = 1.0 if direction is None else float(direction.get(b.id, 0.0))
        k = 1.0 + (lam - 1.0) * w
        buses.append(dataclasses.replace(b, load_p=b.load_p * k, load_q=b.load_q * k))
    return dataclasses.replace(case, buses=tuple(buses))


def loadability_margin(
    case: GridCase,
    direction: Optional[Mapping[str, float]] = None,
    *,
    margin_cap: float = 10.0,
    first_step: float = 0.1,
    growth: float = 1.5,
    lambda_tol: float = 1e-3,
) -> LoadabilityMargin:
    """Distance to the loadability nose along a load-scaling direction.

    Steps the multiplier geometrically until Newton fails (the proxy for the
    bifurcation point), then bisects the bracket down to `lambda_tol`. Each
    trial is warm-started from the last converged voltages. Returns
    ``capped=True`` when the search reaches ``1 + margin_cap`` without failing.
    """
    base = solve_power_flow(case, raise_on_failure=False)
    if not base.converged:
        raise ValueError(f"base case infeasible: {base.message}")
    cap = 1.0 + margin_cap

    def converges(lam, v0):
        sol = solve_power_flow(scale_load(case, lam, direction), v0=v0, raise_on_failure=False)
        return sol if sol.converged else None

    lo, v_lo = 1.0, base.voltage
    step = first_step
    hi = None
    while hi is None:
        trial = min(lo + step, cap)
        sol = converges(trial, v_lo)
        if sol is None:
            hi = trial
        else:
            lo, v_lo = trial, sol.voltage
            if trial >= cap:
                return LoadabilityMargin(margin=margin_cap, lambda_star=cap, capped=True)
            step *= growth
    while hi - lo > lambda_tol:
        mid = 0.5 * (lo + hi)
        sol = converges(mid, v_lo)
        if sol is None:
            hi = mid
        else:
            lo, v_lo = mid, sol.voltage
    return LoadabilityMargin(margin=lo - 1.0, lambda_star=lo, capped=False)


# ---------------------------------------------------------------------------
# exports


def _num(x) -> str:
    return repr(float(x))


def solution_bus_csv(sol: PowerFlowSolution) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bus", "vm_pu", "va_rad", "p_gen_mw", "q_gen_mvar"])
    for i, b in enumerate(sol.bus_ids):
        w.writerow([b, _num(sol.vm[i]), _num(sol.va[i]), _num(sol.p_gen[i]), _num(sol.q_gen[i])])
    return buf.getvalue()


def solution_branch_csv(sol: PowerFlowSolution) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["branch", "p_from_mw", "q_from_mvar", "p_to_mw", "q_to_mvar"])
    for k, br in enumerate(sol.branch_ids):
        w.writerow([br, _num(sol.p_from[k]), _num(sol.q_from[k]), _num(sol.p_to[k]), _num(sol.q_to[k])])
    return buf.getvalue()


def solution_to_dict(sol: PowerFlowSolution) -> dict:
    return {
        "method": sol.method,
        "converged": sol.converged,
        "iterations": sol.iterations,
        "max_mismatch": sol.max_mismatch,
        "slack_p": sol.slack_p,
        "slack_q": sol.slack_q,
        "buses": [
            {"id": b, "vm": float(sol.vm[i]), "va": float(sol.va[i]),
             "p_gen": float(sol.p_gen[i]), "q_gen": float(sol.q_gen[i])}
            for i, b in enumerate(sol.bus_ids)
        ],
        "branches": [
            {"id": br, "p_from": float(sol.p_from[k]), "q_from": float(sol.q_from[k]),
             "p_to": float(sol.p_to[k]), "q_to": float(sol.q_to[k])}
            for k, br in enumerate(sol.branch_ids)
        ],
        "message": sol.message,
    }


def limits_to_dict(rep: LimitReport) -> dict:
    return {
        "feasible": rep.feasible,
        "thermal_violations": [{"branch": b, "loading": l} for b, l in rep.thermal_violations],
        "voltage_violations": [{"bus": b, "vm": v, "bound": s} for b, v, s in rep.voltage_violations],
        "worst_loading": rep.worst_loading,
        "worst_voltage_dev": rep.worst_voltage_dev,
        "defaulted_bounds": rep.defaulted_bounds,
        "defaulted_bounds_note": "0.95-1.05 pu implementer default, not a published value",
    }


def limits_json(rep: LimitReport) -> str:
    return json.dumps(limits_to_dict(rep), indent=1, sort_keys=True)
