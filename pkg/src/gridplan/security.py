"""
N-1 security screening and severity ranking.

Each single branch or machine outage is applied to a copy of the case,
screened with a dc power flow, and, for the most severe `top_k` screened
cases, re-solved with the full ac power flow plus a loadability-margin search.
The severity score combines voltage excursions, thermal overloads and the
closeness of the post-contingency point to the loadability limit:

    total = w_v * sum(excess_V / 0.05) + w_t * sum(max(0, loading - 1))
            + w_m * max(0, 1 - margin / margin_ref)

Diverged or infeasible (islanding, insufficient redispatch) contingencies
score the divergence penalty, which ranks them above every finite score.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .adequacy import DEFAULT_LEVELS
from .grid_model import BusKind, GridCase, islands, natural_key, set_penetration
from .steady_state import (
    AC_NEWTON,
    DC_LINEAR,
    LimitReport,
    PowerFlowSolution,
    check_limits,
    loadability_margin,
    solve_power_flow,
)

VOLTAGE_UNIT = 0.05  # pu excursion counted as one unit of voltage severity


class ContingencyKind(str, Enum):
    BRANCH_OUTAGE = "branch_outage"
    MACHINE_OUTAGE = "machine_outage"


class Status(str, Enum):
    SOLVED = "solved"
    DIVERGED = "diverged"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class Contingency:
    id: str
    kind: ContingencyKind
    element: str

    @classmethod
    def branch(cls, branch_id: str) -> "Contingency":
        return cls(f"branch:{branch_id}", ContingencyKind.BRANCH_OUTAGE, branch_id)

    @classmethod
    def machine(cls, machine_id: str) -> "Contingency":
        return cls(f"machine:{machine_id}", ContingencyKind.MACHINE_OUTAGE, machine_id)


@dataclass(frozen=True)
class PostContingency:
    contingency: Contingency
    case: GridCase
    feasible: bool
    reason: str = ""


@dataclass(frozen=True)
class SeverityWeights:
    voltage: float = 1.0
    thermal: float = 1.0
    margin: float = 1.0
    margin_ref: float = 0.2
    divergence_penalty: float = 1e6

    def __post_init__(self):
        for name in ("voltage", "thermal", "margin"):
            if getattr(self, name) < 0:
                raise ValueError(f"weight {name} must be >= 0")
        if self.margin_ref <= 0:
            raise ValueError("margin_ref must be positive")

    def as_dict(self) -> dict:
        return {"w_v": self.voltage, "w_t": self.thermal, "w_m": self.margin,
                "margin_ref": self.margin_ref, "divergence_penalty": self.divergence_penalty}


@dataclass(frozen=True)
class SeverityScore:
    voltage_term: float
    thermal_term: float
    margin_term: float
    total: float
    diverged: bool = False
    status: Status = Status.SOLVED

    @classmethod
    def penalty(cls, weights: SeverityWeights, status: Status) -> "SeverityScore":
        return cls(0.0, 0.0, 0.0, weights.divergence_penalty, status is Status.DIVERGED, status)


@dataclass(frozen=True)
class ContingencyResult:
    contingency: Contingency
    score: SeverityScore
    screen: str  # "dc" or "ac"
    reason: str = ""
    limits: Optional[LimitReport] = None
    margin: Optional[float] = None


@dataclass(frozen=True)
class LevelRanking:
    penetration: float
    results: list[ContingencyResult]

    @property
    def worst(self) -> Optional[ContingencyResult]:
        return self.results[0] if self.results else None

    @property
    def secure(self) -> bool:
        return all(r.score.total == 0.0 for r in self.results)


@dataclass(frozen=True)
class SecurityReport:
    weights: SeverityWeights
    top_k: int
    levels: list[LevelRanking] = field(default_factory=list)

    @property
    def secure(self) -> bool:
        return all(lv.secure for lv in self.levels)

    def level(self, penetration: float) -> LevelRanking:
        for lv in self.levels:
            if lv.penetration == penetration:
                return lv
        raise KeyError(penetration)


# ---------------------------------------------------------------------------
# enumeration and application


def enumerate_n1(case: GridCase) -> list[Contingency]:
    """One outage per branch, then one per conventional machine, each sorted by id."""
    branches = sorted((br.id for br in case.branches), key=natural_key)
    machines = sorted((m.id for m in case.machines), key=natural_key)
    return [Contingency.branch(b) for b in branches] + [Contingency.machine(m) for m in machines]


def _retype_buses(case: GridCase, machines) -> tuple:
    """PV buses left without a machine become PQ; a lost slack moves to the largest machine."""
    with_machine = {m.bus for m in machines}
    slack = case.slack_bus
    new_slack = slack.id
    if slack.id not in with_machine and machines:
        biggest = max(machines, key=lambda m: (m.p_max, [-ord(ch) for ch in m.id]))
        new_slack = biggest.bus
    buses = []
    for b in case.buses:
        kind = b.kind
        if b.id == new_slack:
            kind = BusKind.SLACK
        elif b.kind is not BusKind.PQ and b.id not in with_machine:
            kind = BusKind.PQ
        elif b.kind is BusKind.SLACK:
            kind = BusKind.PV
        buses.append(b if kind is b.kind else dataclasses.replace(b, kind=kind))
    return tuple(buses)


def apply_contingency(case: GridCase, c: Contingency) -> PostContingency:
    """Copy of `case` with the element removed; the input case is untouched.

    A machine outage spreads its dispatch over the remaining machines in
    proportion to their headroom p_max - p_set.
    """
    if c.kind is ContingencyKind.BRANCH_OUTAGE:
        case.branch(c.element)
        post = dataclasses.replace(case, branches=tuple(br for br in case.branches if br.id != c.element))
        parts = islands(post)
        if len(parts) > 1:
            slack = case.slack_bus.id
            cut = sorted(set().union(*(p for p in parts if slack not in p)), key=natural_key)
            return PostContingency(c, post, False, f"islands bus(es) {', '.join(cut)}")
        return PostContingency(c, post, True)

    lost = case.machine(c.element)
    rest = [m for m in case.machines if m.id != c.element]
    if not rest:
        post = dataclasses.replace(case, machines=())
        return PostContingency(c, post, False, "no machine left to carry the load")
    headroom = np.array([max(m.p_max - m.p_set, 0.0) for m in rest])
    need = lost.p_set
    if need > 0 and headroom.sum() < need:
        post = dataclasses.replace(case, machines=tuple(rest))
        return PostContingency(
            c, post, False, f"redispatch needs {need:g} MW, headroom is {headroom.sum():g} MW")
    if need > 0:
        share = need * headroom / headroom.sum()
        rest = [dataclasses.replace(m, p_set=m.p_set + float(s)) for m, s in zip(rest, share)]
    post = dataclasses.replace(case, machines=tuple(rest))
    post = dataclasses.replace(post, buses=_retype_buses(post, rest))
    return PostContingency(c, post, True)


# ---------------------------------------------------------------------------
# scoring


def severity_index(
    case: GridCase,
    sol_post: Optional[PowerFlowSolution],
    limits: Optional[LimitReport],
    margin: Optional[float],
    weights: SeverityWeights = SeverityWeights(),
) -> SeverityScore:
    """Severity of one post-contingency state.

    `sol_post` None or not converged scores the divergence penalty. `margin`
    None skips the margin term (dc screening).
    """
    if sol_post is None or not sol_post.converged:
        return SeverityScore.penalty(weights, Status.DIVERGED)
    if limits is None:
        limits = check_limits(case, sol_post)
    v_excess = 0.0
    for bus_id, vm, side in limits.voltage_violations:
        b = case.bus(bus_id)
        v_excess += (b.v_min - vm) if side == "v_min" else (vm - b.v_max)
    voltage_term = v_excess / VOLTAGE_UNIT
    thermal_term = sum(max(0.0, ld - 1.0) for ld in limits.loadings.values())
    margin_term = 0.0 if margin is None else max(0.0, 1.0 - float(margin) / weights.margin_ref)
    total = weights.voltage * voltage_term + weights.thermal * thermal_term + weights.margin * margin_term
    return SeverityScore(voltage_term, thermal_term, margin_term, total)


def _dc_limits(case: GridCase, sol: PowerFlowSolution) -> LimitReport:
    loadings = {br.id: abs(float(sol.p_from[k])) / br.thermal_rating for k, br in enumerate(case.branches)}
    thermal = [(k, v) for k, v in loadings.items() if v > 1.0]
    return LimitReport(thermal_violations=thermal, loadings=loadings,
                       worst_loading=max(loadings.values(), default=0.0))


def _dc_job(args):
    post, weights = args
    c = post.contingency
    if not post.feasible:
        return ContingencyResult(c, SeverityScore.penalty(weights, Status.INFEASIBLE), "dc", post.reason)
    try:
        sol = solve_power_flow(post.case, DC_LINEAR)
    except (np.linalg.LinAlgError, ValueError) as exc:
        return ContingencyResult(c, SeverityScore.penalty(weights, Status.DIVERGED), "dc", str(exc))
    lim = _dc_limits(post.case, sol)
    return ContingencyResult(c, severity_index(post.case, sol, lim, None, weights), "dc", limits=lim)


def _ac_job(args):
    post, weights = args
    c = post.contingency
    try:
        sol = solve_power_flow(post.case, AC_NEWTON, raise_on_failure=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        return ContingencyResult(c, SeverityScore.penalty(weights, Status.DIVERGED), "ac", str(exc))
    if not sol.converged:
        return ContingencyResult(c, SeverityScore.penalty(weights, Status.DIVERGED), "ac", sol.message)
    lim = check_limits(post.case, sol)
    margin = loadability_margin(post.case).margin
    return ContingencyResult(c, severity_index(post.case, sol, lim, margin, weights), "ac",
                             limits=lim, margin=margin)


def _order(results: Sequence[ContingencyResult]) -> list[ContingencyResult]:
    return sorted(results, key=lambda r: (-r.score.total, natural_key(r.contingency.id)))


def _map(fn, jobs, pool):
    return list(pool.map(fn, jobs)) if pool is not None else [fn(j) for j in jobs]


def rank_contingencies(
    case: GridCase,
    contingencies: Optional[Sequence[Contingency]] = None,
    penetration_levels: Sequence[float] = DEFAULT_LEVELS,
    weights: SeverityWeights = SeverityWeights(),
    top_k: int = 20,
    workers: int = 1,
) -> SecurityReport:
    """Score and rank contingencies at every penetration level.

    Per level: dc screen of all contingencies, then ac power flow and
    loadability margin for the `top_k` worst screened ones. Results are
    sorted by descending total with ties broken by contingency id, so the
    ranking does not depend on evaluation order or worker count.
    """
    conts = enumerate_n1(case) if contingencies is None else list(contingencies)
    ids = [c.id for c in conts]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate contingency ids")
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        levels = []
        for level in penetration_levels:
            at_level = set_penetration(case, float(level))
            posts = [apply_contingency(at_level, c) for c in conts]
            screened = _order(_map(_dc_job, [(p, weights) for p in posts], pool))
            by_id = {p.contingency.id: p for p in posts}
            chosen = [r.contingency.id for r in screened[:top_k] if r.score.status is Status.SOLVED]
            refined = _map(_ac_job, [(by_id[i], weights) for i in chosen], pool)
            final = {r.contingency.id: r for r in screened}
            final.update({r.contingency.id: r for r in refined})
            levels.append(LevelRanking(float(level), _order(final.values())))
    finally:
        if pool is not None:
            pool.shutdown()
    return SecurityReport(weights, top_k, levels)


# ---------------------------------------------------------------------------
# exports

CSV_COLUMNS = ["penetration", "rank", "contingency_id", "kind", "total", "voltage_term",
               "thermal_term", "margin_term", "diverged", "status", "screen"]


def ranked_csv(report: SecurityReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for lv in report.levels:
        for rank, r in enumerate(lv.results, start=1):
            s = r.score
            w.writerow([repr(lv.penetration), rank, r.contingency.id, r.contingency.kind.value,
                        repr(s.total), repr(s.voltage_term), repr(s.thermal_term), repr(s.margin_term),
                        str(s.diverged).lower(), s.status.value, r.screen])
    return buf.getvalue()


def report_to_dict(report: SecurityReport) -> dict:
    levels = []
    for lv in report.levels:
        rows = []
        for rank, r in enumerate(lv.results, start=1):
            s = r.score
            rows.append({
                "rank": rank, "contingency_id": r.contingency.id, "kind": r.contingency.kind.value,
                "element": r.contingency.element, "total": s.total, "voltage_term": s.voltage_term,
                "thermal_term": s.thermal_term, "margin_term": s.margin_term, "diverged": s.diverged,
                "status": s.status.value, "screen": r.screen, "reason": r.reason, "margin": r.margin,
            })
        worst = lv.worst
        levels.append({
            "penetration": lv.penetration, "secure": lv.secure,
            "worst_case": worst.contingency.id if worst else None, "ranking": rows,
        })
    return {"weights": report.weights.as_dict(), "top_k": report.top_k,
            "secure": report.secure, "levels": levels}


def report_json(report: SecurityReport) -> str:
    return json.dumps(report_to_dict(report), indent=1, sort_keys=True)
