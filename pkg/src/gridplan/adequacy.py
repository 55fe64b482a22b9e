"""
Generation adequacy: capacity outage tables, LOLE, LOLP and ELCC.

The analytic path convolves independent unit outage distributions into a
capacity outage probability table. Monte Carlo samples unit availability day
by day. Renewable plants enter either as a firm two-state unit of size
``nameplate * penetration`` or, with ``multi_state=True``, through their
``output_states`` distribution scaled by the same installed fraction.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .grid_model import (
    DAYS_PER_YEAR,
    ConventionalMachine,
    GridCase,
    LoadProfile,
    RenewablePlant,
    set_penetration,
    system_daily_peaks,
)

ANALYTIC = "analytic"
MONTE_CARLO = "monte_carlo"
FIRM = "firm"
MULTI_STATE = "multi_state"
LOLE_CRITERION = 0.1  # days/year
DEFAULT_LEVELS = tuple(round(0.1 * k, 10) for k in range(11))


class ElccUndefined(ValueError):
    """ELCC cannot be computed (zero baseline LOLE, zero-size candidate, no bracket)."""


@dataclass(frozen=True)
class OutageTable:
    capacity_on_outage: np.ndarray
    probability: np.ndarray
    total_capacity: float

    def __post_init__(self):
        caps = np.asarray(self.capacity_on_outage, dtype=float)
        probs = np.asarray(self.probability, dtype=float)
        object.__setattr__(self, "capacity_on_outage", caps)
        object.__setattr__(self, "probability", probs)
        if caps.shape != probs.shape:
            raise ValueError("capacity and probability arrays differ in length")
        if np.any(np.diff(caps) <= 0):
            raise ValueError("outage capacities must be strictly increasing")
        if np.any(probs < 0) or abs(math.fsum(probs) - 1.0) > 1e-9:
            raise ValueError("outage probabilities must be >= 0 and sum to 1")

    def as_dict(self) -> dict[float, float]:
        return dict(zip(self.capacity_on_outage.tolist(), self.probability.tolist()))

    def shortage_probability(self, load) -> np.ndarray:
        """P(available capacity < load), vectorised over `load`."""
        load = np.asarray(load, dtype=float)
        # available capacity in ascending order with the running shortage probability
        avail = (self.total_capacity - self.capacity_on_outage)[::-1]
        head = np.concatenate([[0.0], np.cumsum(self.probability[::-1])])
        return head[np.searchsorted(avail, load, side="left")]


@dataclass(frozen=True)
class AdequacyResult:
    lole: float
    lolp: float
    penetration: float
    method: str
    mc_std_err: Optional[float] = None
    renewable_model: str = FIRM
    seed: Optional[int] = None
    samples: Optional[int] = None

    @property
    def meets_criterion(self) -> bool:
        return self.lole <= LOLE_CRITERION


# ---------------------------------------------------------------------------
# outage table


def _two_state(capacity: float, forced_outage_rate: float) -> dict[float, float]:
    if forced_outage_rate == 0.0:
        return {0.0: 1.0}
    if forced_outage_rate == 1.0:
        return {capacity: 1.0}
    return {0.0: 1.0 - forced_outage_rate, capacity: forced_outage_rate}


def _multi_state(capacity: float, states) -> dict[float, float]:
    dist: dict[float, float] = {}
    for frac, prob in states:
        out = capacity - capacity * frac
        dist[out] = dist.get(out, 0.0) + prob
    return dist


def _round(c: float, increment: Optional[float]) -> float:
    if not increment:
        return c
    return round(c / increment) * increment


def convolve(table: dict[float, float], unit: dict[float, float], increment=None) -> dict[float, float]:
    out: dict[float, float] = {}
    for c1, p1 in table.items():
        for c2, p2 in unit.items():
            c = _round(c1 + c2, increment)
            out[c] = out.get(c, 0.0) + p1 * p2
    return out


def unit_models(
    machines: Iterable[ConventionalMachine],
    renewables: Iterable[RenewablePlant] = (),
    penetration: Optional[float] = None,
    multi_state: bool = False,
) -> list[tuple[float, dict[float, float]]]:
    """(capacity, outage distribution) per unit. Zero-capacity units are dropped."""
    units = [(m.p_max, _two_state(m.p_max, m.forced_outage_rate)) for m in machines]
    for r in renewables:
        frac = r.output_fraction if penetration is None else penetration
        cap = r.nameplate * frac
        if cap <= 0:
            continue
        if multi_state and r.output_states is not None:
            units.append((cap, _multi_state(cap, r.output_states)))
        else:
            units.append((cap, _two_state(cap, r.forced_outage_rate)))
    return [(c, d) for c, d in units if c > 0]


def build_outage_table(
    machines: Iterable[ConventionalMachine],
    renewables: Iterable[RenewablePlant] = (),
    penetration: Optional[float] = None,
    multi_state: bool = False,
    increment: Optional[float] = None,
) -> OutageTable:
    """Exact capacity outage probability table by sequential convolution.

    `penetration` overrides every plant's output fraction; `increment` rounds
    the capacity axis (off by default).
    """
    if penetration is not None and not 0.0 <= penetration <= 1.0:
        raise ValueError(f"penetration must lie in [0, 1], got {penetration!r}")
    table = {0.0: 1.0}
    total = 0.0
    for cap, dist in unit_models(machines, renewables, penetration, multi_state):
        if any(not 0.0 <= p <= 1.0 for p in dist.values()):
            raise ValueError("unit outage probabilities must lie in [0, 1]")
        table = convolve(table, dist, increment)
        total += cap
    caps = sorted(table)
    return OutageTable(np.array(caps), np.array([table[c] for c in caps]), total)


def case_outage_table(case: GridCase, penetration=None, multi_state=False, increment=None) -> OutageTable:
    return build_outage_table(case.machines, case.renewables, penetration, multi_state, increment)


# ---------------------------------------------------------------------------
# indices


def _daily(profile) -> np.ndarray:
    if isinstance(profile, LoadProfile):
        peaks = np.asarray(profile.daily_peaks, dtype=float)
    elif isinstance(profile, GridCase):
        peaks = system_daily_peaks(profile)
    else:
        peaks = np.asarray(profile, dtype=float)
    if peaks.shape != (DAYS_PER_YEAR,):
        raise ValueError(f"load profile must have 365 daily peaks, got shape {peaks.shape}")
    return peaks


def compute_lole(table: OutageTable, profile) -> float:
    """Expected shortage days per year: sum over days of P(available < daily peak)."""
    return float(math.fsum(table.shortage_probability(_daily(profile))))


def compute_lolp(table: OutageTable, profile) -> float:
    """P(available capacity < annual peak)."""
    return float(table.shortage_probability(np.max(_daily(profile))))


def analytic_adequacy(case: GridCase, penetration=None, multi_state=False) -> AdequacyResult:
    table = case_outage_table(case, penetration, multi_state)
    peaks = system_daily_peaks(case)
    level = _level(case, penetration)
    return AdequacyResult(
        lole=compute_lole(table, peaks),
        lolp=compute_lolp(table, peaks),
        penetration=level,
        method=ANALYTIC,
        renewable_model=MULTI_STATE if multi_state else FIRM,
    )


def _level(case, penetration):
    if penetration is not None:
        return float(penetration)
    fracs = {r.output_fraction for r in case.renewables}
    if not fracs:
        return 0.0
    return float(fracs.pop()) if len(fracs) == 1 else float("nan")


def _sample_unit_capacity(rng, cap, dist, shape):
    outs = np.array(sorted(dist))
    probs = np.array([dist[c] for c in outs])
    if len(outs) == 1:
        return np.full(shape, cap - outs[0])
    u = rng.random(shape)
    if len(outs) == 2 and outs[0] == 0.0:
        return np.where(u < probs[1], cap - outs[1], cap)
    k = np.searchsorted(np.cumsum(probs)[:-1], u, side="right")
    return cap - outs[k]


def monte_carlo_lole(
    case: GridCase,
    penetration: Optional[float] = None,
    samples: int = 10_000,
    seed: int = 0,
    multi_state: bool = False,
    chunk: int = 2_000,
) -> AdequacyResult:
    """Monte Carlo LOLE with independent per-day availability draws.

    Each sample is one simulated year of 365 days; every unit's state is drawn
    afresh each day. Returns the mean shortage days per year with its standard
    error, and LOLP estimated on the annual-peak day. Reproducible per seed.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if seed is None:
        raise ValueError("a deterministic seed is required")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    units = unit_models(case.machines, case.renewables, penetration, multi_state)
    peaks = system_daily_peaks(case)
    peak_day = int(np.argmax(peaks))
    total_days = 0.0
    total_sq = 0.0
    peak_short = 0
    done = 0
    while done < samples:
        n = min(chunk, samples - done)
        avail = np.zeros((n, DAYS_PER_YEAR))
        for cap, dist in units:
            avail += _sample_unit_capacity(rng, cap, dist, (n, DAYS_PER_YEAR))
        short = avail < peaks
        days = short.sum(axis=1).astype(float)
        total_days += days.sum()
        total_sq += np.dot(days, days)
        peak_short += int(short[:, peak_day].sum())
        done += n
    mean = total_days / samples
    var = max(total_sq / samples - mean * mean, 0.0) * samples / max(samples - 1, 1)
    return AdequacyResult(
        lole=float(mean),
        lolp=peak_short / samples,
        penetration=_level(case, penetration),
        method=MONTE_CARLO,
        mc_std_err=float(math.sqrt(var / samples)),
        renewable_model=MULTI_STATE if multi_state else FIRM,
        seed=seed,
        samples=samples,
    )


# ---------------------------------------------------------------------------
# ELCC


def compute_elcc(
    case: GridCase,
    candidate: Union[ConventionalMachine, RenewablePlant],
    target_metric: str = "lole",
    tol_mw: float = 0.1,
    rel_eps: float = 1e-12,
) -> float:
    """Effective load carrying capability of `candidate`, percent of its nameplate.

    Finds the largest uniform load increase dL in [0, C] (C = candidate size)
    for which LOLE(case + candidate, load + dL) does not exceed the baseline
    LOLE(case, load), by bisection to `tol_mw`. The lower bracket end is
    returned, so the result never overstates the credit.
    """
    if target_metric != "lole":
        raise ValueError("only LOLE equivalence is supported")
    if isinstance(candidate, RenewablePlant):
        size = candidate.output_mw
        unit_dist = _two_state(size, candidate.forced_outage_rate) if size > 0 else None
        if candidate.output_states is not None and size > 0:
            unit_dist = _multi_state(size, candidate.output_states)
    else:
        size = candidate.p_max
        unit_dist = _two_state(size, candidate.forced_outage_rate) if size > 0 else None
    if not size > 0:
        raise ElccUndefined("candidate has zero capacity; ELCC undefined")

    peaks = system_daily_peaks(case)
    base_table = case_outage_table(case)
    baseline = compute_lole(base_table, peaks)
    if baseline <= 0.0:
        raise ElccUndefined("baseline LOLE is zero; ELCC undefined")

    raw = convolve(base_table.as_dict(), unit_dist)
    caps = sorted(raw)
    with_table = OutageTable(np.array(caps), np.array([raw[c] for c in caps]), base_table.total_capacity + size)
    eps = rel_eps * baseline

    def excess(dl):
        return compute_lole(with_table, peaks + dl) - baseline

    if excess(0.0) > eps:
        raise ElccUndefined("search does not bracket: candidate increases LOLE at zero added load")
    if excess(size) <= eps:
        return 100.0
    lo, hi = 0.0, size
    while hi - lo > tol_mw:
        mid = 0.5 * (lo + hi)
        if excess(mid) <= eps:
            lo = mid
        else:
            hi = mid
    return lo / size * 100.0


# ---------------------------------------------------------------------------
# penetration sweep


def level_seed(seed: int, level: float) -> int:
    """Per-level seed derived from the master seed and the level value only."""
    key = int(round(level * 1_000_000))
    return int(np.random.SeedSequence(seed, spawn_key=(key,)).generate_state(1, dtype=np.uint64)[0] >> 1)


def penetration_sweep(
    case: GridCase,
    levels: Optional[Sequence[float]] = None,
    study: str = ANALYTIC,
    *,
    samples: int = 10_000,
    seed: Optional[int] = None,
    multi_state: bool = False,
    workers: int = 1,
) -> list[AdequacyResult]:
    """One independent adequacy result per renewable output level (default 0, 0.1, ..., 1)."""
    levels = list(DEFAULT_LEVELS if levels is None else levels)
    for lv in levels:
        if not 0.0 <= lv <= 1.0:
            raise ValueError(f"penetration level out of range: {lv!r}")
    if study not in (ANALYTIC, MONTE_CARLO):
        raise ValueError(f"unknown adequacy study {study!r}")
    if study == MONTE_CARLO and seed is None:
        raise ValueError("Monte Carlo sweep requires a seed")

    def one(level):
        c = set_penetration(case, level)
        if study == ANALYTIC:
            return analytic_adequacy(c, level, multi_state)
        return monte_carlo_lole(c, level, samples, level_seed(seed, level), multi_state)

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(one, levels))
    return [one(lv) for lv in levels]


def sweep_csv(results: Sequence[AdequacyResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["penetration", "lole", "lolp", "method", "std_err"])
    for r in results:
        w.writerow([repr(r.penetration), repr(r.lole), repr(r.lolp), r.method,
                    "" if r.mc_std_err is None else repr(r.mc_std_err)])
    return buf.getvalue()


def sweep_json(results: Sequence[AdequacyResult]) -> str:
    rows = [dataclasses.asdict(r) | {"meets_lole_criterion": r.meets_criterion} for r in results]
    return json.dumps({"lole_criterion_days_per_year": LOLE_CRITERION, "results": rows}, indent=1, sort_keys=True)
