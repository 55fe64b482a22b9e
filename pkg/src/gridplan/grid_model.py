"""
Network data model
==================

Buses, branches, conventional machines, converter-interfaced renewable plants
and load profiles, plus case-file ingestion and validation.

All types are frozen dataclasses; operations that "change" a case return a
copy. Validation reports problems as data (`Violation`) and the loader turns a
non-empty violation list into a `CaseValidationError` instead of repairing
anything.
"""

from __future__ import annotations

import dataclasses
import json
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

FORMAT_VERSION = 1
DEFAULT_V_MIN = 0.95
DEFAULT_V_MAX = 1.05
DEFAULT_FREQUENCY = 60.0
DAYS_PER_YEAR = 365
HOURS_PER_YEAR = 8760


class CaseError(ValueError):
    """Base class for case-file problems."""


class CaseParseError(CaseError):
    """The document is not a well-formed case."""


class CaseValidationError(CaseError):
    """The case parsed but breaks one or more invariants."""

    def __init__(self, violations: Sequence["Violation"]):
        self.violations = list(violations)
        lines = "; ".join(str(v) for v in self.violations)
        super().__init__(f"{len(self.violations)} violation(s): {lines}")


class BusKind(str, Enum):
    SLACK = "slack"
    PV = "pv"
    PQ = "pq"


class RenewableKind(str, Enum):
    WIND_TYPE3 = "wind_type3"
    WIND_TYPE4 = "wind_type4"
    SOLAR_PV = "solar_pv"


# converter-isolated technologies: no coupling to rotor inertia allowed
DECOUPLED_KINDS = (RenewableKind.WIND_TYPE4, RenewableKind.SOLAR_PV)


@dataclass(frozen=True)
class Violation:
    entity: str
    rule: str
    detail: str = ""

    def __str__(self) -> str:
        tail = f" ({self.detail})" if self.detail else ""
        return f"{self.entity}: {self.rule}{tail}"


@dataclass(frozen=True)
class Bus:
    id: str
    base_kv: float
    kind: BusKind = BusKind.PQ
    v_min: float = DEFAULT_V_MIN
    v_max: float = DEFAULT_V_MAX
    load_p: float = 0.0
    load_q: float = 0.0
    v_set: float = 1.0
    # True when v_min/v_max were not given in the case file
    bounds_defaulted: bool = field(default=False, compare=False)


@dataclass(frozen=True)
class Branch:
    id: str
    from_bus: str
    to_bus: str
    r: float
    x: float
    b_shunt: float
    thermal_rating: float


@dataclass(frozen=True)
class GovernorParams:
    droop_r: float
    time_const: float
    deadband: float = 0.0


@dataclass(frozen=True)
class ConventionalMachine:
    """Synchronous unit. `h` is on machine base (`s_rated`), as is `xd_t`."""

    id: str
    bus: str
    s_rated: float
    h: float
    p_set: float
    p_max: float
    xd_t: float
    q_set: float = 0.0
    p_min: float = 0.0
    damping: float = 0.0
    forced_outage_rate: float = 0.0
    governor: Optional[GovernorParams] = None
    agc_participation: float = 0.0


@dataclass(frozen=True)
class RenewablePlant:
    id: str
    bus: str
    nameplate: float
    kind: RenewableKind
    output_fraction: float = 1.0
    inertia_coupling: float = 0.0
    synthetic_inertia_gain: float = 0.0
    output_states: Optional[tuple[tuple[float, float], ...]] = None
    forced_outage_rate: float = 0.0

    @property
    def output_mw(self) -> float:
        return self.nameplate * self.output_fraction

    @property
    def headroom_mw(self) -> float:
        return self.nameplate - self.output_mw


@dataclass(frozen=True)
class LoadProfile:
    bus: str
    daily_peaks: tuple[float, ...]
    hourly: Optional[tuple[float, ...]] = None


@dataclass(frozen=True)
class GridCase:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    machines: tuple[ConventionalMachine, ...] = ()
    renewables: tuple[RenewablePlant, ...] = ()
    profiles: tuple[LoadProfile, ...] = ()
    system_frequency: float = DEFAULT_FREQUENCY
    base_mva: float = 100.0
    name: str = ""
    allow_zero_inertia: bool = False

    @property
    def omega_s(self) -> float:
        return 2.0 * math.pi * self.system_frequency

    def bus(self, bus_id: str) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise KeyError(bus_id)

    def branch(self, branch_id: str) -> Branch:
        for br in self.branches:
            if br.id == branch_id:
                return br
        raise KeyError(branch_id)

    def machine(self, machine_id: str) -> ConventionalMachine:
        for m in self.machines:
            if m.id == machine_id:
                return m
        raise KeyError(machine_id)

    def renewable(self, plant_id: str) -> RenewablePlant:
        for p in self.renewables:
            if p.id == plant_id:
                return p
        raise KeyError(plant_id)

    def bus_index(self) -> dict[str, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @property
    def slack_bus(self) -> Bus:
        return next(b for b in self.buses if b.kind is BusKind.SLACK)


def natural_key(text: str) -> tuple:
    """Sort key treating digit runs as integers, so "L2" < "L10"."""
    return tuple(int(tok) if tok.isdigit() else tok for tok in re.split(r"(\d+)", text))


def aggregate_inertia(case: GridCase) -> float:
    """Sum of H_i * S_n,i over conventional machines, in MVA*s."""
    return sum(m.h * m.s_rated for m in case.machines)


def system_daily_peaks(case: GridCase):
    """Daily system peak (MW) as the sum of all bus profiles."""
    import numpy as np

    if not case.profiles:
        raise CaseError("case has no load profiles")
    return np.sum([np.asarray(p.daily_peaks, dtype=float) for p in case.profiles], axis=0)


# ---------------------------------------------------------------------------
# validation


def _connected(bus_ids: Iterable[str], edges: Iterable[tuple[str, str]]) -> list[set[str]]:
    parent = {b: b for b in bus_ids}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in edges:
        if a in parent and b in parent:
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[ra] = rb
    groups: dict[str, set[str]] = {}
    for b in parent:
        groups.setdefault(find(b), set()).add(b)
    return list(groups.values())


def islands(case: GridCase) -> list[set[str]]:
    """Connected bus groups of the branch graph."""
    return _connected((b.id for b in case.buses), ((br.from_bus, br.to_bus) for br in case.branches))


def _duplicates(ids: Iterable[str]) -> list[str]:
    seen, dup = set(), []
    for i in ids:
        if i in seen and i not in dup:
            dup.append(i)
        seen.add(i)
    return dup


def validate(case: GridCase) -> list[Violation]:
    """Check every type invariant. Returns an empty list iff the case is valid."""
    out: list[Violation] = []
    add = lambda entity, rule, detail="": out.append(Violation(entity, rule, detail))  # noqa: E731

    for kind, items in (
        ("bus", case.buses),
        ("branch", case.branches),
        ("machine", case.machines),
        ("renewable", case.renewables),
    ):
        for d in _duplicates(x.id for x in items):
            add(f"{kind} {d}", "duplicate id")

    if not case.system_frequency > 0:
        add("case", "system_frequency > 0")
    if not case.base_mva > 0:
        add("case", "base_mva > 0")

    bus_ids = {b.id for b in case.buses}
    for b in case.buses:
        ent = f"bus {b.id}"
        if not b.base_kv > 0:
            add(ent, "base_kv > 0")
        if not b.v_min < b.v_max:
            add(ent, "v_min < v_max")
        if not b.v_set > 0:
            add(ent, "v_set > 0")

    for br in case.branches:
        ent = f"branch {br.id}"
        for end in (br.from_bus, br.to_bus):
            if end not in bus_ids:
                add(ent, "bus reference resolves", f"unknown bus {end}")
        if br.from_bus == br.to_bus:
            add(ent, "from_bus != to_bus")
        if br.x == 0:
            add(ent, "x != 0")
        if not br.thermal_rating > 0:
            add(ent, "thermal_rating > 0")

    for m in case.machines:
        ent = f"machine {m.id}"
        if m.bus not in bus_ids:
            add(ent, "bus reference resolves", f"unknown bus {m.bus}")
        if not m.h > 0:
            add(ent, "h > 0")
        if not m.s_rated > 0:
            add(ent, "s_rated > 0")
        if not 0.0 <= m.forced_outage_rate <= 1.0:
            add(ent, "0 <= forced_outage_rate <= 1")
        if not m.p_min <= m.p_set <= m.p_max:
            add(ent, "p_min <= p_set <= p_max")
        if not m.xd_t > 0:
            add(ent, "xd_t > 0")
        if not m.damping >= 0:
            add(ent, "damping >= 0")
        if not 0.0 <= m.agc_participation <= 1.0:
            add(ent, "0 <= agc_participation <= 1")
        g = m.governor
        if g is not None:
            if not g.droop_r > 0:
                add(ent, "governor droop_r > 0")
            if not g.time_const > 0:
                add(ent, "governor time_const > 0")
            if not g.deadband >= 0:
                add(ent, "governor deadband >= 0")

    for p in case.renewables:
        ent = f"renewable {p.id}"
        if p.bus not in bus_ids:
            add(ent, "bus reference resolves", f"unknown bus {p.bus}")
        if not p.nameplate >= 0:
            add(ent, "nameplate >= 0")
        if not 0.0 <= p.output_fraction <= 1.0:
            add(ent, "0 <= output_fraction <= 1")
        if not 0.0 <= p.inertia_coupling <= 1.0:
            add(ent, "0 <= inertia_coupling <= 1")
        elif p.kind in DECOUPLED_KINDS and p.inertia_coupling != 0.0:
            add(ent, "converter-decoupled plant requires inertia_coupling = 0", p.kind.value)
        if not p.synthetic_inertia_gain >= 0:
            add(ent, "synthetic_inertia_gain >= 0")
        if not 0.0 <= p.forced_outage_rate <= 1.0:
            add(ent, "0 <= forced_outage_rate <= 1")
        if p.output_states is not None:
            probs = [pr for _, pr in p.output_states]
            if any(not 0.0 <= f <= 1.0 for f, _ in p.output_states):
                add(ent, "output_states fractions in [0, 1]")
            if any(pr < 0 for pr in probs):
                add(ent, "output_states probabilities >= 0")
            if abs(math.fsum(probs) - 1.0) > 1e-9:
                add(ent, "output_states probabilities sum to 1", f"sum={math.fsum(probs)!r}")

    for prof in case.profiles:
        ent = f"profile {prof.bus}"
        if prof.bus not in bus_ids:
            add(ent, "bus reference resolves", f"unknown bus {prof.bus}")
        if len(prof.daily_peaks) != DAYS_PER_YEAR:
            add(ent, "daily_peaks has 365 values", f"got {len(prof.daily_peaks)}")
        if any(v < 0 for v in prof.daily_peaks):
            add(ent, "profile values >= 0")
        if prof.hourly is not None:
            if len(prof.hourly) != HOURS_PER_YEAR:
                add(ent, "hourly has 8760 values", f"got {len(prof.hourly)}")
            else:
                if any(v < 0 for v in prof.hourly):
                    add(ent, "profile values >= 0")
                if len(prof.daily_peaks) == DAYS_PER_YEAR:
                    for d in range(DAYS_PER_YEAR):
                        if prof.daily_peaks[d] != max(prof.hourly[24 * d: 24 * d + 24]):
                            add(ent, "daily_peaks[d] = max of hours of day d", f"day {d}")
                            break
    for d in _duplicates(p.bus for p in case.profiles):
        add(f"profile {d}", "one profile per bus")

    slacks = [b.id for b in case.buses if b.kind is BusKind.SLACK]
    if not case.buses:
        add("case", "at least one bus")
    elif not _dangling(case):
        groups = islands(case)
        if len(groups) > 1:
            names = sorted((sorted(g, key=natural_key)[0] for g in groups), key=natural_key)
            add("case", "network is connected", f"{len(groups)} islands starting at {', '.join(names)}")
    if len(slacks) != 1 and case.buses:
        add("case", "exactly one slack bus", f"found {len(slacks)}")

    if not case.machines and not case.allow_zero_inertia:
        add("case", "at least one conventional machine")
    return out


def _dangling(case: GridCase) -> bool:
    bus_ids = {b.id for b in case.buses}
    return any(br.from_bus not in bus_ids or br.to_bus not in bus_ids for br in case.branches)


def check(case: GridCase) -> GridCase:
    """Raise `CaseValidationError` unless the case is valid; returns it otherwise."""
    violations = validate(case)
    if violations:
        raise CaseValidationError(violations)
    return case


def set_penetration(case: GridCase, fraction: float) -> GridCase:
    """Copy of `case` with every renewable plant dispatched at `fraction` of nameplate."""
    if not 0.0 <= fraction <= 1.0 or math.isnan(fraction):
        raise ValueError(f"penetration fraction must lie in [0, 1], got {fraction!r}")
    plants = tuple(dataclasses.replace(p, output_fraction=float(fraction)) for p in case.renewables)
    return dataclasses.replace(case, renewables=plants)


def without_renewables(case: GridCase) -> GridCase:
    return dataclasses.replace(case, renewables=())


# ---------------------------------------------------------------------------
# case file (JSON tree)

_TOP_KEYS = {
    "format_version", "name", "system_frequency", "base_mva", "allow_zero_inertia",
    "buses", "branches", "machines", "renewables", "profiles",
}


def _fields(cls) -> dict[str, dataclasses.Field]:
    return {f.name: f for f in dataclasses.fields(cls) if f.compare or f.name == "id"}


def _build(cls, raw: Any, label: str, convert: dict | None = None):
    if not isinstance(raw, dict):
        raise CaseParseError(f"{label}: expected an object, got {type(raw).__name__}")
    known = _fields(cls)
    unknown = sorted(set(raw) - set(known))
    ident = raw.get("id", raw.get("bus", "?"))
    if unknown:
        raise CaseParseError(f"{label} {ident}: unknown field(s) {', '.join(unknown)}")
    missing = [
        name for name, f in known.items()
        if name not in raw and f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING
    ]
    if missing:
        raise CaseParseError(f"{label} {ident}: missing field(s) {', '.join(missing)}")
    kwargs = {}
    for key, value in raw.items():
        try:
            kwargs[key] = (convert or {}).get(key, _scalar)(value)
        except (TypeError, ValueError) as exc:
            raise CaseParseError(f"{label} {ident}: bad value for {key}: {exc}") from None
    return cls(**kwargs)


def _scalar(v):
    if isinstance(v, bool) or v is None or isinstance(v, str):
        return v
    if isinstance(v, (int, float)):
        return float(v)
    raise TypeError(f"unexpected {type(v).__name__}")


def _floats(v) -> tuple[float, ...]:
    if not isinstance(v, list):
        raise TypeError("expected a list of numbers")
    return tuple(float(x) for x in v)


def _states(v):
    if v is None:
        return None
    return tuple((float(f), float(p)) for f, p in v)


def _governor(v):
    if v is None:
        return None
    return _build(GovernorParams, v, "governor")


def case_from_dict(doc: dict) -> GridCase:
    """Parse a case document (already decoded JSON). Does not validate."""
    if not isinstance(doc, dict):
        raise CaseParseError("case document must be an object")
    unknown = sorted(set(doc) - _TOP_KEYS)
    if unknown:
        raise CaseParseError(f"unknown top-level field(s): {', '.join(unknown)}")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise CaseParseError(f"format_version must be {FORMAT_VERSION}, got {version!r}")
    for key in ("buses", "branches"):
        if key not in doc:
            raise CaseParseError(f"missing top-level field {key}")

    def many(key, cls, convert=None):
        items = doc.get(key, [])
        if not isinstance(items, list):
            raise CaseParseError(f"{key}: expected a list")
        return tuple(_build(cls, raw, key[:-1] if key != "buses" else "bus", convert) for raw in items)

    def bus(raw):
        if not isinstance(raw, dict):
            raise CaseParseError("bus: expected an object")
        defaulted = "v_min" not in raw and "v_max" not in raw
        b = _build(Bus, raw, "bus", {"kind": BusKind, "id": str})
        return dataclasses.replace(b, bounds_defaulted=defaulted)

    def enum_or_fail(enum):
        def conv(v):
            return enum(v)
        return conv

    raw_buses = doc["buses"]
    if not isinstance(raw_buses, list):
        raise CaseParseError("buses: expected a list")
    try:
        buses = tuple(bus(raw) for raw in raw_buses)
        branches = many("branches", Branch, {"id": str, "from_bus": str, "to_bus": str})
        machines = many("machines", ConventionalMachine, {"id": str, "bus": str, "governor": _governor})
        renewables = many(
            "renewables", RenewablePlant,
            {"id": str, "bus": str, "kind": enum_or_fail(RenewableKind), "output_states": _states},
        )
        profiles = many("profiles", LoadProfile, {"bus": str, "daily_peaks": _floats,
                                                   "hourly": lambda v: None if v is None else _floats(v)})
    except CaseParseError:
        raise
    except (TypeError, ValueError) as exc:
        raise CaseParseError(str(exc)) from None
    return GridCase(
        buses=buses,
        branches=branches,
        machines=machines,
        renewables=renewables,
        profiles=profiles,
        system_frequency=float(doc.get("system_frequency", DEFAULT_FREQUENCY)),
        base_mva=float(doc.get("base_mva", 100.0)),
        name=str(doc.get("name", "")),
        allow_zero_inertia=bool(doc.get("allow_zero_inertia", False)),
    )


def case_to_dict(case: GridCase) -> dict:
    """Inverse of `case_from_dict`; omits defaulted voltage bounds."""

    def plain(obj):
        out = {}
        for f in dataclasses.fields(obj):
            if not f.compare:
                continue
            v = getattr(obj, f.name)
            if isinstance(v, Enum):
                v = v.value
            elif isinstance(v, GovernorParams):
                v = plain(v)
            elif isinstance(v, tuple):
                v = [list(x) if isinstance(x, tuple) else x for x in v]
            out[f.name] = v
        return out

    buses = []
    for b in case.buses:
        d = plain(b)
        if b.bounds_defaulted:
            del d["v_min"], d["v_max"]
        buses.append(d)
    doc = {
        "format_version": FORMAT_VERSION,
        "name": case.name,
        "system_frequency": case.system_frequency,
        "base_mva": case.base_mva,
        "buses": buses,
        "branches": [plain(x) for x in case.branches],
        "machines": [plain(x) for x in case.machines],
        "renewables": [plain(x) for x in case.renewables],
        "profiles": [plain(x) for x in case.profiles],
    }
    if case.allow_zero_inertia:
        doc["allow_zero_inertia"] = True
    return doc


def dumps_case(case: GridCase) -> str:
    return json.dumps(case_to_dict(case), indent=1)


def save_case(case: GridCase, path) -> None:
    Path(path).write_text(dumps_case(case) + "\n", encoding="utf-8")


def loads_case(text: str) -> GridCase:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseParseError(f"malformed case document: {exc}") from None
    return check(case_from_dict(doc))


def load_case(path) -> GridCase:
    """Read, parse and validate a case file. Never repairs; raises `CaseError`."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise CaseParseError(f"case file not found: {p}") from None
    return loads_case(text)


def fixture_path(name: str) -> Path:
    """Path of a case shipped with the package (e.g. "ninebus")."""
    return Path(__file__).parent / "data" / f"{name}.json"


def load_fixture(name: str) -> GridCase:
    return load_case(fixture_path(name))
