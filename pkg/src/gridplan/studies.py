"""
Study configuration and batch execution.

A study config is a JSON document:

    {
      "format_version": 1,
      "case": "cases/ninebus.json",      # or "fixture:ninebus"
      "study": "full_sweep",
      "params": {...},                    # kind-specific block
      "output_dir": "out",
      "workers": 1
    }

Relative paths resolve against the config file's directory. `run_study`
writes every report atomically, adds a manifest with sha256 digests, and
returns the exit status: 0 when all checks pass, 2 when the study flagged
findings, 1 on an execution error (partial outputs are removed).
"""

from __future__ import annotations

import dataclasses
import datetime as _dt
import hashlib
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

from . import __version__
from . import adequacy, dynamics, security, small_signal, steady_state
from .grid_model import CaseError, GridCase, aggregate_inertia, check, load_case, load_fixture, set_penetration

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FLAGGED = 2

CONFIG_VERSION = 1
KINDS = ("powerflow", "adequacy", "security", "dynamics", "smallsignal", "full_sweep")
WORKERS_ENV = "GRIDPLAN_WORKERS"
MANIFEST = "manifest.json"

_PARAMS = {
    "powerflow": {"method", "penetration", "loadability", "margin_cap"},
    "adequacy": {"seed", "levels", "method", "samples", "multi_state", "elcc_plants"},
    "security": {"levels", "weights", "top_k", "contingencies"},
    "dynamics": {"penetration", "events", "horizon", "step", "controls", "ufls_threshold",
                 "ufls_dwell", "envelope", "ride_through"},
    "smallsignal": {"penetration", "damping_floor", "intermittency"},
    "full_sweep": {"levels", "seed", "adequacy", "security", "dynamics", "smallsignal"},
}
_TOP = {"format_version", "case", "study", "params", "output_dir", "workers"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class StudyConfig:
    case: str
    study: str
    params: dict
    output_dir: str
    workers: int = 1
    base_dir: Path = field(default=Path("."), compare=False)

    def resolve(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else self.base_dir / q

    def echo(self) -> dict:
        return {"format_version": CONFIG_VERSION, "case": self.case, "study": self.study,
                "params": self.params, "output_dir": self.output_dir, "workers": self.workers}


def _default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be >= 1")
    return n


def config_from_dict(doc: Any, base_dir: Path = Path("."), overrides: Optional[dict] = None) -> StudyConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    doc = {**doc, **{k: v for k, v in (overrides or {}).items() if v is not None}}
    unknown = set(doc) - _TOP
    if unknown:
        raise ConfigError(f"config: unknown field(s) {sorted(unknown)}")
    if doc.get("format_version") != CONFIG_VERSION:
        raise ConfigError(f"config: format_version must be {CONFIG_VERSION}")
    for key in ("case", "study", "output_dir"):
        if not isinstance(doc.get(key), str) or not doc[key]:
            raise ConfigError(f"config: '{key}' is required and must be a string")
    kind = doc["study"]
    if kind not in KINDS:
        raise ConfigError(f"config: study must be one of {', '.join(KINDS)}, got {kind!r}")
    params = doc.get("params", {}) or {}
    if not isinstance(params, dict):
        raise ConfigError("config: params must be an object")
    bad = set(params) - _PARAMS[kind]
    if bad:
        raise ConfigError(f"config: params for {kind} do not accept {sorted(bad)}")
    if kind in ("adequacy", "full_sweep") and not isinstance(params.get("seed"), int):
        raise ConfigError(f"config: {kind} study needs an integer 'seed' in params")
    workers = doc.get("workers")
    workers = _default_workers() if workers is None else workers
    if not isinstance(workers, int) or workers < 1:
        raise ConfigError("config: workers must be a positive integer")
    return StudyConfig(doc["case"], kind, params, doc["output_dir"], workers, base_dir)


def load_config(path, overrides: Optional[dict] = None) -> StudyConfig:
    p = Path(path)
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {p}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return config_from_dict(doc, p.parent, overrides)


def open_case(ref: str, base_dir: Path = Path(".")) -> GridCase:
    if ref.startswith("fixture:"):
        return check(load_fixture(ref.split(":", 1)[1]))
    p = Path(ref)
    return check(load_case(p if p.is_absolute() else base_dir / p))


def describe(case: GridCase) -> str:
    conv = sum(m.p_max for m in case.machines)
    ren = sum(p.nameplate for p in case.renewables)
    lines = [
        f"{case.name or 'case'}: {len(case.buses)} buses, {len(case.branches)} branches, "
        f"{len(case.machines)} machines, {len(case.renewables)} renewables",
        f"conventional capacity: {conv:g} MW",
        f"renewable nameplate: {ren:g} MW",
        f"aggregate inertia: {aggregate_inertia(case):g} MVA*s",
        f"system frequency: {case.system_frequency:g} Hz, base {case.base_mva:g} MVA",
    ]
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# output handling


class _Outputs:
    """Collects report files; writes each one via temp file + rename."""

    def __init__(self, root: Path):
        self.root = root
        self.written: list[str] = []

    def write(self, name: str, text: str) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=f".{name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            os.replace(tmp, self.root / name)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise
        if name not in self.written:
            self.written.append(name)

    def remove_all(self) -> None:
        for name in self.written + [MANIFEST]:
            (self.root / name).unlink(missing_ok=True)
        self.written.clear()


def _dump(doc) -> str:
    return json.dumps(_clean(doc), indent=1, sort_keys=True) + "\n"


def _clean(x):
    if isinstance(x, float) and (math.isnan(x) or math.isinf(x)):
        return None
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if hasattr(x, "item") and not isinstance(x, (str, bytes)):
        return _clean(x.item())
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


# ---------------------------------------------------------------------------
# study kinds; each returns a list of finding strings


def _levels(params) -> list[float]:
    levels = params.get("levels")
    levels = list(adequacy.DEFAULT_LEVELS) if levels is None else [float(v) for v in levels]
    for v in levels:
        if not 0.0 <= v <= 1.0:
            raise ConfigError(f"config: penetration level {v!r} outside [0, 1]")
    return levels


def _at(case: GridCase, params) -> GridCase:
    pen = params.get("penetration")
    return case if pen is None else set_penetration(case, float(pen))


def study_powerflow(case, params, out: _Outputs, prefix="powerflow") -> list[str]:
    c = _at(case, params)
    sol = steady_state.solve_power_flow(c, params.get("method", steady_state.AC_NEWTON), raise_on_failure=False)
    if not sol.converged:
        out.write(f"{prefix}_solution.json", _dump(steady_state.solution_to_dict(sol)))
        return [f"power flow did not converge: {sol.message}"]
    lim = steady_state.check_limits(c, sol)
    doc = steady_state.limits_to_dict(lim)
    findings = [f"thermal {b} loading {ld:.3f}" for b, ld in lim.thermal_violations]
    findings += [f"voltage {b} {vm:.4f} beyond {side}" for b, vm, side in lim.voltage_violations]
    if params.get("loadability", sol.method == steady_state.AC_NEWTON):
        m = steady_state.loadability_margin(c, margin_cap=float(params.get("margin_cap", 10.0)))
        doc["loadability_margin"] = {"margin": m.margin, "lambda_star": m.lambda_star, "capped": m.capped}
    out.write(f"{prefix}_buses.csv", steady_state.solution_bus_csv(sol))
    out.write(f"{prefix}_branches.csv", steady_state.solution_branch_csv(sol))
    out.write(f"{prefix}_limits.json", _dump(doc))
    return findings


def study_adequacy(case, params, out: _Outputs, workers=1, prefix="adequacy") -> list[str]:
    method = params.get("method", adequacy.ANALYTIC)
    results = adequacy.penetration_sweep(
        case, _levels(params), method, samples=int(params.get("samples", 10_000)),
        seed=params["seed"], multi_state=bool(params.get("multi_state", False)), workers=workers,
    )
    out.write(f"{prefix}_sweep.csv", adequacy.sweep_csv(results))
    doc = json.loads(adequacy.sweep_json(results))
    doc["seed"] = params["seed"]
    elcc = {}
    for pid in params.get("elcc_plants", []):
        try:
            elcc[pid] = adequacy.compute_elcc(case, case.renewable(pid))
        except adequacy.ElccUndefined as exc:
            elcc[pid] = str(exc)
    if elcc:
        doc["elcc_percent"] = elcc
    out.write(f"{prefix}.json", _dump(doc))
    return [f"LOLE {r.lole:.4g} d/yr above {adequacy.LOLE_CRITERION} at level {r.penetration:g}"
            for r in results if not r.meets_criterion]


def _weights(raw) -> security.SeverityWeights:
    raw = dict(raw or {})
    names = {"w_v": "voltage", "w_t": "thermal", "w_m": "margin", "margin_ref": "margin_ref",
             "divergence_penalty": "divergence_penalty"}
    bad = set(raw) - set(names)
    if bad:
        raise ConfigError(f"config: unknown weight(s) {sorted(bad)}")
    return security.SeverityWeights(**{names[k]: float(v) for k, v in raw.items()})


def _contingencies(case, ids):
    if ids is None:
        return None
    out = []
    for cid in ids:
        kind, _, elem = str(cid).partition(":")
        if kind == "branch":
            case.branch(elem)
            out.append(security.Contingency.branch(elem))
        elif kind == "machine":
            case.machine(elem)
            out.append(security.Contingency.machine(elem))
        else:
            raise ConfigError(f"config: contingency id {cid!r} must look like branch:<id> or machine:<id>")
    return out


def study_security(case, params, out: _Outputs, workers=1, prefix="security") -> list[str]:
    rep = security.rank_contingencies(
        case, _contingencies(case, params.get("contingencies")), _levels(params),
        _weights(params.get("weights")), int(params.get("top_k", 20)), workers,
    )
    out.write(f"{prefix}_ranked.csv", security.ranked_csv(rep))
    out.write(f"{prefix}.json", security.report_json(rep) + "\n")
    return [f"level {lv.penetration:g}: worst {lv.worst.contingency.id} severity {lv.worst.score.total:g}"
            for lv in rep.levels if not lv.secure]


def _envelope(raw, f_s) -> dynamics.RideThroughEnvelope:
    if raw is None:
        return dynamics.default_envelope(f_s)
    return dynamics.RideThroughEnvelope(
        voltage=tuple(tuple(float(x) for x in p) for p in raw["voltage"]),
        frequency=tuple(tuple(float(x) for x in p) for p in raw["frequency"]),
    )


def _controls(raw) -> dynamics.ControlOptions:
    raw = dict(raw or {})
    names = {f.name for f in dataclasses.fields(dynamics.ControlOptions)}
    bad = set(raw) - names
    if bad:
        raise ConfigError(f"config: unknown control option(s) {sorted(bad)}")
    return dynamics.ControlOptions(**raw)


def study_dynamics(case, params, out: _Outputs, prefix="dynamics") -> list[str]:
    c = _at(case, params)
    events = [dynamics.DisturbanceEvent.from_dict(e) for e in params.get("events", [])]
    trace = dynamics.simulate(c, None, events, float(params.get("horizon", 20.0)),
                              float(params.get("step", 0.005)), _controls(params.get("controls")))
    metrics = dynamics.frequency_metrics(trace, params.get("ufls_threshold"),
                                         float(params.get("ufls_dwell", dynamics.UFLS_DWELL)))
    findings = ["UFLS threshold crossed"] if metrics.ufls_tripped else []
    rt = None
    if params.get("ride_through", True) and c.renewables:
        rt = dynamics.check_ride_through(trace, _envelope(params.get("envelope"), c.system_frequency),
                                         dynamics.monitored_plants(c))
        findings += [f"ride-through violation at {p}: {r.first_violation}" for p, r in sorted(rt.items())
                     if not r.passed]
    out.write(f"{prefix}_trace.csv", dynamics.trace_csv(trace))
    out.write(f"{prefix}_summary.json", dynamics.summary_json(trace, metrics, rt) + "\n")
    return findings


def study_smallsignal(case, params, out: _Outputs, workers=1, prefix="smallsignal") -> list[str]:
    c = _at(case, params)
    floor = float(params.get("damping_floor", small_signal.DAMPING_FLOOR))
    ms = small_signal.modes(small_signal.linearize(c))
    out.write(f"{prefix}_modes.csv", small_signal.mode_table_csv(ms))
    findings = []
    md = ms.min_damping
    if md is not None and md < floor:
        findings.append(f"least-damped mode {ms.least_damped().frequency:.3f} Hz, damping ratio {md:.4f}")
    inter = params.get("intermittency")
    if inter:
        inter = dict(inter)
        known = {"plant", "sizes", "directions", "levels", "horizon", "step", "ramp_duration", "controls"}
        if set(inter) - known:
            raise ConfigError(f"config: intermittency does not accept {sorted(set(inter) - known)}")
        if "sizes" not in inter:
            raise ConfigError("config: intermittency needs explicit event 'sizes' (MW)")
        rep = small_signal.intermittency_study(
            case, inter["plant"], [float(s) for s in inter["sizes"]],
            tuple(inter.get("directions", ("drop", "rise"))), _levels(inter),
            float(inter.get("horizon", small_signal.MIN_HORIZON)), float(inter.get("step", 0.005)),
            ramp_duration=float(inter.get("ramp_duration", 0.0)), damping_floor=floor,
            controls=_controls(inter.get("controls", {"governors": True})), workers=workers,
        )
        out.write(f"{prefix}_intermittency.json", small_signal.study_report_json(rep) + "\n")
        findings += [f"intermittency {r.direction} {r.size:g} MW at {r.penetration:g}: damping {r.min_damping:.4f}"
                     for r in rep.flagged]
    return findings


def study_full_sweep(case, params, out: _Outputs, workers=1) -> list[str]:
    """Power flow, modes (and optional dynamics) per level, plus adequacy and security sweeps."""
    levels = _levels(params)
    findings = []
    for lv in levels:
        tag = f"{lv:.2f}".replace(".", "p")
        findings += [f"[{lv:g}] {f}" for f in study_powerflow(case, {"penetration": lv}, out, f"powerflow_{tag}")]
        ss = dict(params.get("smallsignal", {}), penetration=lv)
        ss.pop("intermittency", None)
        findings += [f"[{lv:g}] {f}" for f in study_smallsignal(case, ss, out, workers, f"smallsignal_{tag}")]
        if params.get("dynamics"):
            dyn = dict(params["dynamics"], penetration=lv)
            findings += [f"[{lv:g}] {f}" for f in study_dynamics(case, dyn, out, f"dynamics_{tag}")]
    ad = dict(params.get("adequacy", {}), seed=params["seed"], levels=levels)
    if case.profiles:
        findings += study_adequacy(case, ad, out, workers)
    sec = dict(params.get("security", {}), levels=levels)
    findings += study_security(case, sec, out, workers)
    inter = params.get("smallsignal", {}).get("intermittency")
    if inter:
        findings += study_smallsignal(case, {"intermittency": dict({"levels": levels}, **inter)}, out, workers,
                                      "smallsignal")
    return findings


_RUNNERS: dict[str, Callable] = {
    "powerflow": lambda c, p, o, w: study_powerflow(c, p, o),
    "adequacy": study_adequacy,
    "security": study_security,
    "dynamics": lambda c, p, o, w: study_dynamics(c, p, o),
    "smallsignal": study_smallsignal,
    "full_sweep": study_full_sweep,
}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass
class RunResult:
    status: int
    output_dir: Path
    artifacts: list[str]
    findings: list[str]
    error: str = ""


def run_study(cfg: StudyConfig, now: Optional[_dt.datetime] = None) -> RunResult:
    """Execute a validated config. Never raises; the status code carries the outcome."""
    root = cfg.resolve(cfg.output_dir)
    out = _Outputs(root)
    try:
        case = open_case(cfg.case, cfg.base_dir)
        findings = _RUNNERS[cfg.study](case, cfg.params, out, cfg.workers)
        status = EXIT_FLAGGED if findings else EXIT_OK
        artifacts = [{"file": name, "sha256": _sha256(root / name)} for name in sorted(out.written)]
        stamp = (now or _dt.datetime.now(_dt.timezone.utc)).isoformat(timespec="seconds")
        manifest = {
            "toolkit": "gridplan", "version": __version__, "created": stamp, "config": cfg.echo(),
            "case_name": case.name, "status": status, "findings": findings, "artifacts": artifacts,
        }
        out.write(MANIFEST, _dump(manifest))
        return RunResult(status, root, sorted(out.written), findings)
    except (CaseError, ConfigError, KeyError, ValueError, RuntimeError, OSError, ArithmeticError) as exc:
        out.remove_all()
        msg = f"{type(exc).__name__}: {exc}"
        return RunResult(EXIT_ERROR, root, [], [], msg)


def print_error(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)
