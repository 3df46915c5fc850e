"""Scenario configuration documents, bundled presets and scenario runners.

A scenario is one YAML (or JSON) document.  Parsing is strict: unknown keys
are rejected, and errors name the offending field and its source line.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import yaml

from . import __version__
from . import algebra as alg
from .events import (EventSpec, closed_form_history, evolve_with_event, event_time_distribution,
                     predicted_event_times)
from .model import ModelParams, Regime, build_constraints, regime_diagnostics
from .numerics import (POSITION, Axis, ConfigurationError, Grid1D, ResourceError, WaveFunction,
                       expectation, gaussian_packet, gaussian_wavefunction, pointer_axis, to_basis)
from .qrf import (HistoryState, build_hamiltonian, evolve_history, qrf_swap_check,
                  schrodinger_limit_check)

SCHEMA_VERSION = 1
KINDS = ("history", "schrodinger_limit", "qrf_swap")
HISTORY_CHECKS = ("norm", "energy", "closed_form", "regime_diagnostics", "random_norm")
REQUIRED_UNITS = ("length", "time", "mass")


class ConfigError(ConfigurationError):
    """Config parse or validation error carrying a field path and, when known, a line."""

    def __init__(self, message: str, path: str = "", line: Optional[int] = None):
        self.path = path
        self.line = line
        where = path or "<document>"
        if line is not None:
            where += f" (line {line})"
        super().__init__(f"{where}: {message}")


# ---------------------------------------------------------------- parsing

def _line_map(text: str) -> Dict[str, int]:
    """Field path -> 1-based source line, from the YAML node tree."""
    out: Dict[str, int] = {}

    def walk(node, path):
        out[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = str(k.value)
                sub = f"{path}.{key}" if path else key
                out[sub] = k.start_mark.line + 1
                walk(v, sub)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, f"{path}[{i}]")

    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return out
    if root is not None:
        walk(root, "")
    return out


class _Reader:
    def __init__(self, lines: Dict[str, int]):
        self.lines = lines

    def error(self, msg: str, path: str) -> ConfigError:
        line = self.lines.get(path)
        probe = path
        while line is None and probe:
            probe = probe.rsplit(".", 1)[0] if "." in probe else ""
            line = self.lines.get(probe)
        return ConfigError(msg, path, line)

    def mapping(self, d: Any, path: str, required: Tuple[str, ...] = (), optional: Tuple[str, ...] = ()) -> dict:
        if not isinstance(d, dict):
            raise self.error("expected a mapping", path)
        allowed = set(required) | set(optional)
        for k in d:
            if str(k) not in allowed:
                raise self.error(f"unknown key {k!r}; allowed: {sorted(allowed)}", f"{path}.{k}" if path else str(k))
        for k in required:
            if k not in d:
                raise self.error(f"missing required key {k!r}", path)
        return d

    def number(self, d: dict, key: str, path: str, default=None, positive=False, integer=False):
        sub = f"{path}.{key}" if path else key
        if key not in d:
            if default is None:
                raise self.error(f"missing required key {key!r}", path)
            return default
        v = d[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise self.error(f"expected a number, got {v!r}", sub)
        if integer and int(v) != v:
            raise self.error(f"expected an integer, got {v!r}", sub)
        if not math.isfinite(v):
            raise self.error("must be finite", sub)
        if positive and not v > 0:
            raise self.error("must be positive", sub)
        return int(v) if integer else float(v)


def _complex(v, reader: _Reader, path: str) -> complex:
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return complex(v)
    if isinstance(v, list) and len(v) == 2 and all(isinstance(x, (int, float)) for x in v):
        return complex(v[0], v[1])
    raise reader.error("amplitude must be a number or [re, im]", path)


@dataclass
class ScenarioConfig:
    """Parsed scenario document; ``raw`` is the normalized document for hashing and round trips."""

    name: str
    kind: str
    regime: Regime
    params: ModelParams
    raw: Dict[str, Any]
    axes: Tuple[Axis, ...] = ()
    initial: Dict[str, Any] = field(default_factory=dict)
    event: Optional[EventSpec] = None
    tau: Optional[Grid1D] = None
    dtau: float = 1e-3
    checks: Tuple[str, ...] = ()
    seed: int = 0
    settings: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return copy.deepcopy(self.raw)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def config_hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def with_sigma_t(self, sigma_t: float) -> "ScenarioConfig":
        if self.event is None:
            raise ConfigError("--sigma-t given but the scenario has no event", "event")
        raw = self.to_dict()
        raw["event"]["sigma_t"] = float(sigma_t)
        return parse_config(raw)

    def with_seed(self, seed: int) -> "ScenarioConfig":
        raw = self.to_dict()
        raw["seed"] = int(seed)
        return parse_config(raw)


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", str(path)) from None
    return parse_config_text(text)


def parse_config_text(text: str) -> ScenarioConfig:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed document: {getattr(exc, 'problem', exc)}", "",
                          mark.line + 1 if mark is not None else None) from None
    return parse_config(doc, _line_map(text))


def parse_config(doc: Any, lines: Optional[Dict[str, int]] = None) -> ScenarioConfig:
    r = _Reader(lines or {})
    doc = r.mapping(doc, "", required=("schema_version", "name", "units"),
                    optional=("kind", "regime", "params", "axes", "initial", "event", "tau", "checks", "seed",
                              "schrodinger", "algebra", "description"))
    version = r.number(doc, "schema_version", "", integer=True)
    if version != SCHEMA_VERSION:
        raise r.error(f"unsupported schema_version {version}; expected {SCHEMA_VERSION}", "schema_version")
    name = doc["name"]
    if not isinstance(name, str) or not name or any(ch in name for ch in "/\\ "):
        raise r.error("name must be a non-empty string without spaces or slashes", "name")
    units = r.mapping(doc["units"], "units", required=REQUIRED_UNITS, optional=("energy", "momentum", "hbar"))
    if units.get("hbar", 1) != 1:
        raise r.error("only hbar = 1 units are supported", "units.hbar")
    kind = doc.get("kind", "history")
    if kind not in KINDS:
        raise r.error(f"unknown kind {kind!r}; expected one of {list(KINDS)}", "kind")
    try:
        regime = Regime.parse(doc.get("regime", "galilean"))
    except ConfigurationError as exc:
        raise r.error(str(exc), "regime") from None
    params = _parse_params(doc.get("params", {}), r)
    seed = r.number(doc, "seed", "", default=0, integer=True)

    raw = copy.deepcopy(doc)
    raw["regime"] = regime.value
    raw["kind"] = kind
    raw["seed"] = seed
    raw["params"] = params.to_dict()
    cfg = ScenarioConfig(name=name, kind=kind, regime=regime, params=params, raw=raw, seed=seed)

    if "algebra" in doc:
        cfg.settings["algebra"] = _parse_algebra(doc["algebra"], r)
    if kind == "schrodinger_limit":
        cfg.settings["schrodinger"] = _parse_schrodinger(doc.get("schrodinger"), r)
        return cfg
    if "schrodinger" in doc:
        raise r.error("only valid for kind schrodinger_limit", "schrodinger")
    if "algebra" in doc and "axes" not in doc:
        return cfg
    for key in ("axes", "initial", "tau"):
        if key not in doc:
            raise r.error(f"missing required key {key!r} for kind {kind}", "")
    cfg.axes = _parse_axes(doc["axes"], r)
    cfg.initial = _parse_initial(doc["initial"], cfg.axes, r)
    cfg.tau, cfg.dtau = _parse_tau(doc["tau"], r)
    if "event" in doc:
        if kind != "history":
            raise r.error("events are only supported for kind history", "event")
        cfg.event = _parse_event(doc["event"], r)
    checks = doc.get("checks", [])
    if not isinstance(checks, list) or any(c not in HISTORY_CHECKS for c in checks):
        raise r.error(f"checks must be a list drawn from {list(HISTORY_CHECKS)}", "checks")
    cfg.checks = tuple(checks)
    return cfg


def _parse_params(d, r: _Reader) -> ModelParams:
    d = r.mapping(d, "params", optional=("c", "G", "M", "r_min", "masses", "q_M"))
    masses = d.get("masses", {"1": 1.0, "2": 1.0})
    if not isinstance(masses, dict) or not masses:
        raise r.error("masses must be a mapping particle -> mass", "params.masses")
    m = {str(k): r.number(masses, k, "params.masses", positive=True) for k in masses}
    try:
        return ModelParams(c=r.number(d, "c", "params", 1.0, positive=True), G=r.number(d, "G", "params", 1.0),
                           M=r.number(d, "M", "params", 0.0), r_min=r.number(d, "r_min", "params", 1.0),
                           masses=m, q_M=r.number(d, "q_M", "params", -50.0))
    except ConfigError:
        raise
    except ConfigurationError as exc:
        raise r.error(str(exc), "params") from None


def _parse_axes(items, r: _Reader) -> Tuple[Axis, ...]:
    if not isinstance(items, list) or not items:
        raise r.error("axes must be a non-empty list", "axes")
    axes = []
    seen = set()
    for i, a in enumerate(items):
        path = f"axes[{i}]"
        a = r.mapping(a, path, required=("label",), optional=("n", "span", "offset"))
        label = str(a["label"])
        if label in seen:
            raise r.error(f"duplicate axis {label!r}", f"{path}.label")
        seen.add(label)
        if label == "pointer":
            if set(a) != {"label"}:
                raise r.error("the pointer axis takes no grid keys", path)
            axes.append(pointer_axis())
            continue
        if not (label[:1] in ("q", "t") and len(label) > 1):
            raise r.error("axis labels are q<particle>, t<particle> or pointer", f"{path}.label")
        n = r.number(a, "n", path, integer=True, positive=True)
        span = r.number(a, "span", path, positive=True)
        offset = r.number(a, "offset", path, default=-span / 2)
        try:
            axes.append(Axis(Grid1D(n, span / n, offset), label))
        except ConfigurationError as exc:
            raise r.error(str(exc), path) from None
    return tuple(axes)


def _parse_initial(d, axes: Tuple[Axis, ...], r: _Reader) -> Dict[str, Any]:
    labels = [a.label for a in axes]
    d = r.mapping(d, "initial", required=tuple(labels))
    out: Dict[str, Any] = {}
    for label in labels:
        path = f"initial.{label}"
        spec = d[label]
        if label == "pointer":
            spec = r.mapping(spec, path, required=("state",))
            st = spec["state"]
            if not isinstance(st, list) or len(st) != 2:
                raise r.error("pointer state must be two amplitudes", f"{path}.state")
            out[label] = np.array([_complex(v, r, f"{path}.state[{j}]") for j, v in enumerate(st)])
            if not np.any(out[label]):
                raise r.error("pointer state must be nonzero", f"{path}.state")
            continue
        spec = r.mapping(spec, path, optional=("center", "width", "momentum", "branches"))
        if "branches" in spec:
            if set(spec) != {"branches"}:
                raise r.error("give either branches or a single packet", path)
            items = spec["branches"]
            if not isinstance(items, list) or not items:
                raise r.error("branches must be a non-empty list", f"{path}.branches")
        else:
            items = [dict(spec, amplitude=1.0)]
        branches = []
        for j, b in enumerate(items):
            bp = f"{path}.branches[{j}]" if "branches" in spec else path
            b = r.mapping(b, bp, required=("width",), optional=("center", "momentum", "amplitude"))
            branches.append({"center": r.number(b, "center", bp, 0.0), "width": r.number(b, "width", bp, positive=True),
                             "momentum": r.number(b, "momentum", bp, 0.0),
                             "amplitude": _complex(b.get("amplitude", 1.0), r, f"{bp}.amplitude")})
        out[label] = branches
    return out


def _parse_tau(d, r: _Reader) -> Tuple[Grid1D, float]:
    d = r.mapping(d, "tau", required=("n", "spacing"), optional=("offset", "dtau"))
    n = r.number(d, "n", "tau", integer=True, positive=True)
    spacing = r.number(d, "spacing", "tau", positive=True)
    offset = r.number(d, "offset", "tau", default=spacing)
    if offset < 0:
        raise r.error("tau grid must start at a non-negative time", "tau.offset")
    dtau = r.number(d, "dtau", "tau", default=min(1e-3, spacing), positive=True)
    try:
        return Grid1D(n, spacing, offset), dtau
    except ConfigurationError as exc:
        raise r.error(str(exc), "tau") from None


def _parse_event(d, r: _Reader) -> EventSpec:
    d = r.mapping(d, "event", required=("tau_star", "sigma_t"), optional=("kick_phase", "measured", "mode"))
    try:
        return EventSpec(tau_star=r.number(d, "tau_star", "event"), sigma_t=r.number(d, "sigma_t", "event"),
                         kick_phase=r.number(d, "kick_phase", "event", default=math.pi / 2),
                         measured=str(d.get("measured", "2")), mode=str(d.get("mode", "pointer")))
    except ConfigError:
        raise
    except ConfigurationError as exc:
        raise r.error(str(exc), "event") from None


def _parse_schrodinger(d, r: _Reader) -> dict:
    d = r.mapping(d if d is not None else {}, "schrodinger", required=("n", "span"),
                  optional=("offset", "label", "center", "width", "momentum", "traversal", "n_steps"))
    out = {"n": r.number(d, "n", "schrodinger", integer=True, positive=True),
           "span": r.number(d, "span", "schrodinger", positive=True),
           "label": str(d.get("label", "1")),
           "traversal": r.number(d, "traversal", "schrodinger", 10.5, positive=True),
           "n_steps": r.number(d, "n_steps", "schrodinger", 8192, positive=True, integer=True)}
    out["offset"] = r.number(d, "offset", "schrodinger", -out["span"] / 2)
    for k in ("center", "width", "momentum"):
        if k in d:
            out[k] = r.number(d, k, "schrodinger")
    return out


def _parse_algebra(d, r: _Reader) -> dict:
    d = r.mapping(d, "algebra", optional=("regimes", "tables", "grading", "labels"))
    regimes = d.get("regimes", ["full"])
    tables = d.get("tables", ["T1", "T2", "T12"])
    if not isinstance(regimes, list) or not isinstance(tables, list):
        raise r.error("regimes and tables must be lists", "algebra")
    try:
        regimes = [Regime.parse(x).value for x in regimes]
    except ConfigurationError as exc:
        raise r.error(str(exc), "algebra.regimes") from None
    for t in tables:
        if t not in ("T1", "T2", "T12", "T21"):
            raise r.error(f"unknown table {t!r}", "algebra.tables")
    grading = None
    if "grading" in d:
        g = r.mapping(d["grading"], "algebra.grading",
                      optional=("max_g", "max_p", "mixed_p_cutoff", "max_p_internal", "freeze_dressing"))
        grading = dict(g)
    labels = d.get("labels", ["1", "2"])
    return {"regimes": regimes, "tables": tables, "grading": grading, "labels": [str(x) for x in labels]}


# ---------------------------------------------------------------- presets

def _units(length="length unit", time="time unit", mass="mass unit"):
    return {"length": length, "time": time, "mass": mass, "hbar": 1}


PRESETS: Dict[str, Tuple[str, Dict[str, Any]]] = {
    "galilean-event": (
        "galilean ideal clocks: the measurement occurs as a sharp step at tau1 = tau2*",
        {"schema_version": 1, "name": "galilean-event", "units": _units(), "kind": "history", "regime": "galilean",
         "params": {"c": 1.0, "masses": {"1": 1.0, "2": 1.0}},
         "axes": [{"label": "q2", "n": 64, "span": 32.0, "offset": -16.0},
                  {"label": "t2", "n": 256, "span": 0.64, "offset": -0.32},
                  {"label": "pointer"}],
         "initial": {"q2": {"center": 0.0, "width": 1.5, "momentum": 0.3},
                     "t2": {"center": 0.0, "width": 0.005},
                     "pointer": {"state": [1.0, 0.0]}},
         "event": {"tau_star": 1.0, "sigma_t": 0.02},
         "tau": {"n": 64, "spacing": 0.005, "offset": 0.85, "dtau": 0.005},
         "checks": ["norm", "closed_form", "regime_diagnostics"]}),
    "sr-two-momenta": (
        "special-relativistic momentum superposition: bimodal event time from two dilation factors",
        {"schema_version": 1, "name": "sr-two-momenta", "units": _units(), "kind": "history", "regime": "sr",
         "params": {"c": 1.0, "masses": {"1": 1.0, "2": 2.0}},
         "axes": [{"label": "q2", "n": 512, "span": 1024.0, "offset": -512.0},
                  {"label": "t2", "n": 128, "span": 3.2, "offset": -1.6},
                  {"label": "pointer"}],
         "initial": {"q2": {"branches": [
                         {"center": 0.0, "width": 25.0, "momentum": 0.4, "amplitude": math.sqrt(0.3)},
                         {"center": 0.0, "width": 25.0, "momentum": 0.8, "amplitude": math.sqrt(0.7)}]},
                     "t2": {"center": 0.0, "width": 0.025},
                     "pointer": {"state": [1.0, 0.0]}},
         "event": {"tau_star": 10.0, "sigma_t": 0.05},
         "tau": {"n": 64, "spacing": 0.025, "offset": 8.2, "dtau": 0.0125},
         "checks": ["norm", "closed_form"]}),
    "newtonian-two-positions": (
        "newtonian position superposition near a static mass: bimodal event time from two redshifts",
        {"schema_version": 1, "name": "newtonian-two-positions", "units": _units(), "kind": "history",
         "regime": "newtonian",
         "params": {"c": 1.0, "G": 1.0, "M": 0.05, "q_M": -40.0, "masses": {"1": 300.0, "2": 300.0}},
         "axes": [{"label": "q2", "n": 128, "span": 64.0, "offset": -37.0},
                  {"label": "t2", "n": 64, "span": 0.16, "offset": -0.08},
                  {"label": "pointer"}],
         "initial": {"q2": {"branches": [
                         {"center": -30.0, "width": 0.5, "amplitude": math.sqrt(0.5)},
                         {"center": 10.0, "width": 0.5, "amplitude": math.sqrt(0.5)}]},
                     "t2": {"center": 0.0, "width": 0.0025},
                     "pointer": {"state": [1.0, 0.0]}},
         "event": {"tau_star": 10.0, "sigma_t": 0.005},
         "tau": {"n": 128, "spacing": 0.0025, "offset": 9.84, "dtau": 0.0025},
         "checks": ["norm", "closed_form", "regime_diagnostics"]}),
    "schrodinger-limit": (
        "constraint-derived generator vs an independent Schroedinger propagator on 256 points",
        {"schema_version": 1, "name": "schrodinger-limit", "units": _units(), "kind": "schrodinger_limit",
         "regime": "newtonian", "params": {"c": 1.0, "G": 1.0, "M": 0.5, "q_M": -60.0, "masses": {"1": 1.0}},
         "schrodinger": {"n": 256, "span": 64.0, "offset": -32.0, "label": "1"}}),
    "qrf-swap-mirror": (
        "frame swap: symbolic form invariance, T12 T21 round trip and a mirrored numeric run",
        {"schema_version": 1, "name": "qrf-swap-mirror", "units": _units(), "kind": "qrf_swap", "regime": "galilean",
         "params": {"c": 1.0, "masses": {"1": 1.0, "2": 1.0}},
         "axes": [{"label": "q2", "n": 64, "span": 40.0, "offset": -20.0},
                  {"label": "t2", "n": 64, "span": 32.0, "offset": -16.0}],
         "initial": {"q2": {"center": -1.0, "width": 2.0, "momentum": 0.2},
                     "t2": {"center": -4.0, "width": 1.0}},
         "tau": {"n": 2, "spacing": 1.0, "offset": 1.0, "dtau": 0.01}}),
}


def preset_names() -> List[str]:
    return list(PRESETS)


def preset_document(name: str) -> Dict[str, Any]:
    try:
        return copy.deepcopy(PRESETS[name][1])
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; available: {preset_names()}", "preset") from None


def load_preset(name: str) -> ScenarioConfig:
    return parse_config(preset_document(name))


# ---------------------------------------------------------------- building and running

def initial_state(cfg: ScenarioConfig) -> WaveFunction:
    factors = {}
    for ax in cfg.axes:
        spec = cfg.initial[ax.label]
        if ax.label == "pointer":
            factors[ax.label] = spec
            continue
        x = ax.grid.points
        factors[ax.label] = sum(b["amplitude"] * gaussian_packet(x, b["center"], b["width"], b["momentum"])
                                for b in spec)
    return gaussian_wavefunction(cfg.axes, factors).normalized()


def estimate_memory_mb(cfg: ScenarioConfig) -> Tuple[float, str]:
    """Rough peak memory and a description of the dominating array."""
    if cfg.kind == "schrodinger_limit":
        n = cfg.settings["schrodinger"]["n"]
        return 16.0 * n * n * 4 / 2 ** 20, f"dense {n}x{n} propagator"
    if not cfg.axes:
        return 0.0, "symbolic only"
    size = int(np.prod([a.grid.n_points for a in cfg.axes]))
    copies = cfg.tau.n_points + 8
    if cfg.kind == "qrf_swap":
        copies *= 2
    if "closed_form" in cfg.checks:
        copies += cfg.tau.n_points
    desc = " x ".join(f"{a.label}:{a.grid.n_points}" for a in cfg.axes)
    return 16.0 * size * copies / 2 ** 20, f"axis product {desc} = {size} amplitudes x {copies} copies"


def check_memory(cfg: ScenarioConfig, max_mem_mb: Optional[float]) -> float:
    est, desc = estimate_memory_mb(cfg)
    if max_mem_mb is not None and est > max_mem_mb:
        raise ResourceError(f"estimated memory {est:.1f} MB exceeds the cap {max_mem_mb:g} MB ({desc})")
    return est


@dataclass
class RunResult:
    config: ScenarioConfig
    checks: Dict[str, bool]
    diagnostics: Dict[str, Any]
    data: Dict[str, str]
    wall_clock: float

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    def manifest(self) -> Dict[str, Any]:
        return {"name": self.config.name, "config_hash": self.config.config_hash(), "version": __version__,
                "schema_version": SCHEMA_VERSION, "kind": self.config.kind, "regime": self.config.regime.value,
                "seed": self.config.seed, "wall_clock_s": self.wall_clock, "checks": self.checks,
                "pass": self.ok, "diagnostics": self.diagnostics, "files": sorted(self.data)}


def _fmt_rows(header: List[str], rows) -> str:
    lines = ["# " + " ".join(header)]
    for row in rows:
        lines.append(" ".join(f"{float(v):.12e}" for v in row))
    return "\n".join(lines) + "\n"


def marginals_text(history: HistoryState) -> str:
    """Long format: tau, axis index, coordinate, probability density (pointer: probability)."""
    first = history.snapshots[0]
    labels = [a.label for a in first.axes]
    rows = []
    for t, s in zip(history.tau, history.snapshots):
        s = to_basis(s, {l: POSITION for l in labels})
        for i, ax in enumerate(s.axes):
            p = s.marginal(ax.label)
            x = ax.coordinates(POSITION)
            for xv, pv in zip(x, p):
                rows.append((t, i, xv, pv))
    header = ["tau", "axis(" + ",".join(f"{i}={l}" for i, l in enumerate(labels)) + ")", "coordinate", "density"]
    return _fmt_rows(header, rows)


def _expect_energy(H, psi: WaveFunction) -> float:
    total = 0.0
    for k in H.terms:
        probe = to_basis(psi, dict(zip(k.acts_on, k.basis_required)))
        total += expectation(k, probe).real
    return total


def _random_norm_check(cfg: ScenarioConfig, H, n_samples: int = 8) -> Dict[str, Any]:
    """Seeded randomized initial packets; norm after evolution must stay 1 within 1e-10."""
    rng = np.random.default_rng(cfg.seed)
    worst = 0.0
    for _ in range(n_samples):
        factors = {}
        for ax in cfg.axes:
            if ax.label == "pointer":
                v = rng.normal(size=2) + 1j * rng.normal(size=2)
                factors[ax.label] = v
                continue
            g = ax.grid
            c0 = g.offset + g.length * rng.uniform(0.4, 0.6)
            w = g.length * rng.uniform(0.03, 0.06)
            k = rng.uniform(-0.2, 0.2) * np.pi / g.spacing
            factors[ax.label] = gaussian_packet(g.points, c0, w, k)
        psi = gaussian_wavefunction(cfg.axes, factors).normalized()
        hist = evolve_history(psi, H, [cfg.dtau * 4], cfg.dtau, leakage_limit=None)
        worst = max(worst, hist.diagnostics["norm_error"])
    return {"samples": n_samples, "seed": cfg.seed, "max_norm_error": worst, "pass": worst < 1e-10}


def run_scenario(cfg: ScenarioConfig, max_mem_mb: Optional[float] = None) -> RunResult:
    """Run one scenario; returns data file contents keyed by suffix, checks and diagnostics."""
    check_memory(cfg, max_mem_mb)
    start = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if cfg.kind == "schrodinger_limit":
            checks, diag, data = _run_schrodinger(cfg)
        elif cfg.kind == "qrf_swap":
            checks, diag, data = _run_swap(cfg)
        else:
            checks, diag, data = _run_history(cfg)
    diag["warnings"] = sorted({str(w.message) for w in caught})
    return RunResult(cfg, checks, diag, data, time.perf_counter() - start)


def _run_history(cfg: ScenarioConfig):
    psi0 = initial_state(cfg)
    H = build_hamiltonian(cfg.regime, cfg.params, cfg.axes)
    checks: Dict[str, bool] = {}
    diag: Dict[str, Any] = {"hamiltonian": H.describe()}
    data: Dict[str, str] = {}
    if cfg.event is not None:
        hist = evolve_with_event(psi0, H, cfg.event, cfg.tau, cfg.dtau)
        dist = event_time_distribution(hist) if cfg.event.mode == "pointer" else None
        if dist is not None:
            branches = _branch_descriptors(cfg)
            predicted = predicted_event_times(cfg.regime, branches, cfg.params, cfg.event.tau_star)
            meta = {"regime": cfg.regime.value, "sigma_t": cfg.event.sigma_t, "branches": branches,
                    "predicted_event_times": predicted}
            diag["event_distribution"] = meta
            data["events.txt"] = _fmt_rows(["tau1", "occurrence", "density"],
                                           zip(dist.tau, dist.occurrence, dist.density))
            checks["occurrence_monotone"] = dist.monotone
        if "closed_form" in cfg.checks:
            if cfg.regime is Regime.FULL:
                raise ConfigError("closed_form check needs a limit regime", "checks")
            ref = closed_form_history(cfg.regime, psi0, H, cfg.event, cfg.tau, cfg.dtau)
            dist_l2 = max(_l2(a, b) for a, b in zip(hist.snapshots, ref.snapshots))
            diag["closed_form_l2"] = dist_l2
            checks["closed_form_agreement"] = dist_l2 < 1e-4
    else:
        hist = evolve_history(psi0, H, cfg.tau, cfg.dtau)
        if "energy" in cfg.checks:
            e0 = _expect_energy(H, psi0)
            drift = max(abs(_expect_energy(H, s) - e0) for s in hist.snapshots) / max(abs(e0), 1e-300)
            diag["energy_relative_drift"] = drift
            checks["energy_conserved"] = drift < 1e-8
    diag["edge_leakage"] = hist.diagnostics.get("edge_leakage", {})
    if "norm" in cfg.checks:
        diag["norm_error"] = hist.diagnostics["norm_error"]
        checks["norm_preserved"] = hist.diagnostics["norm_error"] < 1e-10
    if "regime_diagnostics" in cfg.checks:
        rd = regime_diagnostics(psi0, cfg.params)
        diag["regime_diagnostics"] = rd
    if "random_norm" in cfg.checks:
        rn = _random_norm_check(cfg, H)
        diag["random_norm"] = rn
        checks["random_norm"] = rn["pass"]
    data["marginals.txt"] = marginals_text(hist)
    return checks, diag, data


def _l2(a: WaveFunction, b: WaveFunction) -> float:
    return float(np.linalg.norm(a.amplitudes - b.amplitudes) * math.sqrt(a.volume_element()))


def _branch_descriptors(cfg: ScenarioConfig) -> List[Dict[str, float]]:
    m = cfg.event.measured
    spec = cfg.initial.get(f"q{m}", [])
    return [{"q": b["center"], "k": b["momentum"], "weight": abs(b["amplitude"]) ** 2} for b in spec]


def _run_schrodinger(cfg: ScenarioConfig):
    s = cfg.settings["schrodinger"]
    grid = Grid1D(s["n"], s["span"] / s["n"], s["offset"])
    kwargs = {k: s[k] for k in ("center", "width", "momentum") if k in s}
    rep = schrodinger_limit_check(cfg.params, grid, label=s["label"], traversal=s["traversal"],
                                  n_steps=s["n_steps"], **kwargs)
    checks = {"l2_below_1e-6": rep["max_discrepancy"] < 1e-6,
              "traversal_at_least_10_spacings": abs(rep["center_shift_grid_spacings"]) >= 10.0}
    data = {"schrodinger.txt": _fmt_rows(["t", "l2_discrepancy", "phase_drift"],
                                         zip(rep["times"], rep["l2_discrepancy"], rep["phase_drift"]))}
    diag = {k: rep[k] for k in ("max_discrepancy", "center_shift_grid_spacings", "t_final", "dt",
                                "edge_leakage", "generator_terms")}
    return checks, diag, data


def _run_swap(cfg: ScenarioConfig):
    psi1 = initial_state(cfg)
    rep = qrf_swap_check(cfg.regime, cfg.params, psi1, cfg.tau.points, cfg.dtau)
    checks = dict(rep["symbolic"]["checks"])
    checks["numeric_mirror_within_1e-6"] = rep["numeric"]["pass"]
    diag = {"numeric": rep["numeric"], "round_trip_failures": rep["symbolic"]["round_trip_failures"]}
    data = {"swap.txt": _fmt_rows(["max_marginal_deviation"], [[rep["numeric"]["max_marginal_deviation"]]])}
    return checks, diag, data


# ---------------------------------------------------------------- symbolic verification

def verify_algebra(cfg: Optional[ScenarioConfig] = None) -> Dict[str, Any]:
    """First-class closure per regime and the conjugation tables; failures counted, never raised."""
    settings = (cfg.settings.get("algebra") if cfg is not None else None) or {
        "regimes": ["full"], "tables": ["T1", "T2", "T12"], "grading": None, "labels": ["1", "2"]}
    report: Dict[str, Any] = {"closure": {}, "tables": {}}
    failures = 0
    for reg in settings["regimes"]:
        cs = build_constraints(reg, labels=settings["labels"])
        rule = cs.rule if settings["grading"] is None else alg.GradingRule(**settings["grading"])
        rep = alg.verify_first_class(cs.expanded, rule)
        exact = {p["pair"]: p["exact_zero"] for p in rep["pairs"]}
        rep["regime"] = reg
        report["closure"][reg] = rep
        failures += rep["failures"]
        for p in rep["pairs"]:
            if "f1" in p["pair"] and not p["exact_zero"]:
                failures += 1
        report["closure"][reg]["exact_zero"] = exact
    table_rule = alg.DEFAULT_RULE if settings["grading"] is None else alg.GradingRule(**settings["grading"])
    for t in settings["tables"]:
        rep = alg.verify_table(t, table_rule)
        report["tables"][t] = rep
        failures += rep["failures"]
    report["failures"] = failures
    report["pass"] = failures == 0
    return report
