"""Weak-field spacetime model: potential, metric, worldline factors and constraints.

Units: hbar = 1, c and G are parameters.  Momenta and frequencies are in
momentum units, so omega(k) = sqrt(m^2 c^2 + k^2) and c*omega is an energy.
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from . import algebra as alg
from .numerics import MOMENTUM, POSITION, ConfigurationError, WaveFunction, to_basis

__all__ = [
    "Regime", "ModelParams", "WeakFieldError", "WeakFieldWarning", "potential", "metric_g00",
    "gamma_factor", "omega", "worldline_delta", "transformed_metric", "regime_rule",
    "ConstraintSet", "build_constraints", "regime_diagnostics", "check_weak_field",
    "WEAK_FIELD_WARN", "WEAK_FIELD_LIMIT", "DIAGNOSTIC_THRESHOLD",
]

WEAK_FIELD_WARN = 0.01
WEAK_FIELD_LIMIT = 0.05
DIAGNOSTIC_THRESHOLD = 1e-3


class Regime(str, enum.Enum):
    GALILEAN = "galilean"
    SR = "sr"
    NEWTONIAN = "newtonian"
    FULL = "full"

    @classmethod
    def parse(cls, value) -> "Regime":
        try:
            if isinstance(value, Regime):
                return value
            text = str(value).lower().replace("-", "_")
            return cls(_REGIME_ALIASES.get(text, text))
        except ValueError:
            raise ConfigurationError(
                f"unknown regime {value!r}; expected one of {[r.value for r in cls]}") from None


_REGIME_ALIASES = {"special_relativistic": "sr", "nonrelativistic": "galilean"}


class WeakFieldError(ConfigurationError):
    """|Phi|/c^2 exceeds the weak-field validity limit."""


class WeakFieldWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ModelParams:
    """Physical constants and the static source.

    ``q_M`` is the relational position of the source as seen from the frame
    particle; the frame itself therefore sits at potential Phi(q_M).
    """

    c: float = 1.0
    G: float = 1.0
    M: float = 0.0
    r_min: float = 1.0
    masses: Mapping[str, float] = field(default_factory=lambda: {"1": 1.0, "2": 1.0})
    q_M: float = -50.0

    def __post_init__(self):
        if not self.c > 0:
            raise ConfigurationError("c must be positive")
        if self.G < 0 or self.M < 0:
            raise ConfigurationError("G and M must be non-negative")
        if not self.r_min > 0:
            raise ConfigurationError("r_min must be positive")
        for k, m in self.masses.items():
            if not m > 0:
                raise ConfigurationError(f"mass of particle {k} must be positive")
        object.__setattr__(self, "masses", dict(self.masses))

    def mass(self, label: str) -> float:
        try:
            return float(self.masses[str(label)])
        except KeyError:
            raise ConfigurationError(f"no mass configured for particle {label!r}") from None

    def to_dict(self) -> dict:
        return {"c": self.c, "G": self.G, "M": self.M, "r_min": self.r_min,
                "masses": dict(self.masses), "q_M": self.q_M}


def potential(r, params: ModelParams) -> np.ndarray:
    """Phi(r) = -G M / max(|r|, r_min)."""
    r = np.abs(np.asarray(r, dtype=float))
    return -params.G * params.M / np.maximum(r, params.r_min)


def check_weak_field(r, params: ModelParams) -> float:
    """Largest |Phi|/c^2 over ``r``; warns above 0.01 and raises above 0.05."""
    ratio = float(np.max(np.abs(potential(r, params)))) / params.c ** 2 if np.size(r) else 0.0
    if ratio > WEAK_FIELD_LIMIT:
        raise WeakFieldError(f"|Phi|/c^2 = {ratio:.4g} exceeds the weak-field limit {WEAK_FIELD_LIMIT}")
    if ratio > WEAK_FIELD_WARN:
        warnings.warn(f"|Phi|/c^2 = {ratio:.4g} exceeds {WEAK_FIELD_WARN}; truncation error grows",
                      WeakFieldWarning, stacklevel=2)
    return ratio


def metric_g00(r, params: ModelParams, check: bool = True) -> np.ndarray:
    """g00 = 1 + 2 Phi / c^2."""
    if check:
        check_weak_field(r, params)
    return 1.0 + 2.0 * potential(r, params) / params.c ** 2


def gamma_factor(k, m: float, c: float) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    return np.sqrt(1.0 + (k / (m * c)) ** 2)


def omega(k, m: float, c: float) -> np.ndarray:
    """omega(k) = sqrt(m^2 c^2 + k^2), momentum units."""
    k = np.asarray(k, dtype=float)
    return np.sqrt((m * c) ** 2 + k ** 2)


def worldline_delta(q, k, m: float, params: ModelParams) -> np.ndarray:
    """Delta(q, k) = sqrt(g00(q)) / gamma(k), broadcast over q and k."""
    return np.sqrt(metric_g00(q, params)) / gamma_factor(k, m, params.c)


def transformed_metric(q_i, params: ModelParams, q_M: Optional[float] = None) -> np.ndarray:
    """g'00 = g00(q_i - q_M) / g00(q_M)."""
    qm = params.q_M if q_M is None else q_M
    return metric_g00(np.asarray(q_i, dtype=float) - qm, params) / metric_g00(qm, params)


# ---------------------------------------------------------------- symbolic constraints

def regime_rule(regime) -> alg.GradingRule:
    """Grading rule that defines each limit of the full model."""
    regime = Regime.parse(regime)
    if regime is Regime.FULL:
        return alg.GradingRule()
    if regime is Regime.SR:
        return alg.GradingRule(max_g=0, max_p=4)
    if regime is Regime.NEWTONIAN:
        return alg.GradingRule(max_g=1, max_p=2, max_p_internal=0)
    return alg.GradingRule(max_g=0, max_p=2, max_p_internal=0)


@dataclass(frozen=True)
class ConstraintSet:
    regime: Regime
    labels: tuple
    formal: Dict[str, alg.Expr]
    expanded: Dict[str, alg.Expr]
    rule: alg.GradingRule
    rest_energy_offsets: Dict[str, alg.Expr]

    def first_class_report(self) -> dict:
        rep = alg.verify_first_class(self.expanded, self.rule)
        rep["regime"] = self.regime.value
        return rep


def _delta_formal(label: str) -> alg.Expr:
    return alg.worldline_factor(label)


def build_constraints(regime="full", labels: Sequence[str] = ("1", "2"), quantum_M: bool = True,
                      measurement: Optional[str] = None) -> ConstraintSet:
    """Dispersion constraints C_I and global constraints f0, f1.

    The formal (all-orders) constraints are

        C_I = sqrt(g^00(x_I - x_M)) p0_I - omega_I(p_I)
        f0  = sum_I [p0_I + Delta_I(x_I - x_M, p_I) H_I / c] (+ p0_M)
        f1  = sum_I p_I (+ p_M)

    and every regime is their expansion under ``regime_rule(regime)``.  In the
    Galilean limit the rest energy m_I c is removed from C_I and reported in
    ``rest_energy_offsets``.  ``measurement`` names a particle whose clock
    carries the event term Delta delta(T - tau) Q / c in f0.
    """
    regime = Regime.parse(regime)
    labels = tuple(str(l) for l in labels)
    if regime in (Regime.GALILEAN, Regime.SR):
        quantum_M = False
    rule = regime_rule(regime)
    inv_c = (("c", -1),)
    formal: Dict[str, alg.Expr] = {}
    for l in labels:
        arg = alg.linear((("x", l), 1), (("x", "M"), -1))
        formal[f"C{l}"] = alg.sqrt_g00_inv(arg) * alg.sym("p0", l) - alg.omega_fn(alg.linear((("p", l), 1)), l)
    f0 = alg.const(0)
    f1 = alg.const(0)
    for l in labels:
        f0 = f0 + alg.sym("p0", l) + (_delta_formal(l) * alg.sym("H", l)).scale(1, inv_c)
        f1 = f1 + alg.sym("p", l)
    if quantum_M:
        f0 = f0 + alg.sym("p0", "M")
        f1 = f1 + alg.sym("p", "M")
    if measurement is not None:
        m = str(measurement)
        if m not in labels:
            raise ConfigurationError(f"measured particle {m!r} is not among {labels}")
        kick = alg.kick_fn(alg.linear((("T", m), 1)))
        f0 = f0 + (_delta_formal(m) * kick).scale(1, inv_c + ((f"Q{m}", 1),))
    formal["f0"] = f0
    formal["f1"] = f1

    expanded = {k: alg.expand_dressing(v, rule) for k, v in formal.items()}
    offsets: Dict[str, alg.Expr] = {}
    if regime is Regime.GALILEAN:
        for l in labels:
            rest = alg.scalar(**{f"m{l}": 1, "c": 1})
            offsets[f"C{l}"] = -rest
            expanded[f"C{l}"] = expanded[f"C{l}"] + rest
    return ConstraintSet(regime, labels, formal, expanded, rule, offsets)


# ---------------------------------------------------------------- diagnostics

def _spatial_axes(psi: WaveFunction) -> List[str]:
    return [a.label for a in psi.axes if a.label.startswith("q") and a.label != "qM" and not a.discrete]


def regime_diagnostics(psi: WaveFunction, params: ModelParams,
                       threshold: float = DIAGNOSTIC_THRESHOLD) -> dict:
    """Expectation magnitudes of the expansion parameters on a state.

    Spatial axes are the ones labelled ``q<particle>``.  Per particle,
    eps_p^n = <|k|^n> / (m c)^n from the momentum marginal and
    eps_g = <|Phi(q - q_M)|> / c^2 from the position marginal.  Dropped orders
    (eps_g^2, eps_g eps_p^2, eps_p^6) are flagged when they exceed ``threshold``
    relative to the retained leading order.
    """
    out: Dict[str, dict] = {}
    flags: List[str] = []
    for label in _spatial_axes(psi):
        part = label[1:]
        m = params.mass(part)
        mc = m * params.c
        ax = psi.axis(label)
        pk = to_basis(psi, {label: MOMENTUM}).marginal(label) * ax.grid.conjugate_spacing
        px = to_basis(psi, {label: POSITION}).marginal(label) * ax.grid.spacing
        k = ax.grid.conjugate_points
        x = ax.grid.points
        eps_p2 = float(np.sum(pk * (k / mc) ** 2))
        eps_p4 = float(np.sum(pk * (k / mc) ** 4))
        eps_p6 = float(np.sum(pk * (k / mc) ** 6))
        eps_g = float(np.sum(px * np.abs(potential(x - params.q_M, params)))) / params.c ** 2
        entry = {"eps_p2": eps_p2, "eps_p4": eps_p4, "eps_g": eps_g,
                 "dropped": {"eps_g^2": eps_g ** 2, "eps_g*eps_p^2": eps_g * eps_p2, "eps_p^6": eps_p6}}
        out[part] = entry
        for name, val in entry["dropped"].items():
            if val > threshold:
                flags.append(f"particle {part}: dropped {name} = {val:.3g} exceeds {threshold:g}")
    return {"particles": out, "threshold": threshold, "flags": flags, "ok": not flags}
