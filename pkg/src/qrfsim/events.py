"""Measurement events seen from clock 1: kicked histories and event-time distributions.

The measurement term Delta12 delta(T2 - tau*) Q2 is regularized by a normalized
Gaussian of width sigma_T.  Over a step the kick accumulates the exact integral
of that Gaussian, so the total eigenphase does not depend on sigma_T.

Two time-ordered realizations are provided.

``branch``    interaction picture with respect to the clock term Delta12 H2.
              The kick reads delta(T2 + Delta12 s - tau*) and is diagonal in the
              basis where Delta12 is (momentum for sr, position for newtonian).
``comoving``  interaction picture with respect to H2 alone; Delta12 - 1 stays in
              the generator and the kick reads Delta12 delta(T2 + s - tau*).
              No diagonality is assumed, so this route also covers the full
              regime.

In both, the unit-rate part of the clock motion is applied by translating the
clock grid (an exact relabeling), so the clock axis only has to hold the
initial packet.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import ndtr

from .model import ModelParams, Regime, gamma_factor, metric_g00
from .numerics import (pointer_axis, MOMENTUM, POSITION, Axis, ConfigurationError, ContractViolation, DiagonalKernel, Grid1D,
                       PhaseCache, TrotterPlan, WaveFunction, expectation, to_basis)
from .qrf import HamiltonianSpec, HistoryState, check_leakage, tau_steps, EDGE_LEAKAGE_LIMIT

__all__ = [
    "EventSpec", "EventTimeDistribution", "delta12", "delta12_sr_approx", "evolve_with_event",
    "closed_form_history", "event_time_distribution", "predicted_event_times", "POINTER",
]

POINTER = "pointer"


@dataclass(frozen=True)
class EventSpec:
    """Measurement at clock-2 time ``tau_star``; Q2 = kick_phase * sigma_x on the pointer.

    ``mode='phase'`` makes Q2 = kick_phase * identity (interferometric readout).
    """

    tau_star: float
    sigma_t: float
    kick_phase: float = math.pi / 2
    measured: str = "2"
    mode: str = "pointer"

    def __post_init__(self):
        if not self.sigma_t > 0:
            raise ConfigurationError("sigma_t must be positive")
        if self.mode not in ("pointer", "phase"):
            raise ConfigurationError(f"unknown kick mode {self.mode!r}")

    def validate(self, psi: WaveFunction) -> None:
        clock = psi.axis(f"t{self.measured}")
        g = clock.grid
        if self.sigma_t < g.spacing * (1 - 1e-9):
            raise ConfigurationError(f"sigma_t = {self.sigma_t} is below the clock grid spacing {g.spacing}")
        if self.sigma_t > 0.05 * g.length * (1 + 1e-9):
            raise ConfigurationError(f"sigma_t = {self.sigma_t} exceeds 5% of the clock span {g.length}")
        if self.mode == "pointer" and POINTER not in psi.labels:
            raise ConfigurationError("pointer mode needs a 'pointer' axis in the state")

    def to_dict(self) -> dict:
        return {"tau_star": self.tau_star, "sigma_t": self.sigma_t, "kick_phase": self.kick_phase,
                "measured": self.measured, "mode": self.mode}


# ---------------------------------------------------------------- worldline operator

def delta12(regime, k2, q2, q_M, k_M, params: ModelParams, frame: str = "1", measured: str = "2") -> np.ndarray:
    """Relative proper-time rate of clock ``measured`` as seen by clock ``frame``.

    full: sqrt(g00(q2 - q_M)/g00(q_M)) gamma(k2 + k_M; m_F) / gamma(k2; m_2); the
    limits drop the metric factor (sr), the gamma factors (newtonian) or both.
    ``q_M=None`` uses ``params.q_M``.
    """
    regime = Regime.parse(regime)
    qM = params.q_M if q_M is None else q_M
    c = params.c
    if regime is Regime.GALILEAN:
        return np.ones(np.broadcast(np.asarray(k2), np.asarray(q2)).shape)
    sr = gamma_factor(np.asarray(k2) + k_M, params.mass(frame), c) / gamma_factor(k2, params.mass(measured), c)
    if regime is Regime.SR:
        return sr * np.ones_like(np.asarray(q2, dtype=float))
    grav = np.sqrt(metric_g00(np.asarray(q2) - qM, params) / metric_g00(qM, params))
    if regime is Regime.NEWTONIAN:
        return grav * np.ones_like(np.asarray(k2, dtype=float))
    return grav * sr


def delta12_sr_approx(k2, params: ModelParams, frame: str = "1", measured: str = "2") -> np.ndarray:
    """sqrt(1 + k^2/m_F^2c^2 - k^2/m_2^2c^2), the small-momentum form."""
    k2 = np.asarray(k2, dtype=float)
    c = params.c
    return np.sqrt(1 + k2 ** 2 / (params.mass(frame) * c) ** 2 - k2 ** 2 / (params.mass(measured) * c) ** 2)


def predicted_event_times(regime, branches: Sequence[dict], params: ModelParams, tau_star: float) -> List[float]:
    """tau_b = Delta12(b)^-1 tau* for branch descriptors {'k': .., 'q': ..}."""
    out = []
    for b in branches:
        d = delta12(regime, b.get("k", 0.0), b.get("q", 0.0), b.get("q_M"), b.get("k_M", 0.0), params)
        out.append(float(tau_star / d))
    return out


# ---------------------------------------------------------------- helpers

def _merge_pieces(pieces: Sequence[DiagonalKernel], psi: WaveFunction) -> DiagonalKernel:
    """Sum of Delta pieces as one kernel; raises unless they share a basis configuration."""
    req: Dict[str, str] = {}
    for p in pieces:
        for a, b in zip(p.acts_on, p.basis_required):
            if req.get(a, b) != b:
                raise ContractViolation("Delta12 is not diagonal in a single basis; use mode='comoving'")
            req[a] = b
    labels = tuple(sorted(req, key=psi.axis_index))
    bases = tuple(req[l] for l in labels)
    shape = [psi.axis(l).grid.n_points for l in labels]
    total = np.zeros(shape)
    for p in pieces:
        v = p.values
        if v.ndim:
            order = [labels.index(a) for a in p.acts_on]
            sh = [1] * len(labels)
            for j, a in zip(order, p.acts_on):
                sh[j] = psi.axis(a).grid.n_points
            v = np.transpose(v, np.argsort(order)).reshape(sh)
        total = total + v
    return DiagonalKernel(labels, bases, total, "delta12")


def _shift_clock(psi: WaveFunction, label: str, amount: float) -> WaveFunction:
    """Exact translation T -> T + amount by moving the grid offset (position basis amplitudes kept)."""
    psi = to_basis(psi, {label: POSITION})
    i = psi.axis_index(label)
    ax = psi.axes[i]
    new = replace(ax, grid=Grid1D(ax.grid.n_points, ax.grid.spacing, ax.grid.offset + amount))
    return WaveFunction(psi.axes[:i] + (new,) + psi.axes[i + 1:], psi.amplitudes)


class _Kick:
    """Accumulated kick exp(-i Q w [F(arg(s1)) - F(arg(s0))]) on a fixed layout.

    Weights diagonal in different bases (the full regime's gamma ratio and
    redshift pieces) are applied group by group in a symmetric sequence.
    """

    def __init__(self, event: EventSpec, psi: WaveFunction, rate: Optional[DiagonalKernel],
                 weights: Sequence[DiagonalKernel], reference_rate: float = 1.0):
        self.event = event
        self._last: Optional[Tuple[float, np.ndarray]] = None
        clock = f"t{event.measured}"
        base = {clock: POSITION}
        if event.mode == "pointer":
            base[POINTER] = MOMENTUM
        if rate is not None:
            base.update(zip(rate.acts_on, rate.basis_required))
        groups: List[Tuple[Dict[str, str], List[DiagonalKernel]]] = []
        scalars = []
        for w in weights:
            if not w.acts_on:
                scalars.append(w)
                continue
            req = dict(zip(w.acts_on, w.basis_required))
            for bases, members in groups:
                if all(bases.get(a, b) == b for a, b in req.items()):
                    bases.update(req)
                    members.append(w)
                    break
            else:
                groups.append((dict(base, **req), [w]))
        if not groups:
            groups.append((dict(base), []))
        groups[0][1].extend(scalars)
        # d/ds F((T + r s - tau*)/sigma) = r delta_sigma, so the weights carry 1/r
        self.groups = []
        for bases, members in groups:
            layout = to_basis(psi, bases)
            w = sum(m.broadcast_to(layout) for m in members) / reference_rate if members else 1.0
            self.groups.append((bases, w))
        shape = lambda label: [-1 if a.label == label else 1 for a in psi.axes]
        self.T = psi.axis(clock).coordinates(POSITION).reshape(shape(clock))
        if rate is not None:
            self.rate = rate.broadcast_to(to_basis(psi, self.groups[0][0]))
        else:
            self.rate = reference_rate
        self.q = pointer_axis().coordinates(MOMENTUM).reshape(shape(POINTER)) if event.mode == "pointer" else 1.0
        self.scale = event.kick_phase
        if len(self.groups) == 1:
            self.sequence = [(0, 1.0)]
        else:
            outer = [(i, 0.5) for i in range(len(self.groups) - 1)]
            self.sequence = outer + [(len(self.groups) - 1, 1.0)] + outer[::-1]

    def cumulative(self, s: float) -> np.ndarray:
        if self._last is not None and self._last[0] == s:
            return self._last[1]
        e = self.event
        val = ndtr((self.T + self.rate * s - e.tau_star) / e.sigma_t)
        self._last = (s, val)
        return val

    def angle(self, s0: float, s1: float, group: int = 0) -> np.ndarray:
        lo = self.cumulative(s0)
        d = self.cumulative(s1) - lo
        return self.groups[group][1] * d * self.scale * self.q

    def apply(self, psi: WaveFunction, s0: float, s1: float) -> WaveFunction:
        for i, frac in self.sequence:
            psi = to_basis(psi, self.groups[i][0])
            psi = psi.with_amplitudes(psi.amplitudes * np.exp(-1j * frac * self.angle(s0, s1, i)))
        return psi


def _check_clock_sharpness(psi: WaveFunction, event: EventSpec) -> float:
    label = f"t{event.measured}"
    ax = psi.axis(label)
    p = to_basis(psi, {label: POSITION}).marginal(label) * ax.grid.spacing
    x = ax.grid.points
    mean = float(np.sum(p * x))
    width = float(np.sqrt(max(np.sum(p * (x - mean) ** 2), 0.0)))
    if width > 2 * event.sigma_t:
        warnings.warn(f"clock packet width {width:.3g} exceeds 2 sigma_T; running in unsharp-clock mode",
                      stacklevel=3)
    return width


def _mean_rate(pieces: Sequence[DiagonalKernel], psi: WaveFunction) -> float:
    total = 0.0
    for k in pieces:
        probe = to_basis(psi, dict(zip(k.acts_on, k.basis_required))).normalized()
        total += expectation(k, probe).real
    return total


def _prepare(psi0: WaveFunction, H: HamiltonianSpec, event: EventSpec, mode: str, reference_rate=None):
    """Kick-free generator, kick rate/weights, residual clock kernel and grid translation rate.

    The clock grid is translated at ``reference_rate`` (default <Delta12> in
    psi0); only the deviation from it moves the packet on the grid.
    """
    m = event.measured
    clock = f"t{m}"
    if clock not in psi0.labels:
        raise ConfigurationError(f"event needs the clock axis {clock}")
    if m not in H.delta_pieces:
        raise ConfigurationError(f"particle {m} is not in the Hamiltonian")
    event.validate(psi0)
    names = set(H.clock_names(m))
    H2 = psi0.axis(clock).coordinates(MOMENTUM)
    pieces = H.delta_pieces[m]
    ref = _mean_rate(pieces, psi0) if reference_rate is None else float(reference_rate)
    if mode == "branch":
        rate = _merge_pieces(pieces, psi0)
        kr = tuple(k for k in H.terms if k.name not in names)
        shift = DiagonalKernel(rate.acts_on + (clock,), rate.basis_required + (MOMENTUM,),
                               np.multiply.outer(rate.values - ref, H2), "clock_residual")
        return kr, rate, [], shift, ref
    if mode == "comoving":
        kr = []
        for k in H.terms:
            if k.name == f"clock[{m}]":
                idx = k.acts_on.index(clock)
                shape = [1] * k.values.ndim
                shape[idx] = len(H2)
                k = DiagonalKernel(k.acts_on, k.basis_required, k.values - ref * H2.reshape(shape), "clock_comoving")
            kr.append(k)
        return tuple(kr), None, list(pieces), None, ref
    raise ConfigurationError(f"unknown event evolution mode {mode!r}")


def _default_mode(H: HamiltonianSpec) -> str:
    return "comoving" if H.regime is Regime.FULL else "branch"


def _finish(state: WaveFunction, shift: Optional[DiagonalKernel], tau: float, ref: float, clock: str,
            original: Dict[str, str]) -> WaveFunction:
    if shift is not None:
        state = to_basis(state, dict(zip(shift.acts_on, shift.basis_required)))
        state = state.with_amplitudes(state.amplitudes * np.exp(-1j * tau * shift.broadcast_to(state)))
    state = _shift_clock(state, clock, ref * tau)
    return to_basis(state, original)


# ---------------------------------------------------------------- time-ordered evolution

def evolve_with_event(psi0: WaveFunction, H: HamiltonianSpec, event: EventSpec, tau, dtau: float = 1e-2,
                      mode: Optional[str] = None, reference_rate: Optional[float] = None,
                      leakage_limit: Optional[float] = EDGE_LEAKAGE_LIMIT) -> HistoryState:
    """Trotterized time-ordered kicked history on the tau points.

    Each step is S(dtau/2) K(s, s+dtau) S(dtau/2) with S the Strang propagator
    of the kick-free generator and K the accumulated kick over the step.
    """
    tau = tau.points if isinstance(tau, Grid1D) else np.asarray(tau, dtype=float)
    mode = mode or _default_mode(H)
    psi0 = psi0.normalized()
    clock_width = _check_clock_sharpness(psi0, event)
    kr, rate, weights, shift, ref = _prepare(psi0, H, event, mode, reference_rate)
    steps = tau_steps(tau, dtau)
    original = {a.label: a.basis for a in psi0.axes}
    cache = PhaseCache(TrotterPlan(dtau / 2, kr), psi0)
    kick = _Kick(event, psi0, rate, weights, ref)
    clock = f"t{event.measured}"
    state = psi0
    s = 0.0
    n_done = 0
    snaps = []
    worst: Dict[str, float] = {}
    norm_error = 0.0
    for n in steps:
        for _ in range(n):
            s0 = n_done * dtau
            state = cache.run(state, 1)
            state = kick.apply(state, s0, s0 + dtau)
            state = cache.run(state, 1)
            n_done += 1
        t = n_done * dtau
        snap = _finish(state, shift, t, ref, clock, original)
        norm_error = max(norm_error, abs(snap.norm_squared() - 1.0))
        snap = snap.normalized()
        if leakage_limit is not None:
            leak = check_leakage(snap, leakage_limit)
            worst = {k: max(worst.get(k, 0.0), v) for k, v in leak.items()}
        snaps.append(snap)
    return HistoryState(tau, tuple(snaps), {"mode": mode, "dtau": dtau, "edge_leakage": worst,
                                            "clock_width": clock_width, "reference_rate": ref, "norm_error": norm_error,
                                            "event": event.to_dict()})


def closed_form_history(regime, psi0: WaveFunction, H: HamiltonianSpec, event: EventSpec, tau,
                        dtau: float = 1e-2, reference_rate: Optional[float] = None) -> HistoryState:
    """Piecewise closed forms of the limit regimes.

    For every branch value b of the Delta12-diagonal basis the event fires at
    tau_b = Delta12(b)^-1 (tau* - T2); with the regularized delta the fired
    fraction is F((T2 + Delta12 tau - tau*)/sigma_T) - F((T2 - tau*)/sigma_T).
    The history is exp(-i tau Delta12 H2) Kick(tau) exp(-i tau K_R) psi0, which
    is the two-piece form (pre-kick evolution, kick, post-kick evolution) when
    the kick commutes with the kick-free generator.
    """
    regime = Regime.parse(regime)
    if regime is Regime.FULL or H.regime is Regime.FULL:
        raise ConfigurationError("closed forms exist only in the galilean, sr and newtonian limits")
    if regime is not H.regime:
        raise ConfigurationError(f"Hamiltonian is {H.regime.value}, closed form requested for {regime.value}")
    tau = tau.points if isinstance(tau, Grid1D) else np.asarray(tau, dtype=float)
    psi0 = psi0.normalized()
    kr, rate, weights, shift, ref = _prepare(psi0, H, event, "branch", reference_rate)
    steps = tau_steps(tau, dtau)
    original = {a.label: a.basis for a in psi0.axes}
    cache = PhaseCache(TrotterPlan(dtau, kr), psi0)
    kick = _Kick(event, psi0, rate, weights, ref)
    clock = f"t{event.measured}"
    state = psi0
    snaps = []
    for n, t in zip(steps, tau):
        state = cache.run(state, n)
        kicked = kick.apply(state, 0.0, float(t))
        snaps.append(_finish(kicked, shift, float(t), ref, clock, original).normalized())
    return HistoryState(tau, tuple(snaps), {"mode": "closed_form", "dtau": dtau, "reference_rate": ref,
                                            "event": event.to_dict()})


# ---------------------------------------------------------------- readout

@dataclass(frozen=True)
class EventTimeDistribution:
    tau: np.ndarray
    occurrence: np.ndarray
    density: np.ndarray
    metadata: Dict[str, object] = field(default_factory=dict)

    @property
    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.occurrence) >= -1e-10))

    def peaks(self, n: int, min_separation: Optional[float] = None) -> List[float]:
        """Locations of the n largest local maxima of the density (parabolic refinement)."""
        d = self.density
        idx = [i for i in range(1, len(d) - 1) if d[i] >= d[i - 1] and d[i] > d[i + 1]]
        idx.sort(key=lambda i: -d[i])
        chosen: List[int] = []
        sep = min_separation if min_separation is not None else 0.0
        for i in idx:
            if all(abs(self.tau[i] - self.tau[j]) > sep for j in chosen):
                chosen.append(i)
            if len(chosen) == n:
                break
        out = []
        for i in sorted(chosen):
            y0, y1, y2 = d[i - 1], d[i], d[i + 1]
            den = y0 - 2 * y1 + y2
            off = 0.5 * (y0 - y2) / den if den != 0 else 0.0
            h = self.tau[i + 1] - self.tau[i]
            out.append(float(self.tau[i] + off * h))
        return out

    def to_columns(self) -> np.ndarray:
        return np.column_stack([self.tau, self.occurrence])


def event_time_distribution(history: HistoryState, pointer: str = POINTER, fired_index: int = 1,
                            metadata: Optional[dict] = None) -> EventTimeDistribution:
    """Probability that the pointer reads 'fired' at each tau_1, and its derivative."""
    first = history.snapshots[0]
    if pointer not in first.labels:
        raise ConfigurationError("no pointer axis: a pure-phase kick needs interferometric readout")
    occ = []
    for s in history.snapshots:
        p = to_basis(s, {pointer: POSITION}).marginal(pointer)
        occ.append(float(p[fired_index] / p.sum()))
    occ = np.array(occ)
    dens = np.gradient(occ, history.tau) if len(occ) > 1 else np.zeros_like(occ)
    meta = dict(history.diagnostics.get("event", {}))
    meta.update(metadata or {})
    return EventTimeDistribution(np.asarray(history.tau), occ, dens, meta)
