"""Discretized Hilbert-space substrate.

Uniform periodic grids, unitary spectral basis changes, diagonal kernels,
Strang-split evolution and a dense eigendecomposition oracle.  hbar = 1.

Momentum-basis amplitudes are stored on the centered conjugate grid
k_m = (m - n/2) dk, with the continuum normalization

    phi(k) = (2 pi)^-1/2 sum_j dx psi(x_j) exp(-i k x_j),

so that sum |psi|^2 dx = sum |phi|^2 dk.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

__all__ = [
    "ConfigurationError", "ContractViolation", "ResourceError", "Grid1D", "Axis", "WaveFunction",
    "DiagonalKernel", "TrotterPlan", "make_uniform_grid", "to_conjugate_basis", "to_basis",
    "apply_diagonal", "exp_kernel", "expectation", "trotter_evolve", "trotter_segments", "PhaseCache", "dense_oracle_evolve",
    "dense_matrix", "edge_leakage", "gaussian_wavefunction", "gaussian_packet", "pointer_axis",
    "POSITION", "MOMENTUM",
]

POSITION = "position"
MOMENTUM = "momentum"
MAX_ORACLE_DIM = 4096


class ConfigurationError(ValueError):
    """Invalid grid or scenario configuration."""


class ContractViolation(RuntimeError):
    """An operation was applied in the wrong basis or to unknown axes."""


class ResourceError(RuntimeError):
    """A requested computation exceeds a configured resource limit."""


@dataclass(frozen=True)
class Grid1D:
    n_points: int
    spacing: float
    offset: float = 0.0

    def __post_init__(self):
        n = self.n_points
        if not isinstance(n, (int, np.integer)) or n < 1 or (n & (n - 1)) != 0:
            raise ConfigurationError(f"n_points must be a positive power of two, got {n!r}")
        if not self.spacing > 0:
            raise ConfigurationError(f"spacing must be positive, got {self.spacing!r}")

    @property
    def length(self) -> float:
        return self.n_points * self.spacing

    @property
    def conjugate_spacing(self) -> float:
        return 2.0 * np.pi / (self.n_points * self.spacing)

    @property
    def points(self) -> np.ndarray:
        return self.offset + self.spacing * np.arange(self.n_points)

    @property
    def conjugate_points(self) -> np.ndarray:
        return self.conjugate_spacing * (np.arange(self.n_points) - self.n_points // 2)

    def index_of(self, value: float) -> int:
        return int(np.argmin(np.abs(self.points - value)))


def make_uniform_grid(n: int, length: float, offset: float = 0.0) -> Grid1D:
    if not length > 0:
        raise ConfigurationError(f"grid length must be positive, got {length!r}")
    if int(n) < 1:
        raise ConfigurationError(f"n_points must be a positive power of two, got {n!r}")
    return Grid1D(int(n), float(length) / int(n), float(offset))


@dataclass(frozen=True)
class Axis:
    """One tensor factor. ``discrete`` axes (pointers) use a Hadamard basis change."""

    grid: Grid1D
    label: str
    basis: str = POSITION
    discrete: bool = False

    def measure(self, basis: Optional[str] = None) -> float:
        if self.discrete:
            return 1.0
        b = basis or self.basis
        return self.grid.spacing if b == POSITION else self.grid.conjugate_spacing

    def coordinates(self, basis: Optional[str] = None) -> np.ndarray:
        b = basis or self.basis
        if self.discrete:
            return np.arange(self.grid.n_points, dtype=float) if b == POSITION else np.array([1.0, -1.0])
        return self.grid.points if b == POSITION else self.grid.conjugate_points


def pointer_axis(label: str = "pointer") -> Axis:
    """Two-state pointer; its conjugate basis is the sigma_x eigenbasis (+1, -1)."""
    return Axis(Grid1D(2, 1.0, 0.0), label, POSITION, discrete=True)


@dataclass(frozen=True, eq=False)
class WaveFunction:
    axes: Tuple[Axis, ...]
    amplitudes: np.ndarray

    def __post_init__(self):
        labels = [a.label for a in self.axes]
        if len(set(labels)) != len(labels):
            raise ConfigurationError(f"axis labels must be unique: {labels}")
        shape = tuple(a.grid.n_points for a in self.axes)
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != shape:
            raise ConfigurationError(f"amplitude shape {amps.shape} does not match axes {shape}")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(a.label for a in self.axes)

    def axis_index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ContractViolation(f"unknown axis label {label!r}; axes are {self.labels}") from None

    def axis(self, label: str) -> Axis:
        return self.axes[self.axis_index(label)]

    def basis_of(self, label: str) -> str:
        return self.axis(label).basis

    def volume_element(self) -> float:
        return float(np.prod([a.measure() for a in self.axes]))

    def norm_squared(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2) * self.volume_element())

    def normalized(self) -> "WaveFunction":
        return replace(self, amplitudes=self.amplitudes / np.sqrt(self.norm_squared()))

    def with_amplitudes(self, amps: np.ndarray, axes: Optional[Tuple[Axis, ...]] = None) -> "WaveFunction":
        return WaveFunction(axes if axes is not None else self.axes, amps)

    def marginal(self, label: str) -> np.ndarray:
        """Probability density along one axis in its current basis."""
        i = self.axis_index(label)
        others = tuple(j for j in range(len(self.axes)) if j != i)
        dens = np.sum(np.abs(self.amplitudes) ** 2, axis=others)
        w = np.prod([self.axes[j].measure() for j in others]) if others else 1.0
        return dens * w

    def flat(self) -> np.ndarray:
        """Orthonormal-coordinate vector (amplitudes times sqrt of the measure)."""
        return (self.amplitudes * np.sqrt(self.volume_element())).ravel()

    @classmethod
    def from_flat(cls, axes: Tuple[Axis, ...], vec: np.ndarray) -> "WaveFunction":
        w = np.prod([a.measure() for a in axes])
        shape = tuple(a.grid.n_points for a in axes)
        return cls(axes, np.asarray(vec).reshape(shape) / np.sqrt(w))


def _fft_axis(amps: np.ndarray, axis: Axis, i: int, forward: bool) -> np.ndarray:
    g = axis.grid
    n = g.n_points
    shape = [1] * amps.ndim
    shape[i] = n
    if axis.discrete:
        h = np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2.0)
        return np.moveaxis(np.tensordot(h, np.moveaxis(amps, i, 0), axes=1), 0, i)
    alt = ((-1.0) ** np.arange(n)).reshape(shape)
    k = g.conjugate_points.reshape(shape)
    if forward:
        out = np.fft.fft(amps * alt, axis=i) * np.exp(-1j * k * g.offset)
        return out * (g.spacing / np.sqrt(2.0 * np.pi))
    out = np.fft.ifft(amps * np.exp(1j * k * g.offset), axis=i) * alt
    return out * (n * g.conjugate_spacing / np.sqrt(2.0 * np.pi))


def to_conjugate_basis(psi: WaveFunction, axis: str) -> WaveFunction:
    """Toggle the basis of one axis by the unitary spectral transform."""
    i = psi.axis_index(axis)
    ax = psi.axes[i]
    forward = ax.basis == POSITION
    amps = _fft_axis(psi.amplitudes, ax, i, forward)
    new_ax = replace(ax, basis=MOMENTUM if forward else POSITION)
    return psi.with_amplitudes(amps, psi.axes[:i] + (new_ax,) + psi.axes[i + 1:])


def to_basis(psi: WaveFunction, bases: Dict[str, str]) -> WaveFunction:
    for label, b in bases.items():
        if psi.basis_of(label) != b:
            psi = to_conjugate_basis(psi, label)
    return psi


@dataclass(frozen=True, eq=False)
class DiagonalKernel:
    """Operator diagonal in the stated bases of the axes it acts on."""

    acts_on: Tuple[str, ...]
    basis_required: Tuple[str, ...]
    values: np.ndarray
    name: str = ""

    def __post_init__(self):
        if len(self.acts_on) != len(self.basis_required):
            raise ConfigurationError("acts_on and basis_required must have equal length")
        vals = np.asarray(self.values)
        if vals.ndim != len(self.acts_on) and vals.ndim != 0:
            raise ConfigurationError(f"kernel {self.name!r}: values must have one dimension per axis")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.values) or bool(np.all(self.values.imag == 0))

    def broadcast_to(self, psi: WaveFunction) -> np.ndarray:
        """Values reshaped to broadcast against ``psi.amplitudes``."""
        for label, b in zip(self.acts_on, self.basis_required):
            if psi.basis_of(label) != b:
                raise ContractViolation(
                    f"kernel {self.name!r} requires axis {label!r} in {b} basis, found {psi.basis_of(label)}")
        vals = self.values
        if vals.ndim == 0:
            return vals
        idx = [psi.axis_index(l) for l in self.acts_on]
        order = np.argsort(idx)
        vals = np.transpose(vals, order)
        shape = [1] * len(psi.axes)
        for j in sorted(idx):
            shape[j] = psi.axes[j].grid.n_points
        return vals.reshape(shape)

    def scaled(self, factor: complex, name: Optional[str] = None) -> "DiagonalKernel":
        return replace(self, values=self.values * factor, name=name or self.name)


def apply_diagonal(kernel: DiagonalKernel, psi: WaveFunction) -> WaveFunction:
    return psi.with_amplitudes(psi.amplitudes * kernel.broadcast_to(psi))


def exp_kernel(kernel: DiagonalKernel, dt: float) -> DiagonalKernel:
    """exp(-i values dt) as a new kernel."""
    return replace(kernel, values=np.exp(-1j * kernel.values * dt), name=f"exp({kernel.name})")


def expectation(kernel: DiagonalKernel, psi: WaveFunction) -> complex:
    vals = kernel.broadcast_to(psi)
    return complex(np.sum(np.abs(psi.amplitudes) ** 2 * vals) * psi.volume_element())


# ---------------------------------------------------------------- split-step evolution

def _group_kernels(kernels: Sequence[DiagonalKernel]) -> List[Tuple[Dict[str, str], List[DiagonalKernel]]]:
    groups: List[Tuple[Dict[str, str], List[DiagonalKernel]]] = []
    for k in kernels:
        req = dict(zip(k.acts_on, k.basis_required))
        for bases, members in groups:
            if all(bases.get(a, b) == b for a, b in req.items()):
                bases.update(req)
                members.append(k)
                break
        else:
            groups.append((dict(req), [k]))
    return groups


@dataclass(frozen=True, eq=False)
class TrotterPlan:
    """Symmetric (Strang) product formula over groups of mutually diagonal kernels.

    ``term_sequence`` lists (basis configuration, weight, kernels) in application
    order for one step; basis transforms are inserted between entries whenever a
    group's required bases differ from the current ones.
    """

    step_size: float
    kernels: Tuple[DiagonalKernel, ...]
    n_steps: int = 1
    term_sequence: Tuple[Tuple[Tuple[Tuple[str, str], ...], float, Tuple[DiagonalKernel, ...]], ...] = ()

    def __post_init__(self):
        if not self.step_size > 0:
            raise ConfigurationError("step_size must be positive")
        if self.n_steps < 1:
            raise ConfigurationError("n_steps must be a positive integer")
        for k in self.kernels:
            if not k.is_real:
                raise ContractViolation(f"kernel {k.name!r} is not real; the generator must be Hermitian")
        groups = _group_kernels(self.kernels)
        seq = []
        if len(groups) == 1:
            seq.append((tuple(sorted(groups[0][0].items())), 1.0, tuple(groups[0][1])))
        else:
            for bases, members in groups[:-1]:
                seq.append((tuple(sorted(bases.items())), 0.5, tuple(members)))
            seq.append((tuple(sorted(groups[-1][0].items())), 1.0, tuple(groups[-1][1])))
            for bases, members in reversed(groups[:-1]):
                seq.append((tuple(sorted(bases.items())), 0.5, tuple(members)))
        object.__setattr__(self, "term_sequence", tuple(seq))

    @property
    def total_time(self) -> float:
        return self.step_size * self.n_steps

    def with_steps(self, n_steps: int) -> "TrotterPlan":
        return TrotterPlan(self.step_size, self.kernels, n_steps)


class PhaseCache:
    """Precomputed exp(-i sum(values) w dt) per group of a plan, for reuse across segments."""

    def __init__(self, plan: TrotterPlan, psi: WaveFunction):
        self.plan = plan
        self.entries = []
        for bases, weight, members in plan.term_sequence:
            probe = to_basis(psi, dict(bases))
            total = 0.0
            for k in members:
                total = total + k.broadcast_to(probe)
            self.entries.append((dict(bases), weight, total))
        self._cache: Dict[Tuple[int, float], np.ndarray] = {}

    def phase(self, i: int, dt: float) -> np.ndarray:
        key = (i, round(dt, 15))
        if key not in self._cache:
            self._cache[key] = np.exp(-1j * self.entries[i][2] * dt)
        return self._cache[key]

    def apply(self, i: int, w: float, state: WaveFunction, dt: Optional[float] = None) -> WaveFunction:
        state = to_basis(state, self.entries[i][0])
        h = self.plan.step_size if dt is None else dt
        return state.with_amplitudes(state.amplitudes * self.phase(i, w * h))

    def run(self, state: WaveFunction, n_steps: int, dt: Optional[float] = None) -> WaveFunction:
        """n Strang steps with adjacent outer half steps fused."""
        m = len(self.entries)
        if n_steps <= 0:
            return state
        if m == 1:
            return self.apply(0, float(n_steps), state, dt)
        state = self.apply(0, self.entries[0][1], state, dt)
        for step in range(n_steps):
            for i in range(1, m - 1):
                state = self.apply(i, self.entries[i][1], state, dt)
            w_edge = self.entries[0][1] * (2 if step < n_steps - 1 else 1)
            state = self.apply(m - 1, w_edge, state, dt)
        return state


def trotter_evolve(plan: TrotterPlan, psi: WaveFunction,
                   observer: Optional[Callable[[int, WaveFunction], None]] = None) -> WaveFunction:
    """Apply ``plan.n_steps`` Strang steps; outer half steps of adjacent steps are fused.

    ``observer(step_index, psi)`` is called after every completed step.
    """
    original = {a.label: a.basis for a in psi.axes}
    cache = PhaseCache(plan, psi)
    if observer is None:
        return to_basis(cache.run(psi, plan.n_steps), original)
    state = psi
    for step in range(plan.n_steps):
        state = cache.run(state, 1)
        observer(step, to_basis(state, original))
    return to_basis(state, original)


def trotter_segments(plan: TrotterPlan, psi: WaveFunction, segment_steps: Sequence[int]) -> List[WaveFunction]:
    """States after successive segments of the given step counts (cumulative)."""
    original = {a.label: a.basis for a in psi.axes}
    cache = PhaseCache(plan, psi)
    out = []
    state = psi
    for n in segment_steps:
        state = cache.run(state, int(n))
        out.append(to_basis(state, original))
    return out


# ---------------------------------------------------------------- dense oracle

def _fourier_matrix(axis: Axis) -> np.ndarray:
    """Unitary position->conjugate matrix in orthonormal coordinates, from its defining sum."""
    if axis.discrete:
        return np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2.0)
    g = axis.grid
    x = g.points
    k = g.conjugate_points
    return np.exp(-1j * np.outer(k, x)) / np.sqrt(g.n_points)


def dense_matrix(kernels: Sequence[DiagonalKernel], axes: Sequence[Axis]) -> np.ndarray:
    """Dense Hamiltonian in the position basis of every axis (orthonormal coordinates)."""
    axes = tuple(replace(a, basis=POSITION) for a in axes)
    dims = [a.grid.n_points for a in axes]
    dim = int(np.prod(dims))
    if dim > MAX_ORACLE_DIM:
        raise ResourceError(f"dense realization of dimension {dim} exceeds {MAX_ORACLE_DIM}")
    H = np.zeros((dim, dim), dtype=complex)
    labels = [a.label for a in axes]
    for k in kernels:
        bases = dict(zip(k.acts_on, k.basis_required))
        U = np.ones((1, 1))
        for a in axes:
            u = _fourier_matrix(a) if bases.get(a.label) == MOMENTUM else np.eye(a.grid.n_points)
            U = np.kron(U, u)
        probe = WaveFunction(tuple(replace(a, basis=bases.get(a.label, POSITION)) for a in axes),
                             np.zeros(dims, dtype=complex))
        diag = np.broadcast_to(k.broadcast_to(probe), dims).ravel()
        H += U.conj().T @ (diag[:, None] * U)
    return H


def dense_oracle_evolve(H: np.ndarray, psi: np.ndarray, t: float) -> np.ndarray:
    """exp(-i H t) psi by eigendecomposition of a dense Hermitian matrix."""
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ConfigurationError("H must be a square matrix")
    if H.shape[0] > MAX_ORACLE_DIM:
        raise ResourceError(f"oracle dimension {H.shape[0]} exceeds {MAX_ORACLE_DIM}")
    dev = np.max(np.abs(H - H.conj().T)) if H.size else 0.0
    if dev > 1e-10:
        raise ContractViolation(f"H is not Hermitian (max |H - H^dag| = {dev:.3e})")
    w, V = linalg.eigh(H)
    return V @ (np.exp(-1j * w * t) * (V.conj().T @ np.asarray(psi, dtype=complex)))


# ---------------------------------------------------------------- diagnostics and builders

def edge_leakage(psi: WaveFunction, fraction: float = 0.05) -> Dict[str, float]:
    """Probability in the outer ``fraction`` of each non-discrete axis (position basis)."""
    out = {}
    for a in psi.axes:
        if a.discrete:
            continue
        p = to_basis(psi, {a.label: POSITION}).marginal(a.label) * a.grid.spacing
        n = a.grid.n_points
        m = max(1, int(np.floor(fraction * n)))
        out[a.label] = float(p[:m].sum() + p[-m:].sum())
    return out


def gaussian_wavefunction(axes: Sequence[Axis], factors: Dict[str, np.ndarray]) -> WaveFunction:
    """Normalized product state from per-axis amplitude arrays (given in each axis' basis)."""
    amps = np.ones(1, dtype=complex)
    for a in axes:
        amps = np.multiply.outer(amps, np.asarray(factors[a.label], dtype=complex))
    amps = amps.reshape(tuple(a.grid.n_points for a in axes))
    return WaveFunction(tuple(axes), amps).normalized()


def gaussian_packet(x: np.ndarray, center: float, width: float, momentum: float = 0.0) -> np.ndarray:
    """exp(-(x-x0)^2/(4 sigma^2) + i k0 x): position standard deviation ``width``."""
    return np.exp(-((x - center) ** 2) / (4.0 * width ** 2) + 1j * momentum * x)
