import numpy as np
import pytest
from scipy import integrate
from scipy.special import ndtr
from scipy.stats import norm

from conftest import event_state
from qrfsim.events import (EventSpec, closed_form_history, delta12, delta12_sr_approx, evolve_with_event,
                           event_time_distribution, predicted_event_times)
from qrfsim.model import ModelParams, metric_g00
from qrfsim.numerics import (MOMENTUM, POSITION, Axis, ConfigurationError, ContractViolation, DiagonalKernel,
                             Grid1D, WaveFunction, dense_matrix, dense_oracle_evolve, gaussian_packet,
                             gaussian_wavefunction, pointer_axis)
from qrfsim.qrf import build_hamiltonian

SR_PARAMS = ModelParams(masses={"1": 1.0, "2": 2.0})
NEWT_PARAMS = ModelParams(c=1.0, G=1.0, M=0.05, q_M=-40.0, masses={"1": 1.0, "2": 1.0})


# ---------------------------------------------------------------- worldline operator

def test_delta12_examples():
    k = np.linspace(-2, 2, 9)
    assert np.all(delta12("galilean", k, 0.0, None, 0.0, SR_PARAMS) == 1.0)
    equal = ModelParams(masses={"1": 1.5, "2": 1.5})
    assert np.allclose(delta12("sr", k, 0.0, None, 0.0, equal), 1.0, rtol=0, atol=1e-15)
    # |q2 - q_M| = |q_M|
    assert delta12("newtonian", 0.0, 2 * NEWT_PARAMS.q_M, None, 0.0, NEWT_PARAMS) == 1.0
    assert delta12("newtonian", 0.0, 0.0, None, 0.0, NEWT_PARAMS) == 1.0


def test_delta12_full_is_product_of_limits():
    p = ModelParams(c=1.0, G=1.0, M=0.05, q_M=-40.0, masses={"1": 1.0, "2": 2.0})
    k, q = 0.7, -25.0
    full = delta12("full", k, q, None, 0.0, p)
    assert full == pytest.approx(delta12("sr", k, q, None, 0.0, p) * delta12("newtonian", k, q, None, 0.0, p),
                                 rel=1e-15)
    g = metric_g00(q - p.q_M, p) / metric_g00(p.q_M, p)
    gam1 = np.sqrt(1 + k ** 2)
    gam2 = np.sqrt(1 + (k / 2) ** 2)
    assert full == pytest.approx(np.sqrt(g) * gam1 / gam2, rel=1e-15)


def test_delta12_sr_small_momentum_form():
    k = np.linspace(-0.1, 0.1, 11)
    exact = delta12("sr", k, 0.0, None, 0.0, SR_PARAMS)
    approx = delta12_sr_approx(k, SR_PARAMS)
    assert np.max(np.abs(exact - approx)) < 1e-4


def test_predicted_event_times():
    t = predicted_event_times("sr", [{"k": 0.4}, {"k": 0.8}], SR_PARAMS, 10.0)
    d = [np.sqrt(1 + 0.16) / np.sqrt(1 + 0.04), np.sqrt(1 + 0.64) / np.sqrt(1 + 0.16)]
    assert t == pytest.approx([10.0 / d[0], 10.0 / d[1]], rel=1e-14)


# ---------------------------------------------------------------- event specification

def _galilean_state(clock_width=0.01, n_clock=128, clock_spacing=0.005):
    q = Axis(Grid1D(64, 0.5, -16.0), "q2")
    t = Axis(Grid1D(n_clock, clock_spacing, -n_clock * clock_spacing / 2), "t2")
    return event_state(q, gaussian_packet(q.grid.points, 0.0, 2.0, 0.2), t, clock_width)


def test_event_spec_validation():
    psi = _galilean_state()
    with pytest.raises(ConfigurationError):
        EventSpec(1.0, 0.0)
    with pytest.raises(ConfigurationError):
        EventSpec(1.0, 0.02, mode="laser")
    with pytest.raises(ConfigurationError):
        EventSpec(1.0, 0.001).validate(psi)          # below the clock spacing
    with pytest.raises(ConfigurationError):
        EventSpec(1.0, 0.05).validate(psi)           # above 5% of the clock span
    EventSpec(1.0, 0.02).validate(psi)
    no_pointer = WaveFunction(psi.axes[:2], psi.amplitudes[..., 0])
    with pytest.raises(ConfigurationError):
        EventSpec(1.0, 0.02).validate(no_pointer)
    EventSpec(1.0, 0.02, mode="phase").validate(no_pointer)


def test_phase_mode_needs_interferometric_readout():
    psi = _galilean_state()
    no_pointer = WaveFunction(psi.axes[:2], psi.amplitudes[..., 0] * np.sqrt(2)).normalized()
    H = build_hamiltonian("galilean", ModelParams(), no_pointer.axes)
    ev = EventSpec(0.2, 0.02, mode="phase")
    hist = evolve_with_event(no_pointer, H, ev, [0.1, 0.3], dtau=0.005)
    with pytest.raises(ConfigurationError):
        event_time_distribution(hist)
    # a pure phase kick leaves every probability unchanged
    free = evolve_with_event(no_pointer, H, EventSpec(0.2, 0.02, kick_phase=0.0, mode="phase"), [0.1, 0.3], dtau=0.005)
    for a, b in zip(hist.snapshots, free.snapshots):
        assert np.allclose(np.abs(a.amplitudes), np.abs(b.amplitudes), atol=1e-12)


def test_unsharp_clock_warns():
    psi = _galilean_state(clock_width=0.05)
    H = build_hamiltonian("galilean", ModelParams(), psi.axes)
    with pytest.warns(UserWarning, match="unsharp"):
        evolve_with_event(psi, H, EventSpec(0.2, 0.02), [0.1], dtau=0.005)


# ---------------------------------------------------------------- galilean step

def test_galilean_step_at_tau_star():
    psi = _galilean_state()
    H = build_hamiltonian("galilean", ModelParams(), psi.axes)
    ev = EventSpec(0.3, 0.02)
    tau = np.arange(1, 121) * 0.005
    dist = event_time_distribution(evolve_with_event(psi, H, ev, tau, dtau=0.005))
    assert dist.monotone
    assert np.all(dist.occurrence[tau <= 0.3 - 4 * 0.0224] < 1e-6)
    assert np.all(dist.occurrence[tau >= 0.3 + 4 * 0.0224] > 1 - 1e-6)
    # each clock reading T has fired the fraction F((T + tau - tau*)/sigma) - F((T - tau*)/sigma)
    # of the kick; average sin^2 of the kick angle over the clock density
    def fired(tv):
        f = lambda T: norm.pdf(T, 0.0, 0.01) * np.sin(
            np.pi / 2 * (ndtr((T + tv - 0.3) / 0.02) - ndtr((T - 0.3) / 0.02))) ** 2
        return integrate.quad(f, -0.1, 0.1, epsabs=1e-13, epsrel=1e-12)[0]
    expected = np.array([fired(tv) for tv in tau])
    assert np.max(np.abs(dist.occurrence - expected)) < 1e-6


def test_zero_kick_never_fires():
    psi = _galilean_state()
    H = build_hamiltonian("galilean", ModelParams(), psi.axes)
    dist = event_time_distribution(evolve_with_event(psi, H, EventSpec(0.3, 0.02, kick_phase=0.0),
                                                     np.arange(1, 81) * 0.005, dtau=0.005))
    assert np.max(dist.occurrence) < 1e-30      # zero up to pointer-basis roundoff


def test_galilean_closed_form_and_modes_agree():
    psi = _galilean_state()
    H = build_hamiltonian("galilean", ModelParams(), psi.axes)
    ev = EventSpec(0.3, 0.02)
    tau = np.arange(1, 41) * 0.01
    a = evolve_with_event(psi, H, ev, tau, dtau=0.005, mode="branch")
    b = evolve_with_event(psi, H, ev, tau, dtau=0.005, mode="comoving")
    c = closed_form_history("galilean", psi, H, ev, tau, dtau=0.005)
    for x, y, z in zip(a.snapshots, b.snapshots, c.snapshots):
        assert np.linalg.norm(x.flat() - y.flat()) < 1e-10
        assert np.linalg.norm(x.flat() - z.flat()) < 1e-10


def test_closed_form_rejects_full_and_mismatch():
    psi = _galilean_state()
    ev = EventSpec(0.3, 0.02)
    H = build_hamiltonian("full", ModelParams(), psi.axes)
    with pytest.raises(ConfigurationError):
        closed_form_history("full", psi, H, ev, [0.1], dtau=0.005)
    Hg = build_hamiltonian("galilean", ModelParams(), psi.axes)
    with pytest.raises(ConfigurationError):
        closed_form_history("sr", psi, Hg, ev, [0.1], dtau=0.005)


def test_branch_mode_needs_single_basis_delta():
    p = ModelParams(c=1.0, G=1.0, M=0.05, q_M=-40.0, masses={"1": 1.0, "2": 2.0})
    q = Axis(Grid1D(128, 0.5, -32.0), "q2")
    t = Axis(Grid1D(128, 0.005, -0.32), "t2")
    psi = event_state(q, gaussian_packet(q.grid.points, 0.0, 2.0), t, 0.01)
    H = build_hamiltonian("full", p, psi.axes)
    with pytest.raises(ContractViolation):
        evolve_with_event(psi, H, EventSpec(0.3, 0.02), [0.1], dtau=0.005, mode="branch")
    hist = evolve_with_event(psi, H, EventSpec(0.15, 0.02), np.arange(1, 61) * 0.005, dtau=0.005)
    assert hist.diagnostics["mode"] == "comoving"
    assert hist.diagnostics["norm_error"] < 1e-10
    dist = event_time_distribution(hist)
    assert dist.monotone and dist.occurrence[-1] > 1 - 1e-6


# ---------------------------------------------------------------- brute-force oracle

def _oracle_kick(H, psi, ev):
    """kick_phase * Delta12 * delta_sigma(T2 - tau*) * sigma_x as static kernels."""
    t = psi.axis("t2").grid.points
    dens = norm.pdf(t, ev.tau_star, ev.sigma_t) * ev.kick_phase
    sx = np.array([1.0, -1.0])
    out = []
    for p in H.delta_pieces["2"]:
        tail = np.multiply.outer(dens, sx)
        vals = np.multiply.outer(p.values, tail) if p.values.ndim else float(p.values) * tail
        out.append(DiagonalKernel(p.acts_on + ("t2", "pointer"), p.basis_required + (POSITION, MOMENTUM), vals))
    return out


def _oracle_distance(regime, params, q, q_amp, mode):
    spacing = 0.03125
    t = Axis(Grid1D(64, spacing, -0.5), "t2")
    psi = gaussian_wavefunction((q, t, pointer_axis()), {
        "q2": q_amp, "t2": gaussian_packet(t.grid.points, 0.0, 0.06), "pointer": np.array([1.0, 0.0])})
    H = build_hamiltonian(regime, params, psi.axes)
    ev = EventSpec(0.5, 0.06)
    tau = [0.25, 0.4375, 0.5, 0.75]
    D = dense_matrix(list(H.terms) + _oracle_kick(H, psi, ev), psi.axes)
    # unit reference rate: the snapshot clock grid is the original one shifted by exactly tau
    hist = evolve_with_event(psi, H, ev, tau, dtau=spacing / 4, mode=mode, reference_rate=1.0, leakage_limit=None)
    worst = 0.0
    for tv, snap in zip(tau, hist.snapshots):
        exact = dense_oracle_evolve(D, psi.flat(), tv).reshape(psi.amplitudes.shape)
        exact = np.roll(exact, -int(round(tv / spacing)), axis=1)
        worst = max(worst, float(np.linalg.norm(exact.ravel() - snap.flat())))
    return worst, event_time_distribution(hist)


def test_sr_two_momenta_against_dense_oracle():
    # plane waves on a periodic grid are exact momentum eigenstates
    q = Axis(Grid1D(8, 2 * np.pi / 0.4 / 8, -np.pi / 0.4), "q2")
    x = q.grid.points
    amp = np.sqrt(0.3) * np.exp(0.4j * x) + np.sqrt(0.7) * np.exp(0.8j * x)
    dist, d = _oracle_distance("sr", SR_PARAMS, q, amp, "branch")
    assert dist < 1e-4
    assert d.monotone and d.occurrence[-1] > 1 - 1e-4


def test_newtonian_comoving_against_dense_oracle():
    q = Axis(Grid1D(8, 1.0, -34.0), "q2")
    dist, d = _oracle_distance("newtonian", NEWT_PARAMS, q, gaussian_packet(q.grid.points, -30.0, 1.0), "comoving")
    assert dist < 1e-4
    assert d.monotone


# ---------------------------------------------------------------- superposed dilations

def _sr_plateau_instance(sigma_t, weights=(0.3, 0.7)):
    # sharp momenta 0.4 and 0.8 (plane waves); peaks are 0.53 tau* apart relative to 0.1 tau*
    q = Axis(Grid1D(8, 2 * np.pi / 0.4 / 8, -np.pi / 0.4), "q2")
    x = q.grid.points
    amp = np.sqrt(weights[0]) * np.exp(0.4j * x) + np.sqrt(weights[1]) * np.exp(0.8j * x)
    t = Axis(Grid1D(512, 0.0125, -3.2), "t2")
    psi = event_state(q, amp, t, sigma_t / 2)
    H = build_hamiltonian("sr", SR_PARAMS, psi.axes)
    ev = EventSpec(10.0, sigma_t)
    tau = 8.0 + np.arange(1, 129) * 0.0125
    hist = evolve_with_event(psi, H, ev, tau, dtau=0.0125, leakage_limit=None)
    return event_time_distribution(hist)


def test_sr_plateaus_and_peaks_with_regularization_convergence():
    predicted = predicted_event_times("sr", [{"k": 0.4}, {"k": 0.8}], SR_PARAMS, 10.0)
    runs = [_sr_plateau_instance(s) for s in (0.05, 0.025)]
    for d, s in zip(runs, (0.05, 0.025)):
        assert d.monotone
        peaks = d.peaks(2, min_separation=0.3)
        tol = max(s, 0.0125)
        assert abs(peaks[0] - predicted[1]) < tol      # k = 0.8 dilates more and fires first
        assert abs(peaks[1] - predicted[0]) < tol
        mid = np.argmin(np.abs(d.tau - 0.5 * (predicted[0] + predicted[1])))
        assert abs(d.occurrence[mid] - 0.7) < 1e-3
        assert abs(d.occurrence[-1] - 1.0) < 1e-3
        assert d.occurrence[0] < 1e-3
    a, b = runs
    assert np.max(np.abs(np.array(a.peaks(2, 0.3)) - np.array(b.peaks(2, 0.3)))) < 0.0125
    mid = np.argmin(np.abs(a.tau - 0.5 * (predicted[0] + predicted[1])))
    assert abs(a.occurrence[mid] - b.occurrence[mid]) < 1e-3


def test_single_branch_classical_consistency():
    d = _sr_plateau_instance(0.05, weights=(1.0, 0.0))
    (peak,) = d.peaks(1)
    # tau_1 / tau_2* = Delta12^-1, i.e. dx0 = gamma_1 dtau_1 = gamma_2 dtau_2
    assert abs(peak / 10.0 - 1 / delta12("sr", 0.4, 0.0, None, 0.0, SR_PARAMS)) < 0.05 / 10.0


def test_distribution_columns_and_metadata():
    psi = _galilean_state()
    H = build_hamiltonian("galilean", ModelParams(), psi.axes)
    hist = evolve_with_event(psi, H, EventSpec(0.3, 0.02), np.arange(1, 11) * 0.05, dtau=0.005)
    d = event_time_distribution(hist, metadata={"label": "x"})
    cols = d.to_columns()
    assert cols.shape == (10, 2) and np.array_equal(cols[:, 0], hist.tau)
    assert d.metadata["tau_star"] == 0.3 and d.metadata["label"] == "x"
