import warnings

import numpy as np
import pytest

from qrfsim.model import ModelParams, WeakFieldWarning
from qrfsim.numerics import POSITION, Axis, Grid1D, gaussian_packet, gaussian_wavefunction, pointer_axis


def centered_axis(label, n, length):
    return Axis(Grid1D(n, length / n, -length / 2), label, POSITION)


def product_state(axes, packets):
    """Normalized product state; ``packets[label]`` is (center, width, momentum) or an array."""
    factors = {}
    for a in axes:
        spec = packets[a.label]
        if isinstance(spec, tuple):
            factors[a.label] = gaussian_packet(a.grid.points, *spec)
        else:
            factors[a.label] = np.asarray(spec, dtype=complex)
    return gaussian_wavefunction(axes, factors)


def event_state(q_axis, q_amp, clock_axis, clock_width):
    axes = (q_axis, clock_axis, pointer_axis())
    return gaussian_wavefunction(axes, {
        q_axis.label: q_amp,
        clock_axis.label: gaussian_packet(clock_axis.grid.points, 0.0, clock_width),
        "pointer": np.array([1.0, 0.0]),
    })


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def flat_params():
    return ModelParams(masses={"1": 1.0, "2": 1.0})


@pytest.fixture
def grav_params():
    return ModelParams(c=1.0, G=1.0, M=0.16, q_M=-14.0, masses={"1": 1.0, "2": 1.0})


@pytest.fixture(autouse=True)
def _quiet_weak_field():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", WeakFieldWarning)
        yield
