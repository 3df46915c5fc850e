"""Relational dynamics of quantum clocks in weak gravitational fields.

Modules: ``numerics`` (grids, wave functions, split-step engine), ``algebra``
(graded canonical operator algebra), ``model`` (weak-field spacetime and
constraints), ``qrf`` (relational Hamiltonians and frame changes), ``events``
(measurement events and event-time distributions), ``scenario``/``cli``
(configuration documents and the command line).
"""

__version__ = "0.1.0"
