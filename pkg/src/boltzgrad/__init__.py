"""Hard-sphere kinetic theory laboratory on the unit torus.

Subpackages cover the microscopic event-driven dynamics, initial-measure
samplers, bad-set geometry, ensemble observables, Boltzmann solvers,
collision-tree series machinery, and a reproducible experiment runner.
"""

__version__ = "0.1.0"

from . import badsets, observables, sampling, simulate, solver, torus, trees  # noqa: F401
