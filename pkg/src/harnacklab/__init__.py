"""Numerical laboratory for differential Harnack estimates of heat-type flows.

Submodules
----------
geometry
    Flat tori and the Neumann interval, with their discrete operators.
solver
    Positivity-preserving time integration of ``u_t = Δu + a u log u + V u``.
harnack
    Harnack quantities, proof-ingredient residuals and certification.
oracles
    Closed-form and brute-force reference solutions.
config, experiments, cli
    Configuration files, experiment runs and the acceptance suite.
"""

from .geometry import Geometry, build_interval, build_torus
from .harnack import HarnackReport, Tolerances, certify
from .solver import Problem, Trajectory, certify_A, solve

__version__ = "0.1.0"

__all__ = [
    "Geometry",
    "HarnackReport",
    "Problem",
    "Tolerances",
    "Trajectory",
    "build_interval",
    "build_torus",
    "certify",
    "certify_A",
    "solve",
]
