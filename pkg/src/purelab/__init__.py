"""Operational probabilistic theories at desk scale.

Coordinate-level states, effects, tests and circuits for three concrete
models (classical, complex quantum, real quantum), together with the
structural toolbox built on top of them: operational norms and
discrimination, purification and dilation, the states-transformations
correspondence, teleportation and twirling protocols, error correction,
and a battery of structural axiom checks.
"""

from purelab.theories import (
    SystemLabel,
    StateVec,
    EffectVec,
    LinearMap,
    TheoryModel,
    classical_model,
    quantum_model,
    real_quantum_model,
    get_model,
    check_channel,
    PurificationUnsupported,
    UnsupportedOperation,
)
from purelab.cones import Cone, LpProblem, lp_solve, cone_contains, dual_cone_contains

__all__ = [
    "SystemLabel",
    "StateVec",
    "EffectVec",
    "LinearMap",
    "TheoryModel",
    "classical_model",
    "quantum_model",
    "real_quantum_model",
    "get_model",
    "check_channel",
    "PurificationUnsupported",
    "UnsupportedOperation",
    "Cone",
    "LpProblem",
    "lp_solve",
    "cone_contains",
    "dual_cone_contains",
]

__version__ = "0.1.0"
