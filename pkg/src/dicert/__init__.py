"""dicert: device-independent randomness certification for optical Bell tests.

Pipeline: model the two-source SPDC setup with bucket detectors (spdc, fock),
assemble the observed behaviour (behaviour), upper-bound the adversarial
guessing probability with a moment-matrix semidefinite relaxation (npa,
guessing), optimize the certified min-entropy over the setup parameters
(optimizer), and reproduce the headline studies (studies).
"""

__version__ = "1.0.0"

from .behaviour import (
    BellFunctional,
    Behaviour,
    BinningMap,
    CollinsGisinTable,
    Scenario,
    apply_binning,
    bell_value,
    binning,
    chsh_eta_behaviour,
    chsh_functional,
    to_collins_gisin,
    validate_behaviour,
)
from .guessing import (
    CertificationResult,
    GuessingProblem,
    available_solvers,
    extract_bell_inequality,
    fixed_inequality_randomness,
    register_solver,
    solve_guessing,
)
from .npa import NPARelaxation, build_monomials
from .optimizer import (
    OptimizationConfig,
    OptimizationTrace,
    ParameterBounds,
    optimize_randomness,
    sweep_eta,
)
from .spdc import Efficiency, SetupParams, assemble_behaviour

__all__ = [
    "BellFunctional", "Behaviour", "BinningMap", "CollinsGisinTable",
    "Scenario", "apply_binning", "bell_value", "binning",
    "chsh_eta_behaviour", "chsh_functional", "to_collins_gisin",
    "validate_behaviour", "CertificationResult", "GuessingProblem",
    "available_solvers", "extract_bell_inequality",
    "fixed_inequality_randomness", "register_solver", "solve_guessing",
    "NPARelaxation", "build_monomials", "OptimizationConfig",
    "OptimizationTrace", "ParameterBounds", "optimize_randomness",
    "sweep_eta", "Efficiency", "SetupParams", "assemble_behaviour",
]
