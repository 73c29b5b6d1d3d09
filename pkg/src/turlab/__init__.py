"""turlab: energy-temperature and time-energy uncertainty relations, computed and checked.

Submodules
----------
ensembles
    Exactly solvable canonical models and energy samplers.
inference
    Maximum-likelihood temperature estimation, Fisher information, Cramer-Rao studies.
fluctuation
    Macrostate fluctuation theory and an isolated energy-exchange simulator.
clock
    Clock kinematics, stochastic clock phases and the time-energy chain.
cli
    Command-line experiment runner.
"""

__version__ = "0.1.0"

from .ensembles import (  # noqa: E402
    DivergenceError,
    DomainError,
    EnsembleModel,
    HarmonicOscillators,
    IdealGas,
    IsingChain,
    TwoLevel,
    Units,
    make_model,
    sample_energies,
)
from ._kernels import backend  # noqa: E402

__all__ = [
    "DivergenceError",
    "DomainError",
    "EnsembleModel",
    "HarmonicOscillators",
    "IdealGas",
    "IsingChain",
    "TwoLevel",
    "Units",
    "backend",
    "make_model",
    "sample_energies",
    "__version__",
]
