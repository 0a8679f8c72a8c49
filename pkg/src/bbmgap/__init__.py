"""Numerical laboratory for the tail of the gap between the two rightmost
particles of branching Brownian motion.

Three independent routes to P(d12 > a):

* direct Monte-Carlo simulation of the particle system (``bbm``),
* the linearized-PDE / adjoint-moment pipeline (``kpp`` + ``gap``),
* the closed-form large-gap asymptotic (``asym``),

built on the traveling-wave machinery in ``reaction`` and ``wave``.
"""

from .reaction import OffspringLaw, Reaction, binary_law, build_reaction, eval_nonlinearity
from .fdm import Grid1D
from .wave import WaveProfile, AdjointProfile, WaveSolverConfig, solve_wave, build_adjoint
from .errors import QualityError, UpstreamArtifactError

__version__ = "0.1.0"

__all__ = [
    "OffspringLaw", "Reaction", "binary_law", "build_reaction", "eval_nonlinearity",
    "Grid1D", "WaveProfile", "AdjointProfile", "WaveSolverConfig",
    "solve_wave", "build_adjoint",
    "QualityError", "UpstreamArtifactError",
    "__version__",
]
