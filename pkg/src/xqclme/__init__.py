"""Quasicontinuum reduction of X-braced truss lattices with local maximum-entropy
interpolation, Heaviside enrichment and locality optimisation."""
__version__ = "0.1.0"

from .errors import (AssemblyError, ConditioningError, ConfigError, DegenerateConfigurationError,
                     DerivativeUnavailableError, EnrichmentDegeneracyError, InvalidGeometryError,
                     LambdaNonConvergenceError, NonConvergenceError, StaleStateError,
                     UndefinedMetricError, XqcError)
from .geometry import Circle, Segment, Square, signed_distance
from .lattice import (BoundaryConditions, LatticeModel, MaterialRule, affine_bcs, assemble,
                      benchmark_bcs, build_lattice, solve_full)
from .lme import LmeTable, LocalityField, RepatomGrid, evaluate, shape_functions
from .enrichment import EnrichedBasis, gram_schmidt_orthonormalize, heaviside_values
from .qc import InterpolationMatrix, QcProblem, displacement_errors, solve_reduced
from .locality import (GammaField, energy_gradient_wrt_beta, energy_gradient_wrt_gamma,
                       optimize_nonuniform, optimize_uniform, pattern_gamma)
from .config import RunConfig

__all__ = [
    "__version__",
    "XqcError", "InvalidGeometryError", "DegenerateConfigurationError", "NonConvergenceError",
    "LambdaNonConvergenceError", "DerivativeUnavailableError", "EnrichmentDegeneracyError",
    "AssemblyError", "ConditioningError", "StaleStateError", "UndefinedMetricError", "ConfigError",
    "Circle", "Square", "Segment", "signed_distance",
    "LatticeModel", "MaterialRule", "BoundaryConditions", "build_lattice", "assemble",
    "benchmark_bcs", "affine_bcs", "solve_full",
    "RepatomGrid", "LocalityField", "LmeTable", "evaluate", "shape_functions",
    "EnrichedBasis", "gram_schmidt_orthonormalize", "heaviside_values",
    "InterpolationMatrix", "QcProblem", "solve_reduced", "displacement_errors",
    "GammaField", "pattern_gamma", "energy_gradient_wrt_gamma", "energy_gradient_wrt_beta",
    "optimize_uniform", "optimize_nonuniform",
    "RunConfig",
]
