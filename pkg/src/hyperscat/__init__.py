"""hyperscat: desk-scale scattering-phase laboratory on hyperbolic funnel ends.

Submodules mirror the pipeline: `model` (metric families, regions, cutoffs,
regularized volumes), `flow` (Hamiltonian and variational integration),
`eikonal` (generating function, outgoing phase, Kuranishi map), `transport`
(amplitudes and the factorization symbol), `epscalc` (bracket combinators and
exact operator identities), `specops` (discretized operators and functional
calculus), `traces` (heat traces, scattering phases, Weyl probes), and `cli`
(the experiment runner).
"""

from .epscalc import OperatorFamily, QBracketConfig, eps_bracket
from .errors import HyperscatError
from .functions import SmoothFunction
from .model import (CutoffProfile, LadderSpec, MetricFamily, PhasePoint,
                    RegionSpec, angular, eval_symbol, pure_hyperbolic, radial,
                    region_membership, regularized_volume)
from .specops import SpectralGrid, build_model_operator, schatten_norm

__all__ = [
    "CutoffProfile", "HyperscatError", "LadderSpec", "MetricFamily",
    "OperatorFamily", "PhasePoint", "QBracketConfig", "RegionSpec",
    "SmoothFunction", "SpectralGrid", "angular", "build_model_operator",
    "eps_bracket", "eval_symbol", "pure_hyperbolic", "radial",
    "region_membership", "regularized_volume", "schatten_norm",
]

__version__ = "0.1.0"
