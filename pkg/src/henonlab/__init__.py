"""Numerical laboratory for i.i.d. random compositions of Henon-type
polynomial automorphisms of C^2.

The package covers the desk-scale experiment suite: escape-time filtration
and Green's functions, Lyapunov statistics, discovery and certification of
attracting minimal sets, basin probabilities, transition-operator
experiments, and noise-family bifurcation sweeps, plus a deterministic CLI.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .core import (
    HenonMap,
    Poly,
    FiltrationParams,
    Region,
    NumericOverflow,
    eval_map,
    eval_inverse,
    jacobian,
    inverse_as_plus,
    condition_a_radius,
    classify_region,
    norm,
    swap,
)
from .dist import (
    FiniteDist,
    BallNoise,
    NoiseFamily,
    SequenceSeed,
    sample_map,
    sample_sequence,
    inverse_distribution,
    family_at,
    support_sample,
    condition_a_params,
)

__all__ = [
    "__version__",
    "HenonMap",
    "Poly",
    "FiltrationParams",
    "Region",
    "NumericOverflow",
    "eval_map",
    "eval_inverse",
    "jacobian",
    "inverse_as_plus",
    "condition_a_radius",
    "classify_region",
    "norm",
    "swap",
    "FiniteDist",
    "BallNoise",
    "NoiseFamily",
    "SequenceSeed",
    "sample_map",
    "sample_sequence",
    "inverse_distribution",
    "family_at",
    "support_sample",
    "condition_a_params",
]
