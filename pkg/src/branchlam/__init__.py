"""branchlam: branched-laminate constructions and energy scaling laws.

Builds explicit piecewise-affine microstructures for staircase multi-well
differential inclusions, evaluates their singularly perturbed energies exactly
and by quadrature, verifies the energy scaling laws E_eps ~ eps^{p/(m+p)} with
epsilon sweeps and log-log slope fits, and provides Fourier-multiplier
spectral diagnostics.
"""

from .wells import (
    WellSet,
    HullSegment,
    LaminateClass,
    makeWellSet,
    staircase2D,
    rankOnePairs,
    laminationHull,
    classifyBoundaryDatum,
    predictedExponent,
)

__all__ = [
    "WellSet", "HullSegment", "LaminateClass", "makeWellSet", "staircase2D",
    "rankOnePairs", "laminationHull", "classifyBoundaryDatum",
    "predictedExponent",
]

__version__ = "0.1.0"
