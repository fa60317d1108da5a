"""pslab: a numerical phase-space laboratory for Schrodinger propagators.

Subpackages by theme: ``grid`` (fields, transforms, norms), ``potentials``
(admissible symbols), ``flow`` (bicharacteristics), ``propagators`` (quantum
evolution), ``phasespace`` (coherent states, FBI, wavepacket frames),
``profiles`` (inverse-theorem algorithms), ``harness`` (experiments and
persistence), ``acceptance`` (criteria suite).
"""

from .grid import (ComplexField, GridSpec, SpacetimeTrace, inner_product, make_grid,
                   mass, mixed_norm, norm, to_frequency, to_position)
from .potentials import (PotentialSpec, custom_quadratic, free, galilei_frame,
                         harmonic, magnetic, rescale, select_T0, time_step_harmonic)

__all__ = [
    "ComplexField", "GridSpec", "SpacetimeTrace", "inner_product", "make_grid",
    "mass", "mixed_norm", "norm", "to_frequency", "to_position",
    "PotentialSpec", "custom_quadratic", "free", "galilei_frame", "harmonic",
    "magnetic", "rescale", "select_T0", "time_step_harmonic",
]

__version__ = "0.1.0"
