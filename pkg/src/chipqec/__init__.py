"""Surface-code adaptation and yield analysis for defective chiplets."""

from chipqec.lattice import (
    Coord,
    DefectMap,
    DefectModel,
    Face,
    PatchLayout,
    build_patch,
    component_counts,
    sample_defects,
    sample_many,
)

__all__ = [
    "Coord",
    "DefectMap",
    "DefectModel",
    "Face",
    "PatchLayout",
    "build_patch",
    "component_counts",
    "sample_defects",
    "sample_many",
]

__version__ = "0.1.0"
