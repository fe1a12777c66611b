"""Topology-controlled mask generation.

Thin re-export of the compiled extension.  Images are 2D float64 numpy
arrays in [-1, 1]; masks use -1 for background and +1 for foreground.
"""

from ._topogen import (
    NumericalError,
    UsageError,
    ValidationError,
    betti_at,
    diagram,
    gen_regions,
    gen_shapes,
    load_image,
    measured_count,
    optimize,
    sample,
    save_png,
    topo_loss,
    welch_ttest,
)

__all__ = [
    "NumericalError",
    "UsageError",
    "ValidationError",
    "betti_at",
    "diagram",
    "gen_regions",
    "gen_shapes",
    "load_image",
    "measured_count",
    "optimize",
    "sample",
    "save_png",
    "topo_loss",
    "welch_ttest",
]
