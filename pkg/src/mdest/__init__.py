"""A posteriori error estimation for mixed-dimensional Darcy flow on non-matching grids."""
from .errors import MdestError
from .mdgeom import MdDomain, build_domain, coupling_triplet, load_domain
from .mdgrid import GridBundle, SimplicialGrid, generate_matching_bundle

__version__ = "0.1.0"

__all__ = [
    "MdestError",
    "MdDomain",
    "build_domain",
    "coupling_triplet",
    "load_domain",
    "GridBundle",
    "SimplicialGrid",
    "generate_matching_bundle",
]
