"""Vortex-blob simulation of helical Euler flows on the 2D cross-section.

The package is organised around the anisotropic stream-function problem
div(K grad Psi) = omega on a disk: closed-form kernel quantities
(:mod:`helivort.kernel`), a bounded-domain elliptic backend
(:mod:`helivort.domain_solver`), regularized Biot-Savart summation
(:mod:`helivort.flow`), the experiment driver (:mod:`helivort.sim`),
moment/energy diagnostics (:mod:`helivort.diagnostics`) and the lift of the
2D scalar vorticity back to 3D helical fields
(:mod:`helivort.reconstruct3d`).
"""

from helivort.kernel import HelixParams
from helivort.domain_solver import DiskDomain, Grid, make_grid
from helivort.flow import ParticleSystem, make_backend
from helivort.sim import BlobSpec, SimConfig, init_blobs, run

__version__ = "0.1.0"

__all__ = [
    "HelixParams",
    "DiskDomain",
    "Grid",
    "make_grid",
    "ParticleSystem",
    "make_backend",
    "BlobSpec",
    "SimConfig",
    "init_blobs",
    "run",
    "__version__",
]
