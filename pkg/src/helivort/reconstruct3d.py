"""Lift 2D scalar vorticity back to the 3D helical vorticity field.

The 3D vorticity is (1/h) w(R(-x3/h) (x1, x2)) xi(x) with
xi(x) = (-x2, x1, h): parallel to the helix direction everywhere and
invariant under the screw motion by construction.  The 2D field w is a
Gaussian kernel-density estimate over the particles with bandwidth equal
to the blob regularization length.
"""

from __future__ import annotations

import math

import numpy as np

import helivort.sim as _sim
from helivort._pairwise import gaussian_kde_sum
from helivort.flow import ParticleSystem
from helivort.kernel import HelixParams

__all__ = [
    "xi_field",
    "helical_map",
    "VorticityKde",
    "vorticity3d",
    "helix_curve",
]


def xi_field(points, p: HelixParams):
    """Helix direction field xi(x) = (-x2, x1, h)."""
    points = np.asarray(points, dtype=float)
    out = np.empty(points.shape)
    out[..., 0] = -points[..., 1]
    out[..., 1] = points[..., 0]
    out[..., 2] = p.h
    return out


def helical_map(theta, points, p: HelixParams):
    """Screw motion: rotate horizontally by theta, translate h*theta up.

    Forms a one-parameter group: composing maps adds the angles.
    """
    points = np.asarray(points, dtype=float)
    c, s = math.cos(theta), math.sin(theta)
    out = np.empty(points.shape)
    out[..., 0] = c * points[..., 0] - s * points[..., 1]
    out[..., 1] = s * points[..., 0] + c * points[..., 1]
    out[..., 2] = points[..., 2] + p.h * theta
    return out


class VorticityKde:
    """Gaussian kernel-density estimate of the 2D scalar vorticity."""

    def __init__(self, sys: ParticleSystem, bandwidth=None):
        self.bandwidth = sys.delta if bandwidth is None else float(bandwidth)
        self._tx = np.ascontiguousarray(sys.positions[:, 0])
        self._ty = np.ascontiguousarray(sys.positions[:, 1])
        self._w = np.ascontiguousarray(sys.weights / (2.0 * math.pi
                                                      * self.bandwidth**2))

    def __call__(self, points):
        points = np.asarray(points, dtype=float)
        flat = points.reshape(-1, 2)
        out = np.empty(flat.shape[0])
        gaussian_kde_sum(np.ascontiguousarray(flat[:, 0]),
                         np.ascontiguousarray(flat[:, 1]),
                         self._tx, self._ty, self._w,
                         0.5 / self.bandwidth**2, out)
        return out.reshape(points.shape[:-1])


def vorticity3d(samples, omega2d, p: HelixParams):
    """Evaluate the lifted vorticity at 3D sample points.

    ``omega2d`` maps (..., 2) planar points to scalars (e.g. a
    :class:`VorticityKde`).  Returns vectors parallel to xi.
    """
    samples = np.asarray(samples, dtype=float)
    theta = -samples[..., 2] / p.h
    c, s = np.cos(theta), np.sin(theta)
    back = np.stack((c * samples[..., 0] - s * samples[..., 1],
                     s * samples[..., 0] + c * samples[..., 1]), axis=-1)
    w = omega2d(back) / p.h
    return w[..., None] * xi_field(samples, p)


def helix_curve(spec, p: HelixParams, t, sigma):
    """Sampled predicted filament at rescaled time t.

    The curve through the rotated blob center z(t): sigma -> (R_sigma z(t),
    h sigma); its horizontal radius is |z(0)| for every sigma and t.
    """
    z_t = _sim.leading_order(spec, p, t)
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    c, s = np.cos(sigma), np.sin(sigma)
    return np.stack((c * z_t[0] - s * z_t[1],
                     s * z_t[0] + c * z_t[1],
                     p.h * sigma), axis=-1)
