"""Velocity evaluation for the particle system.

The direct backend sums the regularized free-space Biot-Savart kernel over
all particles: the squared flattened distance |T(x)-T(y)|^2 is replaced by
|T(x)-T(y)|^2 + delta^2 in both the logarithm and the moment term, which
keeps the kernel's exact rotation equivariance and removes the
self-interaction singularity.  The grid backend goes through the bounded
-domain elliptic solve and therefore includes the boundary-induced part of
the velocity that the free-space sum deliberately omits (it is suppressed
by the 1/|ln eps| rescaling).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from helivort import domain_solver
from helivort._pairwise import log_and_moment_sums
from helivort.domain_solver import DiskDomain
from helivort.kernel import HelixParams, diffeo, diffeo_jacobian, lifted_norm, perp

__all__ = [
    "ParticleSystem",
    "VelocityParts",
    "DirectBackend",
    "GridBackend",
    "make_backend",
    "velocity_direct",
    "velocity_and_local_energy",
    "velocity_split",
    "exterior_field",
    "rescaled_velocity",
    "local_energy",
]


@dataclass(frozen=True)
class ParticleSystem:
    """Regularized vortex blobs as weighted particles.

    Weights are circulations and never change; advection only moves
    positions, so per-blob circulation is conserved exactly.
    """

    positions: np.ndarray
    weights: np.ndarray
    blob_id: np.ndarray
    eps: float
    delta: float
    params: HelixParams
    domain: DiskDomain

    def __post_init__(self):
        object.__setattr__(self, "positions", np.asarray(self.positions, dtype=float))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "blob_id", np.asarray(self.blob_id, dtype=np.int64))
        n = self.positions.shape[0]
        if self.positions.shape != (n, 2):
            raise ValueError("positions must have shape (n, 2)")
        if self.weights.shape != (n,) or self.blob_id.shape != (n,):
            raise ValueError("weights/blob_id length mismatch")
        if not (self.delta > 0.0):
            raise ValueError("regularization length delta must be positive")
        if not (0.0 < self.eps < 1.0):
            raise ValueError("concentration scale eps must lie in (0, 1)")
        if not np.all(self.domain.contains(self.positions)):
            raise ValueError("all particles must start inside the disk")

    @property
    def n_particles(self):
        return self.positions.shape[0]

    @property
    def n_blobs(self):
        return int(self.blob_id.max()) + 1 if self.n_particles else 0

    def blob_slice(self, i):
        return self.blob_id == i

    def blob_circulation(self, i):
        return float(self.weights[self.blob_id == i].sum())

    def with_positions(self, positions):
        return replace(self, positions=np.asarray(positions, dtype=float))


def _source_arrays(sys: ParticleSystem, select=None, source_positions=None):
    pos = sys.positions if source_positions is None \
        else np.asarray(source_positions, dtype=float)
    w = sys.weights
    if select is not None:
        pos = pos[select]
        w = w[select]
    t = diffeo(pos, sys.params)
    ws = w * np.sqrt(lifted_norm(pos, sys.params))
    return np.ascontiguousarray(t[:, 0]), np.ascontiguousarray(t[:, 1]), ws


def _log_and_moments(sys: ParticleSystem, points, delta, select=None,
                     source_positions=None):
    points = np.atleast_2d(np.asarray(points, dtype=float))
    tx, ty, ws = _source_arrays(sys, select, source_positions)
    q = diffeo(points, sys.params)
    m = points.shape[0]
    out_log = np.empty(m)
    out_m1 = np.empty(m)
    out_m2 = np.empty(m)
    log_and_moment_sums(np.ascontiguousarray(q[:, 0]), np.ascontiguousarray(q[:, 1]),
                        tx, ty, ws, delta * delta, out_log, out_m1, out_m2)
    return points, out_log, np.stack((out_m1, out_m2), axis=-1)


def _assemble_velocity(sys, points, log_sums, moments, split=False):
    p = sys.params
    sqx = np.sqrt(lifted_norm(points, p))
    coeff = sqx / (2.0 * np.pi * p.h)
    psi = coeff * log_sums
    jac = diffeo_jacobian(points, p)
    v_k = perp(np.einsum("...ij,...j->...i", jac, moments)) * coeff[..., None]
    nx2 = lifted_norm(points, p) ** 2
    v_l = perp(points) / (2.0 * nx2[..., None]) * psi[..., None]
    if split:
        return v_k, v_l, psi
    return v_k + v_l, psi


def velocity_direct(sys: ParticleSystem, eval_points, *, delta=None,
                    source_positions=None):
    """Free-space regularized Biot-Savart velocity at the evaluation points.

    ``source_positions`` substitutes displaced particle positions (same
    weights), which time integrators need at intermediate stages.
    """
    delta = sys.delta if delta is None else float(delta)
    points, log_sums, moments = _log_and_moments(
        sys, eval_points, delta, source_positions=source_positions)
    v, _ = _assemble_velocity(sys, points, log_sums, moments)
    return v


def velocity_and_local_energy(sys: ParticleSystem, eval_points, *, delta=None):
    """Velocity and the local energy psi in a single pairwise pass."""
    delta = sys.delta if delta is None else float(delta)
    points, log_sums, moments = _log_and_moments(sys, eval_points, delta)
    return _assemble_velocity(sys, points, log_sums, moments)


def local_energy(sys: ParticleSystem, eval_points, *, delta=None, select=None):
    """psi(x) = sum_j w_j G(x, y_j) with the delta-regularized logarithm."""
    delta = sys.delta if delta is None else float(delta)
    points, log_sums, _ = _log_and_moments(sys, eval_points, delta, select=select)
    p = sys.params
    return np.sqrt(lifted_norm(points, p)) / (2.0 * np.pi * p.h) * log_sums


@dataclass(frozen=True)
class VelocityParts:
    """Three-way split of the velocity; v_r is only available with the
    grid backend, otherwise zero with ``v_r_available`` False."""

    v_k: np.ndarray
    v_l: np.ndarray
    v_r: np.ndarray
    v_r_available: bool

    def total(self):
        return self.v_k + self.v_l + self.v_r


def velocity_split(sys: ParticleSystem, eval_points, psi_values, *, backend=None):
    """Split the velocity into the spin term v_K, the log term v_L and the
    bounded remainder v_R.

    ``psi_values`` must be the local energy at the same points (as returned
    by :func:`local_energy`); v_L = x_perp/(2|X|^2) psi(x) exactly.
    """
    points = np.atleast_2d(np.asarray(eval_points, dtype=float))
    psi_values = np.asarray(psi_values, dtype=float)
    if psi_values.shape[0] != points.shape[0]:
        raise ValueError("psi_values length must match eval_points")
    _, _, moments = _log_and_moments(sys, points, sys.delta)
    p = sys.params
    coeff = np.sqrt(lifted_norm(points, p)) / (2.0 * np.pi * p.h)
    jac = diffeo_jacobian(points, p)
    v_k = perp(np.einsum("...ij,...j->...i", jac, moments)) * coeff[..., None]
    nx2 = lifted_norm(points, p) ** 2
    v_l = perp(points) / (2.0 * nx2[..., None]) * psi_values[..., None]
    if backend is not None and isinstance(backend, GridBackend):
        v_r = backend.velocity(sys, points) - v_k - v_l
        return VelocityParts(v_k, v_l, v_r, True)
    return VelocityParts(v_k, v_l, np.zeros_like(v_k), False)


def exterior_field(sys: ParticleSystem, blob, eval_points):
    """Velocity induced by every particle outside the given blob."""
    if blob < 0 or blob >= sys.n_blobs:
        raise ValueError(f"unknown blob index {blob}")
    select = sys.blob_id != blob
    if not np.any(select):
        return np.zeros((np.atleast_2d(eval_points).shape[0], 2))
    points, log_sums, moments = _log_and_moments(sys, eval_points, sys.delta,
                                                 select=select)
    v, _ = _assemble_velocity(sys, points, log_sums, moments)
    return v


def rescaled_velocity(v, eps):
    """Divide velocities by |ln eps|, the slow-time speedup factor."""
    if not (0.0 < eps < 1.0):
        raise ValueError("eps must lie in (0, 1) so that |ln eps| > 0")
    return np.asarray(v, dtype=float) / abs(np.log(eps))


class DirectBackend:
    """O(N*M) free-space summation; the default."""

    name = "direct"

    def velocity(self, sys: ParticleSystem, points, source_positions=None):
        return velocity_direct(sys, points, source_positions=source_positions)


class GridBackend:
    """Bounded-domain velocity: deposit, elliptic solve, curl interpolation.

    The assembled operator is cached per (grid size, pitch, radius).
    """

    name = "grid"

    def __init__(self, grid_n=129, *, tol=1e-10):
        self.grid_n = int(grid_n)
        self.tol = tol
        self._system = None
        self._key = None

    def system_for(self, sys: ParticleSystem):
        key = (self.grid_n, sys.params.h, sys.domain.r_u)
        if self._key != key:
            grid = domain_solver.make_grid(self.grid_n, sys.domain)
            self._system = domain_solver.assemble_operator(grid, sys.params, sys.domain)
            self._key = key
        return self._system

    def stream_function(self, sys: ParticleSystem, source_positions=None):
        system = self.system_for(sys)
        pos = sys.positions if source_positions is None else source_positions
        omega = domain_solver.deposit(pos, sys.weights, system.grid)
        return domain_solver.solve_stream(omega, system, tol=self.tol), system

    def velocity(self, sys: ParticleSystem, points, source_positions=None):
        psi, system = self.stream_function(sys, source_positions)
        return domain_solver.curl_interp(psi, system.grid, np.atleast_2d(points))


def make_backend(selector, *, grid_n=129):
    """Backend factory; selector is 'direct' or 'grid'."""
    if selector == "direct":
        return DirectBackend()
    if selector == "grid":
        return GridBackend(grid_n=grid_n)
    raise ValueError(f"unknown velocity backend {selector!r}")
