"""Closed-form geometric quantities of the helical reduction.

Everything here is a pure function of a point (or pair of points) in the
plane and the pitch ``h``.  With ``|X| = sqrt(|x|^2 + h^2)``:

* ``K(x) = I - N(x)/|X|^2`` with ``N(x) = x x^T`` is the anisotropy matrix
  of the stream-function operator ``div(K grad .)``.  Its eigenvalues are
  ``1`` (eigenvector ``x_perp``) and ``h^2/|X|^2`` (eigenvector ``x``).
* ``Lambda(x) = I + N(x)/(h|X| + h^2)`` is the inverse square root of K:
  ``(Lambda^{-1})^2 = K``.
* ``T(x) = rho(|x|^2) x`` is a radial diffeomorphism of the plane whose
  Jacobian is ``DT = f Lambda`` with ``f(x) = rho(|x|^2)``.  It flattens
  the anisotropy so that the singular part of the Green's function is an
  exact logarithm: ``G(x, y) = H(x, y) ln |T(x) - T(y)|`` with the weight
  ``H(x, y) = sqrt(|X||Y|)/(2 pi h)``.

All functions broadcast over leading axes: points are arrays of shape
``(..., 2)`` and matrix-valued results have shape ``(..., 2, 2)``.
Singular kernels (`green_free`, `grad_green_free`) reject coincident
points; mollification belongs to the flow module, not here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "HelixParams",
    "perp",
    "lifted_norm",
    "k_matrix",
    "lambda_matrix",
    "lambda_inverse",
    "rho",
    "diffeo",
    "diffeo_jacobian",
    "h_weight",
    "green_free",
    "grad_green_free",
    "grad_green_free_perp",
]


@dataclass(frozen=True)
class HelixParams:
    """Pitch of the helical symmetry; every kernel quantity depends on it."""

    h: float

    def __post_init__(self):
        if not (self.h > 0.0 and np.isfinite(self.h)):
            raise ValueError(f"pitch h must be a positive finite real, got {self.h}")


def perp(v):
    """Rotate vectors by +90 degrees: (a, b) -> (-b, a)."""
    v = np.asarray(v, dtype=float)
    return np.stack((-v[..., 1], v[..., 0]), axis=-1)


def lifted_norm(x, p: HelixParams):
    """sqrt(x1^2 + x2^2 + h^2), the norm of the lifted point (x, h)."""
    x = np.asarray(x, dtype=float)
    return np.sqrt(x[..., 0] ** 2 + x[..., 1] ** 2 + p.h**2)


def _outer(x):
    return np.einsum("...i,...j->...ij", x, x)


def k_matrix(x, p: HelixParams):
    """Anisotropy matrix K(x) = I - x x^T / (|x|^2 + h^2).

    Symmetric positive definite with det K = h^2/|X|^2.
    """
    x = np.asarray(x, dtype=float)
    nx2 = lifted_norm(x, p) ** 2
    return np.eye(2) - _outer(x) / nx2[..., None, None]


def lambda_matrix(x, p: HelixParams):
    """Lambda(x) = I + x x^T / (h|X| + h^2); satisfies Lambda^{-2} = K."""
    x = np.asarray(x, dtype=float)
    d = p.h * lifted_norm(x, p) + p.h**2
    return np.eye(2) + _outer(x) / d[..., None, None]


def lambda_inverse(x, p: HelixParams):
    """Inverse of `lambda_matrix`: I - x x^T / (h|X| + |X|^2)."""
    x = np.asarray(x, dtype=float)
    nx = lifted_norm(x, p)
    d = p.h * nx + nx**2
    return np.eye(2) - _outer(x) / d[..., None, None]


def rho(s, p: HelixParams):
    """Radial stretch factor of the flattening map, rho(s) >= 1 for s >= 0.

    rho solves rho'/rho = 1/(2 (h sqrt(s + h^2) + h^2)), rho(0) = 1.  The
    closed form used here,

        rho(s) = exp((w - h)/h) * 2h/(w + h),   w = sqrt(s + h^2),

    integrates that logarithmic derivative exactly (substitute w); the test
    suite revalidates it against adaptive quadrature.
    """
    s = np.asarray(s, dtype=float)
    w = np.sqrt(s + p.h**2)
    return np.exp((w - p.h) / p.h) * (2.0 * p.h / (w + p.h))


def diffeo(x, p: HelixParams):
    """Flattening map T(x) = rho(|x|^2) x; radial, injective, T(0) = 0."""
    x = np.asarray(x, dtype=float)
    s = x[..., 0] ** 2 + x[..., 1] ** 2
    return rho(s, p)[..., None] * x


def diffeo_jacobian(x, p: HelixParams):
    """Jacobian of the flattening map, DT(x) = f(x) Lambda(x)."""
    x = np.asarray(x, dtype=float)
    s = x[..., 0] ** 2 + x[..., 1] ** 2
    return rho(s, p)[..., None, None] * lambda_matrix(x, p)


def h_weight(x, y, p: HelixParams):
    """Log-kernel weight H(x, y) = sqrt(|X||Y|) / (2 pi h); symmetric."""
    return np.sqrt(lifted_norm(x, p) * lifted_norm(y, p)) / (2.0 * np.pi * p.h)


def _t_difference(x, y, p):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    diff = diffeo(x, p) - diffeo(y, p)
    dist2 = diff[..., 0] ** 2 + diff[..., 1] ** 2
    if np.any(dist2 == 0.0):
        raise ValueError("kernel is singular at coincident points")
    return diff, dist2


def green_free(x, y, p: HelixParams):
    """Singular free-space kernel G(x, y) = H(x, y) ln |T(x) - T(y)|.

    Symmetric and rotation invariant; diverges to -inf logarithmically as
    y -> x.  Raises ValueError on coincident points.
    """
    _, dist2 = _t_difference(x, y, p)
    return h_weight(x, y, p) * 0.5 * np.log(dist2)


def grad_green_free(x, y, p: HelixParams):
    """Gradient of `green_free` in its first argument.

    grad_x G = (H/2) (x/|X|^2) ln|T(x)-T(y)|
             + H DT(x) (T(x)-T(y)) / |T(x)-T(y)|^2

    The magnitude times |x - y| stays bounded on compact sets.
    """
    x = np.asarray(x, dtype=float)
    diff, dist2 = _t_difference(x, y, p)
    hw = h_weight(x, y, p)
    nx2 = lifted_norm(x, p) ** 2
    log_part = (0.5 * hw * 0.5 * np.log(dist2) / nx2)[..., None] * x
    jac = diffeo_jacobian(x, p)
    moment = np.einsum("...ij,...j->...i", jac, diff) / dist2[..., None]
    return log_part + hw[..., None] * moment


def grad_green_free_perp(x, y, p: HelixParams):
    """Perpendicular gradient of `green_free`, i.e. the Biot-Savart summand."""
    return perp(grad_green_free(x, y, p))
