"""Moment, energy and localization diagnostics for blob runs.

All reductions are linear in the particle weights and exactly rotation
covariant.  The pairwise energy excludes the diagonal and relies on the
delta-regularized logarithm for near pairs; the bounded-domain energy is
the quadratic form of the assembled elliptic operator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from helivort import domain_solver, flow
from helivort.flow import ParticleSystem, local_energy
from helivort.kernel import lifted_norm

__all__ = [
    "DiagnosticsRecord",
    "Annulus",
    "center_of_mass",
    "inertia",
    "radial_moment",
    "energy",
    "energy_grid",
    "local_energy",
    "mass_outside",
    "max_radial_deviation",
    "rearrangement_bound",
    "localization_radius",
    "make_record",
    "theory_compare",
    "TheoryReport",
    "BlobComparison",
    "write_records_csv",
    "read_records_csv",
]


@dataclass(frozen=True)
class Annulus:
    """Points whose distance to the circle of radius r is below eta."""

    r: float
    eta: float

    def __post_init__(self):
        if self.r < 0.0 or self.eta <= 0.0:
            raise ValueError("annulus needs r >= 0 and eta > 0")

    def contains(self, points):
        points = np.asarray(points, dtype=float)
        return np.abs(np.hypot(points[..., 0], points[..., 1]) - self.r) < self.eta


def center_of_mass(sys: ParticleSystem, blob):
    """Circulation-weighted mean position of one blob."""
    sel = sys.blob_slice(blob)
    gamma = sys.weights[sel].sum()
    if gamma == 0.0:
        raise ValueError(f"blob {blob} has zero circulation")
    return sys.weights[sel] @ sys.positions[sel] / gamma


def inertia(sys: ParticleSystem, blob, *, center=None):
    """Second moment about the blob center of mass (sign follows gamma)."""
    sel = sys.blob_slice(blob)
    if center is None:
        center = center_of_mass(sys, blob)
    d = sys.positions[sel] - center
    return float(sys.weights[sel] @ (d[:, 0] ** 2 + d[:, 1] ** 2))


def radial_moment(sys: ParticleSystem, blob, k):
    """J_k = sum of w |y|^k over the blob, k >= 1."""
    if k < 1:
        raise ValueError("radial moment needs k >= 1")
    sel = sys.blob_slice(blob)
    r = np.hypot(sys.positions[sel, 0], sys.positions[sel, 1])
    return float(sys.weights[sel] @ r**k)


def _pair_energy(sys, select=None):
    # -sum_{j != l} w_j w_l G(y_j, y_l): evaluate psi at the particles and
    # subtract the analytic self term w_j H(y_j, y_j) ln(delta)
    pos = sys.positions if select is None else sys.positions[select]
    w = sys.weights if select is None else sys.weights[select]
    psi = local_energy(sys, pos, select=select)
    h_self = lifted_norm(pos, sys.params) / (2.0 * math.pi * sys.params.h)
    self_term = w * w * h_self * math.log(sys.delta)
    return -(w @ psi - self_term.sum())


def energy(sys: ParticleSystem):
    """Pairwise interaction energy of the whole system (direct mode)."""
    if sys.n_particles < 2:
        raise ValueError("pairwise energy needs at least two particles")
    return float(_pair_energy(sys))


def energy_grid(sys: ParticleSystem, system: domain_solver.EllipticSystem, *,
                tol=1e-10):
    """Bounded-domain energy via the elliptic solve, -h^2 sum(psi * omega)."""
    omega = domain_solver.deposit(sys.positions, sys.weights, system.grid)
    psi = domain_solver.solve_stream(omega, system, tol=tol)
    return float(-system.grid.spacing**2 * np.sum(psi * omega))


def mass_outside(sys: ParticleSystem, blob, center, radius):
    """Magnitude of the blob circulation carried by particles at distance
    >= radius from the center."""
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    sel = sys.blob_slice(blob)
    d = sys.positions[sel] - np.asarray(center, dtype=float)
    outside = d[:, 0] ** 2 + d[:, 1] ** 2 >= radius * radius
    return float(abs(sys.weights[sel][outside].sum()))


def max_radial_deviation(sys: ParticleSystem, blob, r0):
    """max over blob particles of ||y| - r0|."""
    sel = sys.blob_slice(blob)
    if not np.any(sel):
        raise ValueError(f"blob {blob} is empty")
    r = np.hypot(sys.positions[sel, 0], sys.positions[sel, 1])
    return float(np.max(np.abs(r - r0)))


def localization_radius(eps):
    """r_eps = sqrt(ln|ln eps| / |ln eps|); needs eps < 1/e."""
    log_eps = abs(math.log(eps))
    if log_eps <= 1.0:
        raise ValueError("localization radius needs eps < 1/e")
    return math.sqrt(math.log(log_eps) / log_eps)


def rearrangement_bound(density_cap, mass):
    """Sharp upper bound of -integral ln|x-y| f(y) dy over densities with
    0 <= f <= density_cap and total mass given.

    The maximizer is the cap times the indicator of a ball of radius
    R = sqrt(mass/(pi cap)); the bound is 2 pi cap (R^2/4 - R^2 ln(R)/2),
    valid for R <= 1 (beyond that the truncated logarithm no longer
    matches).
    """
    if density_cap <= 0.0 or mass <= 0.0:
        raise ValueError("density cap and mass must be positive")
    r = math.sqrt(mass / (math.pi * density_cap))
    if r > 1.0:
        raise ValueError(f"ball radius {r:g} exceeds 1; bound formula not valid")
    return 2.0 * math.pi * density_cap * (r * r / 4.0 - 0.5 * r * r * math.log(r))


@dataclass(frozen=True)
class DiagnosticsRecord:
    """Per-time snapshot of the tracked functionals (arrays over blobs)."""

    t: float
    b: np.ndarray
    inertia: np.ndarray
    j1: np.ndarray
    j2: np.ndarray
    e_contrib: np.ndarray
    mass_outside_r_eps: np.ndarray
    r_t: np.ndarray
    b_angle: np.ndarray
    psi_var: np.ndarray
    energy: float
    support_ok: bool

    @property
    def n_blobs(self):
        return self.b.shape[0]


def make_record(sys: ParticleSystem, t, *, r0s, eta0, support_ok=None):
    """Compute a full diagnostics record for one snapshot."""
    nb = sys.n_blobs
    r0s = np.asarray(r0s, dtype=float)
    b = np.empty((nb, 2))
    inert = np.empty(nb)
    j1 = np.empty(nb)
    j2 = np.empty(nb)
    e_contrib = np.empty(nb)
    mass_out = np.empty(nb)
    r_t = np.empty(nb)
    psi_var = np.empty(nb)
    try:
        r_eps = localization_radius(sys.eps)
    except ValueError:
        r_eps = None
    for i in range(nb):
        sel = sys.blob_slice(i)
        gamma = sys.weights[sel].sum()
        b[i] = center_of_mass(sys, i)
        inert[i] = inertia(sys, i, center=b[i])
        j1[i] = radial_moment(sys, i, 1)
        j2[i] = radial_moment(sys, i, 2)
        r_t[i] = max_radial_deviation(sys, i, r0s[i])
        mass_out[i] = (mass_outside(sys, i, b[i], r_eps)
                       if r_eps is not None else math.nan)
        psi_blob = local_energy(sys, sys.positions[sel], select=sel)
        mean_psi = sys.weights[sel] @ psi_blob
        dev = gamma * psi_blob - mean_psi
        psi_var[i] = float(sys.weights[sel] @ dev**2)
        e_contrib[i] = _pair_energy(sys, select=sel) if sel.sum() > 1 else 0.0
    total_e = energy(sys) if sys.n_particles > 1 else 0.0
    if support_ok is None:
        support_ok = bool(np.all(r_t < eta0))
    return DiagnosticsRecord(
        t=float(t), b=b, inertia=inert, j1=j1, j2=j2, e_contrib=e_contrib,
        mass_outside_r_eps=mass_out, r_t=r_t,
        b_angle=np.arctan2(b[:, 1], b[:, 0]), psi_var=psi_var,
        energy=float(total_e), support_ok=bool(support_ok))


@dataclass(frozen=True)
class BlobComparison:
    blob: int
    nu_theory: float
    nu_fitted: float
    freq_rel_err: float
    max_traj_err: float
    max_inertia: float
    inertia_ratio: float
    max_r_t: float
    max_mass_fraction: float
    psi_var_max: float
    freq_ok: bool
    mass_ok: bool


@dataclass(frozen=True)
class TheoryReport:
    blobs: list
    eps: float
    passed: bool

    def summary_lines(self):
        lines = [f"eps = {self.eps:.17g}", f"passed = {int(self.passed)}"]
        for c in self.blobs:
            p = f"blob{c.blob}_"
            lines += [
                f"{p}nu_theory = {c.nu_theory:.17g}",
                f"{p}nu_fitted = {c.nu_fitted:.17g}",
                f"{p}freq_rel_err = {c.freq_rel_err:.17g}",
                f"{p}max_traj_err = {c.max_traj_err:.17g}",
                f"{p}max_inertia = {c.max_inertia:.17g}",
                f"{p}inertia_ratio = {c.inertia_ratio:.17g}",
                f"{p}max_r_t = {c.max_r_t:.17g}",
                f"{p}max_mass_fraction = {c.max_mass_fraction:.17g}",
                f"{p}psi_var_max = {c.psi_var_max:.17g}",
                f"{p}freq_ok = {int(c.freq_ok)}",
                f"{p}mass_ok = {int(c.mass_ok)}",
            ]
        return lines

    def text(self):
        header = (f"{'blob':>4} {'nu_theory':>12} {'nu_fitted':>12} "
                  f"{'rel_err':>9} {'max|b-z|':>10} {'max I':>10} "
                  f"{'max R_t':>10} {'mass_frac':>10} {'ok':>3}")
        rows = [header]
        for c in self.blobs:
            ok = "yes" if (c.freq_ok and c.mass_ok) else "NO"
            rows.append(
                f"{c.blob:>4} {c.nu_theory:>12.6g} {c.nu_fitted:>12.6g} "
                f"{c.freq_rel_err:>9.3g} {c.max_traj_err:>10.3g} "
                f"{c.max_inertia:>10.3g} {c.max_r_t:>10.3g} "
                f"{c.max_mass_fraction:>10.3g} {ok:>3}")
        rows.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(rows)


def fit_angular_velocity(times, angles):
    """Least-squares slope of the unwrapped angle over the second half of
    the run (the rotation prediction is asymptotic, not transient)."""
    times = np.asarray(times, dtype=float)
    angles = np.unwrap(np.asarray(angles, dtype=float))
    if times.size < 2:
        return math.nan
    half = times >= 0.5 * times[-1]
    if half.sum() < 2:
        half = np.ones_like(times, dtype=bool)
    return float(np.polyfit(times[half], angles[half], 1)[0])


def theory_compare(records, specs, params, *, eps, freq_rtol=0.15,
                   mass_frac_max=0.05):
    """Compare a completed run against the leading-order predictions."""
    from helivort.sim import angular_frequency, leading_order

    records = sorted(records, key=lambda r: r.t)
    if not records:
        raise ValueError("no diagnostics records to compare")
    times = np.array([r.t for r in records])
    comparisons = []
    for i, spec in enumerate(specs):
        nu = angular_frequency(spec, params)
        b_traj = np.array([r.b[i] for r in records])
        angles = np.array([r.b_angle[i] for r in records])
        z_traj = np.array([leading_order(spec, params, t) for t in times])
        traj_err = float(np.max(np.linalg.norm(b_traj - z_traj, axis=1)))
        if len(records) >= 2 and times[-1] > 0.0:
            nu_fit = fit_angular_velocity(times, angles)
            rel_err = abs(nu_fit - nu) / abs(nu)
            freq_ok = rel_err <= freq_rtol
        else:
            nu_fit = math.nan
            rel_err = 0.0
            freq_ok = True
        inert = np.array([r.inertia[i] for r in records])
        mass = np.array([r.mass_outside_r_eps[i] for r in records])
        gamma = abs(spec.circulation)
        mass_frac = float(np.nanmax(mass) / gamma) if np.any(np.isfinite(mass)) \
            else math.nan
        mass_ok = not math.isfinite(mass_frac) or mass_frac <= mass_frac_max
        comparisons.append(BlobComparison(
            blob=i, nu_theory=nu, nu_fitted=nu_fit, freq_rel_err=rel_err,
            max_traj_err=traj_err, max_inertia=float(inert.max()),
            inertia_ratio=float(inert.max() / inert[0]) if inert[0] > 0 else math.nan,
            max_r_t=float(max(r.r_t[i] for r in records)),
            max_mass_fraction=mass_frac,
            psi_var_max=float(np.nanmax([r.psi_var[i] for r in records])),
            freq_ok=bool(freq_ok), mass_ok=bool(mass_ok)))
    passed = all(c.freq_ok and c.mass_ok for c in comparisons)
    return TheoryReport(blobs=comparisons, eps=eps, passed=passed)


# --- CSV time series ---------------------------------------------------------
# column order: t, then per blob (b_x, b_y, I, J1, J2, R_t, mass_out),
# then E, support_ok


def _csv_header(n_blobs):
    cols = ["t"]
    for i in range(n_blobs):
        cols += [f"b_x_{i}", f"b_y_{i}", f"I_{i}", f"J1_{i}", f"J2_{i}",
                 f"R_t_{i}", f"mass_out_{i}"]
    cols += ["E", "support_ok"]
    return cols


def write_records_csv(path, records):
    records = list(records)
    if not records:
        raise ValueError("nothing to write")
    nb = records[0].n_blobs
    with open(path, "w") as fh:
        fh.write(",".join(_csv_header(nb)) + "\n")
        for r in records:
            vals = [f"{r.t:.17g}"]
            for i in range(nb):
                vals += [f"{r.b[i, 0]:.17g}", f"{r.b[i, 1]:.17g}",
                         f"{r.inertia[i]:.17g}", f"{r.j1[i]:.17g}",
                         f"{r.j2[i]:.17g}", f"{r.r_t[i]:.17g}",
                         f"{r.mass_outside_r_eps[i]:.17g}"]
            vals += [f"{r.energy:.17g}", str(int(r.support_ok))]
            fh.write(",".join(vals) + "\n")


def read_records_csv(path):
    """Rebuild records from the CSV; fields not stored there (per-blob
    energy, psi variance) come back as NaN."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        nb = (len(header) - 3) // 7
        records = []
        for line in fh:
            parts = line.strip().split(",")
            if not parts or parts == [""]:
                continue
            t = float(parts[0])
            b = np.empty((nb, 2))
            inert = np.empty(nb)
            j1 = np.empty(nb)
            j2 = np.empty(nb)
            r_t = np.empty(nb)
            mass = np.empty(nb)
            for i in range(nb):
                off = 1 + 7 * i
                b[i] = (float(parts[off]), float(parts[off + 1]))
                inert[i] = float(parts[off + 2])
                j1[i] = float(parts[off + 3])
                j2[i] = float(parts[off + 4])
                r_t[i] = float(parts[off + 5])
                mass[i] = float(parts[off + 6])
            nan = np.full(nb, math.nan)
            records.append(DiagnosticsRecord(
                t=t, b=b, inertia=inert, j1=j1, j2=j2, e_contrib=nan.copy(),
                mass_outside_r_eps=mass, r_t=r_t,
                b_angle=np.arctan2(b[:, 1], b[:, 0]), psi_var=nan.copy(),
                energy=float(parts[1 + 7 * nb]),
                support_ok=bool(int(parts[2 + 7 * nb]))))
    return records
