"""Experiment driver: blob initialization, RK4 advection in rescaled time,
and the leading-order helix motion used for comparison.

Initial blobs are laid out on an antipodally paired sunflower inside
B(center, eps): pair radii r_k = eps * sqrt((k - 1/2)/M) make the empirical
second moment about the center exactly eps^2/2 (the uniform-disk value) and
the center of mass exactly the blob center.  No randomness is needed; the
seed only feeds optional jitter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from helivort import diagnostics
from helivort.domain_solver import DiskDomain
from helivort.flow import ParticleSystem, make_backend, rescaled_velocity
from helivort.kernel import HelixParams, lifted_norm

__all__ = [
    "ConfigError",
    "StabilityError",
    "EscapeError",
    "BlobSpec",
    "SimConfig",
    "SimResult",
    "rotation_matrix",
    "angular_frequency",
    "leading_order",
    "interparticle_spacing",
    "sunflower_disk",
    "init_blobs",
    "step_rk4",
    "run",
    "parse_config_text",
    "render_config",
]

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


class ConfigError(ValueError):
    """Invalid simulation configuration."""


class StabilityError(RuntimeError):
    """Time step too large for the current regularization length."""

    def __init__(self, message, suggested_dt):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class EscapeError(RuntimeError):
    """A particle left the disk; confinement should prevent this."""


@dataclass(frozen=True)
class BlobSpec:
    """One concentrated vortex patch: center, radius eps, circulation."""

    center: tuple
    radius: float
    circulation: float
    particles: int = 2000
    profile: str = "uniform"

    def __post_init__(self):
        object.__setattr__(self, "center",
                           tuple(float(c) for c in np.asarray(self.center, float)))
        if len(self.center) != 2:
            raise ConfigError("blob center must be a point in the plane")
        if not (self.radius > 0.0):
            raise ConfigError("blob radius must be positive")
        if self.circulation == 0.0:
            raise ConfigError("blob circulation must be nonzero")
        if self.particles < 1:
            raise ConfigError("blob needs at least one particle")
        if self.profile != "uniform":
            raise ConfigError(f"unsupported blob profile {self.profile!r}")

    @property
    def center_radius(self):
        return math.hypot(*self.center)


def rotation_matrix(theta):
    """Counterclockwise rotation by theta."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def angular_frequency(spec: BlobSpec, params: HelixParams):
    """Leading-order rotation frequency -gamma / (4 pi h sqrt(r0^2 + h^2))."""
    r0 = spec.center_radius
    return -spec.circulation / (4.0 * math.pi * params.h
                                * math.sqrt(r0 * r0 + params.h * params.h))


def leading_order(spec: BlobSpec, params: HelixParams, t):
    """Predicted blob center at rescaled time t: rigid rotation of z0."""
    nu = angular_frequency(spec, params)
    return rotation_matrix(t * nu) @ np.asarray(spec.center, dtype=float)


def interparticle_spacing(radius, particles):
    """Mean nearest-neighbour distance of a uniform disk sample,
    2 eps / sqrt(P / pi)."""
    return 2.0 * radius / math.sqrt(particles / math.pi)


@dataclass(frozen=True)
class SimConfig:
    h: float = 1.0
    r_u: float = 2.0
    blobs: tuple = ()
    dt: float | None = None
    t_final: float = 1.0
    backend: str = "direct"
    delta: float | None = None
    grid_n: int = 129
    cadence: int = 20
    eta0: float | None = None
    seed: int = 0
    jitter: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "blobs", tuple(self.blobs))
        if not self.blobs:
            raise ConfigError("at least one blob is required")
        if self.backend not in ("direct", "grid"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.t_final < 0.0:
            raise ConfigError("t_final must be nonnegative")
        if self.cadence < 1:
            raise ConfigError("cadence must be a positive step count")
        params = HelixParams(self.h)
        dom = DiskDomain(self.r_u)
        radii = [b.center_radius for b in self.blobs]
        for i, b in enumerate(self.blobs):
            if b.center_radius + b.radius >= dom.r_u:
                raise ConfigError(
                    f"blob {i} (|center|={b.center_radius:g}, eps={b.radius:g}) "
                    f"does not fit inside the disk of radius {dom.r_u:g}")
        for i in range(len(radii)):
            for j in range(i + 1, len(radii)):
                if radii[i] == radii[j]:
                    raise ConfigError(
                        f"blobs {i} and {j} share the center radius {radii[i]:g}; "
                        "distinct radii are required")
        if self.dt is not None and not (self.dt > 0.0):
            raise ConfigError("dt must be positive")
        del params

    @property
    def params(self):
        return HelixParams(self.h)

    @property
    def domain(self):
        return DiskDomain(self.r_u)

    @property
    def eps(self):
        return max(b.radius for b in self.blobs)

    def eta0_value(self):
        """Quarter of the smallest radial separation, including to the wall."""
        if self.eta0 is not None:
            return self.eta0
        radii = [b.center_radius for b in self.blobs]
        gaps = [self.r_u - r for r in radii]
        for i in range(len(radii)):
            for j in range(i + 1, len(radii)):
                gaps.append(abs(radii[i] - radii[j]))
        return 0.25 * min(gaps)

    def delta_value(self):
        if self.delta is not None:
            return self.delta
        return min(interparticle_spacing(b.radius, b.particles) for b in self.blobs)

    def dt_value(self):
        """Explicit dt, or a conservative default: a quarter of the
        regularization-length stability budget, capped so the fastest
        blob-internal turnover is resolved by at least 40 steps."""
        if self.dt is not None:
            return self.dt
        log_eps = abs(math.log(self.eps))
        gamma_max = max(abs(b.circulation) for b in self.blobs)
        dt = 0.25 * self.delta_value() * self.eps * log_eps / gamma_max
        for b in self.blobs:
            hw = float(lifted_norm(np.asarray(b.center), self.params)) / (
                2.0 * math.pi * self.h)
            turnover = 2.0 * math.pi * b.radius**2 * log_eps / (
                hw * abs(b.circulation))
            dt = min(dt, turnover / 40.0)
        return dt


def sunflower_disk(center, radius, count):
    """Deterministic near-uniform layout in a disk, symmetrized in
    antipodal pairs so the sample mean is exactly the center and the mean
    squared radius exactly radius^2/2 (up to an O(1/count) defect when
    count is odd, whose middle point sits at the center)."""
    center = np.asarray(center, dtype=float)
    pairs = count // 2
    pts = np.empty((count, 2))
    if count % 2:
        pts[-1] = center
    if pairs:
        k = np.arange(1, pairs + 1)
        r = radius * np.sqrt((k - 0.5) / pairs)
        th = k * GOLDEN_ANGLE
        offset = np.stack((r * np.cos(th), r * np.sin(th)), axis=-1)
        pts[:pairs] = center + offset
        pts[pairs:2 * pairs] = center - offset
    return pts


def init_blobs(specs, params: HelixParams, domain: DiskDomain, *, delta=None,
               seed=0, jitter=0.0, eta0=None):
    """Build the particle system for a list of blob specs.

    Weights are circulation/particles, identical within a blob, so the
    total circulation is exact.  Blobs whose supports come within 2 eta0 of
    each other are rejected.
    """
    specs = list(specs)
    if eta0 is None:
        radii = [s.center_radius for s in specs]
        gaps = [domain.r_u - r for r in radii]
        gaps += [abs(radii[i] - radii[j]) for i in range(len(radii))
                 for j in range(i + 1, len(radii))]
        eta0 = 0.25 * min(gaps)
    for i in range(len(specs)):
        for j in range(i + 1, len(specs)):
            zi = np.asarray(specs[i].center)
            zj = np.asarray(specs[j].center)
            gap = np.linalg.norm(zi - zj) - specs[i].radius - specs[j].radius
            if gap < 2.0 * eta0:
                raise ConfigError(
                    f"blobs {i} and {j} overlap or nearly overlap "
                    f"(support gap {gap:g} < 2 eta0 = {2 * eta0:g})")

    rng = np.random.default_rng(seed)
    positions = []
    weights = []
    blob_id = []
    for i, spec in enumerate(specs):
        pts = sunflower_disk(spec.center, spec.radius, spec.particles)
        if jitter > 0.0:
            spacing = interparticle_spacing(spec.radius, spec.particles)
            pts = pts + rng.normal(scale=jitter * spacing, size=pts.shape)
        positions.append(pts)
        weights.append(np.full(spec.particles, spec.circulation / spec.particles))
        blob_id.append(np.full(spec.particles, i, dtype=np.int64))

    if delta is None:
        delta = min(interparticle_spacing(s.radius, s.particles) for s in specs)
    eps = max(s.radius for s in specs)
    return ParticleSystem(
        positions=np.concatenate(positions),
        weights=np.concatenate(weights),
        blob_id=np.concatenate(blob_id),
        eps=eps,
        delta=delta,
        params=params,
        domain=domain,
    )


def step_rk4(sys: ParticleSystem, dt, backend):
    """Classical four-stage step in rescaled time.

    Each stage evaluates the field generated by the stage configuration at
    the stage positions (the particles carry the vorticity with them).
    Guards dt against particles crossing more than half the regularization
    length per step, and aborts if any particle leaves the disk.
    """

    def vel(positions):
        return rescaled_velocity(
            backend.velocity(sys, positions, source_positions=positions),
            sys.eps)

    x0 = sys.positions
    k1 = vel(x0)
    max_speed = float(np.max(np.hypot(k1[:, 0], k1[:, 1]), initial=0.0))
    if max_speed > 0.0 and dt > 0.5 * sys.delta / max_speed:
        raise StabilityError(
            f"dt = {dt:g} exceeds the stability guard 0.5*delta/max_speed = "
            f"{0.5 * sys.delta / max_speed:g}; retry with dt <= "
            f"{0.4 * sys.delta / max_speed:g}",
            suggested_dt=0.4 * sys.delta / max_speed)
    k2 = vel(x0 + 0.5 * dt * k1)
    k3 = vel(x0 + 0.5 * dt * k2)
    k4 = vel(x0 + dt * k3)
    x1 = x0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    r = np.hypot(x1[:, 0], x1[:, 1])
    if np.any(r >= sys.domain.r_u):
        worst = int(np.argmax(r))
        raise EscapeError(
            f"particle {worst} reached radius {r[worst]:g} >= disk radius "
            f"{sys.domain.r_u:g}")
    return sys.with_positions(x1)


@dataclass
class SimResult:
    config: SimConfig
    times: list = field(default_factory=list)
    records: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    support_violation_time: float | None = None

    @property
    def final_system(self):
        return self.snapshots[-1][1] if self.snapshots else None


def run(config: SimConfig) -> SimResult:
    """Advance to the final rescaled time, emitting diagnostics per cadence.

    The support condition (every blob inside its initial annulus of
    half-width eta0) is monitored every step; the first violation time is
    recorded, not fatal.
    """
    params = config.params
    domain = config.domain
    eta0 = config.eta0_value()
    sys = init_blobs(config.blobs, params, domain, delta=config.delta_value(),
                     seed=config.seed, jitter=config.jitter, eta0=eta0)
    backend = make_backend(config.backend, grid_n=config.grid_n)
    dt = config.dt_value()
    r0s = np.array([b.center_radius for b in config.blobs])

    result = SimResult(config=config)

    def support_violated(s):
        for i in range(len(config.blobs)):
            sel = s.blob_id == i
            radial = np.abs(np.hypot(s.positions[sel, 0], s.positions[sel, 1])
                            - r0s[i])
            if np.max(radial, initial=0.0) >= eta0:
                return True
        return False

    def emit(s, t):
        record = diagnostics.make_record(
            s, t, r0s=r0s, eta0=eta0,
            support_ok=result.support_violation_time is None)
        result.times.append(t)
        result.records.append(record)
        result.snapshots.append((t, s))

    if support_violated(sys):
        result.support_violation_time = 0.0
    emit(sys, 0.0)
    if config.t_final == 0.0:
        return result

    n_steps = max(1, math.ceil(config.t_final / dt - 1e-12))
    t = 0.0
    for step in range(1, n_steps + 1):
        step_dt = min(dt, config.t_final - t)
        sys = step_rk4(sys, step_dt, backend)
        t += step_dt
        if result.support_violation_time is None and support_violated(sys):
            result.support_violation_time = t
        if step % config.cadence == 0 or step == n_steps:
            emit(sys, t)
    return result


# --- config file format ----------------------------------------------------
#
# Flat key-value text; '#' starts a comment; one [blob] section per blob.
# Top-level keys: h, r_u, dt, t_final, backend, grid_n, delta, cadence,
# eta0, seed, jitter.  Blob keys: center_x, center_y, eps, gamma, particles.

_TOP_KEYS = {
    "h": float, "r_u": float, "dt": float, "t_final": float, "backend": str,
    "grid_n": int, "delta": float, "cadence": int, "eta0": float, "seed": int,
    "jitter": float,
}
_BLOB_KEYS = {"center_x": float, "center_y": float, "eps": float,
              "gamma": float, "particles": int}


def parse_config_text(text) -> SimConfig:
    top = {}
    blobs = []
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.lower() == "[blob]":
            current = {}
            blobs.append(current)
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.lower()
        table = _TOP_KEYS if current is None else _BLOB_KEYS
        target = top if current is None else current
        if key not in table:
            where = "top level" if current is None else "blob section"
            raise ConfigError(f"line {lineno}: unknown {where} key {key!r}")
        try:
            target[key] = table[key](value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {value!r}") \
                from exc
    if not blobs:
        raise ConfigError("config declares no [blob] section")
    specs = []
    for i, b in enumerate(blobs):
        missing = {"center_x", "center_y", "eps", "gamma"} - set(b)
        if missing:
            raise ConfigError(f"blob {i} is missing keys: {sorted(missing)}")
        specs.append(BlobSpec(center=(b["center_x"], b["center_y"]),
                              radius=b["eps"], circulation=b["gamma"],
                              particles=b.get("particles", 2000)))
    kwargs = {k: v for k, v in top.items()}
    return SimConfig(blobs=tuple(specs), **kwargs)


def render_config(config: SimConfig, *, resolved=True) -> str:
    """Render a config as parseable text; resolved=True freezes the
    auto-derived dt and delta so reruns are exact."""
    lines = [
        f"h = {config.h:.17g}",
        f"r_u = {config.r_u:.17g}",
        f"t_final = {config.t_final:.17g}",
        f"backend = {config.backend}",
        f"grid_n = {config.grid_n}",
        f"cadence = {config.cadence}",
        f"seed = {config.seed}",
        f"jitter = {config.jitter:.17g}",
        f"dt = {config.dt_value():.17g}" if resolved or config.dt is not None
        else "# dt = auto",
        f"delta = {config.delta_value():.17g}" if resolved or config.delta is not None
        else "# delta = auto",
        f"eta0 = {config.eta0_value():.17g}" if resolved or config.eta0 is not None
        else "# eta0 = auto",
    ]
    for b in config.blobs:
        lines += [
            "",
            "[blob]",
            f"center_x = {b.center[0]:.17g}",
            f"center_y = {b.center[1]:.17g}",
            f"eps = {b.radius:.17g}",
            f"gamma = {b.circulation:.17g}",
            f"particles = {b.particles}",
        ]
    return "\n".join(lines) + "\n"
