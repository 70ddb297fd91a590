"""Command-line front door.

Subcommands: simulate, kernel-check, solver-check, compare-theory,
reconstruct3d.  Exit codes: 0 success, 1 check failure, 2 usage error,
3 numerical abort.  Every run is deterministic given config, seed and
thread count; numeric output is full-precision decimal.
"""

from __future__ import annotations

import argparse
import datetime
import math
import os
import sys as _sys
import time

import numpy as np

import helivort
from helivort import diagnostics, domain_solver, reconstruct3d
from helivort.domain_solver import DiskDomain, SolverError
from helivort.flow import ParticleSystem
from helivort.kernel import (HelixParams, diffeo, diffeo_jacobian, grad_green_free,
                             green_free, k_matrix, lambda_inverse, lifted_norm)
from helivort.sim import (ConfigError, EscapeError, StabilityError, parse_config_text,
                          render_config, run)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3


def _set_threads(args):
    threads = getattr(args, "threads", None)
    if threads is None:
        env = os.environ.get("HELIVORT_THREADS")
        threads = int(env) if env else None
    if threads is not None and threads >= 1:
        import numba

        numba.set_num_threads(threads)
        return threads
    return 0


# --- kernel checks -----------------------------------------------------------


def kernel_property_checks(params=None, *, n_samples=10000, seed=0, scale=2.0,
                           tau=None, tau_jacobian=None):
    """Randomized property suite for the kernel quantities.

    ``tau``/``tau_jacobian`` exist so tests can inject inconsistent maps
    and verify the finite-difference cross-check actually bites.
    Returns a list of (name, passed, worst_metric, tolerance) tuples.
    """
    params = params or HelixParams(1.0)
    tau = tau or (lambda x: diffeo(x, params))
    tau_jacobian = tau_jacobian or (lambda x: diffeo_jacobian(x, params))
    rng = np.random.default_rng(seed)
    x = rng.uniform(-scale, scale, size=(n_samples, 2))
    y = rng.uniform(-scale, scale, size=(n_samples, 2))
    results = []

    eigs = np.sort(np.linalg.eigvalsh(k_matrix(x, params)), axis=-1)
    expected = params.h**2 / lifted_norm(x, params) ** 2
    worst = max(np.abs(eigs[:, 1] - 1.0).max(), np.abs(eigs[:, 0] - expected).max())
    results.append(("k-eigenvalues", worst <= 1e-12, worst, 1e-12))

    li = lambda_inverse(x, params)
    worst = np.abs(li @ li - k_matrix(x, params)).max()
    results.append(("lambda-inverse-squared", worst <= 1e-12, worst, 1e-12))

    step = 1e-5
    e1 = np.array([step, 0.0])
    e2 = np.array([0.0, step])
    fd = np.stack(((tau(x + e1) - tau(x - e1)) / (2 * step),
                   (tau(x + e2) - tau(x - e2)) / (2 * step)), axis=-1)
    jac = tau_jacobian(x)
    scale_ref = np.maximum(np.abs(jac), 1e-3)
    worst = (np.abs(jac - fd) / scale_ref).max()
    results.append(("flattening-jacobian-fd", worst <= 1e-6, worst, 1e-6))

    keep = np.linalg.norm(x - y, axis=-1) > 1e-8
    gx = green_free(x[keep], y[keep], params)
    worst = np.abs(gx - green_free(y[keep], x[keep], params)).max()
    results.append(("green-symmetry", worst <= 1e-12, worst, 1e-12))

    theta = 0.7853
    c, s = math.cos(theta), math.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    worst = np.abs(green_free(x[keep] @ rot.T, y[keep] @ rot.T, params)
                   - gx).max()
    results.append(("green-rotation-invariance", worst <= 1e-10, worst, 1e-10))

    scaled = (np.linalg.norm(grad_green_free(x[keep], y[keep], params), axis=-1)
              * np.linalg.norm(x[keep] - y[keep], axis=-1))
    worst = scaled.max()
    results.append(("grad-green-scaled-bound", worst <= 5.0, worst, 5.0))
    return results


def cmd_kernel_check(args):
    _set_threads(args)
    params = HelixParams(args.h)
    results = kernel_property_checks(params, n_samples=args.samples, seed=args.seed)
    width = max(len(name) for name, *_ in results)
    ok_all = True
    for name, ok, worst, tol in results:
        ok_all &= ok
        status = "PASS" if ok else "FAIL"
        print(f"{name:<{width}}  {status}  worst={worst:.3e}  tol={tol:.0e}")
    return EXIT_OK if ok_all else EXIT_CHECK_FAILED


# --- solver checks -----------------------------------------------------------


def manufactured_convergence(levels, params, dom, *, tol=1e-10):
    """L2 errors of the manufactured solution (R^2 - |x|^2)^2 per level."""
    r2 = dom.r_u**2

    def psi_exact(pts):
        pts = np.asarray(pts, dtype=float)
        q = r2 - (pts[..., 0] ** 2 + pts[..., 1] ** 2)
        return q * q

    errors = []
    for n in levels:
        grid = domain_solver.make_grid(n, dom)
        system = domain_solver.assemble_operator(grid, params, dom)
        gx, gy = grid.node_xy()
        nodes = np.stack((gx, gy), axis=-1)
        interior = grid.mask == domain_solver.MASK_INTERIOR
        omega = np.zeros((n, n))
        omega[interior] = domain_solver.div_k_grad(psi_exact, nodes[interior], params)
        psi = domain_solver.solve_stream(omega, system, tol=tol)
        err = psi[interior] - psi_exact(nodes[interior])
        errors.append(float(np.sqrt(grid.spacing**2 * np.sum(err**2))))
    return errors


def operator_randomized_checks(n, params, dom, *, seed=0, n_vectors=100):
    grid = domain_solver.make_grid(n, dom)
    system = domain_solver.assemble_operator(grid, params, dom)
    rng = np.random.default_rng(seed)
    m = system.a_ii.shape[0]
    sym_worst = 0.0
    pd_min = np.inf
    for _ in range(n_vectors):
        u = rng.normal(size=m)
        v = rng.normal(size=m)
        au = system.a_ii @ u
        sym_worst = max(sym_worst,
                        abs(au @ v - u @ (system.a_ii @ v))
                        / max(1.0, abs(au @ v)))
        pd_min = min(pd_min, (u @ au) / (u @ u))
    return sym_worst, pd_min


def cmd_solver_check(args):
    _set_threads(args)
    try:
        levels = [int(part) for part in args.levels.split(",")]
    except ValueError:
        print(f"bad --levels value {args.levels!r}", file=_sys.stderr)
        return EXIT_USAGE
    if len(levels) < 2 or any(n < 17 for n in levels):
        print("need at least two grid levels of 17+ nodes", file=_sys.stderr)
        return EXIT_USAGE
    params = HelixParams(args.h)
    dom = DiskDomain(args.r_u)
    try:
        errors = manufactured_convergence(levels, params, dom)
    except SolverError as exc:
        print(f"solver failure: {exc}", file=_sys.stderr)
        return EXIT_NUMERICAL
    ok = True
    for (n0, e0), (n1, e1) in zip(zip(levels, errors), zip(levels[1:], errors[1:])):
        order = math.log(e0 / e1) / math.log((n1 - 1) / (n0 - 1))
        good = order >= 1.9
        ok &= good
        print(f"n={n0:>4} -> n={n1:>4}: L2 {e0:.3e} -> {e1:.3e}, "
              f"order {order:.3f} {'PASS' if good else 'FAIL'}")
    sym, pd = operator_randomized_checks(levels[0], params, dom, seed=args.seed)
    sym_ok = sym <= 1e-12
    pd_ok = pd > 0.0
    ok &= sym_ok and pd_ok
    print(f"operator symmetry   {'PASS' if sym_ok else 'FAIL'}  worst={sym:.3e}")
    print(f"positive definite   {'PASS' if pd_ok else 'FAIL'}  min rayleigh={pd:.3e}")
    if args.dump_fields:
        os.makedirs(args.dump_fields, exist_ok=True)
        n = levels[-1]
        grid = domain_solver.make_grid(n, dom)
        system = domain_solver.assemble_operator(grid, params, dom)
        gx, gy = grid.node_xy()
        nodes = np.stack((gx, gy), axis=-1)
        interior = grid.mask == domain_solver.MASK_INTERIOR
        omega = np.zeros((n, n))
        r2 = dom.r_u**2

        def psi_exact(pts):
            pts = np.asarray(pts, dtype=float)
            q = r2 - (pts[..., 0] ** 2 + pts[..., 1] ** 2)
            return q * q

        omega[interior] = domain_solver.div_k_grad(psi_exact, nodes[interior], params)
        psi = domain_solver.solve_stream(omega, system)
        domain_solver.field_to_csv(os.path.join(args.dump_fields, "psi.csv"),
                                   psi, grid)
        domain_solver.field_to_csv(os.path.join(args.dump_fields, "omega.csv"),
                                   omega, grid)
        print(f"fields written to {args.dump_fields}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


# --- simulate ----------------------------------------------------------------


def _write_manifest(path, entries):
    with open(path, "w") as fh:
        for key, value in entries:
            fh.write(f"{key} = {value}\n")


def cmd_simulate(args):
    threads = _set_threads(args)
    if not os.path.exists(args.config):
        print(f"config file not found: {args.config}", file=_sys.stderr)
        return EXIT_USAGE
    with open(args.config) as fh:
        text = fh.read()
    config = parse_config_text(text)

    overrides = {}
    if args.eps is not None:
        from dataclasses import replace as _replace

        overrides["blobs"] = tuple(_replace(b, radius=args.eps) for b in config.blobs)
    if args.dt is not None:
        overrides["dt"] = args.dt
    if args.backend is not None:
        overrides["backend"] = args.backend
    if args.grid_n is not None:
        overrides["grid_n"] = args.grid_n
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        from dataclasses import replace as _replace

        config = _replace(config, **overrides)

    out_dir = args.out
    if out_dir is None:
        stamp = datetime.datetime.now().strftime("%Y%m%d-%H%M%S")
        out_dir = os.path.join("runs", f"{stamp}-{os.getpid()}")
    if os.path.exists(os.path.join(out_dir, "manifest.txt")):
        print(f"refusing to overwrite existing run in {out_dir}; "
              "pick a fresh --out directory", file=_sys.stderr)
        return EXIT_USAGE
    os.makedirs(out_dir, exist_ok=True)
    particles_dir = os.path.join(out_dir, "particles")
    os.makedirs(particles_dir, exist_ok=True)

    diag_path = os.path.join(out_dir, "diagnostics.csv")
    config_path = os.path.join(out_dir, "config.txt")
    manifest_path = os.path.join(out_dir, "manifest.txt")
    with open(config_path, "w") as fh:
        fh.write(render_config(config))
    _write_manifest(manifest_path, [
        ("version", helivort.__version__),
        ("created_utc", datetime.datetime.now(datetime.timezone.utc).isoformat()),
        ("config_file", os.path.abspath(args.config)),
        ("config_snapshot", os.path.abspath(config_path)),
        ("seed", config.seed),
        ("threads", threads),
        ("backend", config.backend),
        ("eps", f"{config.eps:.17g}"),
        ("dt", f"{config.dt_value():.17g}"),
        ("delta", f"{config.delta_value():.17g}"),
        ("diagnostics_csv", os.path.abspath(diag_path)),
        ("particles_dir", os.path.abspath(particles_dir)),
    ])

    t_start = time.perf_counter()
    result = run(config)
    wall = time.perf_counter() - t_start

    diagnostics.write_records_csv(diag_path, result.records)
    with open(os.path.join(particles_dir, "index.csv"), "w") as fh:
        fh.write("snapshot,t,path\n")
        for i, (t, snap_sys) in enumerate(result.snapshots):
            name = f"snap_{i:04d}.csv"
            fh.write(f"{i},{t:.17g},{name}\n")
            with open(os.path.join(particles_dir, name), "w") as pf:
                pf.write("x1,x2,weight,blob\n")
                for pos, w, bid in zip(snap_sys.positions, snap_sys.weights,
                                       snap_sys.blob_id):
                    pf.write(f"{pos[0]:.17g},{pos[1]:.17g},{w:.17g},{bid}\n")

    if args.dump_fields and config.backend == "grid":
        from helivort.flow import GridBackend

        backend = GridBackend(grid_n=config.grid_n)
        psi, system = backend.stream_function(result.snapshots[-1][1])
        domain_solver.field_to_csv(os.path.join(out_dir, "psi_final.csv"),
                                   psi, system.grid)

    with open(manifest_path, "a") as fh:
        fh.write(f"wall_seconds = {wall:.6f}\n")
        fh.write(f"steps_recorded = {len(result.records)}\n")
        if result.support_violation_time is not None:
            fh.write(f"support_violation_time = "
                     f"{result.support_violation_time:.17g}\n")
    print(f"run complete: {len(result.records)} records in {out_dir} "
          f"({wall:.1f}s)")
    return EXIT_OK


# --- compare-theory ----------------------------------------------------------


def cmd_compare_theory(args):
    _set_threads(args)
    diag_path = os.path.join(args.run, "diagnostics.csv")
    config_path = os.path.join(args.run, "config.txt")
    if not (os.path.exists(diag_path) and os.path.exists(config_path)):
        print(f"{args.run} does not look like a run directory "
              "(need diagnostics.csv and config.txt)", file=_sys.stderr)
        return EXIT_USAGE
    with open(config_path) as fh:
        config = parse_config_text(fh.read())
    records = diagnostics.read_records_csv(diag_path)
    if not records:
        print("diagnostics.csv holds no records", file=_sys.stderr)
        return EXIT_USAGE
    report = diagnostics.theory_compare(
        records, config.blobs, config.params, eps=config.eps,
        freq_rtol=args.freq_rtol, mass_frac_max=args.mass_frac_max)
    print(report.text())
    summary_path = os.path.join(args.run, "theory_summary.txt")
    with open(summary_path, "w") as fh:
        fh.write("\n".join(report.summary_lines()) + "\n")
    print(f"summary written to {summary_path}")
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


# --- reconstruct3d -----------------------------------------------------------


def _load_snapshot(run_dir, t_request):
    index_path = os.path.join(run_dir, "particles", "index.csv")
    if not os.path.exists(index_path):
        raise FileNotFoundError(f"{run_dir} has no particle snapshots")
    entries = []
    with open(index_path) as fh:
        fh.readline()
        for line in fh:
            snap, t, name = line.strip().split(",")
            entries.append((float(t), name))
    times = np.array([t for t, _ in entries])
    best = int(np.argmin(np.abs(times - t_request)))
    if abs(times[best] - t_request) > 1e-9:
        available = ", ".join(f"{t:g}" for t in times)
        raise KeyError(f"time {t_request:g} not in run; available: {available}")
    path = os.path.join(run_dir, "particles", entries[best][1])
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    data = np.atleast_2d(data)
    return times[best], data[:, :2], data[:, 2], data[:, 3].astype(np.int64)


def cmd_reconstruct3d(args):
    _set_threads(args)
    config_path = os.path.join(args.run, "config.txt")
    if not os.path.exists(config_path):
        print(f"{args.run} does not look like a run directory", file=_sys.stderr)
        return EXIT_USAGE
    with open(config_path) as fh:
        config = parse_config_text(fh.read())
    try:
        t_snap, positions, weights, blob_id = _load_snapshot(args.run, args.time)
    except (FileNotFoundError, KeyError) as exc:
        print(str(exc), file=_sys.stderr)
        return EXIT_USAGE
    sys_snap = ParticleSystem(positions=positions, weights=weights,
                              blob_id=blob_id, eps=config.eps,
                              delta=config.delta_value(), params=config.params,
                              domain=config.domain)
    params = config.params
    kde = reconstruct3d.VorticityKde(sys_snap)

    out_dir = args.out or os.path.join(args.run, "reconstruct3d")
    os.makedirs(out_dir, exist_ok=True)

    # point cloud on a cylindrical box over one pitch period
    extent = max(b.center_radius + 6 * b.radius for b in config.blobs)
    n = args.grid_points
    axis = np.linspace(-extent, extent, n)
    heights = np.linspace(0.0, 2.0 * math.pi * params.h, n, endpoint=False)
    gx, gy, gz = np.meshgrid(axis, axis, heights, indexing="ij")
    samples = np.stack((gx.ravel(), gy.ravel(), gz.ravel()), axis=-1)
    field = reconstruct3d.vorticity3d(samples, kde, params)
    magnitude = np.linalg.norm(field, axis=-1) / np.linalg.norm(
        reconstruct3d.xi_field(samples, params), axis=-1)

    # helical-invariance regression on a few samples
    probe = samples[:: max(1, samples.shape[0] // 64)]
    theta = 0.37
    lhs = reconstruct3d.vorticity3d(
        reconstruct3d.helical_map(theta, probe, params), kde, params)
    c, s = math.cos(theta), math.sin(theta)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    rhs = reconstruct3d.vorticity3d(probe, kde, params) @ rot.T
    drift = np.abs(lhs - rhs).max()
    if drift > 1e-10 * max(1.0, np.abs(field).max()):
        print(f"helical invariance regression failed: drift {drift:.3e}",
              file=_sys.stderr)
        return EXIT_CHECK_FAILED

    cloud_path = os.path.join(out_dir, "pointcloud.csv")
    with open(cloud_path, "w") as fh:
        fh.write("x1,x2,x3,omega_xi,w1,w2,w3\n")
        for p, m, vec in zip(samples, magnitude, field):
            fh.write(f"{p[0]:.17g},{p[1]:.17g},{p[2]:.17g},{m:.17g},"
                     f"{vec[0]:.17g},{vec[1]:.17g},{vec[2]:.17g}\n")

    sigma = np.linspace(0.0, 2.0 * math.pi, args.sigma_points)
    fil_path = os.path.join(out_dir, "filaments.csv")
    with open(fil_path, "w") as fh:
        fh.write("blob,sigma,x1,x2,x3\n")
        for i, spec in enumerate(config.blobs):
            curve = reconstruct3d.helix_curve(spec, params, t_snap, sigma)
            for sg, pt in zip(sigma, curve):
                fh.write(f"{i},{sg:.17g},{pt[0]:.17g},{pt[1]:.17g},{pt[2]:.17g}\n")
    print(f"wrote {cloud_path} and {fil_path} at t={t_snap:g}")
    return EXIT_OK


# --- parser ------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="helivort",
        description="Vortex-blob simulator for helical Euler flows")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_threads(p):
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: HELIVORT_THREADS or all)")

    p = sub.add_parser("simulate", help="run a configured simulation")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--eps", type=float, default=None,
                   help="override every blob radius")
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--backend", choices=("direct", "grid"), default=None)
    p.add_argument("--grid-n", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--dump-fields", action="store_true",
                   help="export final grid fields (grid backend only)")
    add_threads(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("kernel-check", help="kernel property suite")
    p.add_argument("--h", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    add_threads(p)
    p.set_defaults(func=cmd_kernel_check)

    p = sub.add_parser("solver-check", help="elliptic solver convergence suite")
    p.add_argument("--levels", default="65,129,257")
    p.add_argument("--h", type=float, default=1.0)
    p.add_argument("--r-u", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dump-fields", default=None, metavar="DIR",
                   help="write finest-level psi/omega fields as CSV")
    add_threads(p)
    p.set_defaults(func=cmd_solver_check)

    p = sub.add_parser("compare-theory", help="compare a run against the "
                                              "leading-order predictions")
    p.add_argument("--run", required=True)
    p.add_argument("--freq-rtol", type=float, default=0.15)
    p.add_argument("--mass-frac-max", type=float, default=0.05)
    add_threads(p)
    p.set_defaults(func=cmd_compare_theory)

    p = sub.add_parser("reconstruct3d", help="lift a snapshot to 3D vorticity")
    p.add_argument("--run", required=True)
    p.add_argument("--time", type=float, required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--grid-points", type=int, default=24)
    p.add_argument("--sigma-points", type=int, default=128)
    add_threads(p)
    p.set_defaults(func=cmd_reconstruct3d)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=_sys.stderr)
        return EXIT_USAGE
    except (StabilityError, EscapeError, SolverError) as exc:
        print(f"numerical abort: {exc}", file=_sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    raise SystemExit(main())
