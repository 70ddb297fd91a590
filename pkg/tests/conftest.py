"""Shared fixtures for the heavy reference runs used by the acceptance suite.

The single-blob sweep and the two-blob run are computed once per session;
time steps are calibrated against the stability guard measured on the
initial configuration.
"""

import math
from dataclasses import dataclass

import numpy as np
import pytest

from helivort import diagnostics
from helivort.flow import rescaled_velocity, velocity_direct
from helivort.sim import (BlobSpec, SimConfig, init_blobs,
                          interparticle_spacing, run)

H_PITCH = 1.0
DISK_RADIUS = 2.0
REFERENCE_EPS = (0.05, 0.02, 0.01)


@dataclass
class ReferenceRun:
    config: SimConfig
    result: object
    report: object


def calibrated_dt(blobs, delta, safety=0.7):
    """dt from the measured stability guard and the 40-steps-per-turnover
    resolution rule."""
    probe = SimConfig(blobs=tuple(blobs), delta=delta, dt=1.0, t_final=0.0)
    sys = init_blobs(blobs, probe.params, probe.domain, delta=delta)
    v = rescaled_velocity(velocity_direct(sys, sys.positions), sys.eps)
    vmax = float(np.hypot(v[:, 0], v[:, 1]).max())
    guard = 0.5 * delta / vmax
    dt = guard
    log_eps = abs(math.log(sys.eps))
    for b in blobs:
        r0 = b.center_radius
        hw = math.sqrt(r0 * r0 + H_PITCH**2) / (2.0 * math.pi * H_PITCH)
        turnover = 2.0 * math.pi * b.radius**2 * log_eps / (hw * abs(b.circulation))
        dt = min(dt, turnover / 40.0)
    return safety * dt


def single_blob_reference(eps, *, particles=2000, t_final=1.0):
    spec = BlobSpec(center=(1.0, 0.0), radius=eps, circulation=1.0,
                    particles=particles)
    delta = 4.0 * interparticle_spacing(eps, particles)
    dt = calibrated_dt([spec], delta)
    steps = int(math.ceil(t_final / dt))
    config = SimConfig(blobs=(spec,), delta=delta, dt=dt, t_final=t_final,
                       cadence=max(1, steps // 150))
    result = run(config)
    report = diagnostics.theory_compare(result.records, config.blobs,
                                        config.params, eps=eps)
    return ReferenceRun(config=config, result=result, report=report)


@pytest.fixture(scope="session")
def reference_sweep():
    return {eps: single_blob_reference(eps) for eps in REFERENCE_EPS}


@pytest.fixture(scope="session")
def two_blob_run():
    eps = 0.01
    blobs = (BlobSpec(center=(0.5, 0.0), radius=eps, circulation=1.0,
                      particles=1000),
             BlobSpec(center=(-1.0, 0.0), radius=eps, circulation=1.0,
                      particles=1000))
    delta = 4.0 * interparticle_spacing(eps, 1000)
    dt = calibrated_dt(blobs, delta)
    steps = int(math.ceil(0.5 / dt))
    config = SimConfig(blobs=blobs, delta=delta, dt=dt, t_final=0.5,
                       cadence=max(1, steps // 100))
    result = run(config)
    report = diagnostics.theory_compare(result.records, config.blobs,
                                        config.params, eps=eps)
    return ReferenceRun(config=config, result=result, report=report)
