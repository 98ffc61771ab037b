"""Offline/online orchestration shared by the diagnostics and the CLI."""
import time
from dataclasses import dataclass, field

from .local import build_local_caches
from .mesh import build_coarse_mesh, build_submesh, partition_faces, validate_hierarchy
from .skeleton import assemble_system, assemble_system_equivalent, reconstruct, solve
from .spaces import TraceSpace


@dataclass(eq=False)
class Hierarchy:
    mesh: object
    partition: object
    submeshes: list
    report: object


@dataclass(eq=False)
class RunResult:
    hierarchy: Hierarchy
    k: int
    trace_space: TraceSpace
    caches: list
    system: object
    alpha: object
    info: object
    bundle: object
    timings: dict = field(default_factory=dict)


def build_hierarchy(domain, target_H, n_gamma=1, n_lambda_per_gamma=1, target_h=None, h_fraction=0.25,
                    enforce_m1=True, validate=True, threads=1):
    """Coarse mesh, face partition and submeshes; raises on invalid hierarchies.

    ``target_h`` defaults to ``h_fraction * H_Lambda``.
    """
    mesh = build_coarse_mesh(domain, target_H)
    partition = partition_faces(mesh, n_gamma, n_lambda_per_gamma)
    if target_h is None:
        target_h = h_fraction * partition.H_Lambda
    subs = [build_submesh(mesh, t, partition, target_h, enforce_m1=enforce_m1) for t in range(mesh.N)]
    report = validate_hierarchy(mesh, partition, subs) if validate else None
    if validate and enforce_m1:
        report.raise_if_failed()
    return Hierarchy(mesh, partition, subs, report)


def offline(hier, k, A, f, threads=1):
    t0 = time.perf_counter()
    ts = TraceSpace(hier.mesh, hier.partition, k)
    caches = build_local_caches(hier.mesh, hier.partition, ts, hier.submeshes, k, A, f, threads=threads)
    return ts, caches, time.perf_counter() - t0


def online(ts, caches, form="energy", method="direct", rtol=1e-12, threads=1):
    t0 = time.perf_counter()
    assemble = assemble_system_equivalent if form == "energy" else assemble_system
    system = assemble(ts, caches, threads=threads)
    alpha, info = solve(system, method, rtol)
    bundle = reconstruct(alpha, caches, ts)
    return system, alpha, info, bundle, time.perf_counter() - t0


def run_mh2m(hier, k, A, f, form="energy", method="direct", rtol=1e-12, threads=1):
    ts, caches, t_off = offline(hier, k, A, f, threads)
    system, alpha, info, bundle, t_on = online(ts, caches, form, method, rtol, threads)
    return RunResult(hier, k, ts, caches, system, alpha, info, bundle,
                     {"offline_s": t_off, "online_s": t_on})
