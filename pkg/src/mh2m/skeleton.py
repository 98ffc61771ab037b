"""Global skeleton system for the trace unknown and reconstruction of the
element fields."""
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CompatibilityError, MH2MError

SOLVE_RTOL = 1e-12


@dataclass
class SkeletonSystem:
    K: np.ndarray
    rhs: np.ndarray
    form: str
    assembly_seconds: float = 0.0

    @property
    def ndofs(self):
        return len(self.rhs)

    def symmetry_defect(self):
        if self.ndofs == 0:
            return 0.0
        return float(np.max(np.abs(self.K - self.K.T)) / max(np.max(np.abs(self.K)), 1e-300))


def _flux_block(cache):
    Kloc = cache.b_gamma.T @ cache.c_gamma
    rloc = -cache.lambda0 * cache.gamma_integrals + cache.b_gamma.T @ cache.d
    return Kloc, rloc


def _energy_block(cache):
    Y = cache.E @ cache.c_gamma
    Kloc = Y.T @ (cache.K @ Y)
    rloc = Y.T @ cache.F + cache.gamma_integrals * (cache.source_integral / cache.perimeter)
    return Kloc, rloc


def _assemble(trace_space, caches, block_fn, form, threads):
    t0 = time.perf_counter()
    n = trace_space.ndofs
    K = np.zeros((n, n))
    rhs = np.zeros(n)
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(block_fn, caches))
    else:
        blocks = [block_fn(c) for c in caches]
    # scatter in element order so the result does not depend on scheduling
    for cache, (Kloc, rloc) in zip(caches, blocks):
        l2g = cache.local_to_global
        loc = np.nonzero(l2g >= 0)[0]
        glob = l2g[loc]
        np.add.at(K, (glob[:, None], glob[None, :]), Kloc[np.ix_(loc, loc)])
        np.add.at(rhs, glob, rloc[loc])
    return SkeletonSystem(K, rhs, form, time.perf_counter() - t0)


def assemble_system(trace_space, caches, threads=1):
    """Flux form: K_ij = Σ_τ ⟨G_h ρ_j, ρ_i⟩, b_i = Σ_τ -⟨λ⁰, ρ_i⟩ + ⟨G_h T~_h f, ρ_i⟩."""
    return _assemble(trace_space, caches, _flux_block, "flux", threads)


def assemble_system_equivalent(trace_space, caches, threads=1):
    """Energy form: K_ij = Σ_τ a(T_h G_h ρ_i, T_h G_h ρ_j),
    b_i = Σ_τ ∫ f (T_h G_h ρ_i + mean_{∂τ} ρ_i)."""
    return _assemble(trace_space, caches, _energy_block, "energy", threads)


@dataclass
class SolveInfo:
    method: str
    residual: float
    iterations: int = 0
    seconds: float = 0.0


def solve(system, method="direct", rtol=SOLVE_RTOL):
    """Solve K α = b; returns (α, SolveInfo)."""
    t0 = time.perf_counter()
    n = system.ndofs
    if n == 0:
        return np.zeros(0), SolveInfo(method, 0.0)
    K, b = system.K, system.rhs
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return np.zeros(n), SolveInfo(method, 0.0, seconds=time.perf_counter() - t0)
    iterations = 0
    if method == "direct":
        try:
            fac = sla.cho_factor(0.5 * (K + K.T), lower=True)
        except np.linalg.LinAlgError as exc:
            raise CompatibilityError("skeleton matrix is not positive definite") from exc
        alpha = sla.cho_solve(fac, b)
    elif method == "cg":
        counter = []
        alpha, status = spla.cg(sp.csr_matrix(K), b, rtol=rtol, atol=0.0, maxiter=50 * n,
                                callback=lambda xk: counter.append(1))
        iterations = len(counter)
        if status != 0:
            raise CompatibilityError(f"conjugate gradients did not converge (status {status})")
    else:
        raise MH2MError(f"unknown solver method {method!r}")
    res = float(np.linalg.norm(K @ alpha - b) / nb)
    return alpha, SolveInfo(method, res, iterations, time.perf_counter() - t0)


@dataclass
class SolutionBundle:
    """Skeleton trace plus element fields λ_h, u~_h and u⁰_h."""

    rho: np.ndarray
    rho_local: list
    lam: list
    u_tilde: list
    u0: np.ndarray
    meta: dict = field(default_factory=dict)

    def u_h(self, t):
        """Coefficients of u_h = u⁰ + u~ on the local space of element t."""
        return self.u_tilde[t] + self.u0[t]


def reconstruct(alpha, caches, trace_space):
    rho = np.asarray(alpha, dtype=float)
    rho_local, lam, ut, u0 = [], [], [], []
    for cache in caches:
        rl = trace_space.local_values(cache.owner, rho) if trace_space is not None else _local(cache, rho)
        c = cache.c_gamma @ rl - cache.d
        rho_local.append(rl)
        lam.append(cache.lambda0 * np.ones(len(cache.w)) + cache.Z @ c)
        ut.append(cache.E @ c + cache.eta_f)
        u0.append(float(cache.gamma_integrals @ rl) / cache.perimeter)
    return SolutionBundle(rho, rho_local, lam, ut, np.array(u0))


def _local(cache, rho):
    out = np.zeros(len(cache.local_to_global))
    mask = cache.local_to_global >= 0
    out[mask] = rho[cache.local_to_global[mask]]
    return out
