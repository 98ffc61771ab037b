"""Seminorms, discrete fractional-norm proxies, inf-sup estimates, invariant
checks and convergence studies.

Fractional norms are replaced by energies on a nested reference submesh:
|μ|_{-1/2} by |T_ĥ μ|_{H¹_A} and |ξ|_{1/2} by the energy of the discrete
A-harmonic extension of ξ.
"""
import csv
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import MH2MError
from .local import ConstrainedSolver, DirichletSolver, assemble_local_stiffness, factor_gram
from .mesh import build_submesh
from .quadrature import collapsed_triangle_rule, gauss_interval
from .spaces import LocalSpaceV, MultiplierBlock, lagrange_1d, pairing_matrix, trace_interpolation

ERROR_COLUMNS = ["H_Gamma", "H_Lambda", "h", "k", "err_u_H1A", "err_lambda_dual", "err_rho_trace",
                 "dofs_gamma", "t_offline_ms", "t_online_ms"]


def broken_H1A_seminorm(spaces, A, coeffs=None, grad_exact=None, degree=8):
    """sqrt(Σ_τ ∫_τ A∇e·∇e) with e = v_h - v on every submesh.

    ``spaces`` are local spaces (or caches carrying one), ``coeffs`` the
    matching coefficient vectors (None for zero) and ``grad_exact`` an
    optional callable returning (..., 2) gradients.
    """
    pts, wts = collapsed_triangle_rule(degree)
    total = 0.0
    for i, item in enumerate(spaces):
        V = getattr(item, "V", item)
        xq = V.physical_points(pts)
        g = np.zeros(xq.shape)
        if coeffs is not None and coeffs[i] is not None:
            _, g = V.evaluate_cells(coeffs[i], pts)
        if grad_exact is not None:
            g = g - np.asarray(grad_exact(xq[..., 0], xq[..., 1]), dtype=float)
        Aq = A(xq[..., 0], xq[..., 1])
        dens = np.einsum("tqi,tqij,tqj->tq", g, Aq, g)
        total += float(np.sum(dens * wts[None, :] * np.abs(V.detJ)[:, None]))
    return float(np.sqrt(max(total, 0.0)))


# --------------------------------------------------------------------------
# reference submesh machinery


class ReferenceElement:
    """Nested refinement of an element's submesh by ``factor`` with its own
    Neumann and Dirichlet solvers, used to evaluate fractional-norm proxies."""

    def __init__(self, mesh, partition, trace_space, cache, A, factor=4):
        sub = cache.V.submesh
        self.cache = cache
        self.owner = cache.owner
        self.factor = int(factor)
        self.sub = build_submesh(mesh, cache.owner, partition, sub.h / factor, enforce_m1=False,
                                 divisions=sub.divisions * self.factor)
        self.V = LocalSpaceV(self.sub, cache.V.k)
        self.K = assemble_local_stiffness(self.V, A, sparse=True)
        self.solver = ConstrainedSolver(self.K, self.V.boundary_mean, owner=cache.owner)
        self.dirichlet = DirichletSolver(self.V, self.K)
        self.B = pairing_matrix(cache.block, self.V)
        self.P = trace_interpolation(trace_space, cache.owner, self.V) if trace_space is not None else None
        self._E = None
        self._S = None

    @property
    def E(self):
        """T_ĥ images of the coarse zero-mean multiplier basis."""
        if self._E is None:
            self._E = self.solver.solve(self.B.T @ self.cache.Z)
        return self._E

    @property
    def D(self):
        return self.cache.Z.T @ (self.B @ self.E)

    @property
    def S(self):
        """Harmonic-extension energy Gram matrix of the local trace basis."""
        if self._S is None:
            H = self.dirichlet.extend(self.P[self.V.boundary_dofs])
            self._S = H.T @ (self.K @ H)
        return self._S

    def energy(self, u):
        return float(u @ (self.K @ u))

    def boundary_values(self, xi):
        """Values of boundary data at the reference boundary dofs."""
        if callable(xi):
            xy = self.V.coords[self.V.boundary_dofs]
            return np.asarray(xi(xy[:, 0], xy[:, 1]), dtype=float)
        return (self.P @ np.asarray(xi, dtype=float))[self.V.boundary_dofs]

    def multiplier_block(self, segment_fine_edges=2, k=None):
        """Multiplier block on segments of ``segment_fine_edges`` reference edges."""
        m = self.sub.divisions
        nseg = m // segment_fine_edges
        views = [np.linspace(0.0, 1.0, nseg + 1)] * 3
        return MultiplierBlock(self.owner, self.cache.block.corners, views,
                               self.cache.block.k if k is None else k)


def build_reference_elements(mesh, partition, trace_space, caches, A, factor=4, elements=None):
    elements = range(len(caches)) if elements is None else elements
    return {t: ReferenceElement(mesh, partition, trace_space, caches[t], A, factor) for t in elements}


def _zero_mean_check(block, mu):
    if abs(block.w @ mu) > 1e-12 * max(1.0, np.abs(block.w).sum() * np.max(np.abs(mu), initial=0.0)):
        raise MH2MError(f"element {block.owner}: dual proxy needs a zero-mean multiplier")


def dual_seminorm_proxy(ref, mu):
    """|T_ĥ μ|_{H¹_A(τ)} for a coarse multiplier μ with zero mean."""
    mu = np.asarray(mu, dtype=float)
    _zero_mean_check(ref.cache.block, mu)
    g = ref.B.T @ mu
    y = ref.solver.solve(g)
    return float(np.sqrt(max(g @ y, 0.0)))


def dual_proxy_of_load(ref, g):
    """|T_ĥ ℓ| for a functional ℓ given by its pairing vector on the reference space."""
    y = ref.solver.solve(g)
    return float(np.sqrt(max(y @ (ref.K @ y), 0.0)))


def _extension_seminorm(ref, bv):
    # the seminorm ignores constants; removing the mean keeps roundoff out of
    # the energy of (nearly) constant data
    m = ref.V.boundary_mean[ref.V.boundary_dofs]
    u = ref.dirichlet.extend(bv - (m @ bv) / m.sum())
    return float(np.sqrt(max(ref.energy(u), 0.0)))


def trace_seminorm_proxy(ref, xi):
    """Energy norm of the discrete A-harmonic extension of ξ into τ."""
    return _extension_seminorm(ref, ref.boundary_values(xi))


def skeleton_trace_proxy(refs, trace_space, rho):
    """Broken element-wise sum of trace proxies of a skeleton function."""
    total = 0.0
    for t, ref in refs.items():
        total += trace_seminorm_proxy(ref, trace_space.local_values(t, rho)) ** 2
    return float(np.sqrt(total))


def _max_generalized_eig(Anum, Bden):
    Bden = 0.5 * (Bden + Bden.T)
    ev = np.linalg.eigvalsh(Bden)
    if ev[0] <= 1e-14 * max(ev[-1], 1e-300):
        return float("inf")
    return float(sla.eigh(0.5 * (Anum + Anum.T), Bden, eigvals_only=True)[-1])


def estimate_infsup_constants(cache, ref):
    """(β proxy, α proxy) for one element.

    β² = max_μ |T_ĥ μ|² / |T_h μ|² over zero-mean coarse multipliers.
    α² = max_ξ |ξ|²_{1/2} / |T_ĥ G_h ξ|² over zero-mean local traces.
    """
    ev = np.linalg.eigvalsh(0.5 * (cache.D + cache.D.T))
    if ev[0] < 1e-12 * ev[-1]:
        return float("inf"), float("inf")
    Dref = ref.D
    beta = np.sqrt(_max_generalized_eig(Dref, cache.D))
    g = cache.gamma_integrals
    p = int(np.argmax(np.abs(g)))
    idx = np.delete(np.arange(len(g)), p)
    Q = np.zeros((len(g), len(g) - 1))
    Q[idx, np.arange(len(idx))] = 1.0
    Q[p] = -g[idx] / g[p]
    S = Q.T @ ref.S @ Q
    C = cache.c_gamma @ Q
    M = C.T @ Dref @ C
    alpha = np.sqrt(_max_generalized_eig(S, M))
    return float(beta), float(alpha)


def cauchy_schwarz_check(cache, ref, rng, trials=20):
    """Worst ratio ⟨μ~, ξ⟩ / (dual proxy(μ~) trace proxy(ξ)) over random pairs."""
    worst = 0.0
    for _ in range(trials):
        mu = cache.Z @ rng.standard_normal(cache.Z.shape[1])
        xi = rng.standard_normal(cache.P.shape[1])
        lhs = abs(mu @ (cache.B @ (cache.P @ xi)))
        rhs = dual_seminorm_proxy(ref, mu) * trace_seminorm_proxy(ref, xi)
        if rhs > 0:
            worst = max(worst, lhs / rhs)
    return worst


def strang_check(cache, ref, phi, beta=None):
    """Terms of the consistency split for G_h φ against a reference G.

    Returns a dict with the measured |T_ĥ(Gφ - G_hφ)|, the best
    approximation of Gφ in the coarse zero-mean multipliers, the local-solve
    error |(T_ĥ - T_h)Gφ| and the bound (1+β²)·best + β²·local.
    """
    if beta is None:
        beta, _ = estimate_infsup_constants(cache, ref)
    phi_ref = ref.P @ phi
    rblock = ref.multiplier_block(2)
    Bf = pairing_matrix(rblock, ref.V)
    Ef = ref.solver.solve(Bf.T @ rblock.Z)
    Df = rblock.Z.T @ (Bf @ Ef)
    cf = sla.cho_solve(factor_gram(Df, cache.owner), rblock.Z.T @ (Bf @ phi_ref))
    y_exact = Ef @ cf
    gmu = rblock.Z @ cf
    ch = sla.cho_solve(cache.D_factor, cache.Z.T @ (cache.B @ (cache.P @ phi)))
    measured = np.sqrt(max(ref.energy(y_exact - ref.E @ ch), 0.0))
    Dref = ref.D
    cstar = np.linalg.solve(0.5 * (Dref + Dref.T), ref.E.T @ (ref.K @ y_exact))
    best = np.sqrt(max(ref.energy(y_exact - ref.E @ cstar), 0.0))
    Bc = pairing_matrix(rblock, cache.V)
    gc = Bc.T @ gmu
    th = cache.solver.solve(gc)
    local = np.sqrt(max(gmu @ (Bf @ y_exact) - gc @ th, 0.0))
    bound = (1 + beta**2) * best + beta**2 * local
    return {"measured": float(measured), "best": float(best), "local": float(local), "beta": float(beta),
            "bound": float(bound)}


# --------------------------------------------------------------------------
# invariant report


@dataclass
class Invariant:
    """Check ``value <= threshold`` (or ``value > threshold`` when not ``upper``)."""

    name: str
    value: float
    threshold: float
    upper: bool = True

    @property
    def passed(self):
        if not np.isfinite(self.value):
            return False
        return bool(self.value <= self.threshold if self.upper else self.value > self.threshold)


@dataclass
class InvariantReport:
    items: list = field(default_factory=list)

    def add(self, name, value, threshold, upper=True):
        self.items.append(Invariant(name, float(value), float(threshold), upper))

    def __getitem__(self, name):
        for it in self.items:
            if it.name == name:
                return it
        raise KeyError(name)

    @property
    def passed(self):
        return all(it.passed for it in self.items)

    def failures(self):
        return [it for it in self.items if not it.passed]

    def as_dict(self):
        return {it.name: {"value": it.value, "threshold": it.threshold,
                          "bound": "upper" if it.upper else "lower", "passed": it.passed}
                for it in self.items}


DEFAULT_THRESHOLDS = {
    "equilibrium": 1e-11,
    "weak_continuity": 1e-10,
    "gram_symmetry": 1e-12,
    "skeleton_symmetry": 1e-12,
    "energy_identity": 1e-11,
    "source_energy_identity": 1e-11,
    "constant_annihilation": 1e-12,
    "weak_tg_identity": 1e-11,
    "solve_residual": 1e-12,
}


def equilibrium_defects(bundle, caches):
    """Per-element |∫_{∂τ} λ_h + ∫_τ f|, scaled by max(1, |∫_τ f|).

    With λ the outward flux A∇u·n, the divergence theorem gives
    ∫_{∂τ} λ = -∫_τ f.
    """
    out = []
    for lam, c in zip(bundle.lam, caches):
        out.append(abs(c.w @ lam + c.source_integral) / max(1.0, abs(c.source_integral)))
    return np.array(out)


def weak_continuity_residuals(bundle, caches):
    """Per-element max_i |⟨λ_i, u_h - ρ⟩_{∂τ}| over the full multiplier basis,
    scaled by perimeter·max(1, max|u_h|)."""
    out = []
    for t, c in enumerate(caches):
        uh = bundle.u_h(t)
        r = c.B @ (uh - c.P @ bundle.rho_local[t])
        out.append(np.max(np.abs(r), initial=0.0) / (c.perimeter * max(1.0, np.max(np.abs(uh), initial=0.0))))
    return np.array(out)


def operator_identities(cache):
    """Relative residuals of the discrete operator identities of one element."""
    D = cache.D
    scale = max(np.max(np.abs(D)), 1e-300)
    EKE = cache.E.T @ (cache.K @ cache.E)
    res = {
        "gram_symmetry": float(np.max(np.abs(D - D.T)) / scale),
        "energy_identity": float(np.max(np.abs(D - EKE)) / scale),
    }
    ZB = cache.Z.T @ cache.B
    res["constant_annihilation"] = float(np.max(np.abs(ZB.sum(axis=1))) / max(np.max(np.abs(ZB).sum(axis=1)), 1e-300))
    tg = D @ cache.c_gamma - cache.b_gamma
    res["weak_tg_identity"] = float(np.max(np.abs(tg), initial=0.0) / max(np.max(np.abs(cache.b_gamma)), 1e-300))
    if cache.eta_f is not None:
        lhs = cache.eta_f @ (cache.K @ cache.eta_f)
        rhs = cache.F @ cache.eta_f
        res["source_energy_identity"] = float(abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
    return res


def poincare_ratio(cache, A, f, degree=8):
    """Observed constant in |T~_h f|_{H¹_A} <= C a_min^{-1/2} H_τ ‖f‖_{L²(τ)}.

    Monitored only; the theory leaves the constant unquantified.
    """
    V = cache.V
    pts, wts = collapsed_triangle_rule(degree)
    xq = V.physical_points(pts)
    fq = np.asarray(f(xq[..., 0], xq[..., 1]), dtype=float) * np.ones(xq.shape[:2])
    fnorm = float(np.sqrt(np.sum(fq**2 * wts[None, :] * np.abs(V.detJ)[:, None])))
    if fnorm == 0.0:
        return 0.0
    amin, _ = A.bounds_sampled(xq)
    c = cache.block.corners
    H = max(np.linalg.norm(c[i] - c[j]) for i, j in ((0, 1), (1, 2), (2, 0)))
    eta = cache.eta_f
    return float(np.sqrt(max(eta @ (cache.K @ eta), 0.0)) * np.sqrt(amin) / (H * fnorm))


def verify_bundle(bundle, caches, system=None, info=None, thresholds=None):
    th = dict(DEFAULT_THRESHOLDS, **(thresholds or {}))
    rep = InvariantReport()
    rep.add("equilibrium", np.max(equilibrium_defects(bundle, caches), initial=0.0), th["equilibrium"])
    rep.add("weak_continuity", np.max(weak_continuity_residuals(bundle, caches), initial=0.0),
            th["weak_continuity"])
    worst = {}
    for c in caches:
        for k, v in operator_identities(c).items():
            worst[k] = max(worst.get(k, 0.0), v)
    for k, v in worst.items():
        rep.add(k, v, th[k])
    if system is not None and system.ndofs:
        rep.add("skeleton_symmetry", system.symmetry_defect(), th["skeleton_symmetry"])
        ev = np.linalg.eigvalsh(0.5 * (system.K + system.K.T))
        rep.add("skeleton_min_eigenvalue", ev[0], 0.0, upper=False)
    if info is not None:
        rep.add("solve_residual", info.residual, th["solve_residual"])
    return rep


# --------------------------------------------------------------------------
# error measures and convergence studies


def lambda_dual_error(ref, cache, lam_h, grad_exact, A, npoints=None):
    """|T_ĥ(λ - λ_h)| with λ = A∇u·n the exact outward flux."""
    V = ref.V
    p = V.p
    npoints = npoints or (p + 4)
    xg, wg = gauss_interval(npoints)
    block = cache.block
    g = np.zeros(V.ndofs)
    for dofs, le, (t0, t1), L in zip(V.boundary_edge_dofs, V.boundary_edge_le, V.boundary_edge_t,
                                     V.boundary_edge_lengths):
        a, b = block.corners[le], block.corners[(le + 1) % 3]
        d = b - a
        normal = np.array([d[1], -d[0]]) / np.linalg.norm(d)
        tq = t0 + (t1 - t0) * xg
        xy = a[None] + np.outer(tq, d)
        G = np.asarray(grad_exact(xy[:, 0], xy[:, 1]))
        Aq = A(xy[:, 0], xy[:, 1])
        flux = np.einsum("qi,qij,j->q", G, Aq, normal)
        lh = block.basis(le, tq) @ lam_h
        g[dofs] += lagrange_1d(p, xg).T @ (wg * (flux - lh) * L)
    return dual_proxy_of_load(ref, g)


def rho_trace_error(ref, u_exact, rho_local):
    """Harmonic-extension energy of (u - ρ_h) on ∂τ."""
    return _extension_seminorm(ref, ref.boundary_values(u_exact) - ref.boundary_values(rho_local))


def run_hash(config_dict):
    text = json.dumps(config_dict, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass
class ErrorReport:
    records: list
    rates: dict
    monotone: dict
    parameter: str = "H_Gamma"

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(ERROR_COLUMNS)
            for r in self.records:
                wr.writerow([fmt_number(r[c]) for c in ERROR_COLUMNS])

    def as_dict(self):
        return {"parameter": self.parameter, "rates": self.rates, "monotone": self.monotone,
                "records": self.records}


def fmt_number(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def fitted_rate(x, y):
    """Least-squares slope of log y against log x."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    ok = (x > 0) & (y > 0) & np.isfinite(y)
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def measure_errors(result, case, A, reference_factor=4, proxies=True):
    """Error record of one run against a case with a closed-form solution."""
    hier = result.hierarchy
    caches, bundle = result.caches, result.bundle
    err_u = broken_H1A_seminorm(caches, A, [bundle.u_h(t) for t in range(len(caches))], case.grad_u)
    err_l = err_r = float("nan")
    if proxies:
        el2 = er2 = 0.0
        for t, c in enumerate(caches):
            ref = ReferenceElement(hier.mesh, hier.partition, result.trace_space, c, A, reference_factor)
            el2 += lambda_dual_error(ref, c, bundle.lam[t], case.grad_u, A) ** 2
            er2 += rho_trace_error(ref, case.u, bundle.rho_local[t]) ** 2
        err_l, err_r = float(np.sqrt(el2)), float(np.sqrt(er2))
    return {
        "H_Gamma": hier.partition.H_Gamma,
        "H_Lambda": hier.partition.H_Lambda,
        "h": max(s.h for s in hier.submeshes),
        "k": result.k,
        "err_u_H1A": err_u,
        "err_lambda_dual": err_l,
        "err_rho_trace": err_r,
        "dofs_gamma": result.trace_space.ndofs,
        "t_offline_ms": 1e3 * result.timings["offline_s"],
        "t_online_ms": 1e3 * result.timings["online_s"],
    }


def run_convergence_study(levels, case, k, parameter="H_Gamma", reference_factor=4, proxies=True,
                          form="energy", method="direct", rtol=1e-12, threads=1, config=None):
    """Error table over a list of hierarchy keyword dicts (see
    :func:`driver.build_hierarchy`), with fitted rates per error column."""
    from .driver import build_hierarchy, run_mh2m

    records = []
    for lev in levels:
        hier = build_hierarchy(threads=threads, **lev)
        res = run_mh2m(hier, k, case.A, case.f, form=form, method=method, rtol=rtol, threads=threads)
        rec = measure_errors(res, case, case.A, reference_factor, proxies)
        if config is not None:
            rec["run_hash"] = run_hash(dict(config, level={k_: str(v) for k_, v in lev.items()}))
        records.append(rec)
    x = [r[parameter] for r in records]
    rates, mono = {}, {}
    for col in ("err_u_H1A", "err_lambda_dual", "err_rho_trace"):
        y = [r[col] for r in records]
        rates[col] = fitted_rate(x, y)
        order = np.argsort(x)[::-1]
        ys = np.array(y)[order]
        mono[col] = bool(np.all(np.diff(ys) < 0)) if np.all(np.isfinite(ys)) else None
    return ErrorReport(records, rates, mono, parameter)
