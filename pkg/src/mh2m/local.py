"""Element-local operators: Neumann solves T_h and T~_h, the multiplier Gram
matrix behind G_h, the closed formulas for lambda^0 and u^0, and the cache
holding everything the skeleton stage needs."""
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CompatibilityError, MH2MError
from .quadrature import CENTROID, THREE_POINT, collapsed_triangle_rule
from .spaces import LocalSpaceV, MultiplierBlock, pairing_matrix, trace_interpolation

DENSE_LIMIT = 1200
SINGULAR_RTOL = 1e-12
MEAN_RTOL = 1e-12
LOAD_DEGREE = 8


def assemble_local_stiffness(V, A, sparse=False):
    """Stiffness matrix ∫_τ A∇φ_i·∇φ_j on the submesh (before any constraint).

    For piecewise-constant A the coefficient is sampled once per fine
    triangle at its centroid and the gradient products are integrated
    exactly; otherwise A is sampled at the points of a degree-2 rule.
    """
    pts, wts = THREE_POINT
    _, grads = V.tabulate(pts)
    if A.is_piecewise:
        c = V.physical_points(CENTROID[0])[:, 0, :]
        Aq = np.repeat(A(c[:, 0], c[:, 1])[:, None], len(wts), axis=1)
    else:
        xq = V.physical_points(pts)
        Aq = A(xq[..., 0], xq[..., 1])
    wq = wts[None, :] * np.abs(V.detJ)[:, None]
    Ke = np.einsum("tq,tqai,tqij,tqbj->tab", wq, grads, Aq, grads)
    nb = V.cell_dofs.shape[1]
    rows = np.repeat(V.cell_dofs, nb, axis=1).ravel()
    cols = np.tile(V.cell_dofs, (1, nb)).ravel()
    K = sp.csr_matrix((Ke.ravel(), (rows, cols)), shape=(V.ndofs, V.ndofs))
    K = 0.5 * (K + K.T)
    return K if sparse else K.toarray()


def load_vector(V, f, degree=LOAD_DEGREE):
    """Vector ∫_τ f φ_i."""
    pts, wts = collapsed_triangle_rule(degree)
    vals, _ = V.tabulate(pts)
    xq = V.physical_points(pts)
    fq = np.asarray(f(xq[..., 0], xq[..., 1]), dtype=float) * np.ones(xq.shape[:2])
    Fe = np.einsum("tq,q,qb->tb", fq * np.abs(V.detJ)[:, None], wts, vals)
    F = np.zeros(V.ndofs)
    np.add.at(F, V.cell_dofs.ravel(), Fe.ravel())
    return F


class ConstrainedSolver:
    """Solves a(u, v) = g(v) for all v with m·v = 0, returning u with m·u = 0.

    Small systems eliminate the constraint with an explicit null-space basis
    and a dense Cholesky factor. Large systems use the equivalent sparse
    system (K + s m mᵀ) u = g - m (1ᵀg)/(1ᵀm), which is SPD because m·1 ≠ 0.
    """

    def __init__(self, K, m, owner=None):
        self.m = np.asarray(m, dtype=float)
        self.n = n = len(self.m)
        self.owner = owner
        self.dense = n <= DENSE_LIMIT
        if self.dense:
            K = K.toarray() if sp.issparse(K) else np.asarray(K)
            p = int(np.argmax(np.abs(self.m)))
            idx = np.delete(np.arange(n), p)
            r = self.m[idx] / self.m[p]
            Kt = (K[np.ix_(idx, idx)] - np.outer(r, K[p, idx]) - np.outer(K[idx, p], r)
                  + K[p, p] * np.outer(r, r))
            try:
                self.factor = sla.cho_factor(Kt, lower=True)
            except np.linalg.LinAlgError as exc:
                raise MH2MError(f"element {owner}: constrained stiffness is not SPD") from exc
            self.pivot, self.idx, self.r = p, idx, r
        else:
            K = sp.csr_matrix(K)
            s = K.diagonal().max() / np.max(np.abs(self.m)) ** 2
            mm = sp.csr_matrix(self.m[:, None]) @ sp.csr_matrix(self.m[None, :])
            self.lu = spla.splu(sp.csc_matrix(K + s * mm))
            self.msum = float(self.m.sum())

    def solve(self, g):
        g = np.asarray(g, dtype=float)
        vec = g.ndim == 1
        G = g[:, None] if vec else g
        if self.dense:
            rhs = G[self.idx] - np.outer(self.r, G[self.pivot])
            y = sla.cho_solve(self.factor, rhs)
            u = np.empty((self.n, G.shape[1]))
            u[self.idx] = y
            u[self.pivot] = -self.r @ y
        else:
            rhs = G - np.outer(self.m, G.sum(axis=0)) / self.msum
            u = self.lu.solve(rhs)
            u -= np.outer(np.ones(self.n), self.m @ u) / self.msum
        return u[:, 0] if vec else u


class DirichletSolver:
    """Discrete A-harmonic extension of boundary values into the submesh."""

    def __init__(self, V, K):
        self.V = V
        self.K = sp.csr_matrix(K)
        I, Bd = V.interior_dofs, V.boundary_dofs
        KII = self.K[I][:, I]
        self.KIB = self.K[I][:, Bd]
        if len(I) == 0:
            self.solve_II = lambda r: r
        elif len(I) <= DENSE_LIMIT:
            fac = sla.cho_factor(KII.toarray(), lower=True)
            self.solve_II = lambda r: sla.cho_solve(fac, r)
        else:
            lu = spla.splu(sp.csc_matrix(KII))
            self.solve_II = lu.solve

    def extend(self, boundary_values):
        """Full coefficient vector from values at ``V.boundary_dofs``."""
        bv = np.asarray(boundary_values, dtype=float)
        u = np.zeros((self.V.ndofs,) + bv.shape[1:])
        u[self.V.boundary_dofs] = bv
        if len(self.V.interior_dofs):
            u[self.V.interior_dofs] = self.solve_II(-(self.KIB @ bv))
        return u

    def energy(self, u):
        return float(u @ (self.K @ u))


@dataclass(eq=False)
class LocalCache:
    """Offline data of one coarse element.

    E holds the images T_h λ~_j of the zero-mean multiplier basis (columns),
    D their Gram matrix, ``b_gamma`` the pairings ⟨λ~_i, ρ_j⟩ with the local
    trace basis and ``c_gamma`` = D⁻¹ b_gamma. The source part is
    ``eta_f`` = T~_h f and ``d`` = G_h T~_h f.
    """

    owner: int
    V: object
    block: object
    K: np.ndarray
    solver: object
    B: np.ndarray
    Z: np.ndarray
    w: np.ndarray
    m: np.ndarray
    E: np.ndarray
    D: np.ndarray
    D_factor: tuple
    P: np.ndarray
    b_gamma: np.ndarray
    c_gamma: np.ndarray
    gamma_integrals: np.ndarray
    local_to_global: np.ndarray
    perimeter: float
    area: float
    F: np.ndarray = None
    eta_f: np.ndarray = None
    d: np.ndarray = None
    lambda0: float = 0.0
    source_integral: float = 0.0

    def with_source(self, f):
        """Same factorizations, new right-hand side f (multi-query reuse)."""
        F = load_vector(self.V, f)
        eta_f = self.solver.solve(F)
        d = sla.cho_solve(self.D_factor, self.Z.T @ (self.B @ eta_f))
        src = float(F.sum())
        return replace(self, F=F, eta_f=eta_f, d=d, source_integral=src,
                       lambda0=compute_lambda0(src, self.perimeter))


def compute_lambda0(source_integral, perimeter):
    """Constant multiplier λ⁰ = -(1/|∂τ|) ∫_τ f."""
    return -float(source_integral) / float(perimeter)


def compute_u0(cache, rho_local):
    """Element constant u⁰ = (1/|∂τ|) ∫_{∂τ} ρ."""
    return float(cache.gamma_integrals @ np.asarray(rho_local, dtype=float)) / cache.perimeter


def factor_gram(D, owner):
    """Cholesky factor of D, rejecting (near-)singular matrices."""
    ev = np.linalg.eigvalsh(0.5 * (D + D.T))
    if ev.size and (ev[-1] <= 0 or ev[0] < SINGULAR_RTOL * ev[-1]):
        ratio = ev[0] / ev[-1] if ev[-1] > 0 else float("nan")
        raise CompatibilityError(
            f"element {owner}: multiplier Gram matrix is singular (eigenvalue ratio {ratio:.3g}); "
            "T_h is not injective on the zero-mean multipliers, check (M1)",
            element=owner,
        )
    return sla.cho_factor(0.5 * (D + D.T), lower=True)


def build_local_cache(mesh, t, partition, trace_space, submesh, k, A, f=None, block=None):
    V = LocalSpaceV(submesh, k)
    if block is None:
        block = MultiplierBlock.for_element(partition, t, k)
    K = assemble_local_stiffness(V, A, sparse=V.ndofs > DENSE_LIMIT)
    solver = ConstrainedSolver(K, V.boundary_mean, owner=t)
    B = pairing_matrix(block, V)
    Z = block.Z
    E = solver.solve(B.T @ Z)
    D = Z.T @ (B @ E)
    D_factor = factor_gram(D, t)
    P = trace_interpolation(trace_space, t, V)
    b_gamma = Z.T @ (B @ P)
    c_gamma = sla.cho_solve(D_factor, b_gamma)
    cache = LocalCache(
        owner=int(t), V=V, block=block, K=K, solver=solver, B=B, Z=Z, w=block.w,
        m=V.boundary_mean, E=E, D=D, D_factor=D_factor, P=P, b_gamma=b_gamma, c_gamma=c_gamma,
        gamma_integrals=V.boundary_mean @ P, local_to_global=trace_space.local_to_global[t].copy(),
        perimeter=block.perimeter, area=mesh.area(t),
    )
    if f is not None:
        cache = cache.with_source(f)
    return cache


def build_local_caches(mesh, partition, trace_space, submeshes, k, A, f=None, threads=1):
    """Caches for every element; element tasks are independent."""
    def task(t):
        return build_local_cache(mesh, t, partition, trace_space, submeshes[t], k, A, f)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(task, range(mesh.N)))
    return [task(t) for t in range(mesh.N)]


# --------------------------------------------------------------------------
# operator API


def _check_zero_mean(cache, mu):
    w = cache.w
    if abs(w @ mu) > MEAN_RTOL * max(1.0, np.abs(w).sum() * np.max(np.abs(mu), initial=0.0)):
        raise MH2MError(f"element {cache.owner}: multiplier has nonzero mean {w @ mu:.3g}; "
                        "the Neumann problem is ill-posed")


def apply_Th(cache, mu):
    """Coefficients of T_h μ for a zero-mean multiplier given in the nodal basis."""
    mu = np.asarray(mu, dtype=float)
    _check_zero_mean(cache, mu)
    return cache.solver.solve(cache.B.T @ mu)


def apply_Ttilde(cache, f):
    return cache.solver.solve(load_vector(cache.V, f))


def assemble_Gh(cache):
    """Gram matrix D_ij = ⟨λ~_i, T_h λ~_j⟩ with its Cholesky factor."""
    D = cache.Z.T @ (cache.B @ cache.E)
    return D, factor_gram(D, cache.owner)


def trace_to_V(cache, phi):
    """V coefficients of boundary data: callable, local trace vector or V vector."""
    if callable(phi):
        V = cache.V
        u = np.zeros(V.ndofs)
        xy = V.coords[V.boundary_dofs]
        u[V.boundary_dofs] = phi(xy[:, 0], xy[:, 1])
        return u
    phi = np.asarray(phi, dtype=float)
    if phi.shape[0] == cache.P.shape[1]:
        return cache.P @ phi
    if phi.shape[0] == cache.B.shape[1]:
        return phi
    raise MH2MError(f"element {cache.owner}: trace vector of size {phi.shape[0]} matches no known layout")


def apply_Gh(cache, phi):
    """Coefficients c in the zero-mean basis with G_h φ = Σ c_i λ~_i."""
    if cache.D_factor is None:
        raise MH2MError(f"element {cache.owner}: multiplier Gram matrix not factored")
    b = cache.Z.T @ (cache.B @ trace_to_V(cache, phi))
    return sla.cho_solve(cache.D_factor, b)


def multiplier_from_zero_mean(cache, c):
    """Nodal multiplier coefficients Σ c_i λ~_i."""
    return cache.Z @ np.asarray(c)


def energy(cache, u, v=None):
    v = u if v is None else v
    return float(u @ (cache.K @ v))


# --------------------------------------------------------------------------
# binary dump / reload

MAGIC = b"MH2MLC\x00\x00"
VERSION = 1
_DUMP_FIELDS = ("K", "B", "Z", "w", "m", "E", "D", "P", "b_gamma", "c_gamma", "gamma_integrals",
                "local_to_global", "F", "eta_f", "d")


def dump_cache(cache, path):
    """Write the array data of a cache: versioned header, then named
    little-endian float64 arrays with their dimensions."""
    arrays = {name: getattr(cache, name) for name in _DUMP_FIELDS if getattr(cache, name) is not None}
    arrays["scalars"] = np.array([cache.owner, cache.perimeter, cache.area, cache.lambda0,
                                  cache.source_integral], dtype=float)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(arrays)))
        for name, arr in arrays.items():
            arr = np.asarray(arr.toarray() if sp.issparse(arr) else arr, dtype="<f8")
            key = name.encode()
            fh.write(struct.pack("<H", len(key)) + key)
            fh.write(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def load_cache(path):
    """Reload a dumped cache. Spaces and solvers are not stored, so the
    result supports the skeleton stage but not new local solves."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise MH2MError(f"{path}: not a local cache file")
    version, count = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise MH2MError(f"{path}: unsupported cache version {version}")
    pos = 16
    arrays = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", data, pos)
        name = data[pos + 2: pos + 2 + n].decode()
        pos += 2 + n
        (ndim,) = struct.unpack_from("<I", data, pos)
        shape = struct.unpack_from(f"<{ndim}Q", data, pos + 4)
        pos += 4 + 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).copy()
        pos += 8 * size
    owner, perimeter, area, lambda0, src = arrays.pop("scalars")
    l2g = arrays.pop("local_to_global").astype(np.int64)
    D = arrays["D"]
    return LocalCache(
        owner=int(owner), V=None, block=None, solver=None, D_factor=factor_gram(D, int(owner)),
        local_to_global=l2g, perimeter=float(perimeter), area=float(area), lambda0=float(lambda0),
        source_integral=float(src), **arrays,
    )
