"""Reference solutions: manufactured cases, a global conforming Galerkin
solver with its own assembly, and an MsFEM solver built on discrete
A-harmonic extensions."""
import csv
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coefficients import CoefficientField
from .errors import ConfigError, MH2MError
from .local import DirichletSolver, load_vector
from .mesh import Rectangle
from .skeleton import SkeletonSystem, solve as solve_skeleton
from .spaces import trace_interpolation

PI = np.pi


@dataclass(frozen=True, eq=False)
class ManufacturedCase:
    name: str
    A: CoefficientField
    f: object
    u: object = None
    grad_u: object = None
    description: str = ""

    @property
    def has_exact(self):
        return self.u is not None


def _sine_case():
    def u(x, y):
        return np.sin(PI * x) * np.sin(PI * y)

    def grad(x, y):
        return np.stack([PI * np.cos(PI * x) * np.sin(PI * y), PI * np.sin(PI * x) * np.cos(PI * y)], axis=-1)

    def f(x, y):
        return 2 * PI**2 * np.sin(PI * x) * np.sin(PI * y)

    return ManufacturedCase("sine", CoefficientField(), f, u, grad, "A = I, u = sin(pi x) sin(pi y)")


def _oscillatory_case(epsilon=0.125):
    A = CoefficientField("smooth-oscillatory", epsilon=epsilon)

    def f(x, y):
        return np.ones(np.broadcast(np.asarray(x), np.asarray(y)).shape)

    return ManufacturedCase("oscillatory", A, f, description=f"a(x) = 1/(2 + 1.8 sin(2 pi x/{epsilon})), f = 1")


def piecewise_profile(a1=1.0, a2=10.0):
    """Coefficients (c1, c2) of psi = c1 (1-x) + c2 (1-x)^2 on x > 1/2 so that
    psi = x on x < 1/2 matches value and flux a psi' at x = 1/2."""
    r = a1 / a2
    return 2.0 + r, -2.0 - 2.0 * r


def _piecewise_case(a1=1.0, a2=10.0):
    c1, c2 = piecewise_profile(a1, a2)
    A = CoefficientField("piecewise-constant-on-grid", values=(a1, a2), grid=(2, 1))

    def psi(x):
        s = 1.0 - x
        return np.where(x < 0.5, x, c1 * s + c2 * s * s)

    def dpsi(x):
        return np.where(x < 0.5, 1.0, -c1 - 2.0 * c2 * (1.0 - x))

    def d2psi(x):
        return np.where(x < 0.5, 0.0, 2.0 * c2)

    def a(x):
        return np.where(x < 0.5, a1, a2)

    def u(x, y):
        return psi(x) * np.sin(PI * y)

    def grad(x, y):
        return np.stack([dpsi(x) * np.sin(PI * y), PI * psi(x) * np.cos(PI * y)], axis=-1)

    def f(x, y):
        return a(x) * (PI**2 * psi(x) - d2psi(x)) * np.sin(PI * y)

    return ManufacturedCase("piecewise", A, f, u, grad,
                            f"A = {a1} for x < 1/2 and {a2} for x > 1/2, flux-continuous u")


def manufactured_cases():
    return [_sine_case(), _oscillatory_case(), _piecewise_case()]


def get_case(name, **kwargs):
    builders = {"sine": _sine_case, "oscillatory": _oscillatory_case, "piecewise": _piecewise_case}
    if name not in builders:
        raise ConfigError(f"unknown case {name!r}; choose from {sorted(builders)}")
    return builders[name](**kwargs)


# --------------------------------------------------------------------------
# global conforming reference solver

# Degree-5 seven-point rule on the unit triangle (weights sum to 1/2).
_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
_W0, _W1, _W2 = 0.225, 0.132394152788506, 0.125939180544827
_Q7_PTS = np.array([
    [1 / 3, 1 / 3],
    [_B1, _B1], [_A1, _B1], [_B1, _A1],
    [_B2, _B2], [_A2, _B2], [_B2, _A2],
])
_Q7_W = 0.5 * np.array([_W0, _W1, _W1, _W1, _W2, _W2, _W2])


def _shape(p, xi, eta):
    """Reference P1/P2 shape values and gradients (independent of spaces.py)."""
    if p == 1:
        N = np.stack([1 - xi - eta, xi, eta], axis=-1)
        dN = np.broadcast_to(np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]), N.shape + (2,))
        return N, dN
    z = 1 - xi - eta
    N = np.stack([z * (2 * z - 1), xi * (2 * xi - 1), eta * (2 * eta - 1), 4 * xi * z, 4 * xi * eta, 4 * eta * z],
                 axis=-1)
    one = np.ones_like(xi)
    dx = np.stack([1 - 4 * z, 4 * xi - 1, 0 * one, 4 * (z - xi), 4 * eta, -4 * eta], axis=-1)
    dy = np.stack([1 - 4 * z, 0 * one, 4 * eta - 1, -4 * xi, 4 * xi, 4 * (z - eta)], axis=-1)
    return N, np.stack([dx, dy], axis=-1)


@dataclass(eq=False)
class ReferenceSolution:
    domain: Rectangle
    n: int
    p: int
    nodes: np.ndarray
    cells: np.ndarray
    u: np.ndarray
    K: sp.csr_matrix
    F: np.ndarray
    A: CoefficientField

    def _geometry(self):
        v = self.nodes[self.cells[:, :3]]
        J = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)
        return v[:, 0], J

    def energy(self):
        return float(self.u @ (self.K @ self.u))

    def load_work(self):
        return float(self.F @ self.u)

    def h1a_error(self, grad_exact):
        """sqrt(∫ A(∇u - ∇u_h)·(∇u - ∇u_h)) on the reference mesh."""
        x0, J = self._geometry()
        invJT = np.transpose(np.linalg.inv(J), (0, 2, 1))
        det = np.abs(np.linalg.det(J))
        _, dN = _shape(self.p, _Q7_PTS[:, 0], _Q7_PTS[:, 1])
        g = np.einsum("tij,qbj->tqbi", invJT, dN)
        gh = np.einsum("tb,tqbi->tqi", self.u[self.cells], g)
        xq = x0[:, None] + np.einsum("tij,qj->tqi", J, _Q7_PTS)
        e = np.asarray(grad_exact(xq[..., 0], xq[..., 1])) - gh
        Aq = self.A(xq[..., 0], xq[..., 1])
        return float(np.sqrt(np.sum(np.einsum("tqi,tqij,tqj->tq", e, Aq, e) * _Q7_W * det[:, None])))

    def evaluate(self, pts):
        """Point values by structured cell location."""
        return self._eval(pts)[0]

    def gradient(self, x, y):
        """Gradients (..., 2) at points given as coordinate arrays."""
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        g = self._eval(np.column_stack([x.ravel(), y.ravel()]))[1]
        return g.reshape(x.shape + (2,))

    def __call__(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        return self._eval(np.column_stack([x.ravel(), y.ravel()]))[0].reshape(x.shape)

    def _eval(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        d = self.domain
        hx, hy = (d.x1 - d.x0) / self.n, (d.y1 - d.y0) / self.n
        sx = (pts[:, 0] - d.x0) / hx
        sy = (pts[:, 1] - d.y0) / hy
        i = np.clip(np.floor(sx).astype(int), 0, self.n - 1)
        j = np.clip(np.floor(sy).astype(int), 0, self.n - 1)
        lx, ly = sx - i, sy - j
        upper = lx + ly > 1.0
        cell = 2 * (j * self.n + i) + upper
        x0, J = self._geometry()
        loc = np.einsum("tij,tj->ti", np.linalg.inv(J[cell]), pts - x0[cell])
        N, dN = _shape(self.p, loc[:, 0], loc[:, 1])
        uc = self.u[self.cells[cell]]
        invJT = np.transpose(np.linalg.inv(J[cell]), (0, 2, 1))
        grad = np.einsum("pij,pbj,pb->pi", invJT, dN, uc)
        return np.sum(N * uc, axis=1), grad

    def export_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["element", "x", "y", "u"])
            for c, cell in enumerate(self.cells):
                for node in cell[:3]:
                    x, y = self.nodes[node]
                    wr.writerow([c, f"{x:.17g}", f"{y:.17g}", f"{self.u[node]:.17g}"])


def solve_reference(domain, n, A, f, p=1):
    """Conforming P1/P2 Galerkin on a structured n x n grid of the rectangle
    (each cell cut by its anti-diagonal), homogeneous Dirichlet data."""
    if not isinstance(domain, Rectangle):
        domain = Rectangle(*domain)
    if p not in (1, 2):
        raise ConfigError("reference solver supports p = 1 or 2")
    xs = np.linspace(domain.x0, domain.x1, n + 1)
    ys = np.linspace(domain.y0, domain.y1, n + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    cells = []
    for j in range(n):
        for i in range(n):
            a = j * (n + 1) + i
            b, c, d = a + 1, a + n + 2, a + n + 1
            cells.append((a, b, d))
            cells.append((c, d, b))
    cells = np.array(cells, dtype=np.int64)
    if p == 2:
        pairs = np.sort(np.concatenate([cells[:, [0, 1]], cells[:, [1, 2]], cells[:, [2, 0]]]), axis=1)
        uniq, inv = np.unique(pairs, axis=0, return_inverse=True)
        inv = inv.ravel()
        nt = len(cells)
        nv = len(nodes)
        cells = np.column_stack([cells, nv + inv[:nt], nv + inv[nt:2 * nt], nv + inv[2 * nt:]])
        nodes = np.vstack([nodes, 0.5 * (nodes[uniq[:, 0]] + nodes[uniq[:, 1]])])
    nn = len(nodes)
    v = nodes[cells[:, :3]]
    J = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)
    det = np.abs(np.linalg.det(J))
    invJT = np.transpose(np.linalg.inv(J), (0, 2, 1))
    N, dN = _shape(p, _Q7_PTS[:, 0], _Q7_PTS[:, 1])
    g = np.einsum("tij,qbj->tqbi", invJT, dN)
    xq = v[:, 0][:, None] + np.einsum("tij,qj->tqi", J, _Q7_PTS)
    Aq = A(xq[..., 0], xq[..., 1])
    wq = _Q7_W[None] * det[:, None]
    Ke = np.einsum("tq,tqai,tqij,tqbj->tab", wq, g, Aq, g)
    fq = np.asarray(f(xq[..., 0], xq[..., 1]), dtype=float) * np.ones(xq.shape[:2])
    Fe = np.einsum("tq,qb->tb", fq * wq, N)
    nb = cells.shape[1]
    K = sp.csr_matrix((Ke.ravel(), (np.repeat(cells, nb, axis=1).ravel(), np.tile(cells, (1, nb)).ravel())),
                      shape=(nn, nn))
    F = np.zeros(nn)
    np.add.at(F, cells.ravel(), Fe.ravel())
    tol = 1e-12 * max(domain.x1 - domain.x0, domain.y1 - domain.y0)
    on_bd = ((np.abs(nodes[:, 0] - domain.x0) < tol) | (np.abs(nodes[:, 0] - domain.x1) < tol)
             | (np.abs(nodes[:, 1] - domain.y0) < tol) | (np.abs(nodes[:, 1] - domain.y1) < tol))
    free = np.nonzero(~on_bd)[0]
    u = np.zeros(nn)
    if np.any(F[free]):
        Kff = sp.csc_matrix(K[free][:, free])
        try:
            u[free] = spla.spsolve(Kff, F[free])
        except RuntimeError as exc:
            raise MH2MError("reference system is singular") from exc
    return ReferenceSolution(domain, n, p, nodes, cells, u, K, F, A)


# --------------------------------------------------------------------------
# MsFEM


@dataclass(eq=False)
class MsFEMSolution:
    rho: np.ndarray
    u_local: list
    system: SkeletonSystem


def harmonic_basis(cache, trace_space, K=None):
    """Discrete A-harmonic extensions of the local trace basis of an element."""
    V = cache.V
    P = cache.P if cache.P is not None else trace_interpolation(trace_space, cache.owner, V)
    ext = DirichletSolver(V, cache.K if K is None else K)
    return ext.extend(P[V.boundary_dofs])


def solve_msfem(trace_space, caches, f, method="direct"):
    """Galerkin solve on the space of A-harmonic extensions of skeleton traces."""
    n = trace_space.ndofs
    Kg = np.zeros((n, n))
    rhs = np.zeros(n)
    Hs = []
    for cache in caches:
        H = harmonic_basis(cache, trace_space)
        Hs.append(H)
        Kloc = H.T @ (cache.K @ H)
        F = cache.F if cache.F is not None else load_vector(cache.V, f)
        rloc = H.T @ F
        l2g = cache.local_to_global
        loc = np.nonzero(l2g >= 0)[0]
        glob = l2g[loc]
        np.add.at(Kg, (glob[:, None], glob[None, :]), Kloc[np.ix_(loc, loc)])
        np.add.at(rhs, glob, rloc[loc])
    system = SkeletonSystem(Kg, rhs, "msfem")
    rho, _ = solve_skeleton(system, method)
    u_local = [H @ trace_space.local_values(c.owner, rho) for H, c in zip(Hs, caches)]
    return MsFEMSolution(rho, u_local, system)


def linear_extension_deviation(cache, trace_space, coeffs):
    """H¹_A distance between the harmonic extension of the trace of an affine
    function and the function itself, on one element.

    ``coeffs = (c0, cx, cy)`` defines c0 + cx x + cy y.
    """
    c0, cx, cy = coeffs
    V = cache.V
    lin = c0 + cx * V.coords[:, 0] + cy * V.coords[:, 1]
    ext = DirichletSolver(V, cache.K).extend(lin[V.boundary_dofs])
    diff = ext - lin
    return float(np.sqrt(max(diff @ (cache.K @ diff), 0.0)))
