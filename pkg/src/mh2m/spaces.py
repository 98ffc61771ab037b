"""Discrete spaces: skeleton traces, per-element multipliers and local
Lagrange spaces on submeshes, plus the boundary pairing between them."""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, MH2MError
from .quadrature import gauss_interval

SUPPORTED_K = (0, 1)


def _check_k(k):
    if k not in SUPPORTED_K:
        raise ConfigError(f"unsupported k={k}; only k in {SUPPORTED_K}")


def lagrange_1d(p, s):
    """Equispaced Lagrange basis of degree p on [0, 1], columns in node order."""
    s = np.asarray(s, dtype=float)
    if p == 0:
        return np.ones((s.size, 1))
    if p == 1:
        return np.column_stack([1.0 - s, s])
    if p == 2:
        return np.column_stack([(1.0 - s) * (1.0 - 2.0 * s), 4.0 * s * (1.0 - s), s * (2.0 * s - 1.0)])
    raise ValueError(f"degree {p} not supported")


def _locate(breaks, t):
    """Segment index of each t in a sorted breakpoint list, plus local coordinate."""
    t = np.asarray(t, dtype=float)
    s = np.clip(np.searchsorted(breaks, t, side="right") - 1, 0, len(breaks) - 2)
    lo, hi = breaks[s], breaks[s + 1]
    return s, (t - lo) / (hi - lo)


# --------------------------------------------------------------------------
# skeleton trace space


class TraceSpace:
    """Continuous P_{k+1} functions on the Gamma-segments, zero on the
    domain boundary.

    Global dofs: interior coarse vertices first, then the interior nodes of
    interior coarse edges in canonical order. Each element sees
    ``3 * n_gamma * (k+1)`` local nodes, listed edge by edge from the start
    vertex of the local edge.
    """

    def __init__(self, mesh, partition, k):
        _check_k(k)
        self.mesh = mesh
        self.partition = partition
        self.k = k
        self.p = p = k + 1
        ng = partition.n_gamma
        self.nodes_per_edge = ng * p

        bverts = set(mesh.boundary_vertices.tolist())
        vdof = {}
        coords = []
        for v in range(len(mesh.vertices)):
            if v not in bverts:
                vdof[v] = len(coords)
                coords.append(mesh.vertices[v])
        edof = {}
        for e, (a, b) in enumerate(mesh.edges):
            if mesh.boundary[e]:
                continue
            tq = self._canonical_node_t(e)
            for q in range(1, self.nodes_per_edge):
                edof[e, q] = len(coords)
                coords.append(mesh.vertices[a] + tq[q] * (mesh.vertices[b] - mesh.vertices[a]))
        self.ndofs = len(coords)
        self.dof_coords = np.array(coords).reshape(-1, 2)
        self.vertex_dofs = vdof

        nloc = 3 * self.nodes_per_edge
        self.nloc = nloc
        l2g = np.full((mesh.N, nloc), -1, dtype=np.int64)
        for t in range(mesh.N):
            tri = mesh.triangles[t]
            for le in range(3):
                e = mesh.element_edges[t, le]
                al = bool(mesh.element_edge_aligned[t, le])
                base = le * self.nodes_per_edge
                l2g[t, base] = vdof.get(int(tri[le]), -1)
                for j in range(1, self.nodes_per_edge):
                    q = j if al else self.nodes_per_edge - j
                    l2g[t, base + j] = edof.get((e, q), -1)
        self.local_to_global = l2g

    def _canonical_node_t(self, e):
        g = self.partition.gamma_segments[e]
        return _segment_nodes(g, self.p)

    def local_node_positions(self, t):
        """(local edge, t) of every local node of element t."""
        le_out, t_out = [], []
        for le in range(3):
            tn = _segment_nodes(self.partition.gamma_views[t][le], self.p)[:-1]
            le_out.extend([le] * len(tn))
            t_out.extend(tn)
        return np.array(le_out), np.array(t_out)

    def local_basis(self, t, le, tvals):
        """Values of the local nodal basis of element t at points of local edge le."""
        tvals = np.asarray(tvals, dtype=float)
        g = self.partition.gamma_views[t][le]
        s, loc = _locate(g, tvals)
        vals = lagrange_1d(self.p, loc)
        out = np.zeros((tvals.size, self.nloc))
        base = le * self.nodes_per_edge
        for r in range(self.p + 1):
            col = (base + s * self.p + r) % self.nloc
            np.add.at(out, (np.arange(tvals.size), col), vals[:, r])
        return out

    def local_values(self, t, rho):
        """Local nodal values on element t of a global coefficient vector."""
        l2g = self.local_to_global[t]
        out = np.zeros(self.nloc)
        mask = l2g >= 0
        out[mask] = np.asarray(rho)[l2g[mask]]
        return out

    def global_basis_local(self, t):
        """(local index, global dof) pairs of the nonzero basis functions on t."""
        l2g = self.local_to_global[t]
        idx = np.nonzero(l2g >= 0)[0]
        return idx, l2g[idx]

    def evaluate(self, rho, t, le, tvals):
        return self.local_basis(t, le, tvals) @ self.local_values(t, rho)


def _segment_nodes(breaks, p):
    out = [breaks[0]]
    for s in range(len(breaks) - 1):
        lo, hi = breaks[s], breaks[s + 1]
        out.extend(lo + (hi - lo) * np.arange(1, p + 1) / p)
    out[-1] = breaks[-1]
    return np.array(out)


def build_trace_space(mesh, partition, k):
    return TraceSpace(mesh, partition, k)


# --------------------------------------------------------------------------
# multipliers


class MultiplierBlock:
    """Discontinuous nodal P_k functions on the Lambda-segments of one ∂τ.

    Dofs are ordered by local edge, segment and node. For k=1 the two nodes sit
    at the segment endpoints.
    """

    def __init__(self, owner, corners, views, k):
        self.owner = int(owner)
        self.k = int(k)
        self.corners = np.asarray(corners, dtype=float)
        self.views = tuple(np.asarray(v, dtype=float) for v in views)
        self.edge_lengths = np.array(
            [np.linalg.norm(self.corners[(le + 1) % 3] - self.corners[le]) for le in range(3)]
        )
        self.nseg = np.array([len(v) - 1 for v in self.views])
        self.offsets = np.concatenate([[0], np.cumsum(self.nseg * (k + 1))])
        self.ndofs = int(self.offsets[-1])
        w = []
        for le in range(3):
            L = np.diff(self.views[le]) * self.edge_lengths[le]
            w.append(np.repeat(L / (k + 1), k + 1))
        self.w = np.concatenate(w)
        self.perimeter = float(self.w.sum())
        n = self.ndofs
        self.Z = (np.eye(n) - np.outer(np.ones(n), self.w) / self.perimeter)[:, : n - 1]
        self.ones = np.ones(n)

    @classmethod
    def for_element(cls, partition, t, k):
        return cls(t, partition.mesh.corners(t), partition.lambda_views[t], k)

    @property
    def zero_mean_dim(self):
        return self.ndofs - 1

    def dof(self, le, s, r=0):
        return int(self.offsets[le] + s * (self.k + 1) + r)

    def basis(self, le, tvals):
        """(len(tvals), ndofs) values at points of local edge le."""
        tvals = np.asarray(tvals, dtype=float)
        s, loc = _locate(self.views[le], tvals)
        vals = lagrange_1d(self.k, loc)
        out = np.zeros((tvals.size, self.ndofs))
        rows = np.arange(tvals.size)
        for r in range(self.k + 1):
            out[rows, self.offsets[le] + s * (self.k + 1) + r] = vals[:, r]
        return out

    def point(self, le, tvals):
        a = self.corners[le]
        b = self.corners[(le + 1) % 3]
        return a[None] + np.outer(np.asarray(tvals, dtype=float), b - a)

    def integrate_against(self, g, npoints=8):
        """Vector of ∫_{∂τ} g λ_i for a callable g(x, y)."""
        xg, wg = gauss_interval(npoints)
        out = np.zeros(self.ndofs)
        for le in range(3):
            v = self.views[le]
            for s in range(len(v) - 1):
                tq = v[s] + (v[s + 1] - v[s]) * xg
                p = self.point(le, tq)
                gv = np.asarray(g(p[:, 0], p[:, 1]), dtype=float) * np.ones(len(tq))
                L = (v[s + 1] - v[s]) * self.edge_lengths[le]
                out += (wg * gv * L) @ self.basis(le, tq)
        return out

    def interpolate(self, g):
        """Nodal interpolant of a callable g(x, y) (values at segment nodes)."""
        out = np.zeros(self.ndofs)
        for le in range(3):
            v = self.views[le]
            for s in range(len(v) - 1):
                if self.k == 0:
                    tn = [0.5 * (v[s] + v[s + 1])]
                else:
                    tn = [v[s], v[s + 1]]
                p = self.point(le, tn)
                out[self.dof(le, s): self.dof(le, s) + self.k + 1] = g(p[:, 0], p[:, 1])
        return out


@dataclass
class MultiplierSpace:
    k: int
    blocks: list

    @property
    def ndofs(self):
        return sum(b.ndofs for b in self.blocks)


def build_multiplier_space(partition, k):
    _check_k(k)
    return MultiplierSpace(k, [MultiplierBlock.for_element(partition, t, k) for t in range(partition.mesh.N)])


# --------------------------------------------------------------------------
# local Lagrange spaces


def reference_basis(p, pts):
    """Values (nq, nb) and reference gradients (nq, nb, 2) on the unit triangle."""
    pts = np.atleast_2d(pts)
    xi, eta = pts[:, 0], pts[:, 1]
    l0, l1, l2 = 1.0 - xi - eta, xi, eta
    gl = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    if p == 1:
        vals = np.column_stack([l0, l1, l2])
        grads = np.broadcast_to(gl, (len(xi), 3, 2)).copy()
        return vals, grads
    if p == 2:
        lam = [l0, l1, l2]
        vals = [lam[i] * (2 * lam[i] - 1) for i in range(3)]
        grads = [np.outer(4 * lam[i] - 1, gl[i]) for i in range(3)]
        for a, b in ((0, 1), (1, 2), (2, 0)):
            vals.append(4 * lam[a] * lam[b])
            grads.append(4 * (np.outer(lam[a], gl[b]) + np.outer(lam[b], gl[a])))
        return np.column_stack(vals), np.stack(grads, axis=1)
    raise ValueError(f"degree {p} not supported")


class LocalSpaceV:
    """Continuous P_{k+1} Lagrange space on the submesh of one element.

    P2 midpoint dofs are numbered after the vertices.
    """

    def __init__(self, submesh, k):
        _check_k(k)
        self.submesh = submesh
        self.owner = submesh.owner
        self.k = k
        self.p = p = k + 1
        verts, tris = submesh.vertices, submesh.triangles
        nv = len(verts)
        if p == 1:
            self.cell_dofs = tris.copy()
            coords = verts
            edge_mid = None
        else:
            keys = np.sort(np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]]), axis=1)
            uniq, inv = np.unique(keys, axis=0, return_inverse=True)
            inv = inv.ravel()
            nt = len(tris)
            mids = nv + np.column_stack([inv[:nt], inv[nt: 2 * nt], inv[2 * nt:]])
            self.cell_dofs = np.column_stack([tris, mids])
            coords = np.vstack([verts, 0.5 * (verts[uniq[:, 0]] + verts[uniq[:, 1]])])
            edge_mid = {(int(a), int(b)): nv + i for i, (a, b) in enumerate(uniq)}
        self.coords = coords
        self.ndofs = len(coords)

        x0 = verts[tris[:, 0]]
        J = np.stack([verts[tris[:, 1]] - x0, verts[tris[:, 2]] - x0], axis=2)
        self.x0 = x0
        self.J = J
        self.detJ = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        self.invJT = np.transpose(np.linalg.inv(J), (0, 2, 1))

        bedges = submesh.boundary_edges
        if p == 1:
            self.boundary_edge_dofs = bedges.copy()
        else:
            mid = [edge_mid[(min(a, b), max(a, b))] for a, b in bedges]
            self.boundary_edge_dofs = np.column_stack([bedges[:, 0], mid, bedges[:, 1]])
        self.boundary_edge_le = submesh.boundary_local_edge
        self.boundary_edge_t = submesh.boundary_t
        self.boundary_edge_lengths = np.linalg.norm(verts[bedges[:, 1]] - verts[bedges[:, 0]], axis=1)

        pos = {}
        for dofs, le, (t0, t1) in zip(self.boundary_edge_dofs, self.boundary_edge_le, self.boundary_edge_t):
            for d, s in zip(dofs, np.linspace(0.0, 1.0, p + 1)):
                pos.setdefault(int(d), (int(le), t0 + s * (t1 - t0)))
        self.boundary_dofs = np.array(sorted(pos), dtype=np.int64)
        self.boundary_dof_le = np.array([pos[d][0] for d in self.boundary_dofs], dtype=np.int64)
        self.boundary_dof_t = np.array([pos[d][1] for d in self.boundary_dofs])
        mask = np.ones(self.ndofs, dtype=bool)
        mask[self.boundary_dofs] = False
        self.interior_dofs = np.nonzero(mask)[0]

        m = np.zeros(self.ndofs)
        edge_w = np.array([0.5, 0.5]) if p == 1 else np.array([1.0, 4.0, 1.0]) / 6.0
        for dofs, L in zip(self.boundary_edge_dofs, self.boundary_edge_lengths):
            m[dofs] += L * edge_w
        self.boundary_mean = m

    @property
    def M(self):
        """Dimension of the zero-boundary-mean subspace."""
        return self.ndofs - 1

    def physical_points(self, ref_pts):
        """(nt, nq, 2) images of reference points in every fine triangle."""
        return self.x0[:, None, :] + np.einsum("tij,qj->tqi", self.J, ref_pts)

    def tabulate(self, ref_pts):
        """Basis values (nq, nb) and physical gradients (nt, nq, nb, 2)."""
        vals, rgrads = reference_basis(self.p, ref_pts)
        grads = np.einsum("tij,qbj->tqbi", self.invJT, rgrads)
        return vals, grads

    def interpolate(self, g):
        return np.asarray(g(self.coords[:, 0], self.coords[:, 1]), dtype=float) * np.ones(self.ndofs)

    def evaluate_cells(self, u, ref_pts):
        """Values (nt, nq) and gradients (nt, nq, 2) of a coefficient vector."""
        vals, grads = self.tabulate(ref_pts)
        uc = np.asarray(u)[self.cell_dofs]
        return uc @ vals.T, np.einsum("tb,tqbi->tqi", uc, grads)


def build_local_space(submesh, k):
    return LocalSpaceV(submesh, k)


# --------------------------------------------------------------------------
# pairings


def pairing_matrix(block, V, npoints=None):
    """B[i, q] = ∫_{∂τ} λ_i φ_q over every fine boundary edge.

    Each fine edge is split at the multiplier breakpoints it contains, so the
    rule is exact for any nesting of the two boundary partitions.
    """
    if block.owner != V.owner:
        raise MH2MError(f"multiplier block of element {block.owner} paired with space of element {V.owner}")
    if npoints is None:
        npoints = block.k + 2
    xg, wg = gauss_interval(npoints)
    B = np.zeros((block.ndofs, V.ndofs))
    for dofs, le, (t0, t1), L in zip(V.boundary_edge_dofs, V.boundary_edge_le, V.boundary_edge_t,
                                     V.boundary_edge_lengths):
        brk = block.views[le]
        inner = brk[(brk > t0 + 1e-14) & (brk < t1 - 1e-14)]
        cuts = np.concatenate([[t0], inner, [t1]])
        for a, b in zip(cuts[:-1], cuts[1:]):
            tq = a + (b - a) * xg
            phi = lagrange_1d(V.p, (tq - t0) / (t1 - t0))
            lam = block.basis(le, tq)
            wq = wg * L * (b - a) / (t1 - t0)
            B[:, dofs] += (lam * wq[:, None]).T @ phi
    return B


def pair_multiplier_trace(block, mu, v, space=None, npoints=8):
    """⟨μ, v⟩ on ∂τ for a multiplier coefficient vector μ.

    ``v`` is either a callable g(x, y) or a coefficient vector of ``space``
    (a :class:`LocalSpaceV` of the same element).
    """
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (block.ndofs,):
        raise MH2MError(f"multiplier vector of size {mu.size} does not match block of size {block.ndofs}")
    if callable(v):
        return float(mu @ block.integrate_against(v, npoints))
    if space is None:
        raise MH2MError("coefficient trace needs its local space")
    if space.owner != block.owner:
        raise MH2MError(f"multiplier on element {block.owner} paired with trace on element {space.owner}")
    return float(mu @ pairing_matrix(block, space) @ np.asarray(v, dtype=float))


def trace_interpolation(trace_space, t, V):
    """Matrix P mapping local trace nodal values of element t to V dofs
    (boundary rows only; interior rows are zero)."""
    P = np.zeros((V.ndofs, trace_space.nloc))
    for le in range(3):
        sel = V.boundary_dof_le == le
        P[V.boundary_dofs[sel]] = trace_space.local_basis(t, le, V.boundary_dof_t[sel])
    return P
