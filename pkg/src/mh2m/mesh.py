"""Coarse triangulation, nested face partitions and per-element submeshes.

Local edge ``le`` of triangle ``(v0, v1, v2)`` runs from ``v_le`` to
``v_{le+1}`` (counter-clockwise). Positions along an edge are given by a
parameter ``t`` in [0, 1]. Canonical orientation of a global edge is from
its lower to its higher vertex index; per-element views use the local
orientation.
"""
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import HierarchyError, MeshError

GEOM_TOL = 1e-12


@dataclass(frozen=True)
class Rectangle:
    x0: float = 0.0
    x1: float = 1.0
    y0: float = 0.0
    y1: float = 1.0

    @property
    def area(self):
        return (self.x1 - self.x0) * (self.y1 - self.y0)


@dataclass(frozen=True, eq=False)
class CoarseMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    edge_owners: tuple
    boundary: np.ndarray
    element_edges: np.ndarray
    element_edge_aligned: np.ndarray
    element_diameters: np.ndarray

    @property
    def N(self):
        return len(self.triangles)

    @classmethod
    def from_triangles(cls, vertices, triangles):
        vertices = np.asarray(vertices, dtype=float)
        triangles = np.array(triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2 or triangles.ndim != 2 or triangles.shape[1] != 3:
            raise MeshError("expected (n, 2) vertices and (m, 3) triangles")
        if len(triangles) == 0:
            raise MeshError("mesh has no triangles")
        if triangles.min() < 0 or triangles.max() >= len(vertices):
            raise MeshError("triangle index out of range")
        areas = _signed_areas(vertices, triangles)
        scale = np.ptp(vertices, axis=0).max() ** 2
        if np.any(np.abs(areas) <= 1e-14 * scale):
            bad = int(np.argmin(np.abs(areas)))
            raise MeshError(f"degenerate triangle {bad} (zero area)")
        flip = areas < 0
        triangles[flip] = triangles[flip][:, [0, 2, 1]]

        edge_index = {}
        edges = []
        owners = []
        element_edges = np.empty((len(triangles), 3), dtype=np.int64)
        aligned = np.empty((len(triangles), 3), dtype=bool)
        for t, tri in enumerate(triangles):
            for le in range(3):
                a, b = int(tri[le]), int(tri[(le + 1) % 3])
                key = (min(a, b), max(a, b))
                e = edge_index.get(key)
                if e is None:
                    e = edge_index[key] = len(edges)
                    edges.append(key)
                    owners.append([])
                owners[e].append((t, le))
                element_edges[t, le] = e
                aligned[t, le] = a < b
        edges = np.array(edges, dtype=np.int64)
        boundary = np.array([len(o) == 1 for o in owners])
        p = vertices[triangles]
        diam = np.max(
            np.stack([np.linalg.norm(p[:, i] - p[:, (i + 1) % 3], axis=1) for i in range(3)]), axis=0
        )
        return cls(
            vertices=vertices,
            triangles=triangles,
            edges=edges,
            edge_owners=tuple(tuple(o) for o in owners),
            boundary=boundary,
            element_edges=element_edges,
            element_edge_aligned=aligned,
            element_diameters=diam,
        )

    def corners(self, t):
        return self.vertices[self.triangles[t]]

    def area(self, t):
        return float(_signed_areas(self.vertices, self.triangles[t : t + 1])[0])

    def edge_length(self, e):
        a, b = self.edges[e]
        return float(np.linalg.norm(self.vertices[b] - self.vertices[a]))

    def local_edge_endpoints(self, t, le):
        tri = self.triangles[t]
        return self.vertices[tri[le]], self.vertices[tri[(le + 1) % 3]]

    def perimeter(self, t):
        p = self.corners(t)
        return float(sum(np.linalg.norm(p[(i + 1) % 3] - p[i]) for i in range(3)))

    @property
    def boundary_vertices(self):
        return np.unique(self.edges[self.boundary].ravel())


def _signed_areas(vertices, triangles):
    p = vertices[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def build_coarse_mesh(domain, target_H):
    """Structured triangulation of a rectangle, or a mesh read from file.

    ``domain`` is a :class:`Rectangle`, a sequence ``(x0, x1, y0, y1)``, or a
    path to a plain-text mesh file (``target_H`` is then ignored).
    """
    if isinstance(domain, (str, Path)):
        return read_mesh(domain)
    if not isinstance(domain, Rectangle):
        domain = Rectangle(*map(float, domain))
    if not target_H > 0:
        raise MeshError(f"target_H must be positive, got {target_H}")
    lx, ly = domain.x1 - domain.x0, domain.y1 - domain.y0
    if not (lx > 0 and ly > 0) or not math.isfinite(lx * ly):
        raise MeshError(f"degenerate rectangle {domain}: width and height must be positive")
    nx = max(1, math.ceil(lx / target_H - 1e-9))
    ny = max(1, math.ceil(ly / target_H - 1e-9))
    xs = np.linspace(domain.x0, domain.x1, nx + 1)
    ys = np.linspace(domain.y0, domain.y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    tris = []
    for j in range(ny):
        for i in range(nx):
            a = j * (nx + 1) + i
            b, c, d = a + 1, a + nx + 2, a + nx + 1
            tris.append((a, b, c))
            tris.append((a, c, d))
    return CoarseMesh.from_triangles(vertices, tris)


def read_mesh(path):
    """Read the plain-text mesh format written by :func:`write_mesh`."""
    lines = [ln.split("#", 1)[0].strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    try:
        head, nv = lines[0].split()
        if head != "vertices":
            raise ValueError("missing 'vertices' header")
        nv = int(nv)
        verts = [list(map(float, ln.split())) for ln in lines[1 : 1 + nv]]
        head, nt = lines[1 + nv].split()
        if head != "triangles":
            raise ValueError("missing 'triangles' header")
        nt = int(nt)
        tris = [list(map(int, ln.split())) for ln in lines[2 + nv : 2 + nv + nt]]
        if len(verts) != nv or len(tris) != nt:
            raise ValueError("truncated file")
    except (ValueError, IndexError) as exc:
        raise MeshError(f"cannot parse mesh file {path}: {exc}") from exc
    return CoarseMesh.from_triangles(verts, tris)


def write_mesh(mesh, path):
    out = [f"vertices {len(mesh.vertices)}"]
    out += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    out.append(f"triangles {len(mesh.triangles)}")
    out += [f"{a} {b} {c}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(out) + "\n")


def mesh_summary(mesh, partition=None, submeshes=None):
    summary = {
        "vertices": int(len(mesh.vertices)),
        "triangles": int(mesh.N),
        "edges": int(len(mesh.edges)),
        "boundary_edges": int(mesh.boundary.sum()),
        "H": float(mesh.element_diameters.max()),
    }
    if partition is not None:
        summary["H_Gamma"] = partition.H_Gamma
        summary["H_Lambda"] = partition.H_Lambda
    if submeshes:
        summary["h"] = float(max(s.h for s in submeshes))
        summary["fine_triangles"] = int(sum(len(s.triangles) for s in submeshes))
    return summary


def write_mesh_summary(summary, path):
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# face partitions


def _local_view(canonical, aligned):
    canonical = np.asarray(canonical, dtype=float)
    return canonical.copy() if aligned else 1.0 - canonical[::-1]


@dataclass(frozen=True, eq=False)
class FacePartition:
    mesh: CoarseMesh
    n_gamma: int
    n_lambda_per_gamma: int
    gamma_segments: tuple
    lambda_segments: tuple
    gamma_views: tuple
    lambda_views: tuple
    H_Gamma: float
    H_Lambda: float

    def interior_breakpoints(self, e, level="lambda"):
        segs = self.lambda_segments if level == "lambda" else self.gamma_segments
        return segs[e][1:-1]

    def element_lambda_lengths(self, t):
        """Physical lengths of the Lambda-segments on each local edge of t."""
        out = []
        for le in range(3):
            a, b = self.mesh.local_edge_endpoints(t, le)
            out.append(np.diff(self.lambda_views[t][le]) * np.linalg.norm(b - a))
        return out


def partition_faces(mesh, n_gamma, n_lambda_per_gamma):
    """Uniform Gamma split of every coarse edge, each Gamma-segment refined
    into ``n_lambda_per_gamma`` Lambda-segments."""
    if int(n_gamma) < 1 or int(n_lambda_per_gamma) < 1:
        raise MeshError("n_gamma and n_lambda_per_gamma must be >= 1")
    n_gamma, n_lam = int(n_gamma), int(n_lambda_per_gamma)
    gamma = np.linspace(0.0, 1.0, n_gamma + 1)
    lam = np.linspace(0.0, 1.0, n_gamma * n_lam + 1)
    # exact nesting: reuse the coarse breakpoints inside the fine list
    lam[::n_lam] = gamma
    gamma_segments = tuple(gamma.copy() for _ in range(len(mesh.edges)))
    lambda_segments = tuple(lam.copy() for _ in range(len(mesh.edges)))
    gviews, lviews = [], []
    for t in range(mesh.N):
        g, l = [], []
        for le in range(3):
            e = mesh.element_edges[t, le]
            al = bool(mesh.element_edge_aligned[t, le])
            g.append(_local_view(gamma_segments[e], al))
            l.append(_local_view(lambda_segments[e], al))
        gviews.append(tuple(g))
        lviews.append(tuple(l))
    lengths = np.array([mesh.edge_length(e) for e in range(len(mesh.edges))])
    return FacePartition(
        mesh=mesh,
        n_gamma=n_gamma,
        n_lambda_per_gamma=n_lam,
        gamma_segments=gamma_segments,
        lambda_segments=lambda_segments,
        gamma_views=tuple(gviews),
        lambda_views=tuple(lviews),
        H_Gamma=float(lengths.max() / n_gamma),
        H_Lambda=float(lengths.max() / (n_gamma * n_lam)),
    )


# --------------------------------------------------------------------------
# submeshes


@dataclass(frozen=True, eq=False)
class SubMesh:
    owner: int
    vertices: np.ndarray
    triangles: np.ndarray
    h: float
    divisions: int
    corners: np.ndarray
    boundary_edges: np.ndarray
    boundary_local_edge: np.ndarray
    boundary_t: np.ndarray
    boundary_trace: np.ndarray = field(repr=False)

    @property
    def area(self):
        return float(_signed_areas(self.vertices, self.triangles).sum())


def _lattice_index(m):
    idx = {}
    n = 0
    for j in range(m + 1):
        for i in range(m + 1 - j):
            idx[i, j] = n
            n += 1
    return idx


def required_divisions(partition, t, target_h):
    """Uniform subdivision count of element t so that fine diameters are
    at most ``target_h`` and the Lambda breakpoints are lattice points."""
    views = partition.lambda_views[t]
    nseg = {len(v) - 1 for v in views}
    if len(nseg) != 1:
        raise HierarchyError(f"element {t}: edges carry different numbers of Lambda-segments")
    nseg = nseg.pop()
    for le, v in enumerate(views):
        if np.max(np.abs(v - np.linspace(0, 1, nseg + 1))) > GEOM_TOL:
            raise HierarchyError(f"element {t}, edge {le}: structured submesh needs a uniform Lambda split")
    local_H_lambda = max(float(l.max()) for l in partition.element_lambda_lengths(t))
    per_segment = max(1, math.ceil(local_H_lambda / target_h - 1e-9))
    return nseg, per_segment, local_H_lambda


def build_submesh(mesh, t, partition, target_h, *, enforce_m1=True, divisions=None):
    """Uniform subdivision of coarse triangle ``t`` seeded by its Lambda
    breakpoints.

    With ``enforce_m1`` the precondition ``target_h <= H_Lambda / 2`` is
    checked, which guarantees at least two fine boundary edges per
    Lambda-segment. ``divisions`` overrides the computed subdivision count
    (used for reference submeshes).
    """
    if not target_h > 0:
        raise MeshError("target_h must be positive")
    nseg, per_segment, local_H_lambda = required_divisions(partition, t, target_h)
    if divisions is None:
        m = nseg * per_segment
    else:
        m = int(divisions)
        if m % nseg:
            raise HierarchyError(f"element {t}: {m} divisions do not contain the {nseg} Lambda-segments")
        per_segment = m // nseg
    if enforce_m1 and (target_h > 0.5 * local_H_lambda * (1 + 1e-12) or per_segment < 2):
        raise HierarchyError(
            f"element {t}, local edge 0, Lambda-segment 0: target_h={target_h:.6g} exceeds "
            f"H_Lambda/2={0.5 * local_H_lambda:.6g}; (M1) needs >= 2 fine edges per segment"
        )
    corners = mesh.corners(t)
    v0, e1, e2 = corners[0], corners[1] - corners[0], corners[2] - corners[0]
    idx = _lattice_index(m)
    ij = np.array(sorted(idx, key=idx.get), dtype=float)
    verts = v0 + np.outer(ij[:, 0] / m, e1) + np.outer(ij[:, 1] / m, e2)
    tris = []
    for j in range(m):
        for i in range(m - j):
            tris.append((idx[i, j], idx[i + 1, j], idx[i, j + 1]))
            if i < m - 1 - j:
                tris.append((idx[i + 1, j], idx[i + 1, j + 1], idx[i, j + 1]))
    tris = np.array(tris, dtype=np.int64)

    bedges, ble, bt = [], [], []
    for s in range(m):
        bedges.append((idx[s, 0], idx[s + 1, 0]))
        ble.append(0)
        bt.append((s / m, (s + 1) / m))
    for s in range(m):
        bedges.append((idx[m - s, s], idx[m - s - 1, s + 1]))
        ble.append(1)
        bt.append((s / m, (s + 1) / m))
    for s in range(m):
        bedges.append((idx[0, m - s], idx[0, m - s - 1]))
        ble.append(2)
        bt.append((s / m, (s + 1) / m))
    bt = np.array(bt)
    ble = np.array(ble, dtype=np.int64)
    trace = np.full(len(bedges), -1, dtype=np.int64)
    for n, (le, (a, b)) in enumerate(zip(ble, bt)):
        brk = partition.lambda_views[t][le]
        s = int(np.searchsorted(brk, 0.5 * (a + b)) - 1)
        if brk[s] - GEOM_TOL <= a and b <= brk[s + 1] + GEOM_TOL:
            trace[n] = s
    edge_len = max(np.linalg.norm(e1), np.linalg.norm(e2), np.linalg.norm(corners[2] - corners[1]))
    return SubMesh(
        owner=int(t),
        vertices=verts,
        triangles=tris,
        h=float(edge_len / m),
        divisions=m,
        corners=corners.copy(),
        boundary_edges=np.array(bedges, dtype=np.int64),
        boundary_local_edge=ble,
        boundary_t=bt,
        boundary_trace=trace,
    )


def refine_submesh(mesh, partition, sub, factor):
    """Nested refinement of a structured submesh by an integer factor."""
    return build_submesh(mesh, sub.owner, partition, sub.h / factor, enforce_m1=False,
                         divisions=sub.divisions * int(factor))


# --------------------------------------------------------------------------
# validation


@dataclass
class Check:
    name: str
    passed: bool
    details: list = field(default_factory=list)


@dataclass
class HierarchyReport:
    checks: list

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def raise_if_failed(self):
        bad = self.failures()
        if bad:
            msg = "; ".join(f"{c.name}: {c.details[0] if c.details else 'failed'}" for c in bad)
            raise HierarchyError(f"hierarchy validation failed: {msg}")

    def as_dict(self):
        return {c.name: {"passed": c.passed, "details": c.details[:20]} for c in self.checks}


def _fine_boundary_edges(sub):
    count = {}
    for tri in sub.triangles:
        for i in range(3):
            a, b = int(tri[i]), int(tri[(i + 1) % 3])
            key = (min(a, b), max(a, b))
            count[key] = count.get(key, 0) + 1
    return [k for k, c in count.items() if c == 1]


def _project_on_edges(corners, p):
    """(local edge, t, distance) of the closest coarse edge to point p."""
    best = None
    for le in range(3):
        a, b = corners[le], corners[(le + 1) % 3]
        d = b - a
        L2 = d @ d
        t = float((p - a) @ d / L2)
        dist = float(np.linalg.norm(a + t * d - p) / math.sqrt(L2))
        if best is None or dist < best[2]:
            best = (le, t, dist)
    return best


def validate_hierarchy(mesh, partition, submeshes):
    """Pass/fail report on mesh conformity, face nesting and (M1)."""
    checks = []

    areas = _signed_areas(mesh.vertices, mesh.triangles)
    checks.append(Check("mesh.positive_area", bool(np.all(areas > 0)),
                        [f"triangle {t} area {a:.3g}" for t, a in enumerate(areas) if a <= 0]))

    bad = []
    for e, own in enumerate(mesh.edge_owners):
        if len(own) > 2:
            bad.append(f"edge {e} shared by {len(own)} triangles")
        elif len(own) == 2:
            (t1, l1), (t2, l2) = own
            if mesh.element_edge_aligned[t1, l1] == mesh.element_edge_aligned[t2, l2]:
                bad.append(f"edge {e}: inconsistent orientation in triangles {t1}, {t2}")
    checks.append(Check("mesh.conformity", not bad, bad))

    deg = {}
    for a, b in mesh.edges[mesh.boundary]:
        deg[a] = deg.get(a, 0) + 1
        deg[b] = deg.get(b, 0) + 1
    bad = [f"boundary vertex {v} has {d} boundary edges" for v, d in deg.items() if d % 2]
    checks.append(Check("mesh.boundary_loops", bool(deg) and not bad, bad or ([] if deg else ["no boundary"])))

    bad = []
    for e, own in enumerate(mesh.edge_owners):
        if len(own) != 2:
            continue
        pts = []
        for t, le in own:
            a, b = mesh.local_edge_endpoints(t, le)
            views = (partition.gamma_views[t][le], partition.lambda_views[t][le])
            pts.append([np.sort(a[None] + np.outer(v, b - a), axis=0) for v in views])
        L = mesh.edge_length(e)
        for level, p1, p2 in zip(("Gamma", "Lambda"), pts[0], pts[1]):
            if p1.shape != p2.shape:
                bad.append(f"edge {e}: {level} breakpoint counts differ ({len(p1)} vs {len(p2)})")
                continue
            p1 = p1[np.lexsort(p1.T[::-1])]
            p2 = p2[np.lexsort(p2.T[::-1])]
            if np.max(np.linalg.norm(p1 - p2, axis=1)) > GEOM_TOL * L:
                bad.append(f"edge {e}: {level} breakpoints differ between triangles {own[0][0]} and {own[1][0]}")
    checks.append(Check("faces.conformity", not bad, bad))

    bad = []
    for t in range(mesh.N):
        for le in range(3):
            g = partition.gamma_views[t][le]
            lam = partition.lambda_views[t][le]
            for s in range(len(lam) - 1):
                inside = np.sum((g[:-1] <= lam[s] + GEOM_TOL) & (lam[s + 1] <= g[1:] + GEOM_TOL))
                if inside != 1:
                    bad.append(f"element {t}, edge {le}: Lambda-segment {s} lies in {inside} Gamma-segments")
            for x in g:
                if np.min(np.abs(lam - x)) > GEOM_TOL:
                    bad.append(f"element {t}, edge {le}: Gamma breakpoint {x:.6g} not a Lambda breakpoint")
    if not (partition.H_Lambda <= partition.H_Gamma * (1 + GEOM_TOL)
            and partition.H_Gamma <= mesh.element_diameters.max() * (1 + GEOM_TOL)):
        bad.append(f"H_Lambda={partition.H_Lambda:.6g} <= H_Gamma={partition.H_Gamma:.6g} <= H violated")
    checks.append(Check("faces.nesting", not bad, bad))

    cover, m1 = [], []
    subs = list(submeshes)
    if len(subs) != mesh.N:
        cover.append(f"{len(subs)} submeshes for {mesh.N} elements")
    for sub in subs:
        t = sub.owner
        fa = _signed_areas(sub.vertices, sub.triangles)
        if np.any(fa <= 0):
            cover.append(f"element {t}: non-positive fine triangle area")
        A = mesh.area(t)
        if abs(fa.sum() - A) > GEOM_TOL * A:
            cover.append(f"element {t}: fine area {fa.sum():.15g} != coarse area {A:.15g}")
        corners = mesh.corners(t)
        per_edge = {0: [], 1: [], 2: []}
        fine_pts = {0: [], 1: [], 2: []}
        for a, b in _fine_boundary_edges(sub):
            pa, pb = sub.vertices[a], sub.vertices[b]
            la, ta, da = _project_on_edges(corners, pa)
            lb, tb, db = _project_on_edges(corners, pb)
            mid = _project_on_edges(corners, 0.5 * (pa + pb))
            le = mid[0]
            if mid[2] > GEOM_TOL:
                cover.append(f"element {t}: fine boundary edge ({a},{b}) off the coarse boundary")
                continue
            ta = _param_on(corners, le, pa)
            tb = _param_on(corners, le, pb)
            per_edge[le].append((min(ta, tb), max(ta, tb)))
            fine_pts[le].extend([ta, tb])
        for le in range(3):
            brk = partition.lambda_views[t][le]
            pts = np.array(fine_pts[le]) if fine_pts[le] else np.zeros(0)
            for x in brk:
                if pts.size == 0 or np.min(np.abs(pts - x)) > GEOM_TOL:
                    m1.append(f"element {t}, edge {le}: Lambda breakpoint t={x:.6g} is not a fine vertex")
            ivals = sorted(per_edge[le])
            for s in range(len(brk) - 1):
                lo, hi = brk[s], brk[s + 1]
                inside = [iv for iv in ivals if iv[0] >= lo - GEOM_TOL and iv[1] <= hi + GEOM_TOL]
                covered = _covers(inside, lo, hi)
                if len(inside) < 2 or not covered:
                    m1.append(f"element {t}, edge {le}, Lambda-segment {s}: {len(inside)} fine boundary "
                              f"edges{'' if covered else ', union does not equal the segment'}")
    checks.append(Check("submesh.cover", not cover, cover))
    checks.append(Check("submesh.m1", not m1, m1))
    return HierarchyReport(checks)


def _param_on(corners, le, p):
    a, b = corners[le], corners[(le + 1) % 3]
    d = b - a
    return float((p - a) @ d / (d @ d))


def _covers(intervals, lo, hi):
    x = lo
    for a, b in sorted(intervals):
        if a > x + GEOM_TOL:
            return False
        x = max(x, b)
    return x >= hi - GEOM_TOL
