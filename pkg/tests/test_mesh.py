import dataclasses

import numpy as np
import pytest

from conftest import UNIT_SQUARE, right_triangle_mesh
from mh2m.errors import HierarchyError, MeshError
from mh2m.mesh import (CoarseMesh, build_coarse_mesh, build_submesh, partition_faces, read_mesh,
                       validate_hierarchy, write_mesh)


def fine_edges_per_segment(sub, partition):
    """Count fine boundary edges inside each Lambda-segment, per local edge."""
    counts = []
    for le in range(3):
        nseg = len(partition.lambda_views[sub.owner][le]) - 1
        sel = (sub.boundary_local_edge == le) & (sub.boundary_trace >= 0)
        counts.append(np.bincount(sub.boundary_trace[sel], minlength=nseg))
    return counts


@pytest.mark.parametrize("H, expected", [(1.0, 2), (0.5, 8), (0.25, 32)])
def test_unit_square_triangle_counts(H, expected):
    mesh = build_coarse_mesh(UNIT_SQUARE, H)
    assert mesh.N == expected
    V, E = len(mesh.vertices), len(mesh.edges)
    assert V - E + mesh.N == 1
    assert np.isclose(sum(mesh.area(t) for t in range(mesh.N)), 1.0)


def test_boundary_edges_of_unit_square():
    mesh = build_coarse_mesh(UNIT_SQUARE, 0.5)
    assert mesh.boundary.sum() == 8
    assert len(mesh.boundary_vertices) == 8


def test_clockwise_triangle_is_reoriented():
    mesh = CoarseMesh.from_triangles([[0, 0], [0, 1], [1, 0]], [[0, 1, 2]])
    assert mesh.area(0) == pytest.approx(0.5)


def test_degenerate_triangle_rejected():
    with pytest.raises(MeshError):
        CoarseMesh.from_triangles([[0, 0], [1, 0], [2, 0]], [[0, 1, 2]])


def test_degenerate_rectangle_rejected():
    with pytest.raises(MeshError):
        build_coarse_mesh((0.0, 0.0, 0.0, 1.0), 0.5)


def test_mesh_file_round_trip(tmp_path):
    mesh = build_coarse_mesh((0.0, 2.0, 0.0, 1.0), 0.5)
    path = tmp_path / "m.txt"
    write_mesh(mesh, path)
    back = read_mesh(path)
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.array_equal(back.triangles, mesh.triangles)


def test_malformed_mesh_file(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("vertices 3\n0 0\n1 0\n")
    with pytest.raises(MeshError):
        read_mesh(path)


def test_single_segment_partition():
    mesh = right_triangle_mesh()
    part = partition_faces(mesh, 1, 1)
    for e in range(len(mesh.edges)):
        assert len(part.gamma_segments[e]) == 2
        assert len(part.lambda_segments[e]) == 2


def test_two_by_two_breakpoints():
    mesh = build_coarse_mesh(UNIT_SQUARE, 1.0)
    part = partition_faces(mesh, 2, 2)
    for e in range(len(mesh.edges)):
        assert np.allclose(part.interior_breakpoints(e, "gamma"), [0.5])
        assert np.allclose(part.interior_breakpoints(e, "lambda"), [0.25, 0.5, 0.75])


def test_shared_edge_views_are_identical_points():
    mesh = build_coarse_mesh(UNIT_SQUARE, 1.0)
    part = partition_faces(mesh, 2, 3)
    for e, owners in enumerate(mesh.edge_owners):
        if len(owners) != 2:
            continue
        pts = []
        for t, le in owners:
            a, b = mesh.local_edge_endpoints(t, le)
            p = a[None] + np.outer(part.lambda_views[t][le], b - a)
            pts.append(p[np.lexsort(p.T[::-1])])
        assert np.allclose(pts[0], pts[1], rtol=0, atol=1e-15)
    # both owners read the one canonical list stored per edge
    canonical = [seg.tobytes() for seg in part.lambda_segments]
    assert len(set(canonical)) == 1


def test_submesh_two_fine_edges_per_segment(right_triangle):
    mesh, part = right_triangle
    sub = build_submesh(mesh, 0, part, part.H_Lambda / 2)
    for c in fine_edges_per_segment(sub, part):
        assert np.all(c == 2)


def test_submesh_four_fine_edges_with_two_segments():
    mesh = right_triangle_mesh()
    part = partition_faces(mesh, 1, 2)
    sub = build_submesh(mesh, 0, part, part.H_Lambda / 4)
    for c in fine_edges_per_segment(sub, part):
        assert np.all(c == 4)
    assert validate_hierarchy(mesh, part, [sub])["submesh.m1"].passed


def test_m1_violation_reported(right_triangle):
    mesh, part = right_triangle
    with pytest.raises(HierarchyError, match="Lambda-segment"):
        build_submesh(mesh, 0, part, part.H_Lambda)
    sub = build_submesh(mesh, 0, part, part.H_Lambda, enforce_m1=False)
    rep = validate_hierarchy(mesh, part, [sub])
    assert not rep["submesh.m1"].passed
    assert any("Lambda-segment 0" in d for d in rep["submesh.m1"].details)


def test_consistent_hierarchy_passes():
    mesh = build_coarse_mesh(UNIT_SQUARE, 0.5)
    part = partition_faces(mesh, 2, 2)
    subs = [build_submesh(mesh, t, part, part.H_Lambda / 2) for t in range(mesh.N)]
    rep = validate_hierarchy(mesh, part, subs)
    assert rep.passed, rep.failures()


def test_perturbed_breakpoints_flag_conformity():
    mesh = build_coarse_mesh(UNIT_SQUARE, 1.0)
    part = partition_faces(mesh, 1, 2)
    e = next(i for i, o in enumerate(mesh.edge_owners) if len(o) == 2)
    t, le = mesh.edge_owners[e][0]
    views = [list(v) for v in part.lambda_views]
    v = views[t][le].copy()
    v[1] += 0.1
    views[t][le] = v
    bad = dataclasses.replace(part, lambda_views=tuple(tuple(x) for x in views))
    subs = [build_submesh(mesh, s, part, part.H_Lambda / 2) for s in range(mesh.N)]
    rep = validate_hierarchy(mesh, bad, subs)
    assert not rep["faces.conformity"].passed


def test_breakpoint_off_fine_vertices_flags_m1():
    mesh = right_triangle_mesh()
    coarse = partition_faces(mesh, 1, 1)
    sub = build_submesh(mesh, 0, coarse, 0.1, enforce_m1=False, divisions=3)
    rep = validate_hierarchy(mesh, partition_faces(mesh, 1, 2), [sub])
    assert not rep["submesh.m1"].passed
    assert any("not a fine vertex" in d for d in rep["submesh.m1"].details)


def test_submesh_covers_element(right_triangle):
    mesh, part = right_triangle
    sub = build_submesh(mesh, 0, part, 0.1)
    assert sub.area == pytest.approx(mesh.area(0))
    assert sub.h <= 0.1 + 1e-12
