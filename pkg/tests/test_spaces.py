import numpy as np
import pytest

from conftest import UNIT_SQUARE, right_triangle_mesh
from mh2m.errors import MH2MError
from mh2m.mesh import build_coarse_mesh, build_submesh, partition_faces
from mh2m.spaces import (LocalSpaceV, MultiplierBlock, TraceSpace, lagrange_1d, pair_multiplier_trace,
                         pairing_matrix)


def square_trace_space(H, k, n_gamma=1):
    mesh = build_coarse_mesh(UNIT_SQUARE, H)
    return TraceSpace(mesh, partition_faces(mesh, n_gamma, 1), k)


def test_all_boundary_skeleton_has_no_dofs():
    assert square_trace_space(1.0, 0).ndofs == 0


def test_two_by_two_grid_dims():
    # the 3x3 vertex lattice has a single interior vertex and 8 interior edges
    assert square_trace_space(0.5, 0).ndofs == 1
    assert square_trace_space(0.5, 1).ndofs == 1 + 8


def test_unsupported_k_rejected():
    with pytest.raises(MH2MError):
        square_trace_space(0.5, 2)


def test_trace_dofs_vanish_on_boundary():
    ts = square_trace_space(0.25, 1, n_gamma=2)
    for x, y in ts.dof_coords:
        assert 0 < x < 1 and 0 < y < 1


def test_trace_space_continuity_across_shared_edges():
    ts = square_trace_space(0.5, 1, n_gamma=2)
    rho = np.random.default_rng(0).standard_normal(ts.ndofs)
    mesh = ts.mesh
    tq = np.linspace(0, 1, 7)
    for e, owners in enumerate(mesh.edge_owners):
        if len(owners) != 2:
            continue
        vals = []
        for t, le in owners:
            aligned = mesh.element_edge_aligned[t, le]
            vals.append(ts.evaluate(rho, t, le, tq if aligned else 1 - tq))
        assert np.allclose(vals[0], vals[1], atol=1e-13)


@pytest.mark.parametrize("nlam, k, dim", [(1, 0, 3), (2, 0, 6), (1, 1, 6), (2, 1, 12)])
def test_multiplier_block_dims(nlam, k, dim):
    mesh = right_triangle_mesh()
    block = MultiplierBlock.for_element(partition_faces(mesh, 1, nlam), 0, k)
    assert block.ndofs == dim
    assert block.zero_mean_dim == dim - 1
    assert np.allclose(block.w @ block.Z, 0, atol=1e-15)


def single_fine_triangle(k):
    mesh = right_triangle_mesh()
    part = partition_faces(mesh, 1, 1)
    sub = build_submesh(mesh, 0, part, 1.0, enforce_m1=False, divisions=1)
    return mesh, part, LocalSpaceV(sub, k)


def test_boundary_mean_weights_single_triangle():
    _, _, V = single_fine_triangle(0)
    assert V.ndofs == 3
    assert V.boundary_mean.sum() == pytest.approx(2 + np.sqrt(2))
    for dofs, L in zip(V.boundary_edge_dofs, V.boundary_edge_lengths):
        assert len(dofs) == 2
    # each vertex collects half of its two incident edges
    L = np.array([1.0, np.sqrt(2), 1.0])
    expected = 0.5 * np.array([L[0] + L[2], L[0] + L[1], L[1] + L[2]])
    assert np.allclose(V.boundary_mean, expected)


def test_odd_function_has_zero_edge_contribution(right_triangle):
    mesh, part = right_triangle
    V = LocalSpaceV(build_submesh(mesh, 0, part, 0.25), 1)
    v = V.interpolate(lambda x, y: x - 0.5)
    # the bottom edge y=0 is symmetric about x=0.5
    bottom = [i for i, le in enumerate(V.boundary_edge_le) if le == 0]
    total = sum(V.boundary_edge_lengths[i] * np.mean(v[V.boundary_edge_dofs[i][[0, -1]]]) for i in bottom)
    assert abs(total) < 1e-14


def test_pairing_of_constants_is_perimeter(right_triangle):
    mesh, part = right_triangle
    block = MultiplierBlock.for_element(part, 0, 0)
    V = LocalSpaceV(build_submesh(mesh, 0, part, 0.5), 1)
    assert pair_multiplier_trace(block, block.ones, np.ones(V.ndofs), V) == pytest.approx(2 + np.sqrt(2), abs=1e-14)
    assert pair_multiplier_trace(block, block.ones, lambda x, y: 1.0 + 0 * x) == pytest.approx(3.414214, abs=1e-6)


def test_zero_mean_multiplier_against_constant(right_triangle):
    mesh, part = right_triangle
    block = MultiplierBlock.for_element(partition_faces(mesh, 1, 2), 0, 1)
    part2 = partition_faces(mesh, 1, 2)
    V = LocalSpaceV(build_submesh(mesh, 0, part2, 0.2), 1)
    mu = block.Z @ np.random.default_rng(1).standard_normal(block.zero_mean_dim)
    assert abs(pair_multiplier_trace(block, mu, np.full(V.ndofs, 3.0), V)) < 1e-13


def test_constant_multiplier_integrates_trace(right_triangle):
    mesh, part = right_triangle
    block = MultiplierBlock.for_element(part, 0, 0)
    lam0 = -0.3
    g = lambda x, y: x**2 + y
    # bottom edge, hypotenuse (length sqrt 2), left edge
    exact = 1 / 3 + np.sqrt(2) * (1 / 3 + 1 / 2) + 1 / 2
    assert pair_multiplier_trace(block, lam0 * block.ones, g) == pytest.approx(lam0 * exact, rel=1e-13)


def test_pairing_mismatched_element():
    mesh = build_coarse_mesh(UNIT_SQUARE, 1.0)
    part = partition_faces(mesh, 1, 1)
    block = MultiplierBlock.for_element(part, 0, 0)
    V = LocalSpaceV(build_submesh(mesh, 1, part, 0.5), 0)
    with pytest.raises(MH2MError):
        pairing_matrix(block, V)


def test_pairing_exact_for_nonnested_partitions(right_triangle):
    mesh, _ = right_triangle
    part3 = partition_faces(mesh, 1, 3)
    block = MultiplierBlock.for_element(part3, 0, 1)
    # fine edges of length 1/2 straddle the breakpoints at 1/3 and 2/3
    coarse = partition_faces(mesh, 1, 1)
    V = LocalSpaceV(build_submesh(mesh, 0, coarse, 0.5, divisions=2), 1)
    g = lambda x, y: 1 + x * y + x**2
    v = V.interpolate(g)
    mu = block.interpolate(lambda x, y: 2 - y)
    exact = pair_multiplier_trace(block, mu, g, npoints=10)
    assert pair_multiplier_trace(block, mu, v, V) == pytest.approx(exact, rel=1e-13)


def test_lagrange_partition_of_unity():
    s = np.linspace(0, 1, 11)
    for p in (0, 1, 2):
        assert np.allclose(lagrange_1d(p, s).sum(axis=1), 1.0)
