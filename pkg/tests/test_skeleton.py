import numpy as np
import pytest

from conftest import UNIT_SQUARE
from mh2m.coefficients import CoefficientField
from mh2m.driver import build_hierarchy, run_mh2m
from mh2m.errors import CompatibilityError, MH2MError
from mh2m.local import compute_u0
from mh2m.oracles import get_case
from mh2m.skeleton import SkeletonSystem, assemble_system, assemble_system_equivalent, reconstruct, solve


def zero(x, y):
    return 0.0 * x


def test_all_boundary_skeleton_is_trivial():
    case = get_case("sine")
    res = run_mh2m(build_hierarchy(UNIT_SQUARE, 1.0), 0, case.A, case.f)
    assert res.system.ndofs == 0
    assert res.alpha.size == 0
    # u_h still carries the local source response
    assert all(np.isfinite(res.bundle.u_h(t)).all() for t in range(2))


def test_zero_data_gives_zero_solution():
    hier = build_hierarchy(UNIT_SQUARE, 0.5, 1, 2)
    res = run_mh2m(hier, 1, CoefficientField("constant"), zero)
    assert np.all(res.system.rhs == 0)
    assert np.all(res.alpha == 0)
    for t in range(hier.mesh.N):
        assert np.all(res.bundle.u_h(t) == 0)
        assert np.all(res.bundle.lam[t] == 0)


def test_one_by_one_system():
    alpha, info = solve(SkeletonSystem(np.array([[4.0]]), np.array([2.0]), "flux"))
    assert alpha[0] == 0.5
    assert info.residual == 0.0


def test_indefinite_system_reported():
    with pytest.raises(CompatibilityError):
        solve(SkeletonSystem(np.array([[1.0, 0.0], [0.0, -1.0]]), np.array([1.0, 1.0]), "flux"))


def test_unknown_method_rejected():
    with pytest.raises(MH2MError):
        solve(SkeletonSystem(np.eye(2), np.ones(2), "flux"), method="lu")


def test_mean_of_constant_trace(sine_run_k1):
    res, _ = sine_run_k1
    c = res.caches[0]
    # c_xi = -mean(xi) equals -1 for xi = 1
    assert -compute_u0(c, np.ones(c.P.shape[1])) == pytest.approx(-1.0, rel=1e-14)


@pytest.mark.parametrize("fixture", ["sine_run_k0", "sine_run_k1"])
def test_system_is_spd(fixture, request):
    res, _ = request.getfixturevalue(fixture)
    K = res.system.K
    assert res.system.symmetry_defect() <= 1e-12
    assert np.linalg.eigvalsh(0.5 * (K + K.T))[0] > 0


@pytest.mark.parametrize("fixture", ["sine_run_k0", "sine_run_k1"])
def test_flux_and_energy_forms_agree(fixture, request):
    res, _ = request.getfixturevalue(fixture)
    a = assemble_system(res.trace_space, res.caches)
    b = assemble_system_equivalent(res.trace_space, res.caches)
    assert np.max(np.abs(a.K - b.K)) <= 1e-10 * np.max(np.abs(a.K))
    assert np.max(np.abs(a.rhs - b.rhs)) <= 1e-10 * np.max(np.abs(a.rhs))


def test_direct_and_cg_agree(sine_run_k1):
    res, _ = sine_run_k1
    a_d, _ = solve(res.system, "direct")
    a_c, info = solve(res.system, "cg", 1e-13)
    assert info.iterations > 0
    assert np.max(np.abs(a_d - a_c)) <= 1e-9 * max(1.0, np.max(np.abs(a_d)))


def test_threaded_run_is_bit_identical(sine_case):
    hier = build_hierarchy(UNIT_SQUARE, 0.25, 1, 1)
    serial = run_mh2m(hier, 1, sine_case.A, sine_case.f, threads=1)
    threaded = run_mh2m(hier, 1, sine_case.A, sine_case.f, threads=4)
    assert np.array_equal(serial.system.K, threaded.system.K)
    assert np.array_equal(serial.alpha, threaded.alpha)


def test_reconstruction_of_zero_trace_and_zero_source(sine_run_k0):
    res, _ = sine_run_k0
    caches = [c.with_source(zero) for c in res.caches]
    b = reconstruct(np.zeros(res.trace_space.ndofs), caches, res.trace_space)
    assert all(np.all(l == 0) for l in b.lam)
    assert all(np.all(b.u_h(t) == 0) for t in range(len(caches)))


def test_multi_query_matches_fresh_build(sine_run_k1):
    res, case = sine_run_k1
    g = lambda x, y: np.cos(x) * y
    caches = [c.with_source(g) for c in res.caches]
    a = assemble_system_equivalent(res.trace_space, caches)
    fresh = run_mh2m(res.hierarchy, 1, case.A, g)
    assert np.allclose(a.rhs, fresh.system.rhs, rtol=0, atol=1e-15 * np.max(np.abs(a.rhs)) * 10)
