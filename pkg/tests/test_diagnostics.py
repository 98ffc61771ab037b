import numpy as np
import pytest

from conftest import UNIT_SQUARE, right_triangle_mesh
from mh2m.coefficients import CoefficientField
from mh2m.diagnostics import (ReferenceElement, broken_H1A_seminorm, cauchy_schwarz_check, dual_seminorm_proxy,
                              equilibrium_defects, estimate_infsup_constants, fitted_rate, poincare_ratio,
                              run_convergence_study, strang_check, trace_seminorm_proxy, verify_bundle,
                              weak_continuity_residuals, InvariantReport)
from mh2m.driver import build_hierarchy, run_mh2m
from mh2m.errors import MH2MError
from mh2m.local import build_local_cache
from mh2m.mesh import build_submesh, partition_faces
from mh2m.oracles import get_case
from mh2m.spaces import LocalSpaceV, TraceSpace


def zero(x, y):
    return 0.0 * x


def triangle_reference(k=0, nlam=1, h_fraction=0.25, A=None, factor=4):
    mesh = right_triangle_mesh()
    part = partition_faces(mesh, 1, nlam)
    ts = TraceSpace(mesh, part, k)
    A = A or CoefficientField("constant")
    cache = build_local_cache(mesh, 0, part, ts, build_submesh(mesh, 0, part, h_fraction * part.H_Lambda), k, A,
                              zero)
    return cache, ReferenceElement(mesh, part, ts, cache, A, factor)


def square_spaces(k=1):
    hier = build_hierarchy(UNIT_SQUARE, 0.5, h_fraction=0.25)
    return [LocalSpaceV(s, k) for s in hier.submeshes]


def test_seminorm_of_constant_is_zero():
    spaces = square_spaces()
    coeffs = [np.full(V.ndofs, 4.0) for V in spaces]
    assert broken_H1A_seminorm(spaces, CoefficientField(), coeffs) < 1e-12


def test_seminorm_of_x_is_one():
    spaces = square_spaces()
    coeffs = [V.interpolate(lambda x, y: x) for V in spaces]
    assert broken_H1A_seminorm(spaces, CoefficientField(), coeffs) == pytest.approx(1.0, rel=1e-13)


def test_dual_proxy_of_zero_and_nonzero_mean():
    cache, ref = triangle_reference()
    assert dual_seminorm_proxy(ref, np.zeros(cache.block.ndofs)) == 0.0
    with pytest.raises(MH2MError):
        dual_seminorm_proxy(ref, np.ones(cache.block.ndofs))


def test_trace_proxy_of_constant_and_linear():
    _, ref = triangle_reference()
    assert trace_seminorm_proxy(ref, lambda x, y: 3.0 + 0 * x) < 1e-12
    assert trace_seminorm_proxy(ref, lambda x, y: x) == pytest.approx(np.sqrt(0.5), abs=1e-12)


def test_trace_proxy_subadditive():
    cache, ref = triangle_reference(k=1, nlam=2)
    rng = np.random.default_rng(4)
    for _ in range(5):
        a, b = rng.standard_normal((2, cache.P.shape[1]))
        assert trace_seminorm_proxy(ref, a + b) <= trace_seminorm_proxy(ref, a) + trace_seminorm_proxy(ref, b) + 1e-9


@pytest.mark.parametrize("k, nlam", [(0, 1), (0, 2), (1, 2)])
def test_beta_at_least_one(k, nlam):
    cache, ref = triangle_reference(k, nlam)
    beta, alpha = estimate_infsup_constants(cache, ref)
    assert beta >= 1 - 1e-9
    assert np.isfinite(alpha)


def test_beta_exact_for_constant_multipliers():
    # constant Neumann data on a triangle give linear T mu, which every submesh represents
    cache, ref = triangle_reference(0, 1)
    assert estimate_infsup_constants(cache, ref)[0] == pytest.approx(1.0, abs=1e-9)


def test_beta_bounded_under_refinement():
    betas = [estimate_infsup_constants(*triangle_reference(0, 2, hf))[0] for hf in (0.25, 0.125, 0.0625)]
    assert max(betas) / min(betas) - 1 < 0.2


def test_cauchy_schwarz_in_proxy_metric():
    cache, ref = triangle_reference(1, 2)
    assert cauchy_schwarz_check(cache, ref, np.random.default_rng(5)) <= 1 + 1e-6


def test_strang_split_holds():
    cache, ref = triangle_reference(1, 2, h_fraction=0.5)
    phi = np.random.default_rng(6).standard_normal(cache.P.shape[1])
    out = strang_check(cache, ref, phi)
    assert out["measured"] <= 1.1 * out["bound"]


def test_verify_bundle_passes(sine_run_k1):
    res, _ = sine_run_k1
    rep = verify_bundle(res.bundle, res.caches, res.system, res.info)
    assert rep.passed, [i.name for i in rep.failures()]
    assert rep["skeleton_min_eigenvalue"].value > 0


def test_zero_source_residuals_vanish():
    res = run_mh2m(build_hierarchy(UNIT_SQUARE, 0.5, 1, 2), 1, CoefficientField(), zero)
    assert np.all(equilibrium_defects(res.bundle, res.caches) == 0)
    assert np.all(weak_continuity_residuals(res.bundle, res.caches) == 0)


def test_skeleton_form_symmetry_and_coercivity(sine_run_k1):
    res, _ = sine_run_k1
    K = res.system.K
    assert np.max(np.abs(K - K.T)) <= 1e-12 * np.max(np.abs(K))
    rng = np.random.default_rng(7)
    for _ in range(20):
        x = rng.standard_normal(len(K))
        assert x @ K @ x > 0


def test_invariant_report_failure():
    rep = InvariantReport()
    rep.add("small", 1e-14, 1e-12)
    rep.add("big", 1.0, 1e-12)
    rep.add("positive", -1.0, 0.0, upper=False)
    assert not rep.passed
    assert [i.name for i in rep.failures()] == ["big", "positive"]


def test_rate_fit():
    h = np.array([0.5, 0.25, 0.125])
    assert fitted_rate(h, 3 * h**2) == pytest.approx(2.0)


def test_h_only_sweep_plateaus():
    case = get_case("sine")
    levels = [dict(domain=UNIT_SQUARE, target_H=0.5, h_fraction=hf) for hf in (0.5, 0.25, 0.125)]
    rep = run_convergence_study(levels, case, 0, parameter="h", proxies=False)
    e = [r["err_u_H1A"] for r in rep.records]
    d1, d2 = e[0] - e[1], e[1] - e[2]
    assert d1 > 2 * d2 > 0
    # two-term model e = floor + c h^p through the three points
    p = np.log2(d1 / d2)
    floor = e[2] - d2 / (2**p - 1)
    assert floor > 0.9 * e[2]
    assert rep.rates["err_u_H1A"] < 0.2


def test_poincare_ratio_independent_of_H():
    case = get_case("sine")
    ratios = []
    for H in (0.5, 0.25, 0.125):
        res = run_mh2m(build_hierarchy(UNIT_SQUARE, H, h_fraction=0.25), 0, case.A, case.f)
        ratios.append(max(poincare_ratio(c, case.A, case.f) for c in res.caches))
    assert max(ratios) / min(ratios) < 1.1
