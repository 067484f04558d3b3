import dataclasses

import numpy as np
import pytest
import scipy.sparse as sp

from symstress import linsolve
from symstress.assembly import assemble_system, identity_coefficients
from symstress.cases import case_example1, case_example2, case_polar2d
from symstress.linsolve import (
    CompatibilityError,
    Factorization,
    Solution,
    SingularSystemError,
    factorize,
    postprocess_trace,
    solve_direct,
)


@pytest.mark.parametrize("scheme", ["jmk", "peers", "afw1", "afw2"])
def test_example1_residual(scheme, jittered4):
    sysm = assemble_system(scheme, jittered4, case_example1(1e3))
    sol = solve_direct(sysm)
    r = np.linalg.norm(sysm.matrix() @ sol.x - sysm.rhs()) / np.linalg.norm(sysm.rhs())
    assert r <= 1e-10
    assert sol.residual <= 1e-10


def test_zero_rhs_gives_zero(mesh2):
    sysm = assemble_system("afw1", mesh2, case_example1(10.0))
    z = sysm.with_rhs(np.zeros(sysm.sizes[0]), np.zeros(sysm.sizes[1]), np.zeros(sysm.sizes[2]))
    assert not np.any(solve_direct(z).x)


def test_solution_is_frozen(mesh2):
    sol = solve_direct(assemble_system("jmk", mesh2, case_example1(10.0)))
    with pytest.raises(dataclasses.FrozenInstanceError):
        sol.residual = 0.0


@pytest.mark.parametrize("scheme", ["jmk", "afw1"])
def test_pin_independence(scheme, mesh4):
    sysm = assemble_system(scheme, mesh4, case_polar2d(1e3))
    z = sysm.nullspace
    n0 = sysm.sizes[0]
    order = np.argsort(-np.abs(z))
    raw1 = solve_direct(sysm, pin=int(order[0]), postprocess=False)
    raw2 = solve_direct(sysm, pin=int(order[5]), postprocess=False)
    d = raw1.x - raw2.x
    c = (d[:n0] @ z[:n0]) / (z[:n0] @ z[:n0])
    scale = np.linalg.norm(raw1.x)
    assert np.linalg.norm(d[:n0] - c * z[:n0]) <= 1e-9 * scale
    assert np.linalg.norm(d[n0:]) <= 1e-9 * scale
    p1, p2 = postprocess_trace(raw1), postprocess_trace(raw2)
    assert np.linalg.norm(p1.x - p2.x) <= 1e-9 * scale


def test_postprocess_properties(mesh4):
    sysm = assemble_system("jmk", mesh4, case_polar2d(1e3))
    sol = solve_direct(sysm)
    assert abs(sol.trace_integral) <= 1e-12 * (1 + abs(sysm.target_trace)) * max(1.0, np.abs(sol.x).max())
    again = postprocess_trace(sol)
    np.testing.assert_array_equal(again.x[sysm.sizes[0]:], sol.x[sysm.sizes[0]:])
    np.testing.assert_allclose(again.x, sol.x, rtol=0, atol=1e-12 * np.abs(sol.x).max())


def test_postprocess_identity_shift(mesh2):
    sysm = assemble_system("jmk", mesh2, case_polar2d(10.0))
    x = np.zeros(sysm.ndofs)
    x[: sysm.sizes[0]] = identity_coefficients(sysm.spaces["sigma"])
    fixed = postprocess_trace(Solution(x, sysm, 0.0))
    # trace integral was 2 |Omega| = 2, so the shift is -I
    assert np.abs(fixed.sigma).max() <= 1e-12


def test_postprocess_warns_without_nullspace(mesh2):
    sol = solve_direct(assemble_system("jmk", mesh2, case_example1(10.0)))
    with pytest.warns(UserWarning):
        out = postprocess_trace(sol)
    assert out is sol


def test_incompatible_rhs(mesh2):
    sysm = assemble_system("jmk", mesh2, case_polar2d(10.0))
    bad = sysm.with_rhs(G_sigma=sysm.G_sigma + sysm.trace_functional[: sysm.sizes[0]])
    with pytest.raises(CompatibilityError):
        solve_direct(bad)


def test_singular_system_names_block(mesh2, monkeypatch):
    monkeypatch.setenv("SYMSTRESS_SOLVER", "superlu")
    sysm = assemble_system("afw1", mesh2, case_example1(10.0))
    C = sp.vstack([sysm.C, sp.csr_matrix((1, sysm.C.shape[1]))]).tocsr()
    broken = dataclasses.replace(sysm, C=C, G_xi=np.zeros(C.shape[0]), _matrix=None)
    with pytest.raises(SingularSystemError) as info:
        solve_direct(broken)
    assert info.value.block == "C"


def test_factor_reuse_and_close(mesh4):
    sysm = assemble_system("jmk", mesh4, case_example2(10.0))
    f = factorize(sysm)
    a = solve_direct(sysm, factor=f)
    b = solve_direct(sysm.with_case(case_example2(1e5)), factor=f)
    assert a.residual <= 1e-10 and b.residual <= 1e-10
    f.close()
    f.close()


@pytest.mark.skipif(not linsolve._pardiso_available(), reason="pypardiso not installed")
def test_backends_agree(jittered4, monkeypatch):
    sysm = assemble_system("afw2", jittered4, case_example2(1e3))
    monkeypatch.setenv("SYMSTRESS_SOLVER", "pardiso")
    a = solve_direct(sysm)
    monkeypatch.setenv("SYMSTRESS_SOLVER", "superlu")
    b = solve_direct(sysm)
    assert np.linalg.norm(a.x - b.x) <= 1e-9 * np.linalg.norm(b.x)


def test_solve_deterministic(jittered4):
    sysm = assemble_system("peers", jittered4, case_polar2d(1e3))
    assert np.array_equal(solve_direct(sysm).x, solve_direct(sysm).x)


def test_factorization_rejects_singular(monkeypatch):
    monkeypatch.setenv("SYMSTRESS_SOLVER", "superlu")
    K = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(SingularSystemError):
        Factorization(K)
    f = Factorization(K, pinned=[1])
    np.testing.assert_allclose(f.solve(np.array([2.0, 2.0])), [2.0, 0.0])


def test_unknown_backend_env(monkeypatch):
    monkeypatch.setenv("SYMSTRESS_SOLVER", "pardiso")
    if not linsolve._pardiso_available():
        with pytest.raises(RuntimeError):
            linsolve._backend()
    else:
        assert linsolve._backend() == "pardiso"


@pytest.mark.skipif(not linsolve._pardiso_available(), reason="PARDISO not available")
def test_pardiso_residual_fallback(jittered4, monkeypatch):
    sysm = assemble_system("afw1", jittered4, case_example2(1e3))
    ref = solve_direct(sysm)
    monkeypatch.setattr(linsolve, "FALLBACK_RESIDUAL", -1.0)
    with pytest.warns(RuntimeWarning, match="SuperLU"):
        sol = solve_direct(sysm)
    np.testing.assert_allclose(sol.x, ref.x, atol=1e-9 * np.abs(ref.x).max())


def test_refinement_repairs_a_crude_factor(jittered4):
    sysm = assemble_system("jmk", jittered4, case_example2(1e5))
    K, b = sysm.matrix(), sysm.rhs()
    exact = factorize(sysm, backend="superlu")

    class Crude:
        # relative noise of 1e-4 on every solve
        def solve(self, r):
            y = exact.solve(r)
            return y * (1 + 1e-4 * np.cos(np.arange(y.size)))

    x = linsolve._refine(K, b, Crude().solve(b), Crude(), 8)
    assert np.linalg.norm(K @ x - b) <= 1e-12 * np.linalg.norm(b)
