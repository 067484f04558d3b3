import math

import numpy as np
import pytest
import scipy.sparse as sp

from symstress.assembly import (
    SchemeConfig,
    assemble_a,
    assemble_b,
    assemble_c,
    assemble_load,
    assemble_mass,
    assemble_rhs,
    assemble_system,
    identity_coefficients,
)
from symstress.cases import MaterialParams, case_example1, case_polar2d, case_stokes_noflow
from symstress.quadrature import quadrature_rule
from symstress.spaces import cell_chunks, cell_geometry, integration_mesh

EYE = np.eye(2)
J = np.array([[0.0, 1.0], [-1.0, 0.0]])
ELASTIC = ["jmk", "peers", "afw1", "afw2"]


def const(M):
    return lambda x, y: np.broadcast_to(M, np.shape(x) + M.shape)


def quad_integral(space, coeffs, integrand, deriv=None):
    """Oracle: integrate ``integrand(values, x, y)`` pointwise over the domain."""
    imesh = integration_mesh(space)
    rule = quadrature_rule(10)
    total = 0.0
    for c0, c1 in cell_chunks(imesh, 10**6):
        g = cell_geometry(imesh, c0, c1)
        X = g.map(rule.points)
        v = space.evaluate(coeffs, imesh, c0, c1, rule.points, deriv)
        wq = rule.weights[None, :] * np.abs(g.detJ)[:, None]
        total += np.sum(wq * integrand(v, X[..., 0], X[..., 1]))
    return total


def test_scheme_parse_and_labels():
    cases = {"jm": ("jmk", "jm", "jm_1"), "PEERS": ("peers", "peers", "peers_1"),
             "afw_3": ("afw", "afw_3", "afw_3"), "ht": ("th", "ht", "ht"), "sv": ("sv", "sv", "sv")}
    for text, (el, label, flabel) in cases.items():
        s = SchemeConfig.parse(text)
        assert (s.element, s.label, s.file_label) == (el, label, flabel)
    assert SchemeConfig.parse("jmk").symmetry == "strong"
    assert SchemeConfig.parse("afw2").symmetry == "weak"
    assert SchemeConfig.parse("sv").is_stokes
    with pytest.raises(ValueError):
        SchemeConfig.parse("hz")
    with pytest.raises(ValueError):
        SchemeConfig("afw", 0)


@pytest.mark.parametrize("scheme", ELASTIC + ["th", "sv"])
def test_full_matrix_exactly_symmetric(scheme, jittered4):
    case = case_stokes_noflow(10.0) if scheme in ("th", "sv") else case_example1(10.0)
    K = assemble_system(scheme, jittered4, case).matrix()
    assert abs(K - K.T).max() == 0.0


@pytest.mark.parametrize("scheme", ELASTIC)
def test_a_block_psd(scheme, mesh2):
    sysm = assemble_system(scheme, mesh2, case_polar2d(10.0))
    ev = np.linalg.eigvalsh(sysm.A.toarray())
    assert ev.min() >= -1e-10 * ev.max()


@pytest.mark.parametrize("scheme", ["jmk", "peers", "afw1"])
def test_a_identity_values(scheme, mesh2):
    sig = SchemeConfig.parse(scheme).build_spaces(mesh2)["sigma"]
    eye = identity_coefficients(sig)
    A = assemble_a(sig, MaterialParams(1e-4, 1.0))
    assert eye @ A @ eye == pytest.approx(2 / 2.0002, rel=1e-10)
    Ainf = assemble_a(sig, MaterialParams(1e-4, math.inf))
    assert np.abs(Ainf @ eye).max() <= 1e-12 * abs(A).max()


@pytest.mark.parametrize("scheme", ELASTIC)
def test_a_against_pointwise_oracle(scheme, jittered4, rng):
    params = MaterialParams(0.7, 1.3)
    sig = SchemeConfig.parse(scheme).build_spaces(jittered4)["sigma"]
    s = rng.standard_normal(sig.ndofs)
    A = assemble_a(sig, params)
    oracle = quad_integral(sig, s, lambda v, x, y: np.sum(params.compliance(v) * v, axis=(-1, -2)))
    assert s @ A @ s == pytest.approx(oracle, rel=1e-10)


@pytest.mark.parametrize("scheme", ELASTIC)
def test_b_constant_and_linear(scheme, jittered4):
    sp_ = SchemeConfig.parse(scheme).build_spaces(jittered4)
    sig, u = sp_["sigma"], sp_["u"]
    B = assemble_b(sig, u)
    c = sig.interpolate(const(np.array([[1.0, 2.0], [2.0, -3.0]])))
    assert np.abs(B @ c).max() <= 1e-12
    # div [[x, 0], [0, 0]] = (1, 0)
    lin = sig.interpolate(lambda x, y: np.stack([np.stack([x, 0 * x], -1), np.zeros(np.shape(x) + (2,))], -2))
    oracle = assemble_load(u, const(np.array([1.0, 0.0])), 2, imesh=u.mesh)
    np.testing.assert_allclose(B @ lin, oracle, atol=1e-12)


def test_b_ignores_peers_bubbles(mesh4):
    sysm = assemble_system("peers", mesh4, case_example1(10.0))
    sig = sysm.spaces["sigma"]
    row = sig.element.row
    local = [i for i, d in enumerate(row.descriptors) if d.entity == "cell"]
    local = local + [row.dim + i for i in local]
    interior = np.unique(sig.cell_dofs[:, local])
    assert interior.size == 2 * mesh4.num_cells
    assert abs(sysm.B[:, interior]).max() <= 1e-12


def test_b_rejects_continuous_velocity(mesh2):
    th = SchemeConfig("th").build_spaces(mesh2)
    sig = SchemeConfig("jmk").build_spaces(mesh2)["sigma"]
    with pytest.raises(ValueError):
        assemble_b(sig, th["velocity"])


@pytest.mark.parametrize("scheme", ["peers", "afw1", "afw2"])
def test_c_values(scheme, jittered4, rng):
    sp_ = SchemeConfig.parse(scheme).build_spaces(jittered4)
    sig, om = sp_["sigma"], sp_["omega"]
    C = assemble_c(sig, om)

    def symmetric_linear(x, y):
        s = np.empty(np.shape(x) + (2, 2))
        s[..., 0, 0] = 1 + x
        s[..., 1, 1] = y - 2
        s[..., 0, 1] = s[..., 1, 0] = 3 * x - y
        return s

    if scheme == "peers":
        # RT0 rows only reproduce constants exactly
        sym = sig.interpolate(const(np.array([[1.0, 2.0], [2.0, -3.0]])))
    else:
        sym = sig.interpolate(symmetric_linear)
    assert np.abs(C @ sym).max() <= 1e-12
    val = om.interpolate(const(J)) @ C @ sig.interpolate(const(J))
    assert val == pytest.approx(2.0, rel=1e-12)
    # random pair against the pointwise oracle
    s = rng.standard_normal(sig.ndofs)
    xi = rng.standard_normal(om.ndofs)
    imesh = integration_mesh(sig, om)
    rule = quadrature_rule(10)
    total = 0.0
    for c0, c1 in cell_chunks(imesh, 10**6):
        g = cell_geometry(imesh, c0, c1)
        wq = rule.weights[None, :] * np.abs(g.detJ)[:, None]
        a = sig.evaluate(s, imesh, c0, c1, rule.points)
        b = om.evaluate(xi, imesh, c0, c1, rule.points)
        total += np.sum(wq * np.sum(a * b, axis=(-1, -2)))
    assert xi @ C @ s == pytest.approx(total, rel=1e-10)


def test_c_rejects_strong_mode(mesh2):
    sig = SchemeConfig("jmk").build_spaces(mesh2)["sigma"]
    with pytest.raises(ValueError):
        assemble_c(sig, None)


def test_rhs_zero_data_and_identity_load(mesh4):
    case = case_example1(10.0)
    zero = case_example1(10.0).__class__(
        "zero", case.params, 1.0, lambda x, y: np.zeros(np.shape(x) + (2,)),
        lambda x, y: np.zeros(np.shape(x) + (2, 2)))
    for scheme in ELASTIC:
        spaces = SchemeConfig.parse(scheme).build_spaces(mesh4)
        for G in assemble_rhs(zero, spaces):
            assert not np.any(G)
        sig = spaces["sigma"]
        load = assemble_load(sig, const(EYE), 4)
        assert load @ identity_coefficients(sig) == pytest.approx(2.0, rel=1e-12)


def test_boundary_load_matches_fine_oracle(mesh4):
    from symstress.assembly import assemble_boundary_load

    case = case_example1(10.0)
    sig = SchemeConfig("jmk").build_spaces(mesh4)["sigma"]
    a = assemble_boundary_load(sig, case.data_g, 6)
    b = assemble_boundary_load(sig, case.data_g, 20)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-10 * np.abs(b).max())


def test_mass_total_area(jittered4):
    sp_ = SchemeConfig("afw", 2).build_spaces(jittered4)
    u = sp_["u"]
    one = u.interpolate(const(np.array([1.0, 0.0])))
    assert one @ assemble_mass(u) @ one == pytest.approx(1.0, rel=1e-12)


@pytest.mark.parametrize("scheme", ["th", "sv"])
def test_stokes_structure(scheme, mesh4):
    sysm = assemble_system(scheme, mesh4, case_stokes_noflow(10.0))
    p = sysm.spaces["pressure"]
    ones = p.interpolate(lambda x, y: np.ones_like(x))
    assert np.abs(sysm.B.T @ ones).max() <= 1e-12
    # gradient forcing: (f, v) = -(div v, p) for v vanishing on the boundary
    vel = sysm.spaces["velocity"]
    case = case_stokes_noflow(10.0)
    div_p = assemble_load(vel, case.exact_p, 12, derivative="div")[sysm.free_velocity]
    np.testing.assert_allclose(sysm.G_sigma, -div_p, atol=1e-10 * np.abs(div_p).max())


def test_sv_requires_barycentric(mesh2):
    from symstress.assembly import assemble_stokes
    from symstress.elements import Lagrange
    from symstress.spaces import FunctionSpace

    v = FunctionSpace(mesh2, Lagrange(2, "vector"))
    p = FunctionSpace(mesh2, Lagrange(1, continuous=False))
    with pytest.raises(ValueError):
        assemble_stokes(v, p, None, SchemeConfig("sv"))


def test_assembly_deterministic(jittered4):
    a = assemble_system("afw2", jittered4, case_example1(10.0)).matrix()
    b = assemble_system("afw2", jittered4, case_example1(10.0)).matrix()
    assert (a != b).nnz == 0
    assert np.array_equal(a.indices, b.indices)


def test_nullspace_only_for_incompressible(mesh2):
    assert assemble_system("jmk", mesh2, case_example1(10.0)).nullspace is None
    sysm = assemble_system("jmk", mesh2, case_polar2d(10.0))
    z = sysm.nullspace
    assert np.abs(sysm.matrix() @ z).max() <= 1e-10 * abs(sysm.matrix()).max()
    assert sp.issparse(sysm.A)
