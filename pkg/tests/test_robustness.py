import math

import numpy as np
import pytest
import scipy.sparse as sp

from symstress import robustness
from symstress.assembly import SchemeConfig, assemble_a, assemble_hdiv_gram, assemble_mass, assemble_system
from symstress.cases import MaterialParams, case_example1, case_example2, case_polar2d
from symstress.mesh import generate_unit_square, refine_uniform
from symstress.robustness import (
    DenseLimitError,
    EmptyKernelError,
    div_projection_witness,
    infsup_estimate,
    infsup_from_blocks,
    kernel_coercivity_estimate,
    kernel_inclusion_probe,
    phi_projection,
    robustness_report,
    shift_invariance_test,
)

SCHEMES = ["jmk", "peers", "afw1", "afw3"]


@pytest.fixture(scope="module")
def mesh8():
    return generate_unit_square(8)


@pytest.mark.parametrize("scheme", SCHEMES)
def test_discrete_shift_is_invisible(scheme, mesh4, rng):
    case = case_example2(1e3)
    sysm = assemble_system(scheme, mesh4, case)
    ru = rng.standard_normal(sysm.sizes[1]) * 1e3
    rw = rng.standard_normal(sysm.sizes[2]) * 1e3 if sysm.sizes[2] else None
    res = shift_invariance_test(scheme, case, mesh4, r=(ru, rw))
    assert res.defect <= 1e-9
    assert res.lemma_defect <= 1e-9


def test_jmk_smooth_shift_and_projection_identity(mesh8):
    case = case_example2(1e3)
    res = shift_invariance_test("jmk", case, mesh8)
    assert res.defect <= 1e-8
    r = lambda x, y: np.stack([np.sin(3 * x) * np.cos(y), np.exp(x * y)], axis=-1) * 1e3
    res = shift_invariance_test("jmk", case, mesh8, r=r)
    assert res.defect <= 1e-8
    assert res.lemma_defect <= 1e-9


def test_afw1_is_not_invariant(mesh8):
    res = shift_invariance_test("afw1", case_example2(1e3), mesh8)
    assert res.defect >= 1e-2


def test_lemma_equivalence(mesh8):
    """Invariance for every probe shift holds exactly when the kernel is inside the continuous one."""
    shifts = [case_example2(1e3), case_polar2d(1e3)]
    for scheme in SCHEMES:
        invariant = all(shift_invariance_test(scheme, c, mesh8).defect <= 1e-8 for c in shifts)
        included = kernel_inclusion_probe(scheme, mesh8, trials=4).violation <= 1e-8
        assert invariant == included, scheme
        assert included == (scheme == "jmk")


def test_kernel_probe_values(mesh4):
    jm = kernel_inclusion_probe("jmk", mesh4)
    assert jm.violation <= 1e-10 and jm.kernel_dim > 0
    afw1 = kernel_inclusion_probe("afw1", mesh4)
    assert afw1.anti_violation >= 1e-1
    afw3 = kernel_inclusion_probe("afw3", mesh4, trials=4)
    assert afw3.div_violation <= 1e-10
    assert afw3.anti_violation > 1e-6
    peers = kernel_inclusion_probe("peers", mesh4)
    assert peers.anti_violation >= 1e-1


@pytest.mark.parametrize("scheme", SCHEMES)
def test_div_projection_witness(scheme, jittered4):
    assert div_projection_witness(scheme, jittered4) <= 1e-10


def test_phi_projection_properties(jittered4, rng):
    space = SchemeConfig("jmk").build_spaces(jittered4)["u"]
    M = assemble_mass(space, space.mesh)
    # a piecewise constant field on the integration cells is already in V_h
    v = rng.standard_normal(space.ndofs)
    from symstress.spaces import cell_chunks, cell_geometry
    from symstress.quadrature import quadrature_rule

    def as_field(coeffs):
        cells = space.cell_dofs
        per_cell = coeffs[cells].reshape(-1, 2)

        def f(x, y):
            # quadrature arrays arrive as (cells, points)
            return np.broadcast_to(per_cell[:, None, :], np.shape(x) + (2,))
        return f

    np.testing.assert_allclose(phi_projection(as_field(v), space=space), v, atol=1e-12 * np.abs(v).max())
    for k in range(20):
        a, b = rng.uniform(0.5, 4, size=2)
        r = lambda x, y: np.stack([np.sin(a * x + y), np.cos(b * x * y)], axis=-1)
        p = phi_projection(r, space=space)
        pp = phi_projection(as_field(p), space=space)
        np.testing.assert_allclose(pp, p, atol=1e-12)
        # |Phi r|^2 <= |r|^2 (the latter by fine quadrature)
        rule = quadrature_rule(12)
        norm_r = 0.0
        for c0, c1 in cell_chunks(space.mesh, 10**6):
            g = cell_geometry(space.mesh, c0, c1)
            X = g.map(rule.points)
            wq = rule.weights[None, :] * np.abs(g.detJ)[:, None]
            norm_r += np.sum(wq * np.sum(r(X[..., 0], X[..., 1]) ** 2, axis=-1))
        assert p @ M @ p <= norm_r * (1 + 1e-12)


def test_infsup_positive_and_spurious_row(mesh2):
    for scheme in SCHEMES:
        assert infsup_estimate(scheme, mesh2) > 0.1
    sysm = assemble_system("jmk", mesh2, case_example1(1.0))
    X = assemble_hdiv_gram(sysm.spaces["sigma"])
    B = sysm.B.tocsr()
    MQ = assemble_mass(sysm.spaces["u"], sysm.spaces["u"].mesh)
    Bbad = sp.vstack([B, B[:1]])
    MQbad = sp.block_diag([MQ, MQ[:1, :1]])
    assert infsup_from_blocks(B, X, MQ) > 0.1
    assert infsup_from_blocks(Bbad, X, MQbad) <= 1e-8


def test_alpha_examples(mesh2):
    mu, lam = 1e-4, 1.0
    a = kernel_coercivity_estimate("jmk", mesh2, MaterialParams(mu, lam))
    assert 0 < a * 2 * mu <= 1 + 2 * lam / (2 * mu)
    a_inf = [kernel_coercivity_estimate("jmk", m, MaterialParams(mu, math.inf))
             for m in (mesh2, refine_uniform(mesh2))]
    assert min(a_inf) > 0
    assert abs(a_inf[1] - a_inf[0]) / a_inf[0] < 0.2


def test_rayleigh_quotient_deviatoric(mesh2):
    mu = 1e-4
    sig = SchemeConfig("jmk").build_spaces(mesh2)["sigma"]
    D = np.array([[1.0, 0.0], [0.0, -1.0]])
    t = sig.interpolate(lambda x, y: np.broadcast_to(D, np.shape(x) + (2, 2)))
    A = assemble_a(sig, MaterialParams(mu, 1.0))
    M = assemble_mass(sig)
    assert (t @ A @ t) / (t @ M @ t) == pytest.approx(1 / (2 * mu), rel=1e-10)


def test_dense_cap(mesh4, monkeypatch):
    monkeypatch.setattr(robustness, "DENSE_DOF_CAP", 50)
    with pytest.raises(DenseLimitError):
        infsup_estimate("jmk", mesh4)
    with pytest.raises(DenseLimitError):
        kernel_inclusion_probe("jmk", mesh4)


def test_empty_kernel(mesh2, monkeypatch):
    monkeypatch.setattr(robustness, "_discrete_kernel", lambda system, extra=None: np.zeros((system.sizes[0], 0)))
    with pytest.raises(EmptyKernelError):
        kernel_inclusion_probe("jmk", mesh2)
    with pytest.raises(EmptyKernelError):
        kernel_coercivity_estimate("jmk", mesh2, MaterialParams(1.0, 1.0))


def test_report(mesh2):
    rep = robustness_report("jmk", case_example2(1e3), mesh2)
    assert rep.beta_h > 0 and rep.alpha_h > 0
    assert rep.invariance_defect >= 0 and rep.kernel_violation >= 0
    assert rep.c_phi == 1.0
    weak = robustness_report("afw1", case_example2(1e3), mesh2, constants=False)
    assert weak.beta_h is None and weak.invariance_defect > 1e-2
