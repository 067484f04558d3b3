import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from symstress.elements import (
    BDM,
    Geometry,
    JohnsonMercier,
    Lagrange,
    PEERSRow,
    RowTensor,
    edge_points,
    make_dg_antisym,
    make_johnson_mercier,
    make_peers_stress,
)
from symstress.quadrature import interval_rule

ELEMENTS = {
    "P1": lambda: Lagrange(1),
    "P2": lambda: Lagrange(2),
    "P3vec": lambda: Lagrange(3, "vector"),
    "dP0vec": lambda: Lagrange(0, "vector", continuous=False),
    "dP2anti": lambda: make_dg_antisym(2),
    "BDM1": lambda: BDM(1),
    "BDM2": lambda: BDM(2),
    "BDM3": lambda: BDM(3),
    "PEERS": make_peers_stress,
    "JM": make_johnson_mercier,
}


def random_geometry(rng, G=5):
    verts = rng.uniform(-1, 2, size=(G, 3, 2))
    e1, e2 = verts[:, 1] - verts[:, 0], verts[:, 2] - verts[:, 0]
    area = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    flip = area < 0
    verts[flip] = verts[flip][:, [0, 2, 1]]
    area = np.abs(area)
    keep = area > 0.2
    signs = rng.choice([-1.0, 1.0], size=(G, 3))
    return Geometry(verts[keep], signs[keep])


@pytest.mark.parametrize("name", sorted(ELEMENTS))
def test_duality_reference(name):
    el = ELEMENTS[name]()
    D = el.duality_matrix()
    np.testing.assert_allclose(D[0], np.eye(el.dim), atol=1e-11)


@pytest.mark.parametrize("name", sorted(ELEMENTS))
@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_duality_random_cells(name, seed):
    el = ELEMENTS[name]()
    geom = random_geometry(np.random.default_rng(seed))
    if len(geom) == 0:
        return
    D = el.duality_matrix(geom)
    err = np.abs(D - np.eye(el.dim)).max()
    assert err < 1e-9


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_bdm_dimension(k):
    el = BDM(k)
    assert el.dim == (k + 1) * (k + 2)
    assert 3 * el.layout[1] == 3 * (k + 1)


@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_lagrange_dimension(k):
    assert Lagrange(k, continuous=k > 0).dim == (k + 1) * (k + 2) // 2
    assert Lagrange(k, "vector", continuous=False).dim == (k + 1) * (k + 2)
    assert make_dg_antisym(k).dim == (k + 1) * (k + 2) // 2


def test_peers_dimension():
    assert PEERSRow().dim == 4
    assert make_peers_stress().dim == 8


def test_jm_dimension_rank_oracle(rng):
    el = JohnsonMercier()
    geom = random_geometry(rng, 8)
    R = el.constraint_matrix(geom)
    assert R.shape[1:] == (12, 27)
    for Rg in R:
        assert 27 - np.linalg.matrix_rank(Rg) == 15
    assert el.dim == 15
    assert el.composite


def test_peers_bubble_curl_component():
    el = PEERSRow()
    geom = Geometry.reference()
    rule = interval_rule(8)
    for i in range(3):
        pts = edge_points(i, rule.points)
        vals = el.prime(pts, geom)[0, :, 3]
        n = geom.outward_normals[0, i]
        assert np.abs(vals @ n).max() <= 1e-12
    pts = np.random.default_rng(0).uniform(0, 0.5, size=(20, 2))
    assert np.abs(el.prime_div(pts, geom)[0, :, 3]).max() == 0.0


def test_outward_normals(rng):
    geom = random_geometry(rng, 6)
    for g in range(len(geom)):
        c = geom.verts[g].mean(axis=0)
        for i in range(3):
            n = geom.outward_normals[g, i]
            mid = 0.5 * (geom.verts[g, (i + 1) % 3] + geom.verts[g, (i + 2) % 3])
            assert np.isclose(np.linalg.norm(n), 1.0)
            assert n @ (mid - c) > 0


def test_row_tensor_divergence_is_row_wise(rng):
    el = RowTensor(BDM(1))
    geom = random_geometry(rng, 3)
    C = el.coefficients(geom)
    x = np.array([[0.2, 0.3], [0.1, 0.7]])
    div = el.evaluate_div(x, geom, C)
    # the first half of the basis only populates row 0
    half = el.dim // 2
    assert np.abs(div[:, :, :half, 1]).max() == 0.0
    assert np.abs(div[:, :, half:, 0]).max() == 0.0


def test_descriptors_match_dim():
    for name, make in ELEMENTS.items():
        el = make()
        if isinstance(el, Lagrange):
            continue
        assert len(el.descriptors) == el.dim, name
