"""Finite element families on triangles.

Each element is described by a set of *prime* functions (monomials in the
reference coordinates, with values in physical components) and by its degrees
of freedom, written as weighted point evaluations. The nodal basis on a given
cell is obtained by inverting the matrix of functionals applied to the prime
functions, so div-conforming elements need no Piola transform: the edge
functionals are defined directly with physical normals.

Edge moments use shifted Legendre polynomials in the canonical edge
parameter (from the lower to the higher global vertex index) against the
outward normal of the cell. The global functional uses the canonical normal,
so global and local functionals differ by the cell's orientation sign.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import eval_legendre

from .quadrature import interval_rule, quadrature_rule

__all__ = [
    "Geometry",
    "DofDescriptor",
    "ReferenceElement",
    "Lagrange",
    "BDM",
    "PEERSRow",
    "RowTensor",
    "JohnsonMercier",
    "make_dg_vector",
    "make_dg_antisym",
    "make_bdm",
    "make_peers_stress",
    "make_peers_multiplier",
    "make_johnson_mercier",
    "make_lagrange",
    "REF_VERTICES",
    "sub_triangle_map",
]

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
ROT = np.array([[0.0, 1.0], [-1.0, 0.0]])
SYM_BASIS = np.array([
    [[1.0, 0.0], [0.0, 0.0]],
    [[0.0, 1.0], [1.0, 0.0]],
    [[0.0, 0.0], [0.0, 1.0]],
])


@dataclass(frozen=True)
class Geometry:
    """Affine cell maps ``x = v0 + J @ xhat`` for a batch of cells."""

    verts: np.ndarray  # (G, 3, 2)
    signs: np.ndarray  # (G, 3)

    @classmethod
    def from_mesh(cls, mesh) -> Geometry:
        return cls(mesh.vertices[mesh.cells], mesh.cell_edge_signs.astype(float))

    @classmethod
    def reference(cls) -> Geometry:
        # local edge 1 runs from vertex 2 to vertex 0, against ascending order
        return cls(REF_VERTICES[None].copy(), np.array([[1.0, -1.0, 1.0]]))

    def __len__(self) -> int:
        return self.verts.shape[0]

    def __getitem__(self, idx) -> Geometry:
        return Geometry(self.verts[idx], self.signs[idx])

    @cached_property
    def v0(self) -> np.ndarray:
        return self.verts[:, 0]

    @cached_property
    def J(self) -> np.ndarray:
        return np.stack([self.verts[:, 1] - self.verts[:, 0],
                         self.verts[:, 2] - self.verts[:, 0]], axis=2)

    @cached_property
    def detJ(self) -> np.ndarray:
        J = self.J
        return J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]

    @cached_property
    def Jinv(self) -> np.ndarray:
        J = self.J
        inv = np.empty_like(J)
        inv[:, 0, 0] = J[:, 1, 1]
        inv[:, 1, 1] = J[:, 0, 0]
        inv[:, 0, 1] = -J[:, 0, 1]
        inv[:, 1, 0] = -J[:, 1, 0]
        return inv / self.detJ[:, None, None]

    @cached_property
    def outward_normals(self) -> np.ndarray:
        """(G, 3, 2) unit outward normal of each local edge."""
        a = self.verts[:, [1, 2, 0]]
        b = self.verts[:, [2, 0, 1]]
        d = b - a
        n = np.stack([d[..., 1], -d[..., 0]], axis=-1)
        return n / np.linalg.norm(n, axis=-1, keepdims=True)

    def map(self, xhat: np.ndarray) -> np.ndarray:
        """Physical points (G, nq, 2) of reference points (nq, 2)."""
        return self.v0[:, None, :] + np.einsum("gij,qj->gqi", self.J, xhat)

    def grad(self, ghat: np.ndarray) -> np.ndarray:
        """Physical gradients (G, ..., 2) from reference gradients (..., 2)."""
        return np.einsum("...r,grc->g...c", ghat, self.Jinv)


@dataclass(frozen=True)
class DofDescriptor:
    entity: str  # "vertex" | "edge" | "cell"
    index: int
    kind: str  # "point" | "normal-moment" | "interior-moment"
    detail: int = 0


def monomial_exponents(k: int) -> list[tuple[int, int]]:
    return [(t - b, b) for t in range(k + 1) for b in range(t + 1)]


def monomials(xhat: np.ndarray, k: int) -> np.ndarray:
    x, y = xhat[:, 0], xhat[:, 1]
    return np.stack([x**a * y**b for a, b in monomial_exponents(k)], axis=1)


def monomial_grads(xhat: np.ndarray, k: int) -> np.ndarray:
    x, y = xhat[:, 0], xhat[:, 1]
    out = np.zeros((xhat.shape[0], (k + 1) * (k + 2) // 2, 2))
    for m, (a, b) in enumerate(monomial_exponents(k)):
        if a:
            out[:, m, 0] = a * x ** (a - 1) * y**b
        if b:
            out[:, m, 1] = b * x**a * y ** (b - 1)
    return out


def edge_points(i: int, s: np.ndarray) -> np.ndarray:
    """Reference points on local edge ``i`` (from vertex i+1 to i+2)."""
    a = REF_VERTICES[(i + 1) % 3]
    b = REF_VERTICES[(i + 2) % 3]
    return a[None] + s[:, None] * (b - a)[None]


def sub_triangle_map(i: int) -> tuple[np.ndarray, np.ndarray]:
    """Affine map ``xhat = A @ xi + c`` onto barycentric subcell ``i``."""
    a = REF_VERTICES[(i + 1) % 3]
    b = REF_VERTICES[(i + 2) % 3]
    c = REF_VERTICES.mean(axis=0)
    return np.stack([b - a, c - a], axis=1), a


def _bubble(xhat):
    """Cubic bubble and its reference gradient."""
    x, y = xhat[:, 0], xhat[:, 1]
    l0 = 1.0 - x - y
    b = l0 * x * y
    g = np.stack([y * (l0 - x), x * (l0 - y)], axis=1)
    return b, g


def _matmul_basis(P: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Combine prime tabulation (G1, nq, np, *vs) with coefficients (G2, np, nb)."""
    G1, nq, npr = P.shape[:3]
    vs = P.shape[3:]
    Pm = np.moveaxis(P.reshape(G1, nq, npr, -1), 2, 3)  # (G1, nq, V, np)
    out = Pm @ C[:, None]  # (G, nq, V, nb)
    out = np.moveaxis(out, 3, 2)
    return out.reshape(out.shape[:3] + vs)


class ReferenceElement:
    """Base class for an element family.

    Subclasses provide the prime tabulation and the dof functionals. The
    public entry points are :meth:`coefficients`, :meth:`evaluate`,
    :meth:`evaluate_div`, :meth:`evaluate_grad` and :meth:`dof_map`.
    """

    name = "element"
    value_shape: tuple = ()
    continuity = "L2"
    composite = False
    degree = 0
    geometry_dependent = True
    # dofs per vertex, per edge, per cell interior
    layout = (0, 0, 0)

    @property
    def dim(self) -> int:
        v, e, c = self.layout
        return 3 * v + 3 * e + c

    # -- to be provided by subclasses -------------------------------------
    def prime(self, xhat, geom, sub=None):
        raise NotImplementedError

    def prime_div(self, xhat, geom, sub=None):
        raise NotImplementedError(f"{self.name} has no divergence")

    def prime_grad(self, xhat, geom, sub=None):
        raise NotImplementedError(f"{self.name} has no gradient")

    def functionals(self, geom):
        """Return ``(points, subs, W)`` with ``dof_i(f) = sum W[g,i,q,...] f(x_q)[...]``."""
        raise NotImplementedError

    def constraint_basis(self, geom):
        return None

    @property
    def descriptors(self) -> list[DofDescriptor]:
        raise NotImplementedError

    # -- generic machinery --------------------------------------------------
    def coefficients(self, geom: Geometry) -> np.ndarray:
        """Coefficients (G, nprime, dim) of the nodal basis in the prime basis."""
        if not self.geometry_dependent:
            geom = Geometry.reference()
        pts, subs, W = self.functionals(geom)
        P = self.prime(pts, geom, subs)
        G = max(W.shape[0], P.shape[0])
        W = W.reshape(W.shape[0], W.shape[1], -1)
        P = np.moveaxis(P.reshape(P.shape[0], P.shape[1], P.shape[2], -1), 2, 3)
        P = P.reshape(P.shape[0], -1, P.shape[-1])
        D = np.broadcast_to(W @ P, (G, W.shape[1], P.shape[-1]))
        N = self.constraint_basis(geom)
        if N is not None:
            D = D @ N
            return N @ np.linalg.inv(D)
        return np.linalg.inv(D)

    def evaluate(self, xhat, geom, C, sub=None):
        return _matmul_basis(self.prime(xhat, geom, sub), C)

    def evaluate_div(self, xhat, geom, C, sub=None):
        return _matmul_basis(self.prime_div(xhat, geom, sub), C)

    def evaluate_grad(self, xhat, geom, C, sub=None):
        return _matmul_basis(self.prime_grad(xhat, geom, sub), C)

    def apply_functionals(self, f, geom: Geometry) -> np.ndarray:
        """Local dof values (G, dim) of a callable ``f(x, y)``."""
        pts, _, W = self.functionals(geom)
        x = geom.map(pts)
        F = np.asarray(f(x[..., 0], x[..., 1]), dtype=float)
        F = np.broadcast_to(F, x.shape[:2] + self.value_shape)
        W = W.reshape(W.shape[0], W.shape[1], -1)
        return np.einsum("giq,gq->gi", np.broadcast_to(W, (len(geom),) + W.shape[1:]),
                         F.reshape(len(geom), -1))

    def dof_map(self, mesh):
        """Return ``(cell_dofs, cell_signs, ndofs)`` for ``mesh``."""
        nv, ne, nc = self.layout
        cells = []
        signs = []
        if nv:
            cells.append((mesh.cells[:, :, None] * nv + np.arange(nv)).reshape(mesh.num_cells, -1))
            signs.append(np.ones((mesh.num_cells, 3 * nv)))
        off = nv * mesh.num_vertices
        if ne:
            cells.append((off + mesh.cell_edges[:, :, None] * ne + np.arange(ne)).reshape(mesh.num_cells, -1))
            signs.append(np.repeat(mesh.cell_edge_signs.astype(float), ne, axis=1))
        off += ne * mesh.num_edges
        if nc:
            cells.append(off + np.arange(mesh.num_cells)[:, None] * nc + np.arange(nc))
            signs.append(np.ones((mesh.num_cells, nc)))
        off += nc * mesh.num_cells
        return np.concatenate(cells, axis=1), np.concatenate(signs, axis=1), off

    # -- reference-cell conveniences --------------------------------------
    def tabulate(self, xhat, derivative=None, sub=None):
        """Basis on the reference triangle: values, ``"div"`` or ``"grad"``."""
        geom = Geometry.reference()
        C = self.coefficients(geom)
        xhat = np.atleast_2d(np.asarray(xhat, dtype=float))
        fn = {None: self.evaluate, "div": self.evaluate_div, "grad": self.evaluate_grad}[derivative]
        return fn(xhat, geom, C, sub)[0]

    def duality_matrix(self, geom: Geometry | None = None) -> np.ndarray:
        geom = Geometry.reference() if geom is None else geom
        C = self.coefficients(geom)
        pts, subs, W = self.functionals(geom)
        B = self.evaluate(pts, geom, C, subs)
        B = np.moveaxis(B.reshape(B.shape[0], B.shape[1], B.shape[2], -1), 2, 3)
        return W.reshape(W.shape[0], W.shape[1], -1) @ B.reshape(B.shape[0], -1, B.shape[-1])

    def __repr__(self) -> str:
        return f"<{self.name}: dim={self.dim}>"


class Lagrange(ReferenceElement):
    """Nodal P_k element, continuous or discontinuous.

    ``shape`` selects scalar, vector or antisymmetric-tensor values; the
    antisymmetric variant maps a scalar ``phi`` to ``phi * [[0, 1], [-1, 0]]``.
    """

    geometry_dependent = False

    def __init__(self, k: int, shape: str = "scalar", continuous: bool = True):
        if continuous and not 1 <= k <= 3:
            raise ValueError("continuous Lagrange elements need 1 <= k <= 3")
        if k < 0:
            raise ValueError("degree must be non-negative")
        self.k = k
        self.degree = k
        self.shape = shape
        self.continuous = continuous
        self.ncomp = 2 if shape == "vector" else 1
        self.value_shape = {"scalar": (), "vector": (2,), "anti": (2, 2)}[shape]
        self.continuity = "H1" if continuous else "L2"
        kind = "CG" if continuous else "DG"
        self.name = f"{kind}{k}" + ("" if shape == "scalar" else f"-{shape}")
        nodes = self._nodes()
        self.nodes = nodes
        if continuous:
            c = self.ncomp
            self.layout = (c, c * (k - 1), c * (k - 1) * (k - 2) // 2)
        else:
            self.layout = (0, 0, self.ncomp * len(nodes))

    def _nodes(self):
        k = self.k
        if k == 0:
            return np.array([[1.0 / 3.0, 1.0 / 3.0]])
        pts = [REF_VERTICES[i] for i in range(3)]
        for i in range(3):
            pts.extend(edge_points(i, np.arange(1, k) / k))
        pts.extend(np.array([a, b]) / k for b in range(1, k) for a in range(1, k - b))
        return np.array(pts, dtype=float).reshape(-1, 2)

    @property
    def nprime(self) -> int:
        return self.ncomp * (self.k + 1) * (self.k + 2) // 2

    def _lift(self, m):
        """Scalar tabulation (..., nm) -> component tabulation (..., nprime, *vs)."""
        if self.shape == "scalar":
            return m
        if self.shape == "vector":
            out = np.zeros(m.shape[:-1] + (2, m.shape[-1], 2))
            out[..., 0, :, 0] = m
            out[..., 1, :, 1] = m
            return out.reshape(m.shape[:-1] + (2 * m.shape[-1], 2))
        return m[..., None, None] * ROT

    def prime(self, xhat, geom, sub=None):
        return self._lift(monomials(xhat, self.k))[None]

    def prime_grad(self, xhat, geom, sub=None):
        g = geom.grad(monomial_grads(xhat, self.k))  # (G, nq, nm, 2)
        if self.shape == "scalar":
            return g
        if self.shape == "vector":
            G, nq, nm, _ = g.shape
            out = np.zeros((G, nq, 2, nm, 2, 2))
            out[:, :, 0, :, 0, :] = g
            out[:, :, 1, :, 1, :] = g
            return out.reshape(G, nq, 2 * nm, 2, 2)
        raise NotImplementedError("gradient of antisymmetric Lagrange fields")

    def prime_div(self, xhat, geom, sub=None):
        if self.shape != "vector":
            return super().prime_div(xhat, geom, sub)
        g = self.prime_grad(xhat, geom, sub)
        return g[..., 0, 0] + g[..., 1, 1]

    def functionals(self, geom):
        nn = len(self.nodes)
        W = np.zeros((1, nn * self.ncomp, nn) + self.value_shape)
        for a in range(nn):
            if self.shape == "scalar":
                W[0, a, a] = 1.0
            elif self.shape == "vector":
                W[0, 2 * a, a, 0] = 1.0
                W[0, 2 * a + 1, a, 1] = 1.0
            else:
                W[0, a, a, 0, 1] = 1.0
        return self.nodes, None, W

    @property
    def descriptors(self):
        out = []
        k = self.k
        for a in range(len(self.nodes)):
            if not self.continuous:
                ent, idx = "cell", 0
            elif a < 3:
                ent, idx = "vertex", a
            elif a < 3 + 3 * (k - 1):
                ent, idx = "edge", (a - 3) // (k - 1)
            else:
                ent, idx = "cell", 0
            out.extend(DofDescriptor(ent, idx, "point", c) for c in range(self.ncomp))
        return out

    def dof_map(self, mesh):
        if not self.continuous:
            return super().dof_map(mesh)
        k, c = self.k, self.ncomp
        nc = mesh.num_cells
        node_ids = [mesh.cells]
        if k > 1:
            t = np.arange(k - 1)
            for i in range(3):
                fwd = mesh.cell_edge_signs[:, i:i + 1] > 0
                local = np.where(fwd, t, k - 2 - t)
                node_ids.append(mesh.num_vertices + mesh.cell_edges[:, i:i + 1] * (k - 1) + local)
        nint = (k - 1) * (k - 2) // 2
        base = mesh.num_vertices + (k - 1) * mesh.num_edges
        if nint:
            node_ids.append(base + np.arange(nc)[:, None] * nint + np.arange(nint))
        nodes = np.concatenate(node_ids, axis=1)
        dofs = (nodes[:, :, None] * c + np.arange(c)).reshape(nc, -1)
        ndofs = c * (base + nint * nc)
        return dofs, np.ones(dofs.shape), ndofs

    def node_positions(self, mesh):
        """Physical coordinates of every global node (continuous spaces)."""
        dofs, _, ndofs = self.dof_map(mesh)
        x = Geometry.from_mesh(mesh).map(self.nodes)
        out = np.zeros((ndofs // self.ncomp, 2))
        out[dofs[:, :: self.ncomp] // self.ncomp] = x
        return out


class _HdivBase(ReferenceElement):
    """Shared edge-moment machinery for div-conforming vector elements."""

    continuity = "Hdiv"
    value_shape = (2,)
    edge_order = 0

    def _edge_functionals(self, geom, ncomp_moment=1):
        """Edge moments: local edge ``i``, Legendre degree ``j``, component."""
        q = self.edge_order
        rule = interval_rule(2 * q + 2 * self.degree + 4)
        s, w = rule.points, rule.weights
        pts = np.concatenate([edge_points(i, s) for i in range(3)])
        nqe = s.size
        n = geom.outward_normals  # (G, 3, 2)
        G = len(geom)
        per_edge = (q + 1) * ncomp_moment
        vs = self.value_shape
        W = np.zeros((G, 3 * per_edge, 3 * nqe) + vs)
        for i in range(3):
            for j in range(q + 1):
                leg = w * eval_legendre(j, 2.0 * s - 1.0)
                sj = geom.signs[:, i] ** j  # canonical parameter flips odd degrees
                block = sj[:, None, None] * leg[None, :, None] * n[:, i, None, :]
                for c in range(ncomp_moment):
                    row = i * per_edge + j * ncomp_moment + c
                    cols = slice(i * nqe, (i + 1) * nqe)
                    if vs == (2,):
                        W[:, row, cols, :] = block
                    else:
                        W[:, row, cols, c, :] = block
        subs = np.repeat(np.arange(3), nqe)
        return pts, subs, W


class BDM(_HdivBase):
    """Brezzi-Douglas-Marini vector element of degree ``k``."""

    def __init__(self, k: int):
        if k < 1:
            raise ValueError("BDM needs k >= 1")
        self.k = k
        self.degree = k
        self.edge_order = k
        self.name = f"BDM{k}"
        self.layout = (0, k + 1, (k + 1) * (k + 2) - 3 * (k + 1))

    def prime(self, xhat, geom, sub=None):
        m = monomials(xhat, self.k)
        nm = m.shape[1]
        out = np.zeros((xhat.shape[0], 2, nm, 2))
        out[:, 0, :, 0] = m
        out[:, 1, :, 1] = m
        return out.reshape(1, xhat.shape[0], 2 * nm, 2)

    def prime_div(self, xhat, geom, sub=None):
        g = geom.grad(monomial_grads(xhat, self.k))  # (G, nq, nm, 2)
        return np.concatenate([g[..., 0], g[..., 1]], axis=2)

    def functionals(self, geom):
        pts_e, subs_e, We = self._edge_functionals(geom)
        k = self.k
        rule = quadrature_rule(2 * k + 2)
        xq, wq = rule.points, rule.weights
        rows = []
        if k >= 2:
            grads = geom.grad(monomial_grads(xq, k - 1)[:, 1:])  # (G, nq, nm-1, 2)
            rows.append(np.moveaxis(grads, 2, 1) * wq[None, None, :, None])
            b, gb = _bubble(xq)
            mk = monomials(xq, k - 2)
            gmk = monomial_grads(xq, k - 2)
            gbq = gb[:, None, :] * mk[:, :, None] + b[:, None, None] * gmk  # ref grad of b*q
            phys = geom.grad(gbq)  # (G, nq, nm, 2)
            curl = np.stack([phys[..., 1], -phys[..., 0]], axis=-1)
            rows.append(np.moveaxis(curl, 2, 1) * wq[None, None, :, None])
        G = len(geom)
        nqe = pts_e.shape[0]
        if rows:
            Wi = np.concatenate(rows, axis=1)
            W = np.zeros((G, We.shape[1] + Wi.shape[1], nqe + xq.shape[0], 2))
            W[:, : We.shape[1], :nqe] = We
            W[:, We.shape[1]:, nqe:] = Wi
            pts = np.concatenate([pts_e, xq])
        else:
            W, pts = We, pts_e
        return pts, None, W

    @property
    def descriptors(self):
        out = [DofDescriptor("edge", i, "normal-moment", j) for i in range(3) for j in range(self.k + 1)]
        out += [DofDescriptor("cell", 0, "interior-moment", j) for j in range(self.layout[2])]
        return out


class PEERSRow(_HdivBase):
    """Lowest-order Raviart-Thomas enriched by the curl of the cubic bubble."""

    name = "RT0+curlB3"
    degree = 2
    layout = (0, 1, 1)

    def prime(self, xhat, geom, sub=None):
        G = len(geom)
        nq = xhat.shape[0]
        out = np.zeros((G, nq, 4, 2))
        out[:, :, 0, 0] = 1.0
        out[:, :, 1, 1] = 1.0
        out[:, :, 2, :] = np.einsum("gij,qj->gqi", geom.J, xhat)
        _, gb = _bubble(xhat)
        g = geom.grad(gb)
        out[:, :, 3, 0] = g[..., 1]
        out[:, :, 3, 1] = -g[..., 0]
        return out

    def prime_div(self, xhat, geom, sub=None):
        out = np.zeros((len(geom), xhat.shape[0], 4))
        out[:, :, 2] = 2.0
        return out

    def functionals(self, geom):
        pts_e, _, We = self._edge_functionals(geom)
        rule = quadrature_rule(6)
        xq, wq = rule.points, rule.weights
        _, gb = _bubble(xq)
        g = geom.grad(gb)
        curl = np.stack([g[..., 1], -g[..., 0]], axis=-1) * wq[None, :, None]
        G, nqe = len(geom), pts_e.shape[0]
        W = np.zeros((G, 4, nqe + xq.shape[0], 2))
        W[:, :3, :nqe] = We
        W[:, 3, nqe:] = curl
        return np.concatenate([pts_e, xq]), None, W

    @property
    def descriptors(self):
        return [DofDescriptor("edge", i, "normal-moment", 0) for i in range(3)] + [
            DofDescriptor("cell", 0, "interior-moment", 0)]


class RowTensor(ReferenceElement):
    """2x2 tensor element whose two rows are independent copies of ``row``."""

    value_shape = (2, 2)

    def __init__(self, row: ReferenceElement):
        self.row = row
        self.name = f"{row.name}^2"
        self.degree = row.degree
        self.continuity = row.continuity
        self.geometry_dependent = row.geometry_dependent
        self.layout = tuple(2 * v for v in row.layout)

    def coefficients(self, geom):
        return self.row.coefficients(geom)

    @staticmethod
    def _stack(v, tensor_axes):
        G, nq, nb = v.shape[:3]
        tail = v.shape[3:]
        out = np.zeros((G, nq, 2, nb) + (2,) + tail)
        out[:, :, 0, :, 0] = v
        out[:, :, 1, :, 1] = v
        return out.reshape((G, nq, 2 * nb, 2) + tail)

    def evaluate(self, xhat, geom, C, sub=None):
        return self._stack(self.row.evaluate(xhat, geom, C, sub), 2)

    def evaluate_div(self, xhat, geom, C, sub=None):
        return self._stack(self.row.evaluate_div(xhat, geom, C, sub), 1)

    def functionals(self, geom):
        pts, subs, W = self.row.functionals(geom)
        G, nd, nq = W.shape[:3]
        out = np.zeros((G, 2, nd, nq, 2, 2))
        out[:, 0, :, :, 0, :] = W
        out[:, 1, :, :, 1, :] = W
        return pts, subs, out.reshape(G, 2 * nd, nq, 2, 2)

    def dof_map(self, mesh):
        d, s, n = self.row.dof_map(mesh)
        return np.concatenate([d, d + n], axis=1), np.concatenate([s, s], axis=1), 2 * n

    @property
    def descriptors(self):
        return self.row.descriptors * 2


class JohnsonMercier(ReferenceElement):
    """Composite symmetric stress element on the barycentric split.

    The raw space is piecewise linear symmetric tensors on the three subcells
    (27 functions); the continuity of the traction across the three interior
    edges removes 12 of them.
    """

    name = "JM"
    value_shape = (2, 2)
    continuity = "Hdiv"
    composite = True
    degree = 1
    layout = (0, 4, 3)
    nprime = 27

    def __init__(self):
        self._sub_inv = []
        c = REF_VERTICES.mean(axis=0)
        for s in range(3):
            w = np.array([REF_VERTICES[(s + 1) % 3], REF_VERTICES[(s + 2) % 3], c])
            M = np.vstack([w.T, np.ones(3)])
            self._sub_inv.append(np.linalg.inv(M))  # barycentric = inv @ [x, y, 1]

    @staticmethod
    def locate(xhat):
        """Subcell containing each reference point (smallest barycentric)."""
        lam = np.stack([1.0 - xhat[:, 0] - xhat[:, 1], xhat[:, 0], xhat[:, 1]], axis=1)
        return np.argmin(lam, axis=1)

    def _subs(self, xhat, sub):
        if sub is None:
            return self.locate(xhat)
        return np.broadcast_to(np.asarray(sub), (xhat.shape[0],))

    def _mu(self, xhat, subs):
        mu = np.zeros((xhat.shape[0], 3, 3))  # (nq, sub, node)
        h = np.vstack([xhat.T, np.ones(xhat.shape[0])])
        for s in range(3):
            mask = subs == s
            mu[mask, s, :] = (self._sub_inv[s] @ h[:, mask]).T
        return mu

    def prime(self, xhat, geom, sub=None):
        subs = self._subs(xhat, sub)
        mu = self._mu(xhat, subs).reshape(-1, 9)
        out = mu[:, :, None, None, None] * SYM_BASIS[None, None]
        return out.reshape(1, xhat.shape[0], 27, 2, 2)

    def prime_div(self, xhat, geom, sub=None):
        subs = self._subs(xhat, sub)
        nq = xhat.shape[0]
        ghat = np.zeros((nq, 3, 3, 2))
        for s in range(3):
            ghat[subs == s, s, :, :] = self._sub_inv[s][:, :2]
        g = geom.grad(ghat.reshape(nq, 9, 2))  # (G, nq, 9, 2)
        div = np.einsum("gqac,kic->gqaki", g, SYM_BASIS)
        return div.reshape(len(geom), nq, 27, 2)

    def constraint_matrix(self, geom):
        """(G, 12, 27) traction jumps at both ends of each interior edge."""
        G = len(geom)
        verts = geom.verts
        center = verts.mean(axis=1)
        R = np.zeros((G, 12, 27))
        row = 0
        for m in range(3):
            # interior edge from the barycenter to vertex m; v_m is node 1 of
            # subcell m+1 and node 0 of subcell m+2, the barycenter is node 2
            d = verts[:, m] - center
            n = np.stack([d[:, 1], -d[:, 0]], axis=1)
            n /= np.linalg.norm(n, axis=1, keepdims=True)
            En = np.einsum("kij,gj->gki", SYM_BASIS, n)  # (G, 3, 2)
            sa, sb = (m + 1) % 3, (m + 2) % 3
            for na, nb in ((1, 0), (2, 2)):
                for i in range(2):
                    R[:, row, sa * 9 + na * 3: sa * 9 + na * 3 + 3] = En[:, :, i]
                    R[:, row, sb * 9 + nb * 3: sb * 9 + nb * 3 + 3] = -En[:, :, i]
                    row += 1
        return R

    def constraint_basis(self, geom):
        _, sv, vh = np.linalg.svd(self.constraint_matrix(geom))
        if np.any(sv[:, -1] < 1e-10 * sv[:, 0]):
            raise np.linalg.LinAlgError("JM constraint system lost rank; degenerate cell")
        return np.swapaxes(vh[:, 12:, :], 1, 2)

    def functionals(self, geom):
        pts_e, subs_e, We = _HdivBase._edge_functionals(self, geom, ncomp_moment=2)
        rule = quadrature_rule(4)
        pts_i, subs_i = [], []
        for s in range(3):
            A, c = sub_triangle_map(s)
            pts_i.append(rule.points @ A.T + c)
            subs_i.append(np.full(len(rule), s))
        pts_i = np.concatenate(pts_i)
        wmean = np.tile(rule.weights, 3) * (2.0 / 3.0)
        G, nqe = len(geom), pts_e.shape[0]
        W = np.zeros((G, 15, nqe + pts_i.shape[0], 2, 2))
        W[:, :12, :nqe] = We
        for r, (a, b) in enumerate(((0, 0), (0, 1), (1, 1))):
            W[:, 12 + r, nqe:, a, b] = wmean
        pts = np.concatenate([pts_e, pts_i])
        subs = np.concatenate([subs_e, np.concatenate(subs_i)])
        return pts, subs, W

    edge_order = 1

    @property
    def descriptors(self):
        out = [DofDescriptor("edge", i, "normal-moment", j) for i in range(3) for j in range(2) for _ in range(2)]
        return out + [DofDescriptor("cell", 0, "interior-moment", r) for r in range(3)]


def make_dg_vector(k: int) -> Lagrange:
    return Lagrange(k, "vector", continuous=False)


def make_dg_antisym(k: int) -> Lagrange:
    return Lagrange(k, "anti", continuous=False)


def make_bdm(k: int) -> BDM:
    return BDM(k)


def make_peers_stress() -> RowTensor:
    return RowTensor(PEERSRow())


def make_peers_multiplier() -> Lagrange:
    return Lagrange(1, "anti", continuous=True)


def make_johnson_mercier() -> JohnsonMercier:
    return JohnsonMercier()


def make_lagrange(k: int, vector: bool = False) -> Lagrange:
    return Lagrange(k, "vector" if vector else "scalar", continuous=True)
