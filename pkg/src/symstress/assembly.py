"""Assembly of the mixed elasticity and Stokes saddle-point systems.

Block layout of the elasticity system::

    [ A  B^T  C^T ] [sigma]   [G_sigma]
    [ B   0    0  ] [  u  ] = [  G_u  ]
    [ C   0    0  ] [omega]   [  G_xi ]

with ``a(sigma, tau) = (sigma^D, tau^D) / (2 mu) + (tr sigma, tr tau) / (d (2 mu + d lam))``,
``b(sigma, v) = (div sigma, v)`` and ``c(tau, xi) = (tau, xi)``. The trace
coefficient is exactly zero for ``lam = inf``; the resulting one-dimensional
nullspace (the identity tensor) is recorded on the system and removed by the
solver.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .cases import ManufacturedCase, MaterialParams
from .elements import (
    edge_points,
    make_bdm,
    make_dg_antisym,
    make_dg_vector,
    make_johnson_mercier,
    make_lagrange,
    make_peers_multiplier,
    make_peers_stress,
    Lagrange,
    RowTensor,
)
from .mesh import Mesh
from .quadrature import interval_rule, quadrature_rule
from .spaces import FunctionSpace, cell_chunks, cell_geometry, integration_mesh

__all__ = [
    "MaterialParams",
    "SchemeConfig",
    "SaddlePointSystem",
    "assemble_a",
    "assemble_b",
    "assemble_c",
    "assemble_mass",
    "assemble_hdiv_gram",
    "assemble_load",
    "assemble_boundary_load",
    "assemble_rhs",
    "assemble_system",
    "assemble_stokes",
    "identity_coefficients",
]

EYE = np.eye(2)


@dataclass(frozen=True)
class SchemeConfig:
    """A discretisation: ``jmk``, ``peers``, ``afw`` (with order ``k``), ``th`` or ``sv``."""

    element: str
    k: int = 1

    def __post_init__(self):
        if self.element not in ("jmk", "peers", "afw", "th", "sv"):
            raise ValueError(f"unknown scheme {self.element!r}")
        if self.element == "afw" and self.k < 1:
            raise ValueError("AFW needs k >= 1")

    @classmethod
    def parse(cls, text: str) -> SchemeConfig:
        t = text.strip().lower().replace("-", "_")
        if t in ("jm", "jmk"):
            return cls("jmk")
        if t == "peers":
            return cls("peers")
        if t in ("th", "ht", "taylor_hood"):
            return cls("th")
        if t in ("sv", "scott_vogelius"):
            return cls("sv")
        m = re.fullmatch(r"afw_?(\d+)", t)
        if m:
            return cls("afw", int(m.group(1)))
        raise ValueError(f"cannot parse scheme {text!r}")

    @property
    def symmetry(self) -> str | None:
        return {"jmk": "strong", "peers": "weak", "afw": "weak"}.get(self.element)

    @property
    def is_stokes(self) -> bool:
        return self.element in ("th", "sv")

    @property
    def label(self) -> str:
        """File-name label: ``jm``, ``peers``, ``afw_1``, ``ht``, ``sv``."""
        return {"jmk": "jm", "peers": "peers", "th": "ht", "sv": "sv"}.get(
            self.element, f"afw_{self.k}")

    @property
    def file_label(self) -> str:
        """Label used in data file names: ``jm_1``, ``peers_1``, ``afw_3``, ``ht``, ``sv``."""
        if self.element in ("jmk", "peers"):
            return f"{self.label}_1"
        return self.label

    def build_spaces(self, mesh: Mesh) -> dict:
        e = self.element
        if e == "jmk":
            return {"sigma": FunctionSpace(mesh, make_johnson_mercier()),
                    "u": FunctionSpace(mesh.bary, make_dg_vector(0))}
        if e == "peers":
            return {"sigma": FunctionSpace(mesh, make_peers_stress()),
                    "u": FunctionSpace(mesh, make_dg_vector(0)),
                    "omega": FunctionSpace(mesh, make_peers_multiplier())}
        if e == "afw":
            return {"sigma": FunctionSpace(mesh, RowTensor(make_bdm(self.k))),
                    "u": FunctionSpace(mesh, make_dg_vector(self.k - 1)),
                    "omega": FunctionSpace(mesh, make_dg_antisym(self.k - 1))}
        if e == "th":
            return {"velocity": FunctionSpace(mesh, make_lagrange(2, vector=True)),
                    "pressure": FunctionSpace(mesh, make_lagrange(1))}
        bary = mesh if mesh.barycentric else mesh.bary
        return {"velocity": FunctionSpace(bary, make_lagrange(2, vector=True)),
                "pressure": FunctionSpace(bary, Lagrange(1, "scalar", continuous=False))}


# -- generic kernels ---------------------------------------------------------

def _bilinear(test: FunctionSpace, trial: FunctionSpace, kernel, degree: int,
              test_deriv=None, trial_deriv=None, imesh: Mesh | None = None) -> sp.csr_matrix:
    """Assemble ``sum_cells kernel(test_vals, trial_vals, weights)``.

    Chunks are reduced in ascending cell order, so the result is
    deterministic.
    """
    imesh = imesh or integration_mesh(test, trial)
    rule = quadrature_rule(degree)
    xi, w = rule.points, rule.weights
    out = sp.csr_matrix((test.ndofs, trial.ndofs))
    per_cell = len(rule) * 4 * (test.ldim + trial.ldim)
    for c0, c1 in cell_chunks(imesh, per_cell):
        wq = w[None, :] * np.abs(cell_geometry(imesh, c0, c1).detJ)[:, None]
        dt, vt = test.restrict(imesh, c0, c1, xi, test_deriv)
        ds, vs = trial.restrict(imesh, c0, c1, xi, trial_deriv)
        Ke = kernel(vt, vs, wq)
        rows = np.broadcast_to(dt[:, :, None], Ke.shape).ravel()
        cols = np.broadcast_to(ds[:, None, :], Ke.shape).ravel()
        out = out + sp.csr_matrix((Ke.ravel(), (rows, cols)), shape=out.shape)
    out.sum_duplicates()
    return out


def _frob(vt, vs, wq):
    vt2 = vt.reshape(vt.shape[:3] + (-1,))
    vs2 = vs.reshape(vs.shape[:3] + (-1,))
    return np.einsum("cqia,cqja,cq->cij", vt2, vs2, wq, optimize=True)


def _symmetrize(M: sp.csr_matrix) -> sp.csr_matrix:
    S = (0.5 * (M + M.T)).tocsr()
    S.sum_duplicates()
    return S


def _degree(*spaces, extra=0):
    return min(20, max(1, sum(s.element.degree for s in spaces) + extra))


def assemble_a(stress_space: FunctionSpace, params: MaterialParams,
               imesh: Mesh | None = None) -> sp.csr_matrix:
    """Compliance block; exactly symmetric."""
    inv2mu = 1.0 / (2.0 * params.mu)
    ktr = params.trace_coefficient - inv2mu / params.d

    def kernel(vt, vs, wq):
        tt = np.trace(vt, axis1=-2, axis2=-1)
        ts = np.trace(vs, axis1=-2, axis2=-1)
        M = inv2mu * _frob(vt, vs, wq) + ktr * np.einsum("cqi,cqj,cq->cij", tt, ts, wq)
        return 0.5 * (M + np.swapaxes(M, 1, 2))

    imesh = imesh or integration_mesh(stress_space)
    A = _bilinear(stress_space, stress_space, kernel, _degree(stress_space, stress_space), imesh=imesh)
    return _symmetrize(A)


def assemble_b(stress_space: FunctionSpace, velocity_space: FunctionSpace) -> sp.csr_matrix:
    """``B[j, i] = (div phi_i, v_j)``."""
    if velocity_space.continuity != "L2":
        raise ValueError("the displacement space must be discontinuous")
    deg = _degree(stress_space, velocity_space)
    return _bilinear(velocity_space, stress_space, _frob, deg, trial_deriv="div")


def assemble_c(stress_space: FunctionSpace, multiplier_space: FunctionSpace | None) -> sp.csr_matrix:
    """``C[j, i] = (phi_i, xi_j)``."""
    if multiplier_space is None:
        raise ValueError("the c-form only exists for weakly symmetric schemes")
    deg = _degree(stress_space, multiplier_space)
    return _bilinear(multiplier_space, stress_space, _frob, deg)


def assemble_mass(space: FunctionSpace, imesh: Mesh | None = None) -> sp.csr_matrix:
    """L2 Gram matrix."""
    M = _bilinear(space, space, _frob, _degree(space, space), imesh=imesh or integration_mesh(space))
    return _symmetrize(M)


def assemble_hdiv_gram(stress_space: FunctionSpace) -> sp.csr_matrix:
    """Gram matrix of ``(tau, sigma) + (div tau, div sigma)``."""
    imesh = integration_mesh(stress_space)
    M = assemble_mass(stress_space, imesh)
    D = _bilinear(stress_space, stress_space, _frob, _degree(stress_space, stress_space),
                  "div", "div", imesh=imesh)
    return _symmetrize(M + D)


def assemble_load(space: FunctionSpace, func, degree: int, derivative=None,
                  imesh: Mesh | None = None) -> np.ndarray:
    """``L[i] = integral func : phi_i`` (or ``func . div phi_i``)."""
    imesh = imesh or integration_mesh(space)
    rule = quadrature_rule(min(degree, 20))
    xi, w = rule.points, rule.weights
    out = np.zeros(space.ndofs)
    for c0, c1 in cell_chunks(imesh, len(rule) * 4 * space.ldim):
        g = cell_geometry(imesh, c0, c1)
        X = g.map(xi)
        wq = w[None, :] * np.abs(g.detJ)[:, None]
        dofs, vals = space.restrict(imesh, c0, c1, xi, derivative)
        F = np.asarray(func(X[..., 0], X[..., 1]), dtype=float)
        F = np.broadcast_to(F, vals.shape[:2] + vals.shape[3:])
        loc = np.einsum("cqia,cqa,cq->ci", vals.reshape(vals.shape[:3] + (-1,)),
                        F.reshape(F.shape[:2] + (-1,)), wq)
        np.add.at(out, dofs.ravel(), loc.ravel())
    return out


def assemble_boundary_load(stress_space: FunctionSpace, g, degree: int) -> np.ndarray:
    """``L[i] = sum over boundary edges of integral (phi_i n) . g ds``."""
    m = stress_space.mesh
    be = np.flatnonzero(m.boundary_edges)
    cells = m.edge_cells[be, 0]
    local = np.argmax(m.cell_edges[cells] == be[:, None], axis=1)
    rule = interval_rule(degree)
    out = np.zeros(stress_space.ndofs)
    for i in range(3):
        sel = cells[local == i]
        if sel.size == 0:
            continue
        pts = edge_points(i, rule.points)
        vals = stress_space.tabulate(pts, sel, sub=i)
        geom = stress_space.geometry[sel]
        X = geom.map(pts)
        n = geom.outward_normals[:, i]
        length = np.linalg.norm(geom.verts[:, (i + 2) % 3] - geom.verts[:, (i + 1) % 3], axis=1)
        G = np.asarray(g(X[..., 0], X[..., 1]), dtype=float)
        vn = np.einsum("cqiab,cb->cqia", vals, n)
        loc = np.einsum("cqia,cqa,q,c->ci", vn, G, rule.weights, length)
        np.add.at(out, stress_space.cell_dofs[sel].ravel(), loc.ravel())
    return out


def identity_coefficients(stress_space: FunctionSpace) -> np.ndarray:
    """Coefficients of the constant identity tensor."""
    return stress_space.interpolate(lambda x, y: np.broadcast_to(EYE, np.shape(x) + (2, 2)))


def _rhs_degree(spaces, case):
    deg = 2 * max(s.element.degree for s in spaces) + 4
    return min(20, max(deg, case.quad_degree or 0))


def assemble_rhs(case: ManufacturedCase, spaces: dict, params: MaterialParams | None = None,
                 ramp: float = 1.0):
    """Right-hand sides ``(G_sigma, G_u, G_xi)``; ``ramp`` scales ``g`` and ``F``."""
    sig = spaces["sigma"]
    deg = _rhs_degree([s for s in spaces.values()], case)
    G_sigma = ramp * (assemble_boundary_load(sig, case.data_g, deg)
                      + assemble_load(sig, case.data_F, deg))
    G_u = assemble_load(spaces["u"], case.data_f, deg, imesh=spaces["u"].mesh)
    om = spaces.get("omega")
    G_xi = np.zeros(om.ndofs) if om is not None else np.zeros(0)
    return G_sigma, G_u, G_xi


@dataclass
class SaddlePointSystem:
    """Assembled blocks, right-hand sides and nullspace metadata.

    ``nullspace`` and ``trace_functional`` are full-length vectors; after a
    solve the post-processing shifts the solution along ``nullspace`` until
    ``trace_functional @ x == target_trace``. For Stokes systems the first
    field is the velocity (boundary dofs eliminated) and the second the
    pressure.
    """

    A: sp.csr_matrix
    B: sp.csr_matrix
    C: sp.csr_matrix | None
    G_sigma: np.ndarray
    G_u: np.ndarray
    G_xi: np.ndarray
    spaces: dict
    scheme: SchemeConfig
    params: MaterialParams | None = None
    nullspace: np.ndarray | None = None
    trace_functional: np.ndarray | None = None
    target_trace: float = 0.0
    free_velocity: np.ndarray | None = None
    field_names: tuple = ("sigma", "u", "omega")
    _matrix: sp.csr_matrix | None = field(default=None, repr=False)

    @property
    def sizes(self) -> tuple:
        nc = self.C.shape[0] if self.C is not None else 0
        return (self.A.shape[0], self.B.shape[0], nc)

    @property
    def offsets(self) -> dict:
        n0, n1, n2 = self.sizes
        out = {self.field_names[0]: slice(0, n0), self.field_names[1]: slice(n0, n0 + n1)}
        if n2:
            out[self.field_names[2]] = slice(n0 + n1, n0 + n1 + n2)
        return out

    @property
    def ndofs(self) -> int:
        return sum(self.sizes)

    def matrix(self) -> sp.csr_matrix:
        if self._matrix is None:
            if self.C is not None and self.C.shape[0]:
                K = sp.bmat([[self.A, self.B.T, self.C.T],
                             [self.B, None, None],
                             [self.C, None, None]], format="csr")
            else:
                K = sp.bmat([[self.A, self.B.T], [self.B, None]], format="csr")
            K.sum_duplicates()
            self._matrix = K
        return self._matrix

    def rhs(self) -> np.ndarray:
        return np.concatenate([self.G_sigma, self.G_u, self.G_xi])

    def with_rhs(self, G_sigma=None, G_u=None, G_xi=None, target_trace=None) -> SaddlePointSystem:
        """Copy sharing the assembled blocks (and cached matrix)."""
        return replace(
            self,
            G_sigma=self.G_sigma if G_sigma is None else G_sigma,
            G_u=self.G_u if G_u is None else G_u,
            G_xi=self.G_xi if G_xi is None else G_xi,
            target_trace=self.target_trace if target_trace is None else target_trace,
        )

    def with_case(self, case: ManufacturedCase) -> SaddlePointSystem:
        if self.scheme.is_stokes:
            return _stokes_rhs(self, case)
        G = assemble_rhs(case, self.spaces, self.params)
        return self.with_rhs(*G, target_trace=case.target_trace)


def assemble_system(scheme: SchemeConfig | str, mesh_or_spaces, case: ManufacturedCase,
                    params: MaterialParams | None = None) -> SaddlePointSystem:
    """Build spaces (if a mesh is given), blocks, right-hand sides and nullspace."""
    if isinstance(scheme, str):
        scheme = SchemeConfig.parse(scheme)
    spaces = mesh_or_spaces if isinstance(mesh_or_spaces, dict) else scheme.build_spaces(mesh_or_spaces)
    if scheme.is_stokes:
        return assemble_stokes(spaces["velocity"], spaces["pressure"], case, scheme)
    params = params or case.params
    sig, u = spaces["sigma"], spaces["u"]
    A = assemble_a(sig, params)
    B = assemble_b(sig, u)
    om = spaces.get("omega")
    C = assemble_c(sig, om) if om is not None else None
    G = assemble_rhs(case, spaces, params)
    n = sig.ndofs + u.ndofs + (om.ndofs if om is not None else 0)
    trace = np.zeros(n)
    trace[: sig.ndofs] = assemble_load(sig, lambda x, y: np.broadcast_to(EYE, np.shape(x) + (2, 2)),
                                       _degree(sig))
    null = None
    if params.incompressible:
        null = np.zeros(n)
        null[: sig.ndofs] = identity_coefficients(sig)
    return SaddlePointSystem(A, B, C, *G, spaces=spaces, scheme=scheme, params=params,
                             nullspace=null, trace_functional=trace,
                             target_trace=case.target_trace)


def _eps_kernel(vt, vs, wq):
    et = 0.5 * (vt + np.swapaxes(vt, -1, -2))
    es = 0.5 * (vs + np.swapaxes(vs, -1, -2))
    M = _frob(et, es, wq)
    return 0.5 * (M + np.swapaxes(M, 1, 2))


def _stokes_rhs(system: SaddlePointSystem, case: ManufacturedCase) -> SaddlePointSystem:
    vel = system.spaces["velocity"]
    deg = _rhs_degree([vel], case)
    f = assemble_load(vel, case.data_f, deg)[system.free_velocity]
    return system.with_rhs(G_sigma=f, G_u=np.zeros(system.B.shape[0]), target_trace=0.0)


def assemble_stokes(velocity_space: FunctionSpace, pressure_space: FunctionSpace,
                    case: ManufacturedCase | None = None,
                    scheme: SchemeConfig | None = None) -> SaddlePointSystem:
    """``(eps u, eps v) - (div v, p) = (f, v)`` with ``u = 0`` on the boundary."""
    vm, pm = velocity_space.mesh, pressure_space.mesh
    if scheme is None:
        scheme = SchemeConfig("sv" if pressure_space.continuity == "L2" else "th")
    if scheme.element == "sv" and not (vm.barycentric and pm is vm):
        raise ValueError("Scott-Vogelius needs both spaces on a barycentric refinement")
    if pm is not vm:
        raise ValueError("velocity and pressure must share a mesh")
    deg = _degree(velocity_space, velocity_space)
    K = _bilinear(velocity_space, velocity_space, _eps_kernel, deg, "grad", "grad")
    D = -_bilinear(pressure_space, velocity_space, _frob, deg, None, "div")
    free = np.setdiff1d(np.arange(velocity_space.ndofs), velocity_space.boundary_dofs)
    A = _symmetrize(K[free][:, free])
    B = D[:, free].tocsr()
    npr = pressure_space.ndofs
    n = free.size + npr
    null = np.zeros(n)
    null[free.size:] = pressure_space.interpolate(lambda x, y: np.ones_like(x))
    trace = np.zeros(n)
    trace[free.size:] = assemble_load(pressure_space, lambda x, y: np.ones_like(x), 2)
    system = SaddlePointSystem(
        A, B, None, np.zeros(free.size), np.zeros(npr), np.zeros(0),
        spaces={"velocity": velocity_space, "pressure": pressure_space}, scheme=scheme,
        nullspace=null, trace_functional=trace, target_trace=0.0, free_velocity=free,
        field_names=("velocity", "pressure", "none"))
    if case is not None:
        system = _stokes_rhs(system, case)
    return system
