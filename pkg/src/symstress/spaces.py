"""Global finite element spaces and their tabulation on integration meshes."""

from __future__ import annotations

from functools import cached_property

import numpy as np

from .elements import Geometry, ReferenceElement, sub_triangle_map
from .mesh import Mesh

__all__ = ["FunctionSpace", "integration_mesh", "cell_chunks", "cell_geometry"]

# target number of floats per tabulation chunk
_CHUNK_BUDGET = 4_000_000


class FunctionSpace:
    """A reference element together with a mesh and a global dof map.

    Basis functions are stored per cell as coefficients in the element's
    prime basis. Tabulations returned by :meth:`tabulate` already include
    the orientation signs, so they are restrictions of global basis
    functions.
    """

    def __init__(self, mesh: Mesh, element: ReferenceElement):
        self.mesh = mesh
        self.element = element
        self.geometry = Geometry.from_mesh(mesh)
        self.cell_dofs, self.cell_signs, self.ndofs = element.dof_map(mesh)
        self._coeffs = element.coefficients(self.geometry)

    def __repr__(self) -> str:
        return f"FunctionSpace({self.element.name}, cells={self.mesh.num_cells}, ndofs={self.ndofs})"

    @property
    def continuity(self) -> str:
        return self.element.continuity

    @property
    def value_shape(self) -> tuple:
        return self.element.value_shape

    @property
    def ldim(self) -> int:
        return self.element.dim

    def _C(self, cells):
        return self._coeffs if self._coeffs.shape[0] == 1 else self._coeffs[cells]

    def tabulate(self, xhat, cells=slice(None), derivative=None, sub=None):
        """Signed basis values (n, nq, ldim, ...) on own cells."""
        el = self.element
        geom = self.geometry[cells]
        fn = {None: el.evaluate, "div": el.evaluate_div, "grad": el.evaluate_grad}[derivative]
        vals = fn(np.asarray(xhat, dtype=float), geom, self._C(cells), sub)
        s = self.cell_signs[cells]
        return vals * s.reshape(s.shape[:1] + (1, s.shape[1]) + (1,) * (vals.ndim - 3))

    def restrict(self, imesh: Mesh, c0: int, c1: int, xi, derivative=None):
        """Dofs and signed tabulation on integration cells ``c0:c1`` of ``imesh``.

        ``imesh`` is either this space's mesh or its barycentric split; in the
        latter case integration cell ``3p + i`` is subcell ``i`` of cell ``p``.
        """
        if imesh is self.mesh:
            return self.cell_dofs[c0:c1], self.tabulate(xi, slice(c0, c1), derivative)
        if imesh.barycentric and imesh.parent is self.mesh:
            if c0 % 3 or c1 % 3:
                raise ValueError("barycentric chunks must be aligned to parent cells")
            p = slice(c0 // 3, c1 // 3)
            parts = []
            for i in range(3):
                A, c = sub_triangle_map(i)
                parts.append(self.tabulate(xi @ A.T + c, p, derivative, sub=i))
            vals = np.stack(parts, axis=1)
            vals = vals.reshape((-1,) + vals.shape[2:])
            return np.repeat(self.cell_dofs[p], 3, axis=0), vals
        raise ValueError("integration mesh is unrelated to the space's mesh")

    def evaluate(self, coeffs, imesh: Mesh, c0: int, c1: int, xi, derivative=None):
        """Field values (n, nq, ...) of a coefficient vector."""
        dofs, vals = self.restrict(imesh, c0, c1, xi, derivative)
        return np.einsum("cqi...,ci->cq...", vals, np.asarray(coeffs)[dofs])

    def interpolate(self, f) -> np.ndarray:
        """Global coefficients from the dof functionals applied to ``f(x, y)``."""
        local = self.element.apply_functionals(f, self.geometry) * self.cell_signs
        out = np.zeros(self.ndofs)
        out[self.cell_dofs] = local
        return out

    @cached_property
    def boundary_dofs(self) -> np.ndarray:
        """Sorted global dofs attached to boundary vertices or edges."""
        el = self.element
        nv, ne, _ = el.layout
        m = self.mesh
        out = []
        if nv:
            bv = np.flatnonzero(m.boundary_vertices)
            out.append((bv[:, None] * nv + np.arange(nv)).ravel())
        if ne:
            be = np.flatnonzero(m.boundary_edges)
            out.append((nv * m.num_vertices + be[:, None] * ne + np.arange(ne)).ravel())
        if not out:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate(out))


def integration_mesh(*spaces: FunctionSpace) -> Mesh:
    """The finest mesh among ``spaces`` (the barycentric split if present).

    Composite elements are always integrated on the barycentric split of
    their mesh.
    """
    meshes = [s.mesh.bary if s.element.composite else s.mesh for s in spaces]
    for m in meshes:
        if m.barycentric and all(k is m or k is m.parent for k in meshes):
            return m
    first = meshes[0]
    if any(m is not first for m in meshes):
        raise ValueError("spaces live on unrelated meshes")
    return first


def cell_chunks(imesh: Mesh, floats_per_cell: int):
    """Contiguous ``(c0, c1)`` ranges, aligned to parents on barycentric meshes."""
    n = imesh.num_cells
    step = max(1, _CHUNK_BUDGET // max(1, floats_per_cell))
    if imesh.barycentric:
        step = max(3, step - step % 3)
    for c0 in range(0, n, step):
        yield c0, min(n, c0 + step)


def cell_geometry(mesh: Mesh, c0: int, c1: int) -> Geometry:
    """Geometry of cells ``c0:c1`` of ``mesh``."""
    return Geometry(mesh.vertices[mesh.cells[c0:c1]], mesh.cell_edge_signs[c0:c1].astype(float))
