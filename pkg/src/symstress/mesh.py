"""Conforming triangular meshes of the unit square.

Cells are stored counterclockwise. Local edge ``i`` of a cell joins its
vertices ``i+1`` and ``i+2`` (mod 3), so it is the edge opposite vertex ``i``.
Every edge has a canonical direction from the lower to the higher global
vertex index; a cell's orientation sign for an edge is ``+1`` iff its local
traversal agrees with that direction.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

__all__ = [
    "Mesh",
    "generate_unit_square",
    "refine_uniform",
    "refine_barycentric",
    "facet_geometry",
    "splitmix64",
    "write_mesh",
]

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable 2D simplicial mesh with edge connectivity.

    Attributes
    ----------
    vertices : (nv, 2) float array
    cells : (nc, 3) int array, counterclockwise
    edges : (ne, 2) int array, ascending vertex indices
    cell_edges : (nc, 3) int array, local edge ``i`` is opposite vertex ``i``
    cell_edge_signs : (nc, 3) int array of +1/-1
    boundary_edges : (ne,) bool array
    parent : Mesh or None
        Pre-refinement mesh, set by both refinements.
    parent_cell : (nc,) int array or None
        Parent cell of every child cell.
    barycentric : bool
        True when this mesh is the barycentric split of ``parent``; child
        ``3*p + i`` is then ``(v[i+1], v[i+2], barycenter)`` of parent ``p``.
    """

    vertices: np.ndarray
    cells: np.ndarray
    edges: np.ndarray
    cell_edges: np.ndarray
    cell_edge_signs: np.ndarray
    boundary_edges: np.ndarray
    parent: Mesh | None = None
    parent_cell: np.ndarray | None = None
    barycentric: bool = False

    @classmethod
    def from_cells(cls, vertices, cells, parent=None, parent_cell=None, barycentric=False):
        vertices = np.ascontiguousarray(vertices, dtype=float)
        cells = np.ascontiguousarray(cells, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise ValueError("vertices must have shape (nv, 2)")
        if cells.ndim != 2 or cells.shape[1] != 3:
            raise ValueError("cells must have shape (nc, 3)")
        local = cells[:, [[1, 2], [2, 0], [0, 1]]]  # (nc, 3, 2)
        lo = local.min(axis=2)
        hi = local.max(axis=2)
        key = lo.ravel() * vertices.shape[0] + hi.ravel()
        uniq, inverse, counts = np.unique(key, return_inverse=True, return_counts=True)
        edges = np.stack([uniq // vertices.shape[0], uniq % vertices.shape[0]], axis=1)
        cell_edges = inverse.reshape(-1, 3)
        signs = np.where(local[:, :, 0] < local[:, :, 1], 1, -1)
        if counts.max() > 2:
            raise ValueError("non-manifold mesh: an edge is shared by more than two cells")
        for arr in (vertices, cells, edges, cell_edges, signs):
            arr.setflags(write=False)
        boundary = counts == 1
        boundary.setflags(write=False)
        return cls(vertices, cells, edges, cell_edges, signs, boundary,
                   parent, parent_cell, barycentric)

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    @cached_property
    def signed_areas(self) -> np.ndarray:
        return _areas(self.vertices, self.cells)

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @property
    def h(self) -> float:
        """Largest edge length."""
        return float(self.edge_lengths.max())

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        flags = np.zeros(self.num_vertices, dtype=bool)
        flags[self.edges[self.boundary_edges].ravel()] = True
        return flags

    @cached_property
    def edge_cells(self) -> np.ndarray:
        """(ne, 2) adjacent cells; the second entry is -1 on the boundary."""
        out = -np.ones((self.num_edges, 2), dtype=np.int64)
        flat = self.cell_edges.ravel()
        owner = np.repeat(np.arange(self.num_cells), 3)
        order = np.argsort(flat, kind="stable")
        flat, owner = flat[order], owner[order]
        first = np.ones(flat.size, dtype=bool)
        first[1:] = flat[1:] != flat[:-1]
        out[flat[first], 0] = owner[first]
        out[flat[~first], 1] = owner[~first]
        return out

    @cached_property
    def bary(self) -> Mesh:
        """Barycentric refinement, cached so that spaces can share it."""
        return refine_barycentric(self)

    def check(self, area_tol: float = 1e-12) -> None:
        """Raise ``ValueError`` if a structural invariant fails."""
        if np.any(self.signed_areas <= 0):
            raise ValueError("cell with non-positive signed area")
        counts = np.bincount(self.cell_edges.ravel(), minlength=self.num_edges)
        if np.any(counts[self.boundary_edges] != 1) or np.any(counts[~self.boundary_edges] != 2):
            raise ValueError("edge sharing counts inconsistent")
        ec = self.edge_cells
        interior = ec[:, 1] >= 0
        s = np.zeros((self.num_edges, 2), dtype=int)
        for col in range(2):
            cells = ec[interior, col]
            loc = np.argmax(self.cell_edges[cells] == np.flatnonzero(interior)[:, None], axis=1)
            s[interior, col] = self.cell_edge_signs[cells, loc]
        if np.any(s[interior, 0] != -s[interior, 1]):
            raise ValueError("interior edge orientation signs do not cancel")
        if self.parent is not None:
            total = self.parent.signed_areas.sum()
            if abs(self.signed_areas.sum() - total) > area_tol:
                raise ValueError("refinement changed the total area")


def splitmix64(x) -> np.ndarray:
    """Vectorised splitmix64 finaliser on unsigned 64-bit integers."""
    z = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z + np.uint64(0x9E3779B97F4A7C15)) & _MASK64
        z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _MASK64
        z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _MASK64
    return z ^ (z >> np.uint64(31))


def _uniform(seed: int, index: np.ndarray, stream: int) -> np.ndarray:
    base = splitmix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    key = (index.astype(np.uint64) << np.uint64(2)) | np.uint64(stream)
    z = splitmix64(base ^ splitmix64(key))
    return (z >> np.uint64(11)).astype(np.float64) * 2.0**-53


def _areas(vertices, cells):
    p = vertices[cells]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def _jitter(vertices, cells, movable, scale, seed, streams):
    """Move ``movable`` vertices by at most ``scale`` in splitmix64 directions.

    A vertex whose move would leave a cell with less than a tenth of its
    reference area has its offset halved until that no longer happens.
    """
    idx = np.arange(vertices.shape[0])
    r = _uniform(seed, idx, streams[0])
    theta = 2.0 * np.pi * _uniform(seed, idx, streams[1])
    offset = scale * r[:, None] * np.stack([np.cos(theta), np.sin(theta)], 1)
    offset[~movable] = 0.0
    ref_area = _areas(vertices, cells)
    for _ in range(60):
        bad = _areas(vertices + offset, cells) < 0.1 * ref_area
        if not bad.any():
            break
        offset[np.unique(cells[bad])] *= 0.5
    else:
        offset[:] = 0.0
    return vertices + offset


def generate_unit_square(n: int, jitter: float = 0.0, seed: int = 0) -> Mesh:
    """Structured crisscross mesh of the unit square with optional jitter.

    Each square ``(i, j)`` is cut along the diagonal selected by the parity
    of ``i + j``. Interior vertices move by at most ``jitter / n`` in a
    direction drawn from a splitmix64 stream keyed by ``(seed, vertex)``.
    Offsets are clamped as in :func:`_jitter`.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ValueError("n must be a positive integer")
    if not 0.0 <= jitter <= 0.3:
        raise ValueError("jitter must lie in [0, 0.3]")
    t = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(t, t)
    vertices = np.stack([X.ravel(), Y.ravel()], axis=1)
    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i, j = i.ravel(), j.ravel()
    v00 = j * (n + 1) + i
    v10, v01, v11 = v00 + 1, v00 + n + 1, v00 + n + 2
    even = (i + j) % 2 == 0
    c1 = np.where(even[:, None], np.stack([v00, v10, v11], 1), np.stack([v00, v10, v01], 1))
    c2 = np.where(even[:, None], np.stack([v00, v11, v01], 1), np.stack([v10, v11, v01], 1))
    cells = np.stack([c1, c2], axis=1).reshape(-1, 3)

    if jitter > 0:
        interior = ~((X.ravel() == 0) | (X.ravel() == 1) | (Y.ravel() == 0) | (Y.ravel() == 1))
        vertices = _jitter(vertices, cells, interior, jitter / n, seed, (0, 1))
    return Mesh.from_cells(vertices, cells)


def refine_uniform(m: Mesh, jitter: float = 0.0, seed: int = 0) -> Mesh:
    """Red refinement: split every triangle into four through edge midpoints.

    With ``jitter > 0`` the new interior midpoints move by at most
    ``jitter * h`` (``h`` the mean child size), so that refined jittered
    meshes do not turn locally structured. Old vertices stay where they are.
    The children then no longer tile their parents, and ``parent_cell`` is
    left unset.
    """
    if not 0.0 <= jitter <= 0.3:
        raise ValueError("jitter must lie in [0, 0.3]")
    nv = m.num_vertices
    mid = 0.5 * (m.vertices[m.edges[:, 0]] + m.vertices[m.edges[:, 1]])
    vertices = np.concatenate([m.vertices, mid])
    a, b, c = m.cells.T
    ma, mb, mc = (nv + m.cell_edges[:, k] for k in range(3))
    children = np.stack([
        np.stack([a, mc, mb], 1),
        np.stack([mc, b, ma], 1),
        np.stack([mb, ma, c], 1),
        np.stack([ma, mb, mc], 1),
    ], axis=1).reshape(-1, 3)
    if jitter > 0:
        movable = np.zeros(vertices.shape[0], dtype=bool)
        movable[nv:] = ~m.boundary_edges
        h = np.sqrt(2.0 * np.abs(m.signed_areas).sum() / children.shape[0])
        # new vertex indices never repeat across levels, so the streams stay independent
        vertices = _jitter(vertices, children, movable, jitter * h, seed, (2, 3))
    parent_cell = None if jitter > 0 else np.repeat(np.arange(m.num_cells), 4)
    return Mesh.from_cells(vertices, children, parent=m, parent_cell=parent_cell)


def refine_barycentric(m: Mesh) -> Mesh:
    """Split every triangle into three through its barycenter."""
    nv = m.num_vertices
    centers = m.vertices[m.cells].mean(axis=1)
    vertices = np.concatenate([m.vertices, centers])
    bc = nv + np.arange(m.num_cells)
    v = m.cells
    children = np.stack([
        np.stack([v[:, (i + 1) % 3], v[:, (i + 2) % 3], bc], 1) for i in range(3)
    ], axis=1).reshape(-1, 3)
    parent_cell = np.repeat(np.arange(m.num_cells), 3)
    return Mesh.from_cells(vertices, children, parent=m, parent_cell=parent_cell,
                           barycentric=True)


def facet_geometry(m: Mesh, edge: int):
    """Return ``(normal, length, midpoint)`` of an edge.

    The normal is ``(t_y, -t_x)`` for the canonical unit tangent ``t``.
    """
    if not 0 <= edge < m.num_edges:
        raise IndexError(f"edge index {edge} out of range [0, {m.num_edges})")
    a, b = m.vertices[m.edges[edge]]
    d = b - a
    length = float(np.hypot(d[0], d[1]))
    t = d / length
    return np.array([t[1], -t[0]]), length, 0.5 * (a + b)


def write_mesh(m: Mesh, stem: str | Path) -> tuple[Path, Path]:
    """Dump ``<stem>.node`` ("x y" per line) and ``<stem>.ele`` ("i j k")."""
    stem = Path(stem)
    node = stem.with_suffix(".node")
    ele = stem.with_suffix(".ele")
    node.write_text("".join(f"{x!r} {y!r}\n" for x, y in m.vertices.tolist()))
    ele.write_text("".join(f"{i} {j} {k}\n" for i, j, k in m.cells.tolist()))
    return node, ele
