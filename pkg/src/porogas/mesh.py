"""2D conforming triangle meshes with oriented interior-edge topology.

Cells are stored counter-clockwise. Every edge carries a unit normal n_e; for
an interior edge shared by cells (K_i, K_j) the normal points from K_i into
K_j (so n_e . (centroid_j - centroid_i) > 0), and jumps of cellwise quantities
are taken as value-on-K_i minus value-on-K_j. Boundary edges store their
single cell as K_i and an outward normal. The edge length scale h_e is the
edge length.
"""

from __future__ import annotations

import numpy as np


class MeshError(ValueError):
    pass


class TopologyError(KeyError):
    pass


class Mesh:
    """Immutable triangle mesh.

    vertices        (nv, 2) float
    cells           (nc, 3) int, counter-clockwise
    cell_area       (nc,)
    cell_centroid   (nc, 2)
    edge_verts      (ne, 2) int, vertex pair (sorted)
    edge_cells      (ne, 2) int, [K_i, K_j]; K_j = -1 on the boundary
    edge_normal     (ne, 2) unit normal, K_i -> K_j (outward on the boundary)
    edge_len        (ne,)   edge length |e| = h_e
    interior_edges  (nei,)  indices into the edge arrays
    boundary_edges  (neb,)  indices into the edge arrays
    cell_edges      (nc, 3) edge index per local side (0-1, 1-2, 2-0)
    cell_edge_sign  (nc, 3) +1 where the cell is K_i of that edge, else -1
    """

    def __init__(self, vertices, cells):
        vertices = np.asarray(vertices, dtype=float)
        cells = np.asarray(cells, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError(f"vertices must be (nv, 2), got {vertices.shape}")
        if cells.ndim != 2 or cells.shape[1] != 3:
            raise MeshError(f"cells must be (nc, 3), got {cells.shape}")
        if cells.size and (cells.min() < 0 or cells.max() >= len(vertices)):
            raise MeshError("cell vertex index out of range")

        p0 = vertices[cells[:, 0]]
        p1 = vertices[cells[:, 1]]
        p2 = vertices[cells[:, 2]]
        twice_area = (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (
            p1[:, 1] - p0[:, 1]
        ) * (p2[:, 0] - p0[:, 0])
        flip = twice_area < 0.0
        if np.any(flip):
            cells = cells.copy()
            cells[flip, 1], cells[flip, 2] = cells[flip, 2], cells[flip, 1]
            twice_area = np.abs(twice_area)
        if np.any(twice_area <= 0.0):
            raise MeshError("degenerate (zero-area) cell")

        self.vertices = vertices
        self.cells = cells
        self.cell_area = 0.5 * twice_area
        self.cell_centroid = (
            vertices[cells[:, 0]] + vertices[cells[:, 1]] + vertices[cells[:, 2]]
        ) / 3.0

        self._build_edges()
        self.vertices.setflags(write=False)
        self.cells.setflags(write=False)

    # -- construction helpers -------------------------------------------------

    def _build_edges(self):
        nc = len(self.cells)
        # local sides (0-1, 1-2, 2-0) of every cell, as sorted vertex pairs
        sides = np.empty((3 * nc, 2), dtype=np.int64)
        sides[0::3] = self.cells[:, [0, 1]]
        sides[1::3] = self.cells[:, [1, 2]]
        sides[2::3] = self.cells[:, [2, 0]]
        side_cell = np.repeat(np.arange(nc, dtype=np.int64), 3)
        side_slot = np.tile(np.arange(3, dtype=np.int64), nc)
        keys = np.sort(sides, axis=1)

        edge_verts, inverse = np.unique(keys, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        ne = len(edge_verts)
        counts = np.bincount(inverse, minlength=ne)
        if np.any(counts > 2):
            raise MeshError("edge shared by more than two cells")

        edge_cells = np.full((ne, 2), -1, dtype=np.int64)
        cell_edges = np.empty((nc, 3), dtype=np.int64)
        cell_edge_sign = np.empty((nc, 3), dtype=np.int64)

        # attach cells to edges; the lower cell index becomes K_i
        order = np.argsort(inverse, kind="stable")
        pos = 0
        for e in range(ne):
            n_inc = counts[e]
            inc = order[pos : pos + n_inc]
            pos += n_inc
            cs = side_cell[inc]
            if n_inc == 2 and cs[0] > cs[1]:
                cs = cs[::-1]
                inc = inc[::-1]
            edge_cells[e, :n_inc] = cs
            for r in range(n_inc):
                cell_edges[cs[r], side_slot[inc[r]]] = e
                cell_edge_sign[cs[r], side_slot[inc[r]]] = 1 if r == 0 else -1

        pa = self.vertices[edge_verts[:, 0]]
        pb = self.vertices[edge_verts[:, 1]]
        tang = pb - pa
        edge_len = np.hypot(tang[:, 0], tang[:, 1])
        if np.any(edge_len <= 0.0):
            raise MeshError("zero-length edge")
        normal = np.column_stack((tang[:, 1], -tang[:, 0])) / edge_len[:, None]
        # orient away from K_i
        mid = 0.5 * (pa + pb)
        away = mid - self.cell_centroid[edge_cells[:, 0]]
        wrong = np.einsum("ij,ij->i", normal, away) < 0.0
        normal[wrong] = -normal[wrong]

        interior = np.flatnonzero(edge_cells[:, 1] >= 0)
        boundary = np.flatnonzero(edge_cells[:, 1] < 0)

        # orientation invariant: normal points from K_i toward K_j
        if len(interior):
            d = self.cell_centroid[edge_cells[interior, 1]] - self.cell_centroid[
                edge_cells[interior, 0]
            ]
            if np.any(np.einsum("ij,ij->i", normal[interior], d) <= 0.0):
                raise MeshError("edge orientation invariant violated")

        self.edge_verts = edge_verts
        self.edge_cells = edge_cells
        self.edge_normal = normal
        self.edge_len = edge_len
        self.h_e = edge_len
        self.interior_edges = interior
        self.boundary_edges = boundary
        self.cell_edges = cell_edges
        self.cell_edge_sign = cell_edge_sign
        for a in (
            edge_verts,
            edge_cells,
            normal,
            edge_len,
            interior,
            boundary,
            cell_edges,
            cell_edge_sign,
        ):
            a.setflags(write=False)

    # -- queries ---------------------------------------------------------------

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_edges(self) -> int:
        return len(self.edge_verts)

    def jump_sign(self, edge: int, cell: int) -> int:
        """+1 if the cell is K_i of the edge, -1 if it is K_j.

        Jumps follow [q] = q|_{K_i} - q|_{K_j}, so a cell's own trace enters
        a jump with this sign.
        """
        ki, kj = self.edge_cells[edge]
        if cell == ki:
            return 1
        if cell == kj:
            return -1
        raise TopologyError(f"cell {cell} is not incident to edge {edge}")


def generate_structured(nx: int, ny: int, Lx: float, Ly: float) -> Mesh:
    """Diagonal-split triangulation of [0, Lx] x [0, Ly] with 2 nx ny cells.

    Every grid square is cut by the same diagonal (lower-left to upper-right),
    which keeps meshes nested under integer refinement.
    """
    if nx < 1 or ny < 1:
        raise MeshError(f"need nx, ny >= 1, got nx={nx}, ny={ny}")
    if not (Lx > 0.0 and Ly > 0.0):
        raise MeshError(f"need Lx, Ly > 0, got Lx={Lx}, Ly={Ly}")

    xs = np.linspace(0.0, Lx, nx + 1)
    ys = np.linspace(0.0, Ly, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack((X.ravel(), Y.ravel()))

    def vid(i, j):
        return j * (nx + 1) + i

    cells = np.empty((2 * nx * ny, 3), dtype=np.int64)
    k = 0
    for j in range(ny):
        for i in range(nx):
            v00 = vid(i, j)
            v10 = vid(i + 1, j)
            v01 = vid(i, j + 1)
            v11 = vid(i + 1, j + 1)
            cells[k] = (v00, v10, v11)      # below the diagonal
            cells[k + 1] = (v00, v11, v01)  # above the diagonal
            k += 2
    mesh = Mesh(vertices, cells)
    area = mesh.cell_area.sum()
    if abs(area - Lx * Ly) > 1e-12 * Lx * Ly:
        raise MeshError(f"area mismatch: {area} vs {Lx * Ly}")
    return mesh


def read_mesh(path) -> Mesh:
    """Read a plain-text mesh: header "NV NC", NV lines "x y", NC lines "i j k"."""
    with open(path, "r", encoding="utf-8") as fh:
        tokens = fh.read().split()
    if len(tokens) < 2:
        raise MeshError(f"truncated mesh file {path}")
    nv, nc = int(tokens[0]), int(tokens[1])
    need = 2 + 2 * nv + 3 * nc
    if len(tokens) < need:
        raise MeshError(f"mesh file {path}: expected {need} tokens, got {len(tokens)}")
    vals = tokens[2:need]
    vertices = np.array(vals[: 2 * nv], dtype=float).reshape(nv, 2)
    cells = np.array(vals[2 * nv :], dtype=np.int64).reshape(nc, 3)
    return Mesh(vertices, cells)


def mesh_statistics(mesh: Mesh):
    """(h_min, h_max, quality ratio h_max/h_min), h_K = longest edge of K."""
    h_cell = mesh.edge_len[mesh.cell_edges].max(axis=1)
    h_min = float(h_cell.min())
    h_max = float(h_cell.max())
    return h_min, h_max, h_max / h_min
