"""Discrete operators on triangle meshes.

Spaces: cellwise-constant scalars (concentration, porosity, pressure,
chemical potential), lowest-order face fluxes with one degree of freedom per
edge (normal flux integral, boundary entries pinned to zero), and cellwise
linear vector displacements with no inter-cell continuity, stored (nc, 3, 2)
by cell vertex.

Sign conventions follow the mesh: interior-edge normals run K_i -> K_j and
jumps are (value on K_i) - (value on K_j).
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .eos import EosDomainError, FluidEos, RockProps, chemical_potential, mobility
from .mesh import Mesh, TopologyError

_SQRT2 = np.sqrt(2.0)


# -- geometry helpers ----------------------------------------------------------


def bary_gradients(mesh: Mesh) -> np.ndarray:
    """Gradients of the three vertex hat functions per cell, shape (nc, 3, 2).

    grad(lambda_a) = rot90ccw(p_{a+2} - p_{a+1}) / (2|K|) for CCW cells.
    Cached on the mesh instance.
    """
    cached = getattr(mesh, "_bary_grad", None)
    if cached is not None:
        return cached
    p = mesh.vertices[mesh.cells]  # (nc, 3, 2)
    g = np.empty_like(p)
    for a in range(3):
        d = p[:, (a + 2) % 3] - p[:, (a + 1) % 3]
        g[:, a, 0] = -d[:, 1]
        g[:, a, 1] = d[:, 0]
    g /= 2.0 * mesh.cell_area[:, None, None]
    g.setflags(write=False)
    mesh._bary_grad = g
    return g


def cell_gradient(mesh: Mesh, us: np.ndarray) -> np.ndarray:
    """Per-cell displacement gradient (nc, 2, 2); G[d1, d2] = d u_{d1} / d x_{d2}."""
    g = bary_gradients(mesh)
    return np.einsum("kad,kae->kde", np.asarray(us, dtype=float), g)


def cell_divergence(mesh: Mesh, us: np.ndarray) -> np.ndarray:
    G = cell_gradient(mesh, us)
    return G[:, 0, 0] + G[:, 1, 1]


def cell_strain(mesh: Mesh, us: np.ndarray) -> np.ndarray:
    """Symmetric gradient per cell, (nc, 2, 2)."""
    G = cell_gradient(mesh, us)
    return 0.5 * (G + np.swapaxes(G, 1, 2))


def _edge_local_vertices(mesh: Mesh, edges: np.ndarray) -> np.ndarray:
    """Local vertex slots of each edge endpoint inside both incident cells.

    Returns loc (n, 2, 2): loc[:, c, p] is the slot (0..2) of edge endpoint p
    within incident cell c. Only valid for interior edges.
    """
    cpair = mesh.edge_cells[edges]  # (n, 2)
    cv = mesh.cells[cpair]  # (n, 2, 3)
    ev = mesh.edge_verts[edges]  # (n, 2)
    loc = np.empty((len(edges), 2, 2), dtype=np.int64)
    for p in range(2):
        match = cv == ev[:, None, p, None]
        loc[:, :, p] = np.argmax(match, axis=2)
    return loc


def displacement_edge_jumps(mesh: Mesh, us: np.ndarray) -> np.ndarray:
    """Jump of a cellwise-linear vector field at interior-edge endpoints.

    Returns (nei, 2, 2): [:, p, :] is u|_{K_i} - u|_{K_j} at endpoint p of the
    edge (p ordered as in edge_verts).
    """
    us = np.asarray(us, dtype=float)
    ie = mesh.interior_edges
    cpair = mesh.edge_cells[ie]
    loc = _edge_local_vertices(mesh, ie)
    n = len(ie)
    rows = np.arange(n)
    out = np.empty((n, 2, 2))
    for p in range(2):
        out[:, p, :] = (
            us[cpair[:, 0], loc[rows, 0, p], :] - us[cpair[:, 1], loc[rows, 1, p], :]
        )
    return out


# -- upwinding and transport -----------------------------------------------------


def upwind_trace(mesh: Mesh, c, uf, edge: int) -> float:
    """Upwind cell value on an interior edge; flux >= 0 takes the K_i side."""
    ki, kj = mesh.edge_cells[edge]
    if kj < 0:
        raise TopologyError(f"edge {edge} is a boundary edge; no upwind trace")
    c = np.asarray(c, dtype=float)
    return float(c[ki]) if uf[edge] >= 0.0 else float(c[kj])


def upwind_all(mesh: Mesh, c, uf, sign=None) -> np.ndarray:
    """Vectorized upwind values on the interior edges (ordered as interior_edges).

    By default the side is chosen by the sign of the given flux; passing a
    frozen sign array instead keeps the orientation fixed across iterations
    (used to break flux-sign limit cycles in the inner iteration).
    """
    c = np.asarray(c, dtype=float)
    ie = mesh.interior_edges
    ki = mesh.edge_cells[ie, 0]
    kj = mesh.edge_cells[ie, 1]
    if sign is None:
        sign = np.asarray(uf)[ie]
    return np.where(np.asarray(sign) >= 0.0, c[ki], c[kj])


class DirichletBC:
    """Concentration data on a set of boundary edges, imposed weakly."""

    def __init__(self, edges, values):
        self.edges = np.asarray(edges, dtype=np.int64)
        self.values = np.broadcast_to(
            np.asarray(values, dtype=float), self.edges.shape
        ).copy()
        if self.edges.ndim != 1:
            raise ValueError("edges must be a 1D index array")


def stab_weights(eos: FluidEos, cn) -> np.ndarray:
    """w_K = 1 / (c (1-beta c)^2), the per-cell stabilization coefficient."""
    cn = np.asarray(cn, dtype=float)
    if np.any(cn <= 0.0) or np.any(eos.beta * cn >= 1.0):
        raise EosDomainError("concentration outside (0, 1/beta)")
    return 1.0 / (cn * (1.0 - eos.beta * cn) ** 2)


def assemble_transport(
    mesh: Mesh,
    eos: FluidEos,
    cn,
    phin,
    phil,
    uf,
    mun,
    theta: float,
    tau: float,
    sigma1: float,
    dirichlet: DirichletBC | None = None,
    c_star=None,
):
    """Linear system for the new concentration in one stabilized iteration.

    Row K states: (phi^l_K c_K - phi^n_K c^n_K)/tau |K| + advective upwind
    fluxes + penalty fluxes of mu(c^n) + theta R T zeta, with
    zeta_K = (c_K - c^n_K) w_K. Returns (A, b) with A in CSR form.
    c_star overrides the upwind trace per interior edge (default: upwind of
    c^n with respect to the given flux).
    """
    cn = np.asarray(cn, dtype=float)
    phin = np.asarray(phin, dtype=float)
    phil = np.asarray(phil, dtype=float)
    mun = np.asarray(mun, dtype=float)
    if tau <= 0.0:
        raise ValueError(f"tau must be positive, got {tau}")
    if theta < 1.0:
        raise ValueError(f"theta must be >= 1, got {theta}")
    w = stab_weights(eos, cn)
    nc = mesh.num_cells
    RT = eos.R * eos.T

    diag = phil * mesh.cell_area / tau
    b = phin * cn * mesh.cell_area / tau

    ie = mesh.interior_edges
    ki = mesh.edge_cells[ie, 0]
    kj = mesh.edge_cells[ie, 1]
    pen = sigma1 * mesh.edge_len[ie] / mesh.h_e[ie]
    penz = pen * theta * RT

    rows = [np.arange(nc), ki, kj]
    cols = [np.arange(nc), kj, ki]
    vals = [diag, -penz * w[kj], -penz * w[ki]]
    np.add.at(diag, ki, penz * w[ki])
    np.add.at(diag, kj, penz * w[kj])

    # known stabilization offset: zeta is measured from c^n
    zoff = penz * (w[ki] * cn[ki] - w[kj] * cn[kj])
    np.add.at(b, ki, zoff)
    np.add.at(b, kj, -zoff)

    # lagged chemical-potential jump
    dmu = pen * (mun[ki] - mun[kj])
    np.add.at(b, ki, -dmu)
    np.add.at(b, kj, dmu)

    # upwind advection with the lagged flux
    cstar = upwind_all(mesh, cn, uf) if c_star is None else np.asarray(c_star)
    adv = cstar * np.asarray(uf)[ie]
    np.add.at(b, ki, -adv)
    np.add.at(b, kj, adv)

    if dirichlet is not None:
        ed = dirichlet.edges
        if np.any(mesh.edge_cells[ed, 1] >= 0):
            raise TopologyError("Dirichlet data must sit on boundary edges")
        kd = mesh.edge_cells[ed, 0]
        pend = sigma1 * mesh.edge_len[ed] / mesh.h_e[ed]
        mu_d = chemical_potential(eos, dirichlet.values)
        # ghost state carries the boundary value and no stabilization increment
        np.add.at(diag, kd, pend * theta * RT * w[kd])
        np.add.at(b, kd, pend * theta * RT * w[kd] * cn[kd])
        np.add.at(b, kd, -pend * (mun[kd] - mu_d))

    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nc, nc),
    ).tocsr()
    return A, b


# -- face-flux (velocity) solve ----------------------------------------------------


class VelocityOperator:
    """Mixed lowest-order solve for edge fluxes driven by potential jumps.

    The edge basis on a cell is s_{K,e} (x - a_e) / (2|K|), a_e the vertex
    opposite the edge, carrying unit flux through its own edge. The mass
    matrix uses the cellwise-constant inverse mobility as weight; geometry
    factors are precomputed, the weighting and factorization happen per call
    to factor().
    """

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        p = mesh.vertices[mesh.cells]  # (nc, 3, 2)
        mids = 0.5 * (p + np.roll(p, -1, axis=1))  # midpoints of sides 0-1,1-2,2-0
        area = mesh.cell_area
        # opposite vertex of side s is slot (s+2) mod 3
        opp = p[:, [2, 0, 1], :]
        # 3-point mid-edge rule, exact for the quadratic integrand
        mloc = np.zeros((mesh.num_cells, 3, 3))
        for q in range(3):
            va = mids[:, q, None, :] - opp  # (nc, 3, 2)
            mloc += (area / 3.0)[:, None, None] * np.einsum("ksd,ktd->kst", va, va)
        mloc /= (2.0 * area[:, None, None]) ** 2
        self._mloc = mloc
        self._lu = None

        # global scatter: rows/cols of every 3x3 block, with orientation signs
        ge = mesh.cell_edges  # (nc, 3)
        sg = mesh.cell_edge_sign.astype(float)
        self._block_rows = np.repeat(ge, 3, axis=1).ravel()
        self._block_cols = np.tile(ge, (1, 3)).ravel()
        self._block_sign = (sg[:, :, None] * sg[:, None, :]).ravel()
        # reduction to interior unknowns
        self._glob2int = np.full(mesh.num_edges, -1, dtype=np.int64)
        self._glob2int[mesh.interior_edges] = np.arange(len(mesh.interior_edges))

    def factor(self, phin, rock: RockProps, kappa0=None):
        """Assemble and factorize the mass matrix for the given porosity."""
        lam = mobility(rock, np.asarray(phin, dtype=float), kappa0=kappa0)
        lam = np.broadcast_to(lam, (self.mesh.num_cells,))
        wm = self._mloc / lam[:, None, None]
        rows = self._glob2int[self._block_rows]
        cols = self._glob2int[self._block_cols]
        keep = (rows >= 0) & (cols >= 0)
        n = len(self.mesh.interior_edges)
        M = sp.coo_matrix(
            (
                (wm.ravel() * self._block_sign)[keep],
                (rows[keep], cols[keep]),
            ),
            shape=(n, n),
        ).tocsc()
        self._lu = spla.splu(M)
        return self

    def solve(self, mu_hat, c_star) -> np.ndarray:
        """Edge fluxes for the given cell potential; boundary entries zero.

        c_star is the upwind concentration per interior edge (ordered as
        mesh.interior_edges). Returns a full-length edge array.
        """
        if self._lu is None:
            raise RuntimeError("factor() must run before solve()")
        mesh = self.mesh
        mu_hat = np.asarray(mu_hat, dtype=float)
        ie = mesh.interior_edges
        jump = mu_hat[mesh.edge_cells[ie, 0]] - mu_hat[mesh.edge_cells[ie, 1]]
        rhs = np.asarray(c_star, dtype=float) * jump
        uf = np.zeros(mesh.num_edges)
        uf[ie] = self._lu.solve(rhs)
        return uf


def assemble_velocity(
    mesh: Mesh, phin, mu, c_star, rock: RockProps, kappa0=None
) -> np.ndarray:
    """One-shot face-flux solve (builds and discards the operator)."""
    op = VelocityOperator(mesh).factor(phin, rock, kappa0=kappa0)
    return op.solve(mu, c_star)


# -- pressure ---------------------------------------------------------------------


def pressure_update(eos: FluidEos, cn, cl) -> np.ndarray:
    """Cellwise pressure consistent with the stabilized potential update.

    Linear in the new concentration; reduces to the gas-law pressure exactly
    when the concentration has not moved.
    """
    cn = np.asarray(cn, dtype=float)
    cl = np.asarray(cl, dtype=float)
    if np.any(cn <= 0.0) or np.any(eos.beta * cn >= 1.0):
        raise EosDomainError("reference concentration outside (0, 1/beta)")
    beta = eos.beta
    lo = 1.0 + (1.0 - _SQRT2) * beta * cn
    hi = 1.0 + (1.0 + _SQRT2) * beta * cn
    coef = eos.b * cn / (2.0 * _SQRT2 * beta)
    return eos.R * eos.T * cl / (1.0 - beta * cn) + coef * (
        (1.0 - _SQRT2) * beta * cl / lo - (1.0 + _SQRT2) * beta * cn / hi
    )


# -- elasticity ---------------------------------------------------------------------


def _strain_matrices(mesh: Mesh) -> np.ndarray:
    """Per-cell 3x6 map from vertex displacements to (exx, eyy, exy)."""
    g = bary_gradients(mesh)
    nc = mesh.num_cells
    B = np.zeros((nc, 3, 6))
    for a in range(3):
        B[:, 0, 2 * a + 0] = g[:, a, 0]
        B[:, 1, 2 * a + 1] = g[:, a, 1]
        B[:, 2, 2 * a + 0] = 0.5 * g[:, a, 1]
        B[:, 2, 2 * a + 1] = 0.5 * g[:, a, 0]
    return B


def _stress_voigt_matrix(rock: RockProps) -> np.ndarray:
    """sigma:eps' = s(u)^T D s(v) with s = (exx, eyy, exy)."""
    mu2 = 2.0 * rock.lame_mu
    lam = rock.lame_lambda
    return np.array(
        [
            [mu2 + lam, lam, 0.0],
            [lam, mu2 + lam, 0.0],
            [0.0, 0.0, 2.0 * mu2],
        ]
    )


class ElasticityOperator:
    """Symmetric interior-penalty system for cellwise-linear displacements.

    Degrees of freedom: (cell, vertex slot, component) flattened as
    6*cell + 2*slot + component. The matrix and the pressure-coupling
    right-hand-side map are assembled once; rigid modes are pinned by three
    displacement constraints (one vertex fully, one component at a second
    vertex of the same cell), eliminated symmetrically.
    """

    def __init__(self, mesh: Mesh, rock: RockProps, sigma2: float):
        self.mesh = mesh
        self.rock = rock
        self.sigma2 = float(sigma2)
        self.ndof = 6 * mesh.num_cells
        self._assemble()
        self._lu = spla.splu(self.matrix.tocsc())

    # construction -----------------------------------------------------------

    def _assemble(self):
        mesh = self.mesh
        nc = mesh.num_cells
        B = _strain_matrices(mesh)
        D = _stress_voigt_matrix(self.rock)
        DB = np.einsum("st,ktj->ksj", D, B)  # (nc, 3, 6)
        kvol = mesh.cell_area[:, None, None] * np.einsum("ksi,ksj->kij", B, DB)

        dof = 6 * np.arange(nc, dtype=np.int64)[:, None] + np.arange(6)
        rows = [np.repeat(dof, 6, axis=1).ravel()]
        cols = [np.tile(dof, (1, 6)).ravel()]
        vals = [kvol.ravel()]

        ie = mesh.interior_edges
        if len(ie):
            blk, brow, bcol = self._edge_blocks(B, DB)
            rows.append(brow.ravel())
            cols.append(bcol.ravel())
            vals.append(blk.ravel())

        A = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.ndof, self.ndof),
        ).tocsr()

        self._constrained = self._pick_constraints()
        A = self._eliminate(A, self._constrained)
        self.matrix = A
        self.rhs_matrix = self._pressure_coupling()

    def _edge_blocks(self, B, DB):
        """12x12 interior-edge blocks: penalty minus the two consistency terms."""
        mesh = self.mesh
        ie = mesh.interior_edges
        n = len(ie)
        cpair = mesh.edge_cells[ie]
        nrm = mesh.edge_normal[ie]
        le = mesh.edge_len[ie]
        he = mesh.h_e[ie]
        loc = _edge_local_vertices(mesh, ie)

        # traction on the edge normal from each local dof of each cell, (n,2,2,6)
        dbp = DB[cpair]  # (n, 2, 3, 6)
        Sn = np.empty((n, 2, 2, 6))
        Sn[:, :, 0, :] = dbp[:, :, 0, :] * nrm[:, None, 0, None] + dbp[
            :, :, 2, :
        ] * nrm[:, None, 1, None]
        Sn[:, :, 1, :] = dbp[:, :, 2, :] * nrm[:, None, 0, None] + dbp[
            :, :, 1, :
        ] * nrm[:, None, 1, None]

        # jump traces: T[(endpoint p, comp d), block column] = sign * delta
        T = np.zeros((n, 4, 12))
        rows = np.arange(n)
        for c, sgn in ((0, 1.0), (1, -1.0)):
            for p in range(2):
                for d in range(2):
                    colidx = 6 * c + 2 * loc[:, c, p] + d
                    T[rows, 2 * p + d, colidx] = sgn

        # penalty: (s2/h_e) * 1D segment mass between the endpoint hats
        m2 = np.zeros((4, 4))
        for d in range(2):
            m2[0 + d, 0 + d] = 2.0
            m2[2 + d, 2 + d] = 2.0
            m2[0 + d, 2 + d] = 1.0
            m2[2 + d, 0 + d] = 1.0
        pen = (self.sigma2 / he * le / 6.0)[:, None, None] * np.einsum(
            "npi,pq,nqj->nij", T, m2, T
        )

        # consistency: average traction is edgewise constant, hat integral le/2
        half = 0.5 * np.concatenate((Sn[:, 0], Sn[:, 1]), axis=2)  # (n, 2, 12)
        L = (0.5 * le)[:, None, None] * (T[:, 0:2, :] + T[:, 2:4, :])  # (n, 2, 12)
        C = np.einsum("ndi,ndj->nij", L, half)
        blk = pen - C - np.swapaxes(C, 1, 2)

        bdof = (6 * cpair[:, :, None] + np.arange(6)).reshape(n, 12)
        brow = np.repeat(bdof, 12, axis=1)
        bcol = np.tile(bdof, (1, 12))
        return blk, brow, bcol

    def _pick_constraints(self) -> np.ndarray:
        """Three scalar constraints on cell 0 removing the rigid modes."""
        mesh = self.mesh
        p = mesh.vertices[mesh.cells[0]]
        d01 = p[1] - p[0]
        d02 = p[2] - p[0]
        b = 1 if np.hypot(*d01) >= np.hypot(*d02) else 2
        off = p[b] - p[0]
        # pin the component a rotation about vertex 0 moves the most
        comp = 1 if abs(off[0]) >= abs(off[1]) else 0
        return np.array([0, 1, 2 * b + comp], dtype=np.int64)

    @staticmethod
    def _eliminate(A: sp.csr_matrix, dofs: np.ndarray) -> sp.csr_matrix:
        keep = np.ones(A.shape[0], dtype=bool)
        keep[dofs] = False
        A = A.tocoo()
        mask = keep[A.row] & keep[A.col]
        rows = np.concatenate((A.row[mask], dofs))
        cols = np.concatenate((A.col[mask], dofs))
        vals = np.concatenate((A.data[mask], np.ones(len(dofs))))
        return sp.coo_matrix((vals, (rows, cols)), shape=A.shape).tocsr()

    def _pressure_coupling(self) -> sp.csr_matrix:
        """Sparse map p -> rhs: alpha (p, div v) - alpha <{p n_e}, [v]>."""
        mesh = self.mesh
        alpha = self.rock.alpha
        g = bary_gradients(mesh)
        nc = mesh.num_cells

        rows = []
        cols = []
        vals = []
        cell_ids = np.arange(nc, dtype=np.int64)
        for a in range(3):
            for d in range(2):
                rows.append(6 * cell_ids + 2 * a + d)
                cols.append(cell_ids)
                vals.append(alpha * mesh.cell_area * g[:, a, d])

        ie = mesh.interior_edges
        if len(ie):
            cpair = mesh.edge_cells[ie]
            nrm = mesh.edge_normal[ie]
            le = mesh.edge_len[ie]
            loc = _edge_local_vertices(mesh, ie)
            for c, sgn in ((0, 1.0), (1, -1.0)):
                for p in range(2):
                    for d in range(2):
                        r = 6 * cpair[:, c] + 2 * loc[:, c, p] + d
                        w = -sgn * alpha * 0.5 * nrm[:, d] * (0.5 * le)
                        for side in range(2):
                            rows.append(r)
                            cols.append(cpair[:, side])
                            vals.append(w)

        R = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.ndof, nc),
        ).tocsr()
        return R

    # use ---------------------------------------------------------------------

    def rhs(self, p) -> np.ndarray:
        b = self.rhs_matrix @ np.asarray(p, dtype=float)
        b[self._constrained] = 0.0
        return b

    def solve(self, p) -> np.ndarray:
        """Displacement field (nc, 3, 2) for the given cell pressure."""
        x = self._lu.solve(self.rhs(p))
        if not np.all(np.isfinite(x)):
            raise RuntimeError("elasticity solve produced non-finite entries")
        return x.reshape(self.mesh.num_cells, 3, 2)


def assemble_elasticity(mesh: Mesh, p, rock: RockProps, sigma2: float):
    """(matrix, rhs) of the constrained displacement system for pressure p."""
    op = ElasticityOperator(mesh, rock, sigma2)
    return op.matrix, op.rhs(p)


# -- porosity -----------------------------------------------------------------------


def porosity_update(
    mesh: Mesh, phin, pn, pl, usn, usl, rock: RockProps
) -> np.ndarray:
    """Cellwise porosity increment from pressure and displacement increments.

    phi gains (1/N) dp + alpha div(du) cellwise, minus the interior-edge
    correction alpha/(2|K|) int_e n_e . [du] ds applied to both incident
    cells with the global jump orientation.
    """
    phin = np.asarray(phin, dtype=float)
    dp = np.asarray(pl, dtype=float) - np.asarray(pn, dtype=float)
    du = np.asarray(usl, dtype=float) - np.asarray(usn, dtype=float)
    out = phin + dp / rock.N + rock.alpha * cell_divergence(mesh, du)

    ie = mesh.interior_edges
    if len(ie):
        jumps = displacement_edge_jumps(mesh, du)  # (nei, 2, 2)
        nrm = mesh.edge_normal[ie]
        le = mesh.edge_len[ie]
        # int_e n.[du] ds = |e| * mean of the endpoint normal jumps
        flux = 0.5 * le * np.einsum("nd,nd->n", nrm, jumps[:, 0] + jumps[:, 1])
        corr = np.zeros(mesh.num_cells)
        np.add.at(corr, mesh.edge_cells[ie, 0], 0.5 * flux)
        np.add.at(corr, mesh.edge_cells[ie, 1], 0.5 * flux)
        out = out - rock.alpha * corr / mesh.cell_area
    if not np.all(np.isfinite(out)):
        raise RuntimeError("porosity update produced non-finite entries")
    return out
