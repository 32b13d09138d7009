"""Outer time loop: adaptive step size, stabilized Picard iteration, bounds.

One accepted step advances concentration, face flux, pressure, displacement
and porosity together. The step size is chosen so the new concentration stays
inside the moving band [chi1 c, chi2 c] around the old one, with
chi1 = 1 - delta1 (1-beta c)^2 and chi2 = 1 + delta2 (1-beta c)^2; the
stabilization weight theta is picked so the linearized potential majorizes
the true one on that band. Inside a step the size is recomputed every inner
iteration and applied as the running minimum.
"""

from __future__ import annotations

import dataclasses
import math
import warnings

import numpy as np

from . import linalg
from .eos import (
    FluidEos,
    RockProps,
    chemical_potential,
    helmholtz_f,
    pressure_peng,
)
from .fem import (
    DirichletBC,
    ElasticityOperator,
    VelocityOperator,
    assemble_transport,
    cell_strain,
    displacement_edge_jumps,
    porosity_update,
    pressure_update,
    stab_weights,
    upwind_all,
)
from .mesh import Mesh

__all__ = [
    "SolverConfig",
    "DiscreteState",
    "StepDiagnostics",
    "BoundsReport",
    "StepFailure",
    "InfeasibleDeltaError",
    "AdvisoryWarning",
    "Simulation",
    "compute_theta",
    "compute_tau",
    "check_bounds",
    "energy_discrete",
    "diagnostics",
]


class StepFailure(RuntimeError):
    def __init__(self, message: str, tau_used: float | None = None):
        super().__init__(message)
        self.tau_used = tau_used


class InfeasibleDeltaError(ValueError):
    pass


class AdvisoryWarning(UserWarning):
    pass


@dataclasses.dataclass
class SolverConfig:
    eos: FluidEos
    rock: RockProps
    sigma1: float
    sigma2: float
    delta1: float = 0.2
    delta2: float = 0.2
    tau_max: float = 1.0
    eps_guard: float = 1e-12
    picard_tol: float = 1e-11
    picard_max: int = 50
    fixed_tau: float | None = None
    energy_penalty_uses_sigma1: bool = False

    def __post_init__(self):
        if not (0.0 < self.delta1 < 1.0 and 0.0 < self.delta2 < 1.0):
            raise ValueError(
                f"delta1, delta2 must lie in (0,1), got {self.delta1}, {self.delta2}"
            )
        if self.tau_max <= 0.0:
            raise ValueError(f"tau_max must be positive, got {self.tau_max}")
        if self.eps_guard <= 0.0:
            raise ValueError(f"eps_guard must be positive, got {self.eps_guard}")
        if self.picard_tol <= 0.0:
            raise ValueError(f"picard_tol must be positive, got {self.picard_tol}")
        if self.picard_max < 1:
            raise ValueError(f"picard_max must be >= 1, got {self.picard_max}")
        if self.sigma1 <= 0.0 or self.sigma2 <= 0.0:
            raise ValueError("penalties sigma1, sigma2 must be positive")
        if self.fixed_tau is not None and self.fixed_tau <= 0.0:
            raise ValueError(f"fixed_tau must be positive, got {self.fixed_tau}")


@dataclasses.dataclass
class DiscreteState:
    t: float
    c: np.ndarray
    phi: np.ndarray
    p: np.ndarray
    u_f: np.ndarray
    u_s: np.ndarray

    def copy(self) -> "DiscreteState":
        return DiscreteState(
            self.t,
            self.c.copy(),
            self.phi.copy(),
            self.p.copy(),
            self.u_f.copy(),
            self.u_s.copy(),
        )


@dataclasses.dataclass
class StepDiagnostics:
    tau: float
    theta: float
    energy: float
    total_moles: float
    c_min: float
    c_max: float
    iterations: int
    contraction_ratio: float
    ratios: tuple = ()
    bounds_ok: bool = True


@dataclasses.dataclass
class BoundsReport:
    ok: bool
    cell: int
    lower_margin: float
    upper_margin: float


# -- scalar controls ---------------------------------------------------------------


def compute_theta(eos: FluidEos, cn, delta1: float, delta2: float) -> float:
    """Stabilization factor: worst-case curvature ratio over the step band."""
    cn = np.asarray(cn, dtype=float)
    bc = eos.beta * cn
    if np.any(cn <= 0.0) or np.any(bc >= 1.0):
        raise ValueError("concentration outside (0, 1/beta)")
    s = (1.0 - bc) ** 2
    chi1 = 1.0 - delta1 * s
    chi2 = 1.0 + delta2 * s
    if np.any(chi2 * bc >= 1.0):
        k = int(np.argmax(chi2 * bc))
        raise InfeasibleDeltaError(
            f"delta2={delta2} pushes the upper bound past the packing limit "
            f"(cell {k}, beta*c={bc[k]:.6g}); reduce delta2"
        )
    t1 = s / (chi1 * (1.0 - chi1 * bc) ** 2)
    t2 = s / (chi2 * (1.0 - chi2 * bc) ** 2)
    return float(max(1.0, t1.max(), t2.max()))


def compute_tau(
    mesh: Mesh,
    cn,
    phin,
    phil,
    uf,
    mun,
    config: SolverConfig,
    dirichlet: DirichletBC | None = None,
    c_star=None,
) -> float:
    """Largest step keeping every cell inside its concentration band.

    Per cell, the lower-bound candidate divides the admissible mass decrease
    by the outgoing fluxes (advective outflow plus positive potential jumps);
    the upper-bound candidate divides the admissible increase by the incoming
    ones. Both are capped by tau_max; a negative numerator deactivates that
    candidate (with an advisory when real fluxes are present).

    c_star overrides the edge trace weighting the advective flux; it must be
    whatever multiplies the flux in the transport row (default: the upwind
    trace of c^n per the flux sign).
    """
    cn = np.asarray(cn, dtype=float)
    phin = np.asarray(phin, dtype=float)
    phil = np.asarray(phil, dtype=float)
    mun = np.asarray(mun, dtype=float)
    uf = np.asarray(uf, dtype=float)
    eos = config.eos
    nc = mesh.num_cells

    den1 = np.zeros(nc)
    den2 = np.zeros(nc)

    ie = mesh.interior_edges
    ki = mesh.edge_cells[ie, 0]
    kj = mesh.edge_cells[ie, 1]
    U = uf[ie]
    if c_star is None:
        c_star = upwind_all(mesh, cn, uf)
    c_star = np.asarray(c_star, dtype=float)

    out_i = U > 0.0  # outflow for K_i, inflow for K_j
    np.add.at(den1, ki[out_i], c_star[out_i] * U[out_i])
    np.add.at(den2, kj[out_i], c_star[out_i] * U[out_i])
    out_j = U < 0.0
    np.add.at(den1, kj[out_j], c_star[out_j] * (-U[out_j]))
    np.add.at(den2, ki[out_j], c_star[out_j] * (-U[out_j]))

    pen = config.sigma1 * mesh.edge_len[ie] / mesh.h_e[ie]
    dmu = mun[ki] - mun[kj]
    pos = dmu > 0.0
    np.add.at(den1, ki[pos], pen[pos] * dmu[pos])
    np.add.at(den2, kj[pos], pen[pos] * dmu[pos])
    neg = dmu < 0.0
    np.add.at(den1, kj[neg], pen[neg] * (-dmu[neg]))
    np.add.at(den2, ki[neg], pen[neg] * (-dmu[neg]))

    if dirichlet is not None:
        ed = dirichlet.edges
        kd = mesh.edge_cells[ed, 0]
        pend = config.sigma1 * mesh.edge_len[ed] / mesh.h_e[ed]
        dmu_d = mun[kd] - chemical_potential(eos, dirichlet.values)
        posd = dmu_d > 0.0
        np.add.at(den1, kd[posd], pend[posd] * dmu_d[posd])
        negd = dmu_d < 0.0
        np.add.at(den2, kd[negd], pend[negd] * (-dmu_d[negd]))

    s = (1.0 - eos.beta * cn) ** 2
    area = mesh.cell_area
    dphi = phil - phin
    num1 = (phil * cn * s * config.delta1 - dphi * cn) * area
    num2 = (phil * cn * s * config.delta2 + dphi * cn) * area

    eps = config.eps_guard
    tau1 = num1 / (den1 + eps)
    tau2 = num2 / (den2 + eps)
    bad1 = num1 <= 0.0
    bad2 = num2 <= 0.0
    if np.any(bad1 & (den1 > eps)) or np.any(bad2 & (den2 > eps)):
        warnings.warn(
            "porosity increment exhausts a concentration-band numerator; "
            "consider smaller delta1/delta2",
            AdvisoryWarning,
            stacklevel=2,
        )
    tau1[bad1] = config.tau_max
    tau2[bad2] = config.tau_max
    return float(min(tau1.min(), tau2.min(), config.tau_max))


def check_bounds(cn, cl, delta1: float, delta2: float, beta: float) -> BoundsReport:
    """Verify chi1 c^n <= c^{new} <= chi2 c^n cellwise (exact comparisons)."""
    cn = np.asarray(cn, dtype=float)
    cl = np.asarray(cl, dtype=float)
    s = (1.0 - beta * cn) ** 2
    low = (1.0 - delta1 * s) * cn
    high = (1.0 + delta2 * s) * cn
    lower = cl - low
    upper = high - cl
    il = int(np.argmin(lower))
    iu = int(np.argmin(upper))
    worst = il if lower[il] <= upper[iu] else iu
    ok = lower[il] >= 0.0 and upper[iu] >= 0.0
    return BoundsReport(
        ok=bool(ok),
        cell=worst,
        lower_margin=float(lower[il]),
        upper_margin=float(upper[iu]),
    )


# -- energy and diagnostics -----------------------------------------------------------


def energy_discrete(mesh: Mesh, state: DiscreteState, config: SolverConfig) -> float:
    """Total discrete free energy: bulk fluid + elastic + pressure storage
    + displacement-jump penalty - consistency correction."""
    eos = config.eos
    rock = config.rock
    area = mesh.cell_area
    f = helmholtz_f(eos, state.c)
    E = float(np.sum((state.phi * f + state.p**2 / (2.0 * rock.N)) * area))

    eps = cell_strain(mesh, state.u_s)
    tr = eps[:, 0, 0] + eps[:, 1, 1]
    sig = 2.0 * rock.lame_mu * eps
    sig[:, 0, 0] += rock.lame_lambda * tr
    sig[:, 1, 1] += rock.lame_lambda * tr
    E += float(0.5 * np.sum(np.einsum("kij,kij->k", sig, eps) * area))

    ie = mesh.interior_edges
    if len(ie):
        jumps = displacement_edge_jumps(mesh, state.u_s)
        le = mesh.edge_len[ie]
        he = mesh.h_e[ie]
        pen = config.sigma1 if config.energy_penalty_uses_sigma1 else config.sigma2
        jA = jumps[:, 0]
        jB = jumps[:, 1]
        sq = (
            np.einsum("nd,nd->n", jA, jA)
            + np.einsum("nd,nd->n", jB, jB)
            + np.einsum("nd,nd->n", jA, jB)
        ) * (le / 3.0)
        E += float(np.sum(pen / (2.0 * he) * sq))

        cpair = mesh.edge_cells[ie]
        nrm = mesh.edge_normal[ie]
        avg_sig = 0.5 * (sig[cpair[:, 0]] + sig[cpair[:, 1]])
        trac = np.einsum("nij,nj->ni", avg_sig, nrm)
        jint = 0.5 * le[:, None] * (jA + jB)
        E -= float(np.sum(np.einsum("nd,nd->n", trac, jint)))
    return E


def diagnostics(
    mesh: Mesh,
    state: DiscreteState,
    config: SolverConfig,
    tau: float = 0.0,
    theta: float = 1.0,
    iterations: int = 0,
    ratios: tuple = (),
    bounds_ok: bool = True,
) -> StepDiagnostics:
    ratios = tuple(float(r) for r in ratios)
    return StepDiagnostics(
        tau=float(tau),
        theta=float(theta),
        energy=energy_discrete(mesh, state, config),
        total_moles=float(np.sum(state.phi * state.c * mesh.cell_area)),
        c_min=float(state.c.min()),
        c_max=float(state.c.max()),
        iterations=int(iterations),
        contraction_ratio=max(ratios) if ratios else math.nan,
        ratios=ratios,
        bounds_ok=bool(bounds_ok),
    )


# -- the simulation driver -------------------------------------------------------------


class Simulation:
    """Owns the mesh, the factored operators and the current state."""

    MAX_RETRIES = 5

    def __init__(
        self,
        mesh: Mesh,
        config: SolverConfig,
        c0,
        phi0,
        kappa0=None,
        dirichlet: DirichletBC | None = None,
    ):
        self.mesh = mesh
        self.config = config
        self.kappa0 = None if kappa0 is None else np.asarray(kappa0, dtype=float)
        self.dirichlet = dirichlet

        c0 = np.broadcast_to(np.asarray(c0, dtype=float), (mesh.num_cells,)).copy()
        phi0 = np.broadcast_to(np.asarray(phi0, dtype=float), (mesh.num_cells,)).copy()
        if np.any(c0 <= 0.0) or np.any(config.eos.beta * c0 >= 1.0):
            raise ValueError("initial concentration outside (0, 1/beta)")
        if np.any(phi0 <= 0.0) or np.any(phi0 >= 1.0):
            raise ValueError("initial porosity outside (0, 1)")

        self.elasticity = ElasticityOperator(mesh, config.rock, config.sigma2)
        self.velocity = VelocityOperator(mesh)

        p0 = pressure_peng(config.eos, c0)
        us0 = self.elasticity.solve(p0)
        uf0 = np.zeros(mesh.num_edges)
        self.state = DiscreteState(t=0.0, c=c0, phi=phi0, p=p0, u_f=uf0, u_s=us0)
        self.n_steps = 0

    # one attempted step ---------------------------------------------------------

    def picard_advance(self, state: DiscreteState, tau_cap: float | None = None):
        """Run the inner iteration from the given state; returns (state, diag).

        Raises StepFailure on non-convergence or (in adaptive mode) on a
        violated concentration band.
        """
        cfg = self.config
        eos = cfg.eos
        mesh = self.mesh
        if tau_cap is None:
            tau_cap = cfg.tau_max

        cn = state.c
        phin = state.phi
        mun = chemical_potential(eos, cn)
        w = stab_weights(eos, cn)
        theta = compute_theta(eos, cn, cfg.delta1, cfg.delta2)
        RT = eos.R * eos.T

        self.velocity.factor(phin, cfg.rock, kappa0=self.kappa0)

        phil = phin
        ufl = state.u_f
        cl = cn
        pl = state.p
        usl = state.u_s
        tau = math.inf
        prev_diff = None
        ratios = []
        iterations = 0
        frozen_sign = None  # set when a flux-sign limit cycle is detected

        for _ in range(cfg.picard_max):
            cstar = upwind_all(mesh, cn, ufl, sign=frozen_sign)
            if cfg.fixed_tau is not None:
                tau = cfg.fixed_tau
            else:
                cand = compute_tau(
                    mesh,
                    cn,
                    phin,
                    phil,
                    ufl,
                    mun,
                    cfg,
                    dirichlet=self.dirichlet,
                    c_star=cstar,
                )
                tau = min(tau, cand, tau_cap)

            A, b = assemble_transport(
                mesh,
                eos,
                cn,
                phin,
                phil,
                ufl,
                mun,
                theta,
                tau,
                cfg.sigma1,
                dirichlet=self.dirichlet,
                c_star=cstar,
            )
            cl1 = linalg.solve_direct(A, b)

            mu_hat = mun + theta * RT * (cl1 - cn) * w
            ufl1 = self.velocity.solve(mu_hat, cstar)
            pl1 = pressure_update(eos, cn, cl1)
            usl1 = self.elasticity.solve(pl1)
            phil1 = porosity_update(mesh, phin, state.p, pl1, state.u_s, usl1, cfg.rock)

            diff = math.sqrt(float(np.sum(mesh.cell_area * (cl1 - cl) ** 2)))
            if prev_diff is not None and prev_diff > 0.0:
                ratios.append(diff / prev_diff)
            prev_diff = diff

            cl, ufl, pl, usl, phil = cl1, ufl1, pl1, usl1, phil1
            iterations += 1
            if diff < cfg.picard_tol:
                break
            # an edge flux oscillating around zero flips the upwind trace
            # every pass and caps the achievable increment; once contraction
            # degrades, pin the orientation so the remaining map is affine
            if frozen_sign is None and iterations >= 3 and ratios[-1] >= 0.5:
                frozen_sign = np.where(ufl[mesh.interior_edges] >= 0.0, 1.0, -1.0)
        else:
            raise StepFailure(
                f"no convergence in {cfg.picard_max} iterations at t={state.t:.6g} "
                f"(last increment {prev_diff:.3e}, tol {cfg.picard_tol:.1e})",
                tau_used=tau,
            )

        report = check_bounds(cn, cl, cfg.delta1, cfg.delta2, eos.beta)
        if not report.ok and cfg.fixed_tau is None:
            raise StepFailure(
                f"concentration band violated at t={state.t:.6g}: cell "
                f"{report.cell}, margins ({report.lower_margin:.3e}, "
                f"{report.upper_margin:.3e})",
                tau_used=tau,
            )
        if np.any(phil <= 0.0) or np.any(phil >= 1.0):
            raise StepFailure(f"porosity left (0, 1) at t={state.t:.6g}", tau_used=tau)

        new_state = DiscreteState(
            t=state.t + tau, c=cl, phi=phil, p=pl, u_f=ufl, u_s=usl
        )
        diag = diagnostics(
            mesh,
            new_state,
            cfg,
            tau=tau,
            theta=theta,
            iterations=iterations,
            ratios=ratios,
            bounds_ok=report.ok,
        )
        return new_state, diag

    # accepted step with retry -----------------------------------------------------

    def step(self) -> StepDiagnostics:
        cfg = self.config
        if cfg.fixed_tau is not None:
            new_state, diag = self.picard_advance(self.state)
            self.state = new_state
            self.n_steps += 1
            return diag

        cap = cfg.tau_max
        last_err = None
        for _ in range(self.MAX_RETRIES + 1):
            try:
                new_state, diag = self.picard_advance(self.state, tau_cap=cap)
            except StepFailure as err:
                last_err = err
                # halve the step actually attempted, not the nominal cap
                used = err.tau_used if err.tau_used and math.isfinite(err.tau_used) else cap
                cap = 0.5 * min(cap, used)
                continue
            self.state = new_state
            self.n_steps += 1
            return diag
        s = self.state
        raise StepFailure(
            f"step {self.n_steps} failed after {self.MAX_RETRIES} retries "
            f"(final cap {cap:.3e}); t={s.t:.6g}, c in [{s.c.min():.6g}, "
            f"{s.c.max():.6g}], phi in [{s.phi.min():.6g}, {s.phi.max():.6g}]; "
            f"last error: {last_err}"
        )

    def advance_to(self, t_end: float, max_steps: int | None = None):
        """Step until t_end (or max_steps); yields StepDiagnostics."""
        while self.state.t < t_end:
            if max_steps is not None and self.n_steps >= max_steps:
                return
            yield self.step()
