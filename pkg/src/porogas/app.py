"""Command-line driver: presets, config files, random fields, output writers.

Outputs per run: diagnostics.csv (one row per accepted step, schema below),
snap_%06d.vtk field snapshots (legacy ASCII), and study.csv for the
refinement-study modes.

CSV schema (fixed order):
step,t,tau,theta,iterations,energy,total_moles,c_min,c_max,contraction_ratio
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import sys
from pathlib import Path

import numpy as np

from .eos import RockProps, eos_from_critical, mobility
from .fem import DirichletBC
from .mesh import Mesh, generate_structured
from .stepper import (
    DiscreteState,
    Simulation,
    SolverConfig,
    StepFailure,
    diagnostics,
)

BAR = 1e5  # Pa
MILLIDARCY = 9.869233e-16  # m^2

# methane (critical data and working temperature used throughout)
METHANE = {"crit_p": 45.99 * BAR, "crit_T": 190.56, "acentric": 0.011,
           "temperature": 330.0}

CSV_COLUMNS = (
    "step,t,tau,theta,iterations,energy,total_moles,c_min,c_max,contraction_ratio"
)

PRESET_NAMES = ("example1", "example2", "example3", "example4_2d")


@dataclasses.dataclass
class RandomFieldSpec:
    """Cellwise field recipe: constant, uniform random, lattice value-noise,
    or a smooth cosine bump between the two bounds."""

    kind: str  # constant | uniform | value-noise | cosine
    low: float
    high: float = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.high is None:
            self.high = self.low
        if self.kind not in ("constant", "uniform", "value-noise", "cosine"):
            raise ValueError(f"unknown field kind {self.kind!r}")
        if self.kind != "constant" and not (self.low < self.high):
            raise ValueError(f"need low < high, got [{self.low}, {self.high}]")


@dataclasses.dataclass
class RunConfig:
    preset: str | None = None
    # mesh
    nx: int = 50
    ny: int = 50
    Lx: float = 1.0
    Ly: float = 1.0
    # driver
    seed: int = 1
    t_end: float = 0.1
    max_steps: int | None = None
    out_dir: str = "out"
    snapshot_every: int = 10
    # fluid
    temperature: float = METHANE["temperature"]
    crit_T: float = METHANE["crit_T"]
    crit_p: float = METHANE["crit_p"]
    acentric: float = METHANE["acentric"]
    # rock
    biot_alpha: float = 0.3
    biot_modulus: float = 1e11
    lame_mu: float = 1e8
    lame_lambda: float = 1e11
    visc: float = 1e-5
    phi_ref: float = 0.2
    # initial fields
    c0: RandomFieldSpec = dataclasses.field(
        default_factory=lambda: RandomFieldSpec("constant", 200.0)
    )
    phi0: RandomFieldSpec = dataclasses.field(
        default_factory=lambda: RandomFieldSpec("constant", 0.2)
    )
    kappa0: RandomFieldSpec = dataclasses.field(
        default_factory=lambda: RandomFieldSpec("constant", 1e-13)
    )
    boundary_c: float | None = None  # Dirichlet value on the x = 0 boundary
    # stepping
    delta1: float = 0.2
    delta2: float = 0.2
    tau_max: float = 0.01
    fixed_tau: float | None = None
    eps_guard: float = 1e-12
    picard_tol: float = 1e-11
    picard_max: int = 50
    sigma1: float | None = None  # None -> 10 lambda(phi_ref) c_ref^2
    sigma2: float | None = None  # None -> 10 (2 lame_mu + 2 lame_lambda)
    energy_penalty_uses_sigma1: bool = False
    # refinement studies
    tau_ladder: tuple = (9.75e-5, 4.875e-5, 2.4375e-5, 1.21875e-5, 6.09375e-6)
    tau_ref: float = 9.75e-5 / 64.0
    temporal_t_end: float = 8 * 9.75e-5
    spatial_ladder: tuple = (6, 12, 24)
    spatial_ref: int = 96
    spatial_tau: float = 1e-2
    spatial_steps: int = 10

    def __post_init__(self):
        if self.snapshot_every < 0:
            raise ValueError("snapshot_every must be >= 0 (0 = initial only)")


# -- presets -----------------------------------------------------------------------


def build_preset(name: str) -> RunConfig:
    """Named scenario setups (methane in a poroelastic square)."""
    if name == "example1":
        # smooth closed-system convergence scenario on the unit square
        return RunConfig(
            preset=name,
            nx=50,
            ny=50,
            Lx=1.0,
            Ly=1.0,
            c0=RandomFieldSpec("cosine", 100.0, 300.0),
            kappa0=RandomFieldSpec("constant", 1e-13),
            tau_max=0.01,
            t_end=0.1,
        )
    if name == "example2":
        # closed heterogeneous reservoir, random initial density
        return RunConfig(
            preset=name,
            nx=100,
            ny=100,
            Lx=100.0,
            Ly=100.0,
            c0=RandomFieldSpec("uniform", 100.0, 300.0),
            kappa0=RandomFieldSpec("value-noise", 0.5 * MILLIDARCY, 10 * MILLIDARCY),
            tau_max=1000.0,
            t_end=5e4,
        )
    if name == "example3":
        # injection through a fixed-density left boundary, heterogeneous rock
        return RunConfig(
            preset=name,
            nx=100,
            ny=100,
            Lx=100.0,
            Ly=100.0,
            c0=RandomFieldSpec("constant", 100.0),
            phi0=RandomFieldSpec("value-noise", 0.15, 0.25),
            kappa0=RandomFieldSpec("value-noise", 0.5 * MILLIDARCY, 10 * MILLIDARCY),
            boundary_c=1000.0,
            delta1=0.8,
            delta2=0.8,
            tau_max=1000.0,
            t_end=5e4,
        )
    if name == "example4_2d":
        # closed system with uniform-random permeability, planar reduction
        return RunConfig(
            preset=name,
            nx=100,
            ny=100,
            Lx=100.0,
            Ly=100.0,
            c0=RandomFieldSpec("uniform", 100.0, 300.0),
            kappa0=RandomFieldSpec("uniform", 0.5 * MILLIDARCY, 10 * MILLIDARCY),
            delta1=0.5,
            delta2=0.5,
            tau_max=1000.0,
            t_end=5e4,
        )
    raise ValueError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")


# -- random fields -------------------------------------------------------------------


def build_field(spec: RandomFieldSpec, mesh: Mesh, rng: np.random.Generator):
    """Realize a cellwise field; consumes the generator for the random kinds."""
    if spec.kind == "constant":
        return np.full(mesh.num_cells, spec.low)
    if spec.kind == "uniform":
        return spec.low + rng.random(mesh.num_cells) * (spec.high - spec.low)
    if spec.kind == "cosine":
        mid = 0.5 * (spec.low + spec.high)
        amp = 0.5 * (spec.high - spec.low)
        x = mesh.cell_centroid
        ext = mesh.vertices.max(axis=0) - mesh.vertices.min(axis=0)
        org = mesh.vertices.min(axis=0)
        return mid + amp * np.cos(np.pi * (x[:, 0] - org[0]) / ext[0]) * np.cos(
            np.pi * (x[:, 1] - org[1]) / ext[1]
        )
    if spec.kind == "value-noise":
        return _value_noise(mesh, rng, spec.low, spec.high)
    raise ValueError(f"unknown field kind {spec.kind!r}")


def _value_noise(mesh: Mesh, rng: np.random.Generator, low, high, knots: int = 8):
    """Seeded lattice value-noise at cell centroids, rescaled to [low, high]."""
    grid = rng.random((knots + 1, knots + 1))
    org = mesh.vertices.min(axis=0)
    ext = mesh.vertices.max(axis=0) - mesh.vertices.min(axis=0)
    u = (mesh.cell_centroid - org) / ext * knots
    i = np.clip(u.astype(np.int64), 0, knots - 1)
    f = u - i
    s = f * f * (3.0 - 2.0 * f)  # smoothstep blending
    v00 = grid[i[:, 0], i[:, 1]]
    v10 = grid[i[:, 0] + 1, i[:, 1]]
    v01 = grid[i[:, 0], i[:, 1] + 1]
    v11 = grid[i[:, 0] + 1, i[:, 1] + 1]
    v = (
        v00 * (1 - s[:, 0]) * (1 - s[:, 1])
        + v10 * s[:, 0] * (1 - s[:, 1])
        + v01 * (1 - s[:, 0]) * s[:, 1]
        + v11 * s[:, 0] * s[:, 1]
    )
    lo, hi = v.min(), v.max()
    if hi <= lo:
        return np.full(mesh.num_cells, 0.5 * (low + high))
    return low + (v - lo) / (hi - lo) * (high - low)


# -- simulation setup -----------------------------------------------------------------


def build_simulation(config: RunConfig):
    """Mesh, fields, operators. Fields are drawn in the order c0, phi0,
    kappa0 from one generator seeded with config.seed (reproducibility
    contract)."""
    mesh = generate_structured(config.nx, config.ny, config.Lx, config.Ly)
    rng = np.random.default_rng(config.seed)
    c0 = build_field(config.c0, mesh, rng)
    phi0 = build_field(config.phi0, mesh, rng)
    kap = build_field(config.kappa0, mesh, rng)

    eos = eos_from_critical(
        config.crit_T, config.crit_p, config.acentric, config.temperature
    )
    rock = RockProps(
        alpha=config.biot_alpha,
        N=config.biot_modulus,
        lame_mu=config.lame_mu,
        lame_lambda=config.lame_lambda,
        phi_ref=config.phi_ref,
        kappa0=float(np.mean(kap)),
        visc=config.visc,
    )

    c_ref = float(np.sum(c0 * mesh.cell_area) / np.sum(mesh.cell_area))
    sigma1 = config.sigma1
    if sigma1 is None:
        sigma1 = 10.0 * mobility(rock, rock.phi_ref) * c_ref**2
    sigma2 = config.sigma2
    if sigma2 is None:
        sigma2 = 10.0 * (2.0 * rock.lame_mu + 2.0 * rock.lame_lambda)

    solver = SolverConfig(
        eos=eos,
        rock=rock,
        sigma1=float(sigma1),
        sigma2=float(sigma2),
        delta1=config.delta1,
        delta2=config.delta2,
        tau_max=config.tau_max,
        eps_guard=config.eps_guard,
        picard_tol=config.picard_tol,
        picard_max=config.picard_max,
        fixed_tau=config.fixed_tau,
        energy_penalty_uses_sigma1=config.energy_penalty_uses_sigma1,
    )

    dirichlet = None
    if config.boundary_c is not None:
        edges = _left_boundary_edges(mesh)
        dirichlet = DirichletBC(edges, config.boundary_c)

    kappa_field = None if config.kappa0.kind == "constant" else kap
    return Simulation(mesh, solver, c0, phi0, kappa0=kappa_field, dirichlet=dirichlet)


def _left_boundary_edges(mesh: Mesh) -> np.ndarray:
    xmin = mesh.vertices[:, 0].min()
    span = mesh.vertices[:, 0].max() - xmin
    tol = 1e-12 * max(span, 1.0)
    be = mesh.boundary_edges
    px = mesh.vertices[mesh.edge_verts[be], 0]
    on_left = np.all(np.abs(px - xmin) <= tol, axis=1)
    edges = be[on_left]
    if len(edges) == 0:
        raise ValueError("no boundary edges found on the x = xmin side")
    return edges


# -- output writers -------------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def _csv_row(step: int, t: float, diag) -> str:
    return ",".join(
        [
            str(step),
            _fmt(t),
            _fmt(diag.tau),
            _fmt(diag.theta),
            str(diag.iterations),
            _fmt(diag.energy),
            _fmt(diag.total_moles),
            _fmt(diag.c_min),
            _fmt(diag.c_max),
            _fmt(diag.contraction_ratio),
        ]
    )


def write_snapshot(mesh: Mesh, state: DiscreteState, path) -> None:
    """Legacy ASCII unstructured-grid snapshot: c, phi, p and cell-mean u_s."""
    us_mean = np.asarray(state.u_s).mean(axis=1)  # (nc, 2)
    lines = [
        "# vtk DataFile Version 3.0",
        "porogas snapshot",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.num_vertices} double",
    ]
    for x, y in mesh.vertices:
        lines.append(f"{_fmt(x)} {_fmt(y)} 0.0")
    nc = mesh.num_cells
    lines.append(f"CELLS {nc} {4 * nc}")
    for tri in mesh.cells:
        lines.append(f"3 {tri[0]} {tri[1]} {tri[2]}")
    lines.append(f"CELL_TYPES {nc}")
    lines.extend(["5"] * nc)
    lines.append(f"CELL_DATA {nc}")
    for name, arr in (("c", state.c), ("phi", state.phi), ("p", state.p)):
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(_fmt(v) for v in arr)
    lines.append("VECTORS u_s double")
    for vx, vy in us_mean:
        lines.append(f"{_fmt(vx)} {_fmt(vy)} 0.0")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_snapshot(path) -> dict:
    """Parse a snapshot written by write_snapshot (round-trip check helper)."""
    tokens = Path(path).read_text(encoding="utf-8").split("\n")
    it = iter(tokens)
    out: dict = {}
    for line in it:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "POINTS":
            n = int(parts[1])
            pts = [next(it).split() for _ in range(n)]
            out["points"] = np.array(pts, dtype=float)[:, :2]
        elif parts[0] == "CELLS":
            n = int(parts[1])
            tri = [next(it).split()[1:] for _ in range(n)]
            out["cells"] = np.array(tri, dtype=np.int64)
        elif parts[0] == "SCALARS":
            name = parts[1]
            next(it)  # LOOKUP_TABLE
            n = len(out["cells"])
            out[name] = np.array([next(it) for _ in range(n)], dtype=float)
        elif parts[0] == "VECTORS":
            n = len(out["cells"])
            rows = [next(it).split() for _ in range(n)]
            out[parts[1]] = np.array(rows, dtype=float)[:, :2]
    return out


# -- main run loop --------------------------------------------------------------------


def run(config: RunConfig) -> int:
    """Execute the time loop; writes diagnostics.csv and snapshots."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sim = build_simulation(config)

    rows = [CSV_COLUMNS]
    d0 = diagnostics(sim.mesh, sim.state, sim.config)
    rows.append(_csv_row(0, 0.0, d0))
    write_snapshot(sim.mesh, sim.state, out / "snap_000000.vtk")

    status = 0
    try:
        while sim.state.t < config.t_end:
            if config.max_steps is not None and sim.n_steps >= config.max_steps:
                break
            diag = sim.step()
            rows.append(_csv_row(sim.n_steps, sim.state.t, diag))
            if config.snapshot_every and sim.n_steps % config.snapshot_every == 0:
                write_snapshot(
                    sim.mesh, sim.state, out / f"snap_{sim.n_steps:06d}.vtk"
                )
    except StepFailure as err:
        print(f"step failure: {err}", file=sys.stderr)
        write_snapshot(sim.mesh, sim.state, out / f"snap_{sim.n_steps:06d}_fail.vtk")
        status = 1

    (out / "diagnostics.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    return status


# -- refinement studies ----------------------------------------------------------------


def _l2_diff(mesh: Mesh, a, b) -> float:
    return math.sqrt(float(np.sum(mesh.cell_area * (np.asarray(a) - np.asarray(b)) ** 2)))


def _run_fixed(config: RunConfig, mesh_n: int, tau: float, steps: int) -> tuple:
    cfg = dataclasses.replace(
        config, nx=mesh_n, ny=mesh_n, fixed_tau=tau, tau_max=max(tau, config.tau_max)
    )
    sim = build_simulation(cfg)
    for _ in range(steps):
        sim.step()
    return sim.mesh, sim.state.c


def temporal_study(config: RunConfig):
    """Fixed-mesh tau ladder against the finest-tau reference.

    Returns (rows, fitted_slope); rows are dicts with param/error/rate.
    """
    t_end = config.temporal_t_end
    ref_steps = round(t_end / config.tau_ref)
    if not math.isclose(ref_steps * config.tau_ref, t_end, rel_tol=1e-9):
        raise ValueError("temporal_t_end must be a multiple of tau_ref")
    mesh, c_ref = _run_fixed(config, config.nx, config.tau_ref, ref_steps)

    errors = []
    for tau in config.tau_ladder:
        steps = round(t_end / tau)
        if not math.isclose(steps * tau, t_end, rel_tol=1e-9):
            raise ValueError(f"temporal_t_end must be a multiple of tau={tau}")
        _, c = _run_fixed(config, config.nx, tau, steps)
        errors.append(_l2_diff(mesh, c, c_ref))
    return _study_rows(np.asarray(config.tau_ladder, dtype=float), errors)


def _locate_cells(nx: int, ny: int, Lx: float, Ly: float, pts) -> np.ndarray:
    """Container cells of strictly interior points in a structured mesh."""
    pts = np.asarray(pts, dtype=float)
    hx = Lx / nx
    hy = Ly / ny
    i = np.clip((pts[:, 0] / hx).astype(np.int64), 0, nx - 1)
    j = np.clip((pts[:, 1] / hy).astype(np.int64), 0, ny - 1)
    fx = pts[:, 0] / hx - i
    fy = pts[:, 1] / hy - j
    upper = fy > fx  # above the square's diagonal
    return 2 * (j * nx + i) + upper


def spatial_study(config: RunConfig):
    """Fixed-tau mesh ladder against the finest-mesh reference.

    Coarse solutions are compared on the reference mesh through exact nesting
    of the structured triangulations. Returns (rows, fitted_slope).
    """
    for n in config.spatial_ladder:
        if config.spatial_ref % n:
            raise ValueError(
                f"spatial_ref={config.spatial_ref} must be a multiple of N={n}"
            )
    tau = config.spatial_tau
    steps = config.spatial_steps
    ref_mesh, c_ref = _run_fixed(config, config.spatial_ref, tau, steps)

    errors = []
    for n in config.spatial_ladder:
        mesh_n, c = _run_fixed(config, n, tau, steps)
        parent = _locate_cells(n, n, config.Lx, config.Ly, ref_mesh.cell_centroid)
        errors.append(_l2_diff(ref_mesh, c[parent], c_ref))
    hs = config.Lx / np.asarray(config.spatial_ladder, dtype=float)
    return _study_rows(hs, errors)


def _study_rows(params: np.ndarray, errors) -> tuple:
    errors = np.asarray(errors, dtype=float)
    rates = []
    for k in range(len(params) - 1):
        rates.append(
            math.log(errors[k] / errors[k + 1]) / math.log(params[k] / params[k + 1])
        )
    rates.append(math.nan)
    rows = [
        {"param": float(p), "error": float(e), "rate": float(r)}
        for p, e, r in zip(params, errors, rates)
    ]
    slope = float(np.polyfit(np.log(params), np.log(errors), 1)[0])
    return rows, slope


def write_study(rows, slope, path) -> None:
    lines = ["param,error,rate"]
    for r in rows:
        lines.append(f"{r['param']!r},{r['error']!r},{r['rate']!r}")
    lines.append(f"# fitted slope: {slope!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- config file parsing ---------------------------------------------------------------


_FIELD_KEYS = {"c0", "phi0", "kappa0"}
_INT_KEYS = {"nx", "ny", "seed", "max_steps", "snapshot_every", "picard_max",
             "spatial_ref", "spatial_steps"}
_BOOL_KEYS = {"energy_penalty_uses_sigma1"}
_OPTIONAL_FLOAT_KEYS = {"fixed_tau", "sigma1", "sigma2", "boundary_c"}


def _parse_number(text: str) -> float:
    """Float with optional unit suffix: '45.99 bar' -> Pa, '10 md' -> m^2."""
    s = text.strip().lower()
    for suffix, scale in (("bar", BAR), ("md", MILLIDARCY)):
        if s.endswith(suffix):
            return float(s[: -len(suffix)].strip()) * scale
    return float(s)


def _parse_field(text: str) -> RandomFieldSpec:
    s = text.strip()
    if ":" not in s:
        return RandomFieldSpec("constant", _parse_number(s))
    kind, _, rest = s.partition(":")
    vals = [_parse_number(v) for v in rest.split(",")]
    if len(vals) != 2:
        raise ValueError(f"field spec needs two bounds: {text!r}")
    return RandomFieldSpec(kind.strip(), vals[0], vals[1])


def parse_config(text: str) -> RunConfig:
    """Flat key = value format, # comments. A preset key, if present, seeds
    the defaults and the remaining keys override it."""
    pairs = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {ln}: expected key = value, got {raw!r}")
        key, _, val = line.partition("=")
        pairs[key.strip()] = val.strip()

    preset = pairs.pop("preset", None)
    config = build_preset(preset) if preset else RunConfig()

    valid = {f.name for f in dataclasses.fields(RunConfig)}
    for key, val in pairs.items():
        if key == "delta":  # sets both band fractions
            num = _parse_number(val)
            config.delta1 = num
            config.delta2 = num
            continue
        if key not in valid:
            raise ValueError(f"unknown config key {key!r}")
        if key in _FIELD_KEYS:
            setattr(config, key, _parse_field(val))
        elif key in _BOOL_KEYS:
            setattr(config, key, val.lower() in ("1", "true", "yes", "on"))
        elif key in _INT_KEYS:
            setattr(config, key, int(val))
        elif key in _OPTIONAL_FLOAT_KEYS:
            setattr(config, key, None if val.lower() == "none" else _parse_number(val))
        elif key in ("tau_ladder", "spatial_ladder"):
            items = tuple(
                int(v) if key == "spatial_ladder" else _parse_number(v)
                for v in val.split(",")
            )
            setattr(config, key, items)
        elif key == "out_dir":
            config.out_dir = val
        else:
            setattr(config, key, _parse_number(val))
    return config


# -- CLI ---------------------------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="porogas",
        description="Compressible gas flow in a poroelastic medium "
        "(bound-preserving adaptive time stepping).",
    )
    src = parser.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", metavar="PATH", help="flat key=value config file")
    src.add_argument("--preset", choices=PRESET_NAMES, help="built-in scenario")
    parser.add_argument("--out-dir", metavar="PATH", help="output directory")
    parser.add_argument("--seed", type=int, help="RNG seed for the initial fields")
    parser.add_argument("--t-end", type=float, help="simulated end time (s)")
    parser.add_argument("--max-steps", type=int, help="stop after this many steps")
    parser.add_argument(
        "--snapshot-every", type=int, help="snapshot cadence in steps (0 = initial only)"
    )
    parser.add_argument(
        "--refinement-study",
        choices=("temporal", "spatial"),
        help="run a convergence study instead of a plain simulation",
    )
    args = parser.parse_args(argv)

    if args.config:
        config = parse_config(Path(args.config).read_text(encoding="utf-8"))
    else:
        config = build_preset(args.preset)
    if args.out_dir is not None:
        config.out_dir = args.out_dir
    if args.seed is not None:
        config.seed = args.seed
    if args.t_end is not None:
        config.t_end = args.t_end
    if args.max_steps is not None:
        config.max_steps = args.max_steps
    if args.snapshot_every is not None:
        config.snapshot_every = args.snapshot_every

    if args.refinement_study:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        study = temporal_study if args.refinement_study == "temporal" else spatial_study
        rows, slope = study(config)
        write_study(rows, slope, out / "study.csv")
        for r in rows:
            print(f"param={r['param']:.6e}  error={r['error']:.6e}  rate={r['rate']:.4f}")
        print(f"fitted slope: {slope:.4f}")
        return 0

    return run(config)


if __name__ == "__main__":
    sys.exit(main())
