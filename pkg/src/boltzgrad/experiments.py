"""Reproducible scenario runner binding the library into experiments.

Each scenario consumes a validated ExperimentConfig, derives all
randomness from the master seed through named streams, writes CSV data
files plus a machine-readable summary.json of its pass/fail assertions,
and returns a manifest with a checksum per output file. Identical
config and seed reproduce identical CSV bytes.
"""

from __future__ import annotations

import hashlib
import json
import time
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .badsets import BadSetSpec, estimate_intersection, in_bad_set, monotonicity_check
from .observables import PhaseCellGrid, chaos_defect, entropy_production, estimate_marginal
from .sampling import ConditioningSpec, DensitySpec, sample_factorized, sample_grand_canonical
from .simulate import reverse_velocities, simulate
from .solver import HomogeneousState, VelocityGrid, lanford_time, solve_homogeneous
from .torus import minimal_image
from .trees import evaluate_series_term

SCENARIOS = (
    "lanford",
    "loschmidt",
    "concatenation",
    "badset-scaling",
    "chaos",
    "counterexample",
    "tree-vs-solver",
    "htheorem",
)

SCHEMA_VERSION = 1


class ConfigInvalid(Exception):
    pass


@dataclass
class ExperimentConfig:
    scenario: str
    seed: int = 0
    schema_version: int = SCHEMA_VERSION
    dim: int = 2
    beta: float = 1.0
    form: str = "two_bump"
    kappa: float = 1.0                  # N eps^{d-1} target
    N: int = 64
    n_list: tuple = (64, 128, 256)
    eps: float = 0.0                    # 0 means derive from kappa and N
    eps_list: tuple = (0.02, 0.01, 0.005)
    eps0_list: tuple = (0.005, 0.01, 0.02, 0.04)
    R: float = 2.0
    T: float = 0.5
    badset_n: int = 2
    delta: float = 0.05
    tau: float = 0.3
    tau_prime: float = 0.15
    t: float = 0.05
    replicas: int = 1000
    samples: int = 100_000
    mc_samples: int = 100_000
    grid_nodes: int = 24
    v_cut: float = 5.0
    x_bins: int = 1
    v_bins: int = 10
    v_max: float = 4.0
    dt: float = 0.005
    n_angle: int = 8
    tree_orders: int = 3
    tree_samples: int = 60_000

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigInvalid(f"unknown scenario {self.scenario!r}")
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigInvalid(f"schema_version must be {SCHEMA_VERSION}")
        if self.dim not in (2, 3):
            raise ConfigInvalid("dim must be 2 or 3")
        for name in ("n_list", "eps_list", "eps0_list"):
            setattr(self, name, tuple(getattr(self, name)))

    def eps_for(self, n: int) -> float:
        if self.eps:
            return self.eps
        return (self.kappa / n) ** (1.0 / (self.dim - 1))

    def scaling_warnings(self) -> list[str]:
        out = []
        if self.scenario in ("lanford", "chaos", "loschmidt", "concatenation"):
            for n in set(self.n_list) | {self.N}:
                prod = n * self.eps_for(n) ** (self.dim - 1)
                if not 0.5 <= prod <= 2.0:
                    out.append(f"N eps^(d-1) = {prod:.3g} for N = {n} outside [0.5, 2]")
        return out

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigInvalid(f"not valid JSON: {e}") from e
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
        if "scenario" not in obj:
            raise ConfigInvalid("missing required key 'scenario'")
        try:
            return cls(**obj)
        except TypeError as e:
            raise ConfigInvalid(str(e)) from e


def derive_rng(master_seed: int, stage: str, replica: int = 0) -> np.random.Generator:
    """Deterministic stream: (master seed, crc32(stage), replica)."""
    return np.random.default_rng(
        np.random.SeedSequence([master_seed, zlib.crc32(stage.encode()), replica])
    )


@dataclass
class RunManifest:
    config_hash: str
    code_version: str
    seed: int
    files: dict
    wall_clock_s: float
    warnings: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(
                ",".join(f"{x:.17g}" if isinstance(x, float) else str(x) for x in row) + "\n"
            )


def _density(cfg: ExperimentConfig) -> DensitySpec:
    return DensitySpec(beta=cfg.beta, dim=cfg.dim, form=cfg.form)


def _velocity_grid(cfg: ExperimentConfig) -> VelocityGrid:
    return VelocityGrid(cfg.dim, cfg.grid_nodes, cfg.v_cut / np.sqrt(cfg.beta))


def velocity_histogram_on_grid(
    vels: np.ndarray, grid: VelocityGrid
) -> tuple[np.ndarray, np.ndarray]:
    """Histogram velocities straight onto the solver cells; returns the
    density per node and its binomial stderr."""
    n_ax = grid.n_per_axis
    idx = np.zeros(len(vels), dtype=np.int64)
    ok = np.ones(len(vels), dtype=bool)
    for ax in range(grid.dim):
        s = (vels[:, ax] + grid.v_cut) / grid.h
        ok &= (s >= 0) & (s < n_ax)
        idx = idx * n_ax + np.clip(s.astype(np.int64), 0, n_ax - 1)
    counts = np.bincount(idx[ok], minlength=grid.n_total).astype(float)
    m = len(vels)
    p = counts / m
    dens = p / grid.weight
    err = np.sqrt(np.maximum(p * (1 - p), 0.0) / m) / grid.weight
    return dens, err


def grid_to_phase_cells(f: np.ndarray, grid: VelocityGrid, pgrid: PhaseCellGrid) -> np.ndarray:
    """Average a node density over each velocity cell of a coarse grid
    (position bins must be 1)."""
    assert pgrid.x_bins == 1
    idx = np.zeros(grid.n_total, dtype=np.int64)
    ok = np.ones(grid.n_total, dtype=bool)
    for ax in range(grid.dim):
        s = (grid.nodes[:, ax] + pgrid.v_max) / (2 * pgrid.v_max) * pgrid.v_bins
        ok &= (s >= 0) & (s < pgrid.v_bins)
        idx = idx * pgrid.v_bins + np.clip(s.astype(np.int64), 0, pgrid.v_bins - 1)
    sums = np.bincount(idx[ok], weights=f[ok], minlength=pgrid.n_cells)
    cnts = np.bincount(idx[ok], minlength=pgrid.n_cells)
    out = np.zeros(pgrid.n_cells)
    nz = cnts > 0
    out[nz] = sums[nz] / cnts[nz]
    return out


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------


def _scenario_lanford(cfg: ExperimentConfig, out: Path) -> tuple[list[Path], dict]:
    spec = _density(cfg)
    grid = _velocity_grid(cfg)
    pgrid = PhaseCellGrid(cfg.dim, 1, cfg.v_bins, cfg.v_max)
    rows = []
    assertions = {}
    sups = []
    for n in cfg.n_list:
        eps = cfg.eps_for(n)
        finals = []
        for r in range(cfg.replicas):
            rng = derive_rng(cfg.seed, f"lanford-sample-N{n}", r)
            config = sample_factorized(spec, n, eps, rng)
            final, _ = simulate(config, cfg.t)
            finals.append(final)
        marg = estimate_marginal(finals, 1, pgrid)
        sol = solve_homogeneous(
            HomogeneousState(grid, spec.velocity_density(grid.nodes)),
            cfg.t, cfg.dt, n_angle=cfg.n_angle, save_every=10**6,
        )
        pred = grid_to_phase_cells(sol.states[-1].f, grid, pgrid)
        _, vc = pgrid.centers()
        live = marg.values > 0
        diff = np.abs(marg.values - pred)
        z = diff / np.maximum(marg.stderr, 1e-300)
        sups.append(float(diff[live].max()))
        for c in range(pgrid.n_cells):
            rows.append(
                (n, eps, c, *vc[c], marg.values[c], marg.stderr[c], pred[c], diff[c])
            )
        assertions[f"marginal_normalized_N{n}"] = {
            "passed": bool(abs(marg.total_mass() - 1.0) < 0.02),
            "value": marg.total_mass(),
        }
        assertions[f"cells_within_5sigma_or_5pct_N{n}"] = {
            "passed": bool(
                np.all((z[live] < 5.0) | (diff[live] < 0.05 * marg.values[live].max()))
            ),
            "value": float(z[live].max()),
        }
    assertions["sup_discrepancy_trend"] = {
        "passed": True,  # reported, not asserted: the true limit is out of reach
        "value": sups,
    }
    path = out / "lanford_marginals.csv"
    d = cfg.dim
    _write_csv(
        path,
        ["N", "eps", "cell", *[f"v{k+1}" for k in range(d)], "empirical", "stderr",
         "boltzmann", "abs_diff"],
        rows,
    )
    return [path], assertions


def _loschmidt_entropy(vels: np.ndarray, pgrid: PhaseCellGrid, beta_ref: float, dim: int):
    """Entropy of a velocity sample relative to the reference Maxwellian."""
    counts = np.zeros(pgrid.n_cells)
    idx_ok = pgrid.cell_index(np.zeros_like(vels), vels)
    idx_ok = idx_ok[idx_ok >= 0]
    counts = np.bincount(idx_ok, minlength=pgrid.n_cells).astype(float)
    m = counts.sum()
    vol = pgrid.cell_volume
    p = counts / m
    f = p / vol
    _, vc = pgrid.centers()
    mref = (beta_ref / (2 * np.pi)) ** (dim / 2) * np.exp(
        -0.5 * beta_ref * np.sum(vc**2, -1)
    )
    pos = (f > 0) & (mref > 0)
    s_val = float(-np.sum(f[pos] * np.log(f[pos] / mref[pos])) * vol)
    var = np.zeros_like(p)
    var[pos] = (np.log(f[pos] / mref[pos]) + 1.0) ** 2 * p[pos] * (1 - p[pos]) / m
    return s_val, float(np.sqrt(var.sum()))


def _scenario_loschmidt(cfg: ExperimentConfig, out: Path) -> tuple[list[Path], dict]:
    spec = _density(cfg)
    grid = _velocity_grid(cfg)
    pgrid = PhaseCellGrid(cfg.dim, 1, cfg.v_bins, cfg.v_max)
    eps = cfg.eps_for(cfg.N)
    e2 = spec.mean_square_speed()
    beta_ref = cfg.dim / e2

    ret_err = 0.0
    v0_all, vtau_all, v2tau_all = [], [], []
    for r in range(cfg.replicas):
        rng = derive_rng(cfg.seed, "loschmidt-sample", r)
        config = sample_factorized(spec, cfg.N, eps, rng)
        mid, _ = simulate(config, cfg.tau)
        rev = reverse_velocities(mid)
        back, _ = simulate(rev, cfg.tau)
        dx = np.abs(minimal_image(back.x, config.x)).max()
        dv = np.abs(back.v + config.v).max()
        ret_err = max(ret_err, dx, dv)
        v0_all.append(config.v)
        vtau_all.append(rev.v)
        v2tau_all.append(-back.v)  # re-reversed, comparable to the initial frame
    v0_all = np.concatenate(v0_all)
    vtau_all = np.concatenate(vtau_all)
    v2tau_all = np.concatenate(v2tau_all)

    # entropy of the particle ensemble at 0, tau (reversed), 2 tau
    s0, s0e = _loschmidt_entropy(v0_all, pgrid, beta_ref, cfg.dim)
    s1, s1e = _loschmidt_entropy(vtau_all, pgrid, beta_ref, cfg.dim)
    s2, s2e = _loschmidt_entropy(v2tau_all, pgrid, beta_ref, cfg.dim)

    # Boltzmann continuation of the reversed time-tau marginal
    f_tau, _ = velocity_histogram_on_grid(vtau_all, grid)
    sol = solve_homogeneous(
        HomogeneousState(grid, f_tau), cfg.tau, cfg.dt, n_angle=cfg.n_angle, save_every=10**6
    )
    pred = grid_to_phase_cells(sol.states[-1].f, grid, pgrid)
    # empirical marginal at 2 tau in the reversed frame (= -v of the
    # back-flowed state), which the particle system retraces to -v0
    counts = np.bincount(
        pgrid.cell_index(np.zeros_like(v2tau_all), -v2tau_all).clip(0),
        minlength=pgrid.n_cells,
    ).astype(float)
    m = len(v2tau_all)
    emp = counts / m / pgrid.cell_volume
    emp_err = np.sqrt(np.maximum(counts, 1.0)) / m / pgrid.cell_volume
    z = np.abs(pred - emp) / np.maximum(emp_err, 1e-300)
    divergence = float(z.max())

    path = out / "loschmidt_entropy.csv"
    _write_csv(
        path,
        ["label", "time", "entropy", "stderr"],
        [
            ("particles_t0", 0.0, s0, s0e),
            ("particles_tau_reversed", cfg.tau, s1, s1e),
            ("particles_2tau", 2 * cfg.tau, s2, s2e),
            ("boltzmann_from_reversed_tau", 2 * cfg.tau, float(sol.entropy[-1]), 0.0),
        ],
    )
    path2 = out / "loschmidt_microreturn.csv"
    _write_csv(path2, ["max_coordinate_error"], [(ret_err,)])
    assertions = {
        "micro_return_below_1e-6": {"passed": bool(ret_err < 1e-6), "value": ret_err},
        "particles_retrace_entropy": {
            "passed": bool(abs(s2 - s0) < 3 * (s0e + s2e) + 1e-3),
            "value": [s0, s2],
        },
        "boltzmann_fails_to_retrace": {"passed": bool(divergence > 5.0), "value": divergence},
        "solver_entropy_nondecreasing": {
            "passed": bool(np.all(np.diff(sol.entropy) > -1e-6)),
            "value": float(np.diff(sol.entropy).min()),
        },
    }
    return [path, path2], assertions


def _scenario_concatenation(cfg: ExperimentConfig, out: Path) -> tuple[list[Path], dict]:
    spec = _density(cfg)
    grid = _velocity_grid(cfg)
    eps = cfg.eps_for(cfg.N)
    vels = []
    for r in range(cfg.replicas):
        rng = derive_rng(cfg.seed, "concat-sample", r)
        config = sample_factorized(spec, cfg.N, eps, rng)
        mid, _ = simulate(config, cfg.tau)
        vels.append(mid.v)
    vels = np.concatenate(vels)
    f_tau_emp, f_err = velocity_histogram_on_grid(vels, grid)
    direct = solve_homogeneous(
        HomogeneousState(grid, spec.velocity_density(grid.nodes)),
        cfg.tau + cfg.tau_prime, cfg.dt, n_angle=cfg.n_angle, save_every=10**6,
    )
    restart = solve_homogeneous(
        HomogeneousState(grid, f_tau_emp), cfg.tau_prime, cfg.dt,
        n_angle=cfg.n_angle, save_every=10**6,
    )
    f_direct = direct.states[-1].f
    f_restart = restart.states[-1].f
    diff = np.abs(f_direct - f_restart)
    tol = np.maximum(5 * f_err, 0.02 * f_direct.max())
    path = out / "concatenation_compare.csv"
    _write_csv(
        path,
        [*[f"v{k+1}" for k in range(cfg.dim)], "direct", "restarted", "stat_err"],
        [(*grid.nodes[i], f_direct[i], f_restart[i], f_err[i]) for i in range(grid.n_total)],
    )
    assertions = {
        "restart_matches_direct": {
            "passed": bool(np.all(diff <= tol)),
            "value": float((diff / np.maximum(tol, 1e-300)).max()),
        }
    }
    return [path], assertions


def _scenario_badset_scaling(cfg: ExperimentConfig, out: Path) -> tuple[list[Path], dict]:
    rows = []
    assertions = {}
    rng = derive_rng(cfg.seed, "badset-minus")
    spec = BadSetSpec(cfg.badset_n, max(cfg.eps0_list), cfg.R, cfg.T, "minus")
    ok, estimates = monotonicity_check(cfg.eps0_list, spec, cfg.dim, cfg.samples, rng)
    for est in estimates:
        rows.append(
            (est.spec.eps0, "minus", cfg.badset_n, cfg.R, cfg.T, est.fraction,
             est.stderr, est.samples)
        )
    fr = np.array([e.fraction for e in estimates])
    e0 = np.array([e.spec.eps0 for e in estimates])
    slope = float(np.polyfit(np.log(e0), np.log(fr), 1)[0])
    assertions["ordering_nondecreasing"] = {"passed": bool(ok), "value": fr.tolist()}
    assertions["loglog_slope_d_minus_1"] = {
        "passed": bool(abs(slope - (cfg.dim - 1)) <= 0.15),
        "value": slope,
    }
    rng2 = derive_rng(cfg.seed, "badset-intersection")
    mid = BadSetSpec(cfg.badset_n, 0.01, cfg.R, cfg.T, "plus")
    inter = estimate_intersection(mid, cfg.dim, cfg.samples, rng2)
    one_sided = fr[list(e0).index(0.01)] if 0.01 in e0 else fr[len(fr) // 2]
    rows.append((0.01, "intersection", cfg.badset_n, cfg.R, cfg.T, inter.fraction,
                 inter.stderr, inter.samples))
    assertions["intersection_10x_smaller"] = {
        "passed": bool(inter.fraction * 10.0 <= one_sided),
        "value": [inter.fraction, float(one_sided)],
    }
    path = out / "badset_measures.csv"
    _write_csv(path, ["eps0", "sign", "n", "R", "T", "fraction", "stderr", "samples"], rows)
    return [path], assertions


def _chaos_cell_pairs(pgrid: PhaseCellGrid, spec: DensitySpec, count: int = 6):
    """Probe pairs among the most occupied velocity cells."""
    _, vc = pgrid.centers()
    dens = spec.velocity_density(vc)
    top = np.argsort(dens)[::-1][:count]
    return [(int(a), int(b)) for i, a in enumerate(top) for b in top[i:]]


def _scenario_chaos(cfg: ExperimentConfig, out: Path) -> tuple[list[Path], dict]:
    spec = _density(cfg)
    pgrid = PhaseCellGrid(cfg.dim, 1, cfg.v_bins, cfg.v_max)
    pairs = _chaos_cell_pairs(pgrid, spec)
    rows = []
    assertions = {}
    for label, horizon in (("t0", 0.0), ("tau", cfg.tau)):
        maxima = []
        for n in cfg.n_list:
            eps = cfg.eps_for(n)
            ensemble = []
            for r in range(cfg.replicas):
                rng = derive_rng(cfg.seed, f"chaos-sample-N{n}", r)
                config = sample_factorized(spec, n, eps, rng)
                if horizon > 0:
                    config, _ = simulate(config, horizon)
                ensemble.append(config)
            res = chaos_defect(ensemble, pgrid, pairs)
            maxima.append((res.max_defect, res.max_stderr))
            for k, (a, b) in enumerate(pairs):
                rows.append((label, n, eps, a, b, res.defect[k], res.stderr[k]))
        ok = all(
            maxima[i + 1][0] <= maxima[i][0] + 3 * (maxima[i][1] + maxima[i + 1][1])
            for i in range(len(maxima) - 1)
        )
        assertions[f"max_defect_nonincreasing_{label}"] = {
            "passed": bool(ok),
            "value": [m[0] for m in maxima],
        }
    path = out / "chaos_defect.csv"
    _write_csv(path, ["time", "N", "eps", "cell_a", "cell_b", "defect", "stderr"], rows)
    return [path], assertions


def _conditioned_ensemble(cfg, spec, eps, stage):
    cond = ConditioningSpec(delta=cfg.delta, eps=eps)
    rng = derive_rng(cfg.seed, stage)
    return [
        sample_grand_canonical(spec, eps, rng, conditioning=cond)
        for _ in range(cfg.replicas)
    ]


def _normalized_vhist(vels, pgrid):
    counts = np.bincount(
        pgrid.cell_index(np.zeros_like(vels), vels).clip(0), minlength=pgrid.n_cells
    ).astype(float)
    m = len(vels)
    dens = counts / m / pgrid.cell_volume
    err = np.sqrt(np.maximum(counts, 1.0)) / m / pgrid.cell_volume
    return counts, dens, err


def _separated_phase_pairs(spec, dim, v_bins, v_max, eps, delta):
    """Phase-cell pairs with no collision coupling on [0, delta]: the
    position blocks are torus-separated farther than any relative
    velocity can bridge, and the representative points stay outside the
    eps |log eps| forward set."""
    pgrid = PhaseCellGrid(dim, 4, v_bins, v_max)
    xc, vc = pgrid.centers()
    dens = spec.velocity_density(vc)
    # bulk velocity cells, position blocks at (1/8,..) and (5/8,..)
    order = np.argsort(dens)[::-1]
    x_a = np.full(dim, 0.125)
    x_b = np.full(dim, 0.625)
    eps_log = eps * abs(np.log(eps))
    r_cut = v_max * np.sqrt(dim) * 1.01
    bs = BadSetSpec(2, eps_log, r_cut, delta, "plus")
    pairs = []
    picked = []
    for idx in order:
        if np.allclose(xc[idx], x_a) and np.linalg.norm(vc[idx]) < v_max - 1.0:
            picked.append(idx)
        if len(picked) >= 5:
            break
    partner = {}
    for idx in range(pgrid.n_cells):
        if np.allclose(xc[idx], x_b):
            partner[tuple(np.round(vc[idx], 9))] = idx
    for a in picked:
        for b in picked:
            b2 = partner[tuple(np.round(vc[b], 9))]
            za = (np.stack([xc[a], xc[b2]]), np.stack([vc[a], vc[b2]]))
            if not in_bad_set(za, bs):
                pairs.append((int(a), int(b2)))
    return pgrid, pairs


def _scenario_counterexample(cfg: ExperimentConfig, out: Path) -> tuple[list[Path], dict]:
    spec = _density(cfg)
    grid = _velocity_grid(cfg)
    eps = cfg.eps or 0.02
    samples = _conditioned_ensemble(cfg, spec, eps, "counterexample-sample")
    collision_free = 0
    final_vels, final_states = [], []
    for s in samples:
        if s.n == 0:
            collision_free += 1
            continue
        final, log = simulate(s.config, cfg.delta)
        collision_free += len(log) == 0
        final_states.append(final)
        final_vels.append(final.v)

    # independent conditioned ensemble at time 0: the free-transport
    # prediction for the time-delta marginal (the conditioned state
    # evolves by free transport, so the two estimates must agree)
    reference = _conditioned_ensemble(cfg, spec, eps, "counterexample-reference")
    ref_vels = np.concatenate([s.config.v for s in reference if s.n > 0])

    vels = np.concatenate(final_vels)
    pgrid = PhaseCellGrid(cfg.dim, 1, cfg.v_bins, cfg.v_max)
    counts, emp, emp_err = _normalized_vhist(vels, pgrid)
    counts_r, ref, ref_err = _normalized_vhist(ref_vels, pgrid)
    comb_err = np.sqrt(emp_err**2 + ref_err**2)
    z_free = np.abs(emp - ref) / np.maximum(comb_err, 1e-300)

    # the f0 comparison is reported as well: the conditioned state keeps
    # an O(delta) collision-propensity tilt relative to f0 at finite eps
    _, vc = pgrid.centers()
    f0_cells = grid_to_phase_cells(spec.velocity_density(grid.nodes), grid, pgrid)
    f0_cells = f0_cells / (np.sum(f0_cells) * pgrid.cell_volume)
    z_f0 = np.abs(emp - f0_cells) / np.maximum(emp_err, 1e-300)

    sol = solve_homogeneous(
        HomogeneousState(grid, spec.velocity_density(grid.nodes)),
        cfg.delta, cfg.dt, n_angle=cfg.n_angle, save_every=10**6,
    )
    boltz = grid_to_phase_cells(sol.states[-1].f, grid, pgrid)
    boltz = boltz / (np.sum(boltz) * pgrid.cell_volume)
    z_boltz = np.abs(boltz - f0_cells) / np.maximum(comb_err, 1e-300)

    occupied = (counts >= 50) & (counts_r >= 50)
    # chaos defect on separated phase cells outside the forward bad set
    dgrid, pairs = _separated_phase_pairs(
        spec, cfg.dim, max(cfg.v_bins // 2, 4), cfg.v_max, eps, cfg.delta
    )
    res = chaos_defect(final_states, dgrid, pairs)
    frac_ok = float(np.mean(res.defect <= 3 * res.stderr))

    path = out / "counterexample_marginal.csv"
    _write_csv(
        path,
        [*[f"v{k+1}" for k in range(cfg.dim)], "empirical", "stderr", "free_transport",
         "boltzmann", "z_free", "z_boltzmann", "z_vs_f0"],
        [(*vc[i], emp[i], emp_err[i], ref[i], boltz[i], z_free[i], z_boltz[i], z_f0[i])
         for i in range(pgrid.n_cells)],
    )
    path2 = out / "counterexample_defect.csv"
    _write_csv(
        path2,
        ["cell_a", "cell_b", "defect", "stderr"],
        [(a, b, res.defect[k], res.stderr[k]) for k, (a, b) in enumerate(pairs)],
    )
    assertions = {
        "all_replicas_collision_free": {
            "passed": bool(collision_free == cfg.replicas),
            "value": [collision_free, cfg.replicas],
        },
        "marginal_matches_free_transport_3sigma": {
            "passed": bool(np.all(z_free[occupied] <= 3.0)),
            "value": float(z_free[occupied].max()),
        },
        "boltzmann_departs_5sigma": {
            "passed": bool(np.any(z_boltz[occupied] > 5.0)),
            "value": float(z_boltz[occupied].max()),
        },
        "chaos_outside_badset": {
            "passed": bool(frac_ok >= 0.95 if pairs else False),
            "value": frac_ok,
        },
    }
    return [path, path2], assertions


def _scenario_tree_vs_solver(cfg: ExperimentConfig, out: Path) -> tuple[list[Path], dict]:
    spec = _density(cfg)
    grid = _velocity_grid(cfg)
    t_star, _ = lanford_time(spec.beta, spec.mu, cfg.dim)
    t = 0.1 * t_star
    sol = solve_homogeneous(
        HomogeneousState(grid, spec.velocity_density(grid.nodes)),
        t, t / 8, n_angle=cfg.n_angle, save_every=10**6,
    )
    # probe at bulk grid nodes (nearest to chosen velocities)
    probes = []
    for target in ([0.9, 0.0], [1.5, 0.0], [0.4, 0.9], [2.1, 0.4], [0.0, 0.0]):
        k = int(np.argmin(np.sum((grid.nodes - np.asarray(target[: cfg.dim])) ** 2, -1)))
        if k not in probes:
            probes.append(k)
    rows = []
    worst = 0.0
    rng = derive_rng(cfg.seed, "tree-series")
    for k in probes:
        z = (np.full((1, cfg.dim), 0.5), grid.nodes[k][None, :])
        total, var = 0.0, 0.0
        for s in range(cfg.tree_orders + 1):
            est = evaluate_series_term(
                1, s, t, spec, z, "boltzmann", cfg.tree_samples, rng
            )
            total += est.value
            var += est.stderr**2
            rows.append((1, s, t, "boltzmann", est.value, est.stderr,
                         est.recollision_fraction, 0.0, est.samples))
        ref = float(sol.states[-1].f[k])
        err = np.sqrt(var)
        tol = max(3 * err, 0.02 * ref)
        worst = max(worst, abs(total - ref) / tol)
        rows.append((1, -1, t, "partial_sum_vs_solver", total, err, 0.0, ref,
                     cfg.tree_samples))
    assertions = {
        "partial_sums_match_solver": {"passed": bool(worst <= 1.0), "value": worst}
    }
    # equilibrium terms vanish
    eq = DensitySpec(beta=cfg.beta, dim=cfg.dim, form="maxwellian")
    zeq = (np.full((1, cfg.dim), 0.5), np.full((1, cfg.dim), 0.4))
    eq_ok = True
    eq_worst = 0.0
    for s in (1, 2):
        est = evaluate_series_term(1, s, t, eq, zeq, "boltzmann", cfg.tree_samples, rng)
        zscore = abs(est.value) / max(est.stderr, 1e-300)
        eq_worst = max(eq_worst, zscore)
        eq_ok &= zscore <= 3.0
        rows.append((1, s, t, "equilibrium", est.value, est.stderr,
                     est.recollision_fraction, 0.0, est.samples))
    assertions["equilibrium_terms_vanish"] = {"passed": bool(eq_ok), "value": eq_worst}
    # term magnitude scales like t^s
    slope_ok = True
    slopes = []
    zslope = (np.full((1, cfg.dim), 0.5), np.array([[1.1] + [0.0] * (cfg.dim - 1)]))
    for s in (1, 2):
        ts = np.array([0.01, 0.02, 0.04])
        mags = []
        for tv in ts:
            # common random numbers across the t scan so the ratio is clean
            rng_t = derive_rng(cfg.seed, f"tree-slope-s{s}")
            est = evaluate_series_term(
                1, s, float(tv), spec, zslope, "boltzmann", cfg.tree_samples, rng_t
            )
            mags.append(abs(est.value))
            rows.append((1, s, float(tv), "slope_scan", est.value, est.stderr,
                         est.recollision_fraction, 0.0, est.samples))
        slope = float(np.polyfit(np.log(ts), np.log(mags), 1)[0])
        slopes.append(slope)
        slope_ok &= abs(slope - s) <= 0.3
    assertions["term_magnitude_slope"] = {"passed": bool(slope_ok), "value": slopes}
    path = out / "series_terms.csv"
    _write_csv(
        path,
        ["n", "s", "t", "variant", "estimate", "stderr", "recollision_fraction",
         "reference", "samples"],
        rows,
    )
    return [path], assertions


def _scenario_htheorem(cfg: ExperimentConfig, out: Path) -> tuple[list[Path], dict]:
    spec = _density(cfg)
    grid = _velocity_grid(cfg)
    f0 = spec.velocity_density(grid.nodes)
    horizon = 1.0
    fwd = solve_homogeneous(
        HomogeneousState(grid, f0), horizon, cfg.dt, n_angle=cfg.n_angle,
        save_every=max(1, int(0.1 / cfg.dt)),
    )
    rows = []
    d_vals = []
    for k, st in enumerate(fwd.states):
        rng = derive_rng(cfg.seed, "htheorem-D", k)
        d_est, d_err, skipped = entropy_production(st, cfg.mc_samples, rng)
        d_vals.append((st.t, d_est, d_err, skipped))
        rows.append(
            ("forward", st.t, fwd.mass[k], *fwd.momentum[k], fwd.energy[k],
             fwd.entropy[k], d_est, d_err)
        )
    rev = solve_homogeneous(
        HomogeneousState(grid, f0), 0.05, cfg.dt, sign="reverse", n_angle=cfg.n_angle,
        save_every=max(1, int(0.01 / cfg.dt)),
    )
    for k, st in enumerate(rev.states):
        rows.append(("reverse", -st.t, rev.mass[k], *rev.momentum[k], rev.energy[k],
                     rev.entropy[k], 0.0, 0.0))
    # Maxwellian entropy production vanishes
    rngm = derive_rng(cfg.seed, "htheorem-D-maxwellian")
    m_state = HomogeneousState(grid, grid.maxwellian(cfg.beta))
    dm, dm_err, _ = entropy_production(m_state, cfg.mc_samples, rngm)
    path = out / "htheorem_trace.csv"
    _write_csv(
        path,
        ["branch", "time", "mass", *[f"momentum_{k+1}" for k in range(cfg.dim)],
         "energy", "entropy", "D", "D_err"],
        rows,
    )
    pathg = out / "htheorem_grid_dump.csv"
    _write_csv(
        pathg,
        [*[f"v{k+1}" for k in range(cfg.dim)], "f_initial", "f_final"],
        [(*grid.nodes[i], f0[i], fwd.states[-1].f[i]) for i in range(grid.n_total)],
    )
    d_arr = np.array([(v[1], v[2]) for v in d_vals])
    assertions = {
        "relative_entropy_nonincreasing": {
            "passed": bool(np.all(np.diff(fwd.entropy) >= -1e-6)),
            "value": float(np.diff(fwd.entropy).min()),
        },
        "D_nonnegative_3sigma": {
            "passed": bool(np.all(d_arr[:, 0] >= -3 * d_arr[:, 1])),
            "value": float((d_arr[:, 0] / np.maximum(d_arr[:, 1], 1e-300)).min()),
        },
        "D_positive_at_t0_5sigma": {
            "passed": bool(d_arr[0, 0] > 5 * d_arr[0, 1]),
            "value": float(d_arr[0, 0] / max(d_arr[0, 1], 1e-300)),
        },
        "D_maxwellian_zero_3sigma": {
            "passed": bool(abs(dm) <= 3 * dm_err + 1e-12),
            "value": [dm, dm_err],
        },
        "reverse_entropy_nonincreasing_backward": {
            "passed": bool(np.all(np.diff(rev.entropy) <= 1e-6)),
            "value": float(np.diff(rev.entropy).max()) if len(rev.entropy) > 1 else 0.0,
        },
    }
    return [path, pathg], assertions


_RUNNERS = {
    "lanford": _scenario_lanford,
    "loschmidt": _scenario_loschmidt,
    "concatenation": _scenario_concatenation,
    "badset-scaling": _scenario_badset_scaling,
    "chaos": _scenario_chaos,
    "counterexample": _scenario_counterexample,
    "tree-vs-solver": _scenario_tree_vs_solver,
    "htheorem": _scenario_htheorem,
}


def run(cfg: ExperimentConfig, out_dir) -> tuple[RunManifest, dict]:
    """Execute a scenario, write CSVs + summary.json + manifest.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.time()
    files, assertions = _RUNNERS[cfg.scenario](cfg, out)
    summary = {
        "scenario": cfg.scenario,
        "schema_version": SCHEMA_VERSION,
        "config": asdict(cfg),
        "assertions": assertions,
        "all_passed": all(a["passed"] for a in assertions.values()),
    }
    spath = out / "summary.json"
    spath.write_text(json.dumps(summary, indent=2, sort_keys=True))
    files = list(files) + [spath]
    cfg_json = json.dumps(asdict(cfg), sort_keys=True)
    manifest = RunManifest(
        config_hash=hashlib.sha256(cfg_json.encode()).hexdigest(),
        code_version=__version__,
        seed=cfg.seed,
        files={f.name: _sha256(f) for f in files},
        wall_clock_s=time.time() - start,
        warnings=cfg.scaling_warnings(),
    )
    (out / "manifest.json").write_text(manifest.to_json())
    return manifest, summary
