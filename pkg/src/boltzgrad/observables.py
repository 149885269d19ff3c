"""Ensemble estimators: marginals, chaos defect, entropy, entropy production.

Marginals are histogram densities over a phase-cell grid, averaged over
replicas; exchangeability allows symmetrized counting over all particles
(default) or the literal particle-1 / pair-(1,2) estimators. Errors are
replica-level (each trajectory is one independent unit).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .solver import HomogeneousState, VelocityGrid, reference_weight


class EmptyEnsemble(Exception):
    pass


class NegativeDensity(Exception):
    pass


class ZeroDensityEncountered(Exception):
    pass


@dataclass
class PhaseCellGrid:
    """Product grid: x_bins^d position cells times v_bins^d velocity
    cells on [-v_max, v_max]^d. x_bins = 1 gives velocity-only cells."""

    dim: int
    x_bins: int = 8
    v_bins: int = 16
    v_max: float = 4.0

    @property
    def n_cells(self) -> int:
        return (self.x_bins * self.v_bins) ** self.dim

    @property
    def cell_volume(self) -> float:
        return (1.0 / self.x_bins) ** self.dim * (2.0 * self.v_max / self.v_bins) ** self.dim

    def cell_index(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Flat cell index per particle; -1 if the velocity leaves the box."""
        idx = np.zeros(x.shape[:-1], dtype=np.int64)
        ok = np.ones(x.shape[:-1], dtype=bool)
        for ax in range(self.dim):
            b = np.minimum((x[..., ax] % 1.0) * self.x_bins, self.x_bins - 1).astype(np.int64)
            idx = idx * self.x_bins + b
        for ax in range(self.dim):
            s = (v[..., ax] + self.v_max) / (2 * self.v_max) * self.v_bins
            ok &= (s >= 0) & (s < self.v_bins)
            idx = idx * self.v_bins + np.clip(s.astype(np.int64), 0, self.v_bins - 1)
        return np.where(ok, idx, -1)

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Representative (x, v) point of each flat cell."""
        xc = (np.arange(self.x_bins) + 0.5) / self.x_bins
        vc = -self.v_max + (np.arange(self.v_bins) + 0.5) * (2 * self.v_max / self.v_bins)
        axes = [xc] * self.dim + [vc] * self.dim
        mesh = np.meshgrid(*axes, indexing="ij")
        flat = [m.ravel() for m in mesh]
        return np.stack(flat[: self.dim], -1), np.stack(flat[self.dim :], -1)


@dataclass
class MarginalEstimate:
    order: int
    grid: PhaseCellGrid
    values: np.ndarray
    stderr: np.ndarray

    def total_mass(self) -> float:
        return float(self.values.sum() * self.grid.cell_volume**self.order)


def _replica_counts(ensemble, grid: PhaseCellGrid, symmetrized: bool) -> np.ndarray:
    counts = np.zeros((len(ensemble), grid.n_cells))
    for r, cfg in enumerate(ensemble):
        if symmetrized:
            ci = grid.cell_index(cfg.x, cfg.v)
        else:
            ci = grid.cell_index(cfg.x[:1], cfg.v[:1])
        ci = ci[ci >= 0]
        counts[r] = np.bincount(ci, minlength=grid.n_cells)
    return counts


def estimate_marginal(
    ensemble, order: int, grid: PhaseCellGrid, symmetrized: bool = True
) -> MarginalEstimate:
    """Histogram estimate of the order-1 or order-2 marginal density."""
    if not ensemble:
        raise EmptyEnsemble("no replicas")
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    n = ensemble[0].n
    R = len(ensemble)
    vol = grid.cell_volume
    if order == 1:
        counts = _replica_counts(ensemble, grid, symmetrized)
        norm = (n if symmetrized else 1) * vol
        per_rep = counts / norm
    else:
        if n < 2:
            raise ValueError("order 2 needs at least two particles")
        per_rep = np.zeros((R, grid.n_cells, grid.n_cells))
        for r, cfg in enumerate(ensemble):
            if symmetrized:
                ci = grid.cell_index(cfg.x, cfg.v)
                ci = ci[ci >= 0]
                c = np.bincount(ci, minlength=grid.n_cells).astype(float)
                pairs = np.outer(c, c) - np.diag(c)
                per_rep[r] = pairs / (n * (n - 1) * vol * vol)
            else:
                ci = grid.cell_index(cfg.x[:2], cfg.v[:2])
                if ci[0] >= 0 and ci[1] >= 0:
                    per_rep[r][ci[0], ci[1]] = 1.0 / (vol * vol)
    values = per_rep.mean(axis=0)
    stderr = per_rep.std(axis=0, ddof=1) / np.sqrt(R) if R > 1 else np.full_like(values, np.inf)
    return MarginalEstimate(order, grid, values, stderr)


@dataclass
class ChaosDefect:
    cell_pairs: list
    defect: np.ndarray      # |f2 - f1 f1| per pair
    stderr: np.ndarray
    max_defect: float
    max_stderr: float


def chaos_defect(
    ensemble, grid: PhaseCellGrid, cell_pairs, symmetrized: bool = True
) -> ChaosDefect:
    """Per-pair |f^(2)(A,B) - f^(1)(A) f^(1)(B)| with jackknife errors.

    cell_pairs are (flat_index_a, flat_index_b) tuples; the marginal
    factors use the same replica sample so errors are correlated and the
    jackknife (delete one replica) handles that exactly.
    """
    if not ensemble:
        raise EmptyEnsemble("no replicas")
    n = ensemble[0].n
    R = len(ensemble)
    vol = grid.cell_volume
    counts = _replica_counts(ensemble, grid, symmetrized)
    n_eff = n if symmetrized else None
    if not symmetrized:
        raise ValueError("chaos_defect requires symmetrized counting")
    defects = np.empty(len(cell_pairs))
    errs = np.empty(len(cell_pairs))
    for k, (a, b) in enumerate(cell_pairs):
        ca, cb = counts[:, a], counts[:, b]
        pair = ca * cb - (ca if a == b else 0.0)
        f2 = pair / (n * (n - 1) * vol * vol)
        f1a = ca / (n * vol)
        f1b = cb / (n * vol)
        s2, sa, sb = f2.sum(), f1a.sum(), f1b.sum()
        d_full = s2 / R - (sa / R) * (sb / R)
        d_jack = (s2 - f2) / (R - 1) - ((sa - f1a) / (R - 1)) * ((sb - f1b) / (R - 1))
        var = (R - 1) / R * np.sum((d_jack - d_jack.mean()) ** 2)
        defects[k] = abs(d_full)
        errs[k] = np.sqrt(var)
    imax = int(np.argmax(defects))
    return ChaosDefect(list(cell_pairs), defects, errs, float(defects[imax]), float(errs[imax]))


def relative_entropy(f: np.ndarray, m: np.ndarray, volume: float) -> float:
    """sum f log(f/m) * volume, with 0 log 0 = 0."""
    f = np.asarray(f, float)
    m = np.asarray(m, float)
    if np.any(f < -1e-12):
        raise NegativeDensity(f"min f = {f.min()}")
    pos = (f > 0) & (m > 0)
    return float(np.sum(f[pos] * np.log(f[pos] / m[pos])) * volume)


@dataclass
class EntropyTrace:
    times: np.ndarray
    entropy: np.ndarray            # S(t) = -int f log(f/M)
    production: np.ndarray = field(default=None)
    entropy_err: np.ndarray = field(default=None)
    production_err: np.ndarray = field(default=None)


class GridDensity:
    """Continuous evaluation of a grid density by Maxwellian-weighted
    multilinear interpolation (zero outside the node hull)."""

    def __init__(self, grid: VelocityGrid, f: np.ndarray):
        self.grid = grid
        self.f = f
        w_nodes, (beta_r, u) = reference_weight(grid, f)
        self.beta_r, self.u = beta_r, u
        self.g = f / w_nodes

    def _w(self, pts: np.ndarray) -> np.ndarray:
        return np.exp(-0.5 * self.beta_r * np.sum((pts - self.u) ** 2, axis=-1))

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        return self._w(pts) * self.grid.interpolate(self.g, pts)

    def inside(self, pts: np.ndarray) -> np.ndarray:
        """Strictly interior to the node hull (no boundary ramp)."""
        lim = self.grid.v_cut - 0.5 * self.grid.h
        return np.all(np.abs(pts) <= lim, axis=-1)


def entropy_production(
    state: HomogeneousState,
    mc_samples: int,
    rng: np.random.Generator,
    beta_proposal: Optional[float] = None,
    swap_roles: bool = False,
) -> tuple[float, float, int]:
    """Monte Carlo estimate of the entropy production functional

        D(f) = 1/4 int (f'f1' - ff1) log(f'f1'/(ff1)) ((v - v1).nu)_+

    over Gaussian proposals for (v, v1) and nu uniform on the sphere.
    Returns (estimate, stderr, skipped) where skipped counts samples
    discarded because the density vanished at an evaluation point.
    """
    grid = state.grid
    d = grid.dim
    dens = GridDensity(grid, state.f)
    beta_p = beta_proposal if beta_proposal is not None else dens.beta_r / 2.0
    v = rng.standard_normal((mc_samples, d)) / np.sqrt(beta_p)
    v1 = rng.standard_normal((mc_samples, d)) / np.sqrt(beta_p)
    if swap_roles:
        v, v1 = v1, v
    nu = rng.standard_normal((mc_samples, d))
    nu /= np.linalg.norm(nu, axis=-1, keepdims=True)
    q = np.sum((v - v1) * nu, axis=-1)
    kernel = np.maximum(q, 0.0)
    vp = v - q[:, None] * nu
    v1p = v1 + q[:, None] * nu
    fv, fv1, fvp, fv1p = dens(v), dens(v1), dens(vp), dens(v1p)
    gauss = (beta_p / (2 * np.pi)) ** (d / 2)
    qdens = (
        gauss * np.exp(-0.5 * beta_p * np.sum(v * v, -1))
        * gauss * np.exp(-0.5 * beta_p * np.sum(v1 * v1, -1))
    )
    sphere = 2 * np.pi if d == 2 else 4 * np.pi
    live = kernel > 0
    interior = dens.inside(v) & dens.inside(v1) & dens.inside(vp) & dens.inside(v1p)
    usable = live & interior & (fv > 0) & (fv1 > 0) & (fvp > 0) & (fv1p > 0)
    skipped = int(np.sum(live & ~usable))
    prod = fvp * fv1p
    base = fv * fv1
    vals = np.zeros(mc_samples)
    vals[usable] = (
        0.25
        * (prod[usable] - base[usable])
        * np.log(prod[usable] / base[usable])
        * kernel[usable]
        * sphere
        / qdens[usable]
    )
    est = float(vals.mean())
    err = float(vals.std(ddof=1) / np.sqrt(mc_samples))
    return est, err, skipped


def entropy_production_quadrature(
    state: HomogeneousState, n_angle: int = 8, row_chunk: int = 1024
) -> float:
    """Deterministic tensor-quadrature oracle for D(f) on the grid."""
    from .solver import _frame, _hemisphere_rule

    grid = state.grid
    dens = GridDensity(grid, state.f)
    nodes, w_cell = grid.nodes, grid.weight
    trig, wq = _hemisphere_rule(grid.dim, n_angle)
    total = 0.0
    n = grid.n_total
    f_nodes = state.f
    for lo in range(0, n, row_chunk):
        hi = min(lo + row_chunk, n)
        va = nodes[lo:hi, None, :]
        vb = nodes[None, :, :]
        u = vb - va
        unorm = np.linalg.norm(u, axis=-1)
        u_hat = u / np.where(unorm > 0, unorm, 1.0)[..., None]
        frame = _frame(u_hat)
        base = f_nodes[lo:hi, None] * f_nodes[None, :]
        for qi in range(len(wq)):
            nu = trig[0][qi] * u_hat
            for ax, e in enumerate(frame):
                nu = nu + trig[1 + ax][qi] * e
            qn = (unorm * trig[0][qi])[..., None]
            pa, pb = va + qn * nu, vb - qn * nu
            prod = dens(pa) * dens(pb)
            ok = (prod > 0) & (base > 0) & dens.inside(pa) & dens.inside(pb)
            term = np.zeros_like(base)
            term[ok] = (prod[ok] - base[ok]) * np.log(prod[ok] / base[ok])
            # kernel ((vb - va).nu)_+ = |u| cos, matching the operator rule
            total += 0.25 * wq[qi] * float(np.sum(term * unorm)) * w_cell * w_cell
    return total
