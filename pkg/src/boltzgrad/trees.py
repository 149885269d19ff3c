"""Collision trees, backward pseudo-trajectories, and the signed Monte
Carlo evaluation of the expansion of marginals in adjoined particles.

A tree over n roots and s added particles records for each added
particle (index n+j, 0-based) the particle it attaches to. Pseudo-
trajectories run backward from time t to 0: between adjunction times the
existing particles follow the backward flow (free flight in the
zero-diameter variant, the hard-sphere flow at diameter eps in the
finite-size variant); at its time each new particle is adjoined at the
parent's position (offset by eps nu in the finite-size variant) and the
elastic scattering law is applied when the pair is post-collisional.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product
from typing import Optional

import numpy as np

from .badsets import BadSetSpec, in_bad_set
from .sampling import DensitySpec
from .simulate import Configuration, first_collision, reverse_velocities, simulate
from .torus import minimal_image, scatter, wrap


class SizeLimit(Exception):
    pass


class ProposalUnderflow(Exception):
    pass


GOOD = "Good"
OVERLAP = "Overlap"
RECOLLISION = "Recollision"


@dataclass(frozen=True)
class CollisionTree:
    """parents[j] in {0, .., n+j-1} is the attachment of added particle n+j."""

    n: int
    parents: tuple[int, ...]

    @property
    def s(self) -> int:
        return len(self.parents)


def tree_count(n: int, s: int) -> int:
    out = 1
    for i in range(s):
        out *= n + i
    return out


def enumerate_trees(n: int, s: int, size_limit: int = 10_000_000) -> list[CollisionTree]:
    """All ordered collision trees, lexicographic in the parent map."""
    if n < 1 or s < 0:
        raise ValueError("need n >= 1, s >= 0")
    if tree_count(n, s) > size_limit:
        raise SizeLimit(f"{tree_count(n, s)} trees exceed the limit")
    ranges = [range(n + j) for j in range(s)]
    return [CollisionTree(n, parents) for parents in product(*ranges)]


@dataclass
class TreeParameters:
    """Adjunction times (strictly decreasing, in (0, t)), impact
    directions, and velocities of the added particles."""

    times: np.ndarray
    nus: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, float)
        self.nus = np.asarray(self.nus, float)
        self.velocities = np.asarray(self.velocities, float)
        if np.any(np.diff(self.times) >= 0):
            raise ValueError("adjunction times must be strictly decreasing")


@dataclass
class PseudoTrajectoryResult:
    x0: np.ndarray
    v0: np.ndarray
    classification: str
    variant: str
    signed_weight: float
    recollision_times: list = field(default_factory=list)


def build_pseudo_trajectory(
    tree: CollisionTree,
    z_n,
    params: TreeParameters,
    variant: str = "boltzmann",
    eps: Optional[float] = None,
    t_start: Optional[float] = None,
) -> PseudoTrajectoryResult:
    """Backward construction from time t_start down to 0.

    variant 'boltzmann': zero-diameter adjunction at the parent's exact
    position, backward free flight between adjunctions; never reports
    Overlap or Recollision. variant 'bbgky': adjunction at distance eps,
    hard-sphere backward flow; Overlap means the adjunction slot was
    blocked (the trajectory does not exist and the signed weight is
    zero), Recollision flags any hard-sphere event that is not an
    adjunction-time scattering (the flow continues through it).
    """
    if variant not in ("boltzmann", "bbgky"):
        raise ValueError(f"unknown variant {variant!r}")
    if variant == "bbgky" and eps is None:
        raise ValueError("bbgky variant needs eps")
    if hasattr(z_n, "x"):
        x = np.array(z_n.x, float)
        v = np.array(z_n.v, float)
    else:
        x = np.atleast_2d(np.array(z_n[0], float))
        v = np.atleast_2d(np.array(z_n[1], float))
    times = [float(u) for u in params.times]
    if t_start is None:
        t_start = times[0] if times else 0.0
    if times and t_start < times[0]:
        raise ValueError("t_start below the first adjunction time")
    classification = GOOD
    recol_times: list = []
    weight = 1.0
    t_cur = float(t_start)

    def flow_back(x, v, t_hi, t_lo):
        nonlocal classification
        dt = t_hi - t_lo
        if dt <= 0:
            return x, v
        if variant == "boltzmann" or x.shape[0] == 1:
            return wrap(x - dt * v), v
        cfg = Configuration(x, v, eps, check=False)
        out, log = simulate(reverse_velocities(cfg), dt)
        if len(log):
            classification = RECOLLISION
            recol_times.extend(t_hi - ev.time for ev in log.events)
        return out.x, -out.v

    for j, parent in enumerate(tree.parents):
        t_j = times[j]
        x, v = flow_back(x, v, t_cur, t_j)
        t_cur = t_j
        nu = params.nus[j]
        v_new = params.velocities[j]
        w_j = float(np.dot(v_new - v[parent], nu))
        weight *= w_j
        if variant == "bbgky":
            x_new = wrap(x[parent] + eps * nu)
            others = np.delete(np.arange(x.shape[0]), parent)
            if others.size and np.any(
                np.linalg.norm(minimal_image(x_new, x[others]), axis=-1) < eps
            ):
                return PseudoTrajectoryResult(x, v, OVERLAP, variant, 0.0, recol_times)
        else:
            x_new = x[parent].copy()
        if w_j > 0:
            v_par, v_new = scatter(v[parent], v_new, nu)
            v = v.copy()
            v[parent] = v_par
        x = np.vstack([x, x_new])
        v = np.vstack([v, v_new])
    x, v = flow_back(x, v, t_cur, 0.0)
    return PseudoTrajectoryResult(x, v, classification, variant, weight, recol_times)


@dataclass
class SeriesTermEstimate:
    n: int
    s: int
    t: float
    variant: str
    value: float
    stderr: float
    samples: int
    recollision_fraction: float = 0.0
    overlap_fraction: float = 0.0
    prefactor: float = 1.0
    value_uncorrected: float = 0.0


def _sphere_area(d: int) -> float:
    return 2 * np.pi if d == 2 else 4 * np.pi


def _sample_params(
    s: int, t: float, d: int, beta_prop: float, rng: np.random.Generator, m: int
):
    times = np.sort(rng.random((m, s)) * t, axis=1)[:, ::-1]
    nus = rng.standard_normal((m, s, d))
    nus /= np.linalg.norm(nus, axis=-1, keepdims=True)
    vels = rng.standard_normal((m, s, d)) / np.sqrt(beta_prop)
    gauss = (beta_prop / (2 * np.pi)) ** (d / 2)
    qdens = gauss**s * np.exp(-0.5 * beta_prop * np.sum(vels**2, axis=(1, 2)))
    return times, nus, vels, qdens


def _boltzmann_term_tree(
    tree: CollisionTree,
    x0: np.ndarray,
    v0: np.ndarray,
    t: float,
    f0: DensitySpec,
    beta_prop: float,
    m: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Vectorized signed contributions of one tree (m samples)."""
    n, s = tree.n, tree.s
    d = x0.shape[1]
    times, nus, vels, qdens = _sample_params(s, t, d, beta_prop, rng, m)
    x = np.broadcast_to(x0, (m, n, d)).copy()
    v = np.broadcast_to(v0, (m, n, d)).copy()
    t_cur = np.full(m, t)
    weight = np.full(m, t**s / math.factorial(s) * _sphere_area(d) ** s)
    for j, parent in enumerate(tree.parents):
        t_j = times[:, j]
        x = np.mod(x - (t_cur - t_j)[:, None, None] * v, 1.0)
        t_cur = t_j
        nu = nus[:, j, :]
        v_new = vels[:, j, :].copy()
        w_j = np.einsum("md,md->m", v_new - v[:, parent, :], nu)
        weight = weight * w_j
        post = w_j > 0
        q = w_j[post, None] * nu[post]
        v_par = v[:, parent, :].copy()
        v_par[post] += q
        v_new[post] -= q
        v = np.concatenate([v, v_new[:, None, :]], axis=1)
        v[:, parent, :] = v_par
        x = np.concatenate([x, x[:, parent, None, :]], axis=1)
    x = np.mod(x - t_cur[:, None, None] * v, 1.0)
    dens = f0.phase_density(x.reshape(-1, d), v.reshape(-1, d)).reshape(m, n + s)
    return weight * np.prod(dens, axis=1) / qdens


def evaluate_series_term(
    n: int,
    s: int,
    t: float,
    f0: DensitySpec,
    z_n,
    variant: str = "boltzmann",
    mc_samples: int = 20_000,
    rng: Optional[np.random.Generator] = None,
    beta_prop: Optional[float] = None,
    eps: Optional[float] = None,
    n_particles: Optional[int] = None,
) -> SeriesTermEstimate:
    """Signed Monte Carlo estimate of the order-s expansion term at Z_n.

    Ordered adjunction times are sampled as sorted uniforms (Jacobian
    t^s/s!), impact directions uniformly on the sphere (area factor
    included), velocities from a Gaussian proposal with beta_prop < beta
    so the importance weights stay bounded. The finite-size variant
    multiplies by the combinatorial prefactor (N-n)...(N-n-s+1) eps^{(d-1)s}
    and an Overlap draw contributes zero.
    """
    rng = np.random.default_rng() if rng is None else rng
    beta_prop = f0.beta / 2 if beta_prop is None else beta_prop
    if beta_prop >= f0.beta:
        raise ProposalUnderflow("beta_prop must stay below the envelope beta")
    if hasattr(z_n, "x"):
        x0, v0 = np.array(z_n.x, float), np.array(z_n.v, float)
    else:
        x0 = np.atleast_2d(np.array(z_n[0], float))
        v0 = np.atleast_2d(np.array(z_n[1], float))
    d = x0.shape[1]

    prefactor = 1.0
    if variant == "bbgky":
        if eps is None or n_particles is None:
            raise ValueError("bbgky variant needs eps and n_particles")
        for k in range(s):
            prefactor *= (n_particles - n - k) * eps ** (d - 1)

    if s == 0:
        if variant == "boltzmann" or n == 1:
            xb = wrap(x0 - t * v0)
            vb = v0
        else:
            cfg = Configuration(x0, v0, eps, check=False)
            back, _ = simulate(reverse_velocities(cfg), t)
            xb, vb = back.x, -back.v
        val = float(np.prod(f0.phase_density(xb, vb)))
        return SeriesTermEstimate(n, s, t, variant, val, 0.0, 0, prefactor=prefactor,
                                  value_uncorrected=val)

    trees = enumerate_trees(n, s)
    total = np.zeros(mc_samples)
    n_recol = 0
    n_overlap = 0
    if variant == "boltzmann":
        for tree in trees:
            total += _boltzmann_term_tree(tree, x0, v0, t, f0, beta_prop, mc_samples, rng)
    else:
        base = t**s / math.factorial(s) * _sphere_area(d) ** s
        for tree in trees:
            times, nus, vels, qdens = _sample_params(s, t, d, beta_prop, rng, mc_samples)
            for i in range(mc_samples):
                params = TreeParameters(times[i], nus[i], vels[i])
                res = build_pseudo_trajectory(tree, (x0, v0), params, "bbgky", eps, t_start=t)
                if res.classification == OVERLAP:
                    n_overlap += 1
                    continue
                if res.classification == RECOLLISION:
                    n_recol += 1
                dens = float(np.prod(f0.phase_density(res.x0, res.v0)))
                total[i] += base * res.signed_weight * dens / qdens[i]
    denom = mc_samples * len(trees) if variant == "bbgky" else mc_samples
    est = float(total.mean())
    err = float(total.std(ddof=1) / np.sqrt(mc_samples))
    return SeriesTermEstimate(
        n, s, t, variant,
        prefactor * est, prefactor * err, mc_samples,
        recollision_fraction=n_recol / max(denom, 1),
        overlap_fraction=n_overlap / max(denom, 1),
        prefactor=prefactor,
        value_uncorrected=est,
    )


def recollision_rate(
    n: int,
    s: int,
    t: float,
    eps: float,
    mc_samples: int,
    rng: np.random.Generator,
    z_n=None,
    f0: Optional[DensitySpec] = None,
    variant: str = "bbgky",
    beta_prop: float = 0.5,
) -> float:
    """Fraction of sampled pseudo-trajectories with a recollision or a
    blocked adjunction. Exactly zero in the zero-diameter variant."""
    if z_n is None:
        d = 2
        x0 = np.mod(np.full((n, d), 0.5) + 0.3 * np.arange(n)[:, None], 1.0)
        v0 = np.zeros((n, d))
    elif hasattr(z_n, "x"):
        x0, v0 = np.array(z_n.x, float), np.array(z_n.v, float)
        d = x0.shape[1]
    else:
        x0, v0 = np.atleast_2d(z_n[0]), np.atleast_2d(z_n[1])
        d = x0.shape[1]
    if s == 0:
        return 0.0
    bad = 0
    total = 0
    for tree in enumerate_trees(n, s):
        times, nus, vels, _ = _sample_params(s, t, d, beta_prop, rng, mc_samples)
        for i in range(mc_samples):
            params = TreeParameters(times[i], nus[i], vels[i])
            res = build_pseudo_trajectory(
                tree, (x0, v0), params, variant,
                eps if variant == "bbgky" else None, t_start=t,
            )
            bad += res.classification in (OVERLAP, RECOLLISION)
            total += 1
    return bad / total


IN_VPLUS = "InVplus"
NOT_IN_VPLUS = "NotInVplus"


def classify_admissible(
    z, n: int, horizon: float, eps: float
) -> tuple[str, dict]:
    """Test whether the forward flow realizes a pruning-compatible history.

    Starting from n+s particles, each successive first collision must
    involve the largest remaining added particle, which is then removed
    (either before or after the elastic exchange; both branches are
    explored), until n particles remain, all within the horizon.
    Diagnostics report one-sided bad-set membership of the input at the
    matched (eps, horizon).
    """
    if hasattr(z, "x"):
        x0, v0 = np.array(z.x, float), np.array(z.v, float)
    else:
        x0, v0 = np.atleast_2d(z[0]), np.atleast_2d(z[1])
    total = x0.shape[0]

    def prune(x, v, labels, t_rem):
        if len(labels) == n:
            return True
        cfg = Configuration(x, v, eps, check=False)
        hit = first_collision(cfg, t_rem)
        if hit is None:
            return False
        t_c, i, j, nu = hit
        target = int(np.argmax(labels))
        if target not in (i, j):
            return False
        x_adv = wrap(x + t_c * v)
        keep = np.delete(np.arange(len(labels)), target)
        # branch 1: remove before the exchange (survivor keeps its velocity)
        if prune(x_adv[keep], v[keep], labels[keep], t_rem - t_c):
            return True
        # branch 2: exchange first, then remove
        vi, vj = scatter(v[i], v[j], nu)
        v2 = v.copy()
        v2[i], v2[j] = vi, vj
        return prune(x_adv[keep], v2[keep], labels[keep], t_rem - t_c)

    labels = np.arange(total)
    ok = total == n or prune(x0, v0, labels, horizon)
    r_cut = float(np.max(np.linalg.norm(v0, axis=-1))) * np.sqrt(2) + 1e-9
    diag = {}
    for sign in ("plus", "minus"):
        spec = BadSetSpec(total, eps, max(r_cut, 1e-9), horizon, sign)
        diag[f"in_bad_set_{sign}"] = in_bad_set((x0, v0), spec)
    return (IN_VPLUS if ok else NOT_IN_VPLUS), diag
