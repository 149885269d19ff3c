"""Samplers for the initial measures: factorized data with hard-core
exclusion, the grand-canonical state, and its collision-conditioned
variant, all built on a Gaussian-enveloped one-particle density f0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .badsets import min_flow_distance, uniform_ball  # noqa: F401  (re-exported for demos)
from .simulate import Configuration
from .torus import minimal_image


class EnvelopeViolated(Exception):
    """f0 exceeded its Gaussian envelope at a rejection proposal."""


class RejectionBudgetExceeded(Exception):
    """Too many rejected proposals; the target acceptance is too small."""


class EmptyEnsemble(Exception):
    """An estimator was fed no samples."""


@dataclass
class DensitySpec:
    """One-particle density f0(x, v) = profile(x) * velocity density.

    The density must satisfy f0 * exp(mu + beta |v|^2 / 2) <= 1; when mu
    is omitted it is set to the largest admissible value on a probe
    grid. Forms: 'maxwellian' (centered Gaussian, inverse temperature
    beta), 'two_bump' (symmetric Gaussian mixture at +-bump_offset along
    the first axis with inverse temperature bump_beta > beta), 'custom'
    (any bounded velocity density, sampled by rejection under the
    envelope).
    """

    beta: float
    dim: int = 2
    form: str = "maxwellian"
    mu: Optional[float] = None
    bump_offset: float = 1.5
    bump_beta: Optional[float] = None
    custom_density: Optional[Callable[[np.ndarray], np.ndarray]] = None
    spatial_profile: Optional[Callable[[np.ndarray], np.ndarray]] = None
    spatial_sup: float = 1.0
    _envelope_probed: bool = field(default=False, repr=False)

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.form == "two_bump" and self.bump_beta is None:
            self.bump_beta = 2.0 * self.beta
        if self.form == "two_bump" and self.bump_beta <= self.beta:
            raise ValueError("two_bump needs bump_beta > beta for the envelope")
        if self.form == "custom" and self.custom_density is None:
            raise ValueError("custom form needs custom_density")
        if self.mu is None:
            self.mu = self._default_mu()
        self.check_envelope()

    # -- densities ---------------------------------------------------------

    def velocity_density(self, v: np.ndarray) -> np.ndarray:
        """Density of the velocity marginal of f0 at points v (..., d)."""
        v = np.atleast_2d(np.asarray(v, float))
        d = self.dim
        if self.form == "maxwellian":
            c = (self.beta / (2 * np.pi)) ** (d / 2)
            out = c * np.exp(-0.5 * self.beta * np.sum(v * v, axis=-1))
        elif self.form == "two_bump":
            bb = self.bump_beta
            c = (bb / (2 * np.pi)) ** (d / 2)
            a = np.zeros(d)
            a[0] = self.bump_offset
            e1 = np.exp(-0.5 * bb * np.sum((v - a) ** 2, axis=-1))
            e2 = np.exp(-0.5 * bb * np.sum((v + a) ** 2, axis=-1))
            out = 0.5 * c * (e1 + e2)
        else:
            out = np.asarray(self.custom_density(v), float)
        return out

    def phase_density(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        fv = self.velocity_density(v)
        if self.spatial_profile is None:
            return fv
        return fv * np.asarray(self.spatial_profile(np.atleast_2d(x)), float)

    def moment_matched_maxwellian(self) -> "DensitySpec":
        """Centered Maxwellian with the same energy as this density."""
        e2 = self.mean_square_speed()
        return DensitySpec(beta=self.dim / e2, dim=self.dim, form="maxwellian")

    def mean_square_speed(self) -> float:
        if self.form == "maxwellian":
            return self.dim / self.beta
        if self.form == "two_bump":
            return self.dim / self.bump_beta + self.bump_offset**2
        v = self._probe_velocities()
        w = self.velocity_density(v)
        return float(np.sum(w * np.sum(v * v, axis=-1)) / np.sum(w))

    # -- envelope ----------------------------------------------------------

    def _probe_velocities(self, per_axis: int = 61) -> np.ndarray:
        lim = 6.0 / np.sqrt(self.beta) + (self.bump_offset if self.form == "two_bump" else 0.0)
        axes = [np.linspace(-lim, lim, per_axis)] * self.dim
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def _default_mu(self) -> float:
        if self.form == "maxwellian":
            return -(self.dim / 2) * np.log(self.beta / (2 * np.pi))
        v = self._probe_velocities()
        sup = np.max(self.velocity_density(v) * np.exp(0.5 * self.beta * np.sum(v * v, axis=-1)))
        return float(-np.log(sup * self.spatial_sup))

    def check_envelope(self, tol: float = 1e-9):
        """Verify f0 exp(mu + beta|v|^2/2) <= 1 on a probe grid."""
        v = self._probe_velocities()
        vals = (
            self.velocity_density(v)
            * self.spatial_sup
            * np.exp(self.mu + 0.5 * self.beta * np.sum(v * v, axis=-1))
        )
        if np.max(vals) > 1.0 + tol:
            raise EnvelopeViolated(f"envelope excess {np.max(vals) - 1.0}")
        self._envelope_probed = True

    # -- sampling ----------------------------------------------------------

    def sample_velocity(self, rng: np.random.Generator, size: int = 1) -> np.ndarray:
        """Draw velocities from the v-marginal of f0; shape (size, d)."""
        d = self.dim
        if self.form == "maxwellian":
            return rng.standard_normal((size, d)) / np.sqrt(self.beta)
        if self.form == "two_bump":
            out = rng.standard_normal((size, d)) / np.sqrt(self.bump_beta)
            signs = np.where(rng.random(size) < 0.5, 1.0, -1.0)
            out[:, 0] += signs * self.bump_offset
            return out
        return self._sample_custom(rng, size)

    def _sample_custom(self, rng: np.random.Generator, size: int) -> np.ndarray:
        out = np.empty((size, self.dim))
        have = 0
        while have < size:
            m = max(2 * (size - have), 64)
            prop = rng.standard_normal((m, self.dim)) / np.sqrt(self.beta)
            # envelope exp(-mu - beta|v|^2/2) over proposal density
            ratio = self.velocity_density(prop) * np.exp(
                self.mu + 0.5 * self.beta * np.sum(prop * prop, axis=-1)
            )
            if np.any(ratio > 1.0 + 1e-9):
                raise EnvelopeViolated(f"density/envelope ratio {ratio.max()}")
            acc = prop[rng.random(m) < ratio]
            take = min(len(acc), size - have)
            out[have : have + take] = acc[:take]
            have += take
        return out

    def sample_position(self, rng: np.random.Generator, size: int = 1) -> np.ndarray:
        if self.spatial_profile is None:
            return rng.random((size, self.dim))
        out = np.empty((size, self.dim))
        have = 0
        while have < size:
            m = max(2 * (size - have), 64)
            prop = rng.random((m, self.dim))
            ratio = np.asarray(self.spatial_profile(prop), float) / self.spatial_sup
            if np.any(ratio > 1.0 + 1e-9):
                raise EnvelopeViolated("spatial profile exceeds its stated sup")
            acc = prop[rng.random(m) < ratio]
            take = min(len(acc), size - have)
            out[have : have + take] = acc[:take]
            have += take
        return out


def sample_velocity(spec: DensitySpec, rng: np.random.Generator, size: int = 1) -> np.ndarray:
    return spec.sample_velocity(rng, size)


def _exclusion_ok(x: np.ndarray, eps: float) -> bool:
    n = x.shape[0]
    if n < 2:
        return True
    iu, ju = np.triu_indices(n, k=1)
    d = np.linalg.norm(minimal_image(x[iu], x[ju]), axis=-1)
    return bool(np.all(d > eps))


def sample_factorized(
    spec: DensitySpec,
    N: int,
    eps: float,
    rng: np.random.Generator,
    method: str = "global_rejection",
    budget: int = 1_000_000,
    burn_in: Optional[int] = None,
) -> Configuration:
    """Draw Z_N from the factorized measure with hard-core exclusion.

    'global_rejection' redraws all N particles until no pair overlaps
    (exact). 'markov_chain' runs single-site Metropolis position sweeps
    from a sequentially inserted start (approximate; for regimes where
    global rejection collapses). Velocities are iid from f0 either way.
    """
    if method == "global_rejection":
        for _ in range(budget):
            x = spec.sample_position(rng, N)
            if _exclusion_ok(x, eps):
                return Configuration(x, spec.sample_velocity(rng, N), eps)
        raise RejectionBudgetExceeded(f"no admissible draw in {budget} attempts")
    if method != "markov_chain":
        raise ValueError(f"unknown method {method!r}")

    x = np.empty((N, spec.dim))
    for i in range(N):
        for _ in range(budget):
            cand = spec.sample_position(rng, 1)[0]
            if i == 0 or np.all(
                np.linalg.norm(minimal_image(cand, x[:i]), axis=-1) > eps
            ):
                x[i] = cand
                break
        else:
            raise RejectionBudgetExceeded("sequential insertion failed")
    sweeps = 100 * N if burn_in is None else burn_in
    for _ in range(sweeps):
        for i in range(N):
            cand = spec.sample_position(rng, 1)[0]
            others = np.delete(np.arange(N), i)
            if np.all(np.linalg.norm(minimal_image(cand, x[others]), axis=-1) > eps):
                x[i] = cand
    return Configuration(x, spec.sample_velocity(rng, N), eps)


def estimate_partition_function(
    spec: DensitySpec,
    N: int,
    eps: float,
    samples: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Z_N relative to the unconstrained product, by acceptance frequency.

    Exclusion only constrains positions, so velocities are not drawn.
    """
    hits = 0
    for _ in range(samples):
        hits += _exclusion_ok(spec.sample_position(rng, N), eps)
    p = hits / samples
    return p, float(np.sqrt(p * (1 - p) / samples))


@dataclass
class ConditioningSpec:
    """Forward collision-free conditioning: no contact at diameter eps
    under the free flow on [0, delta]."""

    delta: float
    eps: float

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")


@dataclass
class GrandCanonicalSample:
    n: int
    config: Configuration
    accepted_after: int


def _collision_free(x: np.ndarray, v: np.ndarray, eps: float, delta: float) -> bool:
    """No pair comes within eps under forward free flow on [0, delta].

    Membership at s = 0 covers the exclusion constraint itself.
    """
    if x.shape[0] < 2:
        return True
    dmin = min_flow_distance(x[None], v[None], delta, +1.0, eps)
    return bool(dmin[0] > eps)


def sample_grand_canonical(
    spec: DensitySpec,
    eps: float,
    rng: np.random.Generator,
    conditioning: Optional[ConditioningSpec] = None,
    budget: int = 1_000_000,
) -> GrandCanonicalSample:
    """Exact rejection sampler for the grand-canonical hard-sphere state.

    Particle count is Poisson with activity mu_eps = eps^{-(d-1)}
    (truncated where the tail is below 1e-12), particles iid from f0;
    a draw is kept when the exclusion holds and, if conditioned, the
    forward flow is collision-free on [0, delta].
    """
    d = spec.dim
    mu_eps = eps ** (-(d - 1))
    n_max = int(mu_eps + 10.0 * np.sqrt(mu_eps)) + 1
    for attempt in range(1, budget + 1):
        n = int(rng.poisson(mu_eps))
        if n > n_max:
            continue
        x = spec.sample_position(rng, n)
        v = spec.sample_velocity(rng, n)
        if conditioning is not None:
            if not _collision_free(x, v, conditioning.eps, conditioning.delta):
                continue
        elif not _exclusion_ok(x, eps):
            continue
        return GrandCanonicalSample(n, Configuration(x, v, eps, check=False), attempt)
    raise RejectionBudgetExceeded(f"no admissible draw in {budget} attempts")


@dataclass
class PhaseCell:
    """Axis-aligned box in (x, v) space; position bounds on the torus."""

    x_lo: np.ndarray
    x_hi: np.ndarray
    v_lo: np.ndarray
    v_hi: np.ndarray

    def __post_init__(self):
        self.x_lo = np.asarray(self.x_lo, float)
        self.x_hi = np.asarray(self.x_hi, float)
        self.v_lo = np.asarray(self.v_lo, float)
        self.v_hi = np.asarray(self.v_hi, float)

    @property
    def volume(self) -> float:
        return float(np.prod(self.x_hi - self.x_lo) * np.prod(self.v_hi - self.v_lo))

    def contains(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        inx = np.all((x >= self.x_lo) & (x < self.x_hi), axis=-1)
        inv = np.all((v >= self.v_lo) & (v < self.v_hi), axis=-1)
        return inx & inv


def estimate_correlation(
    samples: list[GrandCanonicalSample],
    j: int,
    cells,
    eps: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Rescaled correlation estimate mu_eps^{-j} rho^{(j)} on phase cells.

    j = 1: ``cells`` is a list of PhaseCell, the estimate is the mean
    particle count per cell over mu_eps * volume. j = 2: ``cells`` is a
    list of (cell_a, cell_b) pairs counted over ordered pairs of
    distinct particles. Returns (estimates, stderrs).
    """
    if not samples:
        raise EmptyEnsemble("no grand-canonical samples")
    if j not in (1, 2):
        raise ValueError("only j in {1, 2} supported")
    d = samples[0].config.dim
    mu_eps = eps ** (-(d - 1))
    m = len(samples)
    k = len(cells)
    per_sample = np.zeros((m, k))
    for s_idx, s in enumerate(samples):
        x, v = s.config.x, s.config.v
        if j == 1:
            for c_idx, cell in enumerate(cells):
                per_sample[s_idx, c_idx] = np.sum(cell.contains(x, v)) / (
                    mu_eps * cell.volume
                )
        else:
            for c_idx, (ca, cb) in enumerate(cells):
                na = np.sum(ca.contains(x, v))
                nb = np.sum(cb.contains(x, v))
                nab = np.sum(ca.contains(x, v) & cb.contains(x, v))
                per_sample[s_idx, c_idx] = (na * nb - nab) / (
                    mu_eps**2 * ca.volume * cb.volume
                )
    est = per_sample.mean(axis=0)
    err = per_sample.std(axis=0, ddof=1) / np.sqrt(m) if m > 1 else np.full(k, np.inf)
    return est, err
