"""Geometry and two-body mechanics on the unit torus [0,1)^d.

Positions live on the periodic box, velocities in R^d (box lengths per
unit time). All functions accept plain numpy arrays and broadcast over
leading axes where meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

DIST_TOL = 1e-12    # contact tolerance on torus distances
UNIT_TOL = 1e-9     # tolerance on |nu| = 1


class InitialOverlap(Exception):
    """Raised when two spheres start closer than their diameter."""


class NonUnitNormal(Exception):
    """Raised when a scattering normal is not of unit length."""


def wrap(x: np.ndarray) -> np.ndarray:
    """Reduce position coordinates modulo 1 into [0, 1)."""
    return np.mod(x, 1.0)


def minimal_image(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Representative of a - b (mod 1) with each coordinate in [-1/2, 1/2).

    The half-open convention breaks antipodal ties deterministically:
    a coordinate difference of exactly +-1/2 maps to -1/2.
    """
    w = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return w - np.floor(w + 0.5)


def torus_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance on the torus, |minimal_image(a, b)|."""
    return np.linalg.norm(minimal_image(a, b), axis=-1)


@dataclass
class ParticleState:
    """Point z = (x, v) of the one-particle phase space."""

    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.x = wrap(np.asarray(self.x, dtype=float))
        self.v = np.asarray(self.v, dtype=float)


@dataclass
class ContactResult:
    """First contact of a sphere pair: time and impact direction.

    ``nu`` points from the first particle's center toward the second's
    at the moment of contact. ``time is None`` means no contact within
    the horizon.
    """

    time: Optional[float]
    nu: Optional[np.ndarray]

    def __bool__(self) -> bool:
        return self.time is not None


def free_flight(z: ParticleState, t: float) -> ParticleState:
    """Transport z for time t (t may be negative) with periodic wrap."""
    return ParticleState(wrap(z.x + t * z.v), z.v.copy())


def image_offsets(dim: int, k_max: int) -> np.ndarray:
    """Integer lattice offsets {-k_max..k_max}^dim, shape (m, dim)."""
    rng = np.arange(-k_max, k_max + 1)
    grids = np.meshgrid(*([rng] * dim), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1).astype(float)


def first_contact_batch(
    dx: np.ndarray,
    dv: np.ndarray,
    eps: float,
    window: float,
    k_max: int,
) -> tuple[np.ndarray, np.ndarray]:
    """First root of |dx + k + t*dv| = eps over images |k|_inf <= k_max.

    dx, dv have shape (m, d); dx should be the minimal-image separation.
    Returns (times, nu) with times = +inf where no contact occurs in
    (0, window] and nu the unit vector from particle 1 toward particle 2
    at contact (i.e. along -(dx + t*dv)).

    Only approaching roots (the smaller quadratic root) count; a pair
    sitting exactly at distance eps and receding yields no contact.
    """
    dx = np.atleast_2d(dx)
    dv = np.atleast_2d(dv)
    m, d = dx.shape
    ks = image_offsets(d, k_max)                      # (K, d)
    r = dx[:, None, :] + ks[None, :, :]               # (m, K, d)
    a = np.einsum("ij,ij->i", dv, dv)                 # |dv|^2, (m,)
    b = np.einsum("mkd,md->mk", r, dv)                # r . dv
    c = np.einsum("mkd,mkd->mk", r, r) - eps * eps
    with np.errstate(invalid="ignore", divide="ignore"):
        disc = b * b - a[:, None] * c
        ok = (disc > 0.0) & (a[:, None] > 0.0)
        sqrt_disc = np.sqrt(np.where(ok, disc, 0.0))
        t_root = np.where(ok, (-b - sqrt_disc) / np.where(a[:, None] > 0, a[:, None], 1.0), np.inf)
    # allow a hair of negative root so pairs overlapping by rounding still collide
    t_root = np.where((t_root > -DIST_TOL) & (t_root <= window), np.maximum(t_root, 0.0), np.inf)
    k_best = np.argmin(t_root, axis=1)
    t_best = t_root[np.arange(m), k_best]
    r_best = r[np.arange(m), k_best, :]
    hit = np.isfinite(t_best)
    # one Newton polish: the root formula cancels badly for long flights
    contact = r_best + np.where(hit, t_best, 0.0)[:, None] * dv
    with np.errstate(invalid="ignore", divide="ignore"):
        slope = 2.0 * np.einsum("md,md->m", contact, dv)
        resid = np.einsum("md,md->m", contact, contact) - eps * eps
        corr = np.where(hit & (np.abs(slope) > 0), resid / np.where(slope != 0, slope, 1.0), 0.0)
    t_best = np.where(hit, t_best - corr, t_best)
    contact = r_best + np.where(hit, t_best, 0.0)[:, None] * dv
    with np.errstate(invalid="ignore", divide="ignore"):
        norm = np.linalg.norm(contact, axis=-1)
        nu = -contact / np.where(norm > 0, norm, 1.0)[:, None]
    return t_best, nu


def pair_collision_time(
    z1: ParticleState, z2: ParticleState, eps: float, t_max: float
) -> ContactResult:
    """Smallest t in (0, t_max] with torus distance eps and approach.

    Searches every periodic image reachable within the horizon
    (integer offsets bounded by ceil(|dv| t_max + 1) per axis).
    """
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    dx = minimal_image(z1.x, z2.x)
    dv = z1.v - z2.v
    if np.linalg.norm(dx) < eps - DIST_TOL:
        raise InitialOverlap(f"initial torus distance {np.linalg.norm(dx)} < eps")
    k_max = int(np.ceil(np.linalg.norm(dv) * t_max + 1.0))
    t, nu = first_contact_batch(dx[None, :], dv[None, :], eps, t_max, k_max)
    if not np.isfinite(t[0]):
        return ContactResult(None, None)
    return ContactResult(float(t[0]), nu[0])


def scatter(
    v_i: np.ndarray, v_j: np.ndarray, nu: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Elastic hard-sphere scattering with impact direction nu (i -> j).

    v_i' = v_i - [(v_i - v_j) . nu] nu,  v_j' = v_j + [(v_i - v_j) . nu] nu.
    Momentum and energy are conserved; the map is an involution.
    """
    nu = np.asarray(nu, dtype=float)
    norm = np.linalg.norm(nu)
    if abs(norm - 1.0) > UNIT_TOL:
        raise NonUnitNormal(f"|nu| = {norm}")
    q = float(np.dot(v_i - v_j, nu))
    return v_i - q * nu, v_j + q * nu
