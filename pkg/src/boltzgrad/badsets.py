"""One-sided bad sets of free-flow near-contacts, and their measures.

A configuration of n particles (velocities confined to the ball of
radius R) is "bad" for the forward (+) direction if some pair, moved by
the free flow x +- u v over u in [0, T], comes within eps0 in torus
distance; the minus sign probes the backward flow. Membership is exact:
the distance minimum is a clamped quadratic per periodic image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .torus import image_offsets, minimal_image

_SIGNS = {"plus": 1.0, "minus": -1.0}


class VelocityOutOfRange(Exception):
    """A velocity lies outside the ball B_R of the spec."""


class BadBaseConfiguration(Exception):
    """The base configuration fails the good-set precondition."""


@dataclass
class BadSetSpec:
    n: int
    eps0: float
    R: float
    T: float
    sign: str  # 'plus' or 'minus'

    def __post_init__(self):
        if self.eps0 <= 0 or self.R <= 0 or self.T <= 0:
            raise ValueError("eps0, R, T must be positive")
        if self.sign not in _SIGNS:
            raise ValueError("sign must be 'plus' or 'minus'")


@dataclass
class MeasureEstimate:
    fraction: float
    stderr: float
    samples: int
    spec: BadSetSpec | None = None


def _as_arrays(z) -> tuple[np.ndarray, np.ndarray]:
    if hasattr(z, "x") and hasattr(z, "v"):
        return np.asarray(z.x, float), np.asarray(z.v, float)
    x, v = z
    return np.asarray(x, float), np.asarray(v, float)


def min_flow_distance(
    x: np.ndarray,
    v: np.ndarray,
    T: float,
    sign: float,
    dist_cap: float,
    u_min: float = 0.0,
    moving_only: bool = False,
    pairs: tuple[np.ndarray, np.ndarray] | None = None,
) -> np.ndarray:
    """Per-sample min over pairs, images, u in [u_min, T] of |dx + sign*u*dv|.

    x, v: (m, n, d). Values above dist_cap may be overestimated (the
    image search is sized so that any true minimum below dist_cap is
    found). ``moving_only`` ignores pairs with zero relative velocity.
    """
    x = np.asarray(x, float)
    v = np.asarray(v, float)
    if x.ndim == 2:
        x, v = x[None], v[None]
    m, n, d = x.shape
    if n < 2:
        return np.full(m, np.inf)
    if pairs is None:
        iu, ju = np.triu_indices(n, k=1)
    else:
        iu, ju = pairs
    dx = minimal_image(x[:, iu, :], x[:, ju, :])          # (m, P, d)
    w = sign * (v[:, iu, :] - v[:, ju, :])                # (m, P, d)
    wmax = float(np.max(np.linalg.norm(w, axis=-1), initial=0.0))
    k_img = int(np.ceil(T * wmax + dist_cap + 0.5))
    ks = image_offsets(d, k_img)                          # (K, d)
    r = dx[:, :, None, :] + ks[None, None, :, :]          # (m, P, K, d)
    a = np.einsum("mpd,mpd->mp", w, w)                    # |w|^2
    b = np.einsum("mpkd,mpd->mpk", r, w)                  # r . w
    c = np.einsum("mpkd,mpkd->mpk", r, r)                 # |r|^2
    with np.errstate(invalid="ignore", divide="ignore"):
        u_star = np.where(a[:, :, None] > 0, -b / a[:, :, None], 0.0)
    u_star = np.clip(u_star, u_min, T)
    dist2 = c + 2.0 * u_star * b + u_star**2 * a[:, :, None]
    dist2 = np.maximum(dist2, 0.0)
    if moving_only:
        still = a <= 0.0
        dist2 = np.where(still[:, :, None], np.inf, dist2)
    return np.sqrt(dist2.min(axis=(1, 2)))


def in_bad_set(z, spec: BadSetSpec) -> bool:
    """Whether the configuration meets an eps0 free-flow near-contact."""
    x, v = _as_arrays(z)
    speeds = np.linalg.norm(v, axis=-1)
    if np.any(speeds > spec.R * (1 + 1e-12)):
        raise VelocityOutOfRange(f"max speed {speeds.max()} exceeds R = {spec.R}")
    dmin = min_flow_distance(x, v, spec.T, _SIGNS[spec.sign], spec.eps0)
    return bool(dmin[0] <= spec.eps0)


def uniform_ball(rng: np.random.Generator, shape: tuple, R: float) -> np.ndarray:
    """Uniform draws from the ball of radius R; shape = (..., d)."""
    d = shape[-1]
    g = rng.standard_normal(shape)
    g /= np.linalg.norm(g, axis=-1, keepdims=True)
    radius = R * rng.random(shape[:-1]) ** (1.0 / d)
    return g * radius[..., None]


def sample_min_distances(
    spec: BadSetSpec,
    dim: int,
    samples: int,
    rng: np.random.Generator,
    dist_cap: float | None = None,
    chunk: int = 20_000,
) -> np.ndarray:
    """Min flow distances for iid uniform draws on (T^d x B_R)^n."""
    cap = spec.eps0 if dist_cap is None else dist_cap
    out = np.empty(samples)
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        x = rng.random((m, spec.n, dim))
        v = uniform_ball(rng, (m, spec.n, dim), spec.R)
        out[done : done + m] = min_flow_distance(x, v, spec.T, _SIGNS[spec.sign], cap)
        done += m
    return out


def estimate_measure(
    spec: BadSetSpec,
    dim: int,
    samples: int,
    rng: np.random.Generator,
) -> MeasureEstimate:
    """Monte Carlo fraction of uniform (T^d x B_R)^n draws in the set."""
    d = sample_min_distances(spec, dim, samples, rng)
    frac = float(np.mean(d <= spec.eps0))
    stderr = float(np.sqrt(frac * (1 - frac) / samples))
    return MeasureEstimate(frac, stderr, samples, spec)


def estimate_intersection(
    spec: BadSetSpec, dim: int, samples: int, rng: np.random.Generator
) -> MeasureEstimate:
    """Fraction of draws in both the plus and the minus set."""
    out = np.empty(samples, dtype=bool)
    done = 0
    chunk = 20_000
    while done < samples:
        m = min(chunk, samples - done)
        x = rng.random((m, spec.n, dim))
        v = uniform_ball(rng, (m, spec.n, dim), spec.R)
        dp = min_flow_distance(x, v, spec.T, +1.0, spec.eps0)
        dm = min_flow_distance(x, v, spec.T, -1.0, spec.eps0)
        out[done : done + m] = (dp <= spec.eps0) & (dm <= spec.eps0)
        done += m
    frac = float(np.mean(out))
    return MeasureEstimate(frac, float(np.sqrt(frac * (1 - frac) / samples)), samples, spec)


def monotonicity_check(
    eps0_list,
    spec: BadSetSpec,
    dim: int,
    samples: int,
    rng: np.random.Generator,
) -> tuple[bool, list[MeasureEstimate]]:
    """Estimated fractions must be nondecreasing in eps0 (3 stderr slack).

    All radii share one sample of min distances, so the pointwise
    nesting of the sets makes the estimates exactly monotone; the
    3-stderr slack only matters if callers pass independent estimates.
    """
    eps0_list = sorted(eps0_list)
    dmin = sample_min_distances(spec, dim, samples, rng, dist_cap=max(eps0_list))
    estimates = []
    for e0 in eps0_list:
        frac = float(np.mean(dmin <= e0))
        sub = BadSetSpec(spec.n, e0, spec.R, spec.T, spec.sign)
        estimates.append(
            MeasureEstimate(frac, float(np.sqrt(frac * (1 - frac) / samples)), samples, sub)
        )
    ok = all(
        b.fraction >= a.fraction - 3.0 * (a.stderr + b.stderr)
        for a, b in zip(estimates, estimates[1:])
    )
    return ok, estimates


def estimate_recollision_probability(
    z_base,
    m_k: int,
    eps: float,
    eps0: float,
    delta: float,
    R: float,
    horizon: float,
    samples: int,
    rng: np.random.Generator,
    channel: str = "both",
) -> MeasureEstimate:
    """Measure of adjunction parameters spoiling a good configuration.

    A particle with velocity uniform on B_R is adjoined at distance eps
    from particle m_k in the impact direction nu (uniform on the
    sphere), scattered when post-collisional. The draw counts as bad if
    the backward free flow over [0, horizon] produces an eps-contact
    (a recollision), or if some moving pair is still within eps0/2
    during [delta, horizon] (the configuration failed to return to the
    good set). The base configuration must itself be good.

    channel selects 'recollision', 'departure', or 'both' (default).
    The recollision channel alone scales with eps at fixed eps0; the
    departure channel is eps-independent.
    """
    x0, v0 = _as_arrays(z_base)
    k, d = x0.shape
    base_min = min_flow_distance(x0, v0, horizon, -1.0, eps0)
    if k >= 2 and base_min[0] <= eps0:
        raise BadBaseConfiguration("base configuration lies in the backward bad set")
    if not 0 <= m_k < k:
        raise ValueError("m_k out of range")

    nu = rng.standard_normal((samples, d))
    nu /= np.linalg.norm(nu, axis=-1, keepdims=True)
    v_new = uniform_ball(rng, (samples, d), R)

    x = np.broadcast_to(x0, (samples, k, d)).copy()
    v = np.broadcast_to(v0, (samples, k, d)).copy()
    x_new = np.mod(x0[m_k] + eps * nu, 1.0)
    q = np.einsum("md,md->m", v_new - v0[m_k], nu)
    post = q > 0
    # scattering law: parent and newcomer exchange the normal component
    v_parent = np.where(post[:, None], v[:, m_k, :] + q[:, None] * nu, v[:, m_k, :])
    v_new_out = np.where(post[:, None], v_new - q[:, None] * nu, v_new)
    v[:, m_k, :] = v_parent
    x_full = np.concatenate([x, x_new[:, None, :]], axis=1)
    v_full = np.concatenate([v, v_new_out[:, None, :]], axis=1)

    # strict threshold: the adjoined pair starts at distance exactly eps and
    # separates backward, so only a genuine dip below contact counts
    recol = min_flow_distance(x_full, v_full, horizon, -1.0, eps) < eps * (1 - 1e-9)
    depart = (
        min_flow_distance(
            x_full, v_full, horizon, -1.0, eps0 / 2, u_min=delta, moving_only=True
        )
        <= eps0 / 2
    )
    if channel == "recollision":
        bad = recol
    elif channel == "departure":
        bad = depart
    else:
        bad = recol | depart
    frac = float(np.mean(bad))
    return MeasureEstimate(frac, float(np.sqrt(frac * (1 - frac) / samples)), samples, None)
