"""Event-driven simulation of N hard spheres on the unit torus.

The flow alternates exact free transport with elastic binary collisions.
Between collisions, tentative pair events live in a priority queue with
lazy invalidation: an entry stores the collision counts of both particles
at scheduling time and is discarded if either count has moved on.

Pair roots are found in closed form per periodic image. A global
"refresh" event rescans all pairs on a cadence short enough that only
the 3^d nearest images can produce a contact inside one window; pairs
touched by a collision are rescheduled immediately with a per-batch
image bound wide enough for the remaining window.
"""

from __future__ import annotations

import heapq
import io
import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .torus import (
    DIST_TOL,
    InitialOverlap,
    first_contact_batch,
    minimal_image,
    wrap,
)

GRAZING_TOL = 1e-9
SIMULTANEOUS_TOL = 1e-12
REFRESH_SAFETY = 0.45  # max fraction of a box a pair may close per window

GRAZING = "GrazingWithinTolerance"
SIMULTANEOUS = "SimultaneousEvents"
ACCUMULATION = "EventAccumulation"


class EventAccumulation(Exception):
    """Too many events in a vanishing window; carries the partial log."""

    def __init__(self, message, log=None, config=None):
        super().__init__(message)
        self.log = log
        self.config = config


@dataclass
class Configuration:
    """N hard spheres of diameter eps: positions (N,d) on the torus, velocities (N,d)."""

    x: np.ndarray
    v: np.ndarray
    eps: float
    check: bool = True

    def __post_init__(self):
        self.x = wrap(np.asarray(self.x, dtype=float).reshape(-1, self.dim_of(self.x)))
        self.v = np.asarray(self.v, dtype=float).reshape(self.x.shape)
        if self.check and self.n > 1:
            dmin = self.min_pair_distance()
            if dmin < self.eps - DIST_TOL:
                raise InitialOverlap(f"min pair distance {dmin} < eps = {self.eps}")

    @staticmethod
    def dim_of(arr) -> int:
        arr = np.asarray(arr)
        return arr.shape[-1] if arr.ndim > 1 else arr.shape[0]

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def min_pair_distance(self) -> float:
        if self.n < 2:
            return np.inf
        iu, ju = np.triu_indices(self.n, k=1)
        d = np.linalg.norm(minimal_image(self.x[iu], self.x[ju]), axis=-1)
        return float(d.min())

    def copy(self) -> "Configuration":
        return Configuration(self.x.copy(), self.v.copy(), self.eps, check=False)

    def to_json(self) -> str:
        """JSON array of per-particle [x..., v...] rows."""
        rows = np.concatenate([self.x, self.v], axis=1).tolist()
        return json.dumps({"eps": self.eps, "dim": self.dim, "particles": rows})

    @classmethod
    def from_json(cls, text: str) -> "Configuration":
        obj = json.loads(text)
        rows = np.asarray(obj["particles"], dtype=float)
        d = obj["dim"]
        return cls(rows[:, :d], rows[:, d:], obj["eps"])


@dataclass
class CollisionEvent:
    time: float
    pair: tuple[int, int]
    nu: np.ndarray
    pre_velocities: tuple[np.ndarray, np.ndarray]
    post_velocities: tuple[np.ndarray, np.ndarray]


@dataclass
class EventLog:
    events: list[CollisionEvent] = field(default_factory=list)
    t_final: float = 0.0
    pathology_flags: set[str] = field(default_factory=set)
    probes: list[tuple[float, np.ndarray, np.ndarray]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.events)

    def to_csv(self) -> str:
        """time,i,j,nu_*,vi_pre_*,vj_pre_*,vi_post_*,vj_post_* rows."""
        if self.events:
            d = self.events[0].nu.shape[0]
        else:
            d = 0
        cols = ["time", "i", "j"]
        for tag in ("nu", "vi_pre", "vj_pre", "vi_post", "vj_post"):
            cols += [f"{tag}_{k + 1}" for k in range(d)]
        buf = io.StringIO()
        buf.write(",".join(cols) + "\n")
        for ev in self.events:
            vals = [f"{ev.time:.17g}", str(ev.pair[0]), str(ev.pair[1])]
            for arr in (ev.nu, *ev.pre_velocities, *ev.post_velocities):
                vals += [f"{a:.17g}" for a in arr]
            buf.write(",".join(vals) + "\n")
        return buf.getvalue()


class _EventLoop:
    """Single-trajectory event queue; one instance per simulate() call."""

    def __init__(self, config: Configuration, k_max_events: int, w_min: float):
        self.x = config.x.copy()
        self.v = config.v.copy()
        self.eps = config.eps
        self.n, self.d = self.x.shape
        self.t = 0.0
        self.stamps = np.zeros(self.n, dtype=np.int64)
        self.heap: list[tuple] = []
        self.log = EventLog()
        self.k_max_events = k_max_events
        self.w_min = w_min
        self.recent = deque(maxlen=k_max_events)
        self.t_refresh = 0.0

    def advance(self, t_new: float):
        dt = t_new - self.t
        if dt != 0.0:
            self.x = wrap(self.x + dt * self.v)
        self.t = t_new

    def _push_pairs(self, iu: np.ndarray, ju: np.ndarray, window: float):
        if len(iu) == 0 or window <= 0:
            return
        dx = minimal_image(self.x[iu], self.x[ju])
        dv = self.v[iu] - self.v[ju]
        wmax = float(np.max(np.linalg.norm(dv, axis=-1))) if len(iu) else 0.0
        # any contact within the window satisfies |k_c| <= 1/2 + window*|dv| + eps
        k_img = int(np.ceil(window * wmax + self.eps + 0.5))
        times, _ = first_contact_batch(dx, dv, self.eps, window, k_img)
        hit = np.isfinite(times)
        for i, j, tc in zip(iu[hit], ju[hit], times[hit]):
            heapq.heappush(
                self.heap,
                (self.t + tc, int(i), int(j), int(self.stamps[i]), int(self.stamps[j])),
            )

    def schedule_all(self, window: float):
        if self.n < 2:
            return
        iu, ju = np.triu_indices(self.n, k=1)
        self._push_pairs(iu, ju, window)

    def schedule_touching(self, i: int, j: int, window: float):
        others = np.array([k for k in range(self.n) if k not in (i, j)], dtype=int)
        iu = np.concatenate([np.minimum(others, i), np.minimum(others, j), [min(i, j)]])
        ju = np.concatenate([np.maximum(others, i), np.maximum(others, j), [max(i, j)]])
        self._push_pairs(iu, ju, window)

    def refresh_window(self) -> float:
        vmax = float(np.max(np.linalg.norm(self.v, axis=-1))) if self.n else 0.0
        return REFRESH_SAFETY / (2.0 * vmax) if vmax > 0 else np.inf

    def collide(self, i: int, j: int):
        r = minimal_image(self.x[j], self.x[i])
        nu = r / np.linalg.norm(r)
        q = float(np.dot(self.v[i] - self.v[j], nu))
        if abs(q) < GRAZING_TOL:
            self.log.pathology_flags.add(GRAZING)
        pre = (self.v[i].copy(), self.v[j].copy())
        self.v[i] = self.v[i] - q * nu
        self.v[j] = self.v[j] + q * nu
        self.stamps[i] += 1
        self.stamps[j] += 1
        self.log.events.append(
            CollisionEvent(self.t, (i, j), nu, pre, (self.v[i].copy(), self.v[j].copy()))
        )
        self.recent.append(self.t)
        if (
            len(self.recent) == self.k_max_events
            and self.recent[-1] - self.recent[0] < self.w_min
        ):
            self.log.pathology_flags.add(ACCUMULATION)
            raise EventAccumulation(
                f"{self.k_max_events} events within {self.w_min}",
                log=self.log,
                config=Configuration(self.x, self.v, self.eps, check=False),
            )

    def run(self, t_final: float, probe_times=()):
        probe_iter = iter(sorted(probe_times))
        next_probe = next(probe_iter, None)
        last_event_t = -np.inf
        if self.n >= 2:
            self.t_refresh = min(self.refresh_window(), t_final)
            self.schedule_all(self.t_refresh)
        else:
            self.t_refresh = np.inf
        while True:
            t_event = self.heap[0][0] if self.heap else np.inf
            t_next = min(t_event, self.t_refresh)
            while next_probe is not None and next_probe <= min(t_next, t_final):
                self.advance(next_probe)
                self.log.probes.append((self.t, self.x.copy(), self.v.copy()))
                next_probe = next(probe_iter, None)
            if t_next >= t_final:
                break
            if self.t_refresh <= t_event:
                self.advance(self.t_refresh)
                self.heap.clear()
                self.t_refresh = min(self.t + self.refresh_window(), t_final)
                self.schedule_all(self.t_refresh - self.t)
                continue
            t_ev, i, j, si, sj = heapq.heappop(self.heap)
            if self.stamps[i] != si or self.stamps[j] != sj:
                continue
            self.advance(t_ev)
            if abs(t_ev - last_event_t) <= SIMULTANEOUS_TOL:
                self.log.pathology_flags.add(SIMULTANEOUS)
            last_event_t = t_ev
            self.collide(i, j)
            self.schedule_touching(i, j, self.t_refresh - self.t)
        self.advance(t_final)
        self.log.t_final = t_final


def simulate(
    config: Configuration,
    t_final: float,
    probe_times=(),
    k_max_events: int = 10_000,
    w_min: float = 1e-9,
) -> tuple[Configuration, EventLog]:
    """Run the hard-sphere flow for time t_final > 0.

    Returns the final configuration and the time-ordered event log.
    Raises InitialOverlap on an inadmissible start and EventAccumulation
    (with partial log attached) if more than k_max_events land in any
    window of length w_min.
    """
    if t_final <= 0:
        raise ValueError("t_final must be positive")
    if config.n > 1 and config.min_pair_distance() < config.eps - DIST_TOL:
        raise InitialOverlap("configuration violates hard-core exclusion")
    loop = _EventLoop(config, k_max_events, w_min)
    loop.run(t_final, probe_times)
    final = Configuration(loop.x, loop.v, config.eps, check=False)
    return final, loop.log


def reverse_velocities(config: Configuration) -> Configuration:
    """Flip every velocity; positions unchanged."""
    return Configuration(config.x.copy(), -config.v, config.eps, check=False)


def flow_backward(
    config: Configuration, t: float, return_log: bool = False
):
    """Hard-sphere flow run backward for time t > 0.

    Equals reverse_velocities . simulate(t) . reverse_velocities; the
    optional log reports events of the reversed run (times measured
    forward along the reversed trajectory).
    """
    if t <= 0:
        raise ValueError("t must be positive")
    rev = reverse_velocities(config)
    final, log = simulate(rev, t)
    out = reverse_velocities(final)
    return (out, log) if return_log else out


def first_collision(
    config: Configuration, t_max: float
) -> tuple[float, int, int, np.ndarray] | None:
    """First contact of the flow within t_max: (time, i, j, nu), or None.

    Before any collision the hard-sphere flow is free, so one vectorized
    root solve over all pairs and reachable images is exact.
    """
    if config.n < 2:
        return None
    iu, ju = np.triu_indices(config.n, k=1)
    dx = minimal_image(config.x[iu], config.x[ju])
    dv = config.v[iu] - config.v[ju]
    wmax = float(np.max(np.linalg.norm(dv, axis=-1)))
    k_img = int(np.ceil(t_max * wmax + config.eps + 0.5))
    times, nus = first_contact_batch(dx, dv, config.eps, t_max, k_img)
    k = int(np.argmin(times))
    if not np.isfinite(times[k]):
        return None
    return float(times[k]), int(iu[k]), int(ju[k]), nus[k]


def first_collision_time(config: Configuration, t_max: float) -> float:
    """Time of the first contact of the flow, or +inf beyond t_max."""
    hit = first_collision(config, t_max)
    return np.inf if hit is None else hit[0]
