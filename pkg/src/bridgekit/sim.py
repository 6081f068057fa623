"""SDE/ODE integration for learned and analytic drift fields.

The integrator is explicit Euler-Maruyama on a uniform time grid,
x_{k+1} = x_k + f(t_k, x_k) dt + sigma sqrt(|dt|) z_k, with dt signed so
the same rule runs the clock in either direction.  Reverse-time fields
are specified as displacement per unit of decreasing time (the natural
reading of a backward drift), and the reverse helpers apply the sign
internally so callers never negate by hand.

Noise is drawn from one Philox substream per trajectory, keyed by
(stream seed, row index), so results do not depend on batch size,
chunking, or thread count.
"""
from __future__ import annotations

import dataclasses
from typing import Callable, Sequence

import numpy as np

from .core import SampleBatch
from .coupling import Coupling
from .errors import DomainError, IntegrationError, ShapeError

DriftFn = Callable[[float, np.ndarray], np.ndarray]

# rows simulated per chunk; bounds the noise buffer to chunk*steps*dim floats
CHUNK_ROWS = 4096


@dataclasses.dataclass(frozen=True)
class TimeGrid:
    """Uniform grid from t_start to t_end; t_end < t_start runs backward."""

    n_steps: int
    t_start: float = 0.0
    t_end: float = 1.0

    def __post_init__(self):
        if self.n_steps < 1:
            raise DomainError(f"n_steps must be >= 1, got {self.n_steps}")
        for name, value in (("t_start", self.t_start), ("t_end", self.t_end)):
            if not 0.0 <= value <= 1.0:
                raise DomainError(f"{name}={value} outside [0, 1]")
        if self.t_start == self.t_end:
            raise DomainError("t_start and t_end coincide")

    @property
    def dt(self) -> float:
        return (self.t_end - self.t_start) / self.n_steps

    def times(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(self.n_steps + 1)


@dataclasses.dataclass
class Trajectory:
    """One path: times (k+1,) and states (k+1, d)."""

    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        s = np.asarray(self.states, dtype=np.float64)
        if t.ndim != 1 or s.ndim != 2 or s.shape[0] != t.shape[0]:
            raise ShapeError(f"times {t.shape} and states {s.shape} do not align")
        steps = np.diff(t)
        if steps.size and (np.any(steps > 0) and np.any(steps < 0)):
            raise DomainError("times must be monotone")
        self.times, self.states = t, s


def euler_maruyama(drift_fn: DriftFn, x_init, sigma: float, grid: TimeGrid,
                   rng: np.random.Generator) -> Trajectory:
    """Integrate one trajectory; raises IntegrationError naming the first
    step that produced a non-finite state."""
    x = np.asarray(x_init, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"x_init must be 1-d, got shape {x.shape}")
    if sigma < 0:
        raise DomainError(f"sigma must be >= 0, got {sigma}")
    times = grid.times()
    dt = grid.dt
    root = np.sqrt(abs(dt))
    states = np.empty((grid.n_steps + 1, x.shape[0]))
    states[0] = x
    for k in range(grid.n_steps):
        drift = np.asarray(drift_fn(float(times[k]), states[k][None, :]))[0]
        states[k + 1] = states[k] + drift * dt + sigma * root * rng.standard_normal(x.shape[0])
        if not np.all(np.isfinite(states[k + 1])):
            raise IntegrationError(f"non-finite state at step {k}", step=k)
    return Trajectory(times, states)


def _row_noise(seed_seq: np.random.SeedSequence, row: int, n_steps: int,
               dim: int) -> np.ndarray:
    child = np.random.SeedSequence(entropy=seed_seq.entropy,
                                   spawn_key=tuple(seed_seq.spawn_key) + (row,))
    return np.random.Generator(np.random.Philox(child)).standard_normal((n_steps, dim))


def _resolve_stream(rng) -> np.random.SeedSequence:
    if isinstance(rng, np.random.SeedSequence):
        return rng
    if isinstance(rng, np.random.Generator):
        # derive a child stream; per-row keys hang off it
        return rng.bit_generator.seed_seq.spawn(1)[0]
    return np.random.SeedSequence(int(rng))


def simulate_batch(drift_fn: DriftFn, x_init: np.ndarray, sigma: float,
                   grid: TimeGrid, rng, return_trajectories: bool = False
                   ) -> np.ndarray | tuple[np.ndarray, np.ndarray]:
    """Integrate every row of x_init under a batched drift field.

    ``rng`` may be an int seed, a SeedSequence, or a Generator; row i's
    noise depends only on that stream identity and i.  With
    return_trajectories=True also returns states of shape
    (n, n_steps + 1, d).
    """
    x = np.asarray(x_init, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"x_init must be (n, d), got shape {x.shape}")
    if sigma < 0:
        raise DomainError(f"sigma must be >= 0, got {sigma}")
    stream = _resolve_stream(rng)
    n, d = x.shape
    times = grid.times()
    dt = grid.dt
    root = np.sqrt(abs(dt))
    terminal = np.empty_like(x)
    paths = np.empty((n, grid.n_steps + 1, d)) if return_trajectories else None
    for lo in range(0, n, CHUNK_ROWS):
        hi = min(lo + CHUNK_ROWS, n)
        cur = x[lo:hi].copy()
        if sigma > 0:
            noise = np.empty((hi - lo, grid.n_steps, d))
            for row in range(lo, hi):
                noise[row - lo] = _row_noise(stream, row, grid.n_steps, d)
        if return_trajectories:
            paths[lo:hi, 0] = cur
        for k in range(grid.n_steps):
            cur += np.asarray(drift_fn(float(times[k]), cur)) * dt
            if sigma > 0:
                cur += sigma * root * noise[:, k, :]
            bad = ~np.isfinite(cur).all(axis=1)
            if bad.any():
                raise IntegrationError(
                    f"non-finite state at step {k} in rows {np.flatnonzero(bad)[:5]}",
                    step=k)
            if return_trajectories:
                paths[lo:hi, k + 1] = cur
        terminal[lo:hi] = cur
    if return_trajectories:
        return terminal, paths
    return terminal


def reverse_grid(n_steps: int) -> TimeGrid:
    return TimeGrid(n_steps=n_steps, t_start=1.0, t_end=0.0)


def _oriented(drift_fn: DriftFn, grid: TimeGrid) -> DriftFn:
    # backward drifts mean displacement per unit of decreasing time; the
    # signed-dt update then needs the opposite sign
    if grid.dt > 0:
        return drift_fn
    return lambda t, xs: -np.asarray(drift_fn(t, xs))


def simulate_endpoints(drift_fn: DriftFn, x_init: np.ndarray, sigma: float,
                       n_steps: int, rng, direction: str = "forward") -> np.ndarray:
    """Push rows to the opposite boundary; direction 'forward' integrates
    t: 0 -> 1, 'reverse' integrates t: 1 -> 0 with a backward drift."""
    if direction == "forward":
        grid = TimeGrid(n_steps=n_steps)
    elif direction == "reverse":
        grid = reverse_grid(n_steps)
    else:
        raise DomainError(f"direction must be 'forward' or 'reverse', got {direction!r}")
    return simulate_batch(_oriented(drift_fn, grid), x_init, sigma, grid, rng)


def model_coupling(drift_fn: DriftFn, source: SampleBatch, sigma: float,
                   n_steps: int, rng, direction: str = "forward") -> Coupling:
    """Pair each source point with its simulated terminal point.

    Forward runs from pi0 and pairs (source, terminal); reverse runs from
    pi1 and pairs (terminal, source).  Mass is 1/n on the diagonal.
    """
    if source.weights is not None:
        raise DomainError("model_coupling requires a uniform source batch")
    terminal = simulate_endpoints(drift_fn, source.points, sigma, n_steps, rng, direction)
    n = source.n
    mass = np.eye(n) / n
    if direction == "forward":
        return Coupling(source, SampleBatch(terminal), mass, "model_induced")
    return Coupling(SampleBatch(terminal), source, mass, "model_induced")


def export_trajectories_csv(path, times: np.ndarray, states: np.ndarray) -> None:
    """Write (n, k+1, d) trajectory states as traj_id,t,x_0,...,x_{d-1} rows."""
    states = np.asarray(states)
    if states.ndim != 3:
        raise ShapeError(f"states must be (n, k+1, d), got {states.shape}")
    n, k1, d = states.shape
    if times.shape != (k1,):
        raise ShapeError(f"times shape {times.shape} does not match {k1} samples")
    header = "traj_id,t," + ",".join(f"x_{j}" for j in range(d))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(header + "\n")
        for i in range(n):
            for k in range(k1):
                cells = ",".join(f"{v:.9g}" for v in states[i, k])
                fh.write(f"{i},{times[k]:.9g},{cells}\n")
