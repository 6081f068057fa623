"""Metrics and ground-truth oracles.

energy_distance is the workhorse two-sample statistic; the acceptance
threshold convention for "same distribution" is mean + 3 std of the
distance between two disjoint same-size draws from the target, repeated
20 times (same_distribution_baseline).

marginal_drift_oracle and gaussian_eot_oracle are numerical ground
truths: the first evaluates the exact posterior-weighted conditional
drift for a small discrete coupling, the second solves the 1D Gaussian
entropic OT problem by dense-grid Sinkhorn.  Both exist so that learned
quantities can be checked against something that does not share code
with the learner.
"""
from __future__ import annotations

import csv
import dataclasses

import numpy as np
from scipy.spatial.distance import cdist

from .core import (
    ConditionalDrift,
    PinnedPathSpec,
    SampleBatch,
    eval_conditional_drift_batch,
    sample_pinned_batch,
)
from .coupling import Coupling, sample_pairs, sinkhorn_coupling
from .errors import DensityUnderflowError, DomainError, ShapeError
from .sim import TimeGrid, simulate_batch

MAX_DOUBLE_SUM = 4096
# below this log-density the posterior weights are numerically zero
LOG_UNDERFLOW = float(np.log(np.finfo(np.float64).tiny))


@dataclasses.dataclass(frozen=True)
class MetricRecord:
    name: str
    iteration: int
    value: float
    std_error: float | None = None

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise DomainError(f"metric {self.name!r} has non-finite value {self.value}")


def write_metrics_csv(path, records) -> None:
    """CSV schema: iteration,name,value,std_error (std_error may be empty)."""
    with open(path, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iteration", "name", "value", "std_error"])
        for rec in records:
            err = "" if rec.std_error is None else format(rec.std_error, ".10g")
            writer.writerow([rec.iteration, rec.name, format(rec.value, ".10g"), err])


def read_metrics_csv(path) -> list[MetricRecord]:
    records = []
    with open(path, encoding="ascii", newline="") as fh:
        for row in csv.DictReader(fh):
            err = row["std_error"]
            records.append(MetricRecord(row["name"], int(row["iteration"]),
                                        float(row["value"]),
                                        None if err == "" else float(err)))
    return records


def energy_distance(a: SampleBatch, b: SampleBatch) -> float:
    """2 E||A-B|| - E||A-A'|| - E||B-B'|| over full double sums."""
    if a.n == 0 or b.n == 0:
        raise DomainError("energy distance needs non-empty batches")
    if a.dim != b.dim:
        raise ShapeError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if max(a.n, b.n) > MAX_DOUBLE_SUM:
        raise DomainError(f"batch too large for exact double sums (> {MAX_DOUBLE_SUM})")
    cross = cdist(a.points, b.points).mean()
    within_a = cdist(a.points, a.points).mean()
    within_b = cdist(b.points, b.points).mean()
    return 2.0 * cross - within_a - within_b


def same_distribution_baseline(sampler, n: int, rng: np.random.Generator,
                               reps: int = 20) -> float:
    """mean + 3 std of energy_distance between disjoint same-size draws."""
    if reps < 2:
        raise DomainError(f"need reps >= 2, got {reps}")
    vals = np.empty(reps)
    for i in range(reps):
        vals[i] = energy_distance(SampleBatch(np.asarray(sampler(n, rng), dtype=np.float64)),
                                  SampleBatch(np.asarray(sampler(n, rng), dtype=np.float64)))
    return float(vals.mean() + 3.0 * vals.std())


def marginal_drift_oracle(coupling: Coupling, pinned: PinnedPathSpec,
                          drift: ConditionalDrift, t: float, x) -> np.ndarray:
    """Exact conditional-expectation drift at (t, x) for a discrete coupling.

    Responsibilities r_k are proportional to mass_k times the Gaussian
    density of x under pair k's pinned marginal, computed in log space
    with max subtraction.  Raises DensityUnderflowError when every pair's
    density underflows: the query point is out of support.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"x must be a vector, got shape {x.shape}")
    rows, cols = np.nonzero(coupling.mass > 0.0)
    if rows.size > 10_000:
        raise DomainError(f"coupling support too large ({rows.size} pairs)")
    x0 = coupling.batch0.points[rows]
    x1 = coupling.batch1.points[cols]
    masses = coupling.mass[rows, cols]
    d = x.shape[0]
    ts = np.full(rows.size, float(t))
    gamma = pinned.std(float(t))
    if gamma <= 0.0:
        raise DomainError(f"pinned std must be positive at t={t}, got {gamma}")
    weights = pinned.mean_weights(float(t))
    mu = weights[0] * x0 + weights[1] * x1
    log_resp = (np.log(masses)
                - 0.5 * np.sum((x[None, :] - mu) ** 2, axis=1) / gamma**2
                - d * np.log(gamma) - 0.5 * d * np.log(2.0 * np.pi))
    peak = log_resp.max()
    if peak < LOG_UNDERFLOW:
        raise DensityUnderflowError(
            f"all pair densities underflow at t={t}; query an in-support point")
    resp = np.exp(log_resp - peak)
    resp /= resp.sum()
    drifts = eval_conditional_drift_batch(drift, np.broadcast_to(x, (rows.size, d)),
                                          x0, x1, ts)
    return resp @ drifts


@dataclasses.dataclass(frozen=True)
class PlanMoments:
    mean0: float
    mean1: float
    var0: float
    var1: float
    cov01: float


def gaussian_eot_oracle(mean0: float, var0: float, mean1: float, var1: float,
                        sigma_ref: float, n_grid: int = 512, span: float = 6.0,
                        tol: float = 1e-10, max_iter: int = 200_000
                        ) -> tuple[float, PlanMoments]:
    """Entropic-OT plan moments between two 1D Gaussians, eps = 2 sigma_ref^2.

    Dense-grid Sinkhorn on +-span standard deviations with >= 512 nodes
    per marginal.  A numerical oracle: no closed form is used anywhere.
    """
    if var0 <= 0 or var1 <= 0:
        raise DomainError(f"variances must be positive, got {var0}, {var1}")
    if n_grid < 512:
        raise DomainError(f"oracle needs >= 512 grid points, got {n_grid}")

    def grid_and_weights(mean, var):
        std = np.sqrt(var)
        xs = np.linspace(mean - span * std, mean + span * std, n_grid)
        w = np.exp(-0.5 * ((xs - mean) / std) ** 2)
        return xs[:, None], w / w.sum()

    g0, w0 = grid_and_weights(mean0, var0)
    g1, w1 = grid_and_weights(mean1, var1)
    plan = sinkhorn_coupling(SampleBatch(g0, w0), SampleBatch(g1, w1),
                             sigma_ref=sigma_ref, tol=tol, max_iter=max_iter)
    m = plan.mass
    x0 = g0[:, 0]
    x1 = g1[:, 0]
    m0 = float(m.sum(axis=1) @ x0)
    m1 = float(m.sum(axis=0) @ x1)
    v0 = float(m.sum(axis=1) @ (x0 - m0) ** 2)
    v1 = float(m.sum(axis=0) @ (x1 - m1) ** 2)
    cov = float((x0 - m0) @ m @ (x1 - m1))
    return cov, PlanMoments(m0, m1, v0, v1, cov)


def _as_drift_fn(net):
    return net.drift_fn() if hasattr(net, "drift_fn") else net


def path_kinetic_energy(net, source: SampleBatch, sigma_ref: float,
                        grid: TimeGrid, rng, return_std_error: bool = False):
    """MC estimate of E[sum_k ||v(t_k, x_k)||^2 dt / (2 sigma_ref^2)] along
    trajectories of the learned SDE (sigma = sigma_ref)."""
    if sigma_ref <= 0:
        raise DomainError(f"sigma_ref must be positive, got {sigma_ref}")
    fn = _as_drift_fn(net)
    _, paths = simulate_batch(fn, source.points, sigma_ref, grid, rng,
                              return_trajectories=True)
    times = grid.times()
    dt = abs(grid.dt)
    per_traj = np.zeros(paths.shape[0])
    for k in range(grid.n_steps):
        v = np.asarray(fn(float(times[k]), paths[:, k, :]))
        per_traj += np.sum(v * v, axis=1) * dt
    per_traj /= 2.0 * sigma_ref**2
    est = float(per_traj.mean())
    if return_std_error:
        se = float(per_traj.std(ddof=1) / np.sqrt(per_traj.shape[0])) if per_traj.shape[0] > 1 else 0.0
        return est, se
    return est


def marginal_check(net, pinned: PinnedPathSpec, coupling: Coupling, sigma: float,
                   t_list, n: int, rng, iteration: int = 0,
                   n_steps: int = 200) -> list[MetricRecord]:
    """Energy distance between the learned SDE's marginal at each t and
    direct samples of the pinned mixture marginal."""
    fn = _as_drift_fn(net)
    records = []
    gen = rng
    for t in t_list:
        t = float(t)
        if not 0.0 < t <= 1.0:
            raise DomainError(f"marginal check times must lie in (0, 1], got {t}")
        x0, x1 = sample_pairs(coupling, n, gen)
        start = x0.copy()
        steps = max(1, int(round(n_steps * t)))
        sim_grid = TimeGrid(n_steps=steps, t_start=0.0, t_end=t)
        sim_out = simulate_batch(fn, start, sigma, sim_grid, gen)
        direct_pairs = sample_pairs(coupling, n, gen)
        ts = np.full(n, t)
        direct = sample_pinned_batch(pinned, direct_pairs[0], direct_pairs[1], ts, gen)
        ed = energy_distance(SampleBatch(sim_out), SampleBatch(direct))
        records.append(MetricRecord(f"marginal_ed_t{t:g}", iteration, ed))
    return records
