"""Pinned Gaussian paths between endpoint pairs and their bridge drifts.

A pinned path fixes, for every pair (x0, x1), the conditional law at time t
to N(a_t x0 + b_t x1, gamma_t^2 I).  Conditional drifts are vector fields
whose SDE (or ODE) reproduces those conditional marginals; they are the
regression targets of the training loop.
"""
from __future__ import annotations

import dataclasses
import math
from typing import Callable

import numpy as np

from .errors import DomainError, ShapeError

MeanSchedule = Callable[[float], tuple[float, float]]
StdSchedule = Callable[[float], float]

PATH_KINDS = ("linear_sigma_min", "brownian_bridge", "custom_schedule")
DRIFT_KINDS = ("constant_line", "sb_bridge", "doob_forward", "doob_reverse", "kinetic")

# central-difference step for schedules supplied as black-box callables
FD_STEP = 1e-6


def _as_points(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be a 1-d point, got shape {arr.shape}")
    return arr


def _check_time(t: float) -> float:
    t = float(t)
    if not 0.0 <= t <= 1.0 or math.isnan(t):
        raise DomainError(f"t={t} outside [0, 1]")
    return t


def _check_times(ts) -> np.ndarray:
    ts = np.atleast_1d(np.asarray(ts, dtype=np.float64))
    if ts.ndim != 1:
        raise ShapeError(f"times must be scalar or 1-d, got shape {ts.shape}")
    if np.any(~np.isfinite(ts)) or np.any(ts < 0.0) or np.any(ts > 1.0):
        raise DomainError("times must lie in [0, 1]")
    return ts


@dataclasses.dataclass(frozen=True)
class DiffusionConfig:
    """Scalar diffusion setup shared by a whole run.

    sigma is the coefficient actually simulated, sigma_ref the reference
    scale that bridges and entropic couplings are expressed in.  sigma=0
    is the ODE case.
    """

    sigma: float
    sigma_ref: float = 1.0
    dim: int = 1

    def __post_init__(self):
        if self.sigma < 0:
            raise DomainError(f"sigma must be >= 0, got {self.sigma}")
        if self.sigma_ref <= 0:
            raise DomainError(f"sigma_ref must be > 0, got {self.sigma_ref}")
        if self.dim < 1:
            raise DomainError(f"dim must be >= 1, got {self.dim}")


@dataclasses.dataclass
class SampleBatch:
    """Weighted point cloud; weights default to uniform."""

    points: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ShapeError(f"points must be (n, d) with n >= 1, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise DomainError("points contain non-finite values")
        self.points = pts
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64)
            if w.shape != (pts.shape[0],):
                raise ShapeError(f"weights shape {w.shape} does not match n={pts.shape[0]}")
            if np.any(w < 0):
                raise DomainError("weights must be non-negative")
            if abs(w.sum() - 1.0) > 1e-12:
                raise DomainError(f"weights must sum to 1, got {w.sum()!r}")
            self.weights = w

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def effective_weights(self) -> np.ndarray:
        if self.weights is None:
            return np.full(self.n, 1.0 / self.n)
        return self.weights


@dataclasses.dataclass(frozen=True)
class PinnedPathSpec:
    """Schedules (a_t, b_t, gamma_t) of a pinned Gaussian path.

    Built-in kinds carry analytic derivatives; custom schedules fall back
    to central differences with step FD_STEP.
    """

    kind: str
    sigma_min: float = 0.01
    sigma_ref: float = 1.0
    mean_schedule: MeanSchedule | None = None
    std_schedule: StdSchedule | None = None

    def __post_init__(self):
        if self.kind not in PATH_KINDS:
            raise DomainError(f"unknown path kind {self.kind!r}, expected one of {PATH_KINDS}")
        if self.kind == "linear_sigma_min" and self.sigma_min < 0:
            raise DomainError(f"sigma_min must be >= 0, got {self.sigma_min}")
        if self.kind == "brownian_bridge" and self.sigma_ref <= 0:
            raise DomainError(f"sigma_ref must be > 0, got {self.sigma_ref}")
        if self.kind == "custom_schedule":
            if self.mean_schedule is None or self.std_schedule is None:
                raise DomainError("custom_schedule requires mean_schedule and std_schedule")
            a0, b0 = self.mean_schedule(0.0)
            a1, b1 = self.mean_schedule(1.0)
            if abs(a0 - 1.0) > 1e-9 or abs(b0) > 1e-9 or abs(a1) > 1e-9 or abs(b1 - 1.0) > 1e-9:
                raise DomainError(
                    "custom mean schedule must pin the endpoints: "
                    f"got (a,b)(0)=({a0}, {b0}), (a,b)(1)=({a1}, {b1})")
            for t in (0.0, 0.5, 1.0):
                g = float(self.std_schedule(t))
                if not math.isfinite(g) or g < 0:
                    raise DomainError(f"std schedule must be finite and >= 0, got {g} at t={t}")

    # -- schedule evaluation, vectorised over a 1-d time array --------------

    def mean_weights(self, ts) -> tuple[np.ndarray, np.ndarray]:
        ts = _check_times(ts)
        if self.kind in ("linear_sigma_min", "brownian_bridge"):
            return 1.0 - ts, ts.copy()
        a = np.empty_like(ts)
        b = np.empty_like(ts)
        for i, t in enumerate(ts):
            a[i], b[i] = self.mean_schedule(float(t))
        return a, b

    def std(self, ts) -> np.ndarray:
        ts = _check_times(ts)
        if self.kind == "linear_sigma_min":
            return np.full_like(ts, self.sigma_min)
        if self.kind == "brownian_bridge":
            return self.sigma_ref * np.sqrt(ts * (1.0 - ts))
        return np.array([float(self.std_schedule(float(t))) for t in ts])

    def d_mean_weights(self, ts) -> tuple[np.ndarray, np.ndarray]:
        ts = _check_times(ts)
        if self.kind in ("linear_sigma_min", "brownian_bridge"):
            return -np.ones_like(ts), np.ones_like(ts)
        a = np.empty_like(ts)
        b = np.empty_like(ts)
        for i, t in enumerate(ts):
            lo, hi = _fd_window(float(t))
            a_hi, b_hi = self.mean_schedule(hi)
            a_lo, b_lo = self.mean_schedule(lo)
            a[i] = (a_hi - a_lo) / (hi - lo)
            b[i] = (b_hi - b_lo) / (hi - lo)
        return a, b

    def d_std(self, ts) -> np.ndarray:
        ts = _check_times(ts)
        if self.kind == "linear_sigma_min":
            return np.zeros_like(ts)
        if self.kind == "brownian_bridge":
            # singular at the endpoints; callers clamp before asking
            return self.sigma_ref * (1.0 - 2.0 * ts) / (2.0 * np.sqrt(ts * (1.0 - ts)))
        out = np.empty_like(ts)
        for i, t in enumerate(ts):
            lo, hi = _fd_window(float(t))
            out[i] = (float(self.std_schedule(hi)) - float(self.std_schedule(lo))) / (hi - lo)
        return out


def _fd_window(t: float) -> tuple[float, float]:
    # keep the stencil inside [0, 1] near the endpoints
    lo = max(t - FD_STEP, 0.0)
    hi = min(t + FD_STEP, 1.0)
    return lo, hi


def linear_path(sigma_min: float = 0.01) -> PinnedPathSpec:
    return PinnedPathSpec(kind="linear_sigma_min", sigma_min=sigma_min)


def brownian_bridge_path(sigma_ref: float = 1.0) -> PinnedPathSpec:
    return PinnedPathSpec(kind="brownian_bridge", sigma_ref=sigma_ref)


def custom_path(mean_schedule: MeanSchedule, std_schedule: StdSchedule) -> PinnedPathSpec:
    return PinnedPathSpec(kind="custom_schedule",
                          mean_schedule=mean_schedule, std_schedule=std_schedule)


def pinned_mean_std(spec: PinnedPathSpec, x0, x1, t: float) -> tuple[np.ndarray, float]:
    """Conditional mean and std of the pinned path at time t for one pair."""
    x0 = _as_points(x0, "x0")
    x1 = _as_points(x1, "x1")
    if x0.shape != x1.shape:
        raise ShapeError(f"x0 and x1 disagree: {x0.shape} vs {x1.shape}")
    t = _check_time(t)
    a, b = spec.mean_weights(t)
    gamma = spec.std(t)
    return a[0] * x0 + b[0] * x1, float(gamma[0])


def sample_pinned(spec: PinnedPathSpec, x0, x1, t: float,
                  rng: np.random.Generator) -> np.ndarray:
    """One exact draw from the pinned conditional at time t."""
    mean, std = pinned_mean_std(spec, x0, x1, t)
    return mean + std * rng.standard_normal(mean.shape[0])


def pinned_mean_std_batch(spec: PinnedPathSpec, X0: np.ndarray, X1: np.ndarray,
                          ts) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised pinned_mean_std: rows are pairs, ts scalar or per-row."""
    X0 = np.asarray(X0, dtype=np.float64)
    X1 = np.asarray(X1, dtype=np.float64)
    if X0.shape != X1.shape or X0.ndim != 2:
        raise ShapeError(f"X0/X1 must be matching (n, d) arrays, got {X0.shape} vs {X1.shape}")
    ts = _check_times(ts)
    if ts.shape[0] == 1 and X0.shape[0] != 1:
        ts = np.full(X0.shape[0], ts[0])
    if ts.shape[0] != X0.shape[0]:
        raise ShapeError(f"got {ts.shape[0]} times for {X0.shape[0]} pairs")
    a, b = spec.mean_weights(ts)
    gamma = spec.std(ts)
    means = a[:, None] * X0 + b[:, None] * X1
    return means, gamma


def sample_pinned_batch(spec: PinnedPathSpec, X0: np.ndarray, X1: np.ndarray,
                        ts, rng: np.random.Generator) -> np.ndarray:
    means, gamma = pinned_mean_std_batch(spec, X0, X1, ts)
    return means + gamma[:, None] * rng.standard_normal(means.shape)


@dataclasses.dataclass
class ConditionalDrift:
    """A named bridge drift tied to a path and diffusion setup.

    Evaluation near a singular endpoint clamps t into
    [t_clip, 1 - t_clip] and counts the event in ``clamp_events``;
    it never returns a non-finite value.
    """

    kind: str
    path: PinnedPathSpec
    diffusion: DiffusionConfig
    t_clip: float = 1e-3
    clamp_events: int = dataclasses.field(default=0, compare=False)

    def __post_init__(self):
        if self.kind not in DRIFT_KINDS:
            raise DomainError(f"unknown drift kind {self.kind!r}, expected one of {DRIFT_KINDS}")
        if not 0.0 < self.t_clip < 0.5:
            raise DomainError(f"t_clip must lie in (0, 0.5), got {self.t_clip}")


def eval_conditional_drift(drift: ConditionalDrift, x, x0, x1, t: float) -> np.ndarray:
    """Drift vector at (t, x) conditioned on the pair (x0, x1)."""
    x = _as_points(x, "x")
    out = eval_conditional_drift_batch(drift, x[None, :],
                                       _as_points(x0, "x0")[None, :],
                                       _as_points(x1, "x1")[None, :], t)
    return out[0]


def eval_conditional_drift_batch(drift: ConditionalDrift, X: np.ndarray,
                                 X0: np.ndarray, X1: np.ndarray, ts) -> np.ndarray:
    """Vectorised drift evaluation; rows are (x, x0, x1) triples."""
    X = np.asarray(X, dtype=np.float64)
    X0 = np.asarray(X0, dtype=np.float64)
    X1 = np.asarray(X1, dtype=np.float64)
    if not (X.shape == X0.shape == X1.shape) or X.ndim != 2:
        raise ShapeError(
            f"X, X0, X1 must be matching (n, d) arrays, got {X.shape}, {X0.shape}, {X1.shape}")
    ts = _check_times(ts)
    if ts.shape[0] == 1 and X.shape[0] != 1:
        ts = np.full(X.shape[0], ts[0])
    if ts.shape[0] != X.shape[0]:
        raise ShapeError(f"got {ts.shape[0]} times for {X.shape[0]} rows")

    kind = drift.kind
    lo, hi = drift.t_clip, 1.0 - drift.t_clip
    if kind == "constant_line":
        return X1 - X0

    if kind == "doob_forward":
        tc = np.minimum(ts, hi)
    elif kind == "doob_reverse":
        tc = np.maximum(ts, lo)
    else:
        tc = np.clip(ts, lo, hi)
    drift.clamp_events += int(np.count_nonzero(tc != ts))

    if kind == "doob_forward":
        return (X1 - X) / (1.0 - tc)[:, None]
    if kind == "doob_reverse":
        return (X0 - X) / tc[:, None]
    if kind == "sb_bridge":
        mu = tc[:, None] * X1 + (1.0 - tc)[:, None] * X0
        coef = (1.0 - 2.0 * tc) / (2.0 * tc * (1.0 - tc))
        return coef[:, None] * (X - mu) + (X1 - X0)
    # kinetic
    return _kinetic_batch(drift.path, drift.diffusion.sigma_ref, X, X0, X1, tc)


def _kinetic_batch(path: PinnedPathSpec, sigma_ref: float, X, X0, X1, tc) -> np.ndarray:
    gamma = path.std(tc)
    if np.any(gamma <= 0):
        t_bad = float(tc[int(np.argmin(gamma))])
        raise DomainError(f"kinetic drift needs gamma_t > 0, got {gamma.min()} at t={t_bad}")
    a_w, b_w = path.mean_weights(tc)
    da, db = path.d_mean_weights(tc)
    dgamma = path.d_std(tc)
    mu = a_w[:, None] * X0 + b_w[:, None] * X1
    dmu = da[:, None] * X0 + db[:, None] * X1
    pull = (dgamma - sigma_ref ** 2 / (2.0 * gamma)) / gamma
    return dmu + pull[:, None] * (X - mu)


def kinetic_drift(mean_schedule: MeanSchedule, std_schedule: StdSchedule,
                  sigma_ref: float, x, x0, x1, t: float) -> np.ndarray:
    """Minimum-energy drift for arbitrary schedules at one point.

    Derivatives of black-box schedules come from central differences;
    the built-in path kinds go through ConditionalDrift instead and use
    analytic derivatives.
    """
    spec = custom_path(mean_schedule, std_schedule)
    x = _as_points(x, "x")
    t = _check_time(t)
    out = _kinetic_batch(spec, float(sigma_ref), x[None, :],
                         _as_points(x0, "x0")[None, :],
                         _as_points(x1, "x1")[None, :],
                         np.array([t]))
    return out[0]
