"""Toy endpoint distributions for pi_0 and pi_1.

All samplers draw i.i.d. points, deterministically for a given
Generator.  The 2D toys use the community-standard parameterizations,
fixed here so tests are reproducible: eight Gaussians on a ring of
radius 4 with component std 0.3; checkerboard on [-4, 4]^2 with a 4x4
cell grid; two moons with unit radius, second moon offset (1, 0.5),
Gaussian noise 0.05.

The file kind reads CSV with one point per row and no header; malformed
rows raise DataError naming the line.
"""
from __future__ import annotations

import dataclasses

import numpy as np

from .core import SampleBatch
from .errors import ConfigError, DataError, DomainError

DATASET_KINDS = ("gaussian", "gaussian_mixture", "two_moons", "checkerboard",
                 "point_mass", "file")


@dataclasses.dataclass(frozen=True)
class EndpointDistribution:
    """One marginal distribution, as a seeded sampler description."""

    kind: str
    dim: int
    mean: np.ndarray | None = None
    std: float | None = None
    means: np.ndarray | None = None
    stds: np.ndarray | None = None
    weights: np.ndarray | None = None
    noise: float = 0.05
    point: np.ndarray | None = None
    path: str | None = None

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        if self.dim < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")
        if self.kind == "gaussian":
            if self.mean is None or self.std is None:
                raise ConfigError("gaussian needs mean and std")
            if self.std <= 0:
                raise ConfigError(f"std must be positive, got {self.std}")
            object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
            if self.mean.shape != (self.dim,):
                raise ConfigError(f"mean shape {self.mean.shape} does not match dim {self.dim}")
        elif self.kind == "gaussian_mixture":
            if self.means is None or self.stds is None or self.weights is None:
                raise ConfigError("gaussian_mixture needs means, stds, weights")
            means = np.asarray(self.means, dtype=np.float64)
            stds = np.asarray(self.stds, dtype=np.float64)
            weights = np.asarray(self.weights, dtype=np.float64)
            if means.ndim != 2 or means.shape[1] != self.dim:
                raise ConfigError(f"means must be (k, {self.dim}), got {means.shape}")
            k = means.shape[0]
            if stds.shape != (k,) or weights.shape != (k,):
                raise ConfigError("stds and weights must have one entry per component")
            if np.any(stds <= 0):
                raise ConfigError("component stds must be positive")
            if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
                raise ConfigError("mixture weights must be nonnegative and sum to 1")
            object.__setattr__(self, "means", means)
            object.__setattr__(self, "stds", stds)
            object.__setattr__(self, "weights", weights)
        elif self.kind in ("two_moons", "checkerboard"):
            if self.dim != 2:
                raise ConfigError(f"{self.kind} is 2D only")
            if self.kind == "two_moons" and self.noise < 0:
                raise ConfigError(f"noise must be >= 0, got {self.noise}")
        elif self.kind == "point_mass":
            if self.point is None:
                raise ConfigError("point_mass needs a point")
            object.__setattr__(self, "point", np.asarray(self.point, dtype=np.float64))
            if self.point.shape != (self.dim,):
                raise ConfigError(f"point shape {self.point.shape} does not match dim {self.dim}")
        elif self.kind == "file":
            if not self.path:
                raise ConfigError("file kind needs a path")


def gaussian(mean, std: float) -> EndpointDistribution:
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    return EndpointDistribution("gaussian", mean.shape[0], mean=mean, std=float(std))


def gaussian_mixture(means, stds, weights) -> EndpointDistribution:
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    return EndpointDistribution("gaussian_mixture", means.shape[1], means=means,
                                stds=np.asarray(stds, dtype=np.float64),
                                weights=np.asarray(weights, dtype=np.float64))


def eight_gaussians() -> EndpointDistribution:
    """Eight components on a ring of radius 4, std 0.3, equal weights."""
    angles = np.arange(8) * (2.0 * np.pi / 8.0)
    means = 4.0 * np.column_stack([np.cos(angles), np.sin(angles)])
    return gaussian_mixture(means, np.full(8, 0.3), np.full(8, 0.125))


def two_moons(noise: float = 0.05) -> EndpointDistribution:
    return EndpointDistribution("two_moons", 2, noise=noise)


def checkerboard() -> EndpointDistribution:
    return EndpointDistribution("checkerboard", 2)


def point_mass(point) -> EndpointDistribution:
    point = np.atleast_1d(np.asarray(point, dtype=np.float64))
    return EndpointDistribution("point_mass", point.shape[0], point=point)


def from_file(path, dim: int) -> EndpointDistribution:
    return EndpointDistribution("file", dim, path=str(path))


def _sample_two_moons(dist, n, rng):
    theta = rng.uniform(0.0, np.pi, size=n)
    upper = rng.integers(0, 2, size=n).astype(bool)
    pts = np.empty((n, 2))
    pts[upper, 0] = np.cos(theta[upper])
    pts[upper, 1] = np.sin(theta[upper])
    pts[~upper, 0] = 1.0 - np.cos(theta[~upper])
    pts[~upper, 1] = 0.5 - np.sin(theta[~upper])
    return pts + dist.noise * rng.standard_normal((n, 2))


def _sample_checkerboard(n, rng):
    # 8 active cells: (i + j) even on the 4x4 grid over [-4, 4]^2
    cells = [(i, j) for i in range(4) for j in range(4) if (i + j) % 2 == 0]
    idx = rng.integers(0, len(cells), size=n)
    corners = np.array(cells, dtype=np.float64)[idx] * 2.0 - 4.0
    return corners + rng.uniform(0.0, 2.0, size=(n, 2))


def _read_points_file(path, dim):
    rows = []
    first_data_line = True
    try:
        with open(path, encoding="ascii") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                cells = line.split(",")
                try:
                    row = [float(c) for c in cells]
                except ValueError as exc:
                    if first_data_line:
                        # tolerate one header line so our own exports re-ingest
                        first_data_line = False
                        continue
                    raise DataError(f"{path}: line {lineno}: {exc}") from exc
                first_data_line = False
                if len(row) != dim:
                    raise DataError(
                        f"{path}: line {lineno}: expected {dim} columns, got {len(row)}")
                rows.append(row)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: no data rows")
    return np.asarray(rows, dtype=np.float64)


def sample(dist: EndpointDistribution, n: int, rng: np.random.Generator) -> SampleBatch:
    """n i.i.d. draws from the distribution."""
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    if dist.kind == "gaussian":
        pts = dist.mean[None, :] + dist.std * rng.standard_normal((n, dist.dim))
    elif dist.kind == "gaussian_mixture":
        comp = rng.choice(dist.means.shape[0], size=n, p=dist.weights)
        pts = dist.means[comp] + dist.stds[comp, None] * rng.standard_normal((n, dist.dim))
    elif dist.kind == "two_moons":
        pts = _sample_two_moons(dist, n, rng)
    elif dist.kind == "checkerboard":
        pts = _sample_checkerboard(n, rng)
    elif dist.kind == "point_mass":
        pts = np.broadcast_to(dist.point, (n, dist.dim)).copy()
    else:
        data = _read_points_file(dist.path, dist.dim)
        idx = rng.integers(0, data.shape[0], size=n)
        pts = data[idx]
    return SampleBatch(pts)


def write_points_csv(path, points: np.ndarray, dim: int | None = None) -> None:
    """One point per row under an x_0,...,x_{d-1} header.

    The file kind skips the header when reading these back.  ``dim``
    lets callers write a header-only file for an empty batch.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.size == 0:
        if dim is None:
            raise DomainError("empty points need an explicit dim for the header")
        points = points.reshape(0, dim)
    if points.ndim != 2:
        raise DomainError(f"points must be (n, d), got shape {points.shape}")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(",".join(f"x_{j}" for j in range(points.shape[1])) + "\n")
        for row in points:
            fh.write(",".join(format(v, ".9g") for v in row) + "\n")
