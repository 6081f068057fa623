"""Couplings between two sample batches: independent, exact OT, entropic OT.

A coupling stores a dense joint mass matrix over the two point clouds.
Entropic couplings use the regularisation eps = 2 * sigma_ref**2 on the raw
squared Euclidean cost, so the reference diffusion scale is the single knob.
"""
from __future__ import annotations

import dataclasses

import numpy as np
from scipy import sparse
from scipy.optimize import linear_sum_assignment, linprog
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .core import SampleBatch
from .errors import ConvergenceError, DomainError, ShapeError

COUPLING_KINDS = ("independent", "exact_ot", "sinkhorn", "model_induced")

MARGINAL_TOL = 1e-6
MASS_SUM_TOL = 1e-9


@dataclasses.dataclass
class Coupling:
    """Joint mass over batch0 x batch1 with matching marginals."""

    batch0: SampleBatch
    batch1: SampleBatch
    mass: np.ndarray
    kind: str
    meta: dict = dataclasses.field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in COUPLING_KINDS:
            raise DomainError(f"unknown coupling kind {self.kind!r}")
        m = np.asarray(self.mass, dtype=np.float64)
        if m.shape != (self.batch0.n, self.batch1.n):
            raise ShapeError(
                f"mass shape {m.shape} does not match ({self.batch0.n}, {self.batch1.n})")
        if np.any(m < -1e-12):
            raise DomainError(f"mass entries must be >= 0, min is {m.min()}")
        if abs(m.sum() - 1.0) > MASS_SUM_TOL:
            raise DomainError(f"mass must sum to 1, got {m.sum()!r}")
        row_gap = np.max(np.abs(m.sum(axis=1) - self.batch0.effective_weights()))
        col_gap = np.max(np.abs(m.sum(axis=0) - self.batch1.effective_weights()))
        if max(row_gap, col_gap) > MARGINAL_TOL:
            raise DomainError(
                f"coupling marginals violate batch weights by {max(row_gap, col_gap):.3g}")
        self.mass = m

    @property
    def shape(self) -> tuple[int, int]:
        return self.mass.shape


def squared_cost(batch0: SampleBatch, batch1: SampleBatch) -> np.ndarray:
    return cdist(batch0.points, batch1.points, "sqeuclidean")


def transport_cost(coupling: Coupling) -> float:
    """Expected squared Euclidean distance under the coupling."""
    return float(np.sum(coupling.mass * squared_cost(coupling.batch0, coupling.batch1)))


def independent_coupling(batch0: SampleBatch, batch1: SampleBatch) -> Coupling:
    """Product coupling: outer product of the marginal weights."""
    mass = np.outer(batch0.effective_weights(), batch1.effective_weights())
    return Coupling(batch0, batch1, mass, "independent")


def _require_uniform(batch: SampleBatch, side: str) -> None:
    if batch.weights is not None and np.max(
            np.abs(batch.weights - 1.0 / batch.n)) > 1e-12:
        raise DomainError(f"exact_ot_coupling requires uniform weights on {side}")


def _canonicalise_assignment(cost: np.ndarray, col: np.ndarray) -> np.ndarray:
    """Lower the assignment lexicographically through zero-cost swaps.

    Only swaps whose cost change is exactly zero are applied, so the plan
    stays optimal.  Generic float data has no exact ties and the first pass
    is a no-op.
    """
    n = col.shape[0]
    rows = np.arange(n)
    for _ in range(n * n):
        picked = cost[rows[:, None], col[None, :]]          # picked[i, k] = cost[i, col[k]]
        diag = picked[rows, rows]
        delta = picked + picked.T - diag[:, None] - diag[None, :]
        lowers = (col[None, :] < col[:, None]) & np.triu(np.ones((n, n), dtype=bool), 1)
        cand = np.argwhere((delta == 0.0) & lowers)
        if cand.size == 0:
            break
        order = np.lexsort((col[cand[:, 1]], cand[:, 0]))
        i, k = cand[order[0]]
        col[i], col[k] = col[k], col[i]
    return col


def exact_ot_coupling(batch0: SampleBatch, batch1: SampleBatch) -> Coupling:
    """Unregularised OT between uniform batches, squared Euclidean cost.

    Equal sizes reduce to an assignment: mass 1/n on one permutation,
    canonicalised toward the lowest-index permutation among cost ties.
    Unequal sizes solve the dense transport LP.
    """
    _require_uniform(batch0, "batch0")
    _require_uniform(batch1, "batch1")
    if batch0.dim != batch1.dim:
        raise ShapeError(f"dim mismatch: {batch0.dim} vs {batch1.dim}")
    cost = squared_cost(batch0, batch1)
    n0, n1 = cost.shape
    if n0 == n1:
        _, col = linear_sum_assignment(cost)
        col = _canonicalise_assignment(cost, col)
        mass = np.zeros_like(cost)
        mass[np.arange(n0), col] = 1.0 / n0
        return Coupling(batch0, batch1, mass, "exact_ot")
    mass = _transport_lp(cost, n0, n1)
    return Coupling(batch0, batch1, mass, "exact_ot")


def _transport_lp(cost: np.ndarray, n0: int, n1: int) -> np.ndarray:
    # equality rows: every source row ships 1/n0, every target column
    # receives 1/n1; the last column constraint is redundant and dropped
    cells = np.arange(n0 * n1)
    row_id = np.concatenate([cells // n1, n0 + (cells % n1)])
    keep = row_id < n0 + n1 - 1
    a = sparse.coo_matrix(
        (np.ones(keep.sum()), (row_id[keep], np.tile(cells, 2)[keep])),
        shape=(n0 + n1 - 1, n0 * n1)).tocsr()
    b = np.concatenate([np.full(n0, 1.0 / n0), np.full(n1 - 1, 1.0 / n1)])
    res = linprog(cost.ravel(), A_eq=a, b_eq=b, bounds=(0, None), method="highs")
    if not res.success:
        raise ConvergenceError(f"transport LP failed: {res.message}")
    mass = np.maximum(res.x.reshape(n0, n1), 0.0)
    return mass / mass.sum()


def sinkhorn_coupling(batch0: SampleBatch, batch1: SampleBatch, sigma_ref: float,
                      tol: float = 1e-9, max_iter: int = 10000) -> Coupling:
    """Entropic OT plan at eps = 2 * sigma_ref**2, log-domain updates.

    Runs full sweeps (row potentials then column potentials) until the
    worst marginal violation falls below ``tol``.  Violations per sweep are
    recorded in ``meta["violations"]``; hitting ``max_iter`` with violation
    above 1e-6 raises ConvergenceError.
    """
    if sigma_ref <= 0:
        raise DomainError(f"sigma_ref must be > 0, got {sigma_ref}")
    if tol <= 0:
        raise DomainError(f"tol must be > 0, got {tol}")
    eps = 2.0 * sigma_ref ** 2
    cost = squared_cost(batch0, batch1)
    log_a = np.log(batch0.effective_weights())
    log_b = np.log(batch1.effective_weights())
    scaled = -cost / eps
    f = np.zeros(batch0.n)
    g = np.zeros(batch1.n)
    violations = []
    violation = np.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        f = eps * (log_a - logsumexp(scaled + g[None, :] / eps, axis=1))
        g = eps * (log_b - logsumexp(scaled + f[:, None] / eps, axis=0))
        log_row = logsumexp(scaled + f[:, None] / eps + g[None, :] / eps, axis=1)
        violation = float(np.max(np.abs(np.exp(log_row) - np.exp(log_a))))
        violations.append(violation)
        if violation <= tol:
            break
    if violation > 1e-6:
        raise ConvergenceError(
            f"sinkhorn stopped after {iterations} sweeps with violation {violation:.3g}",
            violation=violation)
    mass = np.exp(scaled + f[:, None] / eps + g[None, :] / eps)
    return Coupling(batch0, batch1, mass / mass.sum(), "sinkhorn",
                    meta={"iterations": iterations, "violation": violation,
                          "violations": violations})


def sample_pairs(coupling: Coupling, n: int, rng: np.random.Generator
                 ) -> tuple[np.ndarray, np.ndarray]:
    """n pair draws from the joint mass; returns (X0, X1) row-aligned."""
    if n < 0:
        raise DomainError(f"n must be >= 0, got {n}")
    flat = coupling.mass.ravel()
    idx = rng.choice(flat.size, size=n, p=flat / flat.sum())
    i, j = np.divmod(idx, coupling.batch1.n)
    return coupling.batch0.points[i], coupling.batch1.points[j]
