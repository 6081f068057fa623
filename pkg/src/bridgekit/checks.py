"""Self-check suite: ten numbered acceptance criteria.

Each check is a standalone function returning a detail string; run_all
wraps them with timing and error capture and prints one line per check.
The expensive artifacts (the IMF run, the DSBM run) are built once in a
CheckContext and shared by the checks that reuse them.

Everything here is deterministic for a fixed thread count of 1: fixed
seeds, common-random-number evaluation, and per-trajectory noise streams
keyed by row index.
"""

from __future__ import annotations

import bisect
import dataclasses
import filecmp
import os
import tempfile
import time

import numpy as np

from . import data
from .config import run_config_from_dict, execute_run
from .core import (ConditionalDrift, DiffusionConfig, SampleBatch,
                   brownian_bridge_path, eval_conditional_drift_batch,
                   linear_path)
from .coupling import (Coupling, exact_ot_coupling, independent_coupling,
                       sample_pairs, sinkhorn_coupling, squared_cost)
from .errors import BridgeKitError
from .matching import BridgeConfig, run
from .metrics import (energy_distance, gaussian_eot_oracle,
                      marginal_drift_oracle, path_kinetic_energy,
                      same_distribution_baseline)
from .net import DriftNetwork, load_checkpoint, train_regression
from .rng import make_generator
from .sim import TimeGrid, simulate_batch, simulate_endpoints

FAST_CHECKS = (1, 2, 4, 5)

# ad hoc rng keys for check evaluations, disjoint from the driver domains
_C6_EVAL_KEY = 77
_C6_BASELINE_KEY = 78
_C7_EVAL_KEY = 88
_C8_SIM_KEY = 89


@dataclasses.dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} criterion {self.number}: {self.name} - {self.detail} ({self.seconds:.1f}s)"


class _StagedLr:
    """Piecewise-constant rate over cumulative gradient steps.

    Counts its own calls so the decay spans outer iterations; the driver
    hands train_regression a per-iteration step index, which would reset
    a stateless schedule every iteration.
    """

    def __init__(self, stages, boundaries):
        self.stages = list(stages)
        self.boundaries = list(boundaries)
        self.calls = 0

    def __call__(self, step: int) -> float:
        rate = self.stages[bisect.bisect_right(self.boundaries, self.calls)]
        self.calls += 1
        return rate


_C6_SEED = 0

_C6_RUN_DICT = {
    "instantiation": "imf",
    "dim": 1,
    "outer_iters": 1,
    "inner_steps": 6000,
    "batch_size": 256,
    "data_n": 4096,
    "sim_steps": 500,
    "eval_n": 2048,
    "sigma_ref": 1.0,
    "hidden": [64, 64],
    "lr": {"stages": [3e-3, 1e-3, 3e-4, 1e-4], "boundaries": [1500, 3000, 4500]},
    "seed": _C6_SEED,
    "source0": {"kind": "gaussian", "mean": [0.0], "std": 1.0},
    "source1": {"kind": "gaussian", "mean": [4.0], "std": 1.0},
}

_C7_SEED = 0


class CheckContext:
    """Shared artifacts: criterion 6 feeds 8 and 10, criterion 7 feeds 8."""

    def __init__(self, workdir: str | None = None):
        if workdir is None:
            self._tmp = tempfile.TemporaryDirectory(prefix="bridgekit-check-")
            workdir = self._tmp.name
        self.workdir = workdir
        self._imf = None
        self._dsbm = None

    def imf_run(self):
        """Criterion-6 artifacts: (run dict, written paths, loaded nets)."""
        if self._imf is None:
            cfg_dict = dict(_C6_RUN_DICT, out_dir=os.path.join(self.workdir, "imf_run"))
            paths = execute_run(run_config_from_dict(cfg_dict))
            nets, _ = load_checkpoint(paths["checkpoint"])
            self._imf = (cfg_dict, paths, nets)
        return self._imf

    def dsbm_state(self):
        if self._dsbm is None:
            cfg = BridgeConfig(instantiation="dsbm", dim=1, outer_iters=8,
                               inner_steps=2500, batch_size=256, data_n=4096,
                               pool_n=8192, sim_steps=200, eval_n=1024,
                               sigma_ref=1.0, hidden=(64, 64),
                               lr=_StagedLr([1e-3, 3e-4], [1500]),
                               seed=_C7_SEED)
            self._dsbm = run(cfg, data.gaussian([0.0], 1.0), data.gaussian([4.0], 1.0))
        return self._dsbm


def check_1_kinetic_doob_identity(ctx: CheckContext) -> str:
    """Kinetic drift on Brownian-bridge schedules equals the Doob drift."""
    worst = 0.0
    for case, sigma_ref in enumerate((1.0, 0.6)):
        rng = make_generator(2026, case)
        n = 10_000
        x = rng.standard_normal((n, 2))
        x0 = rng.standard_normal((n, 2))
        x1 = rng.standard_normal((n, 2))
        ts = rng.uniform(0.01, 0.99, size=n)
        diff = DiffusionConfig(sigma=sigma_ref, sigma_ref=sigma_ref, dim=2)
        path = brownian_bridge_path(sigma_ref)
        kin = ConditionalDrift("kinetic", path, diff, t_clip=1e-3)
        doob = ConditionalDrift("doob_forward", path, diff, t_clip=1e-3)
        gap = np.abs(eval_conditional_drift_batch(kin, x, x0, x1, ts)
                     - eval_conditional_drift_batch(doob, x, x0, x1, ts))
        worst = max(worst, float(gap.max()))
    if worst >= 1e-9:
        raise AssertionError(f"max |kinetic - doob| = {worst:.3e} >= 1e-9")
    return f"max |kinetic - doob| = {worst:.2e} over 2x10^4 points"


def check_2_pinned_marginals(ctx: CheckContext) -> str:
    """Euler-Maruyama under the Doob drift keeps the pinned Gaussian law."""
    n, steps = 10_000, 1000
    x0_val, x1_val = 0.0, 2.0
    diff = DiffusionConfig(sigma=1.0, sigma_ref=1.0, dim=1)
    drift = ConditionalDrift("doob_forward", brownian_bridge_path(1.0), diff)
    def fn(t, xs):
        # the integrator chunks rows, so rebuild the pinned pair per call
        return eval_conditional_drift_batch(drift, xs, np.full_like(xs, x0_val),
                                            np.full_like(xs, x1_val),
                                            np.full(len(xs), t))

    _, paths = simulate_batch(fn, np.full((n, 1), x0_val), 1.0, TimeGrid(n_steps=steps),
                              make_generator(2026, 2), return_trajectories=True)
    details = []
    for t in (0.25, 0.5, 0.75):
        xs = paths[:, int(round(t * steps)), 0]
        mean, var = float(xs.mean()), float(xs.var(ddof=1))
        m_tgt, v_tgt = x1_val * t, t * (1.0 - t)
        m_tol = 3.0 * float(xs.std(ddof=1)) / np.sqrt(n)
        v_tol = 3.0 * var * np.sqrt(2.0 / (n - 1)) + 0.01
        if abs(mean - m_tgt) >= m_tol:
            raise AssertionError(
                f"t={t}: mean {mean:.4f} vs {m_tgt} exceeds {m_tol:.4f}")
        if abs(var - v_tgt) >= v_tol:
            raise AssertionError(
                f"t={t}: var {var:.4f} vs {v_tgt:.4f} exceeds {v_tol:.4f}")
        details.append(f"t={t}: |dm|={abs(mean - m_tgt):.4f} |dv|={abs(var - v_tgt):.4f}")
    return "; ".join(details)


def check_3_regression_match(ctx: CheckContext) -> str:
    """A trained net matches the exact mixture drift on a 3-pair coupling."""
    seed = 1234
    x0 = np.array([[-1.0], [0.0], [1.0]])
    x1 = np.array([[-0.3], [0.3], [0.9]])
    mass = np.array([0.35, 0.35, 0.30])
    coupling = Coupling(SampleBatch(x0, mass), SampleBatch(x1, mass),
                        np.diag(mass), "exact_ot")
    path = linear_path(0.002)
    drift = ConditionalDrift("doob_forward", path,
                             DiffusionConfig(sigma=0.0, sigma_ref=1.0, dim=1),
                             t_clip=0.25)
    net = DriftNetwork(1, (128, 128, 128), "silu", rng=make_generator(seed, 0))
    train_regression(net, lambda n, r: sample_pairs(coupling, n, r),
                     path, drift, steps=10_000, batch_size=512,
                     lr=lambda s: (3e-3, 1e-3, 3e-4, 1e-4, 3e-5)[min(s // 2000, 4)],
                     rng=make_generator(seed, 1), t_clip=0.25)

    fn = net.drift_fn()
    worst = 0.0
    for t in np.linspace(0.25, 0.75, 11):
        a, b = path.mean_weights(np.array([t]))
        gamma = float(path.std(np.array([t]))[0])
        mus = (a * x0 + b * x1)[:, 0]
        grid = np.unique(np.concatenate(
            [np.linspace(m - 4.0 * gamma, m + 4.0 * gamma, 81) for m in mus]))
        dens = np.zeros_like(grid)
        for m, w in zip(mus, mass):
            dens += w * np.exp(-0.5 * ((grid - m) / gamma) ** 2)
        keep = grid[dens > 1e-3 * dens.max()]
        pred = fn(float(t), keep[:, None])[:, 0]
        oracle = np.array([marginal_drift_oracle(coupling, path, drift,
                                                 float(t), np.array([x]))[0]
                           for x in keep])
        worst = max(worst, float(np.abs(pred - oracle).max()))
    if worst >= 0.05:
        raise AssertionError(f"max |net - oracle| = {worst:.4f} >= 0.05")
    return f"max |net - oracle| = {worst:.4f} on the in-support grid"


def check_4_sinkhorn(ctx: CheckContext) -> str:
    """Marginal feasibility, the 2x2 closed form, and both epsilon limits."""
    rng = make_generator(2026, 4)
    b0 = SampleBatch(rng.standard_normal((16, 2)))
    b1 = SampleBatch(rng.standard_normal((24, 2)))
    plan = sinkhorn_coupling(b0, b1, sigma_ref=1.0)
    viol = max(float(np.abs(plan.mass.sum(axis=1) - 1.0 / 16).max()),
               float(np.abs(plan.mass.sum(axis=0) - 1.0 / 24).max()))
    if viol >= 1e-9:
        raise AssertionError(f"marginal violation {viol:.3e} >= 1e-9")

    pts0 = SampleBatch(np.array([[0.0], [1.0]]))
    pts1 = SampleBatch(np.array([[0.0], [1.0]]))
    eps = 2.0
    a = 0.5 * np.exp(1.0 / eps) / (1.0 + np.exp(1.0 / eps))
    got = sinkhorn_coupling(pts0, pts1, sigma_ref=1.0, tol=1e-12).mass
    gap = float(np.abs(got - np.array([[a, 0.5 - a], [0.5 - a, a]])).max())
    if gap >= 1e-8:
        raise AssertionError(f"2x2 closed-form gap {gap:.3e} >= 1e-8")

    wide = sinkhorn_coupling(pts0, pts1, sigma_ref=1e3).mass
    ind_gap = float(np.abs(wide - independent_coupling(pts0, pts1).mass).max())
    if ind_gap >= 1e-4:
        raise AssertionError(f"large-eps plan vs independent: {ind_gap:.3e} >= 1e-4")

    d0 = SampleBatch(np.array([[0.0], [1.0]]))
    d1 = SampleBatch(np.array([[1.0], [0.0]]))
    tight = sinkhorn_coupling(d0, d1, sigma_ref=1e-2).mass
    ot_gap = float(np.abs(tight - exact_ot_coupling(d0, d1).mass).max())
    if ot_gap >= 1e-3:
        raise AssertionError(f"small-eps plan vs exact OT: {ot_gap:.3e} >= 1e-3")
    return (f"violation={viol:.1e}, 2x2 gap={gap:.1e}, "
            f"limits: ind {ind_gap:.1e}, ot {ot_gap:.1e}")


def check_5_exact_ot_bruteforce(ctx: CheckContext) -> str:
    """Solver transport cost equals the brute-force assignment minimum."""
    from itertools import permutations
    rng = make_generator(2026, 5)
    worst_n = 0
    for trial in range(20):
        n = int(rng.integers(2, 7))
        d = int(rng.integers(1, 4))
        b0 = SampleBatch(rng.standard_normal((n, d)))
        b1 = SampleBatch(rng.standard_normal((n, d)))
        cost = squared_cost(b0, b1)
        plan = exact_ot_coupling(b0, b1)
        rows, cols = np.nonzero(plan.mass)
        solver_cost = float(cost[rows, cols].sum()) / n
        brute = min(float(sum(cost[i, p[i]] for i in range(n))) / n
                    for p in permutations(range(n)))
        if solver_cost != brute:
            raise AssertionError(
                f"trial {trial} (n={n}, d={d}): solver {solver_cost!r} != brute {brute!r}")
        worst_n = max(worst_n, n)
    return f"20 trials up to n={worst_n}, solver cost == brute force exactly"


def _c6_terminal(ctx: CheckContext):
    cfg_dict, paths, nets = ctx.imf_run()
    rng = make_generator(_C6_SEED, _C6_EVAL_KEY)
    pi0 = data.gaussian([0.0], 1.0)
    pi1 = data.gaussian([4.0], 1.0)
    x0 = data.sample(pi0, 4096, rng).points
    term = simulate_endpoints(nets["forward"].drift_fn(), x0, 1.0, 500, rng)
    target = data.sample(pi1, 4096, rng).points
    return term, target


def check_6_imf_iteration_one(ctx: CheckContext) -> str:
    """IMF iteration 1 transports N(0,1) to N(4,1) at desk scale."""
    term, target = _c6_terminal(ctx)
    ed = energy_distance(SampleBatch(term), SampleBatch(target))
    pi1 = data.gaussian([4.0], 1.0)
    bound = 3.0 * same_distribution_baseline(
        lambda n, r: data.sample(pi1, n, r).points, 4096,
        make_generator(_C6_SEED, _C6_BASELINE_KEY))
    mean, var = float(term.mean()), float(term.var(ddof=1))
    if ed >= bound:
        raise AssertionError(f"energy distance {ed:.4f} >= 3x baseline {bound:.4f}")
    if abs(mean - 4.0) >= 0.2:
        raise AssertionError(f"terminal mean {mean:.3f} not within 0.2 of 4")
    if abs(var - 1.0) >= 0.3:
        raise AssertionError(f"terminal var {var:.3f} not within 0.3 of 1")
    return f"ed={ed:.4f} < {bound:.4f}, mean={mean:.3f}, var={var:.3f}"


def check_7_dsbm_eot_coupling(ctx: CheckContext) -> str:
    """Eight DSBM alternations recover the entropic-OT covariance."""
    state = ctx.dsbm_state()
    oracle_cov, _ = gaussian_eot_oracle(0.0, 1.0, 4.0, 1.0, 1.0)
    rng = make_generator(_C7_SEED, _C7_EVAL_KEY)
    x0 = data.sample(data.gaussian([0.0], 1.0), 4096, rng).points
    x1 = simulate_endpoints(state.forward.drift_fn(), x0, 1.0, 200, rng)
    cov = float(np.cov(x0[:, 0], x1[:, 0])[0, 1])
    err = abs(cov - oracle_cov)
    if err >= 0.1:
        raise AssertionError(
            f"|cov {cov:.4f} - oracle {oracle_cov:.4f}| = {err:.4f} >= 0.1")
    return f"cov={cov:.4f} vs oracle {oracle_cov:.4f} (err {err:.4f})"


def check_8_kinetic_ordering(ctx: CheckContext) -> str:
    """The DSBM drift spends no more kinetic energy than IMF iteration 1."""
    _, _, imf_nets = ctx.imf_run()
    dsbm = ctx.dsbm_state()
    x0 = data.sample(data.gaussian([0.0], 1.0), 2048,
                     make_generator(_C7_SEED, _C7_EVAL_KEY)).points
    grid = TimeGrid(n_steps=200)
    ke_d, se_d = path_kinetic_energy(dsbm.forward, SampleBatch(x0), 1.0, grid,
                                     make_generator(_C7_SEED, _C8_SIM_KEY),
                                     return_std_error=True)
    ke_i, se_i = path_kinetic_energy(imf_nets["forward"], SampleBatch(x0), 1.0,
                                     grid, make_generator(_C7_SEED, _C8_SIM_KEY),
                                     return_std_error=True)
    allowance = 2.0 * float(np.hypot(se_d, se_i))
    if ke_d > ke_i + allowance:
        raise AssertionError(
            f"dsbm ke {ke_d:.3f} > imf ke {ke_i:.3f} + 2se {allowance:.3f}")
    return f"dsbm {ke_d:.3f}+-{se_d:.3f} <= imf {ke_i:.3f}+-{se_i:.3f}"


_C9_SEED = 0


def check_9_ot_cfm_moons(ctx: CheckContext) -> str:
    """OT-CFM on eight Gaussians to two moons: quality and monotonicity."""
    cfg = BridgeConfig(instantiation="ot_cfm", dim=2, outer_iters=5,
                       inner_steps=2000, batch_size=256, data_n=8192,
                       sim_steps=150, eval_n=2048, sigma_min=0.01,
                       hidden=(96, 96),
                       lr=_StagedLr([2e-3, 1e-3, 3e-4, 1e-4, 3e-5],
                                    [2000, 4000, 6000, 8000]),
                       seed=_C9_SEED)
    g8 = data.eight_gaussians()
    moons = data.two_moons()
    state = run(cfg, g8, moons)
    eds = [r.value for r in state.history if r.name == "terminal_ed"]

    rng = make_generator(_C9_SEED, 99)
    x0 = data.sample(g8, 2048, rng).points
    term = simulate_endpoints(state.forward.drift_fn(), x0, 0.0, 150, rng)
    target = data.sample(moons, 2048, rng).points
    ed = energy_distance(SampleBatch(term), SampleBatch(target))
    bound = 3.0 * same_distribution_baseline(
        lambda n, r: data.sample(moons, n, r).points, 2048,
        make_generator(_C9_SEED, 98))
    if ed >= bound:
        raise AssertionError(f"final ed {ed:.4f} >= 3x baseline {bound:.4f}")
    tail = eds[-3:]
    if not (tail[0] >= tail[1] >= tail[2]):
        raise AssertionError(
            "terminal ed not non-increasing over the last 3 iterations: "
            + ", ".join(f"{e:.5f}" for e in tail))
    return (f"final ed={ed:.4f} < {bound:.4f}; last 3: "
            + " >= ".join(f"{e:.5f}" for e in tail))


def check_10_determinism(ctx: CheckContext) -> str:
    """The criterion-6 run repeated with the same seed is byte-identical."""
    _, paths, _ = ctx.imf_run()
    cfg_dict = dict(_C6_RUN_DICT, out_dir=os.path.join(ctx.workdir, "imf_rerun"))
    rerun_paths = execute_run(run_config_from_dict(cfg_dict))
    if not filecmp.cmp(paths["metrics"], rerun_paths["metrics"], shallow=False):
        raise AssertionError("metrics.csv differs between identical runs")
    size = os.path.getsize(paths["metrics"])
    return f"metrics.csv byte-identical across reruns ({size} bytes)"


_CHECKS = (
    (1, "kinetic/Doob drift identity", check_1_kinetic_doob_identity),
    (2, "pinned-marginal preservation", check_2_pinned_marginals),
    (3, "drift regression vs oracle", check_3_regression_match),
    (4, "Sinkhorn correctness", check_4_sinkhorn),
    (5, "exact OT vs brute force", check_5_exact_ot_bruteforce),
    (6, "IMF iteration-1 transport", check_6_imf_iteration_one),
    (7, "DSBM entropic-OT coupling", check_7_dsbm_eot_coupling),
    (8, "kinetic-energy ordering", check_8_kinetic_ordering),
    (9, "OT-CFM transport quality", check_9_ot_cfm_moons),
    (10, "run determinism", check_10_determinism),
)


def run_check(number: int, ctx: CheckContext) -> CheckResult:
    """Run one numbered check, converting any raised error into a failure."""
    by_number = {num: (name, fn) for num, name, fn in _CHECKS}
    if number not in by_number:
        raise BridgeKitError(f"no check numbered {number}")
    name, fn = by_number[number]
    start = time.perf_counter()
    try:
        detail = fn(ctx)
        passed = True
    except Exception as exc:
        detail = f"{type(exc).__name__}: {exc}"
        passed = False
    return CheckResult(number, name, passed, detail, time.perf_counter() - start)


def run_all(fast: bool = False, log=print, workdir: str | None = None) -> list[CheckResult]:
    """Run the acceptance suite; fast=True keeps only the sub-second checks."""
    ctx = CheckContext(workdir)
    numbers = [n for n, _, _ in _CHECKS if not fast or n in FAST_CHECKS]
    results = []
    for number in numbers:
        result = run_check(number, ctx)
        results.append(result)
        if log is not None:
            log(result.line())
    if log is not None:
        n_pass = sum(r.passed for r in results)
        total = sum(r.seconds for r in results)
        log(f"{n_pass}/{len(results)} checks passed in {total:.1f}s")
    return results
