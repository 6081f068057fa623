"""Bridge-matching driver: couple endpoints, pin a path, regress a drift.

One outer iteration refreshes the endpoint coupling, then fits the drift
network to conditional targets along the pinned path.  The five
instantiations differ only in how pairs are produced and which
(path, drift, sigma) triple they regress:

* ``cfm_independent`` -- independent minibatch pairs, linear path, ODE.
* ``ot_cfm``          -- exact OT assignment per minibatch, linear path, ODE.
* ``sb_cfm``          -- Sinkhorn plan per minibatch, Brownian path, ODE.
* ``imf``             -- independent pairs first, then pairs simulated from
                         the current forward SDE (Markovian projection).
* ``dsbm``            -- like imf but alternating forward/reverse fits so
                         neither boundary marginal drifts away.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Callable

import numpy as np

from .core import (ConditionalDrift, DiffusionConfig, PATH_KINDS,
                   PinnedPathSpec, SampleBatch, brownian_bridge_path,
                   linear_path)
from .coupling import exact_ot_coupling, sample_pairs, sinkhorn_coupling
from .data import EndpointDistribution, sample as sample_distribution
from .errors import ConfigError, DomainError, ShapeError
from .metrics import MAX_DOUBLE_SUM, MetricRecord, energy_distance
from .net import ACTIVATIONS, DriftNetwork, OptimizerState, train_regression
from .rng import make_generator
from .sim import model_coupling, simulate_endpoints

INSTANTIATIONS = ("cfm_independent", "ot_cfm", "sb_cfm", "imf", "dsbm")
REFRESH_MODES = ("per_step", "per_iteration")

# rng domain codes: every stream is keyed (seed, domain, ...), so two runs
# sharing a seed consume identical randomness wherever their configs agree
DOMAIN_DATA = 0
DOMAIN_NET = 1
DOMAIN_TRAIN = 2
DOMAIN_POOL = 3
DOMAIN_EVAL = 4

_DEFAULT_PATH = {
    "cfm_independent": "linear_sigma_min",
    "ot_cfm": "linear_sigma_min",
    "sb_cfm": "brownian_bridge",
    "imf": "brownian_bridge",
    "dsbm": "brownian_bridge",
}
_DEFAULT_DRIFT = {
    "cfm_independent": "constant_line",
    "ot_cfm": "constant_line",
    "sb_cfm": "sb_bridge",
    "imf": "doob_forward",
    "dsbm": "doob_forward",
}

DataSource = "EndpointDistribution | SampleBatch"


@dataclasses.dataclass(frozen=True)
class BridgeConfig:
    """Everything one run needs; instantiation fixes path/drift/sigma.

    ``cfm_independent`` accepts explicit ``path_kind``/``drift_kind``/
    ``sigma`` overrides (that is how it reproduces the first imf
    iteration); the other instantiations reject them.
    """

    instantiation: str
    dim: int
    outer_iters: int = 10
    inner_steps: int = 500
    batch_size: int = 128
    data_n: int = 2048
    pool_n: int | None = None
    sim_steps: int = 100
    eval_n: int = 512
    sigma_ref: float = 1.0
    sigma: float | None = None
    sigma_min: float = 0.01
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "silu"
    lr: float | Callable[[int], float] = 1e-3
    t_clip: float = 1e-3
    seed: int = 0
    coupling_refresh: str = "per_step"
    path_kind: str | None = None
    drift_kind: str | None = None

    def __post_init__(self):
        if self.instantiation not in INSTANTIATIONS:
            raise ConfigError(f"unknown instantiation {self.instantiation!r}, "
                              f"expected one of {INSTANTIATIONS}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        for name, lo in (("dim", 1), ("outer_iters", 0), ("inner_steps", 1),
                         ("batch_size", 1), ("data_n", 1), ("sim_steps", 1),
                         ("eval_n", 2), ("seed", 0)):
            val = getattr(self, name)
            if not isinstance(val, (int, np.integer)) or val < lo:
                raise ConfigError(f"{name} must be an int >= {lo}, got {val!r}")
        if self.eval_n > MAX_DOUBLE_SUM:
            raise ConfigError(f"eval_n must be <= {MAX_DOUBLE_SUM}, got {self.eval_n}")
        if self.pool_n is not None and self.pool_n < 1:
            raise ConfigError(f"pool_n must be >= 1 when given, got {self.pool_n}")
        if self.sigma_ref <= 0:
            raise ConfigError(f"sigma_ref must be > 0, got {self.sigma_ref}")
        if self.sigma_min <= 0:
            raise ConfigError(f"sigma_min must be > 0, got {self.sigma_min}")
        if not 0.0 < self.t_clip < 0.5:
            raise ConfigError(f"t_clip must lie in (0, 0.5), got {self.t_clip}")
        if self.coupling_refresh not in REFRESH_MODES:
            raise ConfigError(f"coupling_refresh must be one of {REFRESH_MODES}, "
                              f"got {self.coupling_refresh!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}, "
                              f"got {self.activation!r}")
        self._check_overrides()

    def _check_overrides(self):
        inst = self.instantiation
        if self.path_kind is not None and self.path_kind not in PATH_KINDS:
            raise ConfigError(f"unknown path_kind {self.path_kind!r}")
        if self.path_kind == "custom_schedule":
            raise ConfigError("custom_schedule paths need programmatic schedules; "
                              "use linear_sigma_min or brownian_bridge here")
        if inst == "cfm_independent":
            if self.sigma is not None and self.sigma < 0:
                raise ConfigError(f"sigma must be >= 0, got {self.sigma}")
            return
        # the named instantiations are fixed recipes
        for field, want in (("path_kind", _DEFAULT_PATH[inst]),
                            ("drift_kind", _DEFAULT_DRIFT[inst])):
            got = getattr(self, field)
            if got is not None and got != want:
                raise ConfigError(f"{inst} fixes {field}={want!r}, got {got!r}")
        if inst in ("ot_cfm", "sb_cfm"):
            if self.sigma is not None and self.sigma != 0.0:
                raise ConfigError(f"{inst} implies sigma = 0, got {self.sigma}")
        else:  # imf, dsbm
            if self.sigma is not None and self.sigma != self.sigma_ref:
                raise ConfigError(f"{inst} implies sigma = sigma_ref = "
                                  f"{self.sigma_ref}, got {self.sigma}")

    @property
    def effective_sigma(self) -> float:
        if self.sigma is not None:
            return float(self.sigma)
        return self.sigma_ref if self.instantiation in ("imf", "dsbm") else 0.0

    @property
    def effective_path_kind(self) -> str:
        return self.path_kind or _DEFAULT_PATH[self.instantiation]

    @property
    def effective_drift_kind(self) -> str:
        return self.drift_kind or _DEFAULT_DRIFT[self.instantiation]

    @property
    def effective_pool_n(self) -> int:
        if self.pool_n is not None:
            return self.pool_n
        return int(round(10 * self.batch_size * math.sqrt(self.inner_steps)))

    def make_path(self) -> PinnedPathSpec:
        if self.effective_path_kind == "linear_sigma_min":
            return linear_path(sigma_min=self.sigma_min)
        return brownian_bridge_path(sigma_ref=self.sigma_ref)

    def make_drift(self, kind: str | None = None) -> ConditionalDrift:
        diffusion = DiffusionConfig(sigma=self.effective_sigma,
                                    sigma_ref=self.sigma_ref, dim=self.dim)
        return ConditionalDrift(kind or self.effective_drift_kind,
                                self.make_path(), diffusion, t_clip=self.t_clip)


@dataclasses.dataclass
class BridgeState:
    """Mutable run state: the nets, their optimizers, and the metric log."""

    nets: dict[str, DriftNetwork]
    opt: dict[str, OptimizerState]
    iteration: int = 0
    coupling_kind: str = "independent"
    history: list[MetricRecord] = dataclasses.field(default_factory=list)

    @property
    def forward(self) -> DriftNetwork:
        return self.nets["forward"]

    @property
    def reverse(self) -> DriftNetwork | None:
        return self.nets.get("reverse")


def init_state(config: BridgeConfig) -> BridgeState:
    """Fresh nets (zero drift field) seeded from the config."""
    nets = {"forward": DriftNetwork(config.dim, hidden=config.hidden,
                                    activation=config.activation,
                                    rng=make_generator(config.seed, DOMAIN_NET, 0))}
    if config.instantiation == "dsbm":
        nets["reverse"] = DriftNetwork(config.dim, hidden=config.hidden,
                                       activation=config.activation,
                                       rng=make_generator(config.seed, DOMAIN_NET, 1))
    opt = {key: OptimizerState.for_network(net) for key, net in nets.items()}
    return BridgeState(nets=nets, opt=opt)


def _minibatch_pairs(data0: SampleBatch, data1: SampleBatch):
    # independent product coupling, resampled every gradient step
    p0, p1 = data0.points, data1.points
    def source(n, rng):
        i0 = rng.integers(0, p0.shape[0], size=n)
        i1 = rng.integers(0, p1.shape[0], size=n)
        return p0[i0], p1[i1]
    return source


def _ot_minibatch_pairs(data0: SampleBatch, data1: SampleBatch):
    p0, p1 = data0.points, data1.points
    def source(n, rng):
        i0 = rng.integers(0, p0.shape[0], size=n)
        i1 = rng.integers(0, p1.shape[0], size=n)
        plan = exact_ot_coupling(SampleBatch(p0[i0]), SampleBatch(p1[i1]))
        rows, cols = plan.mass.nonzero()
        return plan.batch0.points[rows], plan.batch1.points[cols]
    return source


def _sinkhorn_minibatch_pairs(data0: SampleBatch, data1: SampleBatch,
                              sigma_ref: float):
    p0, p1 = data0.points, data1.points
    def source(n, rng):
        i0 = rng.integers(0, p0.shape[0], size=n)
        i1 = rng.integers(0, p1.shape[0], size=n)
        plan = sinkhorn_coupling(SampleBatch(p0[i0]), SampleBatch(p1[i1]), sigma_ref)
        return sample_pairs(plan, n, rng)
    return source


def _plan_pairs(plan):
    def source(n, rng):
        return sample_pairs(plan, n, rng)
    return source


def _pool_pairs(x0: np.ndarray, x1: np.ndarray):
    def source(n, rng):
        j = rng.integers(0, x0.shape[0], size=n)
        return x0[j], x1[j]
    return source


def _model_pool(state: BridgeState, config: BridgeConfig, data: SampleBatch,
                direction: str):
    """Simulate a pair pool from the current model, refreshed per iteration."""
    rng = make_generator(config.seed, DOMAIN_POOL, state.iteration)
    idx = rng.integers(0, data.n, size=config.effective_pool_n)
    src = SampleBatch(data.points[idx])
    net = state.nets["forward" if direction == "forward" else "reverse"]
    return model_coupling(net.drift_fn(), src, config.effective_sigma,
                          config.sim_steps, rng, direction=direction)


def bridge_iteration(state: BridgeState, config: BridgeConfig,
                     data0: SampleBatch, data1: SampleBatch,
                     rng: np.random.Generator) -> BridgeState:
    """One outer iteration: refresh the coupling, fit the matching net.

    dsbm alternates: even iterations fit the forward net (from data1-side
    pairs once a reverse net has been trained), odd iterations fit the
    reverse net on forward-simulated pairs.
    """
    if data0.dim != config.dim or data1.dim != config.dim:
        raise ShapeError(f"data dims ({data0.dim}, {data1.dim}) do not match "
                         f"config dim {config.dim}")
    if data0.weights is not None or data1.weights is not None:
        raise DomainError("bridge_iteration expects uniform data batches")

    inst = config.instantiation
    it = state.iteration
    train_reverse = inst == "dsbm" and it % 2 == 1

    if inst == "cfm_independent":
        pair_source, state.coupling_kind = _minibatch_pairs(data0, data1), "independent"
    elif inst == "ot_cfm":
        if config.coupling_refresh == "per_step":
            pair_source = _ot_minibatch_pairs(data0, data1)
        else:
            pair_source = _plan_pairs(exact_ot_coupling(data0, data1))
        state.coupling_kind = "exact_ot"
    elif inst == "sb_cfm":
        if config.coupling_refresh == "per_step":
            pair_source = _sinkhorn_minibatch_pairs(data0, data1, config.sigma_ref)
        else:
            pair_source = _plan_pairs(sinkhorn_coupling(data0, data1, config.sigma_ref))
        state.coupling_kind = "sinkhorn"
    elif inst == "imf":
        if it == 0:
            pair_source, state.coupling_kind = _minibatch_pairs(data0, data1), "independent"
        else:
            plan = _model_pool(state, config, data0, "forward")
            pair_source = _pool_pairs(plan.batch0.points, plan.batch1.points)
            state.coupling_kind = "model_forward"
    else:  # dsbm
        if it == 0:
            # no reverse net exists yet; start from the independent coupling
            pair_source, state.coupling_kind = _minibatch_pairs(data0, data1), "independent"
        elif train_reverse:
            plan = _model_pool(state, config, data0, "forward")
            pair_source = _pool_pairs(plan.batch0.points, plan.batch1.points)
            state.coupling_kind = "model_forward"
        else:
            plan = _model_pool(state, config, data1, "reverse")
            pair_source = _pool_pairs(plan.batch0.points, plan.batch1.points)
            state.coupling_kind = "model_reverse"

    key = "reverse" if train_reverse else "forward"
    drift = config.make_drift("doob_reverse" if train_reverse else None)
    losses = train_regression(state.nets[key], pair_source, config.make_path(),
                              drift, steps=config.inner_steps,
                              batch_size=config.batch_size, lr=config.lr,
                              rng=rng, t_clip=config.t_clip,
                              state=state.opt[key])
    tail = losses[-min(100, losses.size):]
    state.history.append(MetricRecord("train_loss", it, float(tail.mean())))
    state.iteration = it + 1
    return state


def _draw_batch(source, n: int, rng: np.random.Generator) -> SampleBatch:
    if isinstance(source, EndpointDistribution):
        return sample_distribution(source, n, rng)
    if isinstance(source, SampleBatch):
        if source.weights is not None:
            raise DomainError("fixed data sources must be uniform batches")
        idx = rng.integers(0, source.n, size=n)
        return SampleBatch(source.points[idx])
    raise ConfigError(f"data source must be an EndpointDistribution or "
                      f"SampleBatch, got {type(source).__name__}")


def evaluate_state(state: BridgeState, config: BridgeConfig,
                   source0, source1, iteration: int) -> list[MetricRecord]:
    """Terminal-marginal energy distances under common random numbers.

    The eval streams are keyed by purpose only, never by iteration, so an
    iteration-to-iteration metric change reflects the nets alone.
    """
    x0 = _draw_batch(source0, config.eval_n, make_generator(config.seed, DOMAIN_EVAL, 0))
    x1 = _draw_batch(source1, config.eval_n, make_generator(config.seed, DOMAIN_EVAL, 2))
    push1 = simulate_endpoints(state.forward.drift_fn(), x0.points,
                               config.effective_sigma, config.sim_steps,
                               make_generator(config.seed, DOMAIN_EVAL, 1),
                               direction="forward")
    records = [MetricRecord("terminal_ed", iteration,
                            energy_distance(SampleBatch(push1), x1))]
    if state.reverse is not None:
        push0 = simulate_endpoints(state.reverse.drift_fn(), x1.points,
                                   config.effective_sigma, config.sim_steps,
                                   make_generator(config.seed, DOMAIN_EVAL, 3),
                                   direction="reverse")
        records.append(MetricRecord("source_ed", iteration,
                                    energy_distance(SampleBatch(push0), x0)))
    return records


def run(config: BridgeConfig, source0, source1) -> BridgeState:
    """Full loop: outer_iters bridge iterations plus per-iteration eval.

    Sources may be EndpointDistribution specs (sampled afresh each
    iteration) or fixed uniform SampleBatch data (bootstrapped).
    Returns the final state; metric history rides on it.
    """
    state = init_state(config)
    for it in range(config.outer_iters):
        data0 = _draw_batch(source0, config.data_n,
                            make_generator(config.seed, DOMAIN_DATA, it, 0))
        data1 = _draw_batch(source1, config.data_n,
                            make_generator(config.seed, DOMAIN_DATA, it, 1))
        bridge_iteration(state, config, data0, data1,
                         make_generator(config.seed, DOMAIN_TRAIN, it))
        state.history.extend(evaluate_state(state, config, source0, source1, it))
    return state
