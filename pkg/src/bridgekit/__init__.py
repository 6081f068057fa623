"""Diffusion bridge matching toolkit.

Learns a drift network that transports one sample cloud to another by
regressing on conditional bridge drifts, with couplings ranging from
independent pairs to mini-batch optimal transport and iterative
Schrodinger-bridge refinement.
"""
from .checks import CheckResult, run_all
from .config import RunConfig, execute_run, load_run_config, make_lr
from .core import (
    ConditionalDrift,
    DiffusionConfig,
    PinnedPathSpec,
    SampleBatch,
    brownian_bridge_path,
    custom_path,
    eval_conditional_drift,
    kinetic_drift,
    linear_path,
    pinned_mean_std,
    sample_pinned,
)
from .coupling import (
    Coupling,
    exact_ot_coupling,
    independent_coupling,
    sample_pairs,
    sinkhorn_coupling,
)
from .errors import (
    BridgeKitError,
    ConfigError,
    ConvergenceError,
    DataError,
    DensityUnderflowError,
    DomainError,
    IntegrationError,
    ShapeError,
)
from .estimator import BridgeMatcher
from .matching import BridgeConfig, BridgeState, evaluate_state, run
from .metrics import (
    MetricRecord,
    energy_distance,
    gaussian_eot_oracle,
    marginal_drift_oracle,
    path_kinetic_energy,
    same_distribution_baseline,
)
from .net import DriftNetwork, load_checkpoint, save_checkpoint, train_regression
from .rng import make_generator
from .sim import TimeGrid, euler_maruyama, simulate_batch, simulate_endpoints

__version__ = "0.1.0"
