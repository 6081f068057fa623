"""scikit-learn facade: fit a bridge on (source, target) sample arrays.

``BridgeMatcher.fit(X, y)`` learns the drift network(s); ``transform``
pushes new source points through the learned dynamics.  Numerics never
call into scikit-learn; it only supplies the estimator protocol.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .core import SampleBatch
from .errors import ConfigError
from .matching import BridgeConfig, run
from .metrics import energy_distance
from .rng import make_generator
from .sim import simulate_endpoints

# rng keys local to the estimator surface, distinct from the driver domains
_TRANSFORM_KEY = 101
_SCORE_KEY = 102


def _as_samples(arr, name: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError(f"{name} must be a non-empty 2-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


class BridgeMatcher(BaseEstimator, TransformerMixin):
    """Learn a stochastic (or ODE) map from source samples to target samples.

    Parameters mirror BridgeConfig; they are stored verbatim so
    get_params/set_params/clone behave as scikit-learn expects, and are
    validated only at fit time.

    Attributes (after fit): ``config_``, ``state_``, ``history_``,
    ``n_features_in_``.
    """

    def __init__(self, instantiation="ot_cfm", outer_iters=5, inner_steps=500,
                 batch_size=128, data_n=None, pool_n=None, sim_steps=100,
                 eval_n=512, sigma_ref=1.0, sigma_min=0.01,
                 hidden=(64, 64), activation="silu", lr=1e-3, t_clip=1e-3,
                 coupling_refresh="per_step", random_state=0):
        self.instantiation = instantiation
        self.outer_iters = outer_iters
        self.inner_steps = inner_steps
        self.batch_size = batch_size
        self.data_n = data_n
        self.pool_n = pool_n
        self.sim_steps = sim_steps
        self.eval_n = eval_n
        self.sigma_ref = sigma_ref
        self.sigma_min = sigma_min
        self.hidden = hidden
        self.activation = activation
        self.lr = lr
        self.t_clip = t_clip
        self.coupling_refresh = coupling_refresh
        self.random_state = random_state

    def fit(self, X, y=None):
        """X: source samples (n, d); y: target samples (m, d), required."""
        if y is None:
            raise ValueError("BridgeMatcher.fit needs target samples: fit(X, y)")
        X = _as_samples(X, "X")
        y = _as_samples(y, "y")
        if X.shape[1] != y.shape[1]:
            raise ValueError(f"X and y disagree on dimension: "
                             f"{X.shape[1]} vs {y.shape[1]}")
        data_n = self.data_n
        if data_n is None:
            data_n = min(4096, max(X.shape[0], y.shape[0]))
        eval_n = min(self.eval_n, X.shape[0], y.shape[0])
        self.config_ = BridgeConfig(
            instantiation=self.instantiation, dim=X.shape[1],
            outer_iters=self.outer_iters, inner_steps=self.inner_steps,
            batch_size=self.batch_size, data_n=data_n, pool_n=self.pool_n,
            sim_steps=self.sim_steps, eval_n=eval_n,
            sigma_ref=self.sigma_ref, sigma_min=self.sigma_min,
            hidden=tuple(self.hidden), activation=self.activation,
            lr=self.lr, t_clip=self.t_clip,
            coupling_refresh=self.coupling_refresh,
            seed=int(self.random_state or 0))
        self.state_ = run(self.config_, SampleBatch(X), SampleBatch(y))
        self.history_ = self.state_.history
        self.n_features_in_ = X.shape[1]
        return self

    def _push(self, X, which: str, direction: str, key: int) -> np.ndarray:
        check_is_fitted(self, "state_")
        net = self.state_.nets[which]
        X = _as_samples(X, "X")
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, "
                             f"got {X.shape[1]}")
        rng = make_generator(self.config_.seed, key)
        return simulate_endpoints(net.drift_fn(), X,
                                  self.config_.effective_sigma,
                                  self.config_.sim_steps, rng,
                                  direction=direction)

    def transform(self, X) -> np.ndarray:
        """Push source points to the target side of the bridge."""
        return self._push(X, "forward", "forward", _TRANSFORM_KEY)

    def inverse_transform(self, X) -> np.ndarray:
        """Target-to-source map; available after a dsbm fit only."""
        check_is_fitted(self, "state_")
        if self.state_.reverse is None:
            raise ConfigError("inverse_transform needs a reverse net; "
                              "fit with instantiation='dsbm'")
        return self._push(X, "reverse", "reverse", _TRANSFORM_KEY)

    def score(self, X, y) -> float:
        """Negative energy distance between transform(X) and y."""
        pushed = self._push(X, "forward", "forward", _SCORE_KEY)
        return -energy_distance(SampleBatch(pushed), SampleBatch(_as_samples(y, "y")))
