"""JSON run configuration: parse, validate, serialize, execute.

A run config is one JSON document holding the driver settings plus the
two endpoint dataset specs and the export options.  Parsing is strict:
unknown keys are errors, and serialize(parse(x)) is a fixed point.
"""

from __future__ import annotations

import bisect
import dataclasses
import json
import os

import numpy as np

from . import data
from .errors import ConfigError
from .matching import BridgeConfig, run
from .metrics import write_metrics_csv
from .net import save_checkpoint
from .rng import make_generator
from .sim import TimeGrid, export_trajectories_csv, simulate_batch

CHECKPOINT_NAME = "checkpoint.npz"
METRICS_NAME = "metrics.csv"

# rng keys for the export phase, disjoint from the driver's domains
_EXPORT_SAMPLES_KEY = 201
_EXPORT_TRAJ_KEY = 202

_BRIDGE_KEYS = ("instantiation", "dim", "outer_iters", "inner_steps",
                "batch_size", "data_n", "pool_n", "sim_steps", "eval_n",
                "sigma_ref", "sigma", "sigma_min", "hidden", "activation",
                "lr", "t_clip", "seed", "coupling_refresh", "path_kind",
                "drift_kind")
_RUN_KEYS = _BRIDGE_KEYS + ("source0", "source1", "out_dir", "sample_times",
                            "export_n", "export_trajectories")


def make_lr(spec):
    """A float stays a float; {"stages": [...], "boundaries": [...]} becomes
    a piecewise-constant schedule over gradient steps."""
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        if spec <= 0:
            raise ConfigError(f"lr must be > 0, got {spec}")
        return float(spec)
    if isinstance(spec, dict):
        extra = set(spec) - {"stages", "boundaries"}
        if extra:
            raise ConfigError(f"unknown lr keys {sorted(extra)}")
        stages = [float(v) for v in spec.get("stages", [])]
        bounds = [int(b) for b in spec.get("boundaries", [])]
        if len(stages) != len(bounds) + 1:
            raise ConfigError(f"lr needs len(stages) == len(boundaries) + 1, "
                              f"got {len(stages)} and {len(bounds)}")
        if any(v <= 0 for v in stages):
            raise ConfigError("lr stages must be > 0")
        if any(b <= 0 for b in bounds) or bounds != sorted(bounds):
            raise ConfigError("lr boundaries must be positive and increasing")
        return lambda step: stages[bisect.bisect_right(bounds, step)]
    raise ConfigError(f"lr must be a number or a stages/boundaries object, "
                      f"got {type(spec).__name__}")


def parse_dataset(obj) -> data.EndpointDistribution:
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ConfigError("dataset spec must be an object with a 'kind' key")
    kind = obj["kind"]
    args = {k: v for k, v in obj.items() if k != "kind"}

    def take(allowed):
        extra = set(args) - set(allowed)
        if extra:
            raise ConfigError(f"dataset kind {kind!r}: unknown keys {sorted(extra)}")

    if kind == "gaussian":
        take({"mean", "std"})
        return data.gaussian(args.get("mean", [0.0]), args.get("std", 1.0))
    if kind == "gaussian_mixture":
        take({"means", "stds", "weights"})
        try:
            return data.gaussian_mixture(args["means"], args["stds"], args["weights"])
        except KeyError as exc:
            raise ConfigError(f"gaussian_mixture needs {exc.args[0]!r}") from exc
    if kind == "eight_gaussians":
        take(())
        return data.eight_gaussians()
    if kind == "two_moons":
        take({"noise"})
        return data.two_moons(noise=args.get("noise", 0.05))
    if kind == "checkerboard":
        take(())
        return data.checkerboard()
    if kind == "point_mass":
        take({"point"})
        if "point" not in args:
            raise ConfigError("point_mass needs 'point'")
        return data.point_mass(args["point"])
    if kind == "file":
        take({"path", "dim"})
        if "path" not in args or "dim" not in args:
            raise ConfigError("file dataset needs 'path' and 'dim'")
        return data.from_file(args["path"], int(args["dim"]))
    raise ConfigError(f"unknown dataset kind {kind!r}")


def dataset_to_dict(dist: data.EndpointDistribution) -> dict:
    if dist.kind == "gaussian":
        return {"kind": "gaussian", "mean": list(dist.mean), "std": dist.std}
    if dist.kind == "gaussian_mixture":
        return {"kind": "gaussian_mixture",
                "means": [list(m) for m in dist.means],
                "stds": list(dist.stds), "weights": list(dist.weights)}
    if dist.kind == "two_moons":
        return {"kind": "two_moons", "noise": dist.noise}
    if dist.kind == "checkerboard":
        return {"kind": "checkerboard"}
    if dist.kind == "point_mass":
        return {"kind": "point_mass", "point": list(dist.point)}
    return {"kind": "file", "path": dist.path, "dim": dist.dim}


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """A parsed run document: driver config, sources, export options."""

    bridge: BridgeConfig
    lr_spec: object
    source0: data.EndpointDistribution
    source1: data.EndpointDistribution
    out_dir: str
    sample_times: tuple[float, ...] = (1.0,)
    export_n: int = 1024
    export_trajectories: bool = False

    def __post_init__(self):
        if self.source0.dim != self.bridge.dim or self.source1.dim != self.bridge.dim:
            raise ConfigError(f"dataset dims ({self.source0.dim}, "
                              f"{self.source1.dim}) do not match dim "
                              f"{self.bridge.dim}")
        for t in self.sample_times:
            if not 0.0 < t <= 1.0:
                raise ConfigError(f"sample_times entries must lie in (0, 1], got {t}")
        if self.export_n < 1:
            raise ConfigError(f"export_n must be >= 1, got {self.export_n}")


def run_config_from_dict(obj: dict, seed_override: int | None = None) -> RunConfig:
    if not isinstance(obj, dict):
        raise ConfigError("run config must be a JSON object")
    unknown = set(obj) - set(_RUN_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    for key in ("instantiation", "dim", "source0", "source1", "out_dir"):
        if key not in obj:
            raise ConfigError(f"config is missing {key!r}")
    bridge_kw = {k: obj[k] for k in _BRIDGE_KEYS if k in obj}
    lr_spec = bridge_kw.get("lr", BridgeConfig.__dataclass_fields__["lr"].default)
    bridge_kw["lr"] = make_lr(lr_spec)
    if seed_override is not None:
        bridge_kw["seed"] = int(seed_override)
    if "hidden" in bridge_kw:
        bridge_kw["hidden"] = tuple(bridge_kw["hidden"])
    try:
        bridge = BridgeConfig(**bridge_kw)
    except TypeError as exc:
        raise ConfigError(f"bad config value: {exc}") from exc
    return RunConfig(bridge=bridge, lr_spec=lr_spec,
                     source0=parse_dataset(obj["source0"]),
                     source1=parse_dataset(obj["source1"]),
                     out_dir=str(obj["out_dir"]),
                     sample_times=tuple(float(t) for t in obj.get("sample_times", (1.0,))),
                     export_n=int(obj.get("export_n", 1024)),
                     export_trajectories=bool(obj.get("export_trajectories", False)))


def run_config_to_dict(cfg: RunConfig) -> dict:
    bridge = cfg.bridge
    out = {k: getattr(bridge, k) for k in _BRIDGE_KEYS if k != "lr"}
    out["hidden"] = list(bridge.hidden)
    out["lr"] = cfg.lr_spec
    out.update(source0=dataset_to_dict(cfg.source0),
               source1=dataset_to_dict(cfg.source1),
               out_dir=cfg.out_dir, sample_times=list(cfg.sample_times),
               export_n=cfg.export_n,
               export_trajectories=cfg.export_trajectories)
    return out


def load_run_config(path, seed_override: int | None = None) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return run_config_from_dict(obj, seed_override=seed_override)


def execute_run(cfg: RunConfig) -> dict:
    """Train per the config and write metrics, checkpoint, and exports.

    Returns the written paths keyed by artifact name.
    """
    os.makedirs(cfg.out_dir, exist_ok=True)
    state = run(cfg.bridge, cfg.source0, cfg.source1)

    paths = {"metrics": os.path.join(cfg.out_dir, METRICS_NAME),
             "checkpoint": os.path.join(cfg.out_dir, CHECKPOINT_NAME)}
    write_metrics_csv(paths["metrics"], state.history)
    save_checkpoint(paths["checkpoint"], state.nets,
                    extra={"run_config": run_config_to_dict(cfg)})

    seed = cfg.bridge.seed
    x0 = data.sample(cfg.source0, cfg.export_n,
                     make_generator(seed, _EXPORT_SAMPLES_KEY, 0)).points
    fn = state.forward.drift_fn()
    for i, t_end in enumerate(cfg.sample_times):
        grid = TimeGrid(n_steps=max(1, round(cfg.bridge.sim_steps * t_end)),
                        t_start=0.0, t_end=t_end)
        pts = simulate_batch(fn, x0, cfg.bridge.effective_sigma, grid,
                             make_generator(seed, _EXPORT_SAMPLES_KEY, 1 + i))
        name = f"samples_t{t_end:g}.csv"
        data.write_points_csv(os.path.join(cfg.out_dir, name), pts)
        paths[name] = os.path.join(cfg.out_dir, name)

    if cfg.export_trajectories:
        n_traj = min(64, cfg.export_n)
        grid = TimeGrid(n_steps=cfg.bridge.sim_steps)
        _, bundle = simulate_batch(fn, x0[:n_traj], cfg.bridge.effective_sigma,
                                   grid, make_generator(seed, _EXPORT_TRAJ_KEY),
                                   return_trajectories=True)
        paths["trajectories"] = os.path.join(cfg.out_dir, "trajectories.csv")
        export_trajectories_csv(paths["trajectories"], grid.times(), bundle)
    return paths
