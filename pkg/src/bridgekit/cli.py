"""Command-line front end: run, sample, check, datasets.

Exit codes: 0 success, 1 runtime failure, 2 configuration or usage
error.  Heavy imports happen inside handlers so the --threads flag can
pin the BLAS thread count before numpy loads.
"""

from __future__ import annotations

import argparse
import os
import sys

ENV_SEED = "BRIDGEKIT_SEED"
_THREAD_VARS = ("OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "OMP_NUM_THREADS", "NUMEXPR_NUM_THREADS")

# rng keys for CLI sampling entry points
_SAMPLE_KEY = 301
_DATASETS_KEY = 401

DATASET_CLI_KINDS = ("gaussian", "eight_gaussians", "two_moons", "checkerboard")


def _set_threads(n: int) -> None:
    for var in _THREAD_VARS:
        os.environ[var] = str(n)


def _env_seed() -> int | None:
    raw = os.environ.get(ENV_SEED)
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        from .errors import ConfigError
        raise ConfigError(f"{ENV_SEED} must be an integer, got {raw!r}")


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def cmd_run(args, seed_override) -> int:
    from .config import execute_run, load_run_config
    from .errors import BridgeKitError, ConfigError
    try:
        cfg = load_run_config(args.config, seed_override=seed_override)
    except ConfigError as exc:
        return _fail(str(exc), 2)
    try:
        paths = execute_run(cfg)
    except ConfigError as exc:
        return _fail(str(exc), 2)
    except BridgeKitError as exc:
        return _fail(str(exc), 1)
    print(f"run complete: {cfg.bridge.instantiation}, "
          f"{cfg.bridge.outer_iters} outer iterations, seed {cfg.bridge.seed}")
    for name in sorted(paths):
        print(f"  {name}: {paths[name]}")
    return 0


def cmd_sample(args, seed_override) -> int:
    from . import data as data_mod
    from .config import run_config_from_dict
    from .errors import BridgeKitError, ConfigError, DataError
    from .net import load_checkpoint
    from .rng import make_generator
    from .sim import simulate_endpoints
    import numpy as np

    try:
        nets, meta = load_checkpoint(args.checkpoint)
    except DataError as exc:
        return _fail(str(exc), 2)
    raw = meta.get("extra", {}).get("run_config")
    if raw is None:
        return _fail(f"{args.checkpoint} has no embedded run config", 2)
    try:
        cfg = run_config_from_dict(raw, seed_override=seed_override)
    except ConfigError as exc:
        return _fail(f"embedded run config is invalid: {exc}", 2)
    reverse = args.direction == "rev"
    if reverse and "reverse" not in nets:
        return _fail("checkpoint has no reverse net; sample --direction rev "
                     "needs a dsbm checkpoint", 2)
    if args.n == 0:
        data_mod.write_points_csv(args.out, np.empty((0, cfg.bridge.dim)),
                                  dim=cfg.bridge.dim)
        print(f"wrote 0 samples to {args.out}")
        return 0
    try:
        source = cfg.source1 if reverse else cfg.source0
        start = data_mod.sample(source, args.n,
                                make_generator(cfg.bridge.seed, _SAMPLE_KEY, 0))
        net = nets["reverse" if reverse else "forward"]
        pts = simulate_endpoints(net.drift_fn(), start.points,
                                 cfg.bridge.effective_sigma,
                                 cfg.bridge.sim_steps,
                                 make_generator(cfg.bridge.seed, _SAMPLE_KEY, 1),
                                 direction="reverse" if reverse else "forward")
        data_mod.write_points_csv(args.out, pts)
    except BridgeKitError as exc:
        return _fail(str(exc), 1)
    print(f"wrote {args.n} samples to {args.out}")
    return 0


def cmd_check(args, seed_override) -> int:
    from . import checks
    results = checks.run_all(fast=args.fast, log=print)
    return 0 if all(r.passed for r in results) else 1


def cmd_datasets(args, seed_override) -> int:
    from . import data as data_mod
    from .errors import BridgeKitError
    from .rng import make_generator
    factories = {"gaussian": lambda: data_mod.gaussian([0.0, 0.0], 1.0),
                 "eight_gaussians": data_mod.eight_gaussians,
                 "two_moons": data_mod.two_moons,
                 "checkerboard": data_mod.checkerboard}
    seed = seed_override if seed_override is not None else args.seed
    try:
        batch = data_mod.sample(factories[args.kind](), args.n,
                                make_generator(seed, _DATASETS_KEY))
        data_mod.write_points_csv(args.out, batch.points)
    except BridgeKitError as exc:
        return _fail(str(exc), 1)
    print(f"wrote {args.n} {args.kind} points to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bridgekit",
        description="Bridge-matching runs, sampling, datasets, and self checks.")
    parser.add_argument("--threads", type=int, default=1, metavar="N",
                        help="BLAS/OpenMP thread cap (default 1, the "
                             "deterministic test configuration)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train from a JSON config")
    p_run.add_argument("config", help="path to the run config JSON")
    p_run.set_defaults(handler=cmd_run)

    p_sample = sub.add_parser("sample", help="sample endpoints from a checkpoint")
    p_sample.add_argument("checkpoint")
    p_sample.add_argument("--n", type=int, required=True)
    p_sample.add_argument("--direction", choices=("fwd", "rev"), default="fwd")
    p_sample.add_argument("--out", required=True)
    p_sample.set_defaults(handler=cmd_sample)

    p_check = sub.add_parser("check", help="run the acceptance self checks")
    p_check.add_argument("--fast", action="store_true",
                         help="only the sub-3-minute subset")
    p_check.set_defaults(handler=cmd_check)

    p_data = sub.add_parser("datasets", help="export a toy dataset as CSV")
    p_data.add_argument("--kind", choices=DATASET_CLI_KINDS, required=True)
    p_data.add_argument("--n", type=int, required=True)
    p_data.add_argument("--out", required=True)
    p_data.add_argument("--seed", type=int, default=0)
    p_data.set_defaults(handler=cmd_datasets)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        return _fail("--threads must be >= 1", 2)
    _set_threads(args.threads)
    from .errors import ConfigError
    try:
        seed_override = _env_seed()
    except ConfigError as exc:
        return _fail(str(exc), 2)
    return args.handler(args, seed_override)


if __name__ == "__main__":
    sys.exit(main())
