"""Command-line entry point.

Subcommands::

    dufm train     --config PATH --out DIR [--seed N]
    dufm optimum   --layers L --n N --lambda-h F --lambda-w F[,F...]
    dufm construct --config PATH --out DIR
    dufm verify    --lemma NAME|all [--trials T] [--seed N] [--tol F]
    dufm ablate    --config PATH --out DIR [--jobs J]

Exit codes: 0 success, 1 usage or config error, 2 divergence, 3 regime
mismatch. Diagnostics go to standard error at the level named by the
``DUFM_LOG`` environment variable (``quiet``, ``info`` or ``debug``).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import oracles, theory
from .linalg import PRNG_NAME
from .metrics import layer_metrics
from .model import DufmDims, RegConfig, forward, gradient, loss
from .trainer import ABLATION_AXES, DivergenceError, TrainConfig, ablate, ablation_plan, dump_json, train, write_run

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_REGIME = 0, 1, 2, 3

CONSTRUCT_TOL = 1e-8

log = logging.getLogger("dufm")

MODEL_KEYS = {"layers", "width", "widths", "n", "lambda_h", "lambda_w"}
TRAIN_KEYS = {"lr", "steps", "log_every", "seed", "save_params", "weight_gain", "h1_std", "stop_rel_gap"}
SWEEP_KEY = "sweep"


class ConfigError(ValueError):
    pass


def _setup_logging():
    level = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
    name = os.environ.get("DUFM_LOG", "info").strip().lower()
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("dufm")
    root.handlers[:] = [handler]
    root.setLevel(level.get(name, logging.INFO))
    root.propagate = False
    if name not in level:
        root.warning("unknown DUFM_LOG value %r, using info", name)


# ---------------------------------------------------------------- config parsing


def _typed(doc: dict, key: str, kind, default=None, required=False):
    if key not in doc:
        if required:
            raise ConfigError(f"missing required key {key!r}")
        return default
    v = doc[key]
    if kind is float:
        ok = isinstance(v, (int, float)) and not isinstance(v, bool)
        v = float(v) if ok else v
    elif kind is int:
        ok = isinstance(v, int) and not isinstance(v, bool)
    elif kind is bool:
        ok = isinstance(v, bool)
    else:
        ok = isinstance(v, kind)
    if not ok:
        raise ConfigError(f"key {key!r} must be of type {kind.__name__}, got {v!r}")
    return v


def _float_list(doc: dict, key: str, L: int) -> tuple[float, ...]:
    v = doc.get(key)
    vals = v if isinstance(v, list) else [v]
    if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in vals):
        raise ConfigError(f"key {key!r} must be a number or a list of numbers, got {v!r}")
    if len(vals) == 1:
        vals = vals * L
    if len(vals) != L:
        raise ConfigError(f"key {key!r} needs 1 or {L} values, got {len(vals)}")
    return tuple(float(x) for x in vals)


def parse_config(doc, allow_sweep: bool = False) -> tuple[TrainConfig, dict | None]:
    """Strictly parse a JSON config into a :class:`TrainConfig` (and sweep block)."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    allowed = MODEL_KEYS | TRAIN_KEYS | ({SWEEP_KEY} if allow_sweep else set())
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"unknown config key {key!r}")
    L = _typed(doc, "layers", int, required=True)
    n = _typed(doc, "n", int, required=True)
    if "width" in doc and "widths" in doc:
        raise ConfigError("give either 'width' or 'widths', not both")
    if "widths" in doc:
        d = doc["widths"]
        if not isinstance(d, list) or not all(isinstance(x, int) and not isinstance(x, bool) for x in d):
            raise ConfigError(f"key 'widths' must be a list of integers, got {d!r}")
    else:
        d = [_typed(doc, "width", int, required=True)] * max(L, 0)
    _typed(doc, "lambda_h", float, required=True)
    if "lambda_w" not in doc:
        raise ConfigError("missing required key 'lambda_w'")
    try:
        dims = DufmDims(L, tuple(d), n)
    except ValueError as e:
        raise ConfigError(f"key 'layers'/'width'/'n': {e}") from None
    lw = _float_list(doc, "lambda_w", L)
    try:
        reg = RegConfig(float(doc["lambda_h"]), lw)
    except ValueError as e:
        raise ConfigError(f"key 'lambda_h'/'lambda_w': {e}") from None
    kw = {}
    for key, kind in (("lr", float), ("steps", int), ("log_every", int), ("seed", int), ("save_params", bool), ("weight_gain", float), ("h1_std", float)):
        if key in doc:
            kw[key] = _typed(doc, key, kind)
    if doc.get("stop_rel_gap") is not None:
        kw["stop_rel_gap"] = _typed(doc, "stop_rel_gap", float)
    if "lr" in kw and kw["lr"] < 0:
        raise ConfigError(f"key 'lr' must be non-negative, got {kw['lr']!r}")
    for key in ("steps", "log_every"):
        if key in kw and kw[key] < 1:
            raise ConfigError(f"key {key!r} must be a positive integer, got {kw[key]!r}")
    try:
        cfg = TrainConfig(dims, reg, **kw)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    sweep = None
    if allow_sweep:
        sweep = doc.get(SWEEP_KEY)
        if not isinstance(sweep, dict) or not sweep:
            raise ConfigError("key 'sweep' must be a non-empty object")
        for axis, values in sweep.items():
            if axis not in ABLATION_AXES:
                raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {list(ABLATION_AXES)}")
            if not isinstance(values, list) or not values:
                raise ConfigError(f"sweep axis {axis!r} needs a non-empty list of values")
    return cfg, sweep


def _load(path: str, allow_sweep: bool = False):
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from None
    return parse_config(doc, allow_sweep)


# ---------------------------------------------------------------- subcommands


def cmd_train(args) -> int:
    cfg, _ = _load(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    result = train(cfg)
    out = write_run(result, Path(args.out) / "run-0")
    log.info("wrote %s", out)
    return EXIT_OK


def cmd_optimum(args) -> int:
    try:
        lw = [float(x) for x in args.lambda_w.split(",")]
    except ValueError:
        raise ConfigError(f"--lambda-w must be comma-separated numbers, got {args.lambda_w!r}") from None
    if len(lw) == 1:
        lw = lw * args.layers
    if len(lw) != args.layers:
        raise ConfigError(f"--lambda-w needs 1 or {args.layers} values, got {len(lw)}")
    try:
        dims = DufmDims.uniform(args.layers, 2, args.n)
        reg = RegConfig(args.lambda_h, tuple(lw))
    except ValueError as e:
        raise ConfigError(str(e)) from None
    report = theory.theoretical_optimum(dims, reg)
    sys.stdout.write(dump_json(report.to_dict()))
    return EXIT_OK


def _construct_checks(metrics, L: int) -> list[str]:
    failures = []
    for m in metrics:
        l = m.layer
        for name in ("dnc1_pre", "dnc1_post"):
            v = getattr(m, name)
            if v is not None and v > CONSTRUCT_TOL:
                failures.append(f"{name} layer {l} = {v!r}")
        if l >= 2 and (m.dnc2_post is None or abs(m.dnc2_post - 1) > CONSTRUCT_TOL):
            failures.append(f"dnc2_post layer {l} = {m.dnc2_post!r}")
        if l >= 3 and (m.dnc2_pre is None or abs(m.dnc2_pre - 1) > CONSTRUCT_TOL):
            failures.append(f"dnc2_pre layer {l} = {m.dnc2_pre!r}")
        if l >= 2 and m.dnc3 > CONSTRUCT_TOL:
            failures.append(f"dnc3 layer {l} = {m.dnc3!r}")
    return failures


def cmd_construct(args) -> int:
    cfg, _ = _load(args.config)
    dims, reg = cfg.dims, cfg.reg
    report = theory.theoretical_optimum(dims, reg)
    if report.regime != theory.COLLAPSE:
        log.error("regime is %r; a collapsed optimum exists only below the threshold", report.regime)
        return EXIT_REGIME
    params = theory.construct_collapsed_solution(dims, reg, report)
    value = loss(params, dims, reg).total
    gap = (value - report.optimal_loss) / report.optimal_loss
    grad_norm = float(np.sqrt(gradient(params, dims, reg).sq_norm()))
    metrics = layer_metrics(forward(params, dims), params, dims)
    failures = _construct_checks(metrics, dims.L)
    if not abs(gap) < CONSTRUCT_TOL:
        failures.append(f"relative gap {gap!r}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "params.json").write_text(dump_json({"dims": dims.to_dict(), "seed": None, **params.to_dict()}))
    doc = {
        "loss": value,
        "optimum": report.to_dict(),
        "gap": value - report.optimal_loss,
        "rel_gap": gap,
        "grad_norm": grad_norm,
        "metrics": [m.to_dict() for m in metrics],
        "passed": not failures,
        "failures": failures,
    }
    (out / "report.json").write_text(dump_json(doc))
    for f in failures:
        log.error("construction check failed: %s", f)
    return EXIT_OK if not failures else EXIT_CONFIG


def cmd_verify(args) -> int:
    names = list(oracles.LEMMAS) if args.lemma == "all" else [args.lemma]
    if any(n not in oracles.LEMMAS for n in names):
        raise ConfigError(f"unknown lemma {args.lemma!r}; expected one of {list(oracles.LEMMAS) + ['all']}")
    if args.trials is not None and args.trials < 1:
        raise ConfigError("--trials must be at least 1")
    ok = True
    for name in names:
        rep = oracles.run_verifier(name, args.trials, args.seed, args.tol)
        log.info("%s: passed=%s max_rel_error=%.3e", name, rep.passed, rep.max_rel_error)
        sys.stdout.write(json.dumps(rep.to_dict(), sort_keys=True, default=_np_default) + "\n")
        sys.stdout.flush()
        ok &= rep.passed
    return EXIT_OK if ok else EXIT_CONFIG


def _np_default(o):
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def cmd_ablate(args) -> int:
    cfg, sweep = _load(args.config, allow_sweep=True)
    try:
        plan = ablation_plan(cfg, sweep)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    results = ablate(cfg, sweep, jobs=args.jobs)
    out = Path(args.out)
    axes = list(plan[0][0])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run", *axes, "run_seed", "final_loss", "optimum_gap", "regime"])
    for i, ((values, run_cfg), res) in enumerate(zip(plan, results)):
        write_run(res, out / f"run-{i}")
        w.writerow([i, *(values[a] for a in axes), run_cfg.seed, format(res.final_loss, ".17g"), format(res.optimum_gap, ".17g"), res.optimum.regime])
    out.mkdir(parents=True, exist_ok=True)
    (out / "index.csv").write_text(buf.getvalue())
    log.info("wrote %d runs to %s", len(results), out)
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dufm", description="Deep unconstrained features model toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run gradient descent from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    o = sub.add_parser("optimum", help="print the global optimum as JSON")
    o.add_argument("--layers", type=int, required=True)
    o.add_argument("--n", type=int, required=True)
    o.add_argument("--lambda-h", type=float, required=True)
    o.add_argument("--lambda-w", required=True, help="one value or L comma-separated values")
    o.set_defaults(func=cmd_optimum)

    c = sub.add_parser("construct", help="write an explicit collapsed global minimizer")
    c.add_argument("--config", required=True)
    c.add_argument("--out", required=True, help="directory for params.json and report.json")
    c.set_defaults(func=cmd_construct)

    v = sub.add_parser("verify", help="check closed forms against numerical search")
    v.add_argument("--lemma", required=True, help=f"one of {', '.join(oracles.LEMMAS)} or all")
    v.add_argument("--trials", type=int)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--tol", type=float)
    v.set_defaults(func=cmd_verify)

    a = sub.add_parser("ablate", help="run a sweep of training runs")
    a.add_argument("--config", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--jobs", type=int, default=1)
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG
    log.debug("prng %s", PRNG_NAME)
    try:
        return args.func(args)
    except ConfigError as e:
        log.error("config error: %s", e)
        return EXIT_CONFIG
    except DivergenceError as e:
        log.error("%s", e)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
