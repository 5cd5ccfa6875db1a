"""Full-batch gradient descent on the deep unconstrained features model.

A run draws an initialization from its seed, takes ``steps`` plain gradient
steps with a constant learning rate and logs losses and collapse metrics
every ``log_every`` steps. Runs are written to disk as::

    <out>/run-<idx>/manifest.json
    <out>/run-<idx>/metrics.csv
    <out>/run-<idx>/params.json      (when save_params is set)
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .linalg import PRNG_NAME, Rng
from .metrics import LayerMetrics, layer_metrics
from .model import DufmDims, DufmParams, RegConfig, _loss_from_trace, forward, init_params, label_matrix
from .theory import OptimumReport, theoretical_optimum

__all__ = [
    "ABLATION_AXES",
    "DivergenceError",
    "MetricsRecord",
    "RunResult",
    "TrainConfig",
    "ablate",
    "dump_json",
    "metrics_csv",
    "steps_to_gap",
    "sub_seed",
    "train",
    "write_run",
]

log = logging.getLogger(__name__)

ABLATION_AXES = ("width", "L", "weight_decay", "lr", "seed")
DIVERGENCE_FACTOR = 10.0
# lr 0.5 from the default init can overshoot for a single step at small
# weight decay; only a loss that stays above the factor counts as divergence
DIVERGENCE_PATIENCE = 10
MASK64 = (1 << 64) - 1


class DivergenceError(RuntimeError):
    def __init__(self, step: int, value: float, reason: str):
        super().__init__(f"training diverged at step {step}: total loss {value!r} ({reason})")
        self.step = step
        self.value = value


@dataclass(frozen=True)
class TrainConfig:
    """Everything that determines a run.

    ``weight_gain`` and ``h1_std`` scale the initialization; ``stop_rel_gap``
    ends the run at the first logged step whose relative optimum gap falls
    below it (off by default).
    """

    dims: DufmDims
    reg: RegConfig
    lr: float = 0.5
    steps: int = 100_000
    log_every: int = 100
    seed: int = 0
    save_params: bool = False
    weight_gain: float = 1.0
    h1_std: float = 1.0
    stop_rel_gap: float | None = None

    def __post_init__(self):
        if self.reg.L != self.dims.L:
            raise ValueError(f"expected {self.dims.L} weight regularizers, got {self.reg.L}")
        if not (math.isfinite(self.lr) and self.lr >= 0):
            raise ValueError(f"lr must be a non-negative finite number, got {self.lr}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps}")
        if int(self.log_every) != self.log_every or self.log_every < 1:
            raise ValueError(f"log_every must be a positive integer, got {self.log_every}")
        if self.log_every > self.steps:
            raise ValueError(f"log_every ({self.log_every}) must not exceed steps ({self.steps})")
        if int(self.seed) != self.seed:
            raise ValueError(f"seed must be an integer, got {self.seed}")
        if self.weight_gain <= 0 or self.h1_std <= 0:
            raise ValueError("weight_gain and h1_std must be positive")
        if self.stop_rel_gap is not None and not self.stop_rel_gap > 0:
            raise ValueError("stop_rel_gap must be positive when given")

    @classmethod
    def default(cls, L: int = 3, width: int = 64, n: int = 50, lam: float = 5e-4, **kw) -> TrainConfig:
        return cls(DufmDims.uniform(L, width, n), RegConfig.uniform(L, lam), **kw)

    def to_dict(self) -> dict:
        return {
            "dims": self.dims.to_dict(),
            "reg": self.reg.to_dict(),
            "lr": self.lr,
            "steps": self.steps,
            "log_every": self.log_every,
            "seed": self.seed,
            "save_params": self.save_params,
            "weight_gain": self.weight_gain,
            "h1_std": self.h1_std,
            "stop_rel_gap": self.stop_rel_gap,
        }


@dataclass
class MetricsRecord:
    step: int
    total: float
    fit: float
    reg_h1: float
    reg_w: list[float]
    layers: list[LayerMetrics]

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "total": self.total,
            "fit": self.fit,
            "reg_h1": self.reg_h1,
            "reg_w": list(self.reg_w),
            "layers": [m.to_dict() for m in self.layers],
        }


@dataclass
class RunResult:
    final_loss: float
    optimum_gap: float
    history: list[MetricsRecord]
    manifest: dict
    optimum: OptimumReport
    params: DufmParams | None = field(default=None, repr=False)

    @property
    def rel_gap(self) -> float:
        return self.optimum_gap / self.optimum.optimal_loss


def _step_grad(params: DufmParams, dims: DufmDims, reg: RegConfig, Y: np.ndarray):
    # forward, loss and backward in one pass; mirrors model.loss_and_gradient
    # but reuses the label matrix and hands back the trace for metrics
    # overflow only happens on diverging runs, which the caller detects
    with np.errstate(over="ignore", invalid="ignore"):
        trace = forward(params, dims)
        record = _loss_from_trace(trace, params, dims, reg)
        G = (trace.logits - Y) / dims.N
        W, A, H = params.W, trace.A, trace.H
        grads = [None] * dims.L
        for l in range(dims.L - 1, 0, -1):
            grads[l] = G @ A[l].T + reg.lambda_w[l] * W[l]
            G = (W[l].T @ G) * (H[l] > 0)
        grads[0] = G @ params.H1.T + reg.lambda_w[0] * W[0]
        gH1 = W[0].T @ G + reg.lambda_h1 * params.H1
    return trace, record, gH1, grads


def train(config: TrainConfig) -> RunResult:
    """Run gradient descent and return the logged history.

    Loss is evaluated at steps ``0..steps`` with an update after every
    evaluation except the last, so ``final_loss`` is the loss after
    ``steps`` updates. Records are taken at multiples of ``log_every`` and at
    the final step.
    """
    dims, reg = config.dims, config.reg
    optimum = theoretical_optimum(dims, reg)
    params = init_params(dims, Rng(config.seed), config.weight_gain, config.h1_std)
    Y = label_matrix(dims)
    history: list[MetricsRecord] = []
    start = time.perf_counter()
    initial = None
    above = 0
    step = 0
    record = None
    while True:
        trace, record, gH1, grads = _step_grad(params, dims, reg, Y)
        total = record.total
        if initial is None:
            initial = total
        if not math.isfinite(total):
            raise DivergenceError(step, total, "non-finite loss")
        above = above + 1 if total > DIVERGENCE_FACTOR * initial else 0
        if above >= DIVERGENCE_PATIENCE:
            raise DivergenceError(step, total, f"above {DIVERGENCE_FACTOR:g}x the initial loss {initial!r} for {above} steps")
        last = step == config.steps
        if step % config.log_every == 0 or last:
            history.append(MetricsRecord(step, total, record.fit, record.reg_h1, list(record.reg_w), layer_metrics(trace, params, dims)))
            log.debug("step %d total %.12g", step, total)
            gap = (total - optimum.optimal_loss) / optimum.optimal_loss
            if config.stop_rel_gap is not None and gap < config.stop_rel_gap:
                last = True
        if last:
            break
        lr = config.lr
        params.H1 -= lr * gH1
        for w, g in zip(params.W, grads):
            w -= lr * g
        step += 1
    elapsed = time.perf_counter() - start
    final = record.total
    gap = final - optimum.optimal_loss
    manifest = {
        "config": config.to_dict(),
        "seed": config.seed,
        "prng": PRNG_NAME,
        "version": __version__,
        "wall_clock_seconds": elapsed,
        "steps_run": step,
        "final_loss": final,
        "optimum_gap": gap,
        "optimal_loss": optimum.optimal_loss,
        "regime": optimum.regime,
    }
    log.info("seed %d: final loss %.12g, gap %.3e (%.1fs)", config.seed, final, gap, elapsed)
    return RunResult(final, gap, history, manifest, optimum, params if config.save_params else None)


def steps_to_gap(result: RunResult, rel_gap: float) -> int | None:
    """First logged step whose loss is within ``rel_gap`` (relative) of the optimum."""
    opt = result.optimum.optimal_loss
    for rec in result.history:
        if (rec.total - opt) / opt < rel_gap:
            return rec.step
    return None


# ---------------------------------------------------------------- ablation


def _mix64(x: int) -> int:
    # murmur3 finalizer; maps 0 to 0, so run 0 keeps the base seed
    x &= MASK64
    x ^= x >> 33
    x = (x * 0xFF51AFD7ED558CCD) & MASK64
    x ^= x >> 33
    x = (x * 0xC4CEB9FE1A85EC53) & MASK64
    x ^= x >> 33
    return x


def sub_seed(seed: int, index: int) -> int:
    """Seed for run ``index`` of a sweep: ``seed XOR mix64(index)``."""
    return (seed & MASK64) ^ _mix64(index)


def _apply_axis(config: TrainConfig, axis: str, value) -> TrainConfig:
    dims, reg = config.dims, config.reg
    if axis == "width":
        return replace(config, dims=DufmDims.uniform(dims.L, int(value), dims.n))
    if axis == "L":
        L = int(value)
        if len(set(dims.d)) != 1 or len(set(reg.lambda_w)) != 1:
            raise ValueError("an L sweep needs uniform widths and weight decay in the base config")
        return replace(config, dims=DufmDims.uniform(L, dims.d[0], dims.n), reg=RegConfig(reg.lambda_h1, (reg.lambda_w[0],) * L))
    if axis == "weight_decay":
        return replace(config, reg=RegConfig.uniform(dims.L, float(value)))
    if axis == "lr":
        return replace(config, lr=float(value))
    if axis == "seed":
        return replace(config, seed=int(value))
    raise ValueError(f"unknown sweep axis {axis!r}; expected one of {ABLATION_AXES}")


def _order_axes(sweep: dict) -> list[str]:
    # canonical axis order, so the run index does not depend on key order in the config;
    # a width applied before L survives because L keeps uniform widths
    for axis in sweep:
        if axis not in ABLATION_AXES:
            raise ValueError(f"unknown sweep axis {axis!r}; expected one of {ABLATION_AXES}")
    return sorted(sweep, key=ABLATION_AXES.index)


def ablation_plan(base: TrainConfig, sweep: dict) -> list[tuple[dict, TrainConfig]]:
    """Cartesian product of the sweep values as ``(axis values, config)`` pairs."""
    if not sweep or any(len(v) == 0 for v in sweep.values()):
        raise ValueError("sweep must name at least one axis, each with at least one value")
    axes = _order_axes(sweep)
    plan = []
    for i, combo in enumerate(itertools.product(*(sweep[a] for a in axes))):
        cfg = base
        for axis, value in zip(axes, combo):
            cfg = _apply_axis(cfg, axis, value)
        cfg = replace(cfg, seed=sub_seed(cfg.seed, i))
        plan.append((dict(zip(axes, combo)), cfg))
    return plan


def ablate(base: TrainConfig, sweep: dict, jobs: int = 1) -> list[RunResult]:
    """One independent run per combination of sweep values, in plan order."""
    plan = ablation_plan(base, sweep)
    configs = [cfg for _, cfg in plan]
    if jobs <= 1 or len(configs) == 1:
        results = [train(cfg) for cfg in configs]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, os.cpu_count() or 1)) as pool:
            results = list(pool.map(train, configs))
    for i, ((axes, _), res) in enumerate(zip(plan, results)):
        res.manifest["run_index"] = i
        res.manifest["sweep_values"] = axes
        res.manifest["sub_seed_rule"] = "seed XOR murmur3_fmix64(run_index)"
    return results


# ---------------------------------------------------------------- persistence


def dump_json(obj) -> str:
    """Deterministic JSON: sorted keys, shortest round-trip floats, no NaN."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _fmt(v) -> str:
    if v is None:
        return "degenerate"
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return format(float(v), ".17g")


def metrics_header(L: int) -> list[str]:
    cols = ["step", "total", "fit", "reg_h1"]
    cols += [f"reg_w_{l}" for l in range(1, L + 1)]
    for name in ("dnc1_pre", "dnc1_post", "dnc2_pre", "dnc2_post", "dnc3"):
        cols += [f"{name}_{l}" for l in range(1, L + 1)]
    return cols


def metrics_csv(history: list[MetricsRecord], L: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(metrics_header(L))
    for rec in history:
        row = [rec.step, rec.total, rec.fit, rec.reg_h1, *rec.reg_w]
        for name in ("dnc1_pre", "dnc1_post", "dnc2_pre", "dnc2_post", "dnc3"):
            row += [getattr(m, name) for m in rec.layers]
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_run(result: RunResult, run_dir: Path) -> Path:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    L = result.manifest["config"]["dims"]["L"]
    (run_dir / "manifest.json").write_text(dump_json(result.manifest))
    (run_dir / "metrics.csv").write_text(metrics_csv(result.history, L))
    if result.params is not None:
        cfg = result.manifest["config"]
        doc = {"dims": cfg["dims"], "seed": result.manifest["seed"], **result.params.to_dict()}
        (run_dir / "params.json").write_text(dump_json(doc))
    return run_dir
