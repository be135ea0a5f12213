"""Adam training of the policy network on re-simulated minibatches."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .gradient import batch_utility, batch_utility_gradient
from .market import STREAM_POOL, STREAM_TRAIN, MarketParams, TimeGrid, make_noise
from .policy_net import PolicyParams, init_params, param_count
from .utility import UtilitySpec

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    k: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    delta: float = 1e-8

    @classmethod
    def fresh(cls, size: int, **kw) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), **kw)


def adam_step(state: AdamState, theta: np.ndarray, grad: np.ndarray, lr: float):
    """One bias-corrected Adam update in the ascent direction.

    Returns a new ``(state, theta)``; the inputs are not modified.
    """
    grad = np.asarray(grad, dtype=float)
    if grad.shape != state.m.shape or theta.shape != state.m.shape:
        raise ValueError("gradient, parameters and moments must be aligned")
    if not np.all(np.isfinite(grad)):
        bad = np.flatnonzero(~np.isfinite(grad))
        raise TrainingDiverged(f"non-finite gradient at coordinates {bad.tolist()}")
    if not lr > 0:
        raise ValueError("step size must be positive")
    k = state.k + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**k)
    v_hat = v / (1.0 - state.beta2**k)
    new_theta = theta + lr * m_hat / (np.sqrt(v_hat) + state.delta)
    return AdamState(m, v, k, state.beta1, state.beta2, state.delta), new_theta


@dataclass(frozen=True)
class TrainingPhase:
    steps: int
    batch: int
    lr: float

    def __post_init__(self):
        if self.steps < 1 or self.batch < 1 or not self.lr > 0:
            raise ValueError(f"phase entries must be positive: {self}")


GBM_SCHEDULE = (TrainingPhase(100, 10, 0.1), TrainingPhase(100, 10, 0.05), TrainingPhase(500, 50, 0.01))
HESTON_SCHEDULE = (TrainingPhase(1500, 10, 0.05), TrainingPhase(500, 10, 0.01), TrainingPhase(500, 50, 0.01))
GBM_DESK_SCHEDULE = (TrainingPhase(200, 10, 0.05), TrainingPhase(300, 50, 0.01))
HESTON_DESK_SCHEDULE = (TrainingPhase(800, 10, 0.05), TrainingPhase(400, 50, 0.01))


def schedule_paths(schedule: Sequence[TrainingPhase]) -> int:
    """Total number of simulated paths consumed by a schedule."""
    return sum(p.steps * p.batch for p in schedule)


@dataclass
class LogRecord:
    phase: int
    step: int
    J: float
    grad_norm: float
    floor_events: int
    ms: float


@dataclass
class TrainingLog:
    records: list = field(default_factory=list)
    validation: list = field(default_factory=list)

    def write_csv(self, path, header_comment: str | None = None) -> None:
        """Write ``phase,step,J,grad_norm,floor_events``.

        Wall times are not part of this file so that reruns are
        byte-identical; see :meth:`write_timing_csv`.
        """
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            out = csv.writer(fh)
            out.writerow(["phase", "step", "J", "grad_norm", "floor_events"])
            for r in self.records:
                out.writerow([r.phase, r.step, repr(r.J), repr(r.grad_norm), r.floor_events])

    @classmethod
    def read_csv(cls, path, upto: int | None = None) -> "TrainingLog":
        """Reload records written by :meth:`write_csv` (wall times are not restored)."""
        rows = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
        out = cls()
        for row in csv.DictReader(rows):
            step = int(row["step"])
            if upto is None or step <= upto:
                out.records.append(LogRecord(int(row["phase"]), step, float(row["J"]),
                                             float(row["grad_norm"]), int(row["floor_events"]), 0.0))
        return out

    def write_timing_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["phase", "step", "ms"])
            for r in self.records:
                out.writerow([r.phase, r.step, f"{r.ms:.3f}"])


@dataclass
class TrainingState:
    """Everything needed to continue a run bit-identically."""

    theta: PolicyParams
    adam: AdamState
    step: int = 0           # global steps completed
    seed: int = 0
    horizon: float = 1.0


@dataclass
class PrecomputedPool:
    """Optional fixed pool of paths sampled from instead of re-simulating.

    The last ``validation_fraction`` of the pool is held out and scored at
    the end of every phase.
    """

    size: int
    validation_fraction: float = 0.2


def phase_cursor(schedule: Sequence[TrainingPhase], step: int) -> tuple[int, int]:
    """Map a global step count to ``(phase index, step within phase)``."""
    for i, p in enumerate(schedule):
        if step < p.steps:
            return i, step
        step -= p.steps
    return len(schedule), 0


def train(schedule: Sequence[TrainingPhase], arch, params: MarketParams, grid: TimeGrid,
          u: UtilitySpec, seed: int, sigma_init: float = 0.1, y_scale: float = 1.0,
          resume: TrainingState | None = None, pool: PrecomputedPool | None = None,
          checkpoint_every: int = 0,
          on_checkpoint: Callable[[TrainingState], None] | None = None,
          stop_after: int | None = None):
    """Maximize the empirical utility with Adam.

    Step ``k`` draws its minibatch from the counter stream ``(seed, k)``.
    Returns ``(theta, log, state)``.
    """
    schedule = list(schedule)
    if not schedule:
        raise ValueError("training schedule is empty")
    if resume is None:
        theta0 = init_params(arch, sigma_init, seed, y_scale)
        state = TrainingState(theta0, AdamState.fresh(param_count(arch)), 0, seed, grid.T)
    else:
        state = resume
        if tuple(state.theta.arch) != tuple(arch):
            raise ValueError("checkpoint architecture does not match")
    arch, y_scale = state.theta.arch, state.theta.y_scale

    pool_noise = train_idx = val_noise = None
    if pool is not None:
        full = make_noise(seed, (STREAM_POOL,), pool.size, grid, params.correlation)
        n_val = int(round(pool.size * pool.validation_fraction))
        train_idx = np.arange(pool.size - n_val)
        pool_noise = full.subset(train_idx)
        val_noise = full.subset(np.arange(pool.size - n_val, pool.size)) if n_val else None

    tlog = TrainingLog()
    flat = state.theta.flatten()
    total = sum(p.steps for p in schedule)
    while state.step < total:
        if stop_after is not None and state.step >= stop_after:
            break
        ph, _ = phase_cursor(schedule, state.step)
        phase = schedule[ph]
        t0 = time.perf_counter()
        if pool_noise is None:
            noise = make_noise(seed, (STREAM_TRAIN, state.step), phase.batch, grid, params.correlation)
        else:
            rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(STREAM_TRAIN, state.step))))
            noise = pool_noise.subset(rng.choice(train_idx.size, size=phase.batch, replace=phase.batch > train_idx.size))
        ov = batch_utility_gradient(state.theta, params, grid, u, noise)
        if not math.isfinite(ov.J):
            raise TrainingDiverged(f"non-finite objective at step {state.step}")
        adam, flat = adam_step(state.adam, flat, ov.gradient, phase.lr)
        state = TrainingState(PolicyParams.from_flat(arch, flat, y_scale), adam, state.step + 1, seed, grid.T)
        ms = 1e3 * (time.perf_counter() - t0)
        tlog.records.append(LogRecord(ph, state.step, ov.J, float(np.linalg.norm(ov.gradient)),
                                      ov.floor_events, ms))
        if val_noise is not None and phase_cursor(schedule, state.step)[0] != ph:
            tlog.validation.append((ph, batch_utility(state.theta, params, grid, u, val_noise)))
        if checkpoint_every and on_checkpoint and state.step % checkpoint_every == 0:
            on_checkpoint(state)
        if state.step % 100 == 0:
            log.debug("step %d phase %d J=%.6f |g|=%.3g", state.step, ph, ov.J, tlog.records[-1].grad_norm)
    return state.theta, tlog, state


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_MAGIC = "neuralmerton-checkpoint v1"


def save_checkpoint(path, state: TrainingState, header: dict | None = None) -> None:
    """Plain-text checkpoint: header, flat parameters, then Adam state.

    Floats are written with ``repr`` so a reload is lossless.
    """
    lines = [CHECKPOINT_MAGIC]
    for key, value in (header or {}).items():
        lines.append(f"# {key} {value}")
    lines.append("arch " + " ".join(str(w) for w in state.theta.arch))
    lines.append(f"y_scale {state.theta.y_scale!r}")
    lines.append(f"horizon {state.horizon!r}")
    lines.append(f"seed {state.seed}")
    lines.append(f"step {state.step}")
    flat = state.theta.flatten()
    lines.append(f"params {flat.size}")
    lines.extend(repr(float(x)) for x in flat)
    a = state.adam
    lines.append(f"adam {a.k} {a.beta1!r} {a.beta2!r} {a.delta!r}")
    lines.extend(f"{float(m)!r} {float(v)!r}" for m, v in zip(a.m, a.v))
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> TrainingState:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    it = iter(lines[1:])

    def field_(name):
        key, *rest = next(it).split()
        if key != name:
            raise ValueError(f"{path}: expected '{name}', found '{key}'")
        return rest

    arch = tuple(int(w) for w in field_("arch"))
    y_scale = float(field_("y_scale")[0])
    horizon = float(field_("horizon")[0])
    seed = int(field_("seed")[0])
    step = int(field_("step")[0])
    count = int(field_("params")[0])
    flat = np.array([float(next(it)) for _ in range(count)])
    k, b1, b2, d = field_("adam")
    mv = np.array([[float(x) for x in next(it).split()] for _ in range(count)]).reshape(count, 2)
    adam = AdamState(mv[:, 0].copy(), mv[:, 1].copy(), int(k), float(b1), float(b2), float(d))
    return TrainingState(PolicyParams.from_flat(arch, flat, y_scale), adam, step, seed, horizon)
