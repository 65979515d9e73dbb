"""Run engine: the preconditioned-SGD loop and baseline optimizers.

A run takes a task (anything exposing ``dim``, ``f_star``, ``loss`` and
``sample_grad``), a preconditioner, and a RunConfig; it repeats

    w_{k+1} = w_k - alpha_k * M^{-1} g_k

per seed and aggregates the recorded optimality gaps across seeds.  Seeds
are embarrassingly parallel; every stochastic draw comes from a stream
derived from (seed, purpose-tag), so results are bitwise identical no
matter how many workers run them.

The module also carries the classical baselines used by the regression
benchmark (heavy-ball momentum, Adam, two-loop L-BFGS, CG-applied
curvature metrics) and the two-phase protocol that warm-starts every
method from a common Adam trajectory.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .linalg import CgConfig
from .precond import LbfgsMemory, Preconditioner, curvature_cg_precondition, lbfgs_direction
from .rng import stream

__all__ = [
    "FixedSchedule",
    "HarmonicSchedule",
    "RunConfig",
    "Trajectory",
    "RunDivergedError",
    "OptimizerSpec",
    "MomentumState",
    "AdamState",
    "psgd_step",
    "run_psgd",
    "momentum_step",
    "adam_step",
    "two_phase_run",
    "NN_METHODS",
]

DIVERGENCE_GAP = 1e12


@dataclass(frozen=True)
class FixedSchedule:
    """alpha_k = alpha_bar for every step."""

    alpha_bar: float

    def __post_init__(self) -> None:
        if not self.alpha_bar > 0:
            raise ValueError(f"alpha_bar must be > 0, got {self.alpha_bar}")

    def alpha(self, k: int) -> float:
        return self.alpha_bar


@dataclass(frozen=True)
class HarmonicSchedule:
    """alpha_k = beta / (gamma + k); strictly decreasing."""

    beta: float
    gamma: float

    def __post_init__(self) -> None:
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")

    def alpha(self, k: int) -> float:
        return self.beta / (self.gamma + k)


@dataclass(frozen=True)
class RunConfig:
    """Iteration budget, seed list, schedule, and recording stride."""

    iters: int
    seeds: tuple[int, ...]
    schedule: FixedSchedule | HarmonicSchedule
    record_every: int = 1
    init_std: float = 1e-2

    def __post_init__(self) -> None:
        if self.iters < 1:
            raise ValueError(f"iters must be >= 1, got {self.iters}")
        if len(self.seeds) == 0:
            raise ValueError("seeds must be nonempty")
        if self.record_every < 1:
            raise ValueError(f"record_every must be >= 1, got {self.record_every}")


@dataclass(frozen=True)
class Trajectory:
    """Cross-seed loss statistics on the recorded iteration grid.

    ``loss_mean``/``loss_std`` are the mean and sample standard deviation
    of F(w_k) - F* over seeds at each recorded k.  ``elapsed_mean`` is the
    mean cumulative optimizer-loop time in seconds (regression runs only).
    """

    ks: np.ndarray
    loss_mean: np.ndarray
    loss_std: np.ndarray
    per_seed_final: np.ndarray
    n_seeds: int
    elapsed_mean: np.ndarray | None = None

    def stderr(self) -> np.ndarray:
        """Cross-seed standard error of loss_mean."""
        return self.loss_std / np.sqrt(self.n_seeds)


class RunDivergedError(RuntimeError):
    """A seed's loss exceeded the divergence threshold or went non-finite."""

    def __init__(self, seed: int, iteration: int, value: float):
        super().__init__(
            f"run diverged at iteration {iteration} for seed {seed} (gap={value!r})"
        )
        self.seed = seed
        self.iteration = iteration
        self.value = value


def psgd_step(w: np.ndarray, g: np.ndarray, alpha_k: float, precond: Preconditioner) -> np.ndarray:
    """One preconditioned step w - alpha_k * M^{-1} g."""
    if alpha_k <= 0:
        raise ValueError(f"alpha_k must be > 0, got {alpha_k}")
    return w - alpha_k * precond.apply_inverse(g)


def _run_psgd_seed(args) -> tuple[np.ndarray, np.ndarray]:
    task, precond, cfg, seed = args
    w = cfg.init_std * stream(seed, "init").standard_normal(task.dim)
    rng_noise = stream(seed, "grad-noise")
    ks = [1]
    gaps = [task.loss(w) - task.f_star]
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, cfg.iters + 1):
            g = task.sample_grad(w, rng_noise)
            w = psgd_step(w, g, cfg.schedule.alpha(k), precond)
            if k % cfg.record_every == 0 or k == cfg.iters:
                gap = task.loss(w) - task.f_star
                if not np.isfinite(gap) or gap > DIVERGENCE_GAP:
                    raise RunDivergedError(seed=seed, iteration=k + 1, value=gap)
                ks.append(k + 1)
                gaps.append(gap)
    return np.asarray(ks), np.asarray(gaps)


def run_psgd(task, precond: Preconditioner, cfg: RunConfig, jobs: int = 1) -> Trajectory:
    """Multi-seed preconditioned-SGD run with cross-seed aggregation.

    Per seed: w_1 ~ N(0, init_std^2 I), then ``iters`` steps under the
    schedule, recording the optimality gap at iterate 1 and every
    ``record_every`` steps.  Divergence (gap non-finite or above 1e12,
    checked at record points) raises RunDivergedError; nothing is silently
    dropped.  The aggregation is a deterministic reduce in seed order.
    """
    work = [(task, precond, cfg, seed) for seed in cfg.seeds]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_psgd_seed, work))
    else:
        results = [_run_psgd_seed(item) for item in work]

    ks = results[0][0]
    gap_matrix = np.stack([gaps for _, gaps in results])
    n = len(cfg.seeds)
    std = gap_matrix.std(axis=0, ddof=1) if n > 1 else np.zeros_like(ks, dtype=float)
    return Trajectory(
        ks=ks,
        loss_mean=gap_matrix.mean(axis=0),
        loss_std=std,
        per_seed_final=gap_matrix[:, -1].copy(),
        n_seeds=n,
    )


@dataclass(frozen=True)
class MomentumState:
    w: np.ndarray
    m: np.ndarray


def momentum_step(
    state: MomentumState, g: np.ndarray, alpha: float, beta: float = 0.9
) -> tuple[MomentumState, np.ndarray]:
    """Heavy-ball update: m <- beta m + g; w <- w - alpha m."""
    m = beta * state.m + g
    w = state.w - alpha * m
    return MomentumState(w=w, m=m), w


@dataclass(frozen=True)
class AdamState:
    w: np.ndarray
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def adam_step(
    state: AdamState,
    g: np.ndarray,
    alpha: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[AdamState, np.ndarray]:
    """Adam with bias correction folded into the step size.

    Uses the update w <- w - alpha * sqrt(1-beta2^t)/(1-beta1^t) *
    m / (sqrt(v) + eps), i.e. eps sits next to the uncorrected
    second-moment root, so the very first step is
    -alpha * g / (|g| + eps (1-beta2)^{-1/2}).
    """
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * g
    v = beta2 * state.v + (1.0 - beta2) * g * g
    step_size = alpha * np.sqrt(1.0 - beta2**t) / (1.0 - beta1**t)
    w = state.w - step_size * m / (np.sqrt(v) + eps)
    return AdamState(w=w, m=m, v=v, t=t), w


NN_METHODS = ("sgd", "momentum", "adam", "lbfgs", "cg_hessian", "cg_ggn")


@dataclass(frozen=True)
class OptimizerSpec:
    """A named method plus its fixed hyperparameters (no schedulers)."""

    name: str
    lr: float
    momentum_beta: float = 0.9
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    cg: CgConfig = CgConfig(max_iters=5, tol=1e-10, damping=1e-3)
    lbfgs_memory: int = 100
    # Without a line search the quasi-Newton step along near-flat directions
    # can be arbitrarily long; cap the update norm instead.
    lbfgs_max_step: float = 0.5

    def __post_init__(self) -> None:
        if self.name not in NN_METHODS:
            raise ValueError(f"unknown optimizer {self.name!r}; expected one of {NN_METHODS}")
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")


class _MethodRunner:
    """Stateful single-seed stepper for one OptimizerSpec on an nn task."""

    def __init__(self, spec: OptimizerSpec, task, theta: np.ndarray):
        self.spec = spec
        self.task = task
        self.theta = theta
        p = theta.shape[0]
        if spec.name == "momentum":
            self.state = MomentumState(w=theta, m=np.zeros(p))
        elif spec.name == "adam":
            self.state = AdamState(w=theta, m=np.zeros(p), v=np.zeros(p))
        elif spec.name == "lbfgs":
            self.memory = LbfgsMemory(max_pairs=spec.lbfgs_memory)
            self.prev: np.ndarray | None = None

    def step(self, batch) -> float:
        loss, g = self.task.loss_grad(self.theta, batch)
        name = self.spec.name
        lr = self.spec.lr
        if name == "sgd":
            self.theta = self.theta - lr * g
        elif name == "momentum":
            self.state, self.theta = momentum_step(self.state, g, lr, self.spec.momentum_beta)
        elif name == "adam":
            self.state, self.theta = adam_step(
                self.state, g, lr, self.spec.adam_beta1, self.spec.adam_beta2, self.spec.adam_eps
            )
        elif name == "lbfgs":
            if self.prev is not None:
                # Curvature pair on the current batch: y compares gradients at
                # the old and new weights on the same data, otherwise the
                # resampling noise swamps the curvature signal near the floor.
                w_prev = self.prev
                _, g_prev = self.task.loss_grad(w_prev, batch)
                self.memory.insert(self.theta - w_prev, g - g_prev)
            direction = lbfgs_direction(self.memory, g)
            step = lr * direction
            step_norm = float(np.linalg.norm(step))
            if step_norm > self.spec.lbfgs_max_step:
                step *= self.spec.lbfgs_max_step / step_norm
            self.prev = self.theta
            self.theta = self.theta + step
        elif name == "cg_hessian":
            d = curvature_cg_precondition(
                lambda v: self.task.hvp(self.theta, batch, v), g, self.spec.cg
            )
            self.theta = self.theta - lr * d
        elif name == "cg_ggn":
            d = curvature_cg_precondition(
                lambda v: self.task.ggn_vp(self.theta, batch, v), g, self.spec.cg
            )
            self.theta = self.theta - lr * d
        return loss


def _two_phase_seed(args) -> tuple[np.ndarray, np.ndarray]:
    task, phase1_epochs, phase2, cfg, seed, phase1_lr = args
    theta = task.init_params(stream(seed, "init"))
    losses = np.empty(phase1_epochs + cfg.iters)
    elapsed = np.empty_like(losses)
    clock = 0.0

    phase1 = _MethodRunner(OptimizerSpec(name="adam", lr=phase1_lr), task, theta)
    data_rng = stream(seed, "phase1-data")
    for e in range(phase1_epochs):
        batch = task.epoch_data(data_rng)
        t0 = time.perf_counter()
        loss = phase1.step(batch)
        clock += time.perf_counter() - t0
        losses[e] = loss
        elapsed[e] = clock
        if not np.isfinite(loss) or loss > DIVERGENCE_GAP:
            raise RunDivergedError(seed=seed, iteration=e + 1, value=loss)

    runner = _MethodRunner(phase2, task, phase1.theta)
    data_rng = stream(seed + 1, "phase2-data")
    for e in range(cfg.iters):
        batch = task.epoch_data(data_rng)
        t0 = time.perf_counter()
        loss = runner.step(batch)
        clock += time.perf_counter() - t0
        idx = phase1_epochs + e
        losses[idx] = loss
        elapsed[idx] = clock
        if not np.isfinite(loss) or loss > DIVERGENCE_GAP:
            raise RunDivergedError(seed=seed, iteration=idx + 1, value=loss)
    return losses, elapsed


def two_phase_run(
    task,
    phase1_epochs: int,
    phase2_optimizer: OptimizerSpec,
    cfg: RunConfig,
    jobs: int = 1,
    phase1_lr: float = 1e-3,
) -> Trajectory:
    """Adam warm start, then the method under study, on one weight state.

    Phase I runs Adam (lr ``phase1_lr``) for ``phase1_epochs`` full-batch
    epochs; the exact weights are handed to the phase-2 optimizer for
    ``cfg.iters`` more epochs.  The dataset is resampled every epoch:
    phase I from the run seed, phase II from seed + 1.  The recorded value
    at each epoch is the training loss the step was computed from, so the
    trajectory is continuous across the boundary with no gap or duplicate.
    Elapsed time covers the optimizer loop only, excluding data generation.
    """
    if phase1_epochs < 0:
        raise ValueError(f"phase1_epochs must be >= 0, got {phase1_epochs}")
    work = [(task, phase1_epochs, phase2_optimizer, cfg, seed, phase1_lr) for seed in cfg.seeds]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_two_phase_seed, work))
    else:
        results = [_two_phase_seed(item) for item in work]

    loss_matrix = np.stack([losses for losses, _ in results])
    time_matrix = np.stack([elapsed for _, elapsed in results])
    n = len(cfg.seeds)
    std = loss_matrix.std(axis=0, ddof=1) if n > 1 else np.zeros(loss_matrix.shape[1])
    return Trajectory(
        ks=np.arange(1, phase1_epochs + cfg.iters + 1),
        loss_mean=loss_matrix.mean(axis=0),
        loss_std=std,
        per_seed_final=loss_matrix[:, -1].copy(),
        n_seeds=n,
        elapsed_mean=time_matrix.mean(axis=0),
    )
