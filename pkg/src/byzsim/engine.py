"""Distributed optimization loop with Byzantine workers.

One iteration: every worker draws a stochastic gradient at the current
point and advances its momentum recursion; the adversary then sees all
honest traffic and chooses what the Byzantine workers transmit; the
server aggregates the n transmitted vectors and steps. The normalized
optimizer rescales the aggregate to unit norm so the step length is
exactly the scheduled gamma (or zero when the aggregate vanishes);
the two baselines step with the raw aggregate and may diverge on
rapidly-growing objectives, which the run reports rather than raises.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .aggregators import AggregatorSpec, aggregate, base_kappa
from .attacks import AttackContext, AttackSpec, byzantine_update, shift_labels
from .core import (
    SHIFT_STREAM,
    ConfigError,
    RngStream,
    gaussian_vector,
    normalize,
)
from .objectives import (
    ObjectiveSpec,
    OracleConfig,
    default_smoothness,
    gradient,
    gradient_with_labels,
    make_shifts,
    softmax_dataset,
    value,
    worker_shard,
)

__all__ = [
    "WorkerState",
    "Schedule",
    "RunConfig",
    "TrajectoryRecord",
    "RunResult",
    "run",
    "schedule_values",
    "gamma0_cap",
    "momentum_step",
]

logger = logging.getLogger("byzsim")

OPTIMIZERS = ("byz_nsgdm", "baseline", "baseline_decay")
SCHEDULE_KINDS = ("theoretical", "practical_decay", "constant")


@dataclass
class WorkerState:
    """Per-worker state: role, momentum buffer, fixed heterogeneity shift,
    and a private random stream. ``labels``/``shard`` are set only for
    classification workers that use worker-specific labels (including
    label-flipped Byzantine workers)."""

    id: int
    role: str
    momentum: np.ndarray
    shift: np.ndarray
    rng: RngStream
    last_gradient: np.ndarray | None = None
    labels: np.ndarray | None = None
    shard: slice | None = None


@dataclass(frozen=True)
class Schedule:
    """Step-size / momentum schedule.

    theoretical: gamma = gamma0/(K+1)^(3/4) and eta = (K+1)^(-1/2), both
    constant over k, with K taken from ``horizon``. practical_decay:
    gamma_k = gamma0/sqrt(k) for k >= 1 (gamma0 at k=0) with fixed
    eta = 1 - momentum_beta. constant: fixed gamma0 and eta.
    """

    kind: str
    gamma0: float
    momentum_beta: float = 0.9
    horizon: int | None = None

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ConfigError(f"unknown schedule kind: {self.kind!r}")
        if self.gamma0 <= 0:
            raise ConfigError("gamma0 must be > 0")
        if not 0 <= self.momentum_beta < 1:
            raise ConfigError("momentum_beta must lie in [0, 1)")
        if self.kind == "theoretical" and (self.horizon is None or self.horizon < 1):
            raise ConfigError("theoretical schedule needs a horizon K >= 1")


@dataclass
class RunConfig:
    objective: ObjectiveSpec
    oracle: OracleConfig
    n: int
    B: int
    attack: AttackSpec
    aggregator: AggregatorSpec
    schedule: Schedule
    optimizer: str
    K: int
    seed: int
    x0: np.ndarray
    log_every: int = 1
    init_momentum: str = "stochastic_gradient"


@dataclass
class TrajectoryRecord:
    """One logged row: iteration, exact gradient norm and value at x^k,
    the aggregation error ||v^k - grad f(x^{k-1})||, and the step length
    taken (for the normalized optimizer this is the scheduled gamma, or 0
    on a vanishing aggregate)."""

    k: int
    grad_norm: float
    f_value: float
    agg_error: float
    step_size: float


@dataclass
class RunResult:
    """Trajectory log plus divergence status; ``states``/``aggregates``
    hold the full per-iteration iterates and aggregated vectors when the
    run was asked to capture them (needed by the descent checker)."""

    records: list[TrajectoryRecord]
    final_x: np.ndarray
    diverged: bool = False
    divergence_step: int | None = None
    honest_shifts: list[np.ndarray] = field(default_factory=list)
    states: list[np.ndarray] | None = None
    aggregates: list[np.ndarray] | None = None


def schedule_values(s: Schedule, k: int) -> tuple[float, float]:
    """(gamma_k, eta_k) for iteration index k >= 0."""
    if k < 0:
        raise ConfigError(f"schedule index must be >= 0, got {k}")
    if s.kind == "theoretical":
        kp1 = s.horizon + 1
        return s.gamma0 / kp1**0.75, kp1**-0.5
    eta = 1.0 - s.momentum_beta
    if s.kind == "practical_decay":
        gamma = s.gamma0 if k == 0 else s.gamma0 / math.sqrt(k)
        return gamma, eta
    return s.gamma0, eta


def gamma0_cap(L1: float, kappa: float, K: int) -> float:
    """Largest base step size the convergence guarantee admits: the
    minimum of 1/(2 L1), (K+1)^(1/4)/(sqrt(32) L1), and
    1/(sqrt(128 (1+2 kappa)) L1)."""
    if L1 <= 0:
        raise ConfigError("L1 must be > 0")
    return min(
        1.0 / (2.0 * L1),
        (K + 1) ** 0.25 / (math.sqrt(32.0) * L1),
        1.0 / (math.sqrt(128.0 * (1.0 + 2.0 * kappa)) * L1),
    )


def momentum_step(v_prev: np.ndarray, g: np.ndarray, eta: float) -> np.ndarray:
    """(1 - eta) * v_prev + eta * g."""
    if not 0 < eta <= 1:
        raise ConfigError(f"eta must lie in (0, 1], got {eta}")
    return (1.0 - eta) * v_prev + eta * g


def _validate(config: RunConfig) -> None:
    if config.optimizer not in OPTIMIZERS:
        raise ConfigError(f"unknown optimizer: {config.optimizer!r}")
    if not 0 <= config.B < config.n / 2:
        raise ConfigError(f"need 0 <= B < n/2, got B={config.B}, n={config.n}")
    if config.aggregator.n != config.n or config.aggregator.B != config.B:
        raise ConfigError("aggregator (n, B) must match the run's (n, B)")
    if config.x0.shape != (config.objective.dim,):
        raise ConfigError(
            f"x0 has shape {config.x0.shape}, expected ({config.objective.dim},)"
        )
    if config.K < 1:
        raise ConfigError("K must be >= 1")
    if config.log_every < 1:
        raise ConfigError("log_every must be >= 1")
    if config.init_momentum not in ("stochastic_gradient", "zero"):
        raise ConfigError(f"unknown init_momentum: {config.init_momentum!r}")
    if config.attack.kind == "label_flip" and not config.objective.is_classification:
        raise ConfigError("label_flip requires a classification objective")
    if config.objective.is_classification and config.objective.n_workers < config.n:
        raise ConfigError("softmax objective must be sized for at least n workers")


def _build_workers(config: RunConfig) -> list[WorkerState]:
    spec = config.objective
    d = spec.dim
    G = config.n - config.B
    honest_shifts = make_shifts(
        RngStream(config.seed, SHIFT_STREAM), G, d, config.oracle.shift_variance
    )
    workers = []
    for i in range(config.n):
        honest = i < G
        # Heterogeneity shifts model honest data; Byzantine oracles are
        # vanilla (gradient + noise).
        shift = honest_shifts[i] if honest else np.zeros(d)
        w = WorkerState(
            id=i,
            role="honest" if honest else "byzantine",
            momentum=np.zeros(d),
            shift=shift,
            rng=RngStream(config.seed, i),
        )
        if spec.is_classification:
            shard = worker_shard(spec, i)
            labels = None
            if config.oracle.labels is not None:
                labels = np.asarray(config.oracle.labels[i])
            if not honest and config.attack.kind == "label_flip":
                base = labels if labels is not None else softmax_dataset(spec)[1][shard]
                labels = shift_labels(base, config.attack.label_shift, spec.n_classes)
            if labels is not None:
                w.shard = shard
                w.labels = labels
        workers.append(w)
    return workers


def _oracle(config: RunConfig, w: WorkerState, x: np.ndarray, base_grad: np.ndarray) -> np.ndarray:
    spec = config.objective
    if w.labels is None:
        g = base_grad
    else:
        feats = softmax_dataset(spec)[0][w.shard]
        g = gradient_with_labels(spec, x, w.labels, feats=feats)
    return g + gaussian_vector(w.rng, spec.dim, config.oracle.noise_variance) + w.shift


def _warn_gamma0(config: RunConfig) -> None:
    if config.schedule.kind != "theoretical":
        return
    kappa = base_kappa(config.aggregator.rule, config.n, config.B, config.objective.dim)
    if kappa is None:
        return
    meta = default_smoothness(config.objective)
    cap = gamma0_cap(meta.L1, kappa, config.K)
    if config.schedule.gamma0 > cap:
        logger.warning(
            "gamma0=%.6g exceeds the guarantee cap %.6g (L1=%g, kappa=%g, K=%d)",
            config.schedule.gamma0, cap, meta.L1, kappa, config.K,
        )


def run(config: RunConfig, capture_states: bool = False) -> RunResult:
    """Execute K iterations and return the trajectory log.

    A non-finite iterate or objective value aborts the run: the result is
    flagged diverged and keeps every record up to the last finite point
    (expected for the unnormalized baselines on fast-growing objectives).
    """
    _validate(config)
    _warn_gamma0(config)
    spec = config.objective
    n, G = config.n, config.n - config.B
    workers = _build_workers(config)
    x = np.array(config.x0, dtype=float)

    base_grad = gradient(spec, x)
    for w in workers:
        g = _oracle(config, w, x, base_grad)
        w.last_gradient = g
        w.momentum = g if config.init_momentum == "stochastic_gradient" else np.zeros(spec.dim)

    momenta = np.stack([w.momentum for w in workers])
    grads = np.empty_like(momenta)
    result = RunResult(
        records=[],
        final_x=x,
        honest_shifts=[w.shift for w in workers if w.role == "honest"],
        states=[x.copy()] if capture_states else None,
        aggregates=[] if capture_states else None,
    )
    result.records.append(
        TrajectoryRecord(0, float(np.linalg.norm(base_grad)), value(spec, x), 0.0, 0.0)
    )

    for k in range(1, config.K + 1):
        gamma, eta = schedule_values(config.schedule, k - 1)
        base_grad = gradient(spec, x)
        for i, w in enumerate(workers):
            grads[i] = _oracle(config, w, x, base_grad)
        momenta *= 1.0 - eta
        momenta += eta * grads
        for i, w in enumerate(workers):
            w.momentum = momenta[i]
            w.last_gradient = grads[i]

        sent = momenta.copy()
        if config.B > 0:
            ctx = AttackContext.from_honest(k - 1, momenta[:G], grads[:G])
            for w in workers[G:]:
                sent[w.id] = byzantine_update(config.attack, ctx, w)

        v = aggregate(config.aggregator, sent)
        if config.optimizer == "byz_nsgdm":
            direction = normalize(v)
            stepped = bool(direction.any())
            x_new = x - gamma * direction if stepped else x
            step_size = gamma if stepped else 0.0
        else:
            x_new = x - gamma * v
            step_size = gamma * float(np.linalg.norm(v))

        # Abort before x**4-scale quantities can overflow downstream.
        if not np.all(np.isfinite(x_new)) or np.abs(x_new).max() > 1e25:
            result.diverged = True
            result.divergence_step = k
            break

        x = x_new
        result.final_x = x
        if capture_states:
            result.states.append(x.copy())
            result.aggregates.append(v)

        if k % config.log_every == 0 or k == config.K:
            f_val = value(spec, x)
            grad_now = gradient(spec, x)
            gn = float(np.linalg.norm(grad_now))
            if not (math.isfinite(f_val) and math.isfinite(gn)):
                result.diverged = True
                result.divergence_step = k
                break
            agg_err = float(np.linalg.norm(v - base_grad))
            result.records.append(TrajectoryRecord(k, gn, f_val, agg_err, step_size))

    return result
