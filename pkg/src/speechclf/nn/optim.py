"""Adam, the warmup/decay schedule, and the LR range probe."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .tensor import NonFiniteValue, ShapeMismatch, Tensor, check_finite


class StepOutOfRange(ValueError):
    """Schedule queried outside [0, total_steps]."""


class NoDescentDetected(RuntimeError):
    """LR range probe never saw the loss drop meaningfully."""


@dataclass
class TrainConfig:
    """Hyperparameters for one training run."""

    batch_size: int = 4
    epochs: int = 10
    peak_lr: float = 2.5e-2
    warmup_steps: int = 0
    dropout: float | None = None
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    lr_schedule: str = "constant"  # "constant" or "linear"
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.peak_lr < 0:
            raise ValueError("peak_lr must be >= 0")
        if self.lr_schedule not in ("constant", "linear"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**raw)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class AdamState:
    """First/second moment buffers plus the step counter."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: list[Tensor], beta1: float = 0.9,
                   beta2: float = 0.95, eps: float = 1e-8) -> "AdamState":
        return cls(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def adam_step(params: list[Tensor], state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update in place; a missing grad counts as zero."""
    if len(params) != len(state.m):
        raise ShapeMismatch("adam_step: state sized for a different parameter list")
    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ShapeMismatch("adam_step: grad shape differs from parameter")
        check_finite(g, "adam gradient")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        check_finite(p.data, "adam parameter update")


@dataclass(frozen=True)
class LinearSchedule:
    """Linear 0 -> peak over warmup, then linear peak -> 0 at total_steps."""

    warmup_steps: int
    peak_lr: float
    total_steps: int

    def __post_init__(self):
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ValueError("need 0 <= warmup_steps <= total_steps")
        if self.peak_lr <= 0:
            raise ValueError("peak_lr must be positive")


def lr_at(schedule: LinearSchedule, step: int) -> float:
    if not 0 <= step <= schedule.total_steps:
        raise StepOutOfRange(f"step {step} outside [0, {schedule.total_steps}]")
    if step <= schedule.warmup_steps:
        if schedule.warmup_steps == 0:
            return schedule.peak_lr
        return schedule.peak_lr * step / schedule.warmup_steps
    span = schedule.total_steps - schedule.warmup_steps
    return schedule.peak_lr * (schedule.total_steps - step) / span


def schedule_for(cfg: TrainConfig, total_steps: int) -> "callable":
    """Per-step learning rate function implied by a TrainConfig."""
    if cfg.lr_schedule == "constant":
        return lambda step: cfg.peak_lr
    sched = LinearSchedule(min(cfg.warmup_steps, total_steps), cfg.peak_lr, total_steps)
    return lambda step: lr_at(sched, min(step, total_steps))


@dataclass
class LrRangeResult:
    lower: float
    upper: float
    default_lr: float
    lrs: list[float]
    losses: list[float]
    smoothed: list[float]


def lr_range_test(model_factory, batches, lr_min: float, lr_max: float,
                  epochs: int = 20, smoothing: float = 0.3,
                  drop_fraction: float = 0.01,
                  blowup_factor: float = 2.0) -> LrRangeResult:
    """Probe usable learning rates by sweeping the LR up once.

    A fresh model from ``model_factory`` is trained with plain gradient
    steps while the learning rate increases linearly per epoch from
    ``lr_min`` to ``lr_max``. The lower bound is the first LR whose
    EMA-smoothed epoch loss sits at least ``drop_fraction`` below the
    starting loss. Divergence is detected on the raw epoch losses (the
    first epoch exceeding ``blowup_factor`` times the running minimum;
    smoothing would lag the blow-up by several epochs); since training at
    the divergence point is already unstable, the usable upper bound backs
    off to half that LR. When the whole sweep stays stable the upper bound
    is ``lr_max``. The suggested default is the geometric midpoint of the
    bounds (the sweep is effectively log-scaled, so the geometric mean is
    the natural center).

    ``model_factory`` must return an object with ``parameters()`` and
    ``loss(batch) -> Tensor``.
    """
    if not lr_min < lr_max:
        raise ValueError(f"need lr_min < lr_max, got {lr_min} >= {lr_max}")
    if epochs < 2:
        raise ValueError("need at least 2 epochs to sweep")
    batches = list(batches)
    if not batches:
        raise ValueError("no batches supplied")

    model = model_factory()
    params = model.parameters()
    lrs: list[float] = []
    losses: list[float] = []
    diverged = False
    with np.errstate(over="ignore", invalid="ignore"):  # divergence expected
        for epoch in range(epochs):
            lr = lr_min + (lr_max - lr_min) * epoch / (epochs - 1)
            epoch_losses = []
            for batch in batches:
                for p in params:
                    p.zero_grad()
                try:
                    loss = model.loss(batch)
                except NonFiniteValue:
                    diverged = True
                    break
                epoch_losses.append(loss.item())
                loss.backward()
                for p in params:
                    if p.grad is not None:
                        p.data -= lr * p.grad
            if not epoch_losses:
                break
            lrs.append(lr)
            losses.append(float(np.mean(epoch_losses)))
            if diverged or not math.isfinite(losses[-1]):
                break

    smoothed: list[float] = []
    for value in losses:
        if not math.isfinite(value):
            value = float("inf")
        if smoothed:
            value = smoothing * value + (1.0 - smoothing) * smoothed[-1]
        smoothed.append(value)

    trigger = len(lrs)
    running_min = math.inf
    for i, raw in enumerate(losses):
        if raw > blowup_factor * running_min:
            trigger = i
            break
        running_min = min(running_min, raw)
    if diverged or not math.isfinite(losses[-1]):
        trigger = min(trigger, len(lrs) - 1)

    start = smoothed[0]
    lower = None
    for lr, s in zip(lrs[:trigger], smoothed[:trigger]):
        if s <= start * (1.0 - drop_fraction):
            lower = lr
            break
    if lower is None:
        raise NoDescentDetected("loss never dropped during the LR sweep")

    upper = lrs[-1] if trigger >= len(lrs) else max(lower, lrs[trigger] / 2.0)
    default_lr = math.sqrt(lower * upper)
    return LrRangeResult(lower, upper, default_lr, lrs, losses, smoothed)


def minibatch_indices(n: int, batch_size: int,
                      rng: np.random.Generator | None = None):
    """Yield index arrays covering range(n), shuffled when rng is given."""
    order = np.arange(n)
    if rng is not None:
        rng.shuffle(order)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]
