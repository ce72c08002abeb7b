"""Random-search hyperparameter sweeps with lowest-validation-loss pick."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .nn import TrainConfig

DEFAULT_TRIALS = 15
_KINDS = ("uniform", "log_uniform", "choice")


class EmptyRange(ValueError):
    pass


class AllTrialsFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class ParamRange:
    kind: str
    low: float | None = None
    high: float | None = None
    values: tuple | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise EmptyRange(f"unknown range kind {self.kind!r}")
        if self.kind == "choice":
            if not self.values:
                raise EmptyRange("choice range needs at least one value")
        else:
            if self.low is None or self.high is None or not self.low < self.high:
                raise EmptyRange(f"need low < high, got {self.low}, {self.high}")
            if self.kind == "log_uniform" and self.low <= 0:
                raise EmptyRange("log_uniform needs a positive low bound")

    def sample(self, rng: np.random.Generator):
        if self.kind == "choice":
            return self.values[rng.integers(len(self.values))]
        if self.kind == "uniform":
            return float(rng.uniform(self.low, self.high))
        return float(math.exp(rng.uniform(math.log(self.low),
                                          math.log(self.high))))

    @classmethod
    def from_dict(cls, raw: dict) -> "ParamRange":
        values = raw.get("values")
        return cls(raw["kind"], raw.get("low"), raw.get("high"),
                   tuple(values) if values is not None else None)


@dataclass
class SweepSpec:
    ranges: dict[str, ParamRange]
    trial_count: int = DEFAULT_TRIALS
    seed: int = 0
    base: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.trial_count < 1:
            raise ValueError("trial_count must be >= 1")
        known = {f.name: f.type for f in fields(TrainConfig)}
        unknown = set(self.ranges) - set(known)
        if unknown:
            raise ValueError(f"ranges target unknown fields: {sorted(unknown)}")

    @classmethod
    def from_dict(cls, raw: dict) -> "SweepSpec":
        ranges = {name: ParamRange.from_dict(r)
                  for name, r in raw.get("ranges", {}).items()}
        base = TrainConfig.from_dict(raw.get("base", {}))
        return cls(ranges=ranges, trial_count=raw.get("trial_count",
                                                      DEFAULT_TRIALS),
                   seed=raw.get("seed", 0), base=base)


_INT_FIELDS = {"batch_size", "epochs", "warmup_steps", "seed"}


def generate_trials(spec: SweepSpec) -> list[TrainConfig]:
    """Deterministically derive trial_count configs from the master seed.

    Each trial draws from an independent child stream, so trial i's config
    does not depend on how many trials run before it.
    """
    root = np.random.SeedSequence(spec.seed)
    children = root.spawn(spec.trial_count)
    trials = []
    for i, child in enumerate(children):
        rng = np.random.Generator(np.random.PCG64(child))
        values = spec.base.to_dict()
        for name in sorted(spec.ranges):
            sampled = spec.ranges[name].sample(rng)
            if name in _INT_FIELDS:
                sampled = int(round(float(sampled)))
            values[name] = sampled
        values["seed"] = spec.base.seed + i
        trials.append(TrainConfig.from_dict(values))
    return trials


@dataclass
class TrialRecord:
    index: int
    config: TrainConfig
    status: str  # "ok" | "failed"
    val_loss: float | None = None
    error: str | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "index": self.index,
            "config": self.config.to_dict(),
            "status": self.status,
            "val_loss": self.val_loss,
            "error": self.error,
            "extra": self.extra,
        }


@dataclass
class SweepResult:
    best_index: int
    best_config: TrainConfig
    best_val_loss: float
    records: list[TrialRecord]


def run_sweep(spec: SweepSpec, train_fn,
              ledger_dir: str | Path | None = None) -> SweepResult:
    """Run every trial, persist one record each, return the argmin.

    ``train_fn(config, trial_index)`` must return a dict with at least
    ``val_loss``. Trial failures are recorded and the sweep continues;
    ties on the loss go to the earlier trial.
    """
    trials = generate_trials(spec)
    records: list[TrialRecord] = []
    for i, config in enumerate(trials):
        try:
            result = train_fn(config, i)
            val_loss = float(result["val_loss"])
            extra = {k: v for k, v in result.items() if k != "val_loss"}
            records.append(TrialRecord(i, config, "ok", val_loss, extra=extra))
        except Exception as exc:  # noqa: BLE001 - a bad trial must not kill the sweep
            records.append(TrialRecord(i, config, "failed",
                                       error=f"{type(exc).__name__}: {exc}"))
        if ledger_dir is not None:
            ledger_dir = Path(ledger_dir)
            ledger_dir.mkdir(parents=True, exist_ok=True)
            out = ledger_dir / f"trial_{i:04d}.json"
            out.write_text(json.dumps(records[-1].to_dict(), indent=2) + "\n",
                           encoding="utf-8")
    succeeded = [r for r in records if r.status == "ok"]
    if not succeeded:
        raise AllTrialsFailed(f"all {len(records)} trials failed")
    best = min(succeeded, key=lambda r: (r.val_loss, r.index))
    return SweepResult(best.index, best.config, best.val_loss, records)
