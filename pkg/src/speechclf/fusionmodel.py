"""Late-fusion hybrid: frozen text and audio outputs feed one dense layer.

Every chunk contributes one fusion row: its own text probabilities joined
with its participant's (repeated) audio probabilities. A single 6 -> 3
dense layer is the only thing trained; the source models stay frozen, and
a digest guard trips if their checkpoint files change underneath us.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Chunk, Label
from . import nn
from .nn import Tensor
from .nn.tensor import softmax

FUSION_INPUT_DIM = 2 * len(Label)
_PROBA_TOL = 1e-6
_LOG_FLOOR = 1e-12


class MissingAudioForParticipant(KeyError):
    def __init__(self, participant_id: str):
        super().__init__(f"no audio prediction for participant {participant_id!r}")
        self.participant_id = participant_id


class MissingTextForChunk(KeyError):
    pass


class SubmodelMutated(RuntimeError):
    """A frozen submodel checkpoint changed during fusion training."""


@dataclass
class FusionInput:
    participant_id: str
    chunk_index: int
    text_proba: np.ndarray
    audio_proba: np.ndarray
    label: Label

    def __post_init__(self):
        self.text_proba = np.asarray(self.text_proba, dtype=np.float64)
        self.audio_proba = np.asarray(self.audio_proba, dtype=np.float64)
        for name, vec in (("text", self.text_proba), ("audio", self.audio_proba)):
            if vec.shape != (len(Label),):
                raise ValueError(f"{name} vector must have length {len(Label)}")
            if abs(float(vec.sum()) - 1.0) > _PROBA_TOL:
                raise ValueError(f"{name} probabilities sum to {vec.sum():.8f}")

    def features(self, from_log: bool = False) -> np.ndarray:
        vec = np.concatenate([self.text_proba, self.audio_proba])
        if from_log:
            vec = np.log(np.clip(vec, _LOG_FLOOR, None))
        return vec


def build_fusion_dataset(text_probas: dict[tuple[str, int], np.ndarray],
                         audio_probas: dict[str, np.ndarray],
                         chunks: list[Chunk]) -> list[FusionInput]:
    """Join chunk-level text predictions with participant-level audio
    predictions; each chunk of a participant repeats the one audio vector."""
    rows = []
    for chunk in chunks:
        key = (chunk.participant_id, chunk.chunk_index)
        if key not in text_probas:
            raise MissingTextForChunk(
                f"no text prediction for chunk {key}")
        if chunk.participant_id not in audio_probas:
            raise MissingAudioForParticipant(chunk.participant_id)
        rows.append(FusionInput(chunk.participant_id, chunk.chunk_index,
                                text_probas[key],
                                audio_probas[chunk.participant_id],
                                chunk.label))
    return rows


class FusionModel:
    """One dense 6 -> 3 map over [text_proba, audio_proba]."""

    def __init__(self, dropout: float = 0.15, seed: int = 0,
                 from_log: bool = False):
        rng = np.random.Generator(np.random.PCG64(seed))
        self.dense = nn.Dense(FUSION_INPUT_DIM, len(Label), rng,
                              init_std=1.0 / np.sqrt(FUSION_INPUT_DIM))
        self.drop = nn.Dropout(dropout)
        self.from_log = from_log

    def logits(self, features: np.ndarray, rng=None,
               training: bool = False) -> Tensor:
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if x.shape[1] != FUSION_INPUT_DIM:
            raise nn.ShapeMismatch(
                f"fusion input width {x.shape[1]}, expected {FUSION_INPUT_DIM}")
        return self.dense(self.drop(Tensor(x), rng, training))

    def predict_proba(self, inputs: "FusionInput | list[FusionInput]") -> np.ndarray:
        single = isinstance(inputs, FusionInput)
        rows = [inputs] if single else list(inputs)
        feats = np.stack([r.features(self.from_log) for r in rows])
        probs = softmax(self.logits(feats), axis=-1).data
        return probs[0] if single else probs

    def named_parameters(self) -> dict[str, Tensor]:
        return {"fusion.w": self.dense.w, "fusion.b": self.dense.b}

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())


def predict_fusion(model: FusionModel, fusion_input: FusionInput) -> np.ndarray:
    return model.predict_proba(fusion_input)


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class FrozenGuard:
    """Snapshot of submodel checkpoint digests; verify() raises if any of
    the frozen files changed."""

    def __init__(self, paths: list[str | Path]):
        self.paths = [Path(p) for p in paths]
        self.digests = [file_digest(p) for p in self.paths]

    def verify(self) -> None:
        for path, before in zip(self.paths, self.digests):
            if file_digest(path) != before:
                raise SubmodelMutated(f"frozen checkpoint {path} changed")


def train_fusion(train_rows: list[FusionInput],
                 val_rows: list[FusionInput] | None,
                 train_cfg: nn.TrainConfig,
                 frozen: FrozenGuard | None = None,
                 from_log: bool = False,
                 ) -> tuple[FusionModel, list[dict]]:
    """Train the fusion layer; only its 6 -> 3 parameters change."""
    if not train_rows:
        raise ValueError("no fusion training rows")
    dropout = train_cfg.dropout if train_cfg.dropout is not None else 0.15
    model = FusionModel(dropout, seed=train_cfg.seed, from_log=from_log)
    params = model.parameters()
    state = nn.AdamState.for_params(params, train_cfg.beta1, train_cfg.beta2,
                                    train_cfg.eps)
    rng = np.random.Generator(np.random.PCG64((train_cfg.seed, 0xF0)))

    x_train = np.stack([r.features(from_log) for r in train_rows])
    y_train = np.array([int(r.label) for r in train_rows])
    x_val = y_val = None
    if val_rows:
        x_val = np.stack([r.features(from_log) for r in val_rows])
        y_val = np.array([int(r.label) for r in val_rows])

    named = model.named_parameters()
    best = {k: v.data.copy() for k, v in named.items()}
    best_val = np.inf
    history: list[dict] = []
    for epoch in range(train_cfg.epochs):
        losses = []
        for idx in nn.minibatch_indices(len(x_train), train_cfg.batch_size, rng):
            for p in params:
                p.zero_grad()
            loss = nn.cross_entropy(model.logits(x_train[idx], rng, True),
                                    y_train[idx])
            loss.backward()
            nn.adam_step(params, state, train_cfg.peak_lr)
            losses.append(loss.item())
        record = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if x_val is not None:
            val_logits = model.logits(x_val)
            val_loss = nn.cross_entropy(val_logits, y_val).item()
            record["val_loss"] = val_loss
            record["val_accuracy"] = float(
                (val_logits.data.argmax(axis=1) == y_val).mean())
            if val_loss < best_val:
                best_val = val_loss
                best = {k: v.data.copy() for k, v in named.items()}
        history.append(record)
    if x_val is not None:
        for k, v in named.items():
            v.data[...] = best[k]
    if frozen is not None:
        frozen.verify()
    return model, history


def save_fusion_model(path, model: FusionModel) -> None:
    tensors = {k: v.data for k, v in model.named_parameters().items()}
    meta = {"kind": "fusion_model", "dropout": model.drop.rate,
            "from_log": model.from_log}
    nn.save_checkpoint(path, tensors, meta)


def load_fusion_model(path) -> FusionModel:
    tensors, meta = nn.load_checkpoint(path)
    if meta.get("kind") != "fusion_model":
        raise nn.CheckpointError(f"{path}: not a fusion checkpoint")
    model = FusionModel(meta["dropout"], seed=0, from_log=meta["from_log"])
    live = {k: v.data for k, v in model.named_parameters().items()}
    nn.assign_state(live, tensors)
    return model


FUSION_PRESET = nn.TrainConfig(batch_size=16, epochs=55, peak_lr=1e-2,
                               dropout=0.15)
