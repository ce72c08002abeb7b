"""MLP classifier over precomputed speech-parameter vectors.

Feature tables arrive as CSV/TSV with an id column, a label column and one
column per acoustic parameter. Columns are reordered to a canonical layout
so files with shuffled columns produce identical vectors; values are
z-scored with statistics fitted on the training split only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import ClassMissing, Label
from . import nn
from .nn import Tensor
from .nn.tensor import softmax

DEFAULT_FEATURE_COUNT = 94

# Acoustic parameter names as exported by the feature extractor (the
# trailing "_numeric" marker is stripped on load). Files may carry more
# columns than this list; extras keep a stable alphabetical order.
KNOWN_FEATURE_NAMES = [
    "F0semitoneFrom27.5Hz_sma3nz_amean",
    "F0semitoneFrom27.5Hz_sma3nz_stddevNorm",
    "F0semitoneFrom27.5Hz_sma3nz_pctlrange0-2",
    "loudness_sma3_amean",
    "loudness_sma3_stddevNorm",
    "loudness_sma3_pctlrange0-2",
    "loudness_sma3_meanRisingSlope",
    "loudness_sma3_stddevRisingSlope",
    "loudness_sma3_meanFallingSlope",
    "loudness_sma3_stddevFallingSlope",
    "spectralFlux_sma3_amean",
    "spectralFlux_sma3_stddevNorm",
    "mfcc1_sma3_amean",
    "mfcc1_sma3_stddevNorm",
    "mfcc2_sma3_amean",
    "mfcc2_sma3_stddevNorm",
    "mfcc3_sma3_amean",
    "mfcc3_sma3_stddevNorm",
    "mfcc4_sma3_amean",
    "mfcc4_sma3_stddevNorm",
    "jitterLocal_sma3nz_amean",
    "jitterLocal_sma3nz_stddevNorm",
    "shimmerLocaldB_sma3nz_amean",
    "shimmerLocaldB_sma3nz_stddevNorm",
    "HNRdBACF_sma3nz_amean",
    "HNRdBACF_sma3nz_stddevNorm",
    "logRelF0-H1-H2_sma3nz_amean",
    "logRelF0-H1-H2_sma3nz_stddevNorm",
    "logRelF0-H1-A3_sma3nz_amean",
    "logRelF0-H1-A3_sma3nz_stddevNorm",
    "F1frequency_sma3nz_amean",
    "F1frequency_sma3nz_stddevNorm",
    "F1bandwidth_sma3nz_amean",
    "F1bandwidth_sma3nz_stddevNorm",
    "F1amplitudeLogRelF0_sma3nz_amean",
    "F1amplitudeLogRelF0_sma3nz_stddevNorm",
    "F2frequency_sma3nz_amean",
    "F2frequency_sma3nz_stddevNorm",
    "F2amplitudeLogRelF0_sma3nz_amean",
    "F2amplitudeLogRelF0_sma3nz_stddevNorm",
    "F3frequency_sma3nz_amean",
    "F3frequency_sma3nz_stddevNorm",
    "F3bandwidth_sma3nz_amean",
    "F3bandwidth_sma3nz_stddevNorm",
    "F3amplitudeLogRelF0_sma3nz_amean",
    "F3amplitudeLogRelF0_sma3nz_stddevNorm",
    "alphaRatioV_sma3nz_amean",
    "alphaRatioV_sma3nz_stddevNorm",
    "hammarbergIndexV_sma3nz_amean",
    "hammarbergIndexV_sma3nz_stddevNorm",
    "slopeV0-500_sma3nz_amean",
    "slopeV500-1500_sma3nz_amean",
    "slopeV500-1500_sma3nz_stddevNorm",
    "spectralFluxV_sma3nz_amean",
    "mfcc1V_sma3nz_amean",
    "mfcc1V_sma3nz_stddevNorm",
    "mfcc2V_sma3nz_amean",
    "mfcc2V_sma3nz_stddevNorm",
    "mfcc3V_sma3nz_amean",
]

_ID_COLUMNS = ("participant_id", "id")
_LABEL_COLUMN = "label"
_MISSING_TOKENS = {"", "na", "nan", "none", "null"}


class MissingIdColumn(ValueError):
    pass


class UnknownColumn(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


@dataclass
class FeatureVector:
    participant_id: str
    values: np.ndarray


@dataclass
class FeatureTable:
    ids: list[str]
    labels: list[Label | None]
    matrix: np.ndarray  # (n, feature_count), NaN marks missing values
    feature_names: list[str]

    def __len__(self) -> int:
        return len(self.ids)

    def vectors(self) -> list[FeatureVector]:
        return [FeatureVector(pid, self.matrix[i])
                for i, pid in enumerate(self.ids)]

    def subset(self, indices) -> "FeatureTable":
        indices = list(indices)
        return FeatureTable([self.ids[i] for i in indices],
                            [self.labels[i] for i in indices],
                            self.matrix[indices].copy(), self.feature_names)

    def label_array(self) -> np.ndarray:
        if any(l is None for l in self.labels):
            raise ValueError("table has unlabeled rows")
        return np.array([int(l) for l in self.labels], dtype=np.int64)


def canonical_feature_order(columns: list[str]) -> list[str]:
    """Known parameters first (in their published order), then any extra
    feature columns alphabetically."""
    known = [name for name in KNOWN_FEATURE_NAMES if name in columns]
    extra = sorted(c for c in columns if c not in KNOWN_FEATURE_NAMES)
    return known + extra


def _normalize_header(name: str) -> str:
    name = name.strip()
    return name[:-len("_numeric")] if name.endswith("_numeric") else name


def load_features(path: str | Path, feature_names: list[str] | None = None,
                  feature_count: int | None = None) -> FeatureTable:
    """Read a feature table, normalizing column order.

    ``feature_names`` pins the exact expected feature set (any other
    feature column raises UnknownColumn); ``feature_count`` validates the
    declared dimensionality.
    """
    path = Path(path)
    delimiter = "\t" if path.suffix.lower() == ".tsv" else ","
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader, None)
        if header is None:
            raise MissingIdColumn(f"{path}: empty file")
        header = [_normalize_header(h) for h in header]
        id_col = next((h for h in _ID_COLUMNS if h in header), None)
        if id_col is None:
            raise MissingIdColumn(
                f"{path}: no id column (expected one of {_ID_COLUMNS})")
        if _LABEL_COLUMN not in header:
            raise UnknownColumn(f"{path}: no '{_LABEL_COLUMN}' column")
        feature_cols = [h for h in header if h != id_col and h != _LABEL_COLUMN]
        if feature_names is not None:
            unexpected = sorted(set(feature_cols) - set(feature_names))
            if unexpected:
                raise UnknownColumn(f"{path}: unexpected columns {unexpected}")
            missing = sorted(set(feature_names) - set(feature_cols))
            if missing:
                raise UnknownColumn(f"{path}: missing columns {missing}")
            ordered = list(feature_names)
        else:
            ordered = canonical_feature_order(feature_cols)
        if feature_count is not None and len(ordered) != feature_count:
            raise DimensionMismatch(
                f"{path}: {len(ordered)} feature columns, declared {feature_count}")

        col_of = {h: i for i, h in enumerate(header)}
        ids: list[str] = []
        labels: list[Label | None] = []
        rows: list[list[float]] = []
        for row in reader:
            if not row:
                continue
            ids.append(row[col_of[id_col]].strip())
            raw_label = row[col_of[_LABEL_COLUMN]].strip()
            labels.append(Label.from_string(raw_label) if raw_label else None)
            values = []
            for name in ordered:
                cell = row[col_of[name]].strip()
                if cell.lower() in _MISSING_TOKENS:
                    values.append(np.nan)
                else:
                    values.append(float(cell))
            rows.append(values)
    matrix = (np.array(rows, dtype=np.float64)
              if rows else np.empty((0, len(ordered))))
    return FeatureTable(ids, labels, matrix, ordered)


def save_features(table: FeatureTable, path: str | Path) -> None:
    path = Path(path)
    delimiter = "\t" if path.suffix.lower() == ".tsv" else ","
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        writer.writerow(["participant_id", "label"] + table.feature_names)
        for i, pid in enumerate(table.ids):
            label = table.labels[i]
            row = [pid, label.to_string() if label is not None else ""]
            row += [repr(float(v)) if np.isfinite(v) else ""
                    for v in table.matrix[i]]
            writer.writerow(row)


@dataclass
class Standardizer:
    """Train-split column means/stds; transform imputes then z-scores.

    Constant columns (std below the guard) map to exactly zero.
    """

    means: np.ndarray
    stds: np.ndarray
    guard: float = 1e-12

    @classmethod
    def fit(cls, matrix: np.ndarray) -> "Standardizer":
        if matrix.size == 0:
            raise ValueError("cannot fit a standardizer on an empty matrix")
        means = np.nanmean(matrix, axis=0)
        means = np.where(np.isfinite(means), means, 0.0)
        stds = np.nanstd(matrix, axis=0)
        stds = np.where(np.isfinite(stds), stds, 0.0)
        return cls(means, stds)

    def transform(self, matrix: np.ndarray) -> np.ndarray:
        matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
        if matrix.shape[1] != self.means.shape[0]:
            raise DimensionMismatch(
                f"vector of width {matrix.shape[1]}, "
                f"standardizer fitted on {self.means.shape[0]}")
        filled = np.where(np.isnan(matrix), self.means, matrix)
        scale = np.where(self.stds > self.guard, self.stds, 1.0)
        out = (filled - self.means) / scale
        return np.where(self.stds > self.guard, out, 0.0)

    def to_dict(self) -> dict:
        return {"means": self.means.tolist(), "stds": self.stds.tolist()}

    @classmethod
    def from_dict(cls, raw: dict) -> "Standardizer":
        return cls(np.array(raw["means"], dtype=np.float64),
                   np.array(raw["stds"], dtype=np.float64))


@dataclass(frozen=True)
class MlpConfig:
    feature_count: int = DEFAULT_FEATURE_COUNT
    hidden: tuple[int, int] = (64, 16)
    dropout: float = 0.1

    @property
    def layer_sizes(self) -> list[int]:
        return [self.feature_count, *self.hidden, len(Label)]

    def to_dict(self) -> dict:
        return {"feature_count": self.feature_count,
                "hidden": list(self.hidden), "dropout": self.dropout}

    @classmethod
    def from_dict(cls, raw: dict) -> "MlpConfig":
        return cls(raw["feature_count"], tuple(raw["hidden"]), raw["dropout"])


class AudioMlp:
    """Three dense layers with relu between them and dropout in training."""

    def __init__(self, cfg: MlpConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.Generator(np.random.PCG64(seed))
        sizes = cfg.layer_sizes
        self.layers = [
            nn.Dense(sizes[i], sizes[i + 1], rng,
                     init_std=1.0 / np.sqrt(sizes[i]))
            for i in range(len(sizes) - 1)
        ]
        self.drop = nn.Dropout(cfg.dropout)

    def __call__(self, x, rng=None, training: bool = False) -> Tensor:
        h = x if isinstance(x, Tensor) else Tensor(x)
        if h.shape[-1] != self.cfg.feature_count:
            raise DimensionMismatch(
                f"input width {h.shape[-1]}, model expects {self.cfg.feature_count}")
        for layer in self.layers[:-1]:
            h = self.drop(nn.relu(layer(h)), rng, training)
        return self.layers[-1](h)

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"layer{i}.w"] = layer.w
            out[f"layer{i}.b"] = layer.b
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())


@dataclass
class AudioClassifier:
    mlp: AudioMlp
    standardizer: Standardizer

    def predict_proba(self, raw_vectors: np.ndarray) -> np.ndarray:
        """Softmax class probabilities for raw (unstandardized) vectors."""
        x = self.standardizer.transform(raw_vectors)
        return softmax(self.mlp(x), axis=-1).data


def train_audio(train_table: FeatureTable, val_table: FeatureTable | None,
                cfg: MlpConfig, train_cfg: nn.TrainConfig,
                ) -> tuple[AudioClassifier, list[dict]]:
    """Adam training with constant LR; keeps the lowest-validation-loss
    epoch. Raises ClassMissing when the training split lacks a class."""
    labels = train_table.label_array()
    present = set(labels.tolist())
    missing = [l.to_string() for l in Label if int(l) not in present]
    if missing:
        raise ClassMissing(f"training split has no samples for {missing}")
    if cfg.feature_count != train_table.matrix.shape[1]:
        raise DimensionMismatch(
            f"table width {train_table.matrix.shape[1]}, "
            f"config expects {cfg.feature_count}")

    if train_cfg.dropout is not None and train_cfg.dropout != cfg.dropout:
        cfg = MlpConfig(cfg.feature_count, cfg.hidden, train_cfg.dropout)
    standardizer = Standardizer.fit(train_table.matrix)
    x_train = standardizer.transform(train_table.matrix)
    x_val = y_val = None
    if val_table is not None and len(val_table):
        x_val = standardizer.transform(val_table.matrix)
        y_val = val_table.label_array()

    mlp = AudioMlp(cfg, seed=train_cfg.seed)
    params = mlp.parameters()
    state = nn.AdamState.for_params(params, train_cfg.beta1, train_cfg.beta2,
                                    train_cfg.eps)
    rng = np.random.Generator(np.random.PCG64((train_cfg.seed, 0xA0)))
    named = mlp.named_parameters()
    best = {k: v.data.copy() for k, v in named.items()}
    best_val = np.inf
    history: list[dict] = []
    for epoch in range(train_cfg.epochs):
        losses = []
        for idx in nn.minibatch_indices(len(x_train), train_cfg.batch_size, rng):
            for p in params:
                p.zero_grad()
            logits = mlp(x_train[idx], rng, training=True)
            loss = nn.cross_entropy(logits, labels[idx])
            loss.backward()
            nn.adam_step(params, state, train_cfg.peak_lr)
            losses.append(loss.item())
        record = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if x_val is not None:
            val_logits = mlp(x_val)
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
    return AudioClassifier(mlp, standardizer), history


def transcribed_as_test_split(table: FeatureTable, transcribed_ids: set[str],
                              val_fraction: float = 0.1, seed: int = 0,
                              ) -> tuple[FeatureTable, FeatureTable, FeatureTable]:
    """Split policy used for the audio model: every participant with a
    transcript goes to the test set, the rest split train/validation."""
    test_idx = [i for i, pid in enumerate(table.ids) if pid in transcribed_ids]
    rest = [i for i, pid in enumerate(table.ids) if pid not in transcribed_ids]
    rng = np.random.Generator(np.random.PCG64(seed))
    order = [rest[k] for k in rng.permutation(len(rest))]
    n_val = int(round(val_fraction * len(order)))
    val_idx = sorted(order[:n_val])
    train_idx = sorted(order[n_val:])
    return table.subset(train_idx), table.subset(val_idx), table.subset(test_idx)


def save_audio_classifier(path, clf: AudioClassifier) -> None:
    tensors = {k: v.data for k, v in clf.mlp.named_parameters().items()}
    meta = {
        "kind": "audio_classifier",
        "config": clf.mlp.cfg.to_dict(),
        "standardizer": clf.standardizer.to_dict(),
    }
    nn.save_checkpoint(path, tensors, meta)


def load_audio_classifier(path) -> AudioClassifier:
    tensors, meta = nn.load_checkpoint(path)
    if meta.get("kind") != "audio_classifier":
        raise nn.CheckpointError(f"{path}: not an audio classifier checkpoint")
    mlp = AudioMlp(MlpConfig.from_dict(meta["config"]), seed=0)
    live = {k: v.data for k, v in mlp.named_parameters().items()}
    nn.assign_state(live, tensors)
    return AudioClassifier(mlp, Standardizer.from_dict(meta["standardizer"]))


AUDIO_PRESETS: dict[str, nn.TrainConfig] = {
    "default": nn.TrainConfig(batch_size=4, epochs=10, peak_lr=2.5e-2,
                              dropout=0.1),
    "best": nn.TrainConfig(batch_size=15, epochs=50, peak_lr=5e-7,
                           dropout=0.3),
}
