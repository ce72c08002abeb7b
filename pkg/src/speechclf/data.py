"""Labels, transcript chunking, stratified splits and the JSONL format."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DATASET_FORMAT_VERSION = 1
DEFAULT_MIN_CHUNK = 16


class Label(enum.IntEnum):
    PSYCHOTIC = 0
    DEPRESSED = 1
    HEALTHY = 2

    @classmethod
    def from_string(cls, name: str) -> "Label":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown label {name!r}") from None

    def to_string(self) -> str:
        return self.name.lower()


class ClassMissing(ValueError):
    """A required class has no samples."""


class SchemaViolation(ValueError):
    def __init__(self, message: str, record: int, path: str | None = None):
        where = f"{path}:" if path else ""
        super().__init__(f"{where}record {record}: {message}")
        self.record = record


@dataclass
class LabeledTranscript:
    participant_id: str
    label: Label
    token_ids: list[int]

    def __post_init__(self):
        if not self.token_ids:
            raise ValueError(f"transcript {self.participant_id}: no tokens")


@dataclass
class Chunk:
    participant_id: str
    label: Label
    token_ids: list[int]
    chunk_index: int


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.8
    val: float = 0.1
    test: float = 0.1
    group_by_participant: bool = True
    seed: int = 0

    def __post_init__(self):
        total = self.train + self.val + self.test
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"split fractions sum to {total}, expected 1")
        if min(self.train, self.val, self.test) < 0:
            raise ValueError("split fractions must be non-negative")

    @property
    def fractions(self) -> tuple[float, float, float]:
        return (self.train, self.val, self.test)


@dataclass
class Splits:
    train: list
    val: list
    test: list

    def __iter__(self):
        return iter((self.train, self.val, self.test))


def chunk_transcript(transcript: LabeledTranscript, chunk_size: int,
                     min_chunk: int = DEFAULT_MIN_CHUNK) -> list[Chunk]:
    """Greedy left-to-right slices of ``chunk_size`` tokens; a short final
    remainder is kept only when it has at least ``min_chunk`` tokens."""
    if chunk_size < 1:
        raise ValueError("chunk_size must be >= 1")
    chunks = []
    ids = transcript.token_ids
    for index, start in enumerate(range(0, len(ids), chunk_size)):
        piece = ids[start:start + chunk_size]
        if len(piece) < chunk_size and len(piece) < min_chunk:
            break
        chunks.append(Chunk(transcript.participant_id, transcript.label,
                            list(piece), index))
    return chunks


def _apportion(total: int, fractions: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment; remainder ties go to the later
    split, so each count stays within one of fraction*total."""
    raw = [total * f for f in fractions]
    base = [int(x) for x in raw]
    leftover = total - sum(base)
    order = sorted(range(len(fractions)),
                   key=lambda i: (raw[i] - base[i], i), reverse=True)
    for i in order[:leftover]:
        base[i] += 1
    return base


def _sample_sort_key(sample) -> tuple:
    return (sample.participant_id, getattr(sample, "chunk_index", 0))


def stratified_split(samples: Sequence, spec: SplitSpec,
                     require_all_classes: bool = False) -> Splits:
    """Split samples per class at the requested fractions.

    Chunk-level mode stratifies individual samples; grouped mode assigns
    whole participants so no participant ever spans two splits. Both modes
    are deterministic for a given (samples, spec).
    """
    if require_all_classes:
        present = {s.label for s in samples}
        missing = [l.to_string() for l in Label if l not in present]
        if missing:
            raise ClassMissing(f"no samples for {missing}")

    buckets: dict[Label, list] = {}
    for s in samples:
        buckets.setdefault(s.label, []).append(s)

    out: tuple[list, list, list] = ([], [], [])
    for label in sorted(buckets):
        members = sorted(buckets[label], key=_sample_sort_key)
        rng = np.random.Generator(np.random.PCG64((spec.seed, int(label))))
        if spec.group_by_participant:
            participants = sorted({m.participant_id for m in members})
            order = list(rng.permutation(len(participants)))
            counts = _apportion(len(participants), spec.fractions)
            assignment: dict[str, int] = {}
            pos = 0
            for split_idx, count in enumerate(counts):
                for k in order[pos:pos + count]:
                    assignment[participants[k]] = split_idx
                pos += count
            for m in members:
                out[assignment[m.participant_id]].append(m)
        else:
            order = list(rng.permutation(len(members)))
            counts = _apportion(len(members), spec.fractions)
            pos = 0
            for split_idx, count in enumerate(counts):
                for k in order[pos:pos + count]:
                    out[split_idx].append(members[k])
                pos += count

    train, val, test = (sorted(part, key=_sample_sort_key) for part in out)
    return Splits(train, val, test)


def class_counts(samples: Iterable) -> dict[Label, int]:
    counts = {label: 0 for label in Label}
    for s in samples:
        counts[s.label] += 1
    return counts


def save_dataset(samples: Iterable[Chunk], path: str | Path) -> None:
    """One JSON record per chunk after a version header line."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"version": DATASET_FORMAT_VERSION,
                             "kind": "chunks"}) + "\n")
        for s in samples:
            record = {
                "participant_id": s.participant_id,
                "label": s.label.to_string(),
                "tokens": list(map(int, s.token_ids)),
                "chunk_index": s.chunk_index,
            }
            fh.write(json.dumps(record) + "\n")


def load_dataset(path: str | Path) -> list[Chunk]:
    path = Path(path)
    samples: list[Chunk] = []
    with open(path, encoding="utf-8") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError:
            raise SchemaViolation("header is not valid JSON", 0, str(path))
        if header.get("version") != DATASET_FORMAT_VERSION:
            raise SchemaViolation(
                f"dataset version {header.get('version')!r}, "
                f"expected {DATASET_FORMAT_VERSION}", 0, str(path))
        for number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError:
                raise SchemaViolation("invalid JSON", number, str(path))
            for key in ("participant_id", "label", "tokens", "chunk_index"):
                if key not in raw:
                    raise SchemaViolation(f"missing field {key!r}", number,
                                          str(path))
            try:
                label = Label.from_string(raw["label"])
            except ValueError as exc:
                raise SchemaViolation(str(exc), number, str(path))
            tokens = raw["tokens"]
            if (not isinstance(tokens, list)
                    or any(not isinstance(t, int) for t in tokens)):
                raise SchemaViolation("tokens must be a list of ints",
                                      number, str(path))
            samples.append(Chunk(str(raw["participant_id"]), label,
                                 tokens, int(raw["chunk_index"])))
    return samples
