"""Probability JSONL files exchanged between pipeline stages."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .data import Label, SchemaViolation

PREDICTIONS_FORMAT_VERSION = 1
KINDS = ("text_predictions", "audio_predictions", "fusion_predictions")


def write_predictions(path: str | Path, kind: str, records: list[dict]) -> None:
    if kind not in KINDS:
        raise ValueError(f"unknown prediction kind {kind!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"version": PREDICTIONS_FORMAT_VERSION,
                             "kind": kind}) + "\n")
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def read_predictions(path: str | Path) -> tuple[str, list[dict]]:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        try:
            header = json.loads(fh.readline())
        except json.JSONDecodeError:
            raise SchemaViolation("header is not valid JSON", 0, str(path))
        if header.get("version") != PREDICTIONS_FORMAT_VERSION:
            raise SchemaViolation(
                f"predictions version {header.get('version')!r}", 0, str(path))
        kind = header.get("kind")
        if kind not in KINDS:
            raise SchemaViolation(f"unknown prediction kind {kind!r}", 0,
                                  str(path))
        records = []
        for number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                raise SchemaViolation("invalid JSON", number, str(path))
            if "proba" not in rec or "participant_id" not in rec:
                raise SchemaViolation("missing participant_id/proba", number,
                                      str(path))
            if len(rec["proba"]) != len(Label):
                raise SchemaViolation(
                    f"proba must have {len(Label)} entries", number, str(path))
            records.append(rec)
    return kind, records


def chunk_probas(records: list[dict]) -> dict[tuple[str, int], np.ndarray]:
    return {(r["participant_id"], int(r["chunk_index"])):
            np.asarray(r["proba"], dtype=np.float64) for r in records}


def participant_probas(records: list[dict]) -> dict[str, np.ndarray]:
    return {r["participant_id"]: np.asarray(r["proba"], dtype=np.float64)
            for r in records}
