"""Corpus cleaning: junk filters, near-duplicate removal, held-out split.

Near-duplicate detection works on word shingles compared with Jaccard
similarity. Two interchangeable engines produce identical survivor sets:
an exact one (inverted shingle index, every candidate scored exactly) and
a MinHash/LSH one that only banding-collided candidates are scored for.
Candidates are always verified with the exact Jaccard value, so LSH can
differ from the exact engine only through a banding miss; the band/row
shape is chosen to push that probability far below 1e-3 at the 0.9
threshold.
"""

from __future__ import annotations

import gzip
import hashlib
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

_U64 = np.uint64
_HASH_BYTES = 8


@dataclass(frozen=True)
class CleanConfig:
    overlap_threshold: float = 0.9
    max_words: int = 2000
    heldout_fraction: float = 0.10
    shingle_size: int = 5
    seed: int = 0
    num_permutations: int = 128
    bands: int = 32
    exact_below: int = 2000  # "auto" dedup switches to LSH above this many lines

    def __post_init__(self):
        if not 0.0 < self.overlap_threshold <= 1.0:
            raise ValueError("overlap_threshold must be in (0, 1]")
        if not 0.0 <= self.heldout_fraction < 1.0:
            raise ValueError("heldout_fraction must be in [0, 1)")
        if self.max_words < 1:
            raise ValueError("max_words must be >= 1")
        if self.shingle_size < 1:
            raise ValueError("shingle_size must be >= 1")
        if self.num_permutations % self.bands != 0:
            raise ValueError("bands must divide num_permutations")


def remove_non_textual(line: str) -> bool:
    """Keep/drop filter for junk lines: URLs and fragments under 3 words."""
    if "://" in line:
        return False
    return len(line.split()) >= 3


def filter_long_lines(line: str, max_words: int = 2000) -> bool:
    return len(line.split()) <= max_words


def shingle_set(line: str, k: int = 5) -> frozenset[tuple[str, ...]]:
    """Word k-shingles; lines shorter than k fall back to the word set."""
    words = line.split()
    if len(words) < k:
        return frozenset((w,) for w in words)
    return frozenset(tuple(words[i:i + k]) for i in range(len(words) - k + 1))


def jaccard(a: frozenset, b: frozenset) -> float:
    if not a and not b:
        return 1.0
    if not a or not b:
        return 0.0
    inter = len(a & b)
    return inter / (len(a) + len(b) - inter)


def _hash_shingles(shingles: frozenset[tuple[str, ...]]) -> np.ndarray:
    out = np.empty(len(shingles), dtype=_U64)
    for i, sh in enumerate(sorted(shingles)):
        digest = hashlib.blake2b("\x1f".join(sh).encode("utf-8"),
                                 digest_size=_HASH_BYTES).digest()
        out[i] = int.from_bytes(digest, "little")
    return out


class _ExactIndex:
    """Sequential survivor scan backed by an inverted shingle index.

    Hit counts against the index give |A intersect B| exactly, so the
    decision for every candidate is the true Jaccard value; lines sharing
    no shingle cannot reach the threshold (it is > 0) and are never
    considered.
    """

    def __init__(self, threshold: float):
        self.threshold = threshold
        self.sizes: list[int] = []
        self.postings: dict[tuple[str, ...], list[int]] = {}
        self.seen_empty = False

    def is_duplicate(self, shingles: frozenset) -> bool:
        if not shingles:
            dup = self.seen_empty
            self.seen_empty = True
            return dup
        hits: dict[int, int] = {}
        for sh in shingles:
            for idx in self.postings.get(sh, ()):
                hits[idx] = hits.get(idx, 0) + 1
        size = len(shingles)
        for idx, inter in hits.items():
            union = size + self.sizes[idx] - inter
            if inter / union >= self.threshold:
                return True
        survivor = len(self.sizes)
        self.sizes.append(size)
        for sh in shingles:
            self.postings.setdefault(sh, []).append(survivor)
        return False


class _LshIndex:
    """MinHash banding with exact-Jaccard verification of candidates."""

    def __init__(self, cfg: CleanConfig):
        self.threshold = cfg.overlap_threshold
        self.rows = cfg.num_permutations // cfg.bands
        self.bands = cfg.bands
        rng = np.random.Generator(np.random.PCG64(cfg.seed + 0x5151))
        # Multiply-shift hashing on u64 with natural wraparound.
        self.mult = rng.integers(0, 2**63, cfg.num_permutations,
                                 dtype=_U64) * _U64(2) + _U64(1)
        self.add = rng.integers(0, 2**63, cfg.num_permutations, dtype=_U64)
        self.buckets: list[dict[bytes, list[int]]] = [
            {} for _ in range(self.bands)]
        self.shingle_sets: list[frozenset] = []
        self.seen_empty = False

    def signature(self, hashed: np.ndarray) -> np.ndarray:
        with np.errstate(over="ignore"):
            table = self.mult[:, None] * hashed[None, :] + self.add[:, None]
        return table.min(axis=1)

    def is_duplicate(self, shingles: frozenset) -> bool:
        if not shingles:
            dup = self.seen_empty
            self.seen_empty = True
            return dup
        sig = self.signature(_hash_shingles(shingles))
        keys = [sig[b * self.rows:(b + 1) * self.rows].tobytes()
                for b in range(self.bands)]
        candidates: set[int] = set()
        for band, key in enumerate(keys):
            candidates.update(self.buckets[band].get(key, ()))
        for idx in candidates:
            if jaccard(shingles, self.shingle_sets[idx]) >= self.threshold:
                return True
        survivor = len(self.shingle_sets)
        self.shingle_sets.append(shingles)
        for band, key in enumerate(keys):
            self.buckets[band].setdefault(key, []).append(survivor)
        return False


def fuzzy_dedup(lines: Iterable[str], cfg: CleanConfig = CleanConfig(),
                method: str = "auto") -> list[str]:
    """Drop lines whose shingle Jaccard with an earlier survivor reaches
    the threshold; first occurrence wins, order is preserved.

    ``method`` is "exact", "lsh", or "auto" (exact up to
    ``cfg.exact_below`` lines, LSH beyond).
    """
    if method not in ("auto", "exact", "lsh"):
        raise ValueError(f"unknown dedup method {method!r}")
    lines = list(lines)
    if method == "auto":
        method = "exact" if len(lines) <= cfg.exact_below else "lsh"
    index = (_ExactIndex(cfg.overlap_threshold) if method == "exact"
             else _LshIndex(cfg))
    survivors = []
    for line in lines:
        if not index.is_duplicate(shingle_set(line, cfg.shingle_size)):
            survivors.append(line)
    return survivors


def heldout_split(lines: Iterable[str],
                  cfg: CleanConfig = CleanConfig()) -> tuple[list[str], list[str]]:
    """Assign each line to validation with probability ``heldout_fraction``
    using a seed-keyed content hash, so splits are reproducible."""
    key = cfg.seed.to_bytes(8, "little", signed=True)
    threshold = cfg.heldout_fraction * 2.0**64
    train: list[str] = []
    val: list[str] = []
    for line in lines:
        digest = hashlib.blake2b(line.encode("utf-8"), key=key,
                                 digest_size=8).digest()
        (val if int.from_bytes(digest, "little") < threshold else train).append(line)
    return train, val


@dataclass
class CleanStats:
    lines_in: int = 0
    after_non_textual: int = 0
    after_long_lines: int = 0
    after_dedup: int = 0
    train_lines: int = 0
    val_lines: int = 0

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "lines_in": self.lines_in,
            "after_non_textual": self.after_non_textual,
            "after_long_lines": self.after_long_lines,
            "after_dedup": self.after_dedup,
            "train_lines": self.train_lines,
            "val_lines": self.val_lines,
        }


def clean_corpus(lines: Iterable[str], cfg: CleanConfig = CleanConfig(),
                 method: str = "auto") -> tuple[list[str], list[str], CleanStats]:
    """Full pipeline: junk filters -> long-line filter -> dedup -> split."""
    stats = CleanStats()
    kept: list[str] = []
    for line in lines:
        line = line.rstrip("\n")
        stats.lines_in += 1
        if not remove_non_textual(line):
            continue
        stats.after_non_textual += 1
        if not filter_long_lines(line, cfg.max_words):
            continue
        stats.after_long_lines += 1
        kept.append(line)
    survivors = fuzzy_dedup(kept, cfg, method)
    stats.after_dedup = len(survivors)
    train, val = heldout_split(survivors, cfg)
    stats.train_lines = len(train)
    stats.val_lines = len(val)
    return train, val, stats


def open_text(path: str | Path, mode: str = "rt"):
    """Open UTF-8 text, transparently gzip for .gz paths (mtime pinned so
    compressed outputs are byte-reproducible)."""
    path = Path(path)
    if path.suffix == ".gz":
        if "w" in mode:
            # fileobj form: no filename/mtime in the header, so equal text
            # compresses to equal bytes.
            raw = gzip.GzipFile(filename="", fileobj=open(path, "wb"),
                                mode="wb", mtime=0)
            return io.TextIOWrapper(raw, encoding="utf-8")
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def read_lines(path: str | Path) -> Iterator[str]:
    with open_text(path) as fh:
        for line in fh:
            yield line.rstrip("\n")


def write_lines(path: str | Path, lines: Iterable[str]) -> None:
    with open_text(path, "wt") as fh:
        for line in lines:
            fh.write(line)
            fh.write("\n")


def write_stats(path: str | Path, stats: CleanStats) -> None:
    Path(path).write_text(json.dumps(stats.to_dict(), indent=2) + "\n",
                          encoding="utf-8")
