"""Byte-level byte-pair-encoding tokenizer.

Text is pretokenized on whitespace with the leading space kept attached to
the following word, then each pretoken is encoded byte by byte. The 256
byte values are remapped to printable unicode characters so every token is
a plain JSON-safe string (a space byte becomes the visible marker char).
Merges are learned greedily by pair frequency; ties break toward the
lexicographically smaller pair, which makes training fully deterministic.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

SPECIAL_TOKENS = ["<s>", "</s>", "<pad>", "<unk>", "<mask>"]
VOCAB_FORMAT_VERSION = 1

_PRETOKEN_RE = re.compile(r" ?\S+|\s+")


class CorpusEmpty(ValueError):
    """Tokenizer training got a corpus with no content."""


class IdOutOfRange(ValueError):
    """decode() received an id outside the vocabulary."""


def _byte_to_char_table() -> dict[int, str]:
    # Bijective byte -> printable char map; non-printable bytes are moved
    # into the 256+ plane so tokens never contain control characters.
    printable = (list(range(ord("!"), ord("~") + 1))
                 + list(range(0xA1, 0xAD)) + list(range(0xAE, 0x100)))
    table = {}
    bump = 0
    for b in range(256):
        if b in printable:
            table[b] = chr(b)
        else:
            table[b] = chr(256 + bump)
            bump += 1
    return table


_BYTE_TO_CHAR = _byte_to_char_table()
_CHAR_TO_BYTE = {c: b for b, c in _BYTE_TO_CHAR.items()}


def pretokenize(text: str) -> list[str]:
    """Split on whitespace, attaching a single leading space to each word.

    Concatenating the pieces reproduces the input exactly, so encoding is
    lossless for arbitrary whitespace.
    """
    return _PRETOKEN_RE.findall(text)


def _to_symbols(pretoken: str) -> tuple[str, ...]:
    return tuple(_BYTE_TO_CHAR[b] for b in pretoken.encode("utf-8"))


@dataclass
class Vocab:
    merges: list[tuple[str, str]]
    token_to_id: dict[str, int]
    special_tokens: list[str] = field(default_factory=lambda: list(SPECIAL_TOKENS))

    def __post_init__(self):
        self.id_to_token = {i: t for t, i in self.token_to_id.items()}
        self.merge_rank = {pair: r for r, pair in enumerate(self.merges)}
        self._encode_cache: dict[str, list[int]] = {}

    def __len__(self) -> int:
        return len(self.token_to_id)

    @property
    def bos_id(self) -> int:
        return self.token_to_id[self.special_tokens[0]]

    @property
    def eos_id(self) -> int:
        return self.token_to_id[self.special_tokens[1]]

    @property
    def pad_id(self) -> int:
        return self.token_to_id[self.special_tokens[2]]

    @property
    def unk_id(self) -> int:
        return self.token_to_id[self.special_tokens[3]]

    @property
    def mask_id(self) -> int:
        return self.token_to_id[self.special_tokens[4]]

    @property
    def special_ids(self) -> set[int]:
        return {self.token_to_id[t] for t in self.special_tokens}

    def content_id_range(self) -> tuple[int, int]:
        """Half-open id range holding the non-special tokens."""
        return len(self.special_tokens), len(self.token_to_id)


def _base_vocab() -> dict[str, int]:
    token_to_id = {t: i for i, t in enumerate(SPECIAL_TOKENS)}
    for b in range(256):
        token_to_id[_BYTE_TO_CHAR[b]] = len(token_to_id)
    return token_to_id


def count_pairs(words: list[tuple[str, ...]], counts: list[int]) -> dict[tuple[str, str], int]:
    """Frequency of each adjacent symbol pair, weighted by word count."""
    pairs: dict[tuple[str, str], int] = {}
    for word, n in zip(words, counts):
        for a, b in zip(word, word[1:]):
            pairs[a, b] = pairs.get((a, b), 0) + n
    return pairs


def _merge_word(word: tuple[str, ...], pair: tuple[str, str],
                merged: str) -> tuple[str, ...]:
    out = []
    i = 0
    while i < len(word):
        if i + 1 < len(word) and word[i] == pair[0] and word[i + 1] == pair[1]:
            out.append(merged)
            i += 2
        else:
            out.append(word[i])
            i += 1
    return tuple(out)


def train_bpe(corpus, vocab_size: int, min_pair_count: int = 2) -> Vocab:
    """Learn merges over an iterable of text lines until ``vocab_size``.

    Each line is pretokenized independently; pairs never cross pretoken
    boundaries. Stops early when no pair occurs ``min_pair_count`` times.
    """
    base = _base_vocab()
    if vocab_size < len(base):
        raise ValueError(
            f"vocab_size {vocab_size} below byte+special floor {len(base)}")

    word_counts: dict[tuple[str, ...], int] = {}
    for line in corpus:
        for pretoken in pretokenize(line.rstrip("\n")):
            sym = _to_symbols(pretoken)
            if sym:
                word_counts[sym] = word_counts.get(sym, 0) + 1
    if not word_counts:
        raise CorpusEmpty("no text to train on")

    words = list(word_counts)
    counts = list(word_counts.values())
    pair_counts = count_pairs(words, counts)
    pair_to_words: dict[tuple[str, str], set[int]] = {}
    for idx, word in enumerate(words):
        for p in zip(word, word[1:]):
            pair_to_words.setdefault(p, set()).add(idx)

    token_to_id = dict(base)
    merges: list[tuple[str, str]] = []
    while len(token_to_id) < vocab_size and pair_counts:
        best_count = max(pair_counts.values())
        if best_count < min_pair_count:
            break
        best = min(p for p, c in pair_counts.items() if c == best_count)
        merged = best[0] + best[1]
        merges.append(best)
        token_to_id[merged] = len(token_to_id)

        # Only words containing the merged pair change; update their pair
        # contributions in place instead of recounting the whole corpus.
        for idx in sorted(pair_to_words.pop(best, ())):
            old = words[idx]
            n = counts[idx]
            new = _merge_word(old, best, merged)
            words[idx] = new
            for p in zip(old, old[1:]):
                pair_counts[p] -= n
                if pair_counts[p] <= 0:
                    del pair_counts[p]
                bucket = pair_to_words.get(p)
                if bucket is not None:
                    bucket.discard(idx)
                    if not bucket:
                        del pair_to_words[p]
            for p in zip(new, new[1:]):
                pair_counts[p] = pair_counts.get(p, 0) + n
                pair_to_words.setdefault(p, set()).add(idx)

    return Vocab(merges=merges, token_to_id=token_to_id)


def _encode_pretoken(pretoken: str, vocab: Vocab) -> list[int]:
    cached = vocab._encode_cache.get(pretoken)
    if cached is not None:
        return cached
    symbols = list(_to_symbols(pretoken))
    rank = vocab.merge_rank
    while len(symbols) > 1:
        best_rank = None
        for pair in zip(symbols, symbols[1:]):
            r = rank.get(pair)
            if r is not None and (best_rank is None or r < best_rank):
                best_rank = r
        if best_rank is None:
            break
        left, right = vocab.merges[best_rank]
        symbols = list(_merge_word(tuple(symbols), (left, right), left + right))
    ids = [vocab.token_to_id[s] for s in symbols]
    vocab._encode_cache[pretoken] = ids
    return ids


def encode(text: str, vocab: Vocab, add_specials: bool = False) -> list[int]:
    ids: list[int] = []
    for pretoken in pretokenize(text):
        ids.extend(_encode_pretoken(pretoken, vocab))
    if add_specials:
        return [vocab.bos_id] + ids + [vocab.eos_id]
    return ids


def decode(ids, vocab: Vocab) -> str:
    specials = vocab.special_ids
    chars: list[str] = []
    for i in ids:
        i = int(i)
        if i < 0 or i >= len(vocab):
            raise IdOutOfRange(f"token id {i} outside vocabulary of {len(vocab)}")
        if i in specials:
            continue
        chars.append(vocab.id_to_token[i])
    raw = bytes(_CHAR_TO_BYTE[c] for c in "".join(chars))
    return raw.decode("utf-8", errors="replace")


def save_vocab(vocab: Vocab, path: str | Path) -> None:
    doc = {
        "version": VOCAB_FORMAT_VERSION,
        "special_tokens": vocab.special_tokens,
        "merges": [list(p) for p in vocab.merges],
        "vocab": vocab.token_to_id,
    }
    Path(path).write_text(json.dumps(doc, ensure_ascii=False) + "\n",
                          encoding="utf-8")


def load_vocab(path: str | Path) -> Vocab:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("version") != VOCAB_FORMAT_VERSION:
        raise ValueError(f"{path}: vocab version {doc.get('version')!r}, "
                         f"expected {VOCAB_FORMAT_VERSION}")
    specials = doc["special_tokens"]
    token_to_id = doc["vocab"]
    ids = sorted(token_to_id.values())
    if ids != list(range(len(ids))):
        raise ValueError(f"{path}: token ids are not dense")
    if [t for t, i in sorted(token_to_id.items(), key=lambda kv: kv[1])][:len(specials)] != specials:
        raise ValueError(f"{path}: special tokens must hold the lowest ids")
    merges = [tuple(p) for p in doc["merges"]]
    if len(set(merges)) != len(merges):
        raise ValueError(f"{path}: duplicate merges")
    return Vocab(merges=merges, token_to_id=token_to_id,
                 special_tokens=list(specials))
