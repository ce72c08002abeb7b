"""Synthetic fixtures: transcripts, corpora, feature tables, token chunks.

The clinical recordings cannot ship, so every pipeline stage is exercised
on generated stand-ins: class-distinct word vocabularies for text,
Gaussian blobs for the acoustic features, and a complementary mode where
text separates one class and audio another so fusing the two beats either
alone.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .audiomodel import FeatureTable, KNOWN_FEATURE_NAMES
from .data import Chunk, Label, LabeledTranscript

CLASS_WORDS: dict[Label, list[str]] = {
    Label.PSYCHOTIC: [
        "storm", "spiegel", "schaduw", "vreemd", "stemmen", "draad",
        "signaal", "toren", "vonk", "raadsel", "echo", "masker",
    ],
    Label.DEPRESSED: [
        "moe", "zwaar", "grijs", "stil", "leeg", "traag",
        "somber", "nacht", "alleen", "koud", "ver", "dof",
    ],
    Label.HEALTHY: [
        "fiets", "markt", "zon", "vrolijk", "tuin", "koffie",
        "samen", "werk", "strand", "muziek", "spel", "buurt",
    ],
}

SHARED_WORDS = [
    "ik", "en", "dan", "maar", "toen", "ook", "heel", "een", "de", "het",
    "ging", "was", "weer", "naar", "met", "over", "daar", "dus",
]

_INTERVIEWER_PROMPTS = [
    "kunt u daar iets meer over vertellen ?",
    "en hoe was dat voor u ?",
    "wat gebeurde er daarna ?",
]

_MARKUP_DECORATIONS = [
    "&-uh ", "&=lacht ", "(.) ", "(..) ",
]


def _rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def label_sequence(n: int, rng: np.random.Generator,
                   weights=(0.45, 0.10, 0.45)) -> list[Label]:
    """Label mix resembling the study population: depression is rare but
    every class shows up at least twice."""
    labels = [Label.PSYCHOTIC, Label.DEPRESSED, Label.HEALTHY] * 2
    draws = rng.choice(len(Label), size=max(0, n - len(labels)),
                       p=np.array(weights))
    labels += [Label(int(d)) for d in draws]
    return labels[:n]


def make_utterance(label: Label, rng: np.random.Generator,
                   n_words: int = 8, shared_fraction: float = 0.4,
                   word_pool: list[str] | None = None) -> str:
    pool = word_pool if word_pool is not None else CLASS_WORDS[label]
    words = []
    for _ in range(n_words):
        if rng.random() < shared_fraction:
            words.append(SHARED_WORDS[rng.integers(len(SHARED_WORDS))])
        else:
            words.append(pool[rng.integers(len(pool))])
    return " ".join(words) + " ."


def make_transcript_utterances(label: Label, rng: np.random.Generator,
                               n_utterances: int,
                               word_pool: list[str] | None = None,
                               with_markup: bool = True) -> list[str]:
    lines = []
    for _ in range(n_utterances):
        text = make_utterance(label, rng, int(rng.integers(6, 13)),
                              word_pool=word_pool)
        if with_markup and rng.random() < 0.3:
            deco = _MARKUP_DECORATIONS[rng.integers(len(_MARKUP_DECORATIONS))]
            text = deco + text
        lines.append(text)
    return lines


def write_chat_file(path: str | Path, participant_id: str,
                    utterances: list[str], rng: np.random.Generator) -> None:
    out = ["@Begin", "@Languages:\tnld",
           "@Participants:\tPAR Participant, INV Investigator",
           f"@ID:\tnld|study|PAR|{participant_id}||"]
    for i, text in enumerate(utterances):
        if i % 4 == 0:
            prompt = _INTERVIEWER_PROMPTS[rng.integers(len(_INTERVIEWER_PROMPTS))]
            out.append(f"*INV:\t{prompt}")
        out.append(f"*PAR:\t{text}")
        if rng.random() < 0.15:
            out.append("%com:\tsynthetic tier")
    out.append("@End")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def make_pretrain_corpus(n_lines: int, rng: np.random.Generator,
                         junk_fraction: float = 0.06,
                         dup_fraction: float = 0.08) -> list[str]:
    """Web-crawl-flavored text: mostly clean sentences plus URL junk,
    too-short fragments, one over-long line and some near-duplicates."""
    all_words = SHARED_WORDS + sum(CLASS_WORDS.values(), [])
    lines: list[str] = []
    clean: list[str] = []
    for _ in range(n_lines):
        r = rng.random()
        if r < junk_fraction / 2:
            lines.append("bezoek https://voorbeeld.nl/pagina nu")
        elif r < junk_fraction:
            lines.append("ok dan")
        elif r < junk_fraction + dup_fraction and clean:
            source = clean[rng.integers(len(clean))]
            words = source.split()
            if rng.random() < 0.5 and len(words) > 3:
                words[rng.integers(len(words))] = "ander"
            lines.append(" ".join(words))
        else:
            n = int(rng.integers(8, 20))
            words = [all_words[rng.integers(len(all_words))] for _ in range(n)]
            line = " ".join(words)
            lines.append(line)
            clean.append(line)
    lines.append(" ".join("woord" for _ in range(2400)))  # long-line fodder
    return lines


def make_audio_table(ids: list[str], labels: list[Label],
                     rng: np.random.Generator,
                     feature_count: int = 94, separation: float = 4.0,
                     merge_classes: tuple[Label, ...] = (),
                     ) -> FeatureTable:
    """Gaussian blobs in feature space, one center per class.

    Classes listed in ``merge_classes`` share one center, which makes them
    indistinguishable from audio alone (the complementary-signal setup).
    """
    names = list(KNOWN_FEATURE_NAMES[:feature_count])
    for i in range(len(names), feature_count):
        names.append(f"synthParam{i:03d}_amean")
    centers = {}
    center_rng = _rng(0xC3A7)  # class centers are fixed across tables
    merged_center = center_rng.normal(0.0, 1.0, feature_count) * separation
    for label in Label:
        if label in merge_classes:
            centers[label] = merged_center
        else:
            centers[label] = center_rng.normal(0.0, 1.0, feature_count) * separation
    matrix = np.empty((len(ids), feature_count))
    for row, label in enumerate(labels):
        matrix[row] = centers[label] + rng.normal(0.0, 1.0, feature_count)
    return FeatureTable(list(ids), list(labels), matrix, names)


def make_token_transcript(participant_id: str, label: Label,
                          rng: np.random.Generator, n_tokens: int,
                          vocab_size: int = 300, band_width: int = 30,
                          confuse: dict[Label, Label] | None = None,
                          ) -> LabeledTranscript:
    """Token ids drawn from a class-specific band, so classes are linearly
    separable by construction. ``confuse`` redirects a class to another
    class's band (text-side ambiguity for the complementary setup)."""
    effective = (confuse or {}).get(label, label)
    lo = 5 + int(effective) * band_width
    hi = min(lo + band_width, vocab_size)
    ids = rng.integers(lo, hi, n_tokens).tolist()
    return LabeledTranscript(participant_id, label, ids)


def make_separable_chunks(per_class: int, tokens_per_chunk: int,
                          seed: int = 0, band_width: int = 30) -> list[Chunk]:
    """Tiny fixture of class-banded chunks (used for training sanity)."""
    rng = _rng(seed)
    chunks = []
    for label in Label:
        for i in range(per_class):
            t = make_token_transcript(f"{label.to_string()[:3]}{i:02d}", label,
                                      rng, tokens_per_chunk,
                                      band_width=band_width)
            chunks.append(Chunk(t.participant_id, label, t.token_ids, 0))
    return chunks


def write_labels_csv(path: str | Path, ids: list[str],
                     labels: list[Label]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["participant_id", "label"])
        for pid, label in zip(ids, labels):
            writer.writerow([pid, label.to_string()])


def read_labels_csv(path: str | Path) -> dict[str, Label]:
    out: dict[str, Label] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out[row["participant_id"]] = Label.from_string(row["label"])
    return out


def generate_study(out_dir: str | Path, n_transcribed: int = 30,
                   n_audio_only: int = 20, seed: int = 7,
                   complementary: bool = True,
                   utterances_per_transcript: tuple[int, int] = (24, 48),
                   ) -> dict:
    """Write a full synthetic study to ``out_dir``.

    Produces CHAT transcripts, a label table covering every participant,
    an acoustic feature table (transcribed plus audio-only participants),
    a pretraining corpus and the list of transcribed participant ids.
    In complementary mode the depressed/healthy transcripts share one word
    pool while their audio blobs stay apart, and the psychotic/depressed
    audio blobs merge while their transcripts stay apart.
    """
    out = Path(out_dir)
    (out / "transcripts").mkdir(parents=True, exist_ok=True)
    rng = _rng(seed)

    total = n_transcribed + n_audio_only
    ids = [f"P{i:03d}" for i in range(total)]
    labels = label_sequence(total, rng)
    transcribed = ids[:n_transcribed]

    text_pool: dict[Label, list[str] | None] = {label: None for label in Label}
    merge_audio: tuple[Label, ...] = ()
    if complementary:
        # Text cannot tell depressed from healthy; audio cannot tell
        # psychotic from depressed.
        text_pool[Label.DEPRESSED] = CLASS_WORDS[Label.HEALTHY]
        merge_audio = (Label.PSYCHOTIC, Label.DEPRESSED)

    for pid, label in zip(transcribed, labels[:n_transcribed]):
        n_utt = int(rng.integers(*utterances_per_transcript))
        lines = make_transcript_utterances(label, rng, n_utt,
                                           word_pool=text_pool[label])
        write_chat_file(out / "transcripts" / f"{pid}.cha", pid, lines, rng)

    write_labels_csv(out / "labels.csv", ids, labels)
    (out / "transcribed_ids.txt").write_text(
        "\n".join(transcribed) + "\n", encoding="utf-8")

    from .audiomodel import save_features  # local import avoids cycle at module load
    table = make_audio_table(ids, labels, rng, merge_classes=merge_audio)
    save_features(table, out / "audio_features.csv")

    corpus = make_pretrain_corpus(600, rng)
    (out / "pretrain_corpus.txt").write_text(
        "\n".join(corpus) + "\n", encoding="utf-8")

    return {
        "participants": total,
        "transcribed": len(transcribed),
        "audio_only": n_audio_only,
        "labels": {label.to_string():
                   sum(1 for l in labels if l == label) for label in Label},
    }
