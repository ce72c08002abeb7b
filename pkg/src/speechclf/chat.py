"""CHAT transcript parsing and flattening to plain text.

Supported subset: "@" header lines, "*XXX:" speaker tiers, "%xxx:"
dependent tiers and tab-led continuation lines. Flattening strips the
annotation markup of the selected speakers' utterances and emits one
utterance per line.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Iterable, TextIO

log = logging.getLogger(__name__)

# Tier codes treated as interviewers when the caller does not pick speakers.
INTERVIEWER_CODES = frozenset({"INV", "INT", "EXA", "EXP"})

_BULLET = "\x15"
_SPEAKER_RE = re.compile(r"^[A-Z][A-Z0-9]*$")


class ChatParseError(ValueError):
    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class MalformedTierLine(ChatParseError):
    """A '*' tier line without the required ':' separator."""


@dataclass
class Utterance:
    speaker: str
    raw_text: str
    dependent_tiers: list[tuple[str, str]] = field(default_factory=list)


@dataclass
class ChatDocument:
    headers: list[tuple[str, str | None]] = field(default_factory=list)
    utterances: list[Utterance] = field(default_factory=list)
    # (kind, index) pairs recording original line order for serialization.
    layout: list[tuple[str, int]] = field(default_factory=list)
    # True when an "@End" delimiter closed the document.
    terminated: bool = False


def _clean_tier_text(text: str) -> str:
    return text.replace("\t", " ")


def parse_chat(source: str | TextIO | Iterable[str]) -> ChatDocument:
    """Parse CHAT text into headers, utterances and dependent tiers.

    Continuation lines (leading tab) extend whichever tier line came last.
    Unrecognized lines are logged and skipped rather than silently lost.
    """
    if isinstance(source, str):
        lines = source.splitlines()
    else:
        lines = [line.rstrip("\n") for line in source]

    doc = ChatDocument()
    last_kind: str | None = None  # "header" | "utterance" | "dependent"
    for num, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        if line.startswith("@"):
            body = line[1:]
            if body.strip() == "End":
                doc.terminated = True
                break
            if ":" in body:
                key, value = body.split(":", 1)
                doc.headers.append((key, _clean_tier_text(value.lstrip("\t"))))
            else:
                doc.headers.append((body, None))
            doc.layout.append(("header", len(doc.headers) - 1))
            last_kind = "header"
        elif line.startswith("*"):
            if ":" not in line:
                raise MalformedTierLine("speaker tier missing ':'", num)
            code, text = line[1:].split(":", 1)
            if not _SPEAKER_RE.match(code):
                raise MalformedTierLine(f"bad speaker code {code!r}", num)
            doc.utterances.append(
                Utterance(code, _clean_tier_text(text.lstrip("\t"))))
            doc.layout.append(("utterance", len(doc.utterances) - 1))
            last_kind = "utterance"
        elif line.startswith("%"):
            if ":" not in line:
                raise ChatParseError("dependent tier missing ':'", num)
            if not doc.utterances or last_kind == "header":
                raise ChatParseError("dependent tier before any utterance", num)
            code, text = line[1:].split(":", 1)
            doc.utterances[-1].dependent_tiers.append(
                (code, _clean_tier_text(text.lstrip("\t"))))
            last_kind = "dependent"
        elif line.startswith("\t"):
            extra = _clean_tier_text(line.strip())
            if last_kind == "utterance":
                utt = doc.utterances[-1]
                utt.raw_text = f"{utt.raw_text} {extra}"
            elif last_kind == "dependent":
                code, text = doc.utterances[-1].dependent_tiers[-1]
                doc.utterances[-1].dependent_tiers[-1] = (code, f"{text} {extra}")
            elif last_kind == "header":
                key, value = doc.headers[-1]
                doc.headers[-1] = (key, extra if value is None else f"{value} {extra}")
            else:
                raise ChatParseError("continuation before any tier line", num)
        else:
            log.warning("skipping unrecognized CHAT line %d: %r", num, line)
    return doc


def serialize_chat(doc: ChatDocument) -> str:
    """Inverse of parse_chat on documents without continuation lines."""
    out = []
    dependents_done: set[int] = set()
    for kind, idx in doc.layout:
        if kind == "header":
            key, value = doc.headers[idx]
            out.append(f"@{key}" if value is None else f"@{key}:\t{value}")
        else:
            utt = doc.utterances[idx]
            out.append(f"*{utt.speaker}:\t{utt.raw_text}")
            if idx not in dependents_done:
                dependents_done.add(idx)
                for code, text in utt.dependent_tiers:
                    out.append(f"%{code}:\t{text}")
    if doc.terminated:
        out.append("@End")
    return "\n".join(out) + ("\n" if out else "")


@dataclass(frozen=True)
class StripRuleSet:
    """Which markup classes flatten() removes from utterance text."""

    drop_retraces: bool = True        # "[//]" / "[/]" plus the marked material
    drop_fillers: bool = True         # "&-uh", "&=laughs", "&+frag"
    drop_pauses: bool = True          # "(.)", "(..)", "(...)"
    expand_shortenings: bool = True   # "(be)cause" -> "because"
    drop_bullets: bool = True         # \x15...\x15 time alignment
    drop_other_brackets: bool = True  # any remaining [...] group (logged)
    drop_word_markers: bool = True    # "word@x" suffixes (logged)


DEFAULT_RULES = StripRuleSet()

_PAUSE_RE = re.compile(r"\(\.{1,3}\)")
_SHORTENING_RE = re.compile(r"\((\w+)\)(?=\w)|(?<=\w)\((\w+)\)")
_RETRACE_RE = re.compile(r"\[/{1,2}\]")
_BRACKET_RE = re.compile(r"\[[^\[\]]*\]")
_FILLER_RE = re.compile(r"&[^\s\[\]]*")
_WORD_MARKER_RE = re.compile(r"(?<=\w)@[\w:$-]*")
_BULLET_RE = re.compile(rf"{_BULLET}[^{_BULLET}]*{_BULLET}|{_BULLET}")


def _strip_retraces(text: str) -> str:
    # Each marker erases the material it retraces: the immediately
    # preceding <...> group when present, otherwise everything back to the
    # start of the utterance or the previous marker.
    while True:
        m = _RETRACE_RE.search(text)
        if m is None:
            break
        before = text[:m.start()].rstrip()
        if before.endswith(">"):
            open_idx = before.rfind("<")
            cut = open_idx if open_idx != -1 else 0
        else:
            cut = 0
        text = text[:cut] + text[m.end():]
    return text.replace("<", " ").replace(">", " ")


def strip_markup(text: str, rules: StripRuleSet = DEFAULT_RULES) -> str:
    """Reduce one utterance to words plus sentence punctuation."""
    if rules.drop_bullets:
        text = _BULLET_RE.sub(" ", text)
    if rules.drop_pauses:
        text = _PAUSE_RE.sub(" ", text)
    if rules.drop_retraces:
        text = _strip_retraces(text)
    if rules.drop_fillers:
        text = _FILLER_RE.sub(" ", text)
    if rules.expand_shortenings:
        text = _SHORTENING_RE.sub(lambda m: m.group(1) or m.group(2), text)
    if rules.drop_other_brackets:
        for m in _BRACKET_RE.finditer(text):
            log.debug("dropping unhandled markup %r", m.group(0))
        text = _BRACKET_RE.sub(" ", text)
    if rules.drop_word_markers:
        for m in _WORD_MARKER_RE.finditer(text):
            log.debug("dropping word marker %r", m.group(0))
        text = _WORD_MARKER_RE.sub("", text)
    # Whatever markup the enabled rules did not recognize must still never
    # leak annotation characters into the flat text.
    scrub = set("%*")
    if rules.drop_fillers:
        scrub.add("&")
    if rules.drop_other_brackets:
        scrub.update("[]")
    if rules.drop_word_markers:
        scrub.add("@")
    leftover = [c for c in text if c in scrub]
    if leftover:
        log.debug("scrubbing stray annotation characters %r", set(leftover))
        text = "".join(" " if c in scrub else c for c in text)
    text = text.replace("\t", " ")
    return " ".join(text.split())


def flatten(doc: ChatDocument, speakers: set[str] | None = None,
            rules: StripRuleSet = DEFAULT_RULES) -> str:
    """Flatten selected speakers to plain text, one utterance per line.

    ``speakers=None`` selects every participant tier except the known
    interviewer codes.
    """
    lines = []
    for utt in doc.utterances:
        if speakers is None:
            if utt.speaker in INTERVIEWER_CODES:
                continue
        elif utt.speaker not in speakers:
            continue
        lines.append(strip_markup(utt.raw_text, rules))
    return "\n".join(lines) + ("\n" if lines else "")
