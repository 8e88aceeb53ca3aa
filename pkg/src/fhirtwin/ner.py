"""Sentence segmentation and entity mention extraction.

Extraction combines dictionary matching (longest token n-gram wins) with a
configurable set of regular-expression patterns for dosages, observations
with inline values, and temporal expressions. Everything here is a pure
function of its inputs, so notes can be processed in parallel against a
shared read-only index.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from fhirtwin._match import dictionary_spans, token_spans
from fhirtwin.terminology import EntityType, TerminologyIndex

#: Tokens that keep a following period from ending a sentence.
ABBREVIATIONS = frozenset(
    {
        "dr",
        "mr",
        "mrs",
        "ms",
        "st",
        "jr",
        "sr",
        "prof",
        "vs",
        "e.g",
        "i.e",
        "mg",
        "mcg",
        "ml",
        "b.i.d",
        "t.i.d",
        "q.i.d",
        "q.d",
        "p.r.n",
    }
)

_TERMINATORS = ".!?"

#: Overlap tie-break priority (lower wins) when spans have equal length.
_ETYPE_PRIORITY = {
    EntityType.CONDITION: 0,
    EntityType.MEDICATION: 1,
    EntityType.OBSERVATION: 2,
    EntityType.DOSAGE: 3,
    EntityType.TEMPORAL: 4,
}

DEFAULT_MAX_NGRAM = 6


@dataclass(frozen=True)
class ClinicalNote:
    note_id: str
    patient_id: str
    timestamp: Optional[str]
    text: str

    def __post_init__(self):
        if not self.note_id:
            raise ValueError("note_id must be non-empty")
        if not self.patient_id:
            raise ValueError("patient_id must be non-empty")


@dataclass(frozen=True)
class Sentence:
    start: int
    end: int
    index: int

    def slice(self, text: str) -> str:
        return text[self.start : self.end]


@dataclass(frozen=True)
class EntityMention:
    mention_id: str
    note_id: str
    start: int
    end: int
    text: str
    etype: EntityType
    sentence_index: int

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.end)


@dataclass(frozen=True)
class Pattern:
    name: str
    etype: EntityType
    regex: re.Pattern


@dataclass(frozen=True)
class PatternSet:
    patterns: tuple[Pattern, ...]


def load_patterns(path: str | Path) -> PatternSet:
    """Load a tab-separated pattern file: NAME<TAB>ETYPE<TAB>REGEX per line."""
    path = Path(path)
    patterns: list[Pattern] = []
    with path.open(encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{line_no}: expected 3 tab-separated fields")
            name, raw_type, regex = parts
            try:
                etype = EntityType[raw_type.strip().upper()]
            except KeyError:
                raise ValueError(
                    f"{path}:{line_no}: unknown entity type {raw_type!r}"
                ) from None
            patterns.append(Pattern(name.strip(), etype, re.compile(regex, re.IGNORECASE)))
    return PatternSet(tuple(patterns))


def _guarded_period(text: str, i: int) -> bool:
    """True when the period at ``i`` should not end a sentence."""
    n = len(text)
    if 0 < i < n - 1 and text[i - 1].isdigit() and text[i + 1].isdigit():
        return True
    # Take the maximal run of word characters and periods around the dot, so
    # every period inside "e.g." or "b.i.d." sees the whole abbreviation.
    k = i - 1
    while k >= 0 and (text[k].isalnum() or text[k] == "."):
        k -= 1
    j = i + 1
    while j < n and (text[j].isalnum() or text[j] == "."):
        j += 1
    token = text[k + 1 : j].casefold().strip(".")
    return token in ABBREVIATIONS


def segment(text: str) -> list[Sentence]:
    """Split text into sentences on ``.``, ``!``, ``?`` and newlines.

    Periods inside numbers and after known abbreviations do not split.
    Terminator punctuation stays inside its sentence; surrounding
    whitespace does not. Empty segments are dropped.
    """
    boundaries: list[int] = []
    n = len(text)
    i = 0
    while i < n:
        ch = text[i]
        if ch == "\n":
            boundaries.append(i)
            i += 1
        elif ch in _TERMINATORS:
            if ch == "." and _guarded_period(text, i):
                i += 1
                continue
            while i < n and text[i] in _TERMINATORS:
                i += 1
            boundaries.append(i)
        else:
            i += 1

    sentences: list[Sentence] = []
    seg_start = 0
    for boundary in boundaries + [n]:
        if boundary < seg_start:
            continue
        chunk = text[seg_start:boundary]
        left = len(chunk) - len(chunk.lstrip())
        right = len(chunk.rstrip())
        if right > left:
            sentences.append(
                Sentence(seg_start + left, seg_start + right, len(sentences))
            )
        seg_start = boundary + 1 if boundary < n and text[boundary] == "\n" else boundary
    return sentences


def _containing_sentence(
    sentences: list[Sentence], start: int, end: int
) -> Optional[int]:
    for sentence in sentences:
        if sentence.start <= start and end <= sentence.end:
            return sentence.index
    return None


def _resolve_overlaps(
    candidates: list[tuple[int, int, EntityType]]
) -> list[tuple[int, int, EntityType]]:
    """Longest span wins; ties go to leftmost start, then etype priority."""
    ordered = sorted(
        set(candidates),
        key=lambda c: (-(c[1] - c[0]), c[0], _ETYPE_PRIORITY[c[2]], c[1]),
    )
    accepted: list[tuple[int, int, EntityType]] = []
    for start, end, etype in ordered:
        if all(end <= a_start or start >= a_end for a_start, a_end, _ in accepted):
            accepted.append((start, end, etype))
    accepted.sort(key=lambda c: c[0])
    return accepted


def extract_entities(
    note: ClinicalNote,
    index: TerminologyIndex,
    patterns: PatternSet,
    max_ngram: int = DEFAULT_MAX_NGRAM,
) -> list[EntityMention]:
    """Extract typed, non-overlapping entity mentions from a note.

    Dictionary hits are typed by their concept entries; pattern hits by the
    pattern's entity type. Candidates crossing a sentence boundary are
    dropped, so every returned mention sits inside exactly one sentence.
    Output is sorted by start offset.
    """
    text = note.text
    sentences = segment(text)
    candidates: list[tuple[int, int, EntityType]] = []

    keys = index.match_keys()
    if keys:
        spans = token_spans(text)
        for start, end in dictionary_spans(text, spans, keys, max_ngram):
            entries = index.lookup(text[start:end])
            if entries:
                candidates.append((start, end, entries[0].entity_type))

    for pattern in patterns.patterns:
        for match in pattern.regex.finditer(text):
            if match.start() < match.end():
                candidates.append((match.start(), match.end(), pattern.etype))

    # Sentence containment is decided before overlap resolution so that a
    # boundary-crossing candidate cannot knock out an in-sentence one.
    contained: list[tuple[int, int, EntityType]] = []
    sentence_of: dict[tuple[int, int], int] = {}
    for start, end, etype in candidates:
        sentence_index = _containing_sentence(sentences, start, end)
        if sentence_index is not None:
            contained.append((start, end, etype))
            sentence_of[(start, end)] = sentence_index

    return [
        EntityMention(
            mention_id=f"{note.note_id}:{start}-{end}",
            note_id=note.note_id,
            start=start,
            end=end,
            text=text[start:end],
            etype=etype,
            sentence_index=sentence_of[(start, end)],
        )
        for start, end, etype in _resolve_overlaps(contained)
    ]
