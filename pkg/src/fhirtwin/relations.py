"""Sentence-scoped rule-based relation extraction.

Two rules produce relations between distinct mentions:

* every dosage attaches to the nearest preceding medication in its
  sentence (``has-dosage``);
* an observation or condition followed by a cue phrase ("due to",
  "secondary to", ...) and then a condition yields ``symptom-of``.

Observations that carry their value inline ("BP 145/92") need no relation:
assembly reads the value straight off the span. ``has-result`` exists as a
relation type so gold annotations and external annotation files can
express explicit result links, and it scores like any other type.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from fhirtwin.ner import EntityMention, Sentence
from fhirtwin.normalizer import AnnotatedMention
from fhirtwin.terminology import EntityType


class RelationType(Enum):
    SYMPTOM_OF = "symptom-of"
    HAS_DOSAGE = "has-dosage"
    HAS_RESULT = "has-result"


@dataclass(frozen=True)
class Relation:
    rtype: RelationType
    head: str
    tail: str


DEFAULT_CUES = ("due to", "secondary to", "consistent with")


def load_cues(path: str | Path) -> tuple[str, ...]:
    """Load cue phrases, one per line; blanks and ``#`` comments ignored."""
    cues = []
    with Path(path).open(encoding="utf-8") as handle:
        for raw in handle:
            line = raw.strip()
            if line and not line.startswith("#"):
                cues.append(line)
    return tuple(cues)


def _nearest_preceding(
    mentions: Sequence[EntityMention], position: int, etypes: frozenset[EntityType]
) -> EntityMention | None:
    best = None
    for mention in mentions:
        if mention.etype in etypes and mention.end <= position:
            if best is None or mention.start > best.start:
                best = mention
    return best


def _nearest_following(
    mentions: Sequence[EntityMention], position: int, etypes: frozenset[EntityType]
) -> EntityMention | None:
    best = None
    for mention in mentions:
        if mention.etype in etypes and mention.start >= position:
            if best is None or mention.start < best.start:
                best = mention
    return best


_MED = frozenset({EntityType.MEDICATION})
_SYMPTOM_HEADS = frozenset({EntityType.OBSERVATION, EntityType.CONDITION})
_CONDITION = frozenset({EntityType.CONDITION})


def extract_relations(
    annotated: Sequence[AnnotatedMention],
    sentences: Sequence[Sentence],
    note_text: str,
    cues: Iterable[str] = DEFAULT_CUES,
) -> list[Relation]:
    """Apply the per-sentence attachment rules over annotated mentions.

    Output is deduplicated and sorted by (sentence, head start, relation
    type), so identical inputs always produce identical lists.
    """
    mentions = [a.mention for a in annotated]
    by_sentence: dict[int, list[EntityMention]] = {}
    for mention in mentions:
        by_sentence.setdefault(mention.sentence_index, []).append(mention)

    cue_patterns = [
        re.compile(r"\b" + re.escape(cue) + r"\b", re.IGNORECASE) for cue in cues
    ]

    start_of = {m.mention_id: m.start for m in mentions}
    found: dict[Relation, tuple[int, int, str]] = {}

    for sentence in sentences:
        group = sorted(by_sentence.get(sentence.index, []), key=lambda m: m.start)
        if not group:
            continue

        for mention in group:
            if mention.etype != EntityType.DOSAGE:
                continue
            med = _nearest_preceding(group, mention.start, _MED)
            if med is not None:
                relation = Relation(
                    RelationType.HAS_DOSAGE, med.mention_id, mention.mention_id
                )
                found.setdefault(
                    relation,
                    (sentence.index, start_of[relation.head], relation.rtype.value),
                )

        sentence_text = note_text[sentence.start : sentence.end]
        for cue_pattern in cue_patterns:
            for match in cue_pattern.finditer(sentence_text):
                cue_start = sentence.start + match.start()
                cue_end = sentence.start + match.end()
                head = _nearest_preceding(group, cue_start, _SYMPTOM_HEADS)
                tail = _nearest_following(group, cue_end, _CONDITION)
                if head is None or tail is None:
                    continue
                if head.mention_id == tail.mention_id:
                    continue
                relation = Relation(
                    RelationType.SYMPTOM_OF, head.mention_id, tail.mention_id
                )
                found.setdefault(
                    relation,
                    (sentence.index, start_of[relation.head], relation.rtype.value),
                )

    return sorted(found, key=found.__getitem__)
