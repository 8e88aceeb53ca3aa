"""Corpus scoring: extraction F1, relation F1, completeness, interoperability.

Extraction and relation scores are micro-averaged over the corpus with
exact matching: a predicted mention counts only when (start, end, type)
all agree with a gold mention of the same note, and a predicted relation
only when (type, head span, tail span) agree. Completeness and
interoperability compare generated bundles against reference bundles
field by field, then macro-average per patient.

Zero-denominator conventions are fixed so every report is total:
precision is 0 with no predictions, recall is 0 with no gold, and F1 is 0
whenever precision + recall is 0.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from fhirtwin.fhir_assembly import FhirResource, TwinBundle
from fhirtwin.ner import ClinicalNote, EntityMention
from fhirtwin.pipeline import NoteAnnotation, Pipeline, PipelineConfig
from fhirtwin.relations import Relation, RelationType
from fhirtwin.terminology import CodeSystem, EntityType


class PatientMismatchError(Exception):
    """Bundle comparison requires both bundles to concern one patient."""


class EmptyCorpusError(Exception):
    """evaluate_corpus() needs at least one case."""


# ---------------------------------------------------------------------------
# Gold annotations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GoldMention:
    start: int
    end: int
    etype: EntityType
    system: Optional[CodeSystem]
    code: Optional[str]


@dataclass(frozen=True)
class GoldRelation:
    rtype: RelationType
    head_span: tuple[int, int]
    tail_span: tuple[int, int]


@dataclass(frozen=True)
class GoldAnnotations:
    note_id: str
    mentions: tuple[GoldMention, ...]
    relations: tuple[GoldRelation, ...]


def gold_to_dict(gold: GoldAnnotations) -> dict:
    return {
        "note_id": gold.note_id,
        "mentions": [
            {
                "start": m.start,
                "end": m.end,
                "etype": m.etype.value,
                "system": m.system.name if m.system else None,
                "code": m.code,
            }
            for m in gold.mentions
        ],
        "relations": [
            {
                "rtype": r.rtype.value,
                "head": list(r.head_span),
                "tail": list(r.tail_span),
            }
            for r in gold.relations
        ],
    }


def gold_from_dict(body: dict) -> GoldAnnotations:
    mentions = tuple(
        GoldMention(
            start=m["start"],
            end=m["end"],
            etype=EntityType(m["etype"]),
            system=CodeSystem[m["system"]] if m.get("system") else None,
            code=m.get("code"),
        )
        for m in body.get("mentions", [])
    )
    rels = tuple(
        GoldRelation(
            rtype=RelationType(r["rtype"]),
            head_span=tuple(r["head"]),
            tail_span=tuple(r["tail"]),
        )
        for r in body.get("relations", [])
    )
    return GoldAnnotations(body["note_id"], mentions, rels)


# ---------------------------------------------------------------------------
# Micro-averaged F1
# ---------------------------------------------------------------------------


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = (
        2 * precision * recall / (precision + recall) if precision + recall else 0.0
    )
    return precision, recall, f1


def _counted_f1(
    predicted: Iterable[tuple], gold: Iterable[tuple]
) -> tuple[float, float, float]:
    predicted_counts = Counter(predicted)
    gold_counts = Counter(gold)
    tp = sum((predicted_counts & gold_counts).values())
    fp = sum(predicted_counts.values()) - tp
    fn = sum(gold_counts.values()) - tp
    return _prf(tp, fp, fn)


def mention_key(note_id: str, mention: EntityMention) -> tuple:
    return (note_id, mention.start, mention.end, mention.etype.value)


def gold_mention_key(note_id: str, mention: GoldMention) -> tuple:
    return (note_id, mention.start, mention.end, mention.etype.value)


def ner_f1(
    predicted: Sequence[tuple], gold: Sequence[tuple]
) -> tuple[float, float, float]:
    """Micro precision/recall/F1 over (note_id, start, end, etype) keys.

    Each gold mention matches at most one prediction and vice versa.
    """
    return _counted_f1(predicted, gold)


def relation_f1(
    predicted: Sequence[tuple], gold: Sequence[tuple]
) -> tuple[float, float, float]:
    """As ner_f1, over (note_id, rtype, head span, tail span) keys."""
    return _counted_f1(predicted, gold)


def relation_keys(
    note_id: str, rels: Iterable[Relation], mentions: Iterable[EntityMention]
) -> list[tuple]:
    """Resolve relation endpoints to spans for exact-triple comparison."""
    spans = {m.mention_id: (m.start, m.end) for m in mentions}
    return [
        (note_id, r.rtype.value, spans[r.head], spans[r.tail])
        for r in rels
        if r.head in spans and r.tail in spans
    ]


def gold_relation_keys(note_id: str, gold: GoldAnnotations) -> list[tuple]:
    return [
        (note_id, r.rtype.value, tuple(r.head_span), tuple(r.tail_span))
        for r in gold.relations
    ]


# ---------------------------------------------------------------------------
# Bundle comparison
# ---------------------------------------------------------------------------

#: Profile-required fields per resource type; these drive both scores.
REQUIRED_FIELDS: dict[str, tuple[str, ...]] = {
    "Condition": ("code", "clinicalStatus", "verificationStatus", "subject"),
    "Observation": ("code", "valueString", "effectiveDateTime", "subject"),
    "MedicationRequest": (
        "medicationCodeableConcept",
        "dosageInstruction",
        "authoredOn",
        "subject",
    ),
}

_CODED_FIELDS = frozenset(
    {"code", "medicationCodeableConcept", "clinicalStatus", "verificationStatus"}
)


def _field_fingerprint(resource: FhirResource, field_name: str):
    """Canonical comparable value for one field (None when absent)."""
    value = resource.fields.get(field_name)
    if value is None:
        return None
    if field_name in _CODED_FIELDS:
        coding = value.get("coding") or []
        if not coding:
            return ("text", value.get("text", ""))
        return tuple(sorted((c.get("system", ""), c.get("code", "")) for c in coding))
    if field_name == "dosageInstruction":
        return tuple(d.get("text", "") for d in value)
    if field_name == "subject":
        return value.get("reference", "")
    return value


def _match_key(resource: FhirResource) -> tuple:
    primary = resource.primary_code()
    if primary is None:
        concept = resource.fields.get(
            "medicationCodeableConcept"
            if resource.resource_type == "MedicationRequest"
            else "code"
        ) or {}
        primary = ("text", concept.get("text", ""))
    return (resource.resource_type, primary)


def _scored_resources(twin: TwinBundle) -> list[FhirResource]:
    return [r for r in twin.entries if r.resource_type != "Patient"]


def _check_same_patient(generated: TwinBundle, reference: TwinBundle) -> None:
    if generated.patient_identifier() != reference.patient_identifier():
        raise PatientMismatchError(
            f"bundles concern different patients: "
            f"{generated.patient_identifier()!r} vs {reference.patient_identifier()!r}"
        )


def match_resources(
    generated: Sequence[FhirResource], reference: Sequence[FhirResource]
) -> list[tuple[FhirResource, FhirResource]]:
    """Pair resources by (type, primary code); duplicates pair in id order."""
    gen_groups: dict[tuple, list[FhirResource]] = {}
    for resource in sorted(generated, key=lambda r: r.id):
        gen_groups.setdefault(_match_key(resource), []).append(resource)
    ref_groups: dict[tuple, list[FhirResource]] = {}
    for resource in sorted(reference, key=lambda r: r.id):
        ref_groups.setdefault(_match_key(resource), []).append(resource)
    pairs: list[tuple[FhirResource, FhirResource]] = []
    for key in sorted(ref_groups, key=repr):
        for gen_r, ref_r in zip(gen_groups.get(key, []), ref_groups[key]):
            pairs.append((gen_r, ref_r))
    return pairs


def _agreement(pair: tuple[FhirResource, FhirResource]) -> tuple[int, int]:
    gen_r, ref_r = pair
    required = REQUIRED_FIELDS[ref_r.resource_type]
    equal = sum(
        1
        for f in required
        if _field_fingerprint(gen_r, f) == _field_fingerprint(ref_r, f)
        and _field_fingerprint(ref_r, f) is not None
    )
    return equal, len(required)


def semantic_completeness(generated: TwinBundle, reference: TwinBundle) -> float:
    """Fraction of reference-required fields the generated bundle reproduces.

    Unmatched reference resources contribute all of their required fields
    to the denominator.
    """
    _check_same_patient(generated, reference)
    ref_resources = _scored_resources(reference)
    denominator = sum(len(REQUIRED_FIELDS[r.resource_type]) for r in ref_resources)
    if denominator == 0:
        return 1.0
    pairs = match_resources(_scored_resources(generated), ref_resources)
    numerator = sum(_agreement(pair)[0] for pair in pairs)
    return numerator / denominator


def interoperability_score(
    generated: TwinBundle, reference: TwinBundle, match_weight: float = 0.5
) -> float:
    """Composite of resource-level match F1 and per-pair field agreement.

    score = w * F1(matched resources) + (1 - w) * mean field agreement,
    with w = 0.5 by default. Both-empty bundles score 1; one-sided empty
    bundles score 0.
    """
    _check_same_patient(generated, reference)
    gen_resources = _scored_resources(generated)
    ref_resources = _scored_resources(reference)
    if not gen_resources and not ref_resources:
        return 1.0
    if not gen_resources or not ref_resources:
        return 0.0
    pairs = match_resources(gen_resources, ref_resources)
    matched = len(pairs)
    precision = matched / len(gen_resources)
    recall = matched / len(ref_resources)
    f1_match = (
        2 * precision * recall / (precision + recall) if precision + recall else 0.0
    )
    if pairs:
        mean_agreement = sum(
            equal / total for equal, total in map(_agreement, pairs)
        ) / len(pairs)
    else:
        mean_agreement = 0.0
    return match_weight * f1_match + (1.0 - match_weight) * mean_agreement


# ---------------------------------------------------------------------------
# Corpus evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CorpusCase:
    note: ClinicalNote
    gold: GoldAnnotations
    reference: TwinBundle


@dataclass(frozen=True)
class EvaluationReport:
    ner_precision: float
    ner_recall: float
    ner_f1: float
    re_precision: Optional[float]
    re_recall: Optional[float]
    re_f1: Optional[float]
    semantic_completeness: float
    interoperability: float
    per_note: tuple[dict, ...]
    per_patient: tuple[dict, ...]

    def to_dict(self) -> dict:
        return {
            "ner_precision": self.ner_precision,
            "ner_recall": self.ner_recall,
            "ner_f1": self.ner_f1,
            "re_precision": self.re_precision,
            "re_recall": self.re_recall,
            "re_f1": self.re_f1,
            "semantic_completeness": self.semantic_completeness,
            "interoperability": self.interoperability,
            "per_note": list(self.per_note),
            "per_patient": list(self.per_patient),
        }

    def summary_row(self) -> str:
        """Tab-separated NER / RE / Comp. / Interop. row with a header line."""
        re_text = "--" if self.re_f1 is None else f"{self.re_f1:.3f}"
        return (
            "NER\tRE\tComp.\tInterop.\n"
            f"{self.ner_f1:.3f}\t{re_text}\t"
            f"{self.semantic_completeness * 100:.1f}%\t{self.interoperability:.3f}\n"
        )


def evaluate_corpus(
    cases: Sequence[CorpusCase], config: PipelineConfig
) -> EvaluationReport:
    """Run the configured pipeline over a corpus and score all four metrics.

    Relation scores are reported as absent when relation extraction is
    disabled (directly or through naive mapping). Completeness and
    interoperability are macro-averaged per patient.
    """
    if not cases:
        raise EmptyCorpusError("corpus has no cases")
    pipeline = Pipeline(config)
    score_relations = not (config.disable_relations or config.naive_mapping)

    predicted_mentions: list[tuple] = []
    gold_mentions: list[tuple] = []
    predicted_relations: list[tuple] = []
    gold_relations: list[tuple] = []
    per_note: list[dict] = []

    by_patient: dict[str, list[CorpusCase]] = {}
    for case in cases:
        by_patient.setdefault(case.note.patient_id, []).append(case)

    annotations_by_note: dict[str, NoteAnnotation] = {}
    bundles: dict[str, TwinBundle] = {}
    for patient_id in sorted(by_patient):
        patient_cases = sorted(by_patient[patient_id], key=lambda c: c.note.note_id)
        twin, _, annotations = pipeline.twin(
            patient_id, [c.note for c in patient_cases]
        )
        bundles[patient_id] = twin
        for annotation in annotations:
            annotations_by_note[annotation.note.note_id] = annotation

    for case in cases:
        note_id = case.note.note_id
        annotation = annotations_by_note[note_id]
        mentions = [a.mention for a in annotation.annotated]
        note_pred_mentions = [mention_key(note_id, m) for m in mentions]
        note_gold_mentions = [gold_mention_key(note_id, g) for g in case.gold.mentions]
        predicted_mentions.extend(note_pred_mentions)
        gold_mentions.extend(note_gold_mentions)
        note_pred_relations = relation_keys(note_id, annotation.relations, mentions)
        note_gold_relations = gold_relation_keys(note_id, case.gold)
        if score_relations:
            predicted_relations.extend(note_pred_relations)
            gold_relations.extend(note_gold_relations)
        per_note.append(
            {
                "note_id": note_id,
                "predicted_mentions": len(note_pred_mentions),
                "gold_mentions": len(note_gold_mentions),
                "predicted_relations": len(note_pred_relations),
                "gold_relations": len(note_gold_relations),
            }
        )

    per_patient: list[dict] = []
    completeness_values: list[float] = []
    interop_values: list[float] = []
    for patient_id in sorted(by_patient):
        reference = by_patient[patient_id][0].reference
        completeness = semantic_completeness(bundles[patient_id], reference)
        interop = interoperability_score(bundles[patient_id], reference)
        completeness_values.append(completeness)
        interop_values.append(interop)
        per_patient.append(
            {
                "patient_id": patient_id,
                "completeness": completeness,
                "interoperability": interop,
            }
        )

    ner_p, ner_r, ner_f = ner_f1(predicted_mentions, gold_mentions)
    if score_relations:
        re_p, re_r, re_f = relation_f1(predicted_relations, gold_relations)
    else:
        re_p = re_r = re_f = None

    return EvaluationReport(
        ner_precision=ner_p,
        ner_recall=ner_r,
        ner_f1=ner_f,
        re_precision=re_p,
        re_recall=re_r,
        re_f1=re_f,
        semantic_completeness=sum(completeness_values) / len(completeness_values),
        interoperability=sum(interop_values) / len(interop_values),
        per_note=tuple(per_note),
        per_patient=tuple(per_patient),
    )
