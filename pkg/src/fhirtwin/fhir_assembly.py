"""FHIR R4 resource construction, profile validation, and bundling.

The digital-twin profile is intentionally small: Condition, Observation
and MedicationRequest resources hang off a single Patient. Resource ids
are content hashes of (patient, type, code, span start), so identical
inputs always serialize to identical bytes. Validation is implemented
directly against the profile rules below; resources failing any ERROR
rule are kept out of the bundle.

Rule codes:

* C1  Condition.code carries a SNOMED or ICD-10 coding
* C2  Condition has clinicalStatus and verificationStatus
* O1  Observation.code carries a LOINC or SNOMED coding
* O2  Observation has a value and an effectiveDateTime
* M1  MedicationRequest is RxNorm-coded with at least one dosageInstruction
* M2  MedicationRequest has authoredOn
* S1  subject references the bundle's Patient
* W1  dosageInstruction is the "as directed" placeholder (warning)
* W2  timestamp fell back to the configured default instant (warning)
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Sequence

from fhirtwin.ner import ClinicalNote, EntityType
from fhirtwin.normalizer import (
    AnnotatedMention,
    NormalizedConcept,
    split_observation_text,
)
from fhirtwin.relations import Relation, RelationType
from fhirtwin.terminology import CodeSystem

CLINICAL_STATUS_URI = "http://terminology.hl7.org/CodeSystem/condition-clinical"
VERIFICATION_STATUS_URI = "http://terminology.hl7.org/CodeSystem/condition-ver-status"

DEFAULT_TIMESTAMP = "2024-01-01T00:00:00Z"
PLACEHOLDER_DOSAGE = "as directed"

_CONDITION_SYSTEMS = frozenset({CodeSystem.SNOMED.uri, CodeSystem.ICD10.uri})
_OBSERVATION_SYSTEMS = frozenset({CodeSystem.LOINC.uri, CodeSystem.SNOMED.uri})
_MEDICATION_SYSTEMS = frozenset({CodeSystem.RXNORM.uri})

RESOURCE_ORDER = ("Patient", "Condition", "Observation", "MedicationRequest")


class EmptyPatientIdError(Exception):
    """build_patient() requires a non-empty patient identifier."""


class Severity(Enum):
    ERROR = "ERROR"
    WARNING = "WARNING"


@dataclass(frozen=True)
class ValidationIssue:
    resource_id: str
    rule: str
    severity: Severity
    message: str


@dataclass(frozen=True)
class FhirResource:
    resource_type: str
    id: str
    fields: dict

    def coding(self) -> list[dict]:
        code_field = "medicationCodeableConcept" if (
            self.resource_type == "MedicationRequest"
        ) else "code"
        concept = self.fields.get(code_field) or {}
        return concept.get("coding") or []

    def primary_code(self) -> Optional[tuple[str, str]]:
        """(system URI, code) of the first coding, or None when uncoded."""
        coding = self.coding()
        if not coding:
            return None
        return (coding[0].get("system", ""), coding[0].get("code", ""))


@dataclass(frozen=True)
class TwinBundle:
    entries: tuple[FhirResource, ...]
    bundle_type: str = "collection"

    def patient(self) -> FhirResource:
        for entry in self.entries:
            if entry.resource_type == "Patient":
                return entry
        raise ValueError("bundle has no Patient entry")

    def patient_identifier(self) -> str:
        identifiers = self.patient().fields.get("identifier") or [{}]
        return identifiers[0].get("value", "")


def resource_id(
    patient_id: str, resource_type: str, code_key: str, span_start: object
) -> str:
    digest = hashlib.sha256(
        f"{patient_id}|{resource_type}|{code_key}|{span_start}".encode("utf-8")
    ).hexdigest()
    return digest[:16]


def _codeable_concept(concept: Optional[NormalizedConcept], text: str) -> dict:
    if concept is None:
        return {"text": text}
    return {
        "coding": [
            {
                "system": concept.system.uri,
                "code": concept.code,
                "display": concept.display,
            }
        ],
        "text": text,
    }


def _code_key(concept: Optional[NormalizedConcept], text: str) -> str:
    if concept is None:
        return f"text:{text}"
    return f"{concept.system.uri}#{concept.code}"


def build_patient(patient_id: str) -> FhirResource:
    """The single Patient resource every other resource references."""
    if not patient_id:
        raise EmptyPatientIdError("patient_id must be non-empty")
    return FhirResource(
        resource_type="Patient",
        id=resource_id(patient_id, "Patient", patient_id, ""),
        fields={"identifier": [{"value": patient_id}]},
    )


def _subject(patient: FhirResource) -> dict:
    return {"reference": f"Patient/{patient.id}"}


def condition_resource(
    patient_id: str,
    patient: FhirResource,
    concept: Optional[NormalizedConcept],
    text: str,
    span_start: object,
) -> FhirResource:
    return FhirResource(
        resource_type="Condition",
        id=resource_id(patient_id, "Condition", _code_key(concept, text), span_start),
        fields={
            "clinicalStatus": {
                "coding": [{"system": CLINICAL_STATUS_URI, "code": "active"}]
            },
            "verificationStatus": {
                "coding": [{"system": VERIFICATION_STATUS_URI, "code": "confirmed"}]
            },
            "code": _codeable_concept(concept, text),
            "subject": _subject(patient),
        },
    )


def observation_resource(
    patient_id: str,
    patient: FhirResource,
    concept: Optional[NormalizedConcept],
    name_text: str,
    value: str,
    effective: str,
    span_start: object,
) -> FhirResource:
    fields: dict = {"code": _codeable_concept(concept, name_text)}
    if value:
        fields["valueString"] = value
    fields["effectiveDateTime"] = effective
    fields["subject"] = _subject(patient)
    return FhirResource(
        resource_type="Observation",
        id=resource_id(
            patient_id, "Observation", _code_key(concept, name_text), span_start
        ),
        fields=fields,
    )


def medication_request_resource(
    patient_id: str,
    patient: FhirResource,
    concept: Optional[NormalizedConcept],
    text: str,
    dosage_texts: Sequence[str],
    authored_on: str,
    span_start: object,
) -> FhirResource:
    return FhirResource(
        resource_type="MedicationRequest",
        id=resource_id(
            patient_id, "MedicationRequest", _code_key(concept, text), span_start
        ),
        fields={
            "medicationCodeableConcept": _codeable_concept(concept, text),
            "dosageInstruction": [{"text": t} for t in dosage_texts],
            "authoredOn": authored_on,
            "subject": _subject(patient),
        },
    )


def assemble(
    note: ClinicalNote,
    annotated: Sequence[AnnotatedMention],
    rels: Sequence[Relation],
    patient: FhirResource,
    default_timestamp: str = DEFAULT_TIMESTAMP,
    placeholder_dosage: str = PLACEHOLDER_DOSAGE,
    naive_mapping: bool = False,
) -> list[FhirResource]:
    """Turn one note's annotated mentions and relations into resources.

    Mentions without a concept normally produce nothing; in naive-mapping
    mode they produce display-text resources with no coding (which the
    validator will then reject from the bundle).
    """
    timestamp = note.timestamp or default_timestamp
    mention_by_id = {a.mention.mention_id: a.mention for a in annotated}
    dosages: dict[str, list[tuple[int, str]]] = {}
    for relation in rels:
        if relation.rtype != RelationType.HAS_DOSAGE:
            continue
        tail = mention_by_id.get(relation.tail)
        if tail is not None:
            dosages.setdefault(relation.head, []).append((tail.start, tail.text))

    resources: list[FhirResource] = []
    for item in annotated:
        mention, concept = item.mention, item.concept
        if mention.etype in (EntityType.DOSAGE, EntityType.TEMPORAL):
            continue
        if concept is None and not naive_mapping:
            continue
        if mention.etype == EntityType.CONDITION:
            resources.append(
                condition_resource(
                    note.patient_id, patient, concept, mention.text, mention.start
                )
            )
        elif mention.etype == EntityType.OBSERVATION:
            name, value = split_observation_text(mention.text)
            resources.append(
                observation_resource(
                    note.patient_id,
                    patient,
                    concept,
                    name,
                    value,
                    timestamp,
                    mention.start,
                )
            )
        elif mention.etype == EntityType.MEDICATION:
            attached = sorted(dosages.get(mention.mention_id, []))
            dosage_texts = [text for _, text in attached] or [placeholder_dosage]
            resources.append(
                medication_request_resource(
                    note.patient_id,
                    patient,
                    concept,
                    mention.text,
                    dosage_texts,
                    timestamp,
                    mention.start,
                )
            )
    return resources


def _check_coding(
    resource: FhirResource,
    code_field: str,
    allowed: frozenset[str],
    rule: str,
    issues: list[ValidationIssue],
) -> None:
    concept = resource.fields.get(code_field) or {}
    coding = concept.get("coding") or []
    if not coding:
        issues.append(
            ValidationIssue(
                resource.id, rule, Severity.ERROR, f"{code_field} has no coding"
            )
        )
        return
    for entry in coding:
        system = entry.get("system", "")
        if system not in allowed:
            issues.append(
                ValidationIssue(
                    resource.id,
                    rule,
                    Severity.ERROR,
                    f"{code_field} uses disallowed system {system!r}",
                )
            )
        if not entry.get("code"):
            issues.append(
                ValidationIssue(
                    resource.id, rule, Severity.ERROR, f"{code_field} coding lacks a code"
                )
            )


def validate(
    resources: Iterable[FhirResource],
    patient: FhirResource,
    default_timestamp: Optional[str] = None,
    placeholder_dosage: str = PLACEHOLDER_DOSAGE,
) -> list[ValidationIssue]:
    """Check every resource against the profile rules; issues are the output.

    ERROR issues exclude a resource from the bundle downstream; WARNING
    issues are informational. Passing the configured ``default_timestamp``
    lets the validator flag fallback timestamps with W2.
    """
    issues: list[ValidationIssue] = []
    expected_subject = f"Patient/{patient.id}"
    for resource in resources:
        fields = resource.fields
        if resource.resource_type == "Patient":
            continue

        subject_ref = (fields.get("subject") or {}).get("reference", "")
        if subject_ref != expected_subject:
            issues.append(
                ValidationIssue(
                    resource.id,
                    "S1",
                    Severity.ERROR,
                    f"subject {subject_ref!r} does not reference the bundle patient",
                )
            )

        if resource.resource_type == "Condition":
            _check_coding(resource, "code", _CONDITION_SYSTEMS, "C1", issues)
            if not fields.get("clinicalStatus") or not fields.get("verificationStatus"):
                issues.append(
                    ValidationIssue(
                        resource.id,
                        "C2",
                        Severity.ERROR,
                        "clinicalStatus and verificationStatus are required",
                    )
                )
        elif resource.resource_type == "Observation":
            _check_coding(resource, "code", _OBSERVATION_SYSTEMS, "O1", issues)
            if not fields.get("valueString") or not fields.get("effectiveDateTime"):
                issues.append(
                    ValidationIssue(
                        resource.id,
                        "O2",
                        Severity.ERROR,
                        "a value and an effectiveDateTime are required",
                    )
                )
            elif default_timestamp and fields["effectiveDateTime"] == default_timestamp:
                issues.append(
                    ValidationIssue(
                        resource.id,
                        "W2",
                        Severity.WARNING,
                        "effectiveDateTime fell back to the default instant",
                    )
                )
        elif resource.resource_type == "MedicationRequest":
            _check_coding(
                resource, "medicationCodeableConcept", _MEDICATION_SYSTEMS, "M1", issues
            )
            dosage = fields.get("dosageInstruction") or []
            if not dosage:
                issues.append(
                    ValidationIssue(
                        resource.id,
                        "M1",
                        Severity.ERROR,
                        "at least one dosageInstruction is required",
                    )
                )
            elif any(d.get("text") == placeholder_dosage for d in dosage):
                issues.append(
                    ValidationIssue(
                        resource.id,
                        "W1",
                        Severity.WARNING,
                        "dosageInstruction is a placeholder",
                    )
                )
            if not fields.get("authoredOn"):
                issues.append(
                    ValidationIssue(
                        resource.id, "M2", Severity.ERROR, "authoredOn is required"
                    )
                )
            elif default_timestamp and fields["authoredOn"] == default_timestamp:
                issues.append(
                    ValidationIssue(
                        resource.id,
                        "W2",
                        Severity.WARNING,
                        "authoredOn fell back to the default instant",
                    )
                )
    return issues


def bundle(
    patient: FhirResource,
    resources: Sequence[FhirResource],
    issues: Sequence[ValidationIssue],
) -> TwinBundle:
    """Group the patient and every ERROR-free resource into one bundle.

    Entries are ordered Patient, Conditions, Observations, then
    MedicationRequests, each group sorted by id; duplicate ids (the same
    fact stated in several notes) collapse to their first occurrence.
    """
    rejected = {i.resource_id for i in issues if i.severity == Severity.ERROR}
    entries: list[FhirResource] = [patient]
    seen: set[str] = {patient.id}
    for resource_type in RESOURCE_ORDER[1:]:
        group = sorted(
            (r for r in resources if r.resource_type == resource_type),
            key=lambda r: r.id,
        )
        for resource in group:
            if resource.id in rejected or resource.id in seen:
                continue
            seen.add(resource.id)
            entries.append(resource)
    return TwinBundle(entries=tuple(entries))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def resource_to_dict(resource: FhirResource) -> dict:
    body = {"resourceType": resource.resource_type, "id": resource.id}
    body.update(resource.fields)
    return body


def bundle_to_dict(twin: TwinBundle) -> dict:
    return {
        "resourceType": "Bundle",
        "type": twin.bundle_type,
        "entry": [{"resource": resource_to_dict(r)} for r in twin.entries],
    }


def bundle_to_json(twin: TwinBundle) -> str:
    return json.dumps(bundle_to_dict(twin), indent=2) + "\n"


def resource_from_dict(body: dict) -> FhirResource:
    fields = {k: v for k, v in body.items() if k not in ("resourceType", "id")}
    return FhirResource(
        resource_type=body["resourceType"], id=body.get("id", ""), fields=fields
    )


def bundle_from_dict(body: dict) -> TwinBundle:
    if body.get("resourceType") != "Bundle":
        raise ValueError("not a Bundle document")
    entries = tuple(
        resource_from_dict(entry["resource"]) for entry in body.get("entry", [])
    )
    return TwinBundle(entries=entries, bundle_type=body.get("type", "collection"))


def bundle_from_json(text: str) -> TwinBundle:
    return bundle_from_dict(json.loads(text))


def issues_to_json(issues: Sequence[ValidationIssue]) -> str:
    rows = [
        {
            "resource_id": issue.resource_id,
            "rule": issue.rule,
            "severity": issue.severity.value,
            "message": issue.message,
        }
        for issue in issues
    ]
    return json.dumps(rows, indent=2) + "\n"
