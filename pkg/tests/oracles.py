"""Brute-force scoring oracles.

These re-derive every metric from first principles over plain JSON
dictionaries: exhaustive assignment search for the F1 matching, quadratic
scans instead of grouping for the bundle scores. They share only the
metric definitions with the library, never its code paths.
"""

from __future__ import annotations

import itertools

from fhirtwin.fhir_assembly import TwinBundle, resource_to_dict

REQUIRED = {
    "Condition": ("code", "clinicalStatus", "verificationStatus", "subject"),
    "Observation": ("code", "valueString", "effectiveDateTime", "subject"),
    "MedicationRequest": (
        "medicationCodeableConcept",
        "dosageInstruction",
        "authoredOn",
        "subject",
    ),
}

CODED = ("code", "medicationCodeableConcept", "clinicalStatus", "verificationStatus")


def prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def max_matching_f1(predicted: list, gold: list) -> tuple[float, float, float]:
    """Exhaustively search injective prediction-to-gold assignments."""
    if len(predicted) <= len(gold):
        shorter, longer = list(predicted), list(gold)
    else:
        shorter, longer = list(gold), list(predicted)
    best = 0
    for assignment in itertools.permutations(range(len(longer)), len(shorter)):
        matches = sum(1 for i, j in enumerate(assignment) if shorter[i] == longer[j])
        best = max(best, matches)
    tp = best
    return prf(tp, len(predicted) - tp, len(gold) - tp)


def canon_field(resource: dict, field: str):
    value = resource.get(field)
    if value is None:
        return None
    if field in CODED:
        coding = value.get("coding") or []
        if not coding:
            return ("text", value.get("text", ""))
        return tuple(sorted((c.get("system", ""), c.get("code", "")) for c in coding))
    if field == "dosageInstruction":
        return tuple(d.get("text", "") for d in value)
    if field == "subject":
        return value.get("reference", "")
    return value


def resource_key(resource: dict) -> tuple:
    field = (
        "medicationCodeableConcept"
        if resource["resourceType"] == "MedicationRequest"
        else "code"
    )
    coding = (resource.get(field) or {}).get("coding") or []
    if coding:
        primary = (coding[0].get("system", ""), coding[0].get("code", ""))
    else:
        primary = ("text", (resource.get(field) or {}).get("text", ""))
    return (resource["resourceType"], primary)


def _non_patient(twin: TwinBundle) -> list[dict]:
    return [
        resource_to_dict(r) for r in twin.entries if r.resource_type != "Patient"
    ]


def _pair_up(gen: list[dict], ref: list[dict]) -> list[tuple[dict, dict]]:
    """Quadratic-scan pairing by key, both sides consumed in id order."""
    gen_sorted = sorted(gen, key=lambda r: r.get("id", ""))
    ref_sorted = sorted(ref, key=lambda r: r.get("id", ""))
    used = [False] * len(gen_sorted)
    pairs = []
    for ref_resource in ref_sorted:
        for i, gen_resource in enumerate(gen_sorted):
            if used[i]:
                continue
            if resource_key(gen_resource) == resource_key(ref_resource):
                used[i] = True
                pairs.append((gen_resource, ref_resource))
                break
    return pairs


def _pair_agreement(gen_resource: dict, ref_resource: dict) -> tuple[int, int]:
    required = REQUIRED[ref_resource["resourceType"]]
    equal = 0
    for field in required:
        ref_value = canon_field(ref_resource, field)
        if ref_value is not None and canon_field(gen_resource, field) == ref_value:
            equal += 1
    return equal, len(required)


def oracle_completeness(generated: TwinBundle, reference: TwinBundle) -> float:
    gen, ref = _non_patient(generated), _non_patient(reference)
    denominator = sum(len(REQUIRED[r["resourceType"]]) for r in ref)
    if denominator == 0:
        return 1.0
    numerator = 0
    for gen_resource, ref_resource in _pair_up(gen, ref):
        numerator += _pair_agreement(gen_resource, ref_resource)[0]
    return numerator / denominator


def oracle_interoperability(
    generated: TwinBundle, reference: TwinBundle, match_weight: float = 0.5
) -> float:
    gen, ref = _non_patient(generated), _non_patient(reference)
    if not gen and not ref:
        return 1.0
    if not gen or not ref:
        return 0.0
    pairs = _pair_up(gen, ref)
    matched = len(pairs)
    _, _, f1_match = prf(matched, len(gen) - matched, len(ref) - matched)
    if pairs:
        agreement = sum(
            equal / total for equal, total in (_pair_agreement(g, r) for g, r in pairs)
        ) / len(pairs)
    else:
        agreement = 0.0
    return match_weight * f1_match + (1 - match_weight) * agreement
