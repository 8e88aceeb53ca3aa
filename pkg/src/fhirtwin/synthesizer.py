"""Synthetic narrative construction from structured clinical tables.

Each patient record (diagnoses, prescriptions, lab events) renders into a
short note, one sentence per item, from a configurable template set. Gold
spans, codes and relations fall out of the rendering itself, and a
reference bundle is built directly from the structured data, so a corpus
produced here is exactly aligned with what the extraction pipeline should
find. Items whose names do not resolve in the terminology index are
skipped with a warning.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from fhirtwin import fhir_assembly
from fhirtwin.evaluation import GoldAnnotations, GoldMention, GoldRelation
from fhirtwin.fhir_assembly import DEFAULT_TIMESTAMP, TwinBundle
from fhirtwin.ner import ClinicalNote
from fhirtwin.normalizer import normalize_key
from fhirtwin.relations import RelationType
from fhirtwin.terminology import EntityType, TerminologyIndex

logger = logging.getLogger(__name__)


class UnresolvableRecordError(Exception):
    """No item in the record resolves against the terminology index."""


class BadRatiosError(Exception):
    """Split ratios must be three non-negative numbers summing to 1."""


@dataclass(frozen=True)
class Diagnosis:
    tag: str
    code: str
    description: str


@dataclass(frozen=True)
class Medication:
    drug: str
    dose: str
    frequency: str


@dataclass(frozen=True)
class Lab:
    test: str
    value: str
    unit: str
    timestamp: str


@dataclass(frozen=True)
class StructuredRecord:
    patient_id: str
    diagnoses: tuple[Diagnosis, ...]
    medications: tuple[Medication, ...]
    labs: tuple[Lab, ...]


@dataclass(frozen=True)
class TemplateSet:
    history: str
    diagnosis: str
    medication: str
    lab: str


@dataclass(frozen=True)
class SyntheticCase:
    note: ClinicalNote
    gold: GoldAnnotations
    reference: TwinBundle


def load_templates(path: str | Path) -> TemplateSet:
    """Load a tab-separated template file with history/diagnosis/medication/lab rows."""
    entries: dict[str, str] = {}
    with Path(path).open(encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{line_no}: expected key<TAB>template")
            entries[parts[0].strip()] = parts[1]
    missing = {"history", "diagnosis", "medication", "lab"} - set(entries)
    if missing:
        raise ValueError(f"{path}: missing templates: {sorted(missing)}")
    return TemplateSet(
        history=entries["history"],
        diagnosis=entries["diagnosis"],
        medication=entries["medication"],
        lab=entries["lab"],
    )


_PLACEHOLDER = re.compile(r"\{(\w+)\}")


def render_template(template: str, values: dict[str, str]) -> tuple[str, dict]:
    """Fill a template, returning the text and each filled slot's span.

    Empty values disappear along with the whitespace in front of them, so
    ``"{test} {value} {unit}."`` with an empty unit renders without a
    dangling space.
    """
    out = ""
    spans: dict[str, tuple[int, int]] = {}
    last = 0
    for match in _PLACEHOLDER.finditer(template):
        out += template[last : match.start()]
        name = match.group(1)
        if name not in values:
            raise KeyError(f"template slot {{{name}}} has no value")
        value = values[name]
        if value:
            spans[name] = (len(out), len(out) + len(value))
            out += value
        else:
            out = out.rstrip(" ")
        last = match.end()
    out += template[last:]
    return out, spans


@dataclass
class _NoteBuilder:
    text: str = ""

    def add_sentence(self, sentence: str) -> int:
        """Append a sentence; returns its base offset in the note."""
        if self.text:
            self.text += " "
        base = len(self.text)
        self.text += sentence
        return base


def _resolve(name: str, etype: EntityType, index: TerminologyIndex):
    concept = normalize_key(name, etype, index)
    if concept is None:
        logger.warning("skipped item: %r does not resolve as %s", name, etype.value)
    return concept


def synthesize(
    record: StructuredRecord,
    templates: TemplateSet,
    index: TerminologyIndex,
    default_timestamp: str = DEFAULT_TIMESTAMP,
    note_id: Optional[str] = None,
) -> SyntheticCase:
    """Render one record into a note with aligned gold and reference bundle."""
    if not (record.diagnoses or record.medications or record.labs):
        raise ValueError(f"record {record.patient_id!r} has no items")
    note_id = note_id or f"{record.patient_id}-note"

    lab_times = sorted(lab.timestamp for lab in record.labs if lab.timestamp)
    timestamp = lab_times[0] if lab_times else default_timestamp

    patient = fhir_assembly.build_patient(record.patient_id)
    builder = _NoteBuilder()
    gold_mentions: list[GoldMention] = []
    gold_relations: list[GoldRelation] = []
    resources = []

    def add_condition(description: str, concept, span: tuple[int, int]) -> None:
        gold_mentions.append(
            GoldMention(span[0], span[1], EntityType.CONDITION, concept.system, concept.code)
        )
        resources.append(
            fhir_assembly.condition_resource(
                record.patient_id, patient, concept, description, span[0]
            )
        )

    diagnoses = [
        (d, c)
        for d in record.diagnoses
        if (c := _resolve(d.description, EntityType.CONDITION, index)) is not None
    ]
    if len(diagnoses) >= 2:
        (first, first_concept), (second, second_concept) = diagnoses[0], diagnoses[1]
        sentence, spans = render_template(
            templates.history, {"a": first.description, "b": second.description}
        )
        base = builder.add_sentence(sentence)
        add_condition(
            first.description,
            first_concept,
            (base + spans["a"][0], base + spans["a"][1]),
        )
        add_condition(
            second.description,
            second_concept,
            (base + spans["b"][0], base + spans["b"][1]),
        )
        rest = diagnoses[2:]
    else:
        rest = diagnoses
    for diagnosis, concept in rest:
        sentence, spans = render_template(
            templates.diagnosis, {"description": diagnosis.description}
        )
        base = builder.add_sentence(sentence)
        span = (base + spans["description"][0], base + spans["description"][1])
        add_condition(diagnosis.description, concept, span)

    for medication in record.medications:
        concept = _resolve(medication.drug, EntityType.MEDICATION, index)
        if concept is None:
            continue
        sentence, spans = render_template(
            templates.medication,
            {
                "drug": medication.drug,
                "dose": medication.dose,
                "frequency": medication.frequency,
            },
        )
        base = builder.add_sentence(sentence)
        drug_span = (base + spans["drug"][0], base + spans["drug"][1])
        gold_mentions.append(
            GoldMention(
                drug_span[0], drug_span[1], EntityType.MEDICATION,
                concept.system, concept.code,
            )
        )
        dosage_parts = [spans[k] for k in ("dose", "frequency") if k in spans]
        if dosage_parts:
            dosage_span = (
                base + min(s for s, _ in dosage_parts),
                base + max(e for _, e in dosage_parts),
            )
            gold_mentions.append(
                GoldMention(
                    dosage_span[0], dosage_span[1], EntityType.DOSAGE, None, None
                )
            )
            gold_relations.append(
                GoldRelation(RelationType.HAS_DOSAGE, drug_span, dosage_span)
            )
            dosage_texts = [builder.text[dosage_span[0] : dosage_span[1]]]
        else:
            dosage_texts = [fhir_assembly.PLACEHOLDER_DOSAGE]
        resources.append(
            fhir_assembly.medication_request_resource(
                record.patient_id,
                patient,
                concept,
                medication.drug,
                dosage_texts,
                timestamp,
                drug_span[0],
            )
        )

    for lab in record.labs:
        concept = _resolve(lab.test, EntityType.OBSERVATION, index)
        if concept is None:
            continue
        sentence, spans = render_template(
            templates.lab, {"test": lab.test, "value": lab.value, "unit": lab.unit}
        )
        base = builder.add_sentence(sentence)
        value_parts = [spans[k] for k in ("value", "unit") if k in spans]
        obs_span = (
            base + spans["test"][0],
            base + (max(e for _, e in value_parts) if value_parts else spans["test"][1]),
        )
        gold_mentions.append(
            GoldMention(
                obs_span[0], obs_span[1], EntityType.OBSERVATION,
                concept.system, concept.code,
            )
        )
        value_text = (
            builder.text[base + min(s for s, _ in value_parts) : obs_span[1]]
            if value_parts
            else ""
        )
        resources.append(
            fhir_assembly.observation_resource(
                record.patient_id,
                patient,
                concept,
                lab.test,
                value_text,
                timestamp,
                obs_span[0],
            )
        )

    if not resources:
        raise UnresolvableRecordError(
            f"no item of record {record.patient_id!r} resolves in the index"
        )

    note = ClinicalNote(
        note_id=note_id,
        patient_id=record.patient_id,
        timestamp=timestamp,
        text=builder.text,
    )
    gold = GoldAnnotations(note_id, tuple(gold_mentions), tuple(gold_relations))
    issues = fhir_assembly.validate(resources, patient)
    reference = fhir_assembly.bundle(patient, resources, issues)
    return SyntheticCase(note=note, gold=gold, reference=reference)


# ---------------------------------------------------------------------------
# Structured table loading
# ---------------------------------------------------------------------------


def _read_table(path: Path, columns: int) -> list[list[str]]:
    rows: list[list[str]] = []
    with path.open(encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        for line_no, cells in enumerate(reader, start=1):
            if not cells or (cells[0].strip().startswith("#")):
                continue
            if line_no == 1 and cells and cells[0].strip().lower() == "patient_id":
                continue  # header row
            if len(cells) != columns:
                raise ValueError(
                    f"{path}:{line_no}: expected {columns} columns, found {len(cells)}"
                )
            rows.append([c.strip() for c in cells])
    return rows


def _split_code_tag(raw: str) -> tuple[str, str]:
    if ":" in raw:
        tag, _, code = raw.partition(":")
        return tag.strip(), code.strip()
    return "", raw


def load_records(tables_dir: str | Path) -> list[StructuredRecord]:
    """Build per-patient records from diagnoses/prescriptions/labevents CSVs.

    Missing table files are tolerated (with a warning); at least one must
    be present. Records come back sorted by patient id.
    """
    tables_dir = Path(tables_dir)
    diagnoses: dict[str, list[Diagnosis]] = {}
    medications: dict[str, list[Medication]] = {}
    labs: dict[str, list[Lab]] = {}

    paths = {
        "diagnoses": tables_dir / "diagnoses.csv",
        "prescriptions": tables_dir / "prescriptions.csv",
        "labevents": tables_dir / "labevents.csv",
    }
    present = {name: path for name, path in paths.items() if path.exists()}
    for name, path in paths.items():
        if name not in present:
            logger.warning("table %s not found; continuing without it", path)
    if not present:
        raise FileNotFoundError(f"no input tables found under {tables_dir}")

    if "diagnoses" in present:
        for patient_id, code, description in _read_table(present["diagnoses"], 3):
            tag, bare = _split_code_tag(code)
            diagnoses.setdefault(patient_id, []).append(
                Diagnosis(tag=tag, code=bare, description=description)
            )
    if "prescriptions" in present:
        for patient_id, drug, dose, frequency in _read_table(
            present["prescriptions"], 4
        ):
            medications.setdefault(patient_id, []).append(
                Medication(drug=drug, dose=dose, frequency=frequency)
            )
    if "labevents" in present:
        for patient_id, test, value, unit, timestamp in _read_table(
            present["labevents"], 5
        ):
            labs.setdefault(patient_id, []).append(
                Lab(test=test, value=value, unit=unit, timestamp=timestamp)
            )

    patient_ids = sorted(set(diagnoses) | set(medications) | set(labs))
    return [
        StructuredRecord(
            patient_id=pid,
            diagnoses=tuple(diagnoses.get(pid, [])),
            medications=tuple(medications.get(pid, [])),
            labs=tuple(labs.get(pid, [])),
        )
        for pid in patient_ids
    ]


# ---------------------------------------------------------------------------
# Corpus splitting
# ---------------------------------------------------------------------------


def _bucket_counts(total: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder allocation; each bucket is within 1 of total*ratio."""
    exact = [total * r for r in ratios]
    counts = [math.floor(x) for x in exact]
    shortfall = total - sum(counts)
    order = sorted(
        range(len(ratios)), key=lambda i: (-(exact[i] - counts[i]), i)
    )
    for i in order[:shortfall]:
        counts[i] += 1
    return counts


def split_corpus(
    cases: Sequence[SyntheticCase],
    ratios: tuple[float, float, float] = (0.70, 0.15, 0.15),
    seed: int = 13,
) -> tuple[list[SyntheticCase], list[SyntheticCase], list[SyntheticCase]]:
    """Deterministic patient-disjoint train/validation/test partition.

    Patients are ordered by a seeded hash of their id and sliced by the
    largest-remainder bucket counts, so every run with the same seed puts
    every case in the same partition and bucket sizes stay within one of
    the exact ratios.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1) > 1e-9:
        raise BadRatiosError(f"ratios {ratios!r} must be non-negative and sum to 1")

    patients = sorted({case.note.patient_id for case in cases})
    ordered = sorted(
        patients,
        key=lambda pid: hashlib.sha256(f"{seed}|{pid}".encode("utf-8")).hexdigest(),
    )
    counts = _bucket_counts(len(ordered), ratios)
    train_ids = set(ordered[: counts[0]])
    val_ids = set(ordered[counts[0] : counts[0] + counts[1]])

    train = [c for c in cases if c.note.patient_id in train_ids]
    val = [c for c in cases if c.note.patient_id in val_ids]
    test = [
        c
        for c in cases
        if c.note.patient_id not in train_ids and c.note.patient_id not in val_ids
    ]
    return train, val, test
