"""Controlled-vocabulary dictionaries and surface-form lookup.

Four code systems are supported: SNOMED CT, ICD-10, LOINC and RxNorm.
Dictionaries are plain UTF-8 comma-delimited files with five columns,

    surface_form,system,code,display,entity_type

where ``system`` is one of SNOMED/ICD10/LOINC/RXNORM and ``entity_type``
is CONDITION, MEDICATION or OBSERVATION. Lines starting with ``#`` and
blank lines are ignored. A second two-column file maps synonym aliases to
canonical surface forms (``alias,canonical``); aliases must point directly
at canonical forms, never at other aliases.

Indexes are immutable once built and safe to share across threads.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional


class TerminologyError(Exception):
    """Base class for dictionary loading problems."""


class MalformedRowError(TerminologyError):
    """A dictionary or synonym row could not be parsed."""

    def __init__(self, path: str | Path, line_no: int, reason: str):
        super().__init__(f"{path}:{line_no}: {reason}")
        self.path = str(path)
        self.line_no = line_no
        self.reason = reason


class UnknownSystemError(TerminologyError):
    """A row names a code system that is not recognized (or not expected)."""

    def __init__(self, path: str | Path, line_no: int, tag: str):
        super().__init__(f"{path}:{line_no}: unknown code system {tag!r}")
        self.path = str(path)
        self.line_no = line_no
        self.tag = tag


class CodeSystem(Enum):
    """The four supported code systems; values are the canonical URIs."""

    SNOMED = "http://snomed.info/sct"
    ICD10 = "http://hl7.org/fhir/sid/icd-10"
    LOINC = "http://loinc.org"
    RXNORM = "http://www.nlm.nih.gov/research/umls/rxnorm"

    @property
    def uri(self) -> str:
        return self.value


# Tie-breaking order for lookup results.
SYSTEM_PRECEDENCE: dict[CodeSystem, int] = {
    system: rank for rank, system in enumerate(CodeSystem)
}

URI_TO_SYSTEM: dict[str, CodeSystem] = {system.uri: system for system in CodeSystem}


class EntityType(Enum):
    CONDITION = "CONDITION"
    MEDICATION = "MEDICATION"
    OBSERVATION = "OBSERVATION"
    DOSAGE = "DOSAGE"
    TEMPORAL = "TEMPORAL"


#: Entity types that may carry an ontology code (and appear in dictionaries).
CODEABLE_TYPES = frozenset(
    {EntityType.CONDITION, EntityType.MEDICATION, EntityType.OBSERVATION}
)


def normalize_surface(surface: str) -> str:
    """Case-fold and collapse internal whitespace; the canonical lookup key."""
    return " ".join(surface.casefold().split())


@dataclass(frozen=True)
class ConceptEntry:
    """One dictionary row: a surface form bound to an ontology code."""

    surface_form: str
    system: CodeSystem
    code: str
    display: str
    entity_type: EntityType

    def sort_key(self) -> tuple[int, str]:
        return (SYSTEM_PRECEDENCE[self.system], self.code)


@dataclass(frozen=True)
class TerminologyIndex:
    """Immutable surface-form index over one or more loaded dictionaries.

    ``entries`` maps normalized surface forms to concept entries;
    ``synonym_map`` maps normalized aliases directly to canonical forms.
    """

    entries: dict[str, tuple[ConceptEntry, ...]] = field(default_factory=dict)
    synonym_map: dict[str, str] = field(default_factory=dict)

    def exact(self, surface: str) -> tuple[ConceptEntry, ...]:
        """Entries whose surface form equals the normalized query."""
        return self.entries.get(normalize_surface(surface), ())

    def via_synonym(self, surface: str) -> tuple[ConceptEntry, ...]:
        """Entries reached by resolving the query through the synonym map."""
        canonical = self.synonym_map.get(normalize_surface(surface))
        if canonical is None:
            return ()
        return self.entries.get(canonical, ())

    def lookup(
        self, surface: str, type_filter: Optional[EntityType] = None
    ) -> list[ConceptEntry]:
        """All entries matching the query directly or through a synonym.

        Results are ordered by system precedence (SNOMED, ICD10, LOINC,
        RXNORM) and then by code, so repeated lookups are deterministic.
        Unknown surfaces return an empty list.
        """
        seen: set[tuple[CodeSystem, str, EntityType]] = set()
        results: list[ConceptEntry] = []
        for entry in self.exact(surface) + self.via_synonym(surface):
            if type_filter is not None and entry.entity_type != type_filter:
                continue
            key = (entry.system, entry.code, entry.entity_type)
            if key in seen:
                continue
            seen.add(key)
            results.append(entry)
        results.sort(key=ConceptEntry.sort_key)
        return results

    def match_keys(self) -> frozenset[str]:
        """Every normalized surface that can produce a lookup hit."""
        return frozenset(self.entries) | frozenset(self.synonym_map)

    def with_synonyms(self, synonym_map: dict[str, str]) -> "TerminologyIndex":
        """Return a copy carrying ``synonym_map`` (validated as alias->canonical)."""
        merged = dict(self.synonym_map)
        for alias, canonical in synonym_map.items():
            alias_n = normalize_surface(alias)
            canonical_n = normalize_surface(canonical)
            if not alias_n or not canonical_n:
                raise ValueError("synonym rows need a non-empty alias and canonical")
            if alias_n == canonical_n:
                raise ValueError(f"synonym {alias_n!r} points at itself")
            merged[alias_n] = canonical_n
        for alias_n, canonical_n in merged.items():
            if canonical_n in merged:
                raise ValueError(
                    f"synonym chain {alias_n!r} -> {canonical_n!r}: aliases must "
                    "point directly at canonical forms"
                )
        return TerminologyIndex(entries=dict(self.entries), synonym_map=merged)


def _iter_csv_rows(path: Path) -> Iterable[tuple[int, list[str]]]:
    """Yield (line_no, cells) for data rows, skipping comments and blanks.

    Rows are parsed line by line so errors can name the offending line;
    quoted embedded newlines are therefore not supported.
    """
    with path.open(encoding="utf-8", newline="") as handle:
        for line_no, raw in enumerate(handle, start=1):
            stripped = raw.strip()
            if not stripped or stripped.startswith("#"):
                continue
            yield line_no, next(csv.reader([raw]))


def load_dictionary(
    path: str | Path, expected_system: Optional[CodeSystem] = None
) -> TerminologyIndex:
    """Load one dictionary file into a fresh index.

    Any malformed row aborts the load; no partial index is returned.
    Repeated (system, code) pairs are legal and simply register additional
    surface forms for the same concept. When ``expected_system`` is given,
    rows tagged with any other system are rejected.
    """
    path = Path(path)
    staged: dict[str, list[ConceptEntry]] = {}
    for line_no, cells in _iter_csv_rows(path):
        if len(cells) != 5:
            raise MalformedRowError(
                path, line_no, f"expected 5 columns, found {len(cells)}"
            )
        raw_surface, raw_system, code, display, raw_type = (c.strip() for c in cells)
        surface = normalize_surface(raw_surface)
        if not surface:
            raise MalformedRowError(path, line_no, "empty surface form")
        if not code:
            raise MalformedRowError(path, line_no, "empty code")
        try:
            system = CodeSystem[raw_system.upper()]
        except KeyError:
            raise UnknownSystemError(path, line_no, raw_system) from None
        if expected_system is not None and system != expected_system:
            raise UnknownSystemError(path, line_no, raw_system)
        try:
            entity_type = EntityType[raw_type.upper()]
        except KeyError:
            raise MalformedRowError(
                path, line_no, f"unknown entity type {raw_type!r}"
            ) from None
        if entity_type not in CODEABLE_TYPES:
            raise MalformedRowError(
                path, line_no, f"entity type {raw_type!r} cannot carry codes"
            )
        entry = ConceptEntry(surface, system, code, display, entity_type)
        bucket = staged.setdefault(surface, [])
        if not any(
            e.system == entry.system
            and e.code == entry.code
            and e.entity_type == entry.entity_type
            for e in bucket
        ):
            bucket.append(entry)
    return TerminologyIndex(
        entries={surface: tuple(rows) for surface, rows in staged.items()}
    )


def load_synonyms(path: str | Path) -> dict[str, str]:
    """Load a two-column alias,canonical file into a normalized mapping."""
    path = Path(path)
    mapping: dict[str, str] = {}
    for line_no, cells in _iter_csv_rows(path):
        if len(cells) != 2:
            raise MalformedRowError(
                path, line_no, f"expected 2 columns, found {len(cells)}"
            )
        alias, canonical = (normalize_surface(c) for c in cells)
        if not alias or not canonical:
            raise MalformedRowError(path, line_no, "empty alias or canonical form")
        mapping[alias] = canonical
    return mapping


def merge_indexes(*indexes: TerminologyIndex) -> TerminologyIndex:
    """Combine indexes; duplicate entries collapse, later synonyms win.

    Merging an index with itself yields an index with identical lookup
    behavior, so repeated loads of the same file are harmless.
    """
    staged: dict[str, list[ConceptEntry]] = {}
    synonym_map: dict[str, str] = {}
    for index in indexes:
        for surface, rows in index.entries.items():
            bucket = staged.setdefault(surface, [])
            for entry in rows:
                if not any(
                    e.system == entry.system
                    and e.code == entry.code
                    and e.entity_type == entry.entity_type
                    for e in bucket
                ):
                    bucket.append(entry)
        synonym_map.update(index.synonym_map)
    return TerminologyIndex(
        entries={surface: tuple(rows) for surface, rows in staged.items()},
        synonym_map=synonym_map,
    )


def load_terminology(
    dictionary_paths: Iterable[str | Path],
    synonym_path: Optional[str | Path] = None,
) -> TerminologyIndex:
    """Convenience loader: merge several dictionaries, then attach synonyms."""
    index = merge_indexes(*(load_dictionary(p) for p in dictionary_paths))
    if synonym_path is not None:
        index = index.with_synonyms(load_synonyms(synonym_path))
    return index
