"""CWE catalog loading, relation graph, and description matching.

Reads an official catalog export (XML or CSV), keeps non-deprecated
weakness entries, and builds a one-hop relation graph. Free-text
vulnerability descriptions are scored by nearest cosine neighbor over
embedded weakness names: a description counts as a match when its nearest
name is the true weakness or one hop away from it.
"""

from __future__ import annotations

import csv
import json
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from ._util import atomic_write_text
from .corpus import cwe_number, normalize_cwe
from .pairing import EmbeddingVector


class RelationNature(str, Enum):
    CHILD_OF = "ChildOf"
    PARENT_OF = "ParentOf"
    PEER_OF = "PeerOf"
    CAN_PRECEDE = "CanPrecede"
    CAN_FOLLOW = "CanFollow"
    CAN_ALSO_BE = "CanAlsoBe"
    REQUIRES = "Requires"
    REQUIRED_BY = "RequiredBy"
    STARTS_WITH = "StartsWith"


_NATURES = {n.value: n for n in RelationNature}


class CweParseError(ValueError):
    pass


class EmptyCatalogError(ValueError):
    pass


class UnknownIdError(KeyError):
    pass


@dataclass(frozen=True)
class CweEntry:
    id: str
    name: str
    abstraction: str
    status: str
    relations: tuple[tuple[RelationNature, str], ...]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "abstraction": self.abstraction,
            "status": self.status,
            "relations": [[n.value, t] for n, t in self.relations],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CweEntry":
        return cls(
            id=d["id"],
            name=d["name"],
            abstraction=d.get("abstraction", ""),
            status=d.get("status", ""),
            relations=tuple((RelationNature(n), t) for n, t in d["relations"]),
        )


@dataclass
class CweFilter:
    disallowed_ids: frozenset[str] = frozenset()
    include_deprecated: bool = False

    def __post_init__(self) -> None:
        self.disallowed_ids = frozenset(normalize_cwe(c) for c in self.disallowed_ids)


@dataclass
class CatalogStats:
    retained: int
    mean_relations: float
    dangling_targets: int


class CweGraph:
    def __init__(self, entries: Iterable[CweEntry]):
        self.entries: dict[str, CweEntry] = {e.id: e for e in entries}
        if not self.entries:
            raise EmptyCatalogError("no weakness entries retained")
        self.name_embeddings: dict[str, EmbeddingVector] = {}
        self._neighbors: dict[str, set[str]] = {cid: set() for cid in self.entries}
        self.dangling: set[str] = set()
        for entry in self.entries.values():
            for _, target in entry.relations:
                self._neighbors[entry.id].add(target)
                if target in self._neighbors:
                    self._neighbors[target].add(entry.id)
                else:
                    self.dangling.add(target)
        for cid, neigh in self._neighbors.items():
            neigh.discard(cid)

    def immediate_relations(self, cwe_id: str) -> set[str]:
        """One-hop neighbors under any relation nature, symmetrized."""
        cwe_id = normalize_cwe(cwe_id)
        if cwe_id not in self.entries:
            raise UnknownIdError(cwe_id)
        return set(self._neighbors[cwe_id])

    def stats(self) -> CatalogStats:
        total = sum(len(e.relations) for e in self.entries.values())
        return CatalogStats(
            retained=len(self.entries),
            mean_relations=total / len(self.entries),
            dangling_targets=len(self.dangling),
        )

    def mean_relations_for(self, ids: Sequence[str]) -> float:
        ids = [normalize_cwe(i) for i in ids]
        missing = [i for i in ids if i not in self.entries]
        if missing:
            raise UnknownIdError(", ".join(missing))
        if not ids:
            raise ValueError("no ids given")
        return sum(len(self.entries[i].relations) for i in ids) / len(ids)

    def embed_names(self, embed_fn: Callable[[str], EmbeddingVector]) -> None:
        for cid, entry in self.entries.items():
            if cid not in self.name_embeddings:
                self.name_embeddings[cid] = embed_fn(entry.name)

    def to_dict(self) -> dict:
        return {"entries": [e.to_dict() for e in sorted(self.entries.values(), key=lambda e: cwe_number(e.id))]}

    @classmethod
    def from_dict(cls, d: dict) -> "CweGraph":
        return cls(CweEntry.from_dict(e) for e in d["entries"])

    def save(self, path: Path) -> None:
        atomic_write_text(path, json.dumps(self.to_dict(), ensure_ascii=False, indent=1))

    @classmethod
    def load(cls, path: Path) -> "CweGraph":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _is_deprecated(status: str, name: str) -> bool:
    return status.strip().lower() == "deprecated" or name.upper().startswith("DEPRECATED")


def _localname(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _parse_xml(path: Path) -> list[CweEntry]:
    try:
        root = ET.parse(path).getroot()
    except ET.ParseError as exc:
        raise CweParseError(str(exc)) from exc
    entries: list[CweEntry] = []
    for elem in root.iter():
        if _localname(elem.tag) != "Weakness" or "ID" not in elem.attrib:
            continue
        relations: list[tuple[RelationNature, str]] = []
        for rel in elem.iter():
            if _localname(rel.tag) != "Related_Weakness":
                continue
            nature = rel.get("Nature", "")
            target = rel.get("CWE_ID", "")
            if nature in _NATURES and target:
                relations.append((_NATURES[nature], normalize_cwe(target)))
        entries.append(
            CweEntry(
                id=normalize_cwe(elem.get("ID", "")),
                name=elem.get("Name", ""),
                abstraction=elem.get("Abstraction", ""),
                status=elem.get("Status", ""),
                relations=tuple(dict.fromkeys(relations)),
            )
        )
    return entries


def _parse_related_field(raw: str) -> list[tuple[RelationNature, str]]:
    """Decode the CSV ``Related Weaknesses`` field.

    Segments look like ``NATURE:ChildOf:CWE ID:707:VIEW ID:1000:ORDINAL:
    Primary`` separated by ``::``; the same relation can repeat across
    views, so results are deduplicated.
    """
    relations: list[tuple[RelationNature, str]] = []
    for segment in raw.split("::"):
        segment = segment.strip()
        if not segment:
            continue
        tokens = segment.split(":")
        fields = {
            tokens[i].strip(): tokens[i + 1].strip()
            for i in range(0, len(tokens) - 1, 2)
        }
        nature = fields.get("NATURE", "")
        target = fields.get("CWE ID", "")
        if nature in _NATURES and target:
            relations.append((_NATURES[nature], normalize_cwe(target)))
    return list(dict.fromkeys(relations))


def _parse_csv(path: Path) -> list[CweEntry]:
    entries: list[CweEntry] = []
    with open(path, encoding="utf-8-sig", newline="") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or "CWE-ID" not in reader.fieldnames:
            raise CweParseError("missing CWE-ID column")
        for row in reader:
            raw_id = (row.get("CWE-ID") or "").strip()
            if not raw_id:
                continue
            entries.append(
                CweEntry(
                    id=normalize_cwe(raw_id),
                    name=(row.get("Name") or "").strip(),
                    abstraction=(row.get("Weakness Abstraction") or "").strip(),
                    status=(row.get("Status") or "").strip(),
                    relations=tuple(_parse_related_field(row.get("Related Weaknesses") or "")),
                )
            )
    return entries


def load_catalog(path: Path | str, filter: CweFilter | None = None) -> CweGraph:
    """Load an official CWE export, keeping allowed non-deprecated weaknesses."""
    path = Path(path)
    filter = filter or CweFilter()
    if path.suffix.lower() == ".xml":
        entries = _parse_xml(path)
    elif path.suffix.lower() == ".csv":
        entries = _parse_csv(path)
    else:
        raise CweParseError(f"unsupported catalog format: {path.suffix}")
    retained = [
        e
        for e in entries
        if e.id not in filter.disallowed_ids
        and (filter.include_deprecated or not _is_deprecated(e.status, e.name))
    ]
    if not retained:
        raise EmptyCatalogError(str(path))
    return CweGraph(retained)


@dataclass(frozen=True)
class MatchResult:
    nearest_id: str
    similarity: float
    is_match: bool | None


def match_description(
    description: str,
    graph: CweGraph,
    embed_fn: Callable[[str], EmbeddingVector],
    true_cwe: str | None = None,
) -> MatchResult:
    """Find the weakness name nearest to a generated description.

    Ties go to the smallest CWE number. When ``true_cwe`` is given, the
    result also says whether the nearest name is that weakness or one of
    its immediate relations.
    """
    if not description.strip():
        raise ValueError("empty description")
    missing = [cid for cid in graph.entries if cid not in graph.name_embeddings]
    if missing:
        raise ValueError(f"name embeddings missing for {len(missing)} entries")
    query = embed_fn(description).as_array()
    query_norm = float(np.linalg.norm(query))
    if query_norm == 0.0:
        raise ValueError("zero description embedding")

    best_id: str | None = None
    best_sim = -float("inf")
    for cid in sorted(graph.entries, key=cwe_number):
        vec = graph.name_embeddings[cid].as_array()
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            continue
        sim = float(np.dot(query, vec) / (query_norm * norm))
        if sim > best_sim:
            best_sim = sim
            best_id = cid
    if best_id is None:
        raise EmptyCatalogError("no usable name embeddings")

    is_match: bool | None = None
    if true_cwe is not None:
        true_cwe = normalize_cwe(true_cwe)
        if true_cwe not in graph.entries:
            raise UnknownIdError(true_cwe)
        is_match = best_id == true_cwe or best_id in graph.immediate_relations(true_cwe)
    return MatchResult(nearest_id=best_id, similarity=best_sim, is_match=is_match)
