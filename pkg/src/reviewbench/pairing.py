"""Balanced correct/wrong task-description pairs via nearest-neighbor search.

Every snippet contributes one pair with its own task description and one
with the most similar other description from the same dataset, making the
validation corpus balanced by construction. Similarity is exact cosine
over description embeddings; no approximate index is involved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from ._util import read_jsonl, write_jsonl
from .corpus import CodeSnippet


class ZeroVectorError(ValueError):
    """Cosine similarity is undefined for a zero vector."""


class DimensionMismatchError(ValueError):
    pass


class EmbeddingFailure(RuntimeError):
    """Embedding a description failed; carries the snippet id."""

    def __init__(self, snippet_id: str, cause: Exception):
        super().__init__(f"embedding failed for {snippet_id}: {cause}")
        self.snippet_id = snippet_id


class SingletonDatasetError(ValueError):
    """A dataset with a single snippet cannot supply a wrong-but-similar description."""


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        vals = tuple(float(x) for x in self.values)
        if not vals:
            raise ValueError("empty embedding vector")
        if not all(math.isfinite(x) for x in vals):
            raise ValueError("embedding vector has non-finite values")
        object.__setattr__(self, "values", vals)

    @property
    def dimension(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


def cosine_similarity(u: EmbeddingVector, v: EmbeddingVector) -> float:
    if u.dimension != v.dimension:
        raise DimensionMismatchError(f"{u.dimension} != {v.dimension}")
    a, b = u.as_array(), v.as_array()
    norm_a, norm_b = np.linalg.norm(a), np.linalg.norm(b)
    if norm_a == 0.0 or norm_b == 0.0:
        raise ZeroVectorError("zero vector")
    return float(np.dot(a, b) / (norm_a * norm_b))


@dataclass(frozen=True)
class TaskPair:
    snippet_id: str
    description: str
    is_correct: bool
    neighbor_of: str | None = None
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "snippet_id": self.snippet_id,
            "description": self.description,
            "is_correct": self.is_correct,
            "neighbor_of": self.neighbor_of,
            "degenerate": self.degenerate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskPair":
        return cls(
            snippet_id=d["snippet_id"],
            description=d["description"],
            is_correct=bool(d["is_correct"]),
            neighbor_of=d.get("neighbor_of"),
            degenerate=bool(d.get("degenerate", False)),
        )


def build_pairs(
    corpus: Sequence[CodeSnippet],
    embedder: Callable[[str], EmbeddingVector],
) -> list[TaskPair]:
    """Pair every snippet with its correct and nearest wrong description.

    Datasets are treated independently: the wrong description for a snippet
    is the highest-cosine correct description among *other* snippets of
    the same dataset, ties broken by lexicographically smallest snippet
    id. Duplicate descriptions force degenerate negatives, which are kept
    but flagged.
    """
    vectors: dict[str, np.ndarray] = {}
    norms: dict[str, float] = {}
    dim: int | None = None
    for snip in corpus:
        try:
            vec = embedder(snip.task_description)
        except Exception as exc:
            raise EmbeddingFailure(snip.id, exc) from exc
        if dim is None:
            dim = vec.dimension
        elif vec.dimension != dim:
            raise DimensionMismatchError(f"{snip.id}: {vec.dimension} != {dim}")
        arr = vec.as_array()
        norm = float(np.linalg.norm(arr))
        if norm == 0.0:
            raise ZeroVectorError(f"zero embedding for {snip.id}")
        vectors[snip.id] = arr
        norms[snip.id] = norm

    by_dataset: dict[str, list[CodeSnippet]] = {}
    for snip in corpus:
        by_dataset.setdefault(snip.dataset.value, []).append(snip)
    for name, group in by_dataset.items():
        if len(group) < 2:
            raise SingletonDatasetError(name)

    pairs: list[TaskPair] = []
    for snip in corpus:
        group = by_dataset[snip.dataset.value]
        best_id: str | None = None
        best_sim = -math.inf
        for other in group:
            if other.id == snip.id:
                continue
            sim = float(
                np.dot(vectors[snip.id], vectors[other.id])
                / (norms[snip.id] * norms[other.id])
            )
            if sim > best_sim or (sim == best_sim and (best_id is None or other.id < best_id)):
                best_sim = sim
                best_id = other.id
        assert best_id is not None
        wrong = next(s for s in group if s.id == best_id)
        pairs.append(
            TaskPair(snippet_id=snip.id, description=snip.task_description, is_correct=True)
        )
        pairs.append(
            TaskPair(
                snippet_id=snip.id,
                description=wrong.task_description,
                is_correct=False,
                neighbor_of=best_id,
                degenerate=wrong.task_description == snip.task_description,
            )
        )
    return pairs


def write_pairs(path: Path, pairs: Iterable[TaskPair], meta: dict | None = None) -> None:
    write_jsonl(path, (p.to_dict() for p in pairs), meta=meta)


def read_pairs(path: Path) -> list[TaskPair]:
    return [TaskPair.from_dict(d) for d in read_jsonl(path)]
