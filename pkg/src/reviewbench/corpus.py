"""Snippet corpus ingestion.

Raw dataset files are JSON-lines with fields ``{id, source, task?, cwe?}``.
Records are filtered down to single-function snippets with a usable task
description, labelled dirty (known vulnerability) or clean by dataset kind.
"""

from __future__ import annotations

import ast
import inspect
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from ._util import read_jsonl, write_jsonl


class DatasetKind(str, Enum):
    HUMANEVAL_LIKE = "humaneval_like"
    MBPP_LIKE = "mbpp_like"
    SECURITYEVAL_LIKE = "securityeval_like"


class RejectionReason(str, Enum):
    MULTI_FUNCTION = "MULTI_FUNCTION"
    ZERO_FUNCTION = "ZERO_FUNCTION"
    MULTI_DOCSTRING = "MULTI_DOCSTRING"
    NO_DOCSTRING_NO_TASK = "NO_DOCSTRING_NO_TASK"
    EXCLUDED_BY_LIST = "EXCLUDED_BY_LIST"
    DISALLOWED_CWE = "DISALLOWED_CWE"


class ParseError(ValueError):
    """Source text could not be parsed."""


class MalformedRecordError(ValueError):
    """Raw record is missing a mandatory field."""


class NoTaskError(ValueError):
    """Record has neither a task column nor a docstring."""


_CWE_RE = re.compile(r"(?i)^(?:cwe-?)?(\d+)$")


def normalize_cwe(raw: str | int) -> str:
    """Canonicalize a CWE identifier to the form ``CWE-<number>``."""
    m = _CWE_RE.match(str(raw).strip())
    if not m:
        raise ValueError(f"not a CWE identifier: {raw!r}")
    return f"CWE-{int(m.group(1))}"


def cwe_number(cwe_id: str) -> int:
    return int(normalize_cwe(cwe_id).split("-", 1)[1])


@dataclass(frozen=True)
class CodeSnippet:
    id: str
    dataset: DatasetKind
    source_text: str
    function_name: str
    docstring: str | None
    task_description: str
    is_dirty: bool
    true_cwe: str | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "dataset": self.dataset.value,
            "source_text": self.source_text,
            "function_name": self.function_name,
            "docstring": self.docstring,
            "task_description": self.task_description,
            "is_dirty": self.is_dirty,
            "true_cwe": self.true_cwe,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CodeSnippet":
        return cls(
            id=d["id"],
            dataset=DatasetKind(d["dataset"]),
            source_text=d["source_text"],
            function_name=d["function_name"],
            docstring=d.get("docstring"),
            task_description=d["task_description"],
            is_dirty=bool(d["is_dirty"]),
            true_cwe=d.get("true_cwe"),
        )


@dataclass(frozen=True)
class FunctionInfo:
    name: str
    lineno: int
    end_lineno: int
    docstring_count: int
    docstring: str | None


@dataclass
class FilterRules:
    kind: DatasetKind
    exclude_ids: frozenset[str] = frozenset()
    disallowed_cwes: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        self.exclude_ids = frozenset(str(x) for x in self.exclude_ids)
        self.disallowed_cwes = frozenset(normalize_cwe(c) for c in self.disallowed_cwes)


@dataclass
class FilterReport:
    considered: int = 0
    accepted: int = 0
    rejected: list[tuple[str, RejectionReason]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "considered": self.considered,
            "accepted": self.accepted,
            "rejected": [
                {"id": rid, "reason": reason.value} for rid, reason in self.rejected
            ],
        }


def parse_functions(source_text: str) -> list[FunctionInfo]:
    """Describe every top-level function definition in the source.

    The docstring count is the number of string literals sitting in
    docstring position, i.e. the run of bare string-literal statements
    opening the function body. Nested defs belong to their enclosing
    top-level function and do not produce entries of their own.
    """
    try:
        tree = ast.parse(source_text)
    except (SyntaxError, ValueError) as exc:
        raise ParseError(str(exc)) from exc
    out: list[FunctionInfo] = []
    for node in tree.body:
        if not isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
            continue
        count = 0
        for stmt in node.body:
            if (
                isinstance(stmt, ast.Expr)
                and isinstance(stmt.value, ast.Constant)
                and isinstance(stmt.value.value, str)
            ):
                count += 1
            else:
                break
        out.append(
            FunctionInfo(
                name=node.name,
                lineno=node.lineno,
                end_lineno=node.end_lineno or node.lineno,
                docstring_count=count,
                docstring=ast.get_docstring(node, clean=False),
            )
        )
    return out


def _clean_docstring(doc: str) -> str:
    """Dedent and trim outer blank lines, keeping interior formatting."""
    return inspect.cleandoc(doc).strip()


def extract_task(raw_task: str | None, fn: FunctionInfo) -> str:
    """Task column verbatim when the dataset has one, else the docstring body."""
    if raw_task is not None and str(raw_task).strip():
        return str(raw_task)
    if fn.docstring is not None:
        return _clean_docstring(fn.docstring)
    raise NoTaskError(fn.name)


def filter_dataset(
    raw_records: Sequence[dict], rules: FilterRules
) -> tuple[list[CodeSnippet], FilterReport]:
    """Apply the corpus admission rules to raw dataset records.

    Accepted snippets keep input order. Rejections are recorded with a
    reason; records missing mandatory raw fields raise instead, since they
    indicate a broken input file rather than a filtered observation.
    """
    report = FilterReport()
    accepted: list[CodeSnippet] = []
    for rec in raw_records:
        if "id" not in rec or "source" not in rec:
            raise MalformedRecordError(f"record missing id/source: {rec!r}")
        raw_id = str(rec["id"])
        report.considered += 1

        if raw_id in rules.exclude_ids:
            report.rejected.append((raw_id, RejectionReason.EXCLUDED_BY_LIST))
            continue

        try:
            functions = parse_functions(str(rec["source"]))
        except ParseError:
            functions = []
        if len(functions) == 0:
            report.rejected.append((raw_id, RejectionReason.ZERO_FUNCTION))
            continue
        if len(functions) > 1:
            report.rejected.append((raw_id, RejectionReason.MULTI_FUNCTION))
            continue
        fn = functions[0]
        if fn.docstring_count > 1:
            report.rejected.append((raw_id, RejectionReason.MULTI_DOCSTRING))
            continue

        raw_task = rec.get("task")
        if fn.docstring_count == 0 and (raw_task is None or not str(raw_task).strip()):
            report.rejected.append((raw_id, RejectionReason.NO_DOCSTRING_NO_TASK))
            continue

        is_dirty = rules.kind is DatasetKind.SECURITYEVAL_LIKE
        true_cwe: str | None = None
        if is_dirty:
            if "cwe" not in rec or rec["cwe"] in (None, ""):
                raise MalformedRecordError(f"dirty record {raw_id!r} has no cwe field")
            true_cwe = normalize_cwe(rec["cwe"])
            if true_cwe in rules.disallowed_cwes:
                report.rejected.append((raw_id, RejectionReason.DISALLOWED_CWE))
                continue

        accepted.append(
            CodeSnippet(
                id=f"{rules.kind.value}:{raw_id}",
                dataset=rules.kind,
                source_text=str(rec["source"]),
                function_name=fn.name,
                docstring=fn.docstring,
                task_description=extract_task(raw_task, fn),
                is_dirty=is_dirty,
                true_cwe=true_cwe,
            )
        )
    report.accepted = len(accepted)
    return accepted, report


def load_raw_records(path: Path) -> list[dict]:
    return list(read_jsonl(path))


def write_corpus(path: Path, snippets: Iterable[CodeSnippet], meta: dict | None = None) -> None:
    write_jsonl(path, (s.to_dict() for s in snippets), meta=meta)


def read_corpus(path: Path) -> list[CodeSnippet]:
    return [CodeSnippet.from_dict(d) for d in read_jsonl(path)]
