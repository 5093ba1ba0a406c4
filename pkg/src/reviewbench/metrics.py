"""Per-run classification metrics, aggregation, and the results table.

Every (stage, run) cell gets a confusion matrix, accuracy, and the
stage's positive-class F1; the description stage gets a match rate. Runs
aggregate to mean and sample standard deviation, reported in percent
with one decimal as "mean (std)".
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .corpus import CodeSnippet, DatasetKind
from .cwe import CweGraph, match_description
from .experiment import (
    RQ,
    Label,
    TranscriptStore,
    Verdict,
    code_answer,
    ground_truth,
)
from .pairing import EmbeddingVector, TaskPair


class EmptyCellError(ValueError):
    pass


class EmptyListError(ValueError):
    pass


class MissingCellError(ValueError):
    def __init__(self, cells: list[str]):
        super().__init__("missing report cells: " + ", ".join(cells))
        self.cells = cells


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_verdicts(cls, verdicts: Iterable[Verdict]) -> "ConfusionMatrix":
        tp = fp = tn = fn = 0
        for v in verdicts:
            if v.ground_truth is Label.POSITIVE:
                if v.coded is Label.POSITIVE:
                    tp += 1
                else:
                    fn += 1
            else:
                if v.coded is Label.POSITIVE:
                    fp += 1
                else:
                    tn += 1
        return cls(tp=tp, fp=fp, tn=tn, fn=fn)

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise EmptyCellError("empty confusion matrix")
    return (cm.tp + cm.tn) / cm.total


def f1(cm: ConfusionMatrix) -> float:
    """Positive-class F1, 0 by convention when there are no true positives."""
    if cm.tp == 0:
        return 0.0
    precision = cm.tp / (cm.tp + cm.fp)
    recall = cm.tp / (cm.tp + cm.fn)
    return 2 * precision * recall / (precision + recall)


def match_rate(matches: Sequence[bool]) -> float:
    if not matches:
        raise EmptyListError("no match results")
    return sum(1 for m in matches if m) / len(matches)


@dataclass(frozen=True)
class MetricSummary:
    """Per-run fractions plus mean and sample std scaled to percent."""

    per_run: tuple[float, ...]
    mean: float
    std: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "per_run": list(self.per_run),
            "mean": self.mean,
            "std": self.std,
            "degenerate": self.degenerate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricSummary":
        return cls(
            per_run=tuple(d["per_run"]),
            mean=d["mean"],
            std=d["std"],
            degenerate=bool(d.get("degenerate", False)),
        )


def aggregate(per_run: Sequence[float]) -> MetricSummary:
    """Mean and sample (n-1) standard deviation over runs, in percent."""
    if not per_run:
        raise EmptyListError("no per-run values")
    values = [float(v) for v in per_run]
    mean = statistics.fmean(values) * 100.0
    degenerate = len(values) < 2
    std = 0.0 if degenerate else statistics.stdev(values) * 100.0
    return MetricSummary(per_run=tuple(values), mean=mean, std=std, degenerate=degenerate)


def format_cell(summary: MetricSummary) -> str:
    return f"{summary.mean:.1f} ({summary.std:.1f})"


# --- scoring transcripts -----------------------------------------------------


@dataclass
class RunCell:
    run_index: int
    cm: ConfusionMatrix
    accuracy: float
    f1: float

    def to_dict(self) -> dict:
        return {
            "run_index": self.run_index,
            **self.cm.to_dict(),
            "accuracy": self.accuracy,
            "f1": self.f1,
        }


@dataclass
class MatchCell:
    run_index: int
    matches: int
    total: int
    rate: float

    def to_dict(self) -> dict:
        return {
            "run_index": self.run_index,
            "matches": self.matches,
            "total": self.total,
            "rate": self.rate,
        }


@dataclass
class BackendReport:
    backend_id: str
    runs: int
    cells: dict[str, dict] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"backend_id": self.backend_id, "runs": self.runs, "cells": self.cells}

    @classmethod
    def from_dict(cls, d: dict) -> "BackendReport":
        return cls(backend_id=d["backend_id"], runs=int(d["runs"]), cells=d["cells"])

    def summary(self, rq: RQ, metric: str) -> MetricSummary | None:
        cell = self.cells.get(rq.value)
        if cell is None or metric not in cell:
            return None
        return MetricSummary.from_dict(cell[metric])


def coded_verdicts(
    transcripts: Iterable,
    snippets_by_id: dict[str, CodeSnippet],
) -> list[Verdict]:
    out = []
    for t in transcripts:
        rq = RQ(t.rq)
        snippet = snippets_by_id[t.snippet_id]
        out.append(
            Verdict(
                raw_answer=t.response,
                coded=code_answer(rq, t.response),
                ground_truth=ground_truth(rq, snippet, t.polarity),
            )
        )
    return out


def score_backend(
    store: TranscriptStore,
    corpus: Sequence[CodeSnippet],
    pairs: Sequence[TaskPair],
    *,
    runs: int,
    rqs: Iterable[RQ] | None = None,
    graph: CweGraph | None = None,
    embed_fn: Callable[[str], EmbeddingVector] | None = None,
    dataset: DatasetKind | None = None,
    exclude_degenerate: bool = False,
) -> BackendReport:
    """Score persisted transcripts into per-run cells and summaries.

    Scoring never re-contacts the chat backend; the description stage
    needs the relation graph plus an embedder and regenerates its match
    decisions per run. ``exclude_degenerate`` drops snippets whose wrong
    description duplicates the correct one (both polarities, keeping the
    pairing stages balanced).
    """
    selected = list(RQ) if rqs is None else list(rqs)
    if dataset is not None:
        corpus = [s for s in corpus if s.dataset is dataset]
    snippets_by_id = {s.id: s for s in corpus}
    degenerate_ids = (
        {p.snippet_id for p in pairs if p.degenerate} if exclude_degenerate else set()
    )
    report = BackendReport(backend_id=store.backend_id, runs=runs)

    for rq in selected:
        if rq is RQ.RQ4:
            if graph is None or embed_fn is None:
                continue
            cells: list[MatchCell] = []
            for run_index in range(runs):
                transcripts = [
                    t
                    for t in store.run_transcripts(run_index, rq)
                    if t.snippet_id in snippets_by_id
                ]
                if not transcripts:
                    continue
                flags = []
                for t in sorted(transcripts, key=lambda t: t.snippet_id):
                    true_cwe = snippets_by_id[t.snippet_id].true_cwe
                    if not t.response.strip() or true_cwe is None:
                        flags.append(False)
                        continue
                    result = match_description(t.response, graph, embed_fn, true_cwe=true_cwe)
                    flags.append(bool(result.is_match))
                cells.append(
                    MatchCell(
                        run_index=run_index,
                        matches=sum(flags),
                        total=len(flags),
                        rate=match_rate(flags),
                    )
                )
            if cells:
                report.cells[rq.value] = {
                    "per_run": [c.to_dict() for c in cells],
                    "match_rate": aggregate([c.rate for c in cells]).to_dict(),
                }
            continue

        run_cells: list[RunCell] = []
        for run_index in range(runs):
            transcripts = [
                t
                for t in store.run_transcripts(run_index, rq)
                if t.snippet_id in snippets_by_id
                and not (
                    rq in (RQ.RQ2, RQ.RQ3_ZS, RQ.RQ3_COT)
                    and t.snippet_id in degenerate_ids
                )
            ]
            if not transcripts:
                continue
            cm = ConfusionMatrix.from_verdicts(coded_verdicts(transcripts, snippets_by_id))
            run_cells.append(
                RunCell(run_index=run_index, cm=cm, accuracy=accuracy(cm), f1=f1(cm))
            )
        if run_cells:
            report.cells[rq.value] = {
                "per_run": [c.to_dict() for c in run_cells],
                "accuracy": aggregate([c.accuracy for c in run_cells]).to_dict(),
                "f1": aggregate([c.f1 for c in run_cells]).to_dict(),
            }
    return report


# --- report rendering --------------------------------------------------------

_COLUMNS: list[tuple[str, RQ, str]] = [
    ("RQ1 Accuracy", RQ.RQ1, "accuracy"),
    ("RQ1 F1 (Dirty)", RQ.RQ1, "f1"),
    ("RQ2 Accuracy", RQ.RQ2, "accuracy"),
    ("RQ2 F1 (True Task)", RQ.RQ2, "f1"),
    ("RQ3-ZS Accuracy", RQ.RQ3_ZS, "accuracy"),
    ("RQ3-ZS F1 (Approve)", RQ.RQ3_ZS, "f1"),
    ("RQ3-CoT Accuracy", RQ.RQ3_COT, "accuracy"),
    ("RQ3-CoT F1 (Approve)", RQ.RQ3_COT, "f1"),
    ("RQ4 Match Rate", RQ.RQ4, "match_rate"),
]


def render_report(
    reports: Sequence[BackendReport], rqs: Iterable[RQ] | None = None
) -> tuple[str, str]:
    """Render the results table as (csv_text, markdown_text).

    Every requested cell must be present; missing cells raise with an
    explicit list instead of rendering blanks.
    """
    selected = set(RQ) if rqs is None else set(rqs)
    columns = [c for c in _COLUMNS if c[1] in selected]
    missing: list[str] = []
    rows: list[list[str]] = []
    for report in reports:
        row = [report.backend_id]
        for header, rq, metric in columns:
            summary = report.summary(rq, metric)
            if summary is None:
                missing.append(f"{report.backend_id}: {header}")
                row.append("")
            else:
                row.append(format_cell(summary))
        rows.append(row)
    if missing:
        raise MissingCellError(missing)

    headers = ["LLM"] + [c[0] for c in columns]
    csv_lines = [",".join(headers)]
    csv_lines += [",".join(f'"{cell}"' if "," in cell else cell for cell in row) for row in rows]
    csv_text = "\n".join(csv_lines) + "\n"

    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(headers)]
    md_lines = ["| " + " | ".join(h.ljust(w) for h, w in zip(headers, widths)) + " |"]
    md_lines.append("| " + " | ".join("-" * w for w in widths) + " |")
    for row in rows:
        md_lines.append("| " + " | ".join(cell.ljust(w) for cell, w in zip(row, widths)) + " |")
    md_text = "\n".join(md_lines) + "\n"
    return csv_text, md_text
