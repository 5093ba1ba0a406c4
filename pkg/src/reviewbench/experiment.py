"""Prompt rendering, answer coding, ground truth, and the run protocol.

Each run perturbs every snippet once, then walks the review stages in
order: vulnerability flagging, functional validation, zero-shot
approve/reject, chain-of-thought approve/reject (which embeds the same
run's earlier answers), and vulnerability description. Answers are coded
by the literal substring rules; anything else is a negative prediction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from ._util import META_KEY, canonical_json, read_jsonl, read_jsonl_meta
from .corpus import CodeSnippet
from .gateway import Gateway, Transcript
from .pairing import TaskPair
from .perturb import PerturbationRecord, perturb_snippet

logger = logging.getLogger(__name__)


class RQ(str, Enum):
    RQ1 = "rq1"
    RQ2 = "rq2"
    RQ3_ZS = "rq3-zs"
    RQ3_COT = "rq3-cot"
    RQ4 = "rq4"


STAGE_ORDER = (RQ.RQ1, RQ.RQ2, RQ.RQ3_ZS, RQ.RQ3_COT, RQ.RQ4)

MAX_NEW_TOKENS = {
    RQ.RQ1: 8,
    RQ.RQ2: 8,
    RQ.RQ3_ZS: 8,
    RQ.RQ3_COT: 8,
    RQ.RQ4: 100,
}


class Label(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


class MissingPriorAnswerError(RuntimeError):
    """Chain-of-thought case lacks a same-run prior answer."""


class CaseExecutionError(RuntimeError):
    """A gateway call failed; carries the identity of the failing case."""

    def __init__(self, case: "PromptCase", cause: Exception):
        super().__init__(
            f"{case.rq.value} snippet={case.snippet_id} run={case.run_index} "
            f"polarity={case.polarity}: {cause}"
        )
        self.case = case
        self.cause = cause


@dataclass(frozen=True)
class PromptCase:
    rq: RQ
    snippet_id: str
    run_index: int
    prompt: str
    max_new_tokens: int
    polarity: bool | None = None


@dataclass(frozen=True)
class Verdict:
    raw_answer: str
    coded: Label
    ground_truth: Label


# --- prompt templates -------------------------------------------------------

RQ1_TEMPLATE = (
    "Review the provided code for potential security vulnerabilities. "
    "After your review, assign the code a label from [Yes, No]. "
    "'Yes' implies that there are security vulnerabilities. "
    "'No' implies that there are no security vulnerabilities. "
    "Return only the label.\n"
    "Code: {code}\n"
    "Label:"
)

RQ2_TEMPLATE = (
    "Review the provided code and verify that it meets its intended functionality. "
    "After your review, assign the code a label from [Yes, No]. "
    "'Yes' implies that the code meets its intended functionality. "
    "'No' implies that the code does not meet its intended functionality. "
    "Return only the label.\n"
    "Code: {code}\n"
    "Intended functionality: {task}\n"
    "Label:"
)

RQ3_OPENING = (
    "Review the provided code for potential security vulnerabilities "
    "and verify that it meets its intended functionality.\n"
)

RQ3_PRIOR_BLOCK = (
    "When asked if the code contains a security vulnerability, "
    "a previous review yielded: {rq1_answer}.\n"
    "When asked if the code meets its intended functionality, "
    "a previous review yielded: {rq2_answer}.\n"
)

RQ3_CLOSING = (
    "After your review, assign the code a label from [Approve, Reject]. "
    "'Approve' implies that there are no security vulnerabilities and that "
    "the code meets its intended functionality. "
    "'Reject' implies that there are security vulnerabilities or that "
    "the code does not meet its intended functionality. "
    "Return only the label.\n"
    "Code: {code}\n"
    "Intended functionality: {task}\n"
    "Label:"
)

RQ4_TEMPLATE = (
    "Review the provided code for potential security vulnerabilities. "
    "Provide a brief description of any vulnerability you find. "
    "Return only the description.\n"
    "Code: {code}\n"
    "Description:"
)


def render_prompt(
    rq: RQ,
    code: str,
    task_description: str | None = None,
    prior_rq1: str | None = None,
    prior_rq2: str | None = None,
) -> str:
    """Fill one of the four review templates.

    The chain-of-thought variant includes the prior-answer block and
    requires both same-run answers; the zero-shot variant omits it.
    """
    if rq is RQ.RQ1:
        return RQ1_TEMPLATE.format(code=code)
    if rq is RQ.RQ4:
        return RQ4_TEMPLATE.format(code=code)
    if task_description is None:
        raise ValueError(f"{rq.value} requires a task description")
    if rq is RQ.RQ2:
        return RQ2_TEMPLATE.format(code=code, task=task_description)
    if rq is RQ.RQ3_ZS:
        return RQ3_OPENING + RQ3_CLOSING.format(code=code, task=task_description)
    if rq is RQ.RQ3_COT:
        if prior_rq1 is None or prior_rq2 is None:
            raise MissingPriorAnswerError(f"{rq.value} requires same-run rq1 and rq2 answers")
        return (
            RQ3_OPENING
            + RQ3_PRIOR_BLOCK.format(rq1_answer=prior_rq1, rq2_answer=prior_rq2)
            + RQ3_CLOSING.format(code=code, task=task_description)
        )
    raise ValueError(f"unknown rq: {rq}")


# --- answer coding and ground truth -----------------------------------------


def code_yesno(answer: str) -> Label:
    """Positive iff the lowercased answer contains the substring "yes"."""
    return Label.POSITIVE if "yes" in answer.lower() else Label.NEGATIVE


def code_approve(answer: str) -> Label:
    """Positive iff the lowercased answer contains "approve".

    The rule is byte-literal for measurement fidelity, so "disapprove"
    codes positive too; such matches are logged as a warning.
    """
    lowered = answer.lower()
    if "disapprove" in lowered:
        logger.warning("answer %r matches 'approve' only via 'disapprove'", answer)
    return Label.POSITIVE if "approve" in lowered else Label.NEGATIVE


def code_answer(rq: RQ, answer: str) -> Label:
    if rq in (RQ.RQ1, RQ.RQ2):
        return code_yesno(answer)
    if rq in (RQ.RQ3_ZS, RQ.RQ3_COT):
        return code_approve(answer)
    raise ValueError(f"{rq.value} answers are not binary-coded")


def ground_truth(rq: RQ, snippet: CodeSnippet, polarity: bool | None = None) -> Label:
    """Positive class per stage: dirty code, correct task, or approvable code.

    Approvable means clean and correctly described; dirty snippets are
    never approvable regardless of description.
    """
    if rq is RQ.RQ1:
        return Label.POSITIVE if snippet.is_dirty else Label.NEGATIVE
    if rq in (RQ.RQ2, RQ.RQ3_ZS, RQ.RQ3_COT):
        if polarity is None:
            raise ValueError(f"{rq.value} requires pair polarity")
        if rq is RQ.RQ2:
            return Label.POSITIVE if polarity else Label.NEGATIVE
        return Label.POSITIVE if (polarity and not snippet.is_dirty) else Label.NEGATIVE
    raise ValueError(f"{rq.value} has no binary ground truth")


# --- transcript store -------------------------------------------------------


class TranscriptStore:
    """Append-only JSONL transcript files, one per (backend, run, stage).

    When ``meta`` is given (manifest hash, seed), each new file starts
    with a meta record so archived transcripts stay traceable.
    """

    def __init__(self, root: Path, backend_id: str, meta: dict | None = None):
        self.root = Path(root)
        self.backend_id = backend_id
        self.meta = meta

    def _path(self, run_index: int, rq: RQ) -> Path:
        return self.root / self.backend_id / f"run{run_index:02d}" / f"{rq.value}.jsonl"

    def load(self, run_index: int, rq: RQ) -> dict[tuple[str, bool | None], Transcript]:
        path = self._path(run_index, rq)
        out: dict[tuple[str, bool | None], Transcript] = {}
        if not path.exists():
            return out
        for rec in read_jsonl(path):
            try:
                t = Transcript.from_dict(rec)
            except (KeyError, ValueError):
                logger.warning("skipping malformed transcript line in %s", path)
                continue
            out[(t.snippet_id, t.polarity)] = t
        return out

    def append(self, run_index: int, rq: RQ, transcript: Transcript) -> None:
        path = self._path(run_index, rq)
        path.parent.mkdir(parents=True, exist_ok=True)
        fresh = not path.exists()
        with open(path, "a", encoding="utf-8") as fh:
            if fresh and self.meta is not None:
                fh.write(canonical_json({META_KEY: self.meta}) + "\n")
            fh.write(canonical_json(transcript.to_dict()) + "\n")
            fh.flush()

    def run_transcripts(self, run_index: int, rq: RQ) -> list[Transcript]:
        return list(self.load(run_index, rq).values())

    def stored_meta(self) -> dict | None:
        """Meta record of the oldest transcript file, if any exists."""
        backend_dir = self.root / self.backend_id
        if not backend_dir.exists():
            return None
        for path in sorted(backend_dir.rglob("*.jsonl")):
            meta = read_jsonl_meta(path)
            if meta is not None:
                return meta
        return None


# --- case construction and protocol -----------------------------------------


def pairs_by_snippet(pairs: Sequence[TaskPair]) -> dict[str, dict[bool, TaskPair]]:
    out: dict[str, dict[bool, TaskPair]] = {}
    for pair in pairs:
        out.setdefault(pair.snippet_id, {})[pair.is_correct] = pair
    return out


def expected_case_count(rq: RQ, corpus: Sequence[CodeSnippet]) -> int:
    if rq is RQ.RQ1:
        return len(corpus)
    if rq in (RQ.RQ2, RQ.RQ3_ZS, RQ.RQ3_COT):
        return 2 * len(corpus)
    return sum(1 for s in corpus if s.is_dirty)


def _build_cases(
    rq: RQ,
    run_index: int,
    corpus: Sequence[CodeSnippet],
    pair_map: dict[str, dict[bool, TaskPair]],
    perturbed: dict[str, tuple[str, PerturbationRecord]],
    store: TranscriptStore,
) -> Iterator[tuple[PromptCase, PerturbationRecord]]:
    priors_rq1: dict[tuple[str, bool | None], Transcript] = {}
    priors_rq2: dict[tuple[str, bool | None], Transcript] = {}
    if rq is RQ.RQ3_COT:
        priors_rq1 = store.load(run_index, RQ.RQ1)
        priors_rq2 = store.load(run_index, RQ.RQ2)

    for snippet in corpus:
        code, record = perturbed[snippet.id]
        if rq is RQ.RQ1:
            prompt = render_prompt(rq, code)
            yield PromptCase(rq, snippet.id, run_index, prompt, MAX_NEW_TOKENS[rq]), record
        elif rq is RQ.RQ4:
            if not snippet.is_dirty:
                continue
            prompt = render_prompt(rq, code)
            yield PromptCase(rq, snippet.id, run_index, prompt, MAX_NEW_TOKENS[rq]), record
        else:
            if snippet.id not in pair_map:
                raise ValueError(f"no task pairs for snippet {snippet.id}")
            for polarity in (True, False):
                pair = pair_map[snippet.id][polarity]
                prior_rq1 = prior_rq2 = None
                if rq is RQ.RQ3_COT:
                    t1 = priors_rq1.get((snippet.id, None))
                    t2 = priors_rq2.get((snippet.id, polarity))
                    if t1 is None or t2 is None:
                        raise MissingPriorAnswerError(
                            f"run {run_index}: missing rq1/rq2 transcript for "
                            f"{snippet.id} polarity={polarity}"
                        )
                    prior_rq1, prior_rq2 = t1.response, t2.response
                prompt = render_prompt(
                    rq, code, pair.description, prior_rq1=prior_rq1, prior_rq2=prior_rq2
                )
                yield (
                    PromptCase(rq, snippet.id, run_index, prompt, MAX_NEW_TOKENS[rq], polarity),
                    record,
                )


@dataclass
class RunSummary:
    run_index: int
    executed: int
    skipped: int


def run_protocol(
    corpus: Sequence[CodeSnippet],
    pairs: Sequence[TaskPair],
    gateway: Gateway,
    store: TranscriptStore,
    *,
    seed: int,
    runs: int = 10,
    rqs: Iterable[RQ] | None = None,
) -> list[RunSummary]:
    """Execute the review stages for every run, resuming completed cases.

    Stages run in protocol order inside each run so the chain-of-thought
    stage only ever consumes answers from its own run. Every transcript is
    persisted as soon as its response arrives.
    """
    selected = set(STAGE_ORDER if rqs is None else rqs)
    pair_map = pairs_by_snippet(pairs)
    backend_id = gateway.backend.config.backend_id if gateway.backend else "unknown"
    summaries: list[RunSummary] = []
    for run_index in range(runs):
        perturbed = {
            s.id: perturb_snippet(s, seed=seed, run_index=run_index) for s in corpus
        }
        executed = skipped = 0
        for rq in STAGE_ORDER:
            if rq not in selected:
                continue
            existing = store.load(run_index, rq)
            for case, record in _build_cases(rq, run_index, corpus, pair_map, perturbed, store):
                if (case.snippet_id, case.polarity) in existing:
                    skipped += 1
                    continue
                try:
                    result = gateway.complete(case.prompt, run_index=run_index, case=case)
                except Exception as exc:
                    raise CaseExecutionError(case, exc) from exc
                store.append(
                    run_index,
                    rq,
                    Transcript(
                        snippet_id=case.snippet_id,
                        run_index=run_index,
                        rq=rq.value,
                        polarity=case.polarity,
                        prompt=case.prompt,
                        response=result.text,
                        backend_id=backend_id,
                        cache_hit=result.cache_hit,
                        perturbation=record,
                    ),
                )
                executed += 1
        summaries.append(RunSummary(run_index=run_index, executed=executed, skipped=skipped))
    return summaries


def is_run_complete(
    store: TranscriptStore,
    run_index: int,
    corpus: Sequence[CodeSnippet],
    rqs: Iterable[RQ] | None = None,
) -> bool:
    selected = STAGE_ORDER if rqs is None else tuple(rqs)
    return all(
        len(store.load(run_index, rq)) >= expected_case_count(rq, corpus) for rq in selected
    )


def oracle_answers(
    corpus: Sequence[CodeSnippet],
    pairs: Sequence[TaskPair] | None = None,
    cwe_names: dict[str, str] | None = None,
) -> dict[tuple[str, str, bool | None], str]:
    """Ground-truth answer map for the oracle stub backend."""
    answers: dict[tuple[str, str, bool | None], str] = {}
    for snippet in corpus:
        answers[(RQ.RQ1.value, snippet.id, None)] = "Yes" if snippet.is_dirty else "No"
        if snippet.is_dirty:
            description = (cwe_names or {}).get(snippet.true_cwe or "", "")
            answers[(RQ.RQ4.value, snippet.id, None)] = (
                description or f"vulnerability {snippet.true_cwe}"
            )
        for polarity in (True, False):
            answers[(RQ.RQ2.value, snippet.id, polarity)] = "Yes" if polarity else "No"
            approvable = ground_truth(RQ.RQ3_ZS, snippet, polarity) is Label.POSITIVE
            verdict = "Approve" if approvable else "Reject"
            answers[(RQ.RQ3_ZS.value, snippet.id, polarity)] = verdict
            answers[(RQ.RQ3_COT.value, snippet.id, polarity)] = verdict
    return answers
