"""Syntax-only snippet transformations applied once per snippet per run.

One of five transformations is drawn uniformly per (seed, run, snippet):
splitting the longest line, replacing tabs with spaces, renaming the most
frequent local variable, converting identifier case style, or doing
nothing. A transformation that cannot be applied safely degrades to a
no-op and the record reflects that nothing changed.

Safety is defined on the token stream: after inverting any identifier
renames, the normalized token stream of the output must equal the
input's exactly. String literals (and therefore docstrings) are never
edited.
"""

from __future__ import annotations

import ast
import builtins
import hashlib
import io
import keyword
import random
import re
import tokenize
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum

from .corpus import CodeSnippet


class PerturbationKind(str, Enum):
    SPLIT_LONGEST_LINE = "split_longest_line"
    TABS_TO_SPACES = "tabs_to_spaces"
    RENAME_FREQUENT_VARIABLE = "rename_frequent_variable"
    CASE_CONVERT = "case_convert"
    IDENTITY = "identity"


@dataclass(frozen=True)
class PerturbationRecord:
    kind: PerturbationKind
    seed: int
    changed: bool
    rename_map: dict[str, str] | None = None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "seed": self.seed,
            "changed": self.changed,
            "rename_map": self.rename_map,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PerturbationRecord":
        return cls(
            kind=PerturbationKind(d["kind"]),
            seed=int(d["seed"]),
            changed=bool(d["changed"]),
            rename_map=d.get("rename_map"),
        )


def derive_seed(seed: int, run_index: int, snippet_id: str) -> int:
    """Stable per-(seed, run, snippet) seed, independent of hash randomization."""
    digest = hashlib.sha256(f"{seed}|{run_index}|{snippet_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def rng_for(seed: int, run_index: int, snippet_id: str) -> random.Random:
    return random.Random(derive_seed(seed, run_index, snippet_id))


def choose_kind(rng: random.Random) -> PerturbationKind:
    return rng.choice(list(PerturbationKind))


# --- token-stream machinery ---------------------------------------------

_SKIP_TYPES = {tokenize.COMMENT, tokenize.NL, tokenize.ENCODING, tokenize.ENDMARKER}
_MARKER_TYPES = {tokenize.INDENT, tokenize.DEDENT, tokenize.NEWLINE}
# 3.12+ splits f-strings into dedicated token types; treat them as strings.
_STRING_TYPES = {tokenize.STRING} | {
    t for t in (getattr(tokenize, n, None) for n in ("FSTRING_START", "FSTRING_MIDDLE", "FSTRING_END")) if t
}

TokenizeFailure = (tokenize.TokenError, IndentationError, SyntaxError, ValueError)


def _tokens(source: str) -> list[tokenize.TokenInfo]:
    return list(tokenize.generate_tokens(io.StringIO(source).readline))


def normalized_tokens(
    source: str, rename: dict[str, str] | None = None
) -> tuple[tuple[int, str], ...]:
    """Token stream with insignificant whitespace and comments collapsed.

    Indentation and logical newlines are kept as type-only markers so the
    block structure still has to match; NAME tokens are mapped through
    ``rename`` when given (used to invert a perturbation's rename map).
    """
    out: list[tuple[int, str]] = []
    for tok in _tokens(source):
        if tok.type in _SKIP_TYPES:
            continue
        if tok.type in _MARKER_TYPES:
            out.append((tok.type, ""))
        elif tok.type == tokenize.NAME and rename and tok.string in rename:
            out.append((tok.type, rename[tok.string]))
        else:
            out.append((tok.type, tok.string))
    return tuple(out)


def token_equivalent(
    original: str, perturbed: str, rename_map: dict[str, str] | None = None
) -> bool:
    """True when the perturbed stream, renames inverted, equals the original's."""
    inverse = {v: k for k, v in rename_map.items()} if rename_map else None
    try:
        return normalized_tokens(perturbed, rename=inverse) == normalized_tokens(original)
    except TokenizeFailure:
        return False


def _spans_by_line(
    tokens: list[tokenize.TokenInfo], types: set[int]
) -> dict[int, list[tuple[int, int]]]:
    """Column ranges occupied by tokens of the given types, per line."""
    big = 1 << 30
    spans: dict[int, list[tuple[int, int]]] = defaultdict(list)
    for tok in tokens:
        if tok.type not in types:
            continue
        (srow, scol), (erow, ecol) = tok.start, tok.end
        if srow == erow:
            spans[srow].append((scol, ecol))
        else:
            spans[srow].append((scol, big))
            for row in range(srow + 1, erow):
                spans[row].append((0, big))
            spans[erow].append((0, ecol))
    return spans


def _in_spans(col: int, spans: list[tuple[int, int]]) -> bool:
    return any(start <= col < end for start, end in spans)


def _bracket_depth_at(tokens: list[tokenize.TokenInfo], row: int, col: int) -> int:
    depth = 0
    for tok in tokens:
        if tok.start >= (row, col):
            break
        if tok.type == tokenize.OP:
            if tok.string in "([{":
                depth += 1
            elif tok.string in ")]}":
                depth -= 1
    return depth


# --- the five transformations -------------------------------------------


def split_longest_line(source: str) -> str:
    """Split the character-longest line near its midpoint.

    The split lands on a whitespace boundary outside string literals and
    comments, continuing the line inside an open bracket when possible and
    with a backslash otherwise. Returns the source unchanged when no safe
    split point exists.
    """
    lines = source.split("\n")
    if not any(line.strip() for line in lines):
        return source
    # longest wins, ties go to the earlier line
    idx = max(range(len(lines)), key=lambda i: (len(lines[i]), -i))
    line = lines[idx]
    row = idx + 1
    try:
        tokens = _tokens(source)
    except TokenizeFailure:
        return source
    protected = _spans_by_line(tokens, _STRING_TYPES | {tokenize.COMMENT}).get(row, [])
    indent_len = len(line) - len(line.lstrip())

    candidates = [
        col
        for col, ch in enumerate(line)
        if ch in " \t"
        and col >= indent_len
        and line[:col].strip()
        and line[col + 1 :].strip()
        and not _in_spans(col, protected)
    ]
    if not candidates:
        return source
    mid = len(line) / 2
    candidates.sort(key=lambda col: (abs(col - mid), col))

    base = normalized_tokens(source)
    continuation_indent = " " * (indent_len + 8)
    for col in candidates:
        joiner = "\n" if _bracket_depth_at(tokens, row, col) > 0 else " \\\n"
        split_line = line[:col] + joiner + continuation_indent + line[col + 1 :]
        candidate = "\n".join(lines[:idx] + [split_line] + lines[idx + 1 :])
        try:
            if normalized_tokens(candidate) == base:
                return candidate
        except TokenizeFailure:
            continue
    return source


def tabs_to_spaces(source: str, width: int = 4) -> str:
    """Replace tab characters outside string literals with spaces."""
    if "\t" not in source:
        return source
    try:
        tokens = _tokens(source)
    except TokenizeFailure:
        # not tokenizable: plain substitution is the best available
        return source.replace("\t", " " * width)
    string_spans = _spans_by_line(tokens, _STRING_TYPES)
    out_lines = []
    for i, line in enumerate(source.split("\n")):
        spans = string_spans.get(i + 1, [])
        chars = [
            " " * width if ch == "\t" and not _in_spans(col, spans) else ch
            for col, ch in enumerate(line)
        ]
        out_lines.append("".join(chars))
    candidate = "\n".join(out_lines)
    return candidate if token_equivalent(source, candidate) else source


_CAMEL_RE = re.compile(r"[a-z][a-z0-9]*(?:[A-Z][A-Za-z0-9]*)+")
_SNAKE_RE = re.compile(r"[a-z0-9]+(?:_[a-z0-9]+)+")
_BANNED_NAMES = frozenset(keyword.kwlist) | frozenset(keyword.softkwlist) | frozenset(dir(builtins))


@dataclass
class _IdentifierInfo:
    # eligible local/parameter names ordered by first occurrence
    eligible: list[str]
    # (line, byte col, byte end col) of every renameable occurrence, per name
    positions: dict[str, list[tuple[int, int, int]]]
    # every NAME token plus words inside f-string literals, for collision checks
    taken: set[str]


def _identifier_info(source: str) -> _IdentifierInfo | None:
    try:
        tree = ast.parse(source)
        tokens = _tokens(source)
    except TokenizeFailure:
        return None

    taken = {tok.string for tok in tokens if tok.type == tokenize.NAME}
    fstring_words: set[str] = set()
    for tok in tokens:
        if tok.type == tokenize.STRING and re.match(r"(?i)^[rb]*f", tok.string):
            fstring_words.update(re.findall(r"\w+", tok.string))
    taken |= fstring_words

    banned = set(_BANNED_NAMES) | fstring_words
    module_level: set[str] = set()
    for node in ast.walk(tree):
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef)):
            banned.add(node.name)
        elif isinstance(node, (ast.Import, ast.ImportFrom)):
            for alias in node.names:
                banned.add(alias.asname or alias.name.split(".")[0])
        elif isinstance(node, (ast.Global, ast.Nonlocal)):
            banned.update(node.names)
        elif isinstance(node, ast.Call):
            # a name also used as a call keyword cannot be renamed consistently
            banned.update(kw.arg for kw in node.keywords if kw.arg)
    for stmt in tree.body:
        if isinstance(stmt, (ast.FunctionDef, ast.AsyncFunctionDef)):
            continue
        for node in ast.walk(stmt):
            if isinstance(node, ast.Name):
                module_level.add(node.id)
    banned |= module_level

    positions: dict[str, list[tuple[int, int, int]]] = defaultdict(list)
    assignable: dict[str, tuple[int, int]] = {}
    for top in tree.body:
        if not isinstance(top, (ast.FunctionDef, ast.AsyncFunctionDef)):
            continue
        for node in ast.walk(top):
            if isinstance(node, ast.Name):
                positions[node.id].append(
                    (node.lineno, node.col_offset, node.end_col_offset or node.col_offset)
                )
                if isinstance(node.ctx, (ast.Store, ast.Del)) and node.id not in assignable:
                    assignable[node.id] = (node.lineno, node.col_offset)
            elif isinstance(node, ast.arg):
                # the arg node's end may cover an annotation; the name is
                # exactly len(utf-8 bytes) wide from col_offset
                positions[node.arg].append(
                    (
                        node.lineno,
                        node.col_offset,
                        node.col_offset + len(node.arg.encode("utf-8")),
                    )
                )
                if node.arg not in assignable:
                    assignable[node.arg] = (node.lineno, node.col_offset)

    eligible = [
        name
        for name, _ in sorted(assignable.items(), key=lambda kv: (kv[1], kv[0]))
        if name not in banned
    ]
    return _IdentifierInfo(eligible=eligible, positions=dict(positions), taken=taken)


def _apply_renames(
    source: str, mapping: dict[str, str], positions: dict[str, list[tuple[int, int, int]]]
) -> str:
    lines = source.split("\n")
    edits = [
        (line, start, end, mapping[name])
        for name, spots in positions.items()
        if name in mapping
        for (line, start, end) in spots
    ]
    # right-to-left so earlier offsets stay valid; ast columns are byte offsets
    for line, start, end, new in sorted(edits, reverse=True):
        raw = lines[line - 1].encode("utf-8")
        lines[line - 1] = (raw[:start] + new.encode("utf-8") + raw[end:]).decode("utf-8")
    return "\n".join(lines)


def _fresh_name(base: str, taken: set[str]) -> str:
    if base not in taken and base not in _BANNED_NAMES:
        return base
    n = 1
    while f"{base}_{n}" in taken or f"{base}_{n}" in _BANNED_NAMES:
        n += 1
    return f"{base}_{n}"


def rename_frequent_variable(
    source: str, replacement: str = "xxxx"
) -> tuple[str, dict[str, str] | None]:
    """Rename the most frequent local variable or parameter to ``xxxx``.

    Frequency counts occurrences in code (never inside strings); ties break
    toward the identifier seen first. Returns the unchanged source and no
    map when nothing is eligible.
    """
    info = _identifier_info(source)
    if info is None or not info.eligible:
        return source, None
    candidates = [n for n in info.eligible if info.positions.get(n)]
    if not candidates:
        return source, None
    target = sorted(
        candidates,
        key=lambda n: (-len(info.positions[n]), min(info.positions[n])),
    )[0]
    new_name = _fresh_name(replacement, info.taken)
    mapping = {target: new_name}
    return _apply_renames(source, mapping, info.positions), mapping


def _camel_to_snake(name: str) -> str:
    return re.sub(r"(?<=[a-z0-9])([A-Z])", r"_\1", name).lower()


def _snake_to_camel(name: str) -> str:
    head, *rest = name.split("_")
    return head + "".join(part.capitalize() for part in rest)


def convert_case(source: str) -> tuple[str, dict[str, str] | None]:
    """Convert identifier style for local variables and parameters.

    camelCase names, when any exist, all become snake_case; otherwise all
    multi-word snake_case names become camelCase. Function names and
    docstrings are untouched; conversions whose result would collide with
    an existing name are dropped.
    """
    info = _identifier_info(source)
    if info is None or not info.eligible:
        return source, None
    camels = [n for n in info.eligible if _CAMEL_RE.fullmatch(n)]
    if camels:
        wanted = {n: _camel_to_snake(n) for n in camels}
    else:
        wanted = {n: _snake_to_camel(n) for n in info.eligible if _SNAKE_RE.fullmatch(n)}

    mapping: dict[str, str] = {}
    taken = set(info.taken) | _BANNED_NAMES
    for old in info.eligible:
        if old not in wanted:
            continue
        new = wanted[old]
        if new == old or new in taken:
            continue
        mapping[old] = new
        taken.add(new)
    if not mapping:
        return source, None
    return _apply_renames(source, mapping, info.positions), mapping


# --- dispatcher -----------------------------------------------------------


def apply(
    snippet: CodeSnippet | str, kind: PerturbationKind, *, seed: int = 0
) -> tuple[str, PerturbationRecord]:
    """Apply one transformation, degrading to a no-op when unsafe.

    The output always parses and is token-equivalent to the input modulo
    the recorded rename map; anything that would violate that is rolled
    back and recorded as unchanged.
    """
    source = snippet.source_text if isinstance(snippet, CodeSnippet) else snippet
    rename_map: dict[str, str] | None = None
    if kind is PerturbationKind.IDENTITY:
        out = source
    elif kind is PerturbationKind.SPLIT_LONGEST_LINE:
        out = split_longest_line(source)
    elif kind is PerturbationKind.TABS_TO_SPACES:
        out = tabs_to_spaces(source)
    elif kind is PerturbationKind.RENAME_FREQUENT_VARIABLE:
        out, rename_map = rename_frequent_variable(source)
    elif kind is PerturbationKind.CASE_CONVERT:
        out, rename_map = convert_case(source)
    else:  # pragma: no cover - enum is closed
        raise ValueError(f"unknown perturbation kind: {kind}")

    if out != source and not _safe(source, out, rename_map):
        out, rename_map = source, None
    changed = out != source
    if not changed:
        rename_map = None
    return out, PerturbationRecord(kind=kind, seed=seed, changed=changed, rename_map=rename_map)


def _safe(original: str, perturbed: str, rename_map: dict[str, str] | None) -> bool:
    try:
        ast.parse(perturbed)
    except (SyntaxError, ValueError):
        return False
    return token_equivalent(original, perturbed, rename_map)


def perturb_snippet(
    snippet: CodeSnippet, *, seed: int, run_index: int
) -> tuple[str, PerturbationRecord]:
    """Draw and apply this run's transformation for one snippet."""
    derived = derive_seed(seed, run_index, snippet.id)
    kind = choose_kind(random.Random(derived))
    return apply(snippet, kind, seed=derived)
