from __future__ import annotations

import ast
import io
import tokenize
from collections import Counter

import pytest

from reviewbench.perturb import (
    PerturbationKind,
    apply,
    choose_kind,
    convert_case,
    derive_seed,
    normalized_tokens,
    perturb_snippet,
    rename_frequent_variable,
    rng_for,
    split_longest_line,
    tabs_to_spaces,
    token_equivalent,
)


def _name_tokens(source: str) -> list[str]:
    """Independent identifier-occurrence oracle: NAME tokens not after a dot."""
    out = []
    prev = None
    for tok in tokenize.generate_tokens(io.StringIO(source).readline):
        if tok.type == tokenize.NAME and not (prev and prev.type == tokenize.OP and prev.string == "."):
            out.append(tok.string)
        if tok.type not in (tokenize.NL, tokenize.NEWLINE, tokenize.INDENT, tokenize.DEDENT):
            prev = tok
    return out


# --- kind selection ---------------------------------------------------------


def test_choose_kind_deterministic():
    kinds = {choose_kind(rng_for(7, 3, "snip")) for _ in range(5)}
    assert len(kinds) == 1


def test_choose_kind_keying_is_independent():
    draws_a = [choose_kind(rng_for(7, run, "a")) for run in range(30)]
    draws_b = [choose_kind(rng_for(7, run, "b")) for run in range(30)]
    assert draws_a != draws_b  # astronomically unlikely to collide if keyed


def test_choose_kind_uniform_frequencies():
    counts = Counter(choose_kind(rng_for(42, 0, f"s{i}")) for i in range(10_000))
    assert set(counts) == set(PerturbationKind)
    for kind in PerturbationKind:
        assert 0.18 <= counts[kind] / 10_000 <= 0.22


def test_derive_seed_stable_across_processes():
    assert derive_seed(1, 2, "x") == derive_seed(1, 2, "x")
    assert derive_seed(1, 2, "x") != derive_seed(1, 3, "x")


# --- identity ----------------------------------------------------------------


def test_identity_fixed_point():
    src = "def f(x):\n    return x\n"
    out, record = apply(src, PerturbationKind.IDENTITY)
    assert out == src
    assert record.kind is PerturbationKind.IDENTITY
    assert not record.changed
    assert record.rename_map is None


# --- tabs to spaces ------------------------------------------------------------


def test_tabs_direct_substitution():
    assert tabs_to_spaces("\treturn x") == "    return x"


def test_tabs_inside_strings_untouched():
    src = 'def f():\n\treturn "a\tb"\n'
    out = tabs_to_spaces(src)
    assert out == 'def f():\n    return "a\tb"\n'


def test_tabs_noop_without_tabs():
    src = "def f():\n    return 1\n"
    assert tabs_to_spaces(src) == src


# --- split longest line ---------------------------------------------------------


def test_split_long_assignment_token_equivalent():
    src = (
        "def f(a, b):\n"
        "    result_value = a * 11 + b * 13 + a * b - a + b + a * a - b * b + 42\n"
        "    return result_value\n"
    )
    out = split_longest_line(src)
    assert out != src
    assert len(out.split("\n")) == len(src.split("\n")) + 1
    assert token_equivalent(src, out)
    ast.parse(out)


def test_split_inside_brackets_uses_plain_newline():
    src = (
        "def f(items):\n"
        "    chosen = [value for value in items if value % 2 == 0 and value > 10 and value < 99]\n"
        "    return chosen\n"
    )
    out = split_longest_line(src)
    assert out != src
    assert "\\" not in out
    assert token_equivalent(src, out)


def test_split_no_whitespace_line_unchanged():
    src = "x=(1+2+3+4+5+6+7+8+9+10+11+12+13+14+15+16+17+18)\ny = 1\n"
    assert split_longest_line(src) == src


def test_split_docstring_longest_line_unchanged():
    src = (
        "def f():\n"
        '    """A very long docstring line that is much longer than any code in here."""\n'
        "    return 1\n"
    )
    assert split_longest_line(src) == src


def test_split_tie_prefers_earlier_line():
    src = "aa = 1 + 2 + 3 + 40\nbb = 1 + 2 + 3 + 40\n"
    out = split_longest_line(src)
    lines = out.split("\n")
    assert lines[0] != "aa = 1 + 2 + 3 + 40"
    assert "bb = 1 + 2 + 3 + 40" in lines


# --- rename frequent variable ----------------------------------------------------


def test_rename_most_frequent_local():
    src = (
        "def f(values):\n"
        '    """Keep the running total."""\n'
        "    result = 0\n"
        "    for item in values:\n"
        "        result = result + item\n"
        "    return result\n"
    )
    before = Counter(_name_tokens(src))
    assert before["result"] == 4
    out, mapping = rename_frequent_variable(src)
    assert mapping == {"result": "xxxx"}
    after = Counter(_name_tokens(out))
    assert after["xxxx"] == 4
    assert "result" not in after
    assert '"""Keep the running total."""' in out


def test_rename_tie_breaks_to_first_occurrence():
    src = "def f(aaa, bbb):\n    aaa = aaa + 1\n    bbb = bbb + 1\n    return aaa + bbb\n"
    # both names occur 4 times; aaa appears first
    out, mapping = rename_frequent_variable(src)
    assert mapping == {"aaa": "xxxx"}


def test_rename_collision_appends_suffix():
    src = "def f(result):\n    xxxx = 1\n    result = result + xxxx\n    return result\n"
    out, mapping = rename_frequent_variable(src)
    assert mapping == {"result": "xxxx_1"}
    assert token_equivalent(src, out, mapping)


def test_rename_never_touches_function_name_or_attributes():
    src = (
        "def result(box):\n"
        "    box.result = box.result + 1\n"
        "    box = box\n"
        "    return box.result\n"
    )
    out, mapping = rename_frequent_variable(src)
    assert mapping == {"box": "xxxx"}
    assert "def result(" in out
    assert ".result" in out
    assert token_equivalent(src, out, mapping)


def test_rename_without_eligible_names_is_noop():
    src = "def f():\n    return len([1, 2])\n"
    out, mapping = rename_frequent_variable(src)
    assert out == src and mapping is None


def test_rename_handles_non_ascii_text_on_same_line():
    src = (
        "def f(count):\n"
        '    label = "héllo wörld"; count = count + 1\n'
        "    return count, label\n"
    )
    out, mapping = rename_frequent_variable(src)
    assert mapping == {"count": "xxxx"}
    assert '"héllo wörld"' in out
    assert token_equivalent(src, out, mapping)
    ast.parse(out)


def test_rename_skips_names_used_in_fstrings():
    src = 'def f(total):\n    total = total + 1\n    return f"total={total}"\n'
    out, mapping = rename_frequent_variable(src)
    assert out == src and mapping is None


# --- case conversion --------------------------------------------------------------


def test_camel_to_snake():
    src = "def f(myVar):\n    otherValue = myVar + 1\n    return otherValue\n"
    out, mapping = convert_case(src)
    assert mapping == {"myVar": "my_var", "otherValue": "other_value"}
    assert "my_var" in out and "myVar" not in out
    assert token_equivalent(src, out, mapping)


def test_snake_to_camel_when_no_camels():
    src = "def f(my_var):\n    next_step = my_var + 1\n    return next_step\n"
    out, mapping = convert_case(src)
    assert mapping == {"my_var": "myVar", "next_step": "nextStep"}
    assert token_equivalent(src, out, mapping)


def test_single_word_identifiers_unchanged():
    src = "def f(x):\n    y = x + 1\n    return y\n"
    out, mapping = convert_case(src)
    assert out == src and mapping is None


def test_case_convert_leaves_function_name_and_docstring():
    src = (
        "def snake_named_fn(someArg):\n"
        '    """Docstring mentions someArg and snake_case."""\n'
        "    return someArg\n"
    )
    out, mapping = convert_case(src)
    assert mapping == {"someArg": "some_arg"}
    assert "def snake_named_fn(" in out
    assert "Docstring mentions someArg and snake_case." in out


def test_case_convert_drops_colliding_targets():
    # myVar would become my_var, which already exists: nothing safe to do
    src = "def f(my_var, myVar):\n    return my_var + myVar\n"
    out, mapping = convert_case(src)
    assert out == src and mapping is None


# --- apply/perturb_snippet ---------------------------------------------------------


def test_apply_records_chosen_kind_and_change_flag():
    src = "def f():\n    return 1\n"  # nothing for tabs to do
    out, record = apply(src, PerturbationKind.TABS_TO_SPACES, seed=5)
    assert out == src
    assert record.kind is PerturbationKind.TABS_TO_SPACES
    assert record.changed is False
    assert record.seed == 5


def test_perturb_snippet_deterministic_bytes(full_corpus):
    snippet = full_corpus[0]
    a = perturb_snippet(snippet, seed=9, run_index=4)
    b = perturb_snippet(snippet, seed=9, run_index=4)
    assert a == b


@pytest.mark.parametrize("kind", list(PerturbationKind))
def test_all_kinds_safe_on_corpus_sample(full_corpus, kind):
    for snippet in full_corpus[::37]:
        out, record = apply(snippet, kind, seed=1)
        ast.parse(out)
        assert token_equivalent(snippet.source_text, out, record.rename_map)
        if record.rename_map is not None:
            assert record.kind in (
                PerturbationKind.RENAME_FREQUENT_VARIABLE,
                PerturbationKind.CASE_CONVERT,
            )
            assert record.changed


def test_docstrings_never_edited_on_sample(full_corpus):
    for snippet in full_corpus[::53]:
        for kind in PerturbationKind:
            out, _ = apply(snippet, kind, seed=3)
            before = ast.get_docstring(ast.parse(snippet.source_text).body[0])
            after = ast.get_docstring(ast.parse(out).body[0])
            assert before == after


def test_normalized_tokens_ignores_comments_and_blank_lines():
    a = "def f():\n    return 1\n"
    b = "def f():\n\n    # note\n    return 1\n"
    assert normalized_tokens(a) == normalized_tokens(b)
