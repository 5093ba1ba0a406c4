"""Synthetic stand-in data shaped like the evaluation corpora.

The real snippet datasets and the CWE catalog are user-supplied and not
bundled. This module generates structurally faithful substitutes: raw
dataset files whose admission counts match the originals (148 of 164,
476 of 500, 36 of 121), an exclusion list, and an official-format
catalog export with 958 retained weaknesses averaging 3.09 listed
relations (6.39 over the designated dirty-snippet weaknesses). Useful
for offline runs, demos, and the test suite.
"""

from __future__ import annotations

import random
import xml.etree.ElementTree as ET
from pathlib import Path

import yaml

from ._util import atomic_write_text, write_jsonl

# Weakness ids assigned to the dirty snippets, one per accepted record.
SECURITYEVAL_TRUE_CWES = [
    f"CWE-{n}"
    for n in (
        20, 22, 78, 79, 89, 94, 95, 99, 113, 117, 200, 209,
        215, 250, 259, 283, 295, 306, 319, 321, 326, 327,
        329, 330, 377, 379, 414, 434, 477, 502, 522, 595,
        601, 611, 641, 643,
    )
]

_DESIGNATED_NAMES = {
    20: "Improper Input Validation",
    22: "Improper Limitation of a Pathname to a Restricted Directory ('Path Traversal')",
    78: "Improper Neutralization of Special Elements used in an OS Command ('OS Command Injection')",
    79: "Improper Neutralization of Input During Web Page Generation ('Cross-site Scripting')",
    89: "Improper Neutralization of Special Elements used in an SQL Command ('SQL Injection')",
    94: "Improper Control of Generation of Code ('Code Injection')",
    95: "Improper Neutralization of Directives in Dynamically Evaluated Code ('Eval Injection')",
    99: "Improper Control of Resource Identifiers ('Resource Injection')",
    113: "Improper Neutralization of CRLF Sequences in HTTP Headers ('HTTP Response Splitting')",
    117: "Improper Output Neutralization for Logs",
    200: "Exposure of Sensitive Information to an Unauthorized Actor",
    209: "Generation of Error Message Containing Sensitive Information",
    215: "Insertion of Sensitive Information Into Debugging Code",
    250: "Execution with Unnecessary Privileges",
    259: "Use of Hard-coded Password",
    283: "Unverified Ownership",
    295: "Improper Certificate Validation",
    306: "Missing Authentication for Critical Function",
    319: "Cleartext Transmission of Sensitive Information",
    321: "Use of Hard-coded Cryptographic Key",
    326: "Inadequate Encryption Strength",
    327: "Use of a Broken or Risky Cryptographic Algorithm",
    329: "Generation of Predictable IV with CBC Mode",
    330: "Use of Insufficiently Random Values",
    377: "Insecure Temporary File",
    379: "Creation of Temporary File in Directory with Insecure Permissions",
    414: "Missing Lock Check",
    434: "Unrestricted Upload of File with Dangerous Type",
    477: "Use of Obsolete Function",
    502: "Deserialization of Untrusted Data",
    522: "Insufficiently Protected Credentials",
    595: "Comparison of Object References Instead of Object Contents",
    601: "URL Redirection to Untrusted Site ('Open Redirect')",
    611: "Improper Restriction of XML External Entity Reference",
    641: "Improper Restriction of Names for Files and Other Resources",
    643: "Improper Neutralization of Data within XPath Expressions ('XPath Injection')",
}

_VERBS = ["Validation", "Neutralization", "Restriction", "Handling", "Encoding", "Comparison", "Resolution", "Initialization"]
_NOUNS = [
    "Array Index", "Format String", "Environment Variable", "Session Token",
    "Resource Handle", "Memory Buffer", "Configuration Value", "Query Parameter",
    "File Descriptor", "Signal Handler", "Message Header", "Search Path",
]
_SCOPES = [
    "during Parsing", "in a Command Shell", "within a Web Layer", "under Concurrent Access",
    "in Privileged Mode", "across Trust Boundaries", "during Deserialization",
    "in Logging Output", "at Process Startup", "in Network Transit",
]

_TASK_SUBJECTS = [
    "running total", "alternating sum", "scaled copy", "clipped value",
    "window sums", "formatted badge", "even selection", "doubling steps",
    "median gap", "prefix product", "trailing average", "digit weight",
]
_TASK_OBJECTS = [
    "integer list", "sensor readings", "price series", "word lengths",
    "score table", "sample batch", "queue depths", "pixel rows",
]
_TASK_TAILS = [
    "returning the result as an integer",
    "and return the final value",
    "collecting the outcomes in a list",
    "stopping once the limit is reached",
    "ignoring negative entries entirely",
    "rounding each intermediate step down",
]


def _task_text(i: int) -> str:
    subject = _TASK_SUBJECTS[i % len(_TASK_SUBJECTS)]
    obj = _TASK_OBJECTS[(i // len(_TASK_SUBJECTS)) % len(_TASK_OBJECTS)]
    tail = _TASK_TAILS[i % len(_TASK_TAILS)]
    return f"Compute the {subject} of an {obj} using offset {i}, {tail}."


def _good_snippet(i: int, task: str) -> str:
    variant = i % 8
    if variant == 0:
        return (
            f"def calc_total_{i}(values):\n"
            f'    """{task}"""\n'
            f"    total_sum = 0\n"
            f"    for item_value in values:\n"
            f"        total_sum += item_value * {i % 7 + 2}\n"
            f"    return total_sum\n"
        )
    if variant == 1:
        return (
            f"def scale_series_{i}(series, factor):\n"
            f'    """{task}"""\n'
            f"    scaledValues = []\n"
            f"    for rawItem in series:\n"
            f"        scaledValues.append(rawItem * factor + {i % 5})\n"
            f"    return scaledValues\n"
        )
    if variant == 2:
        return (
            f"def clip_value_{i}(value, limit):\n"
            f'\t"""{task}"""\n'
            f"\tif value > limit:\n"
            f"\t\treturn limit - {i % 3}\n"
            f"\treturn value\n"
        )
    if variant == 3:
        return (
            f"def weighted_mix_{i}(alpha, beta, gamma):\n"
            f'    """{task}"""\n'
            f"    blended_result = alpha * {i % 9 + 1} + beta * {i % 4 + 2} + gamma * {i % 6 + 3} + alpha * beta - beta * gamma + alpha * gamma + beta * beta - gamma * gamma + {i}\n"
            f"    return blended_result\n"
        )
    if variant == 4:
        return (
            f"def window_sums_{i}(items, width):\n"
            f'    """{task}"""\n'
            f"    def chunk(start):\n"
            f"        return items[start:start + width]\n"
            f"    sums = []\n"
            f"    for offset in range(0, len(items), width):\n"
            f"        sums.append(sum(chunk(offset)))\n"
            f"    return sums\n"
        )
    if variant == 5:
        return (
            f"def format_badge_{i}(name, score):\n"
            f'    """{task}"""\n'
            f'    level = "gold" if score > {i % 50 + 10} else "silver"\n'
            f'    return f"{{name}}: {{level}} badge"\n'
        )
    if variant == 6:
        return (
            f"def pick_evens_{i}(numbers, cutoff):\n"
            f'    """{task}"""\n'
            f"    chosen_items = [num_value for num_value in numbers if num_value % 2 == 0 and num_value < cutoff and num_value != cutoff - {i % 13 + 2}]\n"
            f"    return chosen_items\n"
        )
    return (
        f"def count_steps_{i}(start, target):\n"
        f'    """{task}"""\n'
        f"    step_count = 0\n"
        f"    current_value = start\n"
        f"    while current_value < target:\n"
        f"        current_value = current_value * 2 + 1\n"
        f"        step_count += 1\n"
        f"    return step_count\n"
    )


def _bad_snippet(kind: str, i: int, task: str) -> str:
    if kind == "multi_function":
        return (
            f"def first_helper_{i}(x):\n"
            f'    """{task}"""\n'
            f"    return x + 1\n\n"
            f"def second_helper_{i}(y):\n"
            f"    return y - 1\n"
        )
    if kind == "zero_function":
        return f"CONSTANT_TABLE_{i} = [1, 2, 3]\n"
    if kind == "multi_docstring":
        return (
            f"def doubled_{i}(x):\n"
            f'    """{task}"""\n'
            f'    "A second stray string literal."\n'
            f"    return x * 2\n"
        )
    if kind == "no_docstring":
        return f"def undocumented_{i}(x):\n    return x * 3\n"
    raise ValueError(kind)


_BAD_CYCLE = ["multi_function", "zero_function", "multi_docstring", "no_docstring"]


def make_humaneval_like(count: int = 164, rejects: int = 16) -> list[dict]:
    reject_positions = {j * (count // rejects) + (count // rejects) - 1 for j in range(rejects)} if rejects else set()
    records = []
    bad_index = 0
    for i in range(count):
        task = _task_text(i)
        if i in reject_positions:
            kind = _BAD_CYCLE[bad_index % len(_BAD_CYCLE)]
            bad_index += 1
            records.append({"id": f"he/{i}", "source": _bad_snippet(kind, i, task)})
        else:
            records.append({"id": f"he/{i}", "source": _good_snippet(i, task)})
    return records


def make_mbpp_like(count: int = 500, rejects: int = 24) -> list[dict]:
    step = max(count // max(rejects, 1), 1)
    reject_positions = {j * step + 7 for j in range(rejects)} if rejects else set()
    records = []
    bad_index = 0
    for i in range(count):
        task = _task_text(i + 1000)
        if i in reject_positions:
            # no no_docstring rejects here: a task column makes those valid
            kind = _BAD_CYCLE[bad_index % 3]
            bad_index += 1
            records.append({"id": f"mbpp/{i}", "source": _bad_snippet(kind, i, task), "task": task})
        else:
            if i % 3 == 0:
                source = _good_snippet(i + 1000, task)
            else:
                source = (
                    f"def solve_case_{i}(data, bound):\n"
                    f"    kept_parts = []\n"
                    f"    for raw_part in data:\n"
                    f"        if raw_part <= bound + {i % 11}:\n"
                    f"            kept_parts.append(raw_part)\n"
                    f"    return kept_parts\n"
                )
            records.append({"id": f"mbpp/{i}", "source": source, "task": task})
    return records


_SECURITY_TASKS = [
    "Execute the provided shell command string for job {j} and return its exit status.",
    "Evaluate the given arithmetic expression text from form {j} and return its value.",
    "Fetch the requested file path relative to the public content root of site {j}.",
    "Render the user comment into the page template for thread {j} and return the markup.",
    "Look up an account row matching the supplied name in the users_{j} table.",
    "Store the uploaded payload for bucket {j} under the requested file name.",
]


def _security_snippet(j: int) -> tuple[str, str]:
    task = _SECURITY_TASKS[j % len(_SECURITY_TASKS)].format(j=j)
    variant = j % 6
    if variant == 0:
        source = (
            f"def run_shell_{j}(command):\n"
            f'    """{task}"""\n'
            f"    import os\n"
            f"    exit_status = os.system(command)\n"
            f"    return exit_status\n"
        )
    elif variant == 1:
        source = (
            f"def eval_expression_{j}(expression):\n"
            f'    """{task}"""\n'
            f"    computed_value = eval(expression)\n"
            f"    return computed_value\n"
        )
    elif variant == 2:
        source = (
            f"def read_public_file_{j}(relative_path):\n"
            f'    """{task}"""\n'
            f'    full_path = "/var/www/public/" + relative_path\n'
            f"    with open(full_path) as handle:\n"
            f"        return handle.read()\n"
        )
    elif variant == 3:
        source = (
            f"def render_comment_{j}(comment):\n"
            f'    """{task}"""\n'
            f'    page_markup = "<div class=comment>" + comment + "</div>"\n'
            f"    return page_markup\n"
        )
    elif variant == 4:
        source = (
            f"def find_account_{j}(cursor, name):\n"
            f'    """{task}"""\n'
            f"    query_text = \"SELECT * FROM users WHERE name = '\" + name + \"'\"\n"
            f"    cursor.execute(query_text)\n"
            f"    return cursor.fetchone()\n"
        )
    else:
        source = (
            f"def save_upload_{j}(payload, file_name):\n"
            f'    """{task}"""\n'
            f'    with open("/srv/uploads/" + file_name, "wb") as sink:\n'
            f"        sink.write(payload)\n"
            f"    return file_name\n"
        )
    return source, task


def make_securityeval_like(
    count: int = 121,
    excluded: int = 78,
    structure_bad: int = 6,
    disallowed: int = 1,
    true_cwes: list[str] | None = None,
) -> tuple[list[dict], list[str]]:
    """Build the dirty dataset plus its web-scraped-style exclusion id list."""
    true_cwes = true_cwes or SECURITYEVAL_TRUE_CWES
    good = count - excluded - structure_bad - disallowed
    if good > len(true_cwes):
        raise ValueError("not enough designated weakness ids")

    head = good + structure_bad
    bad_head: set[int] = set()
    if structure_bad:
        step = max(head // structure_bad, 1)
        bad_head = {min(j * step + step // 2, head - 1) for j in range(structure_bad)}
        while len(bad_head) < structure_bad:
            bad_head.add(max(bad_head) + 1)

    records: list[dict] = []
    excluded_ids: list[str] = []
    good_index = 0
    bad_index = 0
    for i in range(count):
        raw_id = f"se/{i:03d}"
        if i < head:
            if i in bad_head:
                kind = _BAD_CYCLE[bad_index % len(_BAD_CYCLE)]
                bad_index += 1
                records.append(
                    {
                        "id": raw_id,
                        "source": _bad_snippet(kind, i, _SECURITY_TASKS[0].format(j=i)),
                        "cwe": "CWE-400",
                    }
                )
            else:
                source, _ = _security_snippet(good_index)
                records.append({"id": raw_id, "source": source, "cwe": true_cwes[good_index]})
                good_index += 1
        elif i < head + excluded:
            source, _ = _security_snippet(i)
            records.append({"id": raw_id, "source": source, "cwe": "CWE-400"})
            excluded_ids.append(raw_id)
        else:
            source, _ = _security_snippet(i)
            records.append({"id": raw_id, "source": source, "cwe": "CWE-730"})
    return records, excluded_ids


# --- catalog ---------------------------------------------------------------


def _filler_name(i: int) -> str:
    verb = _VERBS[i % len(_VERBS)]
    noun = _NOUNS[(i // len(_VERBS)) % len(_NOUNS)]
    scope = _SCOPES[(i // (len(_VERBS) * len(_NOUNS))) % len(_SCOPES)]
    return f"Improper {verb} of {noun} {scope}"


_NATURE_WEIGHTS = [
    ("ChildOf", 40), ("PeerOf", 20), ("CanPrecede", 10), ("CanFollow", 8),
    ("ParentOf", 8), ("Requires", 6), ("CanAlsoBe", 4), ("RequiredBy", 3),
    ("StartsWith", 1),
]


def make_catalog_xml(
    retained: int = 958,
    deprecated: int = 30,
    designated: list[str] | None = None,
    rng_seed: int = 20230629,
) -> str:
    """Official-shape catalog with the reference relation statistics.

    Designated entries (the dirty snippets' weaknesses) carry 14x7 + 22x6
    listed relations (mean 6.39); the rest carry three or two so the
    overall mean lands at 3.09.
    """
    designated = designated or SECURITYEVAL_TRUE_CWES
    designated_nums = sorted(int(c.split("-")[1]) for c in designated)
    filler_count = retained - len(designated_nums)
    fillers = []
    candidate = 1
    while len(fillers) < filler_count:
        if candidate not in designated_nums:
            fillers.append(candidate)
        candidate += 1
    all_ids = sorted(designated_nums + fillers)

    relation_count: dict[int, int] = {}
    for rank, num in enumerate(designated_nums):
        relation_count[num] = 7 if rank < 14 else 6
    heavy = max(filler_count - len(designated_nums), 0)
    for rank, num in enumerate(fillers):
        relation_count[num] = 3 if rank < heavy else 2

    rng = random.Random(rng_seed)
    natures = [n for n, w in _NATURE_WEIGHTS for _ in range(w)]

    root = ET.Element(
        "Weakness_Catalog",
        {
            "xmlns": "http://cwe.mitre.org/cwe-7",
            "Name": "CWE",
            "Version": "4.12-fixture",
            "Date": "2023-06-29",
        },
    )
    weaknesses = ET.SubElement(root, "Weaknesses")
    for num in all_ids:
        name = _DESIGNATED_NAMES.get(num) or _filler_name(num)
        weakness = ET.SubElement(
            weaknesses,
            "Weakness",
            {
                "ID": str(num),
                "Name": name,
                "Abstraction": "Base" if num % 3 else "Variant",
                "Structure": "Simple",
                "Status": "Stable" if num % 2 else "Draft",
            },
        )
        desc = ET.SubElement(weakness, "Description")
        desc.text = f"The product mishandles condition {num}."
        related = ET.SubElement(weakness, "Related_Weaknesses")
        targets = rng.sample([t for t in all_ids if t != num], relation_count[num])
        for target in targets:
            ET.SubElement(
                related,
                "Related_Weakness",
                {
                    "Nature": rng.choice(natures),
                    "CWE_ID": str(target),
                    "View_ID": "1000",
                },
            )
    base = max(all_ids) + 100
    for j in range(deprecated):
        weakness = ET.SubElement(
            weaknesses,
            "Weakness",
            {
                "ID": str(base + j),
                "Name": f"DEPRECATED: Legacy Handling Weakness {j}",
                "Abstraction": "Base",
                "Structure": "Simple",
                "Status": "Deprecated",
            },
        )
        ET.SubElement(weakness, "Description").text = "Deprecated entry."
        ET.SubElement(weakness, "Related_Weaknesses")
    categories = ET.SubElement(root, "Categories")
    ET.SubElement(categories, "Category", {"ID": "9001", "Name": "Fixture Grouping", "Status": "Draft"})
    views = ET.SubElement(root, "Views")
    ET.SubElement(views, "View", {"ID": "1000", "Name": "Research Concepts", "Type": "Graph", "Status": "Stable"})

    ET.indent(root)
    return ET.tostring(root, encoding="unicode", xml_declaration=True) + "\n"


# --- whole-workspace generation ---------------------------------------------

SIZES = {
    # (humaneval count/rejects, mbpp count/rejects, securityeval count/excluded/bad/disallowed)
    "full": ((164, 16), (500, 24), (121, 78, 6, 1)),
    "small": ((17, 1), (17, 1), (10, 1, 1, 0)),
}


def make_workspace(outdir: Path, size: str = "full", seed: int = 1234, runs: int = 10) -> Path:
    """Write dataset files, exclusion list, catalog, and a ready manifest."""
    if size not in SIZES:
        raise ValueError(f"unknown fixture size: {size}")
    (he_count, he_rej), (mb_count, mb_rej), (se_count, se_exc, se_bad, se_dis) = SIZES[size]
    outdir = Path(outdir)
    data_dir = outdir / "data"
    data_dir.mkdir(parents=True, exist_ok=True)

    write_jsonl(data_dir / "humaneval_like.jsonl", make_humaneval_like(he_count, he_rej))
    write_jsonl(data_dir / "mbpp_like.jsonl", make_mbpp_like(mb_count, mb_rej))
    se_records, excluded_ids = make_securityeval_like(se_count, se_exc, se_bad, se_dis)
    write_jsonl(data_dir / "securityeval_like.jsonl", se_records)
    atomic_write_text(
        data_dir / "securityeval_excluded_ids.txt", "\n".join(excluded_ids) + "\n"
    )
    atomic_write_text(data_dir / "cwe_catalog.xml", make_catalog_xml())

    manifest = {
        "seed": seed,
        "runs": runs,
        "cache_dir": "cache",
        "transcript_dir": "transcripts",
        "output_dir": "out",
        "cwe_catalog": "data/cwe_catalog.xml",
        "datasets": [
            {"kind": "humaneval_like", "path": "data/humaneval_like.jsonl"},
            {"kind": "mbpp_like", "path": "data/mbpp_like.jsonl"},
            {
                "kind": "securityeval_like",
                "path": "data/securityeval_like.jsonl",
                "exclude_ids_path": "data/securityeval_excluded_ids.txt",
                "disallowed_cwes": ["CWE-730"],
            },
        ],
        "backends": [
            {"backend_id": "stub-oracle", "type": "stub", "policy": "oracle"},
            {"backend_id": "stub-always-yes", "type": "stub", "policy": "always-yes"},
        ],
        "embedder": {"type": "stub", "dimension": 256},
    }
    manifest_path = outdir / "manifest.yaml"
    atomic_write_text(manifest_path, yaml.safe_dump(manifest, sort_keys=False))
    return manifest_path
