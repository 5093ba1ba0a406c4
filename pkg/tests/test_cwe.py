from __future__ import annotations

import random

import numpy as np
import pytest

from reviewbench.corpus import cwe_number
from reviewbench.cwe import (
    CweEntry,
    CweFilter,
    CweGraph,
    EmptyCatalogError,
    RelationNature,
    UnknownIdError,
    load_catalog,
    match_description,
)
from reviewbench.fixtures import SECURITYEVAL_TRUE_CWES
from reviewbench.gateway import StubEmbedder
from reviewbench.pairing import EmbeddingVector

SMALL_XML = """<?xml version="1.0"?>
<Weakness_Catalog xmlns="http://cwe.mitre.org/cwe-7" Name="CWE" Version="4.12" Date="2023-06-29">
  <Weaknesses>
    <Weakness ID="79" Name="Improper Neutralization of Input During Web Page Generation" Abstraction="Base" Structure="Simple" Status="Stable">
      <Description>XSS.</Description>
      <Related_Weaknesses>
        <Related_Weakness Nature="ChildOf" CWE_ID="74" View_ID="1000" Ordinal="Primary"/>
        <Related_Weakness Nature="PeerOf" CWE_ID="352" View_ID="1000"/>
      </Related_Weaknesses>
    </Weakness>
    <Weakness ID="74" Name="Improper Neutralization of Special Elements in Output" Abstraction="Class" Structure="Simple" Status="Stable">
      <Description>Injection.</Description>
      <Related_Weaknesses/>
    </Weakness>
    <Weakness ID="352" Name="Cross-Site Request Forgery" Abstraction="Compound" Structure="Composite" Status="Stable">
      <Description>CSRF.</Description>
      <Related_Weaknesses>
        <Related_Weakness Nature="Requires" CWE_ID="346" View_ID="1000"/>
      </Related_Weaknesses>
    </Weakness>
    <Weakness ID="599" Name="DEPRECATED: Missing Validation of OpenSSL Certificate" Abstraction="Variant" Structure="Simple" Status="Deprecated">
      <Description>Old.</Description>
    </Weakness>
  </Weaknesses>
  <Categories>
    <Category ID="137" Name="Data Neutralization Issues" Status="Draft"/>
  </Categories>
  <Views>
    <View ID="1000" Name="Research Concepts" Type="Graph" Status="Stable"/>
  </Views>
</Weakness_Catalog>
"""

SMALL_CSV = (
    "CWE-ID,Name,Weakness Abstraction,Status,Description,Related Weaknesses\n"
    '79,Improper Neutralization of Input During Web Page Generation,Base,Stable,XSS.,'
    '"::NATURE:ChildOf:CWE ID:74:VIEW ID:1000:ORDINAL:Primary::NATURE:ChildOf:CWE ID:74:VIEW ID:699::NATURE:PeerOf:CWE ID:352:VIEW ID:1000::"\n'
    '74,"Improper Neutralization of Special Elements in Output, Used Downstream",Class,Stable,Injection.,\n'
    '352,Cross-Site Request Forgery,Compound,Stable,CSRF.,"::NATURE:Requires:CWE ID:346:VIEW ID:1000::"\n'
    "599,DEPRECATED: Missing Validation of OpenSSL Certificate,Variant,Deprecated,Old.,\n"
)


@pytest.fixture()
def xml_path(tmp_path):
    path = tmp_path / "cwec.xml"
    path.write_text(SMALL_XML, encoding="utf-8")
    return path


@pytest.fixture()
def csv_path(tmp_path):
    path = tmp_path / "cwec.csv"
    path.write_text(SMALL_CSV, encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def fixture_graph(full_manifest):
    return load_catalog(full_manifest.cwe_catalog)


def test_xml_parse_retains_weaknesses_only(xml_path):
    graph = load_catalog(xml_path)
    assert set(graph.entries) == {"CWE-79", "CWE-74", "CWE-352"}
    entry = graph.entries["CWE-79"]
    assert entry.abstraction == "Base"
    assert (RelationNature.CHILD_OF, "CWE-74") in entry.relations
    assert (RelationNature.PEER_OF, "CWE-352") in entry.relations


def test_csv_parse_matches_xml_and_dedupes_views(xml_path, csv_path):
    from_xml = load_catalog(xml_path)
    from_csv = load_catalog(csv_path)
    assert set(from_csv.entries) == set(from_xml.entries)
    # the duplicated ChildOf->74 across views collapses to one relation
    assert from_csv.entries["CWE-79"].relations == from_xml.entries["CWE-79"].relations
    # quoted names containing commas survive
    assert from_csv.entries["CWE-74"].name.endswith("Used Downstream")


def test_deprecated_can_be_included_explicitly(xml_path):
    graph = load_catalog(xml_path, CweFilter(include_deprecated=True))
    assert "CWE-599" in graph.entries


def test_disallowed_filter_monotone(xml_path):
    baseline = load_catalog(xml_path).stats().retained
    for banned in ("CWE-79", "CWE-74", "CWE-352"):
        got = load_catalog(xml_path, CweFilter(disallowed_ids=frozenset({banned})))
        assert got.stats().retained == baseline - 1


def test_empty_catalog_raises(tmp_path):
    path = tmp_path / "empty.xml"
    path.write_text(
        '<Weakness_Catalog xmlns="http://cwe.mitre.org/cwe-7"><Weaknesses/></Weakness_Catalog>',
        encoding="utf-8",
    )
    with pytest.raises(EmptyCatalogError):
        load_catalog(path)


def test_immediate_relations_definition(xml_path):
    graph = load_catalog(xml_path)
    assert graph.immediate_relations("CWE-79") == {"CWE-74", "CWE-352"}
    # 74 lists nothing itself but is listed by 79
    assert graph.immediate_relations("CWE-74") == {"CWE-79"}
    # dangling target (346 is not retained) still appears one-hop from 352
    assert graph.immediate_relations("CWE-352") == {"CWE-79", "CWE-346"}
    assert "CWE-346" in graph.dangling
    with pytest.raises(UnknownIdError):
        graph.immediate_relations("CWE-999")


def test_no_relations_yields_empty_set():
    graph = CweGraph([CweEntry("CWE-1", "Lonely", "Base", "Stable", ())])
    assert graph.immediate_relations("CWE-1") == set()


def test_symmetry_over_full_fixture_catalog(fixture_graph):
    for cid in fixture_graph.entries:
        for neighbor in fixture_graph.immediate_relations(cid):
            if neighbor in fixture_graph.entries:
                assert cid in fixture_graph.immediate_relations(neighbor)


def test_fixture_catalog_statistics(fixture_graph):
    stats = fixture_graph.stats()
    assert abs(stats.retained - 958) <= 30
    assert abs(stats.mean_relations - 3.09) <= 0.25
    dirty_mean = fixture_graph.mean_relations_for(SECURITYEVAL_TRUE_CWES)
    assert abs(dirty_mean - 6.39) <= 0.25


# --- description matching ------------------------------------------------------


def _lookup_embedder(table: dict[str, tuple[float, ...]]):
    def embed(text: str) -> EmbeddingVector:
        return EmbeddingVector(table[text])

    return embed


def _mini_graph() -> CweGraph:
    return CweGraph(
        [
            CweEntry("CWE-1", "alpha weakness", "Base", "Stable", ((RelationNature.CHILD_OF, "CWE-2"),)),
            CweEntry("CWE-2", "beta weakness", "Class", "Stable", ()),
            CweEntry("CWE-3", "gamma weakness", "Base", "Stable", ()),
        ]
    )


def test_match_identity_description():
    graph = _mini_graph()
    table = {
        "alpha weakness": (1.0, 0.0, 0.0),
        "beta weakness": (0.0, 1.0, 0.0),
        "gamma weakness": (0.0, 0.0, 1.0),
        "exact alpha text": (1.0, 0.0, 0.0),
    }
    embed = _lookup_embedder(table)
    graph.embed_names(embed)
    result = match_description("exact alpha text", graph, embed, true_cwe="CWE-1")
    assert result.nearest_id == "CWE-1"
    assert result.is_match is True


def test_match_via_immediate_parent():
    graph = _mini_graph()
    table = {
        "alpha weakness": (1.0, 0.0, 0.0),
        "beta weakness": (0.0, 1.0, 0.0),
        "gamma weakness": (0.0, 0.0, 1.0),
        "sounds like beta": (0.1, 1.0, 0.0),
    }
    embed = _lookup_embedder(table)
    graph.embed_names(embed)
    # nearest is the parent (CWE-2) of the true weakness -> still a match
    result = match_description("sounds like beta", graph, embed, true_cwe="CWE-1")
    assert result.nearest_id == "CWE-2"
    assert result.is_match is True


def test_match_unrelated_is_false():
    graph = _mini_graph()
    table = {
        "alpha weakness": (1.0, 0.0, 0.0),
        "beta weakness": (0.0, 1.0, 0.0),
        "gamma weakness": (0.0, 0.0, 1.0),
        "gamma-ish": (0.0, 0.1, 1.0),
    }
    embed = _lookup_embedder(table)
    graph.embed_names(embed)
    result = match_description("gamma-ish", graph, embed, true_cwe="CWE-1")
    assert result.nearest_id == "CWE-3"
    assert result.is_match is False


def test_tie_breaks_to_smallest_cwe_number():
    graph = CweGraph(
        [
            CweEntry("CWE-10", "twin name", "Base", "Stable", ()),
            CweEntry("CWE-2", "twin name", "Base", "Stable", ()),
        ]
    )
    embed = StubEmbedder(dimension=32).embed
    graph.embed_names(embed)
    result = match_description("twin name", graph, embed)
    assert result.nearest_id == "CWE-2"


def test_match_requires_embeddings():
    graph = _mini_graph()
    with pytest.raises(ValueError):
        match_description("text", graph, StubEmbedder().embed, true_cwe="CWE-1")


def test_match_unknown_true_cwe():
    embed = StubEmbedder(dimension=16).embed
    graph = _mini_graph()
    graph.embed_names(embed)
    with pytest.raises(UnknownIdError):
        match_description("text", graph, embed, true_cwe="CWE-31337")


def test_brute_force_equivalence_on_subcatalog(fixture_graph):
    rng = random.Random(99)
    sub_ids = sorted(rng.sample(sorted(fixture_graph.entries), 50), key=cwe_number)
    graph = CweGraph([fixture_graph.entries[cid] for cid in sub_ids])
    embed = StubEmbedder(dimension=64).embed
    graph.embed_names(embed)

    vocabulary = [
        word for cid in sub_ids for word in fixture_graph.entries[cid].name.split()
    ]
    for _ in range(100):
        description = " ".join(rng.choice(vocabulary) for _ in range(rng.randint(2, 8)))
        got = match_description(description, graph, embed)

        query = embed(description).as_array()
        best_id, best_sim = None, -float("inf")
        for cid in sorted(graph.entries, key=cwe_number):
            vec = graph.name_embeddings[cid].as_array()
            sim = float(np.dot(query, vec) / (np.linalg.norm(query) * np.linalg.norm(vec)))
            if sim > best_sim:
                best_id, best_sim = cid, sim
        assert got.nearest_id == best_id
        assert got.similarity == best_sim


def test_graph_roundtrip(tmp_path, xml_path):
    graph = load_catalog(xml_path)
    path = tmp_path / "graph.json"
    graph.save(path)
    reloaded = CweGraph.load(path)
    assert set(reloaded.entries) == set(graph.entries)
    assert reloaded.entries["CWE-79"].relations == graph.entries["CWE-79"].relations
