from __future__ import annotations

import pytest

from reviewbench.corpus import CodeSnippet, filter_dataset
from reviewbench.fixtures import make_workspace
from reviewbench.manifest import RunManifest, load_manifest


def ingest_manifest(manifest: RunManifest) -> list[CodeSnippet]:
    snippets: list[CodeSnippet] = []
    for spec in manifest.datasets:
        from reviewbench.corpus import load_raw_records

        accepted, _ = filter_dataset(load_raw_records(spec.path), spec.rules())
        snippets.extend(accepted)
    return snippets


@pytest.fixture(scope="session")
def full_manifest(tmp_path_factory) -> RunManifest:
    root = tmp_path_factory.mktemp("full_ws")
    return load_manifest(make_workspace(root, size="full"))


@pytest.fixture(scope="session")
def full_corpus(full_manifest) -> list[CodeSnippet]:
    return ingest_manifest(full_manifest)


@pytest.fixture()
def small_manifest(tmp_path) -> RunManifest:
    return load_manifest(make_workspace(tmp_path / "ws", size="small"))


@pytest.fixture()
def small_corpus(small_manifest) -> list[CodeSnippet]:
    return ingest_manifest(small_manifest)
