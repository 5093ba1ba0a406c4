"""Run manifest: one YAML file wiring datasets, backends, and outputs.

Paths are resolved relative to the manifest location. Secrets never live
in the manifest; HTTP backends name the environment variable holding
their API key. The manifest hash and seed are stamped into every output
artifact so archived results stay traceable.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import yaml

from ._util import sha256_hex
from .corpus import DatasetKind, FilterRules
from .gateway import (
    BackendConfig,
    ChatBackend,
    EmbeddingBackend,
    HttpChatBackend,
    HttpEmbeddingBackend,
    StubEmbedder,
    stub_reviewer,
)


class ManifestError(ValueError):
    pass


@dataclass
class DatasetSpec:
    kind: DatasetKind
    path: Path
    exclude_ids_path: Path | None = None
    exclude_ids: tuple[str, ...] = ()
    disallowed_cwes: tuple[str, ...] = ()

    def rules(self) -> FilterRules:
        ids = set(self.exclude_ids)
        if self.exclude_ids_path is not None:
            for line in self.exclude_ids_path.read_text(encoding="utf-8").splitlines():
                line = line.strip()
                if line and not line.startswith("#"):
                    ids.add(line)
        return FilterRules(
            kind=self.kind,
            exclude_ids=frozenset(ids),
            disallowed_cwes=frozenset(self.disallowed_cwes),
        )


@dataclass
class BackendSpec:
    backend_id: str
    type: str  # "stub" or "http"
    policy: str = ""
    markers: tuple[str, ...] = ()
    endpoint: str = ""
    model: str = ""
    temperature: float | None = None
    timeout: float = 60.0
    max_in_flight: int = 4
    api_key_env: str = "REVIEWBENCH_API_KEY"

    def build(self, oracle_answers: dict | None = None) -> ChatBackend:
        if self.type == "stub":
            backend = stub_reviewer(
                self.policy, answers=oracle_answers or {}, markers=self.markers
            )
            backend.config.backend_id = self.backend_id
            return backend
        if self.type == "http":
            return HttpChatBackend(
                BackendConfig(
                    backend_id=self.backend_id,
                    endpoint=self.endpoint,
                    model=self.model,
                    temperature=self.temperature,
                    timeout=self.timeout,
                    max_in_flight=self.max_in_flight,
                    api_key_env=self.api_key_env,
                )
            )
        raise ManifestError(f"unknown backend type: {self.type}")


@dataclass
class EmbedderSpec:
    type: str = "stub"
    dimension: int = 256
    backend_id: str = "stub-embedder"
    endpoint: str = ""
    model: str = ""
    timeout: float = 60.0
    api_key_env: str = "REVIEWBENCH_API_KEY"

    def build(self) -> EmbeddingBackend:
        if self.type == "stub":
            embedder = StubEmbedder(dimension=self.dimension)
            embedder.config.backend_id = self.backend_id
            return embedder
        if self.type == "http":
            return HttpEmbeddingBackend(
                BackendConfig(
                    backend_id=self.backend_id,
                    endpoint=self.endpoint,
                    model=self.model,
                    max_new_tokens=1,
                    timeout=self.timeout,
                    api_key_env=self.api_key_env,
                )
            )
        raise ManifestError(f"unknown embedder type: {self.type}")


@dataclass
class RunManifest:
    base_dir: Path
    seed: int
    runs: int
    datasets: list[DatasetSpec]
    backends: list[BackendSpec]
    embedder: EmbedderSpec
    cwe_catalog: Path | None
    cache_dir: Path
    transcript_dir: Path
    output_dir: Path
    manifest_hash: str = ""

    @property
    def meta(self) -> dict:
        return {"manifest_hash": self.manifest_hash, "seed": self.seed}

    def backend_spec(self, backend_id: str) -> BackendSpec:
        for spec in self.backends:
            if spec.backend_id == backend_id:
                return spec
        raise ManifestError(f"backend not in manifest: {backend_id}")

    def corpus_path(self, kind: DatasetKind | None = None) -> Path:
        name = "corpus.jsonl" if kind is None else f"corpus_{kind.value}.jsonl"
        return self.output_dir / name

    def filter_report_path(self, kind: DatasetKind) -> Path:
        return self.output_dir / f"filter_report_{kind.value}.json"

    def pairs_path(self) -> Path:
        return self.output_dir / "pairs.jsonl"

    def run_report_path(self, backend_id: str) -> Path:
        return self.output_dir / f"runreport_{backend_id}.json"

    def validate(self) -> None:
        if self.runs < 1:
            raise ManifestError("runs must be >= 1")
        if not self.datasets:
            raise ManifestError("no datasets configured")
        seen = set()
        for spec in self.backends:
            if spec.backend_id in seen:
                raise ManifestError(f"duplicate backend_id: {spec.backend_id}")
            seen.add(spec.backend_id)
        for spec in self.datasets:
            if not spec.path.exists():
                raise ManifestError(f"dataset file missing: {spec.path}")
            if spec.exclude_ids_path is not None and not spec.exclude_ids_path.exists():
                raise ManifestError(f"exclusion list missing: {spec.exclude_ids_path}")
        if self.cwe_catalog is not None and not self.cwe_catalog.exists():
            raise ManifestError(f"catalog file missing: {self.cwe_catalog}")


def load_manifest(path: Path | str) -> RunManifest:
    path = Path(path)
    try:
        raw_bytes = path.read_bytes()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest: {exc}") from exc
    try:
        data = yaml.safe_load(raw_bytes)
    except yaml.YAMLError as exc:
        raise ManifestError(f"invalid manifest YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ManifestError("manifest must be a mapping")
    base = path.parent.resolve()

    def _resolve(p: str | None) -> Path | None:
        return None if p is None else (base / p).resolve()

    try:
        datasets = [
            DatasetSpec(
                kind=DatasetKind(d["kind"]),
                path=_resolve(d["path"]),
                exclude_ids_path=_resolve(d.get("exclude_ids_path")),
                exclude_ids=tuple(d.get("exclude_ids", ())),
                disallowed_cwes=tuple(d.get("disallowed_cwes", ())),
            )
            for d in data.get("datasets", [])
        ]
        backends = [
            BackendSpec(
                backend_id=b["backend_id"],
                type=b.get("type", "stub"),
                policy=b.get("policy", ""),
                markers=tuple(b.get("markers", ())),
                endpoint=b.get("endpoint", ""),
                model=b.get("model", ""),
                temperature=b.get("temperature"),
                timeout=float(b.get("timeout", 60.0)),
                max_in_flight=int(b.get("max_in_flight", 4)),
                api_key_env=b.get("api_key_env", "REVIEWBENCH_API_KEY"),
            )
            for b in data.get("backends", [])
        ]
        emb = data.get("embedder", {}) or {}
        embedder = EmbedderSpec(
            type=emb.get("type", "stub"),
            dimension=int(emb.get("dimension", 256)),
            backend_id=emb.get("backend_id", "stub-embedder"),
            endpoint=emb.get("endpoint", ""),
            model=emb.get("model", ""),
            timeout=float(emb.get("timeout", 60.0)),
            api_key_env=emb.get("api_key_env", "REVIEWBENCH_API_KEY"),
        )
        manifest = RunManifest(
            base_dir=base,
            seed=int(data["seed"]),
            runs=int(data.get("runs", 10)),
            datasets=datasets,
            backends=backends,
            embedder=embedder,
            cwe_catalog=_resolve(data.get("cwe_catalog")),
            cache_dir=_resolve(data.get("cache_dir", "cache")),
            transcript_dir=_resolve(data.get("transcript_dir", "transcripts")),
            output_dir=_resolve(data.get("output_dir", "out")),
            manifest_hash=sha256_hex(raw_bytes),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"invalid manifest: {exc}") from exc
    manifest.validate()
    return manifest
