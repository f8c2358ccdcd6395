"""Gateway state: configuration, persistent stores, and request handling.

One service instance owns the document, policy, and agreement stores, the
vector index, the audit log, the session manager, and the enforcer. All
mutating admin calls persist to the data directory, so a restart with the
same directory preserves agreements, index, and audit trail.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .audit import AuditLog
from .errors import QagateError, UnknownAssetError, UnknownPolicyError
from .index import VectorIndex
from .ingest import DocumentSource, IngestConfig, ingest_asset, segment_document
from .pipeline import (
    ChunkStore,
    Enforcer,
    EnforcementFlags,
    FinalResponse,
    GeneratorConfig,
    ScreeningConfig,
    StageTrace,
)
from .policy import Policy, parse_policy, serialize_policy
from .session import (
    ContractAgreement,
    DEFAULT_PURPOSE_TAXONOMY,
    DEFAULT_SESSION_TTL_SECONDS,
    SessionManager,
    SessionToken,
)

ADMIN_KEY_ENV = "QAGATE_ADMIN_KEY"


@dataclass
class GatewayConfig:
    data_dir: Path
    host: str = "127.0.0.1"
    port: int = 8080
    purpose_taxonomy: tuple = DEFAULT_PURPOSE_TAXONOMY
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    window_tokens: int = 200
    overlap_tokens: int = 40
    gazetteer_path: Optional[str] = None
    screening_path: Optional[str] = None
    k: int = 6
    verbatim_threshold: int = 12
    attribution_min: int = 5
    admin_api_key: str = ""
    log_question_text: bool = True
    session_ttl_seconds: int = DEFAULT_SESSION_TTL_SECONDS

    def __post_init__(self):
        self.data_dir = Path(self.data_dir)
        if self.k <= 0 or self.verbatim_threshold <= 0 or self.attribution_min <= 0:
            raise ValueError("thresholds must be positive")
        env_key = os.environ.get(ADMIN_KEY_ENV)
        if env_key:
            self.admin_api_key = env_key

    @classmethod
    def from_file(cls, path) -> "GatewayConfig":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        generator = GeneratorConfig(**raw.pop("generator", {}))
        return cls(generator=generator, **raw)

    def load_gazetteer(self) -> dict:
        if not self.gazetteer_path:
            return {}
        with open(self.gazetteer_path, "r", encoding="utf-8") as fh:
            return json.load(fh)

    def load_screening(self) -> ScreeningConfig:
        if not self.screening_path:
            return ScreeningConfig()
        with open(self.screening_path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        return ScreeningConfig(
            direct_patterns=tuple((p[0], p[1]) for p in raw.get("direct_patterns", [])),
            injection_patterns=tuple((p[0], p[1]) for p in raw.get("injection_patterns", [])),
            purpose_denylists=raw.get("purpose_denylists", {}),
        )


class GatewayService:
    """Owns all stores; admin and QA entry points for HTTP and CLI."""

    def __init__(self, config: GatewayConfig):
        self.config = config
        config.data_dir.mkdir(parents=True, exist_ok=True)
        self._documents: dict = {}
        self._policies: dict = {}
        self._started = time.monotonic()

        self.ingest_cfg = IngestConfig(
            window_tokens=config.window_tokens,
            overlap_tokens=config.overlap_tokens,
            gazetteer=config.load_gazetteer(),
        )
        self.index = (
            VectorIndex.load(self._index_path)
            if self._index_path.exists()
            else VectorIndex()
        )
        self.chunk_store = ChunkStore()
        self.audit = AuditLog(
            config.data_dir / "audit.jsonl", log_question_text=config.log_question_text
        )
        self.sessions = SessionManager(
            policy_lookup=self.get_policy,
            asset_exists=self.asset_exists,
            ensure_indexed=self._ensure_indexed,
            purpose_taxonomy=config.purpose_taxonomy,
            session_ttl_seconds=config.session_ttl_seconds,
        )
        self.enforcer = Enforcer(
            index=self.index,
            chunk_store=self.chunk_store,
            audit_log=self.audit,
            ingest_cfg=self.ingest_cfg,
            generator=config.generator,
            screening=config.load_screening(),
            flags=EnforcementFlags(),
            k=config.k,
            verbatim_threshold=config.verbatim_threshold,
            attribution_min=config.attribution_min,
        )
        self._load_state()

    # -- persistence ---------------------------------------------------------

    @property
    def _index_path(self) -> Path:
        return self.config.data_dir / "index.jsonl"

    def _store_path(self, name: str) -> Path:
        return self.config.data_dir / name

    def _load_state(self) -> None:
        docs_path = self._store_path("documents.json")
        if docs_path.exists():
            for d in json.loads(docs_path.read_text(encoding="utf-8")):
                doc = DocumentSource(**d)
                self._documents[doc.doc_id] = doc
                self.chunk_store.add(segment_document(doc, self.ingest_cfg))
        policies_path = self._store_path("policies.json")
        if policies_path.exists():
            for p in json.loads(policies_path.read_text(encoding="utf-8")):
                policy = parse_policy(p)
                self._policies[policy.policy_id] = policy
        agreements_path = self._store_path("agreements.json")
        if agreements_path.exists():
            for a in json.loads(agreements_path.read_text(encoding="utf-8")):
                self.sessions.restore_agreement(ContractAgreement.from_dict(a))

    def _save_documents(self) -> None:
        payload = [
            {
                "doc_id": d.doc_id,
                "asset_id": d.asset_id,
                "provider_id": d.provider_id,
                "title": d.title,
                "body": d.body,
            }
            for d in self._documents.values()
        ]
        self._store_path("documents.json").write_text(
            json.dumps(payload, ensure_ascii=False), encoding="utf-8"
        )

    def _save_policies(self) -> None:
        payload = [serialize_policy(p) for p in self._policies.values()]
        self._store_path("policies.json").write_text(json.dumps(payload), encoding="utf-8")

    def _save_agreements(self) -> None:
        payload = [a.to_dict() for a in self.sessions.agreements()]
        self._store_path("agreements.json").write_text(json.dumps(payload), encoding="utf-8")

    # -- lookups --------------------------------------------------------------

    def get_policy(self, policy_id: str) -> Optional[Policy]:
        return self._policies.get(policy_id)

    def asset_exists(self, asset_id: str) -> bool:
        return any(d.asset_id == asset_id for d in self._documents.values())

    def documents_for_asset(self, asset_id: str) -> list:
        return [d for d in self._documents.values() if d.asset_id == asset_id]

    def policy_for_asset(self, asset_id: str) -> Optional[Policy]:
        for p in self._policies.values():
            if p.target_asset == asset_id:
                return p
        return None

    # -- admin operations ------------------------------------------------------

    def add_asset(self, entry: dict) -> DocumentSource:
        body = entry.get("body")
        if body is None and entry.get("path"):
            body = Path(entry["path"]).read_text(encoding="utf-8")
        doc = DocumentSource(
            doc_id=entry["doc_id"],
            asset_id=entry["asset_id"],
            provider_id=entry["provider_id"],
            title=entry.get("title", entry["doc_id"]),
            body=body or "",
        )
        self._documents[doc.doc_id] = doc
        self.chunk_store.remove_doc(doc.doc_id)
        self.chunk_store.add(segment_document(doc, self.ingest_cfg))
        self._save_documents()
        # Keep the index consistent when the asset is already live.
        if self.index.has_asset(doc.asset_id):
            policy = self.policy_for_asset(doc.asset_id)
            if policy is not None:
                ingest_asset(doc, policy, self.ingest_cfg, self.index)
                self.index.persist(self._index_path)
        return doc

    def add_policy(self, document) -> Policy:
        policy = parse_policy(document)
        self._policies[policy.policy_id] = policy
        self._save_policies()
        return policy

    def ingest_manifest(self, manifest_path) -> list:
        """Add every manifest document and index assets that have a policy."""
        manifest_path = Path(manifest_path)
        entries = json.loads(manifest_path.read_text(encoding="utf-8"))
        touched_assets = []
        for entry in entries:
            if entry.get("path") and not Path(entry["path"]).is_absolute():
                entry = {**entry, "path": str(manifest_path.parent / entry["path"])}
            doc = self.add_asset(entry)
            if doc.asset_id not in touched_assets:
                touched_assets.append(doc.asset_id)
        summaries = []
        for asset_id in touched_assets:
            policy = self.policy_for_asset(asset_id)
            if policy is not None:
                summaries.extend(self._index_asset(asset_id, policy))
        return summaries

    def _index_asset(self, asset_id: str, policy: Policy) -> list:
        summaries = [
            ingest_asset(doc, policy, self.ingest_cfg, self.index)
            for doc in self.documents_for_asset(asset_id)
        ]
        self.index.persist(self._index_path)
        return summaries

    def _ensure_indexed(self, asset_id: str) -> None:
        if self.index.has_asset(asset_id):
            return
        policy = self.policy_for_asset(asset_id)
        if policy is None:
            raise UnknownPolicyError(f"no stored policy targets asset {asset_id!r}")
        self._index_asset(asset_id, policy)

    def create_agreement(self, payload: dict) -> ContractAgreement:
        agreement = ContractAgreement.from_dict(payload)
        self.sessions.create_agreement(agreement)
        self._save_agreements()
        return agreement

    # -- QA operations ----------------------------------------------------------

    def open_session(self, agreement_id: str) -> SessionToken:
        return self.sessions.open_session(agreement_id)

    def ask(self, token: str, question: str, session_id: str = "") -> tuple:
        ctx = self.sessions.resolve_session(token)
        return self.enforcer.enforce_question(ctx, question, session_id=session_id)

    def ask_agreement(self, agreement_id: str, question: str) -> tuple:
        """One-shot question without a persistent session (CLI path)."""
        token = self.sessions.open_session(agreement_id)
        return self.ask(token.token, question, session_id=token.session_id)

    def health(self) -> dict:
        return {
            "status": "ok",
            "index_size": len(self.index),
            "uptime_s": round(time.monotonic() - self._started, 3),
        }
