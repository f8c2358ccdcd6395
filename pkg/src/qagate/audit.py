"""Append-only JSONL audit trail; appending a record discharges the log duty."""

from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .errors import DutyUndischargeableError
from .policy import parse_timestamp

SCHEMA_VERSION = 1

ACTIONS = (
    "answered",
    "redacted",
    "regenerated-then-answered",
    "regenerated-then-refused",
    "refused-policy",
    "refused-screen",
    "refused-service",
)

# Stages that must carry no latency for a screen refusal.
_POST_SCREEN_STAGES = ("retrieve", "prompt", "generate", "guard")


@dataclass(frozen=True)
class AuditRecord:
    trace_id: str
    timestamp: str
    session_id: str
    agreement_id: str
    principal: str
    asset_id: str
    purpose: str
    question: str
    screen_verdict: str
    screen_patterns: tuple = ()
    retrieved_chunk_ids: tuple = ()
    excluded_count: int = 0
    generator_backend: str = ""
    guard_violation_kinds: tuple = ()
    action: str = "answered"
    stage_latencies_ms: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise ValueError(f"unknown action {self.action!r}")
        if not self.trace_id:
            raise ValueError("trace_id must be non-empty")
        if self.action == "refused-screen":
            recorded = [s for s in _POST_SCREEN_STAGES if s in self.stage_latencies_ms]
            if recorded:
                raise ValueError(
                    f"refused-screen records cannot carry latencies for {recorded}"
                )
        for stage, ms in self.stage_latencies_ms.items():
            if ms < 0:
                raise ValueError(f"negative latency for stage {stage!r}")

    def to_dict(self) -> dict:
        return {
            "v": SCHEMA_VERSION,
            "trace_id": self.trace_id,
            "timestamp": self.timestamp,
            "session_id": self.session_id,
            "agreement_id": self.agreement_id,
            "principal": self.principal,
            "asset_id": self.asset_id,
            "purpose": self.purpose,
            "question": self.question,
            "screen": {"verdict": self.screen_verdict, "patterns": list(self.screen_patterns)},
            "retrieved_chunk_ids": list(self.retrieved_chunk_ids),
            "excluded_count": self.excluded_count,
            "generator_backend": self.generator_backend,
            "guard_violation_kinds": list(self.guard_violation_kinds),
            "action": self.action,
            "stage_latencies_ms": dict(self.stage_latencies_ms),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AuditRecord":
        screen = d.get("screen", {})
        return cls(
            trace_id=d["trace_id"],
            timestamp=d["timestamp"],
            session_id=d["session_id"],
            agreement_id=d["agreement_id"],
            principal=d["principal"],
            asset_id=d["asset_id"],
            purpose=d["purpose"],
            question=d["question"],
            screen_verdict=screen.get("verdict", ""),
            screen_patterns=tuple(screen.get("patterns", ())),
            retrieved_chunk_ids=tuple(d.get("retrieved_chunk_ids", ())),
            excluded_count=d.get("excluded_count", 0),
            generator_backend=d.get("generator_backend", ""),
            guard_violation_kinds=tuple(d.get("guard_violation_kinds", ())),
            action=d["action"],
            stage_latencies_ms=dict(d.get("stage_latencies_ms", {})),
        )


@dataclass(frozen=True)
class AuditQueryResult:
    records: tuple
    corrupt_count: int


class AuditLog:
    """Single-writer JSONL log. Append failures surface as duty errors."""

    def __init__(self, path, log_question_text: bool = True, hash_salt: str = "qagate"):
        self._path = Path(path)
        self._log_question_text = log_question_text
        self._hash_salt = hash_salt
        self._lock = threading.Lock()

    @property
    def path(self) -> Path:
        return self._path

    def _effective_question(self, question: str) -> str:
        if self._log_question_text:
            return question
        digest = hashlib.sha256((self._hash_salt + question).encode("utf-8")).hexdigest()
        return f"sha256:{digest}"

    def append(self, record: AuditRecord) -> str:
        payload = record.to_dict()
        payload["question"] = self._effective_question(record.question)
        line = json.dumps(payload, ensure_ascii=False)
        try:
            with self._lock:
                with self._path.open("a", encoding="utf-8") as fh:
                    fh.write(line + "\n")
                    fh.flush()
                    os.fsync(fh.fileno())
        except OSError as exc:
            raise DutyUndischargeableError(f"audit append failed: {exc}") from exc
        return record.trace_id

    def query(
        self,
        session_id: Optional[str] = None,
        asset_id: Optional[str] = None,
        action: Optional[str] = None,
        since: Optional[str] = None,
        until: Optional[str] = None,
    ) -> AuditQueryResult:
        """Matching records in append order; corrupt lines are skipped and counted."""
        if not self._path.exists():
            return AuditQueryResult(records=(), corrupt_count=0)
        since_ts = parse_timestamp(since) if since else None
        until_ts = parse_timestamp(until) if until else None
        records = []
        corrupt = 0
        with self._path.open("r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                try:
                    d = json.loads(line)
                    record = AuditRecord.from_dict(d)
                except (json.JSONDecodeError, KeyError, ValueError, TypeError):
                    corrupt += 1
                    continue
                if session_id is not None and record.session_id != session_id:
                    continue
                if asset_id is not None and record.asset_id != asset_id:
                    continue
                if action is not None and record.action != action:
                    continue
                if since_ts or until_ts:
                    ts = parse_timestamp(record.timestamp)
                    if since_ts and ts < since_ts:
                        continue
                    if until_ts and ts > until_ts:
                        continue
                records.append(record)
        return AuditQueryResult(records=tuple(records), corrupt_count=corrupt)
