"""Contract agreements, session policy contexts, and session tokens.

Agreements stand in for the connector's contract-finalized event: creating
one validates the referenced policy, asset, and purpose, and triggers
indexing of the asset if needed. Opening a session materializes an
immutable policy context that every question in the session is evaluated
against.
"""

from __future__ import annotations

import hmac
import secrets
import uuid
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Callable, Optional, Sequence

from .errors import (
    AgreementExpiredError,
    ExpiredSessionError,
    UnknownAgreementError,
    UnknownAssetError,
    UnknownPolicyError,
    UnknownPurposeError,
    UnknownTokenError,
)
from .policy import (
    Policy,
    RuleKind,
    SessionPolicyContext,
    format_timestamp,
    parse_timestamp,
    utcnow,
)

DEFAULT_PURPOSE_TAXONOMY = ("safety-analysis", "aggregate-reporting", "maintenance-planning")
DEFAULT_SESSION_TTL_SECONDS = 3600


@dataclass(frozen=True)
class ContractAgreement:
    """A finalized contract binding principal, asset, purpose, and policy."""

    agreement_id: str
    principal: str
    asset_id: str
    purpose: str
    policy_id: str
    valid_until: datetime
    recipient_class: Optional[str] = None

    def __post_init__(self):
        if not self.purpose:
            raise ValueError("purpose must be non-empty")
        if not self.agreement_id:
            raise ValueError("agreement_id must be non-empty")

    def expired(self, now: Optional[datetime] = None) -> bool:
        return (now or utcnow()) >= self.valid_until

    def to_dict(self) -> dict:
        return {
            "agreement_id": self.agreement_id,
            "principal": self.principal,
            "asset_id": self.asset_id,
            "purpose": self.purpose,
            "policy_id": self.policy_id,
            "recipient_class": self.recipient_class,
            "valid_until": format_timestamp(self.valid_until),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ContractAgreement":
        return cls(
            agreement_id=d["agreement_id"],
            principal=d["principal"],
            asset_id=d["asset_id"],
            purpose=d["purpose"],
            policy_id=d["policy_id"],
            recipient_class=d.get("recipient_class"),
            valid_until=parse_timestamp(d["valid_until"]),
        )


@dataclass(frozen=True)
class SessionToken:
    token: str
    session_id: str
    expires_at: datetime


@dataclass(frozen=True)
class _Session:
    token: str
    session_id: str
    expires_at: datetime
    context: SessionPolicyContext


def build_context(agreement: ContractAgreement, policy: Policy) -> SessionPolicyContext:
    """Partition the policy's rules into the session tuple."""
    rules = tuple(r for r in policy.rules if r.kind is not RuleKind.DUTY)
    duties = tuple(r for r in policy.rules if r.kind is RuleKind.DUTY)
    return SessionPolicyContext(
        principal=agreement.principal,
        asset=agreement.asset_id,
        purpose=agreement.purpose,
        rules=rules,
        duties=duties,
        recipient_class=agreement.recipient_class,
        agreement_id=agreement.agreement_id,
    )


class SessionManager:
    """Stores agreements and sessions; resolves bearer tokens to contexts."""

    def __init__(
        self,
        policy_lookup: Callable[[str], Optional[Policy]],
        asset_exists: Callable[[str], bool],
        ensure_indexed: Callable[[str], None],
        purpose_taxonomy: Sequence[str] = DEFAULT_PURPOSE_TAXONOMY,
        session_ttl_seconds: int = DEFAULT_SESSION_TTL_SECONDS,
    ):
        self._policy_lookup = policy_lookup
        self._asset_exists = asset_exists
        self._ensure_indexed = ensure_indexed
        self._purpose_taxonomy = tuple(purpose_taxonomy)
        self._ttl = timedelta(seconds=session_ttl_seconds)
        self._agreements: dict = {}
        self._sessions: dict = {}

    @property
    def purpose_taxonomy(self) -> tuple:
        return self._purpose_taxonomy

    def agreements(self) -> list:
        return list(self._agreements.values())

    def get_agreement(self, agreement_id: str) -> Optional[ContractAgreement]:
        return self._agreements.get(agreement_id)

    def restore_agreement(self, agreement: ContractAgreement) -> None:
        """Reload a persisted agreement without re-triggering validation."""
        self._agreements[agreement.agreement_id] = agreement

    def create_agreement(
        self, agreement: ContractAgreement, now: Optional[datetime] = None
    ) -> str:
        """Validate and store an agreement; index its asset if needed."""
        now = now or utcnow()
        if agreement.purpose not in self._purpose_taxonomy:
            raise UnknownPurposeError(
                f"purpose {agreement.purpose!r} is not in the configured taxonomy"
            )
        if self._policy_lookup(agreement.policy_id) is None:
            raise UnknownPolicyError(f"unknown policy {agreement.policy_id!r}")
        if not self._asset_exists(agreement.asset_id):
            raise UnknownAssetError(f"unknown asset {agreement.asset_id!r}")
        if agreement.expired(now):
            raise AgreementExpiredError(
                f"agreement {agreement.agreement_id!r} is already expired"
            )
        self._agreements[agreement.agreement_id] = agreement
        self._ensure_indexed(agreement.asset_id)
        return agreement.agreement_id

    def open_session(
        self, agreement_id: str, now: Optional[datetime] = None
    ) -> SessionToken:
        now = now or utcnow()
        agreement = self._agreements.get(agreement_id)
        if agreement is None:
            raise UnknownAgreementError(f"unknown agreement {agreement_id!r}")
        if agreement.expired(now):
            raise AgreementExpiredError(f"agreement {agreement_id!r} has expired")
        policy = self._policy_lookup(agreement.policy_id)
        if policy is None:
            raise UnknownPolicyError(f"unknown policy {agreement.policy_id!r}")
        context = build_context(agreement, policy)
        expires_at = min(now + self._ttl, agreement.valid_until)
        session = _Session(
            token=secrets.token_hex(16),
            session_id=f"s-{uuid.uuid4().hex[:12]}",
            expires_at=expires_at,
            context=context,
        )
        self._sessions[session.session_id] = session
        return SessionToken(
            token=session.token, session_id=session.session_id, expires_at=expires_at
        )

    def resolve_session(
        self, token: str, now: Optional[datetime] = None
    ) -> SessionPolicyContext:
        """Context for a bearer token; comparison is constant-time per session."""
        now = now or utcnow()
        match = None
        for session in self._sessions.values():
            # Compare against every stored token so timing does not reveal
            # how close a guess came.
            if hmac.compare_digest(session.token, token) and match is None:
                match = session
        if match is None:
            raise UnknownTokenError("unknown session token")
        if now >= match.expires_at:
            raise ExpiredSessionError(f"session {match.session_id} has expired")
        return match.context

    def session_for_id(self, session_id: str) -> Optional[_Session]:
        return self._sessions.get(session_id)
