"""HTTP surface: provider-admin and consumer-QA endpoints.

Policy refusals are successful outcomes and return HTTP 200 with
kind="refused"; transport and auth problems use standard status codes
with a uniform {error_code, message, detail} body.
"""

from __future__ import annotations

import hmac
from typing import Optional

from fastapi import Depends, FastAPI, Header, Query, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .errors import (
    AgreementExpiredError,
    AssetNotIndexedError,
    DutyUndischargeableError,
    ExpiredSessionError,
    PolicySemanticError,
    PolicySyntaxError,
    QagateError,
    UnknownAgreementError,
    UnknownAssetError,
    UnknownPolicyError,
    UnknownPurposeError,
    UnknownTokenError,
)
from .policy import format_timestamp
from .service import GatewayService

_STATUS_BY_ERROR = {
    UnknownPolicyError: 404,
    UnknownAssetError: 404,
    UnknownAgreementError: 404,
    AssetNotIndexedError: 404,
    UnknownPurposeError: 400,
    AgreementExpiredError: 400,
    PolicySyntaxError: 400,
    PolicySemanticError: 400,
    UnknownTokenError: 401,
    ExpiredSessionError: 401,
    DutyUndischargeableError: 500,
}


class AssetIn(BaseModel):
    doc_id: str
    asset_id: str
    provider_id: str
    title: str = ""
    body: Optional[str] = None
    path: Optional[str] = None


class AgreementIn(BaseModel):
    agreement_id: str
    principal: str
    asset_id: str
    purpose: str
    policy_id: str
    valid_until: str
    recipient_class: Optional[str] = None


class SessionIn(BaseModel):
    agreement_id: str


class AskIn(BaseModel):
    question: str


def create_app(service: GatewayService) -> FastAPI:
    app = FastAPI(title="qagate", version="0.1.0")

    @app.exception_handler(QagateError)
    async def _qagate_error(request: Request, exc: QagateError):
        status = 500
        for klass, code in _STATUS_BY_ERROR.items():
            if isinstance(exc, klass):
                status = code
                break
        return JSONResponse(
            status_code=status,
            content={
                "error_code": exc.error_code,
                "message": str(exc),
                "detail": type(exc).__name__,
            },
        )

    def _error(status: int, code: str, message: str) -> JSONResponse:
        return JSONResponse(
            status_code=status,
            content={"error_code": code, "message": message, "detail": ""},
        )

    async def require_admin(x_admin_key: Optional[str] = Header(default=None)):
        expected = service.config.admin_api_key
        if not expected:
            return  # no key configured: open admin surface (dev mode)
        if x_admin_key is None:
            raise _AuthProblem(401, "missing-admin-key", "X-Admin-Key header required")
        if not hmac.compare_digest(x_admin_key, expected):
            raise _AuthProblem(403, "bad-admin-key", "admin key rejected")

    class _AuthProblem(Exception):
        def __init__(self, status: int, code: str, message: str):
            self.status = status
            self.code = code
            self.message = message

    @app.exception_handler(_AuthProblem)
    async def _auth_problem(request: Request, exc: _AuthProblem):
        return _error(exc.status, exc.code, exc.message)

    def _bearer_token(authorization: Optional[str]) -> str:
        if not authorization or not authorization.lower().startswith("bearer "):
            raise _AuthProblem(401, "missing-token", "bearer session token required")
        return authorization.split(" ", 1)[1].strip()

    # -- admin surface -------------------------------------------------------

    @app.post("/admin/assets", status_code=201, dependencies=[Depends(require_admin)])
    async def add_asset(asset: AssetIn):
        doc = service.add_asset(asset.model_dump())
        return {"doc_id": doc.doc_id, "asset_id": doc.asset_id}

    @app.post("/admin/policies", status_code=201, dependencies=[Depends(require_admin)])
    async def add_policy(request: Request):
        policy = service.add_policy(await request.body())
        return {"policy_id": policy.policy_id, "target_asset": policy.target_asset}

    @app.post("/admin/agreements", status_code=201, dependencies=[Depends(require_admin)])
    async def add_agreement(agreement: AgreementIn):
        created = service.create_agreement(agreement.model_dump())
        return {"agreement_id": created.agreement_id}

    @app.get("/admin/audit", dependencies=[Depends(require_admin)])
    async def audit_query(
        session_id: Optional[str] = Query(default=None),
        asset_id: Optional[str] = Query(default=None),
        action: Optional[str] = Query(default=None),
        since: Optional[str] = Query(default=None),
        until: Optional[str] = Query(default=None),
    ):
        result = service.audit.query(
            session_id=session_id, asset_id=asset_id, action=action, since=since, until=until
        )
        return {
            "records": [r.to_dict() for r in result.records],
            "corrupt_count": result.corrupt_count,
        }

    # -- QA surface ----------------------------------------------------------

    @app.post("/qa/sessions")
    async def open_session(body: SessionIn):
        token = service.open_session(body.agreement_id)
        return {
            "token": token.token,
            "session_id": token.session_id,
            "expires_at": format_timestamp(token.expires_at),
        }

    @app.post("/qa/sessions/{session_id}/ask")
    async def ask(session_id: str, body: AskIn, authorization: Optional[str] = Header(default=None)):
        token = _bearer_token(authorization)
        session = service.sessions.session_for_id(session_id)
        if session is None:
            return _error(404, "unknown-session", f"unknown session {session_id!r}")
        if not hmac.compare_digest(session.token, token):
            return _error(403, "token-mismatch", "token does not belong to this session")
        response, _trace = service.ask(token, body.question, session_id=session_id)
        payload = {"kind": response.kind, "text": response.text, "trace_id": response.trace_id}
        if response.kind == "answered":
            payload["citations"] = list(response.citations)
        else:
            payload["rule_ids"] = list(response.rule_ids)
            payload["refusal_reason"] = response.refusal_reason
        return payload

    @app.get("/healthz")
    async def healthz():
        return service.health()

    return app
