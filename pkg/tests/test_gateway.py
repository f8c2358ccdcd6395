from __future__ import annotations

import json
from datetime import timedelta

import pytest
from fastapi.testclient import TestClient

from qagate.gateway import create_app
from qagate.pipeline import GeneratorConfig
from qagate.policy import format_timestamp, utcnow
from qagate.service import GatewayConfig, GatewayService

ADMIN_KEY = "test-admin-key"

POLICY_DOC = {
    "policy_id": "p1",
    "target_asset": "asset-1",
    "rules": [
        {
            "rule_id": "perm",
            "kind": "permission",
            "action": "disclose",
            "constraints": [{"left": "purpose", "op": "eq", "right": "safety-analysis"}],
        },
        {
            "rule_id": "nopii",
            "kind": "prohibition",
            "action": "disclose",
            "constraints": [{"left": "sensitivity", "op": "isAnyOf", "right": ["contains_pii"]}],
        },
        {"rule_id": "log", "kind": "duty", "action": "log", "constraints": []},
    ],
}

DOC_BODY = (
    "# Valve report\n\n"
    "The cooling valve overheated during night operations and was replaced. "
    "Maintenance flushed the loop before the next shift began. "
    "Inspection found scoring on the seat and a worn gasket in the housing. "
    "No other equipment on the line reported related faults overnight.\n\n"
    "## Contacts\n\n"
    "Reach the engineer at jane.doe@acme.example or by phone at +49 171 2345678.\n"
)


def make_service(tmp_path, admin_key=ADMIN_KEY):
    config = GatewayConfig(
        data_dir=tmp_path / "data",
        generator=GeneratorConfig(backend="mock-extractive"),
        window_tokens=30,
        overlap_tokens=4,
        admin_api_key=admin_key,
    )
    return GatewayService(config)


@pytest.fixture
def client(tmp_path, monkeypatch):
    monkeypatch.delenv("QAGATE_ADMIN_KEY", raising=False)
    service = make_service(tmp_path)
    return TestClient(create_app(service)), service


def admin(extra=None):
    headers = {"X-Admin-Key": ADMIN_KEY}
    headers.update(extra or {})
    return headers


def setup_asset_policy_agreement(client):
    http, service = client
    r = http.post("/admin/assets", json={
        "doc_id": "d1", "asset_id": "asset-1", "provider_id": "prov-1",
        "title": "Valve report", "body": DOC_BODY,
    }, headers=admin())
    assert r.status_code == 201, r.text
    r = http.post("/admin/policies", json=POLICY_DOC, headers=admin())
    assert r.status_code == 201, r.text
    r = http.post("/admin/agreements", json={
        "agreement_id": "ag-1", "principal": "consumer-1", "asset_id": "asset-1",
        "purpose": "safety-analysis", "policy_id": "p1",
        "valid_until": format_timestamp(utcnow() + timedelta(days=30)),
    }, headers=admin())
    assert r.status_code == 201, r.text


def open_session(http):
    r = http.post("/qa/sessions", json={"agreement_id": "ag-1"})
    assert r.status_code == 200, r.text
    return r.json()


class TestAuth:
    def test_admin_without_key_401(self, client):
        http, _ = client
        r = http.post("/admin/policies", json=POLICY_DOC)
        assert r.status_code == 401
        assert r.json()["error_code"] == "missing-admin-key"

    def test_admin_with_wrong_key_403(self, client):
        http, _ = client
        r = http.post("/admin/policies", json=POLICY_DOC, headers={"X-Admin-Key": "nope"})
        assert r.status_code == 403

    def test_ask_without_token_401(self, client):
        setup_asset_policy_agreement(client)
        http, _ = client
        session = open_session(http)
        r = http.post(f"/qa/sessions/{session['session_id']}/ask", json={"question": "q"})
        assert r.status_code == 401

    def test_ask_with_wrong_token_403(self, client):
        setup_asset_policy_agreement(client)
        http, _ = client
        session = open_session(http)
        r = http.post(
            f"/qa/sessions/{session['session_id']}/ask",
            json={"question": "q"},
            headers={"Authorization": "Bearer " + "00" * 16},
        )
        assert r.status_code == 403


class TestQAFlow:
    def test_allowed_question_answered(self, client):
        setup_asset_policy_agreement(client)
        http, _ = client
        session = open_session(http)
        r = http.post(
            f"/qa/sessions/{session['session_id']}/ask",
            json={"question": "Why did the cooling valve overheat during night operations?"},
            headers={"Authorization": f"Bearer {session['token']}"},
        )
        assert r.status_code == 200
        body = r.json()
        assert body["kind"] == "answered"
        assert body["citations"]
        assert body["trace_id"]

    def test_prohibited_question_refused_200(self, client):
        setup_asset_policy_agreement(client)
        http, _ = client
        session = open_session(http)
        r = http.post(
            f"/qa/sessions/{session['session_id']}/ask",
            json={"question": "What is the email address of the engineer?"},
            headers={"Authorization": f"Bearer {session['token']}"},
        )
        assert r.status_code == 200
        body = r.json()
        assert body["kind"] == "refused"
        assert body["rule_ids"]
        assert "jane.doe@acme.example" not in body["text"]

    def test_ask_has_matching_audit_record(self, client):
        setup_asset_policy_agreement(client)
        http, _ = client
        session = open_session(http)
        r = http.post(
            f"/qa/sessions/{session['session_id']}/ask",
            json={"question": "Why did the valve overheat?"},
            headers={"Authorization": f"Bearer {session['token']}"},
        )
        trace_id = r.json()["trace_id"]
        audit = http.get("/admin/audit", params={"session_id": session["session_id"]},
                         headers=admin())
        assert audit.status_code == 200
        records = audit.json()["records"]
        assert any(rec["trace_id"] == trace_id for rec in records)

    def test_unknown_agreement_404(self, client):
        http, _ = client
        r = http.post("/qa/sessions", json={"agreement_id": "ghost"})
        assert r.status_code == 404
        assert r.json()["error_code"] == "unknown-agreement"

    def test_unknown_session_404(self, client):
        setup_asset_policy_agreement(client)
        http, _ = client
        r = http.post("/qa/sessions/ghost/ask", json={"question": "q"},
                      headers={"Authorization": "Bearer " + "00" * 16})
        assert r.status_code == 404


class TestAdminValidation:
    def test_bad_policy_document_400(self, client):
        http, _ = client
        bad = dict(POLICY_DOC)
        bad = json.loads(json.dumps(bad))
        bad["rules"][0]["action"] = "sell"
        r = http.post("/admin/policies", json=bad, headers=admin())
        assert r.status_code == 400
        assert r.json()["error_code"] == "policy-semantic"

    def test_unknown_purpose_400(self, client):
        setup_asset_policy_agreement(client)
        http, _ = client
        r = http.post("/admin/agreements", json={
            "agreement_id": "ag-2", "principal": "c", "asset_id": "asset-1",
            "purpose": "world-domination", "policy_id": "p1",
            "valid_until": format_timestamp(utcnow() + timedelta(days=1)),
        }, headers=admin())
        assert r.status_code == 400
        assert r.json()["error_code"] == "unknown-purpose"

    def test_agreement_on_unknown_asset_404(self, client):
        http, _ = client
        r = http.post("/admin/policies", json=POLICY_DOC, headers=admin())
        assert r.status_code == 201
        r = http.post("/admin/agreements", json={
            "agreement_id": "ag-2", "principal": "c", "asset_id": "ghost",
            "purpose": "safety-analysis", "policy_id": "p1",
            "valid_until": format_timestamp(utcnow() + timedelta(days=1)),
        }, headers=admin())
        assert r.status_code == 404


class TestHealthAndPersistence:
    def test_healthz_before_ingestion(self, client):
        http, _ = client
        r = http.get("/healthz")
        assert r.status_code == 200
        body = r.json()
        assert body["status"] == "ok"
        assert body["index_size"] == 0
        assert body["uptime_s"] >= 0

    def test_index_populated_after_agreement(self, client):
        setup_asset_policy_agreement(client)
        http, _ = client
        assert http.get("/healthz").json()["index_size"] > 0

    def test_restart_preserves_state(self, tmp_path, monkeypatch):
        monkeypatch.delenv("QAGATE_ADMIN_KEY", raising=False)
        service = make_service(tmp_path)
        http = TestClient(create_app(service))
        setup_asset_policy_agreement((http, service))
        session = open_session(http)
        http.post(
            f"/qa/sessions/{session['session_id']}/ask",
            json={"question": "Why did the valve overheat?"},
            headers={"Authorization": f"Bearer {session['token']}"},
        )
        index_size = http.get("/healthz").json()["index_size"]

        restarted = make_service(tmp_path)
        http2 = TestClient(create_app(restarted))
        assert http2.get("/healthz").json()["index_size"] == index_size
        # Agreements survive: a new session can be opened and asked.
        session2 = http2.post("/qa/sessions", json={"agreement_id": "ag-1"}).json()
        r = http2.post(
            f"/qa/sessions/{session2['session_id']}/ask",
            json={"question": "Why did the valve overheat?"},
            headers={"Authorization": f"Bearer {session2['token']}"},
        )
        assert r.json()["kind"] == "answered"
        # Audit trail survives too.
        audit = http2.get("/admin/audit", headers=admin()).json()
        assert len(audit["records"]) >= 2
