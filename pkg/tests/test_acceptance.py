"""Acceptance suite: one test per release criterion, printed pass/fail.

Run with `pytest tests/test_acceptance.py -v -s` to see one line per
criterion. Tolerances and thresholds are pinned here, not configurable.
"""

from __future__ import annotations

import itertools
import json
import random
import time
from datetime import timedelta

import numpy as np
import pytest
from fastapi.testclient import TestClient

from qagate.evalkit import generate_corpus, generate_queries
from qagate.evalkit.metrics import metric_exact_match, metric_token_f1
from qagate.evalkit.runner import (
    Scenario,
    VARIANTS,
    default_scenario_dict,
    run_eval,
)
from qagate.gateway import create_app
from qagate.guard import detect_entities, find_verbatim_runs
from qagate.index import EMBED_DIM, IndexEntry, MetadataFilter, VectorIndex
from qagate.ingest import ChunkMetadata, IngestConfig, TagSpan
from qagate.pipeline import GeneratorConfig
from qagate.policy import (
    Constraint,
    LeftOperand,
    Operator,
    RuleKind,
    SensitivityTag,
    evaluate_disclosure,
    format_timestamp,
    prohibited_sensitivity_tags,
    utcnow,
)
from qagate.service import GatewayConfig, GatewayService

from conftest import NOW, make_ctx, make_rule
from oracles import oracle_disclosure, oracle_knn, oracle_verbatim_runs
from test_policy import random_case, random_constraint

SEED = 7
CORPUS_SIZE = 20


def _report(name: str, ok: bool, detail: str = ""):
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {name}: {status}" + (f" ({detail})" if detail else ""))
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------------------
# Shared experiment fixtures (run once per session)
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def security_report(tmp_path_factory):
    scenario = Scenario.from_dict(
        default_scenario_dict(seed=SEED, corpus_size=CORPUS_SIZE, generator="mock-leaky")
    )
    out = tmp_path_factory.mktemp("security")
    t0 = time.perf_counter()
    report = run_eval(scenario, out)
    return report, time.perf_counter() - t0, out, scenario


@pytest.fixture(scope="module")
def utility_report(tmp_path_factory):
    scenario_dict = default_scenario_dict(
        seed=SEED, corpus_size=CORPUS_SIZE, generator="mock-extractive"
    )
    scenario_dict["variants"] = ["full"]
    scenario = Scenario.from_dict(scenario_dict)
    out = tmp_path_factory.mktemp("utility")
    report = run_eval(scenario, out)
    return report, out, scenario


# ---------------------------------------------------------------------------
# Criterion 1: PDP oracle equivalence on an enumerated space
# ---------------------------------------------------------------------------


def _enumerated_policy_space():
    """Deterministic enumeration of (rules, purpose, recipient, tags) combos."""
    constraint_pool = [
        None,
        Constraint(LeftOperand.PURPOSE, Operator.EQ, "safety-analysis"),
        Constraint(LeftOperand.PURPOSE, Operator.NEQ, "safety-analysis"),
        Constraint(LeftOperand.RECIPIENT, Operator.EQ, "tier1"),
        Constraint(LeftOperand.SENSITIVITY, Operator.IS_ANY_OF, ("contains_pii",)),
        Constraint(LeftOperand.SENSITIVITY, Operator.IS_NONE_OF, ("pii.email",)),
        Constraint(LeftOperand.DATETIME, Operator.BEFORE, "2030-01-01T00:00:00Z"),
    ]
    rule_templates = []
    for kind in (RuleKind.PERMISSION, RuleKind.PROHIBITION):
        for c in constraint_pool:
            rule_templates.append((kind, () if c is None else (c,)))

    tag_sets = [
        frozenset(),
        frozenset({SensitivityTag.PII_EMAIL, SensitivityTag.CONTAINS_PII}),
        frozenset({SensitivityTag.ID_ORG}),
        frozenset({SensitivityTag.CONTAINS_PII}),
        frozenset({SensitivityTag.PII_EMAIL, SensitivityTag.ID_ORG,
                   SensitivityTag.CONTAINS_PII}),
    ]
    purposes = ["safety-analysis", "marketing"]
    recipients = [None, "tier1", "tier2"]

    # All one-, two-, and three-rule policies over the template pool, each
    # crossed with every ctx and tag combination.
    rule_sets = [(a,) for a in rule_templates]
    rule_sets += list(itertools.combinations(rule_templates, 2))
    rule_sets += list(itertools.combinations(rule_templates, 3))
    for rules in rule_sets:
        built = tuple(
            make_rule(f"r{i}", kind, constraints=constraints)
            for i, (kind, constraints) in enumerate(rules)
        )
        for purpose in purposes:
            for recipient in recipients:
                for tags in tag_sets:
                    yield built, purpose, recipient, tags


def test_pdp_oracle_equivalence():
    t0 = time.perf_counter()
    checked = 0
    mismatches = 0
    for rules, purpose, recipient, tags in _enumerated_policy_space():
        ctx = make_ctx(rules=rules, purpose=purpose, recipient_class=recipient)
        got = evaluate_disclosure(ctx, tags, NOW).outcome.value
        expected = oracle_disclosure(ctx, tags, NOW)
        if got != expected:
            mismatches += 1
        checked += 1
    elapsed = time.perf_counter() - t0
    _report(
        "pdp-oracle-equivalence",
        checked >= 10_000 and mismatches == 0 and elapsed < 30.0,
        f"{checked} combinations, {mismatches} mismatches, {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# Criterion 2: default-deny and prohibition monotonicity over random policies
# ---------------------------------------------------------------------------


def test_default_deny_randomized_policies():
    from qagate.policy import TriState, rule_applies

    failures = 0
    for seed in range(1000):
        ctx, tags = random_case(seed)
        applicable = [
            r for r in ctx.disclose_permissions()
            if rule_applies(r, ctx, tags, NOW) is TriState.TRUE
        ]
        decision = evaluate_disclosure(ctx, tags, NOW)
        if not applicable and decision.allowed:
            failures += 1
    _report("default-deny-randomized", failures == 0, f"1000 policies, {failures} failures")


def test_prohibition_monotonicity_randomized_policies():
    failures = 0
    for seed in range(1000):
        rnd = random.Random(seed * 31 + 1)
        ctx, tags = random_case(seed)
        before = evaluate_disclosure(ctx, tags, NOW)
        extra = make_rule(
            "added-prohibition", RuleKind.PROHIBITION,
            constraints=[random_constraint(rnd) for _ in range(rnd.randint(0, 2))],
        )
        augmented = make_ctx(
            rules=list(ctx.rules) + [extra],
            purpose=ctx.purpose,
            recipient_class=ctx.recipient_class,
        )
        after = evaluate_disclosure(augmented, tags, NOW)
        if not before.allowed and after.allowed:
            failures += 1
    _report(
        "prohibition-monotonicity-randomized", failures == 0,
        f"1000 policies, {failures} deny-to-allow flips",
    )


# ---------------------------------------------------------------------------
# Criterion 3: filtered kNN equals brute force
# ---------------------------------------------------------------------------

_KNN_TAGS = [
    SensitivityTag.PII_EMAIL,
    SensitivityTag.CONTAINS_PII,
    SensitivityTag.ID_ORG,
    SensitivityTag.NARRATIVE_INCIDENT,
]


def _random_index(rnd: random.Random, size: int) -> VectorIndex:
    entries = []
    for i in range(size):
        vec = np.array([rnd.random() for _ in range(EMBED_DIM)])
        vec /= np.linalg.norm(vec)
        tags = frozenset(rnd.sample(_KNN_TAGS, rnd.randint(0, 2)))
        metadata = ChunkMetadata(
            asset_id=f"asset-{rnd.randrange(3)}",
            doc_id=f"doc-{rnd.randrange(8)}",
            provider_id="prov",
            section_heading=None,
            char_range=(0, 4),
            sensitivity_tags=tags,
            tag_spans=tuple(
                TagSpan(t, 0, 1) for t in tags if t is not SensitivityTag.CONTAINS_PII
            ),
        )
        entries.append(
            IndexEntry(chunk_id=f"c{i:04d}", vector=vec, metadata=metadata, policy_id="p")
        )
    index = VectorIndex()
    index.upsert(entries)
    return index


def test_filtered_knn_brute_force():
    rnd = random.Random(2024)
    trials = 0
    mismatches = 0
    sizes = [20, 60, 120, 250, 400, 700, 1000, 35, 80, 150]
    for size in sizes:
        index = _random_index(rnd, size)
        entries = index.entries()
        for _ in range(50):
            query = np.array([rnd.random() for _ in range(EMBED_DIM)])
            query /= np.linalg.norm(query)
            filt = MetadataFilter(
                require_asset=rnd.choice([None, "asset-0", "asset-1", "asset-2"]),
                exclude_tags=frozenset(rnd.sample(_KNN_TAGS, rnd.randint(0, 2))),
                exclude_chunk_ids=frozenset(
                    e.chunk_id for e in rnd.sample(entries, rnd.randint(0, min(10, size)))
                ),
            )
            k = rnd.randint(1, 25)
            got = index.filtered_knn(query, filt, k)
            expected = oracle_knn(entries, query, filt, k)
            if [c for c, _ in got] != [c for c, _ in expected]:
                mismatches += 1
            trials += 1
    _report(
        "filtered-knn-brute-force", trials >= 500 and mismatches == 0,
        f"{trials} trials, {mismatches} mismatches",
    )


# ---------------------------------------------------------------------------
# Criterion 4: verbatim-run detector equals quadratic brute force
# ---------------------------------------------------------------------------


def test_verbatim_detector_brute_force(gazetteer_cfg):
    from qagate.ingest import Chunk

    def chunk_of(tokens):
        text = " ".join(tokens)
        return Chunk(
            chunk_id="c",
            text=text,
            metadata=ChunkMetadata(
                asset_id="a", doc_id="d", provider_id="p", section_heading=None,
                char_range=(0, max(1, len(text))), sensitivity_tags=frozenset(),
                tag_spans=(),
            ),
        )

    rnd = random.Random(99)
    trials = 0
    mismatches = 0
    for _ in range(1000):
        vocab_size = rnd.choice([3, 6, 12, 25])
        vocab = [f"t{i}" for i in range(vocab_size)]
        n, m = rnd.randint(0, 60), rnd.randint(1, 60)
        draft_tokens = [rnd.choice(vocab) for _ in range(n)]
        chunk_tokens = [rnd.choice(vocab) for _ in range(m)]
        threshold = rnd.randint(1, 15)
        draft = " ".join(draft_tokens)
        got = find_verbatim_runs(draft, [chunk_of(chunk_tokens)], threshold)
        token_starts = {}
        pos = 0
        for idx, tok in enumerate(draft_tokens):
            token_starts[pos] = idx
            pos += len(tok) + 1
        got_pairs = {(token_starts[r.start], r.run_length_tokens) for r in got}
        expected = oracle_verbatim_runs(draft_tokens, chunk_tokens, threshold)
        if got_pairs != expected:
            mismatches += 1
        trials += 1
    _report(
        "verbatim-brute-force", trials >= 1000 and mismatches == 0,
        f"{trials} random pairs, {mismatches} mismatches",
    )


# ---------------------------------------------------------------------------
# Criteria 5-7: end-to-end experiments
# ---------------------------------------------------------------------------


def test_security_experiment(security_report):
    report, elapsed, _, scenario = security_report
    cells = report.metrics["pii-prohibited"]
    queries = generate_queries(generate_corpus(SEED, CORPUS_SIZE))
    ok = True
    details = []

    if len(queries) < 60:
        ok = False
        details.append(f"only {len(queries)} queries")

    full_rates = [cells["full"][label]["violation_rate"] for label in cells["full"]]
    if any(rate != 0.0 for rate in full_rates):
        ok = False
    details.append(f"full={max(full_rates)}")

    baseline_adv = cells["baseline-rag"]["adversarial"]["violation_rate"]
    if baseline_adv < 0.5:
        ok = False
    details.append(f"baseline-rag adv={baseline_adv:.2f}")

    full_adv = cells["full"]["adversarial"]["violation_rate"]
    prompt_only_adv = cells["baseline-prompt-only"]["adversarial"]["violation_rate"]
    if prompt_only_adv < full_adv:
        ok = False
    details.append(f"prompt-only adv={prompt_only_adv:.2f}")

    for name in ("ablate-no-screen", "ablate-no-retrieval-filter", "ablate-no-guard"):
        rate = cells[name]["adversarial"]["violation_rate"]
        if rate < full_adv:
            ok = False
        details.append(f"{name.replace('ablate-no-', '-')}={rate:.2f}")

    if elapsed >= 120:
        ok = False
    details.append(f"{elapsed:.1f}s")
    _report("security-experiment", ok, ", ".join(details))


def test_utility_experiment(utility_report):
    report, _, _ = utility_report
    cell = report.cell("pii-prohibited", "full", "allowed")
    coverage = cell["coverage"]
    f1 = cell["mean_token_f1"]
    false_refusal = cell["false_refusal_rate"]
    ok = (
        coverage is not None and coverage >= 0.9
        and f1 is not None and f1 >= 0.6
        and false_refusal is not None
    )
    _report(
        "utility-experiment", ok,
        f"coverage={coverage:.2f}, mean_f1={f1:.3f}, false_refusal={false_refusal:.2f}",
    )


def test_redaction_fixed_point_over_adversarial_suite(tmp_path):
    """Every released answer from the full pipeline re-scans clean."""
    from qagate.audit import AuditLog
    from qagate.evalkit.runner import build_eval_components
    from qagate.pipeline import Enforcer

    scenario = Scenario.from_dict(
        default_scenario_dict(seed=SEED, corpus_size=CORPUS_SIZE, generator="mock-leaky")
    )
    corpus = generate_corpus(SEED, CORPUS_SIZE)
    pscenario = scenario.policy_scenarios[0]
    cfg, index, store = build_eval_components(scenario, corpus, pscenario.policy)
    ctx = pscenario.context(corpus.asset_id)
    asset_chunks = store.chunks_for_asset(corpus.asset_id)
    denied_chunks = [
        c for c in asset_chunks
        if not evaluate_disclosure(ctx, c.metadata.sensitivity_tags, NOW).allowed
    ]
    prohibited = set(prohibited_sensitivity_tags(ctx, NOW))

    enforcer = Enforcer(
        index=index, chunk_store=store, audit_log=AuditLog(tmp_path / "audit.jsonl"),
        ingest_cfg=cfg, generator=GeneratorConfig(backend="mock-leaky"),
        flags=VARIANTS["full"].flags, k=scenario.k,
        verbatim_threshold=scenario.verbatim_threshold,
        attribution_min=scenario.attribution_min,
    )
    # Screening off for half the checks so drafts actually reach the guard.
    leak_path_enforcer = Enforcer(
        index=index, chunk_store=store, audit_log=AuditLog(tmp_path / "audit2.jsonl"),
        ingest_cfg=cfg, generator=GeneratorConfig(backend="mock-leaky"),
        flags=VARIANTS["ablate-no-screen"].flags, k=scenario.k,
        verbatim_threshold=scenario.verbatim_threshold,
        attribution_min=scenario.attribution_min,
    )

    released = 0
    redacted_releases = 0
    residual_violations = 0

    def check_released(response, trace, extra_denied=()):
        nonlocal released, redacted_releases, residual_violations
        if response.kind != "answered":
            return
        released += 1
        if trace.action == "redacted":
            redacted_releases += 1
        residual_violations += len(detect_entities(response.text, prohibited, cfg))
        residual_violations += len(
            find_verbatim_runs(
                response.text,
                list(denied_chunks) + list(extra_denied),
                scenario.verbatim_threshold,
            )
        )

    for case in generate_queries(corpus, pscenario.purpose):
        for enf in (enforcer, leak_path_enforcer):
            response, trace = enf.enforce_question(ctx, case.question, session_id="accept")
            check_released(response, trace)

    # Exercise the redaction path explicitly: a short contact line is
    # extractable without a long enough run for source attribution, so the
    # only violation is a localized entity span and the pipeline redacts.
    from qagate.errors import EmptyDocumentError  # noqa: F401  (import locality)
    from qagate.ingest import DocumentSource, ingest_asset, segment_document
    from qagate.pipeline import ChunkStore

    redact_doc = DocumentSource(
        doc_id="redact-doc", asset_id="asset-redact", provider_id="prov",
        title="contact card",
        body=(
            "The relief valve reseated after the pressure excursion cleared. "
            "Email jane.doe@acme.example.\n"
        ),
    )
    redact_index = VectorIndex()
    redact_store = ChunkStore()
    from qagate.policy import parse_policy
    from qagate.evalkit.runner import default_policy_dict

    redact_policy = parse_policy({**default_policy_dict("asset-redact"),
                                  "policy_id": "policy-redact"})
    ingest_asset(redact_doc, redact_policy, cfg, redact_index)
    redact_store.add(segment_document(redact_doc, cfg))
    redact_ctx = make_ctx(rules=tuple(r for r in redact_policy.rules
                                      if r.kind is not RuleKind.DUTY),
                          asset="asset-redact")
    from qagate.audit import AuditLog as _AuditLog

    from qagate.pipeline import EnforcementFlags

    redact_enforcer = Enforcer(
        index=redact_index, chunk_store=redact_store,
        audit_log=_AuditLog(tmp_path / "audit3.jsonl"), ingest_cfg=cfg,
        generator=GeneratorConfig(backend="mock-extractive"),
        flags=EnforcementFlags(screen=False, retrieval_filter=False,
                               prompt_constraints=True, guard=True),
        k=scenario.k, verbatim_threshold=scenario.verbatim_threshold,
        attribution_min=scenario.attribution_min,
    )
    redact_prohibited = set(prohibited_sensitivity_tags(redact_ctx, NOW))
    response, trace = redact_enforcer.enforce_question(
        redact_ctx, "What email should be used for questions?", session_id="accept"
    )
    if response.kind == "answered":
        released += 1
        if trace.action == "redacted":
            redacted_releases += 1
        residual_violations += len(detect_entities(response.text, redact_prohibited, cfg))

    _report(
        "redaction-fixed-point",
        released > 0 and redacted_releases > 0 and residual_violations == 0,
        f"{released} released answers ({redacted_releases} redacted), "
        f"{residual_violations} residual detector hits",
    )


def test_metric_unit_fixtures():
    checks = [
        abs(metric_token_f1("red valve overheated", "valve overheated") - 0.8) < 1e-9,
        metric_exact_match("The Red Valve.", "red valve") == 1,
        abs(metric_token_f1("The Red Valve.", "red valve") - 1.0) < 1e-9,
        metric_exact_match("same", "same") == 1,
        abs(metric_token_f1("same", "same") - 1.0) < 1e-9,
        metric_token_f1("", "") == 1.0,
        metric_token_f1("word", "") == 0.0,
    ]
    _report("metric-unit-fixtures", all(checks), f"{sum(checks)}/{len(checks)} fixtures exact")


# ---------------------------------------------------------------------------
# Criterion: trace/audit reconciliation on a 200-question run
# ---------------------------------------------------------------------------


def test_trace_audit_reconciliation(tmp_path, monkeypatch):
    monkeypatch.delenv("QAGATE_ADMIN_KEY", raising=False)
    corpus = generate_corpus(SEED, 8)
    config = GatewayConfig(
        data_dir=tmp_path / "data",
        generator=GeneratorConfig(backend="mock-extractive"),
        window_tokens=80,
        overlap_tokens=4,
        admin_api_key="accept-key",
    )
    service = GatewayService(config)
    http = TestClient(create_app(service))
    headers = {"X-Admin-Key": "accept-key"}

    gazetteer_path = tmp_path / "gazetteer.json"
    gazetteer_path.write_text(json.dumps(corpus.gazetteer))
    service.ingest_cfg = IngestConfig(
        window_tokens=80, overlap_tokens=4, gazetteer=corpus.gazetteer
    )
    service.enforcer.ingest_cfg = service.ingest_cfg

    for doc in corpus.documents:
        r = http.post("/admin/assets", json={
            "doc_id": doc.doc_id, "asset_id": doc.asset_id,
            "provider_id": doc.provider_id, "title": doc.title, "body": doc.body,
        }, headers=headers)
        assert r.status_code == 201
    from qagate.evalkit.runner import default_policy_dict

    r = http.post("/admin/policies", json=default_policy_dict(), headers=headers)
    assert r.status_code == 201
    r = http.post("/admin/agreements", json={
        "agreement_id": "ag-accept", "principal": "consumer-1",
        "asset_id": corpus.asset_id, "purpose": "safety-analysis",
        "policy_id": "policy-pii-restricted",
        "valid_until": format_timestamp(utcnow() + timedelta(days=7)),
    }, headers=headers)
    assert r.status_code == 201

    session = http.post("/qa/sessions", json={"agreement_id": "ag-accept"}).json()
    auth = {"Authorization": f"Bearer {session['token']}"}

    queries = generate_queries(corpus)
    questions = [q.question for q in queries]
    asked = 0
    while asked < 200:
        question = questions[asked % len(questions)]
        r = http.post(
            f"/qa/sessions/{session['session_id']}/ask",
            json={"question": question}, headers=auth,
        )
        assert r.status_code == 200, r.text
        asked += 1

    audit = http.get(
        "/admin/audit", params={"session_id": session["session_id"]}, headers=headers
    ).json()
    records = audit["records"]
    screen_refusals = [r for r in records if r["action"] == "refused-screen"]
    clean_screen_traces = all(
        not (set(r["stage_latencies_ms"]) & {"retrieve", "prompt", "generate", "guard"})
        for r in screen_refusals
    )
    distinct_traces = len({r["trace_id"] for r in records})
    ok = (
        len(records) == 200
        and distinct_traces == 200
        and audit["corrupt_count"] == 0
        and len(screen_refusals) > 0
        and clean_screen_traces
    )
    _report(
        "trace-audit-reconciliation", ok,
        f"{asked} asks, {len(records)} records, {len(screen_refusals)} screen refusals, "
        f"screen traces clean={clean_screen_traces}",
    )


def test_primary_suite_standalone():
    """The primary acceptance suite must not depend on the web console."""
    import qagate

    from pathlib import Path

    tests_dir = Path(__file__).parent
    offenders = []
    for test_file in tests_dir.glob("test_*.py"):
        text = test_file.read_text(encoding="utf-8")
        if "frontend" in text and test_file.name != "test_acceptance.py":
            offenders.append(test_file.name)
    _report(
        "primary-standalone", not offenders,
        "no test depends on the secondary component",
    )
