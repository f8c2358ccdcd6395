import type { AskResponse, AuditRecord, SessionInfo } from "../src/types.js";

export function session(overrides: Partial<SessionInfo> = {}): SessionInfo {
  return {
    token: "ab".repeat(16),
    session_id: "s-test0001",
    expires_at: "2026-08-11T12:00:00+00:00",
    ...overrides,
  };
}

export function answered(overrides: Partial<AskResponse> = {}): AskResponse {
  return {
    kind: "answered",
    text: "The cooling pump exhibited bearing seizure during night operations.",
    trace_id: "trace-1",
    citations: ["doc-000:0000"],
    ...overrides,
  };
}

export function refused(overrides: Partial<AskResponse> = {}): AskResponse {
  return {
    kind: "refused",
    text: "I cannot answer this question due to policy restrictions. " +
      "Disclosure is restricted by policy rule(s): prohibit-pii-disclose.",
    trace_id: "trace-2",
    rule_ids: ["prohibit-pii-disclose"],
    refusal_reason: "policy",
    ...overrides,
  };
}

export function auditRecord(overrides: Partial<AuditRecord> = {}): AuditRecord {
  return {
    v: 1,
    trace_id: "trace-1",
    timestamp: "2026-08-11T10:00:00+00:00",
    session_id: "s-test0001",
    agreement_id: "ag-1",
    principal: "consumer-1",
    asset_id: "asset-1",
    purpose: "safety-analysis",
    question: "Why did the pump fail?",
    screen: { verdict: "pass", patterns: [] },
    retrieved_chunk_ids: ["doc-000:0000", "doc-000:0001"],
    excluded_count: 3,
    generator_backend: "mock-extractive",
    guard_violation_kinds: [],
    action: "answered",
    stage_latencies_ms: { screen: 0, retrieve: 1, prompt: 0, generate: 0, guard: 1 },
    ...overrides,
  };
}

type FetchCall = { url: string; init?: RequestInit };

export function mockFetch(
  handler: (url: string, init?: RequestInit) => { status?: number; body: unknown },
): { calls: FetchCall[] } {
  const calls: FetchCall[] = [];
  globalThis.fetch = (async (input: RequestInfo | URL, init?: RequestInit) => {
    const url = String(input);
    calls.push({ url, init });
    const { status = 200, body } = handler(url, init);
    return new Response(JSON.stringify(body), {
      status,
      headers: { "content-type": "application/json" },
    });
  }) as typeof fetch;
  return { calls };
}
