// Mirrors of the gateway's JSON responses. The console renders these
// verbatim and performs no policy evaluation of its own.

export interface SessionInfo {
  token: string;
  session_id: string;
  expires_at: string;
}

export interface AskResponse {
  kind: "answered" | "refused";
  text: string;
  trace_id: string;
  citations?: string[];
  rule_ids?: string[];
  refusal_reason?: string | null;
}

export interface ScreenSummary {
  verdict: string;
  patterns: string[];
}

export interface AuditRecord {
  v: number;
  trace_id: string;
  timestamp: string;
  session_id: string;
  agreement_id: string;
  principal: string;
  asset_id: string;
  purpose: string;
  question: string;
  screen: ScreenSummary;
  retrieved_chunk_ids: string[];
  excluded_count: number;
  generator_backend: string;
  guard_violation_kinds: string[];
  action: string;
  stage_latencies_ms: Record<string, number>;
}

export interface AuditResult {
  records: AuditRecord[];
  corrupt_count: number;
}

export interface HealthInfo {
  status: string;
  index_size: number;
  uptime_s: number;
}

export interface TranscriptEntry {
  question: string;
  response: AskResponse;
}
