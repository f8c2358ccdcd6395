import type { AskResponse, AuditResult, HealthInfo, SessionInfo } from "./types.js";

export class ApiError extends Error {
  status: number;
  errorCode: string;

  constructor(status: number, errorCode: string, message: string) {
    super(message);
    this.status = status;
    this.errorCode = errorCode;
  }
}

async function raiseForStatus(response: Response): Promise<void> {
  if (response.ok) return;
  let code = "http-error";
  let message = `HTTP ${response.status}`;
  try {
    const body = await response.json();
    code = body.error_code ?? code;
    message = body.message ?? message;
  } catch {
    // non-JSON error body: keep the generic message
  }
  throw new ApiError(response.status, code, message);
}

export class GatewayClient {
  baseUrl: string;
  adminKey: string | null;

  constructor(baseUrl: string, adminKey: string | null = null) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    this.adminKey = adminKey;
  }

  private adminHeaders(): Record<string, string> {
    const headers: Record<string, string> = { "Content-Type": "application/json" };
    if (this.adminKey) headers["X-Admin-Key"] = this.adminKey;
    return headers;
  }

  async health(): Promise<HealthInfo> {
    const response = await fetch(`${this.baseUrl}/healthz`);
    await raiseForStatus(response);
    return response.json();
  }

  async openSession(agreementId: string): Promise<SessionInfo> {
    const response = await fetch(`${this.baseUrl}/qa/sessions`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ agreement_id: agreementId }),
    });
    await raiseForStatus(response);
    return response.json();
  }

  async ask(session: SessionInfo, question: string): Promise<AskResponse> {
    const response = await fetch(
      `${this.baseUrl}/qa/sessions/${encodeURIComponent(session.session_id)}/ask`,
      {
        method: "POST",
        headers: {
          "Content-Type": "application/json",
          Authorization: `Bearer ${session.token}`,
        },
        body: JSON.stringify({ question }),
      },
    );
    await raiseForStatus(response);
    return response.json();
  }

  async fetchAudit(filters: {
    session_id?: string;
    action?: string;
    asset_id?: string;
  } = {}): Promise<AuditResult> {
    const params = new URLSearchParams();
    for (const [key, value] of Object.entries(filters)) {
      if (value) params.set(key, value);
    }
    const suffix = params.toString() ? `?${params.toString()}` : "";
    const response = await fetch(`${this.baseUrl}/admin/audit${suffix}`, {
      headers: this.adminHeaders(),
    });
    await raiseForStatus(response);
    return response.json();
  }
}
