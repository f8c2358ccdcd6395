import { GatewayClient } from "./api.js";
import type { AuditRecord } from "./types.js";

// Provider trace explorer: a filterable table of audit records with a
// detail pane showing the enforcement stage timeline for one question.
// Every value is rendered verbatim from the audit API.

export const STAGE_ORDER = ["screen", "retrieve", "prompt", "generate", "guard"];

export class TraceExplorer {
  private root: HTMLElement;
  private client: GatewayClient;
  records: AuditRecord[] = [];
  corruptCount = 0;

  constructor(root: HTMLElement, client: GatewayClient) {
    this.root = root;
    this.client = client;
    this.renderShell();
  }

  private el<K extends keyof HTMLElementTagNameMap>(
    tag: K,
    className = "",
    text = "",
  ): HTMLElementTagNameMap[K] {
    const node = document.createElement(tag);
    if (className) node.className = className;
    if (text) node.textContent = text;
    return node;
  }

  private renderShell(): void {
    this.root.innerHTML = "";
    const controls = this.el("form", "audit-filters");
    const sessionInput = this.el("input", "filter-session");
    sessionInput.placeholder = "session id";
    const actionInput = this.el("input", "filter-action");
    actionInput.placeholder = "action (e.g. redacted)";
    const refreshButton = this.el("button", "refresh-audit", "Refresh");
    refreshButton.type = "submit";
    controls.append(sessionInput, actionInput, refreshButton);
    controls.addEventListener("submit", async (event) => {
      event.preventDefault();
      await this.refresh({
        session_id: sessionInput.value.trim() || undefined,
        action: actionInput.value.trim() || undefined,
      });
    });
    const badge = this.el("span", "corrupt-badge");
    badge.style.display = "none";
    const table = this.el("div", "audit-table");
    const detail = this.el("div", "trace-detail");
    this.root.append(controls, badge, table, detail);
  }

  async refresh(filters: { session_id?: string; action?: string } = {}): Promise<void> {
    const result = await this.client.fetchAudit(filters);
    this.records = result.records;
    this.corruptCount = result.corrupt_count;
    this.renderTable();
  }

  private renderTable(): void {
    const badge = this.root.querySelector(".corrupt-badge") as HTMLElement;
    if (this.corruptCount > 0) {
      badge.textContent = `${this.corruptCount} corrupt audit line(s) skipped`;
      badge.style.display = "inline";
    } else {
      badge.style.display = "none";
    }
    const table = this.root.querySelector(".audit-table") as HTMLElement;
    table.innerHTML = "";
    for (const record of this.records) {
      const row = this.el("div", "audit-row");
      row.dataset.traceId = record.trace_id;
      row.append(this.el("span", "cell timestamp", record.timestamp));
      row.append(this.el("span", "cell action", record.action));
      row.append(this.el("span", "cell question", record.question));
      row.addEventListener("click", () => this.renderDetail(record));
      table.append(row);
    }
  }

  renderDetail(record: AuditRecord): void {
    const detail = this.root.querySelector(".trace-detail") as HTMLElement;
    detail.innerHTML = "";
    detail.append(this.el("h3", "detail-trace-id", record.trace_id));
    detail.append(this.el("p", "detail-question", record.question));
    detail.append(this.el("p", "detail-action", record.action));

    const timeline = this.el("div", "stage-timeline");
    for (const stage of STAGE_ORDER) {
      if (!(stage in record.stage_latencies_ms)) continue;
      const item = this.el("div", `stage-item stage-${stage}`);
      item.append(this.el("span", "stage-name", stage));
      item.append(this.el("span", "stage-ms", `${record.stage_latencies_ms[stage]} ms`));
      timeline.append(item);
    }
    detail.append(timeline);

    const meta = this.el("dl", "trace-meta");
    const pair = (label: string, value: string, cls: string) => {
      meta.append(this.el("dt", "", label));
      meta.append(this.el("dd", cls, value));
    };
    pair("screen verdict", record.screen.verdict, "meta-screen");
    pair("retrieved chunks", String(record.retrieved_chunk_ids.length), "meta-retrieved");
    pair("excluded chunks", String(record.excluded_count), "meta-excluded");
    pair(
      "guard violations",
      record.guard_violation_kinds.join(", ") || "none",
      "meta-violations",
    );
    pair("generator", record.generator_backend, "meta-generator");
    detail.append(meta);
  }
}
