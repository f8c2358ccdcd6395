import { ApiError, GatewayClient } from "./api.js";
import type { AskResponse, SessionInfo, TranscriptEntry } from "./types.js";

// Consumer chat: open a session for an agreement, then a question/answer
// loop. Answers show citation chips; refusals show a banner with the
// policy grounds exactly as the API returned them. The transcript is the
// only client-side state and survives re-opened sessions via localStorage.

const TRANSCRIPT_PREFIX = "qagate-transcript:";

export class ChatView {
  private root: HTMLElement;
  private client: GatewayClient;
  private storage: Storage;
  session: SessionInfo | null = null;
  agreementId = "";
  transcript: TranscriptEntry[] = [];
  private pending = false;

  constructor(root: HTMLElement, client: GatewayClient, storage?: Storage) {
    this.root = root;
    this.client = client;
    this.storage = storage ?? window.localStorage;
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
    const form = this.el("form", "session-form");
    const agreementInput = this.el("input", "agreement-input");
    agreementInput.placeholder = "agreement id";
    agreementInput.value = this.agreementId;
    const openButton = this.el("button", "open-session", "Open session");
    openButton.type = "submit";
    form.append(agreementInput, openButton);
    form.addEventListener("submit", async (event) => {
      event.preventDefault();
      await this.openSession(agreementInput.value.trim());
    });

    const status = this.el("div", "session-status");
    const transcriptList = this.el("div", "transcript");
    const askForm = this.el("form", "ask-form");
    const questionInput = this.el("input", "question-input");
    questionInput.placeholder = "ask a question";
    const askButton = this.el("button", "ask-button", "Ask");
    askButton.type = "submit";
    askForm.append(questionInput, askButton);
    askForm.addEventListener("submit", async (event) => {
      event.preventDefault();
      const question = questionInput.value.trim();
      if (question) {
        questionInput.value = "";
        await this.ask(question);
      }
    });

    const dialog = this.el("div", "session-dialog");
    dialog.style.display = "none";
    dialog.append(this.el("p", "session-dialog-text", "Session expired."));
    const reopenButton = this.el("button", "reopen-session", "Re-open session");
    reopenButton.addEventListener("click", async () => {
      await this.openSession(this.agreementId);
    });
    dialog.append(reopenButton);

    this.root.append(form, status, transcriptList, askForm, dialog);
    this.renderTranscript();
    this.renderStatus();
  }

  private transcriptKey(): string {
    return TRANSCRIPT_PREFIX + this.agreementId;
  }

  private loadTranscript(): void {
    const raw = this.storage.getItem(this.transcriptKey());
    this.transcript = raw ? (JSON.parse(raw) as TranscriptEntry[]) : [];
  }

  private saveTranscript(): void {
    this.storage.setItem(this.transcriptKey(), JSON.stringify(this.transcript));
  }

  async openSession(agreementId: string): Promise<void> {
    if (!agreementId) return;
    const sameAgreement = agreementId === this.agreementId;
    this.agreementId = agreementId;
    if (!sameAgreement) this.loadTranscript();
    else if (!this.transcript.length) this.loadTranscript();
    try {
      this.session = await this.client.openSession(agreementId);
      this.hideDialog();
    } catch (error) {
      this.session = null;
      this.showError(error);
    }
    this.renderStatus();
    this.renderTranscript();
  }

  async ask(question: string): Promise<void> {
    if (!this.session || this.pending) return;
    this.pending = true; // one in-flight ask per session
    try {
      const response = await this.client.ask(this.session, question);
      this.transcript.push({ question, response });
      this.saveTranscript();
      this.renderTranscript();
    } catch (error) {
      if (error instanceof ApiError && error.status === 401) {
        this.session = null;
        this.showDialog();
        this.renderStatus();
      } else {
        this.showError(error);
      }
    } finally {
      this.pending = false;
    }
  }

  private renderStatus(): void {
    const status = this.root.querySelector(".session-status") as HTMLElement;
    if (this.session) {
      status.textContent =
        `Session ${this.session.session_id} (expires ${this.session.expires_at})`;
    } else {
      status.textContent = "No active session.";
    }
  }

  private renderTranscript(): void {
    const list = this.root.querySelector(".transcript") as HTMLElement;
    list.innerHTML = "";
    for (const entry of this.transcript) {
      list.append(this.el("div", "bubble question", entry.question));
      list.append(this.renderResponse(entry.response));
    }
  }

  private renderResponse(response: AskResponse): HTMLElement {
    if (response.kind === "answered") {
      const bubble = this.el("div", "bubble answer");
      bubble.append(this.el("p", "answer-text", response.text));
      const chips = this.el("div", "citations");
      for (const chunkId of response.citations ?? []) {
        const chip = this.el("a", "citation-chip", chunkId);
        chip.href = `#chunk/${encodeURIComponent(chunkId)}`;
        chips.append(chip);
      }
      bubble.append(chips);
      return bubble;
    }
    const banner = this.el("div", "bubble refusal-banner");
    banner.append(this.el("p", "refusal-text", response.text));
    const rules = this.el("div", "rule-ids");
    for (const ruleId of response.rule_ids ?? []) {
      rules.append(this.el("span", "rule-id", ruleId));
    }
    banner.append(rules);
    if (response.refusal_reason) {
      banner.append(this.el("span", "refusal-reason", response.refusal_reason));
    }
    return banner;
  }

  private showDialog(): void {
    const dialog = this.root.querySelector(".session-dialog") as HTMLElement;
    dialog.style.display = "block";
  }

  private hideDialog(): void {
    const dialog = this.root.querySelector(".session-dialog") as HTMLElement;
    dialog.style.display = "none";
  }

  private showError(error: unknown): void {
    const status = this.root.querySelector(".session-status") as HTMLElement;
    const message = error instanceof Error ? error.message : String(error);
    status.textContent = `Error: ${message}`;
  }
}
