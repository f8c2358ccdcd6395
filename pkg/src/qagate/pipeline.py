"""Four-layer enforcement flow for a single question.

Stages run in a fixed order: surface screening, policy-filtered retrieval,
policy-conditioned prompt assembly, draft generation, and the guard. On a
guard violation the pipeline redacts localized spans, regenerates once
under stricter instructions, or refuses with the violated rule ids. Every
question discharges its logging duty by appending exactly one audit
record.
"""

from __future__ import annotations

import math
import os
import re
import time
import uuid
from dataclasses import dataclass, field, replace
from datetime import datetime
from typing import Callable, List, Optional, Sequence, Tuple

from .audit import AuditLog, AuditRecord
from .errors import AssetNotIndexedError, GenerationUnavailableError, UnlocalizedViolationError
from .guard import (
    DEFAULT_ATTRIBUTION_MIN,
    DEFAULT_VERBATIM_THRESHOLD,
    VIOLATION_ENTITY,
    VIOLATION_VERBATIM,
    RuleBasedSupervisor,
    SupervisorResult,
    Verdict,
    attribute_spans,
    compliance_verdict,
    redact_spans,
    supervisor_check,
)
from .index import MetadataFilter, VectorIndex, embed_text
from .ingest import Chunk, IngestConfig
from .policy import (
    SessionPolicyContext,
    collect_duties,
    evaluate_disclosure,
    format_timestamp,
    prohibited_sensitivity_tags,
    utcnow,
    SensitivityTag,
)

# ---------------------------------------------------------------------------
# Screening
# ---------------------------------------------------------------------------

DEFAULT_DIRECT_PATTERNS = (
    (
        "direct:person-names",
        r"\b(list|name|names|give|provide|enumerate|show|reveal|tell me|identify)\b"
        r".*\b(person names?|names? of|people|persons|individuals?|employees?|who (reported|filed|signed|wrote))\b",
    ),
    ("direct:who-is", r"\bwho (reported|filed|signed|wrote|is responsible for)\b"),
    (
        "direct:contact-details",
        r"\b(e-?mail( address)?|phone( number)?|telephone|contact (details|info|information)"
        r"|home address|postal address|street address|mailing address)\b",
    ),
    ("direct:identifiers", r"\b(part numbers?|serial numbers?|model numbers?|exact identifiers?)\b"),
    (
        "direct:full-text",
        r"\b(full text|entire (report|document|text|section)|whole (report|document)"
        r"|complete (report|document|text)|verbatim|word for word|word-for-word)\b",
    ),
    ("direct:quote", r"\bquote\b.*\b(paragraph|section|passage|report|document|sentence)\b"),
)

DEFAULT_INJECTION_PATTERNS = (
    (
        "inject:override-instructions",
        r"\b(ignore|disregard|forget|override|bypass)\b.*"
        r"\b(instructions?|polic(y|ies)|rules?|constraints?|restrictions?|guidelines?)\b",
    ),
    (
        "inject:system-prompt",
        r"\b(system prompt|initial prompt|hidden prompt|your prompt|developer (mode|message)|jailbreak)\b",
    ),
    ("inject:role-override", r"\b(you are now|act as|pretend to be|roleplay as|new instructions? ?:)\b"),
    (
        "inject:repeat-context",
        r"\b(repeat|print|output|dump|reproduce|echo)\b.*"
        r"\b(context|retrieved|provided (to you|above)|above content|your sources?|everything you (see|have|were given))\b",
    ),
)

DEFAULT_PURPOSE_DENYLISTS = {
    "safety-analysis": ("revenue", "profit", "pricing", "salary", "marketing"),
    "aggregate-reporting": ("salary", "pricing"),
    "maintenance-planning": ("revenue", "salary"),
}


@dataclass(frozen=True)
class ScreeningConfig:
    direct_patterns: tuple = DEFAULT_DIRECT_PATTERNS
    injection_patterns: tuple = DEFAULT_INJECTION_PATTERNS
    purpose_denylists: dict = field(default_factory=lambda: dict(DEFAULT_PURPOSE_DENYLISTS))

    def compiled(self) -> list:
        return [
            (pid, re.compile(expr))
            for pid, expr in (*self.direct_patterns, *self.injection_patterns)
        ]


@dataclass(frozen=True)
class ScreenResult:
    verdict: str  # "pass" | "refuse"
    matched_patterns: tuple = ()
    reason: str = ""


def _normalize_question(question: str) -> str:
    return " ".join(question.lower().split())


def screen_query(
    ctx: SessionPolicyContext, question: str, cfg: Optional[ScreeningConfig] = None
) -> ScreenResult:
    """Surface-level request screening on the normalized question.

    Refuses direct extraction phrasings, injection phrasings, and keywords
    outside the session purpose; never consults the index or generator.
    """
    cfg = cfg or ScreeningConfig()
    normalized = _normalize_question(question)
    matched = [pid for pid, pattern in cfg.compiled() if pattern.search(normalized)]
    denied_keywords = [
        kw for kw in cfg.purpose_denylists.get(ctx.purpose, ()) if kw in normalized
    ]
    if matched or denied_keywords:
        parts = []
        if matched:
            parts.append(f"matches restricted request patterns {matched}")
        if denied_keywords:
            parts.append(
                f"contains keywords {denied_keywords} outside the agreed purpose {ctx.purpose!r}"
            )
        reason = "Refused at screening: question " + " and ".join(parts) + "."
        for kw in denied_keywords:
            matched.append(f"purpose-denylist:{kw}")
        return ScreenResult(verdict="refuse", matched_patterns=tuple(matched), reason=reason)
    return ScreenResult(verdict="pass")


# ---------------------------------------------------------------------------
# Retrieval under policy
# ---------------------------------------------------------------------------


class ChunkStore:
    """In-memory chunk text store keyed by chunk_id and asset."""

    def __init__(self):
        self._by_id: dict = {}

    def add(self, chunks: Sequence[Chunk]) -> None:
        for c in chunks:
            self._by_id[c.chunk_id] = c

    def remove_doc(self, doc_id: str) -> None:
        self._by_id = {
            cid: c for cid, c in self._by_id.items() if c.metadata.doc_id != doc_id
        }

    def get(self, chunk_id: str) -> Chunk:
        return self._by_id[chunk_id]

    def chunks_for_asset(self, asset_id: str) -> list:
        return [c for c in self._by_id.values() if c.metadata.asset_id == asset_id]


def policy_filtered_retrieve(
    ctx: SessionPolicyContext,
    question: str,
    index: VectorIndex,
    chunk_store: ChunkStore,
    k: int = 6,
    filter_enabled: bool = True,
    now: Optional[datetime] = None,
) -> Tuple[list, int]:
    """Top-k chunks for the question among those disclosable under ctx.

    The policy filter applies before ranking; with filtering disabled
    (baseline variants) the raw asset-scoped kNN result is returned.
    Returns (chunks, excluded_count).
    """
    now = now or utcnow()
    entries = index.entries_for_asset(ctx.asset)
    if not entries:
        raise AssetNotIndexedError(f"asset {ctx.asset!r} has no indexed chunks")
    excluded: set = set()
    if filter_enabled:
        decision_cache: dict = {}
        for entry in entries:
            tags = entry.metadata.sensitivity_tags
            if tags not in decision_cache:
                decision_cache[tags] = evaluate_disclosure(ctx, tags, now)
            if not decision_cache[tags].allowed:
                excluded.add(entry.chunk_id)
    filt = MetadataFilter(require_asset=ctx.asset, exclude_chunk_ids=frozenset(excluded))
    ranked = index.filtered_knn(embed_text(question), filt, k)
    return [chunk_store.get(cid) for cid, _ in ranked], len(excluded)


# ---------------------------------------------------------------------------
# Prompt assembly
# ---------------------------------------------------------------------------

REFUSAL_INSTRUCTION = (
    "If answering requires revealing disallowed information, reply that you "
    "cannot answer due to policy restrictions"
)

_TAG_DIRECTIVES = {
    SensitivityTag.PII_PERSON_NAME: "Do not reveal the names of any persons.",
    SensitivityTag.PII_EMAIL: "Do not reveal email addresses.",
    SensitivityTag.PII_PHONE: "Do not reveal phone numbers.",
    SensitivityTag.PII_ADDRESS: "Do not reveal postal addresses.",
    SensitivityTag.ID_PART_NUMBER: "Do not reveal exact part numbers.",
    SensitivityTag.ID_ORG: "Do not reveal organization names.",
    SensitivityTag.NARRATIVE_INCIDENT: "Do not retell incident narratives.",
    SensitivityTag.CONTAINS_PII: "Do not reveal personal data of any kind.",
}

CHUNK_OPEN = "<<CHUNK id={chunk_id}>>"
CHUNK_CLOSE = "<<END>>"
_CHUNK_ID_RE = re.compile(r"<<CHUNK id=([^>]+)>>")


@dataclass(frozen=True)
class Prompt:
    system_part: str
    context_part: tuple  # ordered (chunk_id, delimited text)
    instruction_part: str
    question: str
    chunks: tuple = ()  # the retrieved chunks backing context_part

    def context_chunk_ids(self) -> list:
        """Recover chunk ids from the delimited context blocks."""
        return [m.group(1) for _, block in self.context_part for m in _CHUNK_ID_RE.finditer(block)]

    def render_messages(self) -> list:
        context_text = "\n\n".join(block for _, block in self.context_part)
        user = f"Context:\n{context_text}\n\nQuestion: {self.question}" if context_text else (
            f"Question: {self.question}"
        )
        return [
            {"role": "system", "content": f"{self.system_part}\n\n{self.instruction_part}"},
            {"role": "user", "content": user},
        ]


def assemble_prompt(
    ctx: SessionPolicyContext,
    question: str,
    chunks: Sequence[Chunk],
    constraints_enabled: bool = True,
    extra_directives: Sequence[str] = (),
    now: Optional[datetime] = None,
) -> Prompt:
    """Deterministic three-part prompt over disclosable chunks."""
    context_part = tuple(
        (c.chunk_id, f"{CHUNK_OPEN.format(chunk_id=c.chunk_id)}\n{c.text}\n{CHUNK_CLOSE}")
        for c in chunks
    )
    if not constraints_enabled:
        system_part = "You are a question answering assistant for a document collection."
        instructions = ["Answer the question using the provided context."]
        if not chunks:
            instructions.append("If no context is available, say the information is unavailable.")
        return Prompt(
            system_part=system_part,
            context_part=context_part,
            instruction_part=" ".join(instructions),
            question=question,
            chunks=tuple(chunks),
        )

    prohibitions = ctx.disclose_prohibitions()
    system_lines = [
        "You are a cautious assistant answering questions about the provider's "
        "documents on its behalf.",
        f"Authorized purpose of this session: {ctx.purpose}.",
    ]
    for rule in prohibitions:
        if rule.constraints:
            summary = "; ".join(
                f"{c.left.value} {c.op.value} {list(c.right) if isinstance(c.right, tuple) else c.right}"
                for c in rule.constraints
            )
        else:
            summary = "unconditional"
        system_lines.append(f"Prohibition {rule.rule_id}: disclosure disallowed when {summary}.")

    directives = [f"{REFUSAL_INSTRUCTION}."]
    for tag in sorted(prohibited_sensitivity_tags(ctx, now), key=lambda t: t.value):
        directives.append(_TAG_DIRECTIVES[tag])
    directives.append("Do not quote long passages verbatim.")
    directives.extend(extra_directives)
    if not chunks:
        directives.append(
            "No context passed the policy filter; reply that the requested "
            "information is unavailable."
        )
    return Prompt(
        system_part="\n".join(system_lines),
        context_part=context_part,
        instruction_part=" ".join(directives),
        question=question,
        chunks=tuple(chunks),
    )


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

BACKEND_MOCK_EXTRACTIVE = "mock-extractive"
BACKEND_MOCK_LEAKY = "mock-leaky"
BACKEND_HTTP = "http"

NO_INFORMATION_SENTINEL = "No relevant information is available for this question."


@dataclass(frozen=True)
class GeneratorConfig:
    backend: str = BACKEND_MOCK_EXTRACTIVE
    endpoint: str = ""
    model: str = ""
    timeout_s: float = 30.0
    max_regenerations: int = 1

    def __post_init__(self):
        if self.backend not in (BACKEND_MOCK_EXTRACTIVE, BACKEND_MOCK_LEAKY, BACKEND_HTTP):
            raise ValueError(f"unknown generator backend {self.backend!r}")
        if self.max_regenerations < 0:
            raise ValueError("max_regenerations must be non-negative")


@dataclass(frozen=True)
class DraftAnswer:
    """Untrusted generator output."""

    text: str
    cited_chunk_ids: tuple = ()


_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")
_WORD_RE = re.compile(r"[a-z0-9']+")
_STOPWORDS = frozenset(
    "the a an of in on at is are was were what which who whom how why when where "
    "did does do to for and or with by from as that this these those it its be "
    "been has have had during before after between into over under above many "
    "much all any each per also not no".split()
)


def _content_tokens(text: str) -> set:
    return {w for w in _WORD_RE.findall(text.lower()) if w not in _STOPWORDS}


def _split_sentences(text: str) -> list:
    sentences = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue  # headings are structure, not answer material
        for sentence in _SENTENCE_SPLIT.split(line):
            sentence = " ".join(sentence.split())
            if sentence:
                sentences.append(sentence)
    return sentences


def _generate_extractive(prompt: Prompt) -> DraftAnswer:
    question_tokens = _content_tokens(prompt.question)
    candidates = []
    for rank, chunk in enumerate(prompt.chunks):
        for idx, sentence in enumerate(_split_sentences(chunk.text)):
            overlap = len(question_tokens & _content_tokens(sentence))
            candidates.append((overlap, rank, idx, sentence, chunk.chunk_id))
    if not candidates:
        return DraftAnswer(text=NO_INFORMATION_SENTINEL)
    best = max(c[0] for c in candidates)
    if best == 0:
        return DraftAnswer(text=NO_INFORMATION_SENTINEL)
    # The sentences with the highest overlap, up to three on ties.
    chosen = sorted((c for c in candidates if c[0] == best), key=lambda c: (c[1], c[2]))[:3]
    text = " ".join(c[3] for c in chosen)
    cites = []
    for c in chosen:
        if c[4] not in cites:
            cites.append(c[4])
    return DraftAnswer(text=text, cited_chunk_ids=tuple(cites))


def _generate_leaky(prompt: Prompt) -> DraftAnswer:
    # Simulates a model that ignores every instruction and parrots context.
    if not prompt.chunks:
        return DraftAnswer(text=NO_INFORMATION_SENTINEL)
    top = prompt.chunks[0]
    return DraftAnswer(text=top.text, cited_chunk_ids=(top.chunk_id,))


_CITES_TRAILER = re.compile(r"\n?\[cites:\s*([^\]]*)\]\s*$")


def _generate_http(cfg: GeneratorConfig, prompt: Prompt) -> DraftAnswer:
    import httpx

    headers = {}
    api_key = os.environ.get("QAGATE_GENERATOR_API_KEY")
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    try:
        response = httpx.post(
            cfg.endpoint.rstrip("/") + "/chat/completions",
            json={"model": cfg.model, "messages": prompt.render_messages()},
            headers=headers,
            timeout=cfg.timeout_s,
        )
        response.raise_for_status()
        content = response.json()["choices"][0]["message"]["content"]
    except Exception as exc:
        raise GenerationUnavailableError(f"generator backend failed: {exc}") from exc
    cites: tuple = ()
    match = _CITES_TRAILER.search(content)
    if match:
        cites = tuple(c.strip() for c in match.group(1).split(",") if c.strip())
        content = content[: match.start()].rstrip()
    return DraftAnswer(text=content, cited_chunk_ids=cites)


def generate(cfg: GeneratorConfig, prompt: Prompt) -> DraftAnswer:
    """Produce a draft answer with the configured backend."""
    if cfg.backend == BACKEND_MOCK_EXTRACTIVE:
        return _generate_extractive(prompt)
    if cfg.backend == BACKEND_MOCK_LEAKY:
        return _generate_leaky(prompt)
    return _generate_http(cfg, prompt)


# ---------------------------------------------------------------------------
# Enforcement
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnforcementFlags:
    """Which layers run; variants and ablations toggle these."""

    screen: bool = True
    retrieval_filter: bool = True
    prompt_constraints: bool = True
    guard: bool = True


@dataclass(frozen=True)
class FinalResponse:
    kind: str  # "answered" | "refused"
    text: str
    citations: tuple = ()
    rule_ids: tuple = ()
    trace_id: str = ""
    refusal_reason: Optional[str] = None  # "screen" | "policy" | "service"


@dataclass
class StageTrace:
    trace_id: str
    started_at: str
    stage_latencies_ms: dict = field(default_factory=dict)
    stage_order: list = field(default_factory=list)
    screen: Optional[ScreenResult] = None
    retrieved_chunk_ids: tuple = ()
    excluded_count: int = 0
    generator_backend: str = ""
    guard_violation_kinds: tuple = ()
    supervisor_status: str = ""
    regenerations: int = 0
    action: str = ""
    total_ms: int = 0


class Enforcer:
    """Runs the enforcement pipeline for questions under session contexts."""

    def __init__(
        self,
        index: VectorIndex,
        chunk_store: ChunkStore,
        audit_log: AuditLog,
        ingest_cfg: IngestConfig,
        generator: GeneratorConfig = GeneratorConfig(),
        screening: Optional[ScreeningConfig] = None,
        flags: EnforcementFlags = EnforcementFlags(),
        k: int = 6,
        verbatim_threshold: int = DEFAULT_VERBATIM_THRESHOLD,
        attribution_min: int = DEFAULT_ATTRIBUTION_MIN,
        supervisor_factory: Optional[Callable] = None,
    ):
        self.index = index
        self.chunk_store = chunk_store
        self.audit_log = audit_log
        self.ingest_cfg = ingest_cfg
        self.generator = generator
        self.screening = screening or ScreeningConfig()
        self.flags = flags
        self.k = k
        self.verbatim_threshold = verbatim_threshold
        self.attribution_min = attribution_min
        self._supervisor_factory = supervisor_factory

    # -- helpers ------------------------------------------------------------

    def _verdict(self, ctx, text, asset_chunks, now) -> Verdict:
        return compliance_verdict(
            ctx,
            text,
            asset_chunks,
            self.ingest_cfg,
            verbatim_threshold=self.verbatim_threshold,
            attribution_min=self.attribution_min,
            now=now,
        )

    def _verified_citations(self, text: str, retrieved: Sequence[Chunk]) -> tuple:
        spans = attribute_spans(text, retrieved, self.attribution_min)
        cited = []
        for span in spans:
            for cid in sorted(span.src_chunk_ids):
                if cid not in cited:
                    cited.append(cid)
        return tuple(cited)

    def enforce_question(
        self,
        ctx: SessionPolicyContext,
        question: str,
        session_id: str = "",
        now: Optional[datetime] = None,
    ) -> Tuple[FinalResponse, StageTrace]:
        now = now or utcnow()
        trace = StageTrace(trace_id=uuid.uuid4().hex, started_at=format_timestamp(now))
        trace.generator_backend = self.generator.backend
        t_start = time.perf_counter()

        def timed(stage: str):
            return _StageTimer(trace, stage)

        response: Optional[FinalResponse] = None

        # Layer 1: screening.
        if self.flags.screen:
            with timed("screen"):
                trace.screen = screen_query(ctx, question, self.screening)
            if trace.screen.verdict == "refuse":
                prohibition_ids = tuple(r.rule_id for r in ctx.disclose_prohibitions())
                trace.action = "refused-screen"
                response = FinalResponse(
                    kind="refused",
                    text=trace.screen.reason,
                    rule_ids=prohibition_ids,
                    trace_id=trace.trace_id,
                    refusal_reason="screen",
                )

        if response is None:
            # Layer 2: retrieval under policy.
            with timed("retrieve"):
                retrieved, excluded = policy_filtered_retrieve(
                    ctx,
                    question,
                    self.index,
                    self.chunk_store,
                    k=self.k,
                    filter_enabled=self.flags.retrieval_filter,
                    now=now,
                )
            trace.retrieved_chunk_ids = tuple(c.chunk_id for c in retrieved)
            trace.excluded_count = excluded

            # Layer 3: policy-conditioned prompt.
            with timed("prompt"):
                prompt = assemble_prompt(
                    ctx,
                    question,
                    retrieved,
                    constraints_enabled=self.flags.prompt_constraints,
                    now=now,
                )

            try:
                with timed("generate"):
                    draft = generate(self.generator, prompt)
            except GenerationUnavailableError as exc:
                trace.action = "refused-service"
                response = FinalResponse(
                    kind="refused",
                    text=f"The answering service is unavailable: {exc}",
                    trace_id=trace.trace_id,
                    refusal_reason="service",
                )

        if response is None and not self.flags.guard:
            trace.action = "answered"
            response = FinalResponse(
                kind="answered",
                text=draft.text,
                citations=tuple(draft.cited_chunk_ids),
                trace_id=trace.trace_id,
            )

        if response is None:
            # Layer 4: post-generation checks and virtual redaction.
            asset_chunks = self.chunk_store.chunks_for_asset(ctx.asset)
            with timed("guard"):
                verdict = self._verdict(ctx, draft.text, asset_chunks, now)
                backend = (
                    self._supervisor_factory(ctx, asset_chunks)
                    if self._supervisor_factory
                    else RuleBasedSupervisor(
                        ctx,
                        asset_chunks,
                        self.ingest_cfg,
                        verbatim_threshold=self.verbatim_threshold,
                        attribution_min=self.attribution_min,
                    )
                )
                supervisor = supervisor_check(ctx, draft.text, backend, verdict)
                trace.supervisor_status = supervisor.status

                if verdict.compliant:
                    trace.action = "answered"
                    response = FinalResponse(
                        kind="answered",
                        text=draft.text,
                        citations=self._verified_citations(draft.text, prompt.chunks),
                        trace_id=trace.trace_id,
                    )
                else:
                    trace.guard_violation_kinds = tuple(verdict.violation_kinds())
                    response = self._resolve_violation(
                        ctx, prompt, draft, verdict, asset_chunks, trace, now
                    )

        # Duties: one audit record per question, before the response returns.
        collect_duties(ctx, now)
        total = time.perf_counter() - t_start
        trace.total_ms = int(total * 1000)
        record = AuditRecord(
            trace_id=trace.trace_id,
            timestamp=trace.started_at,
            session_id=session_id,
            agreement_id=ctx.agreement_id,
            principal=ctx.principal,
            asset_id=ctx.asset,
            purpose=ctx.purpose,
            question=question,
            screen_verdict=trace.screen.verdict if trace.screen else "skipped",
            screen_patterns=trace.screen.matched_patterns if trace.screen else (),
            retrieved_chunk_ids=trace.retrieved_chunk_ids,
            excluded_count=trace.excluded_count,
            generator_backend=trace.generator_backend,
            guard_violation_kinds=trace.guard_violation_kinds,
            action=trace.action,
            stage_latencies_ms=dict(trace.stage_latencies_ms),
        )
        self.audit_log.append(record)
        return response, trace

    def _resolve_violation(
        self,
        ctx: SessionPolicyContext,
        prompt: Prompt,
        draft: DraftAnswer,
        verdict: Verdict,
        asset_chunks: Sequence[Chunk],
        trace: StageTrace,
        now: datetime,
    ) -> FinalResponse:
        localized = all(v.span is not None for v in verdict.violations)
        redactable_kinds = {VIOLATION_ENTITY, VIOLATION_VERBATIM}
        if localized and set(v.kind for v in verdict.violations) <= redactable_kinds:
            try:
                redacted = redact_spans(draft.text, verdict.violations)
            except UnlocalizedViolationError:
                redacted = None
            if redacted is not None:
                recheck = self._verdict(ctx, redacted, asset_chunks, now)
                if recheck.compliant:
                    trace.action = "redacted"
                    return FinalResponse(
                        kind="answered",
                        text=redacted,
                        citations=self._verified_citations(redacted, prompt.chunks),
                        trace_id=trace.trace_id,
                    )

        rule_ids = verdict.all_rule_ids()
        if self.generator.max_regenerations > trace.regenerations:
            trace.regenerations += 1
            categories = sorted(
                {v.category.value for v in verdict.violations if v.category}
                | {v.kind for v in verdict.violations if not v.category}
            )
            stricter = assemble_prompt(
                ctx,
                prompt.question,
                prompt.chunks,
                constraints_enabled=self.flags.prompt_constraints,
                extra_directives=(
                    "Your previous draft violated policy in these categories: "
                    + ", ".join(categories)
                    + ". Remove any such content entirely.",
                ),
                now=now,
            )
            try:
                with _StageTimer(trace, "generate"):
                    retry = generate(self.generator, stricter)
            except GenerationUnavailableError as exc:
                trace.action = "refused-service"
                return FinalResponse(
                    kind="refused",
                    text=f"The answering service is unavailable: {exc}",
                    trace_id=trace.trace_id,
                    refusal_reason="service",
                )
            with _StageTimer(trace, "guard"):
                retry_verdict = self._verdict(ctx, retry.text, asset_chunks, now)
            if retry_verdict.compliant:
                trace.action = "regenerated-then-answered"
                return FinalResponse(
                    kind="answered",
                    text=retry.text,
                    citations=self._verified_citations(retry.text, prompt.chunks),
                    trace_id=trace.trace_id,
                )
            trace.guard_violation_kinds = tuple(
                dict.fromkeys((*trace.guard_violation_kinds, *retry_verdict.violation_kinds()))
            )
            rule_ids = tuple(dict.fromkeys((*rule_ids, *retry_verdict.all_rule_ids())))
            trace.action = "regenerated-then-refused"
            return self._policy_refusal(rule_ids, trace)

        trace.action = "refused-policy"
        return self._policy_refusal(rule_ids, trace)

    def _policy_refusal(self, rule_ids: tuple, trace: StageTrace) -> FinalResponse:
        if rule_ids:
            ground = f"Disclosure is restricted by policy rule(s): {', '.join(rule_ids)}."
        else:
            ground = "No policy rule permits disclosing the requested information."
        return FinalResponse(
            kind="refused",
            text=f"I cannot answer this question due to policy restrictions. {ground}",
            rule_ids=rule_ids,
            trace_id=trace.trace_id,
            refusal_reason="policy",
        )


class _StageTimer:
    """Accumulates wall-clock milliseconds for one pipeline stage."""

    def __init__(self, trace: StageTrace, stage: str):
        self._trace = trace
        self._stage = stage

    def __enter__(self):
        self._t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed_ms = int((time.perf_counter() - self._t0) * 1000)
        previous = self._trace.stage_latencies_ms.get(self._stage, 0)
        self._trace.stage_latencies_ms[self._stage] = previous + elapsed_ms
        if self._stage not in self._trace.stage_order:
            self._trace.stage_order.append(self._stage)
        return False
