"""Post-generation checks implementing virtual redaction.

A draft answer is scanned with the same detectors used at ingestion,
checked for verbatim token runs against the asset's chunks, and its spans
are attributed back to source chunks; any span whose sources include a
non-disclosable chunk is a violation. Violating spans can be replaced
in-place, leaving text that re-scans clean.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import datetime
from functools import lru_cache
from typing import Callable, Iterable, List, Optional, Protocol, Sequence

from .errors import UnlocalizedViolationError
from .ingest import Chunk, IngestConfig, detect_spans
from .policy import (
    Decision,
    SensitivityTag,
    SessionPolicyContext,
    evaluate_disclosure,
    prohibited_sensitivity_tags,
    utcnow,
)

DEFAULT_VERBATIM_THRESHOLD = 12
DEFAULT_ATTRIBUTION_MIN = 5

VIOLATION_ENTITY = "entity"
VIOLATION_VERBATIM = "verbatim"
VIOLATION_SOURCE = "non-disclosable-source"


@dataclass(frozen=True)
class EntitySpan:
    category: SensitivityTag
    start: int
    end: int
    matched_text: str


@dataclass(frozen=True)
class LeakSpan:
    start: int
    end: int
    chunk_id: str
    run_length_tokens: int


@dataclass(frozen=True)
class AttributedSpan:
    start: int
    end: int
    src_chunk_ids: frozenset


@dataclass(frozen=True)
class Violation:
    kind: str
    span: Optional[tuple]  # (start, end) in the draft, None when unlocalized
    rule_ids: tuple = ()
    category: Optional[SensitivityTag] = None
    chunk_ids: tuple = ()


@dataclass(frozen=True)
class Verdict:
    compliant: bool
    violations: tuple = ()

    def __post_init__(self):
        if self.compliant != (len(self.violations) == 0):
            raise ValueError("compliant must mirror an empty violation list")

    def violation_kinds(self) -> list:
        seen = []
        for v in self.violations:
            if v.kind not in seen:
                seen.append(v.kind)
        return seen

    def all_rule_ids(self) -> tuple:
        ids: List[str] = []
        for v in self.violations:
            for rid in v.rule_ids:
                if rid not in ids:
                    ids.append(rid)
        return tuple(ids)


def detect_entities(
    draft: str,
    prohibited: Iterable[SensitivityTag],
    cfg: IngestConfig,
) -> list:
    """Detector hits in the draft restricted to prohibited categories.

    contains_pii expands to all pii categories. Offsets are exact.
    """
    categories = set(prohibited)
    if SensitivityTag.CONTAINS_PII in categories:
        categories.update(t for t in SensitivityTag if t.is_pii)
        categories.discard(SensitivityTag.CONTAINS_PII)
    if not categories:
        return []
    return [
        EntitySpan(category=s.tag, start=s.start, end=s.end, matched_text=draft[s.start : s.end])
        for s in detect_spans(draft, cfg, categories=categories)
    ]


_TOKEN_RE = re.compile(r"\S+")


def _tokens_with_spans(text: str) -> list:
    return [(m.group(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


@lru_cache(maxsize=8192)
def _chunk_token_table(text: str) -> tuple:
    """(tokens, token -> positions) for one chunk text, cached per process."""
    tokens = tuple(m.group() for m in _TOKEN_RE.finditer(text))
    positions: dict = {}
    for j, w in enumerate(tokens):
        positions.setdefault(w, []).append(j)
    return tokens, positions


def find_verbatim_runs(
    draft: str,
    chunks: Sequence[Chunk],
    threshold_tokens: int = DEFAULT_VERBATIM_THRESHOLD,
) -> list:
    """Maximal common whitespace-token runs of at least threshold_tokens.

    Runs are reported per chunk; identical draft spans matching several
    positions in one chunk collapse to a single span. Only matching token
    pairs are visited, so cost scales with actual overlap, not text sizes.
    """
    if threshold_tokens < 1:
        raise ValueError("threshold_tokens must be at least 1")
    dtoks = _tokens_with_spans(draft)
    n = len(dtoks)
    dwords = [t[0] for t in dtoks]
    results = {}
    for chunk in chunks:
        ctoks, cpos = _chunk_token_table(chunk.text)
        if n == 0 or not ctoks:
            continue
        # run[(i, j)] = length of the common run starting at draft i, chunk j
        run: dict = {}
        for i in range(n - 1, -1, -1):
            for j in cpos.get(dwords[i], ()):
                run[(i, j)] = 1 + run.get((i + 1, j + 1), 0)
        for (i, j), length in run.items():
            if length < threshold_tokens:
                continue
            if i > 0 and j > 0 and dwords[i - 1] == ctoks[j - 1]:
                continue  # extendable left, not maximal
            span = (dtoks[i][1], dtoks[i + length - 1][2])
            key = (span[0], span[1], chunk.chunk_id)
            if key not in results or results[key].run_length_tokens < length:
                results[key] = LeakSpan(
                    start=span[0],
                    end=span[1],
                    chunk_id=chunk.chunk_id,
                    run_length_tokens=length,
                )
    return [results[k] for k in sorted(results)]


def attribute_spans(
    draft: str,
    chunks: Sequence[Chunk],
    attribution_min: int = DEFAULT_ATTRIBUTION_MIN,
) -> list:
    """Maximal draft regions sharing a token run with at least one chunk.

    Overlapping evidence intervals merge into one region whose source set
    is the union of contributing chunks.
    """
    runs = find_verbatim_runs(draft, chunks, threshold_tokens=attribution_min)
    if not runs:
        return []
    intervals = sorted(runs, key=lambda r: (r.start, r.end))
    merged: List[list] = []
    for run in intervals:
        if merged and run.start < merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], run.end)
            merged[-1][2].add(run.chunk_id)
        else:
            merged.append([run.start, run.end, {run.chunk_id}])
    return [
        AttributedSpan(start=s, end=e, src_chunk_ids=frozenset(ids)) for s, e, ids in merged
    ]


def compliance_verdict(
    ctx: SessionPolicyContext,
    draft_text: str,
    asset_chunks: Sequence[Chunk],
    cfg: IngestConfig,
    verbatim_threshold: int = DEFAULT_VERBATIM_THRESHOLD,
    attribution_min: int = DEFAULT_ATTRIBUTION_MIN,
    now: Optional[datetime] = None,
) -> Verdict:
    """Check a draft against the session policy over the asset's chunks.

    Violations: prohibited-category entity hits; verbatim runs sourced from
    chunks that carry a prohibited tag or are non-disclosable; attributed
    spans whose sources include a non-disclosable chunk. Every violation
    cites the rule ids that ground it.
    """
    now = now or utcnow()
    prohibited = prohibited_sensitivity_tags(ctx, now)
    violations: List[Violation] = []

    for span in detect_entities(draft_text, prohibited.keys(), cfg):
        rule_ids = prohibited.get(span.category, ())
        if not rule_ids and span.category.is_pii:
            rule_ids = prohibited.get(SensitivityTag.CONTAINS_PII, ())
        violations.append(
            Violation(
                kind=VIOLATION_ENTITY,
                span=(span.start, span.end),
                rule_ids=rule_ids,
                category=span.category,
            )
        )

    ctx_rule_ids = {r.rule_id for r in ctx.rules}
    decision_cache: dict = {}

    def chunk_decision(chunk: Chunk) -> Decision:
        key = chunk.metadata.sensitivity_tags
        if key not in decision_cache:
            decision_cache[key] = evaluate_disclosure(ctx, key, now)
        return decision_cache[key]

    by_id = {c.chunk_id: c for c in asset_chunks}

    for run in find_verbatim_runs(draft_text, asset_chunks, verbatim_threshold):
        chunk = by_id[run.chunk_id]
        tags = chunk.metadata.sensitivity_tags
        hit_tags = set(tags) & set(prohibited.keys())
        decision = chunk_decision(chunk)
        if not hit_tags and decision.allowed:
            continue
        rule_ids: List[str] = []
        for tag in sorted(hit_tags, key=lambda t: t.value):
            for rid in prohibited[tag]:
                if rid not in rule_ids:
                    rule_ids.append(rid)
        if not decision.allowed:
            for rid in decision.rule_ids():
                if rid in ctx_rule_ids and rid not in rule_ids:
                    rule_ids.append(rid)
        violations.append(
            Violation(
                kind=VIOLATION_VERBATIM,
                span=(run.start, run.end),
                rule_ids=tuple(rule_ids),
                chunk_ids=(run.chunk_id,),
            )
        )

    for span in attribute_spans(draft_text, asset_chunks, attribution_min):
        denied = [
            cid
            for cid in sorted(span.src_chunk_ids)
            if not chunk_decision(by_id[cid]).allowed
        ]
        if not denied:
            continue
        rule_ids = []
        for cid in denied:
            for rid in chunk_decision(by_id[cid]).rule_ids():
                if rid in ctx_rule_ids and rid not in rule_ids:
                    rule_ids.append(rid)
        violations.append(
            Violation(
                kind=VIOLATION_SOURCE,
                span=(span.start, span.end),
                rule_ids=tuple(rule_ids),
                chunk_ids=tuple(denied),
            )
        )

    violations.sort(key=lambda v: (v.span if v.span else (-1, -1), v.kind))
    return Verdict(compliant=not violations, violations=tuple(violations))


def redact_spans(draft: str, violations: Sequence[Violation]) -> str:
    """Replace violating spans with redaction markers.

    Overlapping spans merge and are replaced right-to-left so earlier
    offsets stay valid. Raises UnlocalizedViolationError when any violation
    has no span.
    """
    if not violations:
        return draft
    for v in violations:
        if v.span is None:
            raise UnlocalizedViolationError(f"violation of kind {v.kind} has no span")
    ordered = sorted(violations, key=lambda v: (v.span[0], v.span[1]))
    groups: List[list] = []
    for v in ordered:
        if groups and v.span[0] < groups[-1][1]:
            groups[-1][1] = max(groups[-1][1], v.span[1])
            groups[-1][2].append(v)
        else:
            groups.append([v.span[0], v.span[1], [v]])

    def label(group_violations: Sequence[Violation]) -> str:
        kinds = {v.kind for v in group_violations}
        if kinds - {VIOLATION_ENTITY}:
            return "source-material"
        categories = sorted({v.category.value for v in group_violations if v.category})
        return "+".join(categories) if categories else "source-material"

    text = draft
    for start, end, group in reversed(groups):
        text = text[:start] + f"[REDACTED:{label(group)}]" + text[end:]
    return text


@dataclass(frozen=True)
class SupervisorResult:
    status: str  # "agree" | "agree-violation" | "skipped"
    notes: str = ""


class SupervisorBackend(Protocol):
    def review(self, context_summary: str, draft_text: str) -> bool:
        """True when the draft looks compliant. May raise if unavailable."""
        ...


class RuleBasedSupervisor:
    """Default advisory supervisor: re-runs the rule-based verdict."""

    def __init__(
        self,
        ctx: SessionPolicyContext,
        asset_chunks: Sequence[Chunk],
        cfg: IngestConfig,
        verbatim_threshold: int = DEFAULT_VERBATIM_THRESHOLD,
        attribution_min: int = DEFAULT_ATTRIBUTION_MIN,
    ):
        self._ctx = ctx
        self._chunks = list(asset_chunks)
        self._cfg = cfg
        self._verbatim_threshold = verbatim_threshold
        self._attribution_min = attribution_min

    def review(self, context_summary: str, draft_text: str) -> bool:
        verdict = compliance_verdict(
            self._ctx,
            draft_text,
            self._chunks,
            self._cfg,
            verbatim_threshold=self._verbatim_threshold,
            attribution_min=self._attribution_min,
        )
        return verdict.compliant


def supervisor_check(
    ctx: SessionPolicyContext,
    draft_text: str,
    backend: SupervisorBackend,
    rule_verdict: Verdict,
) -> SupervisorResult:
    """Advisory second opinion; never flips a violation to compliant."""
    summary = (
        f"principal={ctx.principal} asset={ctx.asset} purpose={ctx.purpose} "
        f"prohibitions={len(ctx.disclose_prohibitions())}"
    )
    try:
        looks_compliant = backend.review(summary, draft_text)
    except Exception as exc:  # backend unavailable: degrade, never block
        return SupervisorResult(status="skipped", notes=f"supervisor-skipped: {exc}")
    if rule_verdict.compliant and looks_compliant:
        return SupervisorResult(status="agree")
    if not rule_verdict.compliant and not looks_compliant:
        return SupervisorResult(status="agree-violation")
    if rule_verdict.compliant and not looks_compliant:
        return SupervisorResult(status="flagged", notes="supervisor flagged a compliant draft")
    return SupervisorResult(status="agree-violation", notes="supervisor missed a rule violation")
