"""Document segmentation, sensitivity tagging, and index handoff.

Segmentation windows over whitespace tokens, preferring paragraph breaks;
tagging is a deterministic union of regex detectors (email, phone, part
number) and gazetteer literal matches (names, addresses, organizations,
incident phrases). Policy semantics are never evaluated here: chunks only
carry tags and a policy reference.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence

from .errors import AssetPolicyMismatchError, EmptyDocumentError
from .policy import Policy, SensitivityTag


@dataclass(frozen=True)
class DocumentSource:
    """One plain-text or markdown document belonging to an asset."""

    doc_id: str
    asset_id: str
    provider_id: str
    title: str
    body: str

    def __post_init__(self):
        if not (self.doc_id and self.asset_id and self.provider_id):
            raise ValueError("doc_id, asset_id, and provider_id must be non-empty")
        if not self.body:
            raise EmptyDocumentError(f"document {self.doc_id!r} has an empty body")


class TagSpan(NamedTuple):
    tag: SensitivityTag
    start: int
    end: int


@dataclass(frozen=True)
class ChunkMetadata:
    asset_id: str
    doc_id: str
    provider_id: str
    section_heading: Optional[str]
    char_range: tuple
    sensitivity_tags: frozenset
    tag_spans: tuple

    def __post_init__(self):
        start, end = self.char_range
        if end <= start:
            raise ValueError("char_range end must exceed start")
        spanned = {s.tag for s in self.tag_spans}
        for tag in self.sensitivity_tags:
            if tag is SensitivityTag.CONTAINS_PII:
                continue
            if tag not in spanned:
                raise ValueError(f"tag {tag.value} has no recorded span")


@dataclass(frozen=True)
class Chunk:
    """A retrieval unit derived from a document; inherits the asset's policy."""

    chunk_id: str
    text: str
    metadata: ChunkMetadata


# Gazetteer keys must be one of these detector categories.
GAZETTEER_CATEGORIES = (
    SensitivityTag.PII_PERSON_NAME,
    SensitivityTag.PII_ADDRESS,
    SensitivityTag.ID_ORG,
    SensitivityTag.NARRATIVE_INCIDENT,
)


@dataclass(frozen=True)
class IngestConfig:
    """Windowing parameters and the gazetteer backing literal detectors."""

    window_tokens: int = 200
    overlap_tokens: int = 40
    gazetteer: Mapping[str, Sequence[str]] = field(default_factory=dict)

    def __post_init__(self):
        if self.window_tokens <= 0:
            raise ValueError("window_tokens must be positive")
        if not (0 <= self.overlap_tokens < self.window_tokens):
            raise ValueError("overlap_tokens must be non-negative and below window_tokens")
        valid = {t.value for t in GAZETTEER_CATEGORIES}
        for key in self.gazetteer:
            if key not in valid:
                raise ValueError(f"gazetteer category {key!r} is not detectable")

    def gazetteer_for(self, tag: SensitivityTag) -> Sequence[str]:
        return self.gazetteer.get(tag.value, ())


# ---------------------------------------------------------------------------
# Detectors
# ---------------------------------------------------------------------------

EMAIL_RE = re.compile(r"[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}")
# Runs of at least 7 digits with optional single separators, optional leading +.
PHONE_RE = re.compile(r"(?<![\d+])\+?\d(?:[\s().\-/]?\d){6,}(?!\d)")
PART_NUMBER_RE = re.compile(r"\b[A-Z]{2,4}-\d{3,6}\b")

_PATTERN_DETECTORS = (
    (SensitivityTag.PII_EMAIL, EMAIL_RE),
    (SensitivityTag.PII_PHONE, PHONE_RE),
    (SensitivityTag.ID_PART_NUMBER, PART_NUMBER_RE),
)


def _gazetteer_regex(literal: str) -> re.Pattern:
    # Word-bounded, case-insensitive; any interior whitespace matches runs of
    # whitespace so literals survive line wrapping.
    parts = [re.escape(tok) for tok in literal.split()]
    return re.compile(r"(?<!\w)" + r"\s+".join(parts) + r"(?!\w)", re.IGNORECASE)


def detect_spans(
    text: str,
    cfg: IngestConfig,
    categories: Optional[Iterable[SensitivityTag]] = None,
) -> list:
    """All detector matches in text as TagSpans, sorted by position.

    The same detectors back ingestion tagging and the post-generation guard;
    restricting categories narrows to the requested tags only.
    """
    wanted = set(categories) if categories is not None else None

    def _want(tag: SensitivityTag) -> bool:
        return wanted is None or tag in wanted

    spans = []
    for tag, pattern in _PATTERN_DETECTORS:
        if not _want(tag):
            continue
        for m in pattern.finditer(text):
            spans.append(TagSpan(tag, m.start(), m.end()))
    for tag in GAZETTEER_CATEGORIES:
        if not _want(tag):
            continue
        for literal in cfg.gazetteer_for(tag):
            if not literal.strip():
                continue
            for m in _gazetteer_regex(literal).finditer(text):
                spans.append(TagSpan(tag, m.start(), m.end()))
    spans.sort(key=lambda s: (s.start, s.end, s.tag.value))
    return spans


def tag_sensitivity(chunk_text: str, cfg: IngestConfig) -> tuple:
    """Union of all detectors over the text: (tags, spans).

    Any pii.* hit implies contains_pii in the tag set.
    """
    spans = detect_spans(chunk_text, cfg)
    tags = {s.tag for s in spans}
    if any(t.is_pii for t in tags):
        tags.add(SensitivityTag.CONTAINS_PII)
    return frozenset(tags), tuple(spans)


# ---------------------------------------------------------------------------
# Segmentation
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"\S+")
_HEADING_RE = re.compile(r"^(#+)[ \t]*(.*)$", re.MULTILINE)
_BLANK_LINE_RE = re.compile(r"\n[ \t]*\n")


def _token_spans(body: str) -> list:
    return [(m.start(), m.end()) for m in _TOKEN_RE.finditer(body)]


def _headings(body: str) -> list:
    return [(m.start(), m.group(2).strip() or None) for m in _HEADING_RE.finditer(body)]


def segment_document(doc: DocumentSource, cfg: IngestConfig) -> list:
    """Split a document into overlapping windowed chunks.

    Chunk char ranges cover the whole body; consecutive chunks share
    overlap_tokens tokens; boundaries snap to the paragraph break closest to
    the window size, within 20 percent. Deterministic for identical input.
    """
    body = doc.body
    if not body.strip():
        raise EmptyDocumentError(f"document {doc.doc_id!r} has no content")
    toks = _token_spans(body)
    n = len(toks)
    heading_ranges = [
        (m.start(), m.end()) for m in _HEADING_RE.finditer(body)
    ]

    def _inside_heading(pos: int) -> bool:
        return any(start <= pos < end for start, end in heading_ranges)

    bounds = []
    s = 0
    max_window = int(math.floor(1.2 * cfg.window_tokens))
    min_window = max(1, int(math.ceil(0.8 * cfg.window_tokens)))
    while True:
        if n - s <= max_window:
            bounds.append((s, n))
            break
        target = s + cfg.window_tokens
        best = None
        for j in range(s + min_window, min(s + max_window, n - 1) + 1):
            gap = body[toks[j - 1][1] : toks[j][0]]
            if not _BLANK_LINE_RE.search(gap):
                continue
            if _inside_heading(toks[j - 1][0]):
                continue  # a heading binds to the text that follows it
            if best is None or abs(j - target) < abs(best - target):
                best = j
        e = best if best is not None else target
        e = max(e, s + cfg.overlap_tokens + 1)  # always make forward progress
        bounds.append((s, e))
        s = e - cfg.overlap_tokens

    headings = _headings(body)
    chunks = []
    prev_end = 0
    for ordinal, (ts, te) in enumerate(bounds):
        start = 0 if ordinal == 0 else min(toks[ts][0], prev_end)
        end = len(body) if te == n else toks[te - 1][1]
        prev_end = end
        heading = None
        for pos, title in headings:
            if pos <= start:
                heading = title
            else:
                break
        text = body[start:end]
        tags, spans = tag_sensitivity(text, cfg)
        meta = ChunkMetadata(
            asset_id=doc.asset_id,
            doc_id=doc.doc_id,
            provider_id=doc.provider_id,
            section_heading=heading,
            char_range=(start, end),
            sensitivity_tags=tags,
            tag_spans=spans,
        )
        chunks.append(Chunk(chunk_id=f"{doc.doc_id}:{ordinal:04d}", text=text, metadata=meta))
    return chunks


# ---------------------------------------------------------------------------
# Index handoff
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IngestSummary:
    doc_id: str
    chunk_count: int
    tag_histogram: dict


def ingest_asset(doc: DocumentSource, policy: Policy, cfg: IngestConfig, index) -> IngestSummary:
    """Segment, tag, embed, and upsert one document under its asset policy.

    Re-ingesting the same doc_id replaces its prior chunks. The histogram
    counts detector spans over the whole body; contains_pii counts all pii
    spans.
    """
    from .index import IndexEntry, embed_text  # local import avoids a cycle at module load

    if policy.target_asset != doc.asset_id:
        raise AssetPolicyMismatchError(
            f"policy {policy.policy_id!r} targets {policy.target_asset!r}, "
            f"document {doc.doc_id!r} belongs to {doc.asset_id!r}"
        )
    chunks = segment_document(doc, cfg)
    entries = [
        IndexEntry(
            chunk_id=c.chunk_id,
            vector=embed_text(c.text),
            metadata=c.metadata,
            policy_id=policy.policy_id,
        )
        for c in chunks
    ]
    index.remove_doc(doc.doc_id)
    index.upsert(entries)

    body_spans = detect_spans(doc.body, cfg)
    hist = Counter(s.tag.value for s in body_spans)
    pii_total = sum(1 for s in body_spans if s.tag.is_pii)
    if pii_total:
        hist[SensitivityTag.CONTAINS_PII.value] = pii_total
    return IngestSummary(doc_id=doc.doc_id, chunk_count=len(chunks), tag_histogram=dict(hist))
