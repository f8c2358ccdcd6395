"""Deterministic trigram embedding and a metadata-filterable exhaustive kNN index.

The embedder hashes character trigrams of whitespace-normalized lowercase
text into 256 buckets with FNV-1a and L2-normalizes the counts; it is a
pluggable stand-in for a learned embedder and keeps retrieval fully
reproducible. The index is an exhaustive scan (filter first, then rank),
persisted as versioned JSONL.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import CorruptIndexError
from .ingest import ChunkMetadata, TagSpan
from .policy import SensitivityTag

EMBED_DIM = 256
FORMAT_VERSION = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def _fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


def _quantize(vector: np.ndarray) -> np.ndarray:
    # 9 significant digits: the exact precision of the persistence format,
    # so in-memory entries and reloaded entries are bit-identical.
    return np.array([float(f"{x:.9g}") for x in vector], dtype=np.float64)


def embed_text(text: str) -> np.ndarray:
    """Embed text as L2-normalized character-trigram bucket counts.

    Pure function; empty or whitespace-only text maps to the zero vector.
    """
    normalized = " ".join(text.lower().split())
    counts = np.zeros(EMBED_DIM, dtype=np.float64)
    for i in range(len(normalized) - 2):
        bucket = _fnv1a64(normalized[i : i + 3].encode("utf-8")) % EMBED_DIM
        counts[bucket] += 1.0
    norm = float(np.linalg.norm(counts))
    if norm == 0.0:
        return counts
    return counts / norm


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product of unit (or zero) vectors; zero vector pairs to 0."""
    return float(np.dot(a, b))


@dataclass(frozen=True)
class IndexEntry:
    chunk_id: str
    vector: np.ndarray
    metadata: ChunkMetadata
    policy_id: str

    def __post_init__(self):
        vector = np.asarray(self.vector, dtype=np.float64)
        if vector.shape != (EMBED_DIM,):
            raise ValueError(f"vector must have dimension {EMBED_DIM}")
        object.__setattr__(self, "vector", _quantize(vector))


@dataclass(frozen=True)
class MetadataFilter:
    require_asset: Optional[str] = None
    exclude_tags: frozenset = frozenset()
    exclude_chunk_ids: frozenset = frozenset()

    def matches(self, entry: IndexEntry) -> bool:
        if self.require_asset is not None and entry.metadata.asset_id != self.require_asset:
            return False
        if entry.chunk_id in self.exclude_chunk_ids:
            return False
        if self.exclude_tags and entry.metadata.sensitivity_tags & self.exclude_tags:
            return False
        return True


def _metadata_to_dict(m: ChunkMetadata) -> dict:
    return {
        "asset_id": m.asset_id,
        "doc_id": m.doc_id,
        "provider_id": m.provider_id,
        "section_heading": m.section_heading,
        "char_range": list(m.char_range),
        "sensitivity_tags": sorted(t.value for t in m.sensitivity_tags),
        "tag_spans": [[s.tag.value, s.start, s.end] for s in m.tag_spans],
    }


def _metadata_from_dict(d: dict) -> ChunkMetadata:
    return ChunkMetadata(
        asset_id=d["asset_id"],
        doc_id=d["doc_id"],
        provider_id=d["provider_id"],
        section_heading=d.get("section_heading"),
        char_range=tuple(d["char_range"]),
        sensitivity_tags=frozenset(SensitivityTag(t) for t in d["sensitivity_tags"]),
        tag_spans=tuple(TagSpan(SensitivityTag(t), s, e) for t, s, e in d["tag_spans"]),
    )


class VectorIndex:
    """Exhaustive-scan nearest-neighbor index with snapshot reads.

    Readers take an atomic reference to the entry map, so queries never
    observe a partially applied upsert batch; writers serialize on a lock.
    """

    def __init__(self):
        self._entries: dict = {}
        self._write_lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._entries)

    def upsert(self, entries: Iterable[IndexEntry]) -> None:
        with self._write_lock:
            updated = dict(self._entries)
            for e in entries:
                updated[e.chunk_id] = e
            self._entries = updated

    def remove_doc(self, doc_id: str) -> int:
        with self._write_lock:
            kept = {
                cid: e for cid, e in self._entries.items() if e.metadata.doc_id != doc_id
            }
            removed = len(self._entries) - len(kept)
            self._entries = kept
            return removed

    def get(self, chunk_id: str) -> Optional[IndexEntry]:
        return self._entries.get(chunk_id)

    def entries(self) -> list:
        return list(self._entries.values())

    def entries_for_asset(self, asset_id: str) -> list:
        return [e for e in self._entries.values() if e.metadata.asset_id == asset_id]

    def has_asset(self, asset_id: str) -> bool:
        return any(e.metadata.asset_id == asset_id for e in self._entries.values())

    def filtered_knn(
        self, query: np.ndarray, filt: MetadataFilter, k: int
    ) -> list:
        """Top-k (chunk_id, score) among entries passing the filter.

        Filtering happens before ranking; scores descend, ties break on
        ascending chunk_id; fewer than k results when fewer entries pass.
        """
        if k <= 0:
            raise ValueError("k must be positive")
        snapshot = self._entries
        scored = [
            (cid, cosine_similarity(query, e.vector))
            for cid, e in snapshot.items()
            if filt.matches(e)
        ]
        scored.sort(key=lambda pair: (-pair[1], pair[0]))
        return scored[:k]

    # -- persistence --------------------------------------------------------

    def persist(self, path) -> None:
        path = Path(path)
        snapshot = self._entries
        with path.open("w", encoding="utf-8") as fh:
            fh.write(json.dumps({"format_version": FORMAT_VERSION}) + "\n")
            for e in snapshot.values():
                record = {
                    "chunk_id": e.chunk_id,
                    "vector": [float(x) for x in e.vector],
                    "metadata": _metadata_to_dict(e.metadata),
                    "policy_id": e.policy_id,
                }
                fh.write(json.dumps(record) + "\n")

    @classmethod
    def load(cls, path) -> "VectorIndex":
        path = Path(path)
        index = cls()
        entries = {}
        with path.open("r", encoding="utf-8") as fh:
            header_line = fh.readline()
            if not header_line.strip():
                raise CorruptIndexError(f"{path}: missing header line")
            try:
                header = json.loads(header_line)
            except json.JSONDecodeError as exc:
                raise CorruptIndexError(f"{path}: unreadable header: {exc}")
            if not isinstance(header, dict) or header.get("format_version") != FORMAT_VERSION:
                raise CorruptIndexError(f"{path}: unsupported format header {header_line.strip()!r}")
            for lineno, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                    entry = IndexEntry(
                        chunk_id=record["chunk_id"],
                        vector=np.array(record["vector"], dtype=np.float64),
                        metadata=_metadata_from_dict(record["metadata"]),
                        policy_id=record["policy_id"],
                    )
                except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
                    raise CorruptIndexError(f"{path}:{lineno}: corrupt entry: {exc}")
                entries[entry.chunk_id] = entry
        index._entries = entries
        return index
