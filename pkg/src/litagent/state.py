"""Mutable per-run state shared by the agent tools."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from datetime import date
from typing import Any, Callable

import numpy as np

from .corpus import Chunk, Document
from .embedding import Embedder, HashingEmbedder, HybridVector, Tokenizer, VectorCache, WordHashTokenizer
from .llm import CostTracker, Gateway
from .providers import ProviderSet

# summaries at or above this score count as evidence in the status line
EVIDENCE_SCORE_CUTOFF = 1

STAGES = ("search", "top_k", "rcs", "attribution")


@dataclass
class Services:
    """Everything a run talks to besides its config."""

    gateway: Gateway
    providers: ProviderSet
    embedder: Embedder = field(default_factory=HashingEmbedder)
    tokenizer: Tokenizer = field(default_factory=WordHashTokenizer)
    jobs: int = 8
    current_year: int = field(default_factory=lambda: date.today().year)
    vector_cache: VectorCache | None = None


@dataclass(frozen=True)
class ToolCall:
    tool: str
    arguments: str
    outcome: str
    timestamp: float = field(default_factory=time.time, compare=False)

    def to_dict(self) -> dict[str, Any]:
        return {"tool": self.tool, "arguments": self.arguments, "outcome": self.outcome, "timestamp": self.timestamp}


@dataclass
class EvidenceSummary:
    doc_key: str
    chunk: Chunk
    summary: str
    relevance_score: int
    citation: str
    extra: dict[str, str] = field(default_factory=dict)
    similarity: float = 0.0
    # (gather round, cosine rank within that round): the tie-break for equal scores
    rank: tuple[int, int] = (0, 0)

    def __post_init__(self) -> None:
        if not 0 <= self.relevance_score <= 10:
            raise ValueError("relevance_score must be within 0-10")

    @property
    def sort_key(self) -> tuple[int, int, int]:
        return (-self.relevance_score, *self.rank)

    def to_dict(self) -> dict[str, Any]:
        return {
            "doc_key": self.doc_key,
            "chunk": self.chunk.key,
            "summary": self.summary,
            "relevance_score": self.relevance_score,
            "citation": self.citation,
            "extra": dict(self.extra),
            "similarity": round(self.similarity, 12),
            "rank": list(self.rank),
        }


@dataclass
class Answer:
    question: str
    text: str
    cited: list[str] = field(default_factory=list)
    cited_chunks: list[str] = field(default_factory=list)
    context_keys: list[str] = field(default_factory=list)
    insufficient: bool = False
    attributed_dois: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "question": self.question,
            "text": self.text,
            "cited": list(self.cited),
            "cited_chunks": list(self.cited_chunks),
            "context_keys": list(self.context_keys),
            "insufficient": self.insufficient,
            "attributed_dois": list(self.attributed_dois),
        }


INSUFFICIENT_TEXT = "I cannot answer."


@dataclass
class AgentState:
    question: str
    docs: dict[str, Document] = field(default_factory=dict)
    chunks: list[Chunk] = field(default_factory=list)
    vectors: dict[tuple[str, int], HybridVector] = field(default_factory=dict)
    title_vectors: dict[str, HybridVector] = field(default_factory=dict)
    summaries: list[EvidenceSummary] = field(default_factory=list)
    action_log: list[ToolCall] = field(default_factory=list)
    cost: CostTracker = field(default_factory=CostTracker)
    step_count: int = 0
    gather_round: int = 0
    new_docs_since_gather: bool = False
    gathered_phrases: set[str] = field(default_factory=set)
    top_k_docs: set[str] = field(default_factory=set)
    skip_log: list[str] = field(default_factory=list)
    answer: Answer | None = None
    # optional score adjustment applied to each new summary (used by article runs)
    score_adjust: Callable[[EvidenceSummary], int] | None = None

    def summarized_chunks(self) -> set[str]:
        return {s.chunk.key for s in self.summaries}

    def evidence_count(self, cutoff: int = EVIDENCE_SCORE_CUTOFF) -> int:
        return sum(1 for s in self.summaries if s.relevance_score >= cutoff)

    def doc_id(self, doc_key: str) -> str:
        """Stage bookkeeping identifier: the DOI when known, else the doc key."""
        doc = self.docs.get(doc_key)
        return doc.doi if doc is not None and doc.doi else f"key:{doc_key}"

    def stage_sets(self) -> dict[str, list[str]]:
        search = {self.doc_id(k) for k in self.docs}
        top_k = {self.doc_id(k) for k in self.top_k_docs}
        rcs = {self.doc_id(s.doc_key) for s in self.summaries if s.relevance_score > 0}
        attribution = {self.doc_id(k) for k in (self.answer.cited if self.answer else [])}
        return {
            "search": sorted(search),
            "top_k": sorted(top_k),
            "rcs": sorted(rcs),
            "attribution": sorted(attribution),
        }

    def chunk_vector(self, chunk: Chunk) -> np.ndarray:
        return self.vectors[(chunk.doc_key, chunk.chunk_id)].full
