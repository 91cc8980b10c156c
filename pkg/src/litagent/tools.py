"""The four agent tools: paper search, evidence gathering, answering and citation traversal."""

from __future__ import annotations

import logging
import math
import re
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from typing import Callable, Hashable, Iterable, Sequence, TypeVar

from .config import EngineConfig, TraversalConfig
from .corpus import Chunk, CorpusError, Document, chunk_document, group_by_identity, keys_collide
from .embedding import HybridVector, hybrid_embed, mmr_filter, rank_topk
from .llm import CompletionRequest, parse_rcs
from .providers import (
    FUTURE_CITERS,
    PAST_REFERENCES,
    CitationRecord,
    ProviderError,
    SearchError,
    fetch_citations,
    merge_records,
    parse_search_string,
    search_papers,
)
from .state import INSUFFICIENT_TEXT, AgentState, Answer, EvidenceSummary, Services

log = logging.getLogger(__name__)

H = TypeVar("H", bound=Hashable)


class ToolFailure(RuntimeError):
    """A tool could not run; reported back to the agent rather than raised to the caller."""


# -- corpus intake ------------------------------------------------------------------


def _embed_chunks(chunks: Sequence[Chunk], services: Services) -> list[HybridVector]:
    cache = services.vector_cache
    model = services.embedder.model_id
    missing = [c for c in chunks if cache is None or cache.get((c.doc_key, c.chunk_id, model)) is None]
    fresh = dict(zip((id(c) for c in missing), hybrid_embed([c.text for c in missing], services.embedder, services.tokenizer)))
    out = []
    for c in chunks:
        if id(c) in fresh:
            vec = fresh[id(c)]
            if cache is not None:
                cache.put((c.doc_key, c.chunk_id, model), vec)
        else:
            vec = cache.get((c.doc_key, c.chunk_id, model))
        out.append(vec)
    return out


def add_documents(state: AgentState, docs: Iterable[Document], config: EngineConfig, services: Services) -> int:
    """Chunk, embed and store documents not already present; returns the number added."""
    existing = []
    for d in state.docs.values():
        try:
            existing.append(d.identity)
        except CorpusError:
            pass
    added = 0
    for doc in docs:
        try:
            ident = doc.identity
        except CorpusError:
            ident = None
        if ident is not None and any(keys_collide(ident, e) for e in existing):
            continue
        if doc.doc_key in state.docs:
            if ident is None:
                continue
            base, n = doc.doc_key, 2
            while f"{base}{n}" in state.docs:
                n += 1
            doc.doc_key = f"{base}{n}"
        p = config.parsing
        algorithm = p.chunking_algorithm
        if algorithm == "sections" and not doc.sections:
            log.warning("%s has no sections; falling back to simple_overlap", doc.doc_key)
            algorithm = "simple_overlap"
        chunks = chunk_document(doc, p.chunksize, p.overlap, algorithm)
        if not chunks:
            state.skip_log.append(f"skipped {doc.doc_key}: no text after parsing")
            continue
        vectors = _embed_chunks(chunks, services)
        state.docs[doc.doc_key] = doc
        state.chunks.extend(chunks)
        for c, v in zip(chunks, vectors):
            state.vectors[(c.doc_key, c.chunk_id)] = v
        state.title_vectors[doc.doc_key] = hybrid_embed([doc.title or doc.doc_key], services.embedder, services.tokenizer)[0]
        if ident is not None:
            existing.append(ident)
        added += 1
    if added:
        state.new_docs_since_gather = True
    return added


# -- paper search -------------------------------------------------------------------


def tool_paper_search(search_string: str, state: AgentState, config: EngineConfig, services: Services) -> int:
    try:
        query = parse_search_string(search_string, limit=config.search_limit)
    except SearchError as exc:
        raise ToolFailure(str(exc)) from exc
    try:
        docs = search_papers(query, services.providers, state.skip_log)
    except ProviderError as exc:
        raise ToolFailure(f"paper search failed: {exc}") from exc
    return add_documents(state, docs, config, services)


# -- gather evidence ----------------------------------------------------------------


def _candidate_docs(query: HybridVector, state: AgentState, config: EngineConfig) -> list[str]:
    ranked = rank_topk(query, [(k, state.title_vectors[k]) for k in state.docs], len(state.docs), tiebreak=lambda k: k)
    return mmr_filter(
        ranked,
        config.docs_index_mmr_lambda,
        config.consider_sources,
        item_vector=lambda k: state.title_vectors[k].full,
    )


def rcs_request(chunk: Chunk, doc: Document, question: str, config: EngineConfig) -> CompletionRequest:
    return CompletionRequest(
        model=config.summary_llm,
        system=config.prompts.render("rcs_system", summary_length=config.summary_length),
        user=config.prompts.render("rcs_user", citation=doc.citation(), text=chunk.text, question=question),
        temperature=config.summary_temperature,
    )


def tool_gather_evidence(question: str, state: AgentState, config: EngineConfig, services: Services) -> int:
    """Top-k cosine retrieval followed by per-chunk reranking summaries; returns new summary count."""
    if not state.docs:
        return 0
    if not state.new_docs_since_gather and question in state.gathered_phrases:
        return 0
    query = hybrid_embed([question], services.embedder, services.tokenizer)[0]
    allowed = set(_candidate_docs(query, state, config))
    pool = [(c, state.vectors[(c.doc_key, c.chunk_id)]) for c in state.chunks if c.doc_key in allowed]
    top = rank_topk(query, pool, config.consider_sources)
    state.top_k_docs.update(c.doc_key for c, _ in top)
    round_ = state.gather_round
    state.gather_round += 1
    state.new_docs_since_gather = False
    state.gathered_phrases.add(question)

    done = state.summarized_chunks()
    todo = [(rank, chunk, sim) for rank, (chunk, sim) in enumerate(top) if chunk.key not in done]
    new: list[EvidenceSummary] = []
    if config.skip_rcs:
        for rank, chunk, sim in todo:
            doc = state.docs[chunk.doc_key]
            score = min(10, max(0, round(10 * sim)))
            new.append(EvidenceSummary(chunk.doc_key, chunk, chunk.text, score, doc.citation(), {}, sim, (round_, rank)))
    else:
        requests = [rcs_request(chunk, state.docs[chunk.doc_key], question, config) for _, chunk, _ in todo]

        def run(req: CompletionRequest) -> str:
            return services.gateway.complete(req, state.cost)

        with ThreadPoolExecutor(max_workers=max(1, services.jobs)) as pool_exec:
            replies = list(pool_exec.map(run, requests))
        for (rank, chunk, sim), reply in zip(todo, replies):
            parsed = parse_rcs(reply, config.rcs_extra_keys)
            if parsed is None:
                continue
            doc = state.docs[chunk.doc_key]
            new.append(
                EvidenceSummary(chunk.doc_key, chunk, parsed.summary, parsed.relevance_score, doc.citation(), parsed.extra, sim, (round_, rank))
            )
        if todo and not new:
            log.warning("all %d summaries were malformed", len(todo))
    if state.score_adjust is not None:
        for s in new:
            s.relevance_score = min(10, max(0, state.score_adjust(s)))
    state.summaries.extend(new)
    state.summaries.sort(key=lambda s: s.sort_key)
    return len(new)


# -- generate answer ----------------------------------------------------------------

_PAREN = re.compile(r"\(([^()]*)\)")
_CITE = re.compile(r"([A-Za-z][\w\-.]*?)\s+pages?\s+(\d+)(?:\s*[-–]\s*(\d+))?")


def extract_citations(text: str, valid_keys: Iterable[str] | None = None) -> tuple[list[str], list[str]]:
    """Pull ``(Key pages a-b)`` citations out of an answer.

    Returns ``(doc_keys, chunk_keys)`` in first-appearance order.  With
    ``valid_keys`` (chunk keys shown in the context), citations to documents
    not in the context are dropped.
    """
    valid_chunks = set(valid_keys) if valid_keys is not None else None
    valid_docs = {k.rsplit(" pages ", 1)[0] for k in valid_chunks} if valid_chunks is not None else None
    docs: list[str] = []
    chunks: list[str] = []
    for group in _PAREN.findall(text):
        for m in _CITE.finditer(group):
            key = m.group(1)
            pages = f"pages {m.group(2)}-{m.group(3)}" if m.group(3) else f"pages {m.group(2)}"
            if valid_docs is not None and key not in valid_docs:
                log.info("dropping citation to unknown key %s", key)
                continue
            if key not in docs:
                docs.append(key)
            ck = f"{key} {pages}"
            if (valid_chunks is None or ck in valid_chunks) and ck not in chunks:
                chunks.append(ck)
    return docs, chunks


def format_context(summaries: Sequence[EvidenceSummary]) -> str:
    blocks = []
    for s in summaries:
        extra = "".join(f"\n{k}: {v}" for k, v in sorted(s.extra.items()))
        blocks.append(f"{s.chunk.key}: {s.summary}{extra}\nFrom {s.citation}")
    return "\n\n".join(blocks)


def tool_generate_answer(question: str, state: AgentState, config: EngineConfig, services: Services) -> Answer:
    selected = [s for s in state.summaries if s.relevance_score > 0][: config.answer_cutoff]
    if not selected:
        answer = Answer(question, INSUFFICIENT_TEXT, insufficient=True)
        state.answer = answer
        return answer
    context = format_context(selected)
    prompt = config.prompts.render("answer", context=context, question=question, answer_length=config.answer_length)
    text = services.gateway.complete(CompletionRequest(config.llm, "", prompt, config.temperature), state.cost)
    keys = [s.chunk.key for s in selected]
    cited, cited_chunks = extract_citations(text, keys)
    dois = sorted({state.docs[k].doi for k in cited if state.docs[k].doi})
    answer = Answer(
        question=question,
        text=text,
        cited=cited,
        cited_chunks=cited_chunks,
        context_keys=keys,
        insufficient="i cannot answer" in text.lower(),
        attributed_dois=dois,
    )
    state.answer = answer
    return answer


# -- citation traversal -------------------------------------------------------------


def overlap_threshold(fraction: Fraction, n_sources: int) -> int:
    return max(1, math.ceil(Fraction(fraction) * n_sources))


def filter_overlap(
    candidate_sets: Sequence[Iterable[H]],
    previous: Iterable[H],
    theta_o: int,
    limit: int,
    citers: Callable[[H], int] = lambda d: 0,
    tiebreak: Callable[[H], object] = lambda d: d,
) -> list[H]:
    """Keep candidates cited by at least ``theta_o`` sets, highest overlap first, up to ``limit``.

    Bins are visited from overlap ``len(candidate_sets)`` down to ``theta_o``;
    papers in ``previous`` are dropped, and a bin too large for the remaining
    budget keeps the members with the most future citers (``tiebreak`` orders
    equal counts).
    """
    if theta_o < 1:
        raise ValueError("theta_o must be at least 1")
    if limit < 1:
        raise ValueError("limit must be at least 1")
    counts = Counter(d for s in candidate_sets for d in set(s))
    bins: dict[int, list[H]] = defaultdict(list)
    for d, o in counts.items():
        bins[o].append(d)
    prev = set(previous)
    out: list[H] = []
    for o in range(len(candidate_sets), 0, -1):
        if o < theta_o or len(out) >= limit:
            break
        members = sorted((d for d in bins.get(o, []) if d not in prev), key=lambda d: (-citers(d), tiebreak(d)))
        out.extend(members[: limit - len(out)])
    return out


def _select_direction(
    sources: Sequence[Document], direction: str, params: TraversalConfig, services: Services
) -> list[CitationRecord]:
    per_paper = fetch_citations(sources, direction, services.providers)
    records: list[CitationRecord] = [r for recs in per_paper for r in recs]
    source_keys = []
    for d in sources:
        try:
            source_keys.append(d.identity)
        except CorpusError:
            source_keys.append((f"\x00{d.doc_key}", None))
    groups = group_by_identity(source_keys + [r.key for r in records])
    previous = set(groups[: len(sources)])
    rec_groups = groups[len(sources):]
    canonical: dict[int, list[CitationRecord]] = defaultdict(list)
    for g, r in zip(rec_groups, records):
        canonical[g].append(r)
    merged = {g: merge_records(rs)[0] for g, rs in canonical.items()}
    sets: list[set[int]] = []
    i = 0
    for recs in per_paper:
        sets.append(set(rec_groups[i : i + len(recs)]))
        i += len(recs)
    theta = overlap_threshold(params.overlap_fraction, len(per_paper))
    chosen = filter_overlap(sets, previous, theta, params.limit, citers=lambda g: merged[g].citers, tiebreak=lambda g: merged[g].sort_key)
    return [merged[g] for g in chosen]


def feather(*lists: Sequence[CitationRecord]) -> list[CitationRecord]:
    """Round-robin interleave, dropping records whose identity was already taken."""
    out: list[CitationRecord] = []
    for i in range(max((len(x) for x in lists), default=0)):
        for lst in lists:
            if i < len(lst) and not any(keys_collide(lst[i].key, o.key) for o in out):
                out.append(lst[i])
    return out


def traverse_citations(state: AgentState, config: EngineConfig, services: Services, params: TraversalConfig | None = None) -> int:
    """One-degree expansion from papers behind high-scoring evidence; returns new paper count."""
    params = params or config.traversal
    prev_keys: list[str] = []
    for s in state.summaries:
        if s.relevance_score >= params.score_threshold and s.doc_key not in prev_keys:
            prev_keys.append(s.doc_key)
    if not prev_keys:
        return 0
    sources = [state.docs[k] for k in prev_keys]
    selected: dict[str, list[CitationRecord]] = {}
    errors = []
    for direction in (FUTURE_CITERS, PAST_REFERENCES):
        try:
            selected[direction] = _select_direction(sources, direction, params, services)
        except ProviderError as exc:
            errors.append(str(exc))
            selected[direction] = []
    if len(errors) == 2:
        raise ToolFailure("citation providers failed: " + "; ".join(errors))
    docs = []
    for record in feather(selected[FUTURE_CITERS], selected[PAST_REFERENCES]):
        doc = services.providers.resolver.resolve(record) if services.providers.resolver else None
        if doc is None:
            state.skip_log.append(f"skipped citation {record.title or record.doi}: full text unavailable")
            continue
        docs.append(doc)
    return add_documents(state, docs, config, services)


__all__ = [
    "ToolFailure",
    "add_documents",
    "extract_citations",
    "feather",
    "filter_overlap",
    "format_context",
    "overlap_threshold",
    "tool_gather_evidence",
    "tool_generate_answer",
    "tool_paper_search",
    "traverse_citations",
]
