"""Literature search and citation-graph providers.

Offline runs use :class:`FixtureProvider`, which reads a fixture directory:

``papers.jsonl``
    one paper per line: ``doc_key``, ``title``, optional ``doi``, ``year``,
    ``authors``, ``journal``, ``citation_count`` and full text as ``text``,
    ``sections`` (list of ``[title, body]``), ``tei_file`` or ``text_file``
    (paths relative to the directory).  Papers without any full text are
    search hits that cannot be resolved.
``search.json``
    ``{"keyword phrase": ["doc_key or doi", ...]}``; a query hits every phrase
    it contains (case-insensitive), in file order.
``citations.json``
    ``{"<provider>": {"references" | "citers": {"<doi or doc_key>": [record, ...]}}}``
    where a record is ``{"title": ..., "doi": ..., "citation_count": ...}``.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Protocol, Sequence

import httpx

from .corpus import CorpusError, Document, dedup_key, group_by_identity, make_doc_key, parse_tei

log = logging.getLogger(__name__)

FUTURE_CITERS = "future_citers"
PAST_REFERENCES = "past_references"
DIRECTIONS = (FUTURE_CITERS, PAST_REFERENCES)

# which providers answer which direction
DIRECTION_PROVIDERS = {
    FUTURE_CITERS: ("semantic_scholar",),
    PAST_REFERENCES: ("semantic_scholar", "crossref"),
}


class ProviderError(RuntimeError):
    def __init__(self, message: str, partial: bool = False):
        super().__init__(message)
        self.partial = partial


class SearchError(ValueError):
    pass


@dataclass(frozen=True)
class SearchQuery:
    keywords: str
    year_start: int | None = None
    year_end: int | None = None
    limit: int = 12

    def __post_init__(self) -> None:
        if self.limit < 1:
            raise SearchError("limit must be positive")
        if self.year_start is not None and self.year_end is not None and self.year_start > self.year_end:
            raise SearchError(f"year range {self.year_start}-{self.year_end} is inverted")

    def year_ok(self, year: int | None) -> bool:
        if year is None:
            return self.year_start is None and self.year_end is None
        return (self.year_start is None or year >= self.year_start) and (self.year_end is None or year <= self.year_end)


_YEAR_SUFFIX = re.compile(r"^(.*?)[\s,]+(\d{4})(?:-(\d{4}))?$")


def parse_search_string(text: str, limit: int = 12) -> SearchQuery:
    """Split ``"keywords YYYY"`` / ``"keywords YYYY-YYYY"`` into keywords and year bounds."""
    text = text.strip()
    if not text:
        raise SearchError("empty search string")
    m = _YEAR_SUFFIX.match(text)
    if m:
        start = int(m.group(2))
        end = int(m.group(3)) if m.group(3) else start
        keywords = m.group(1).strip().rstrip(",").strip()
        if start <= end:
            if not keywords:
                raise SearchError(f"search string {text!r} has no keywords")
            return SearchQuery(keywords, start, end, limit)
    return SearchQuery(text, None, None, limit)


@dataclass(frozen=True)
class CitationRecord:
    title: str | None = None
    doi: str | None = None
    future_citer_count: int | None = None

    def __post_init__(self) -> None:
        if self.doi is not None:
            object.__setattr__(self, "doi", self.doi.strip().lower() or None)
        if self.title is not None and not self.title.strip():
            object.__setattr__(self, "title", None)

    @property
    def key(self) -> tuple[str | None, str | None]:
        return dedup_key(self.title, self.doi)

    @property
    def citers(self) -> int:
        return self.future_citer_count or 0

    @property
    def sort_key(self) -> str:
        t, d = self.key
        return f"{t or ''}\x00{d or ''}"


def merge_records(records: Iterable[CitationRecord]) -> list[CitationRecord]:
    """Best-effort merge: records whose title or DOI keys collide become one.

    Unmergeable records (neither title nor DOI) are dropped with a log entry.
    Merged records keep the first seen title/DOI and the largest citer count.
    """
    usable: list[CitationRecord] = []
    for rec in records:
        if rec.title is None and rec.doi is None:
            log.info("dropping citation record without title or DOI")
            continue
        usable.append(rec)
    groups = group_by_identity([r.key for r in usable])
    merged: dict[int, CitationRecord] = {}
    for group, rec in zip(groups, usable):
        cur = merged.get(group)
        if cur is None:
            merged[group] = rec
            continue
        counts = [c for c in (cur.future_citer_count, rec.future_citer_count) if c is not None]
        merged[group] = CitationRecord(
            title=cur.title or rec.title,
            doi=cur.doi or rec.doi,
            future_citer_count=max(counts) if counts else None,
        )
    return [merged[g] for g in sorted(merged)]


class SearchProvider(Protocol):
    name: str

    def search(self, query: SearchQuery) -> list[Document]: ...


class CitationProvider(Protocol):
    name: str

    def citations(self, paper: Document, direction: str) -> list[CitationRecord]: ...


class FullTextResolver(Protocol):
    def resolve(self, stub: Document | CitationRecord) -> Document | None: ...


# -- offline fixtures -------------------------------------------------------------


class FixtureProvider:
    """Search, citation and full-text provider backed by a fixture directory."""

    def __init__(self, root: str | Path, name: str = "fixture"):
        self.root = Path(root)
        self.name = name
        self.papers: dict[str, dict[str, Any]] = {}
        self._by_doi: dict[str, str] = {}
        self._by_title: dict[str, str] = {}
        papers_file = self.root / "papers.jsonl"
        if papers_file.exists():
            for line in papers_file.read_text().splitlines():
                if not line.strip():
                    continue
                rec = json.loads(line)
                key = rec["doc_key"]
                self.papers[key] = rec
                if rec.get("doi"):
                    self._by_doi[rec["doi"].lower()] = key
                if rec.get("title"):
                    self._by_title[rec["title"].casefold()] = key
        self.index: dict[str, list[str]] = self._load_json("search.json", {})
        self.citation_table: dict[str, Any] = self._load_json("citations.json", {})
        self.down: set[str] = set()

    def _load_json(self, name: str, default: Any) -> Any:
        path = self.root / name
        return json.loads(path.read_text()) if path.exists() else default

    def _lookup(self, ident: str) -> str | None:
        if ident in self.papers:
            return ident
        return self._by_doi.get(ident.lower()) or self._by_title.get(ident.casefold())

    def stub(self, key: str) -> Document:
        rec = self.papers[key]
        return Document(
            doc_key=key,
            title=rec.get("title", ""),
            doi=rec.get("doi"),
            citation_count=rec.get("citation_count"),
            journal=rec.get("journal"),
            year=rec.get("year"),
            authors=list(rec.get("authors", [])),
        )

    def search(self, query: SearchQuery) -> list[Document]:
        if "search" in self.down:
            raise ProviderError(f"{self.name}: search unavailable")
        needle = query.keywords.casefold()
        hits: list[str] = []
        for phrase, idents in self.index.items():
            if phrase.casefold() in needle:
                for ident in idents:
                    key = self._lookup(ident)
                    if key is None:
                        log.warning("search fixture references unknown paper %r", ident)
                    elif key not in hits:
                        hits.append(key)
        stubs = [self.stub(k) for k in hits]
        # client-side year filtering
        if query.year_start is not None or query.year_end is not None:
            stubs = [s for s in stubs if s.year is None or query.year_ok(s.year)]
        return stubs[: query.limit]

    def resolve(self, stub: Document | CitationRecord) -> Document | None:
        key = None
        if isinstance(stub, Document):
            key = self._lookup(stub.doc_key) or (self._lookup(stub.doi) if stub.doi else None)
        if key is None and stub.doi:
            key = self._lookup(stub.doi)
        if key is None and stub.title:
            key = self._lookup(stub.title)
        if key is None:
            return None
        rec = self.papers[key]
        doc = self.stub(key)
        if rec.get("tei_file"):
            parsed = parse_tei((self.root / rec["tei_file"]).read_bytes(), doc_key=key)
            doc.sections = parsed.sections
            doc.raw_text = "\n\n".join(b for _, b in parsed.sections)
        elif rec.get("sections"):
            doc.sections = [tuple(s) for s in rec["sections"]]
            doc.reference_sections = set(rec.get("reference_sections", []))
            doc.raw_text = rec.get("text") or "\n\n".join(
                b for t, b in doc.sections if t not in doc.reference_sections
            )
        elif rec.get("text"):
            doc.raw_text = rec["text"]
        elif rec.get("text_file"):
            doc.raw_text = (self.root / rec["text_file"]).read_text()
        else:
            return None
        return doc

    def citations(self, paper: Document, direction: str, provider: str | None = None) -> list[CitationRecord]:
        provider = provider or self.name
        if provider in self.down:
            raise ProviderError(f"{provider}: citation service unavailable")
        table_name = "citers" if direction == FUTURE_CITERS else "references"
        table = self.citation_table.get(provider, {}).get(table_name, {})
        raw = None
        for ident in (paper.doi, paper.doc_key, paper.title):
            if ident and ident in table:
                raw = table[ident]
                break
        return [
            CitationRecord(r.get("title"), r.get("doi"), r.get("citation_count"))
            for r in (raw or [])
        ]


class FixtureCitationProvider:
    """One named citation provider view over a shared :class:`FixtureProvider`."""

    def __init__(self, fixture: FixtureProvider, name: str):
        self.fixture = fixture
        self.name = name

    def citations(self, paper: Document, direction: str) -> list[CitationRecord]:
        return self.fixture.citations(paper, direction, provider=self.name)


# -- live HTTP clients ----------------------------------------------------------


class SemanticScholarClient:
    name = "semantic_scholar"
    BASE_URL = "https://api.semanticscholar.org/graph/v1"
    FIELDS = "title,externalIds,year,venue,citationCount,authors,openAccessPdf"

    def __init__(self, api_key: str | None = None, *, transport: httpx.BaseTransport | None = None, base_url: str | None = None):
        headers = {"x-api-key": api_key} if api_key else {}
        self._client = httpx.Client(base_url=base_url or self.BASE_URL, headers=headers, timeout=60.0, transport=transport)

    def _get(self, path: str, params: dict[str, Any]) -> dict[str, Any]:
        try:
            response = self._client.get(path, params=params)
            response.raise_for_status()
        except httpx.HTTPError as exc:
            raise ProviderError(f"semantic_scholar: {exc}") from exc
        return response.json()

    @staticmethod
    def _to_stub(paper: dict[str, Any], taken: set[str]) -> Document:
        authors = [a.get("name", "") for a in paper.get("authors") or []]
        title = paper.get("title") or ""
        key = make_doc_key(authors, paper.get("year"), title, taken)
        taken.add(key)
        doc = Document(
            doc_key=key,
            title=title,
            doi=(paper.get("externalIds") or {}).get("DOI"),
            citation_count=paper.get("citationCount"),
            journal=paper.get("venue") or None,
            year=paper.get("year"),
            authors=authors,
        )
        return doc

    def search(self, query: SearchQuery) -> list[Document]:
        params: dict[str, Any] = {"query": query.keywords, "limit": query.limit, "fields": self.FIELDS}
        if query.year_start is not None:
            params["year"] = f"{query.year_start}-{query.year_end}"
        data = self._get("/paper/search", params)
        taken: set[str] = set()
        return [self._to_stub(p, taken) for p in data.get("data", [])]

    def citations(self, paper: Document, direction: str) -> list[CitationRecord]:
        if not paper.doi:
            return []
        edge, inner = ("citations", "citingPaper") if direction == FUTURE_CITERS else ("references", "citedPaper")
        data = self._get(f"/paper/DOI:{paper.doi}/{edge}", {"fields": "title,externalIds,citationCount", "limit": 1000})
        out = []
        for row in data.get("data", []):
            p = row.get(inner) or {}
            out.append(CitationRecord(p.get("title"), (p.get("externalIds") or {}).get("DOI"), p.get("citationCount")))
        return out


class CrossrefClient:
    name = "crossref"
    BASE_URL = "https://api.crossref.org"

    def __init__(self, mailto: str | None = None, *, transport: httpx.BaseTransport | None = None, base_url: str | None = None):
        params = {"mailto": mailto} if mailto else {}
        self._client = httpx.Client(base_url=base_url or self.BASE_URL, params=params, timeout=60.0, transport=transport)

    def citations(self, paper: Document, direction: str) -> list[CitationRecord]:
        if direction != PAST_REFERENCES:
            raise ProviderError("crossref: only past references are available")
        if not paper.doi:
            return []
        try:
            response = self._client.get(f"/works/{paper.doi}")
            response.raise_for_status()
        except httpx.HTTPError as exc:
            raise ProviderError(f"crossref: {exc}") from exc
        refs = response.json().get("message", {}).get("reference", [])
        return [CitationRecord(r.get("article-title") or r.get("volume-title"), r.get("DOI")) for r in refs]


class LocalRepository:
    """Full-text resolver over a directory of ``<doi-slug>.txt`` / ``.tei.xml`` files."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    @staticmethod
    def slug(doi: str) -> str:
        return re.sub(r"[^a-z0-9]+", "_", doi.lower()).strip("_")

    def resolve(self, stub: Document | CitationRecord) -> Document | None:
        if not stub.doi:
            return None
        base = self.root / self.slug(stub.doi)
        key = stub.doc_key if isinstance(stub, Document) else make_doc_key([], None, stub.title or stub.doi)
        tei, txt = base.with_suffix(".tei.xml"), base.with_suffix(".txt")
        if tei.exists():
            doc = parse_tei(tei.read_bytes(), doc_key=key)
        elif txt.exists():
            doc = Document(doc_key=key, title=stub.title or "", raw_text=txt.read_text())
        else:
            return None
        if isinstance(stub, Document):
            doc.title = stub.title or doc.title
            doc.citation_count, doc.journal, doc.year = stub.citation_count, stub.journal, stub.year
            doc.authors = stub.authors or doc.authors
        doc.doi = stub.doi
        return doc


# -- operations -------------------------------------------------------------------


@dataclass
class ProviderSet:
    search: SearchProvider
    citation: dict[str, CitationProvider] = field(default_factory=dict)
    resolver: FullTextResolver | None = None


def search_papers(query: SearchQuery, providers: ProviderSet, skip_log: list[str] | None = None) -> list[Document]:
    """Ranked, resolved candidates; hits without obtainable full text are skipped."""
    try:
        stubs = providers.search.search(query)
    except ProviderError:
        raise
    except Exception as exc:  # transport-level failures from live clients
        raise ProviderError(f"{providers.search.name}: {exc}", partial=False) from exc
    resolved = []
    for stub in stubs[: query.limit]:
        doc = providers.resolver.resolve(stub) if providers.resolver else None
        if doc is None:
            message = f"skipped {stub.doc_key}: full text unavailable"
            log.info(message)
            if skip_log is not None:
                skip_log.append(message)
            continue
        resolved.append(doc)
    return resolved


def fetch_citations(papers: Sequence[Document], direction: str, providers: ProviderSet) -> list[list[CitationRecord]]:
    """One merged record list per input paper, in input order."""
    if direction not in DIRECTIONS:
        raise ValueError(f"unknown direction {direction!r}")
    names = [n for n in DIRECTION_PROVIDERS[direction] if n in providers.citation]
    if not names:
        raise ProviderError(f"no citation provider configured for {direction}")
    out: list[list[CitationRecord]] = []
    down: set[str] = set()
    for paper in papers:
        gathered: list[CitationRecord] = []
        for name in names:
            if name in down:
                continue
            try:
                gathered.extend(providers.citation[name].citations(paper, direction))
            except ProviderError as exc:
                log.warning("citation provider %s failed (%s); continuing without it", name, exc)
                down.add(name)
        if len(down) == len(names):
            raise ProviderError(f"all citation providers failed for {direction}", partial=bool(out))
        out.append(merge_records(gathered))
    return out


def fixture_providers(root: str | Path) -> ProviderSet:
    fixture = FixtureProvider(root)
    return ProviderSet(
        search=fixture,
        citation={
            "semantic_scholar": FixtureCitationProvider(fixture, "semantic_scholar"),
            "crossref": FixtureCitationProvider(fixture, "crossref"),
        },
        resolver=fixture,
    )


def dedup_documents(docs: Iterable[Document]) -> list[Document]:
    docs = list(docs)
    keep = []
    keys = []
    for d in docs:
        try:
            keys.append(d.identity)
            keep.append(d)
        except CorpusError:
            log.info("document %s has no title or DOI; kept as-is", d.doc_key)
            keep.append(d)
            keys.append((f"\x00{d.doc_key}", None))
    groups = group_by_identity(keys)
    seen: set[int] = set()
    out = []
    for g, d in zip(groups, keep):
        if g not in seen:
            seen.add(g)
            out.append(d)
    return out
