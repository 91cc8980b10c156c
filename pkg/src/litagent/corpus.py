"""Document model, chunking and record identity.

Offsets in :class:`Chunk.char_span` refer to the whitespace-normalized text the
chunk was cut from (``Document.raw_text`` for sliding windows, the section body
for section chunks).
"""

from __future__ import annotations

import json
import logging
import re
import xml.etree.ElementTree as ET
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import httpx

log = logging.getLogger(__name__)

_WS = re.compile(r"\s+")
REFERENCE_TITLES = frozenset({"references", "bibliography", "literature cited", "works cited"})


class CorpusError(ValueError):
    pass


def normalize_whitespace(text: str) -> str:
    return _WS.sub(" ", text).strip()


def estimate_tokens(text: str) -> int:
    """Rough token count, 4 characters per token."""
    return (len(text) + 3) // 4


@dataclass
class Document:
    doc_key: str
    title: str
    doi: str | None = None
    citation_count: int | None = None
    journal: str | None = None
    year: int | None = None
    authors: list[str] = field(default_factory=list)
    sections: list[tuple[str, str]] = field(default_factory=list)
    raw_text: str = ""
    reference_sections: set[str] = field(default_factory=set)

    def __post_init__(self) -> None:
        if self.doi:
            self.doi = self.doi.strip().lower()
        self.sections = [(t, b) for t, b in self.sections]
        if not self.raw_text and self.sections:
            self.raw_text = "\n\n".join(
                body for title, body in self.sections if title not in self.reference_sections
            )

    def citation(self) -> str:
        """Human-readable citation string, with citation count and journal when known."""
        parts = [self.title.rstrip(".") + "."]
        if self.authors:
            parts.append(", ".join(self.authors[:3]) + (" et al." if len(self.authors) > 3 else "."))
        if self.journal:
            parts.append(f"{self.journal}{f', {self.year}' if self.year else ''}.")
        elif self.year:
            parts.append(f"{self.year}.")
        if self.doi:
            parts.append(f"doi:{self.doi}.")
        if self.citation_count is not None:
            parts.append(f"This article has {self.citation_count} citations.")
        return " ".join(parts)

    @property
    def identity(self) -> tuple[str | None, str | None]:
        return dedup_key(self.title, self.doi)

    def to_record(self) -> dict:
        record = asdict(self)
        record["sections"] = [list(s) for s in self.sections]
        record["reference_sections"] = sorted(self.reference_sections)
        return record

    @classmethod
    def from_record(cls, record: dict) -> "Document":
        record = dict(record)
        record["sections"] = [tuple(s) for s in record.get("sections", [])]
        record["reference_sections"] = set(record.get("reference_sections", []))
        return cls(**record)


@dataclass(frozen=True)
class Chunk:
    doc_key: str
    chunk_id: int
    text: str
    char_span: tuple[int, int]
    section_title: str | None = None
    pages_label: str | None = None

    @property
    def key(self) -> str:
        """Citation key of this chunk, e.g. ``Smith2021Gene pages 3-4``."""
        return f"{self.doc_key} {self.pages_label or pages_label_for(self.chunk_id)}"

    def to_record(self) -> dict:
        record = asdict(self)
        record["char_span"] = list(self.char_span)
        return record

    @classmethod
    def from_record(cls, record: dict) -> "Chunk":
        record = dict(record)
        record["char_span"] = tuple(record["char_span"])
        return cls(**record)


def pages_label_for(chunk_id: int) -> str:
    return f"pages {chunk_id + 1}-{chunk_id + 2}"


def _windows(length: int, chunksize: int, overlap: int) -> list[tuple[int, int]]:
    if chunksize <= 0:
        raise CorpusError("chunksize must be positive")
    if not 0 <= overlap < chunksize:
        raise CorpusError("overlap must satisfy 0 <= overlap < chunksize")
    stride = chunksize - overlap
    spans = []
    start = 0
    while start < length:
        end = min(start + chunksize, length)
        spans.append((start, end))
        if end == length:
            break
        start += stride
    return spans


def chunk_sliding(
    text: str,
    chunksize: int,
    overlap: int,
    *,
    doc_key: str = "",
    section_title: str | None = None,
    first_id: int = 0,
) -> list[Chunk]:
    """Sliding-window chunks; chunk ``i`` starts at ``i * (chunksize - overlap)``."""
    return [
        Chunk(
            doc_key=doc_key,
            chunk_id=first_id + i,
            text=text[start:end],
            char_span=(start, end),
            section_title=section_title,
            pages_label=pages_label_for(first_id + i),
        )
        for i, (start, end) in enumerate(_windows(len(text), chunksize, overlap))
    ]


def chunk_sections(document: Document, chunksize: int, overlap: int = 0) -> list[Chunk]:
    """One chunk per section where it fits, sliding windows inside oversize sections.

    Sections listed in ``document.reference_sections`` (or titled like a
    bibliography) contribute nothing.
    """
    if not document.sections:
        raise CorpusError(
            f"{document.doc_key}: document has no sections; use the simple_overlap chunking algorithm"
        )
    chunks: list[Chunk] = []
    for title, body in document.sections:
        if title in document.reference_sections or title.strip().lower() in REFERENCE_TITLES:
            continue
        body = normalize_whitespace(body)
        if not body:
            continue
        chunks.extend(
            chunk_sliding(
                body,
                chunksize,
                overlap,
                doc_key=document.doc_key,
                section_title=title,
                first_id=len(chunks),
            )
        )
    return chunks


def chunk_document(document: Document, chunksize: int, overlap: int, algorithm: str) -> list[Chunk]:
    if algorithm == "sections":
        return chunk_sections(document, chunksize, overlap)
    if algorithm == "simple_overlap":
        return chunk_sliding(normalize_whitespace(document.raw_text), chunksize, overlap, doc_key=document.doc_key)
    raise CorpusError(f"unknown chunking algorithm {algorithm!r}")


# -- identity ---------------------------------------------------------------


def dedup_key(title: str | None, doi: str | None) -> tuple[str | None, str | None]:
    """Identity key for best-effort merging: (casefolded title, lowercased DOI)."""
    t = normalize_whitespace(title).casefold() if title and title.strip() else None
    d = doi.strip().lower() if doi and doi.strip() else None
    if t is None and d is None:
        raise CorpusError("record has neither title nor DOI; it cannot be merged")
    return (t, d)


def keys_collide(a: tuple[str | None, str | None], b: tuple[str | None, str | None]) -> bool:
    """Two identity keys merge when any component present in both is equal."""
    return (a[0] is not None and a[0] == b[0]) or (a[1] is not None and a[1] == b[1])


def group_by_identity(keys: Sequence[tuple[str | None, str | None]]) -> list[int]:
    """Union-find over identity keys; returns a group index per input position.

    Group indices are the position of each group's first member, so the output
    is deterministic for a given input order.
    """
    parent = list(range(len(keys)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    by_title: dict[str, int] = {}
    by_doi: dict[str, int] = {}
    for i, (title, doi) in enumerate(keys):
        for index, component in ((by_title, title), (by_doi, doi)):
            if component is None:
                continue
            if component in index:
                ri, rj = find(i), find(index[component])
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
            else:
                index[component] = i
    return [find(i) for i in range(len(keys))]


def make_doc_key(authors: Sequence[str], year: int | None, title: str, taken: Iterable[str] = ()) -> str:
    """Citation-style key such as ``Smith2021Gene``; suffixed to stay unique."""
    surname = re.sub(r"[^A-Za-z]", "", authors[0].split()[-1]) if authors and authors[0].split() else "Anon"
    words = [w for w in re.findall(r"[A-Za-z]+", title) if len(w) > 3] or ["Paper"]
    base = f"{surname.capitalize()}{year or ''}{words[0].capitalize()}"
    taken = set(taken)
    key, n = base, 2
    while key in taken:
        key = f"{base}{n}"
        n += 1
    return key


# -- structured parser output ----------------------------------------------

TEI_NS = {"tei": "http://www.tei-c.org/ns/1.0"}


def _text(node: ET.Element | None) -> str:
    return normalize_whitespace("".join(node.itertext())) if node is not None else ""


def parse_tei(xml: str | bytes, doc_key: str | None = None) -> Document:
    """Build a :class:`Document` from TEI full-text markup.

    Body ``div`` elements become sections keyed by their ``head``; the
    bibliography list is kept out of the sections.  Figure and table text is
    passed through as the parser emitted it.
    """
    try:
        root = ET.fromstring(xml)
    except ET.ParseError as exc:
        raise CorpusError(f"malformed TEI document: {exc}") from None
    header = root.find("tei:teiHeader", TEI_NS)
    title = _text(header.find(".//tei:titleStmt/tei:title", TEI_NS)) if header is not None else ""
    doi_node = root.find(".//tei:sourceDesc//tei:idno[@type='DOI']", TEI_NS)
    doi = _text(doi_node) or None
    authors = []
    if header is not None:
        for pers in header.findall(".//tei:sourceDesc//tei:author/tei:persName", TEI_NS):
            surname = _text(pers.find("tei:surname", TEI_NS))
            forename = _text(pers.find("tei:forename", TEI_NS))
            if surname:
                authors.append(f"{forename} {surname}".strip())
    year = None
    date = root.find(".//tei:sourceDesc//tei:date[@when]", TEI_NS)
    if date is not None and date.get("when", "")[:4].isdigit():
        year = int(date.get("when")[:4])

    sections: list[tuple[str, str]] = []
    abstract = root.find(".//tei:profileDesc/tei:abstract", TEI_NS)
    if abstract is not None and _text(abstract):
        sections.append(("Abstract", _text(abstract)))
    body = root.find(".//tei:text/tei:body", TEI_NS)
    if body is not None:
        untitled = 0
        for div in body.findall("tei:div", TEI_NS):
            head = _text(div.find("tei:head", TEI_NS))
            paragraphs = [_text(p) for p in div if p.tag != f"{{{TEI_NS['tei']}}}head"]
            text = " ".join(p for p in paragraphs if p)
            if not text:
                continue
            if not head:
                untitled += 1
                head = f"Section {untitled}"
            sections.append((head, text))
        for fig in body.findall("tei:figure", TEI_NS):
            text = _text(fig)
            if text:
                sections.append((_text(fig.find("tei:head", TEI_NS)) or "Figure", text))
    key = doc_key or make_doc_key(authors, year, title)
    return Document(doc_key=key, title=title, doi=doi, authors=authors, year=year, sections=sections)


class StructuredParserClient:
    """HTTP client for a TEI-producing PDF parsing service."""

    def __init__(self, base_url: str, *, timeout: float = 120.0, transport: httpx.BaseTransport | None = None):
        self._client = httpx.Client(base_url=base_url.rstrip("/"), timeout=timeout, transport=transport)

    def parse_pdf(self, pdf: bytes, doc_key: str | None = None) -> Document:
        response = self._client.post(
            "/api/processFulltextDocument",
            files={"input": ("paper.pdf", pdf, "application/pdf")},
            data={"consolidateHeader": "1"},
        )
        response.raise_for_status()
        return parse_tei(response.content, doc_key=doc_key)


def read_plain_text(path: Path, doc_key: str, title: str | None = None) -> Document:
    """Plain-text fallback: the whole file is the document body."""
    text = path.read_text(errors="replace")
    return Document(doc_key=doc_key, title=title or path.stem, raw_text=text)


# -- persistence ------------------------------------------------------------


def save_document(document: Document, chunks: Sequence[Chunk], root: Path) -> Path:
    """Write ``<root>/<doc_key>/metadata.json`` and ``chunks.jsonl``."""
    folder = Path(root) / document.doc_key
    folder.mkdir(parents=True, exist_ok=True)
    (folder / "metadata.json").write_text(json.dumps(document.to_record(), indent=2, sort_keys=True))
    with open(folder / "chunks.jsonl", "w") as fh:
        for chunk in chunks:
            fh.write(json.dumps(chunk.to_record(), sort_keys=True) + "\n")
    return folder


def load_document(folder: Path) -> tuple[Document, list[Chunk]]:
    folder = Path(folder)
    document = Document.from_record(json.loads((folder / "metadata.json").read_text()))
    chunks = [Chunk.from_record(json.loads(line)) for line in (folder / "chunks.jsonl").read_text().splitlines() if line]
    return document, chunks
