"""Gene article writer: four engine queries plus an overview completion, stitched into one article."""

from __future__ import annotations

import json
import logging
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .config import EngineConfig
from .llm import CompletionRequest, CostTracker
from .state import AgentState, Answer, EvidenceSummary, Services

log = logging.getLogger(__name__)

# editable defaults; exact production query texts were never published
SECTION_QUERIES: tuple[tuple[str, str], ...] = (
    (
        "Structure",
        "Write a Wikipedia-style section on the structure of the human gene {gene}: its genomic location, "
        "the protein it encodes, its domains, isoforms and post-translational modifications.",
    ),
    (
        "Function",
        "Write a Wikipedia-style section on the function of the human gene {gene} and its protein product: "
        "molecular activity, cellular localization and the biological processes it takes part in.",
    ),
    (
        "Interactions",
        "Write a Wikipedia-style section on the molecular interactions of the human gene {gene} and its "
        "protein product, including binding partners, complexes and pathways.",
    ),
    (
        "Clinical significance",
        "Write a Wikipedia-style section on the clinical significance of the human gene {gene}: associated "
        "diseases, variants and its relevance to diagnosis or therapy.",
    ),
)

OVERVIEW_TEMPLATE = (
    "Below are sections of a Wikipedia-style article about the human gene {gene}.\n"
    "\n"
    "{sections}\n"
    "\n"
    "Write a concise overview paragraph for the top of the article that summarizes these sections. "
    "Do not include citations.\n"
    "\n"
    "Overview:"
)

GENE_MISMATCH_PENALTY = 2
_EMPTY_GENE = {"", "none", "n/a", "na", "unknown", "null", "not specified", "not mentioned"}


class ArticleError(ValueError):
    pass


@dataclass(frozen=True)
class ArticleJob:
    gene: str
    section_queries: tuple[tuple[str, str], ...] = SECTION_QUERIES
    overview_template: str = OVERVIEW_TEMPLATE

    def __post_init__(self) -> None:
        if not self.gene.strip():
            raise ArticleError("gene symbol is empty")
        if len(self.section_queries) != 4:
            raise ArticleError("an article job needs exactly four section queries")

    def queries(self) -> list[tuple[str, str]]:
        return [(name, template.format(gene=self.gene)) for name, template in self.section_queries]


@dataclass
class Section:
    name: str
    body: str
    citations: list[str] = field(default_factory=list)
    insufficient: bool = False


@dataclass
class Article:
    title: str
    overview: str
    sections: list[Section]
    references: dict[str, str | None]
    cost: dict[str, Any] = field(default_factory=dict)

    def to_markdown(self) -> str:
        parts = [f"# {self.title}", "", self.overview.strip(), ""]
        for s in self.sections:
            parts += [f"## {s.name}", "", s.body.strip(), ""]
        parts += ["## References", ""]
        for i, (key, doi) in enumerate(self.references.items(), 1):
            parts.append(f"{i}. {key}" + (f": https://doi.org/{doi}" if doi else ""))
        return "\n".join(parts).rstrip() + "\n"

    def to_dict(self) -> dict[str, Any]:
        return {
            "title": self.title,
            "overview": self.overview,
            "sections": [s.__dict__ for s in self.sections],
            "references": self.references,
            "cost": self.cost,
        }


def gene_matches(found: str, gene: str) -> bool:
    norm = lambda s: re.sub(r"[^A-Za-z0-9]", "", s).upper()
    return norm(found) == norm(gene)


def gene_score_adjust(gene: str) -> Callable[[EvidenceSummary], int]:
    """Demote summaries whose extracted gene name is a different gene."""

    def adjust(s: EvidenceSummary) -> int:
        found = s.extra.get("gene_name", "").strip()
        if found.lower() in _EMPTY_GENE or gene_matches(found, gene):
            return s.relevance_score
        return max(0, s.relevance_score - GENE_MISMATCH_PENALTY)

    return adjust


def insufficiency_notice(section: str, gene: str) -> str:
    return f"Insufficient information was found on the {section.lower()} of {gene}."


_CITE_GROUP = re.compile(r"\s*\(([^()]*\bpages?\s+\d[^()]*)\)")
_KEY_IN_GROUP = re.compile(r"([A-Za-z][\w\-.]*?)\s+pages?\s+\d+(?:\s*[-–]\s*\d+)?")


def _merge_references(
    results: list[tuple[Answer, AgentState]],
) -> tuple[list[str], dict[str, str | None]]:
    """Rewrite section texts so that one paper has one key; returns texts and the reference map."""
    references: dict[str, str | None] = {}
    by_doi: dict[str, str] = {}
    texts = []
    for answer, state in results:
        text = answer.text
        renames: dict[str, str] = {}
        for key in answer.cited:
            doc = state.docs.get(key)
            doi = doc.doi if doc is not None else None
            if doi and doi in by_doi:
                renames[key] = by_doi[doi]
                continue
            new = key
            n = 2
            while new in references and references[new] != doi:
                new = f"{key}{n}"
                n += 1
            renames[key] = new
            references.setdefault(new, doi)
            if doi:
                by_doi[doi] = new

        def rewrite(g: re.Match) -> str:
            # keep only citations that resolved against the run's context, under their merged keys
            kept = []
            for m in _KEY_IN_GROUP.finditer(g.group(1)):
                if m.group(1) in renames:
                    kept.append(m.group(0).replace(m.group(1), renames[m.group(1)], 1))
            return f" ({', '.join(kept)})" if kept else ""

        text = _CITE_GROUP.sub(rewrite, text)
        texts.append(text)
    return texts, references


AskFn = Callable[[str, EngineConfig, Services, AgentState], tuple[Answer, AgentState]]


def generate_article(gene: str, config: EngineConfig, services: Services, job: ArticleJob | None = None, ask: AskFn | None = None) -> Article:
    """Run the four section queries concurrently, then the overview completion, and assemble."""
    from .agent import ask as default_ask

    ask = ask or default_ask
    job = job or ArticleJob(gene)
    queries = job.queries()

    def run(query: str) -> tuple[Answer, AgentState]:
        state = AgentState(query, score_adjust=gene_score_adjust(gene))
        return ask(query, config, services, state)

    with ThreadPoolExecutor(max_workers=4) as pool:
        results = list(pool.map(run, [q for _, q in queries]))
    texts, references = _merge_references(results)
    sections = []
    for (name, _), (answer, _), text in zip(queries, results, texts):
        if answer.insufficient:
            sections.append(Section(name, insufficiency_notice(name, gene), [], True))
        else:
            keys = [k for k in references if re.search(rf"(?<![\w]){re.escape(k)}\s+pages?\b", text)]
            sections.append(Section(name, text, keys))
    cited = {k for s in sections for k in s.citations}
    references = {k: v for k, v in references.items() if k in cited}

    section_text = "\n\n".join(f"{s.name}:\n{s.body}" for s in sections)
    prompt = job.overview_template.format(gene=gene, sections=section_text)
    tracker = CostTracker()
    overview = services.gateway.complete(CompletionRequest(config.llm, "", prompt, config.temperature), tracker).strip()
    for _, state in results:
        tracker.merge(state.cost)
    return Article(gene, overview, sections, references, tracker.to_dict())


# -- review statements --------------------------------------------------------------


@dataclass(frozen=True)
class ReviewStatement:
    section: str
    text: str
    original: str


def split_statements(text: str) -> list[str]:
    """Break text after each citation group and at paragraph breaks."""
    out = []
    for para in re.split(r"\n\s*\n", text):
        para = para.strip()
        start = 0
        for m in _CITE_GROUP.finditer(para):
            piece = para[start : m.end()].strip()
            # a sentence-final period after the group stays with this statement
            end = m.end()
            if para[end : end + 1] == ".":
                piece += "."
                end += 1
            if piece.strip(" ."):
                out.append(piece)
            start = end
        rest = para[start:].strip()
        if rest:
            out.append(rest)
    return out


def anonymize_citations(statement: str, rng: random.Random) -> str:
    """Replace citation groups with ``[x]`` markers, one random number 1-30 per distinct key."""
    keys: list[str] = []
    for g in _CITE_GROUP.finditer(statement):
        for k in _KEY_IN_GROUP.findall(g.group(1)):
            if k not in keys:
                keys.append(k)
    if not keys:
        return statement
    numbers = rng.sample(range(1, 31), len(keys)) if len(keys) <= 30 else [rng.randint(1, 30) for _ in keys]
    mapping = dict(zip(keys, numbers))

    def render(g: re.Match) -> str:
        seen: list[str] = []
        for k in _KEY_IN_GROUP.findall(g.group(1)):
            if k not in seen:
                seen.append(k)
        return " " + "".join(f"[{mapping[k]}]" for k in seen)

    return _CITE_GROUP.sub(render, statement)


def format_statements(article: Article, seed: int) -> list[ReviewStatement]:
    rng = random.Random(seed)
    out = []
    for name, body in [("Overview", article.overview)] + [(s.name, s.body) for s in article.sections]:
        for piece in split_statements(body):
            out.append(ReviewStatement(name, anonymize_citations(piece, rng), piece))
    return out


def load_genes(path: str | Path) -> list[str]:
    return [line.strip() for line in Path(path).read_text().splitlines() if line.strip() and not line.startswith("#")]


def save_article(article: Article, folder: str | Path) -> Path:
    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    path = folder / f"{article.title}.md"
    path.write_text(article.to_markdown())
    (folder / f"{article.title}.json").write_text(json.dumps(article.to_dict(), indent=2))
    return path
