import json
from pathlib import Path

import pytest

from litagent.config import preset
from litagent.llm import MockEntry, MockGateway
from litagent.providers import fixture_providers
from litagent.state import Services

DATA = Path(__file__).resolve().parents[1] / "src" / "litagent" / "data"
GOLDEN = Path(__file__).resolve().parent / "golden"


def write_fixture(root: Path, papers, search=None, citations=None) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "papers.jsonl", "w") as fh:
        for p in papers:
            fh.write(json.dumps(p) + "\n")
    (root / "search.json").write_text(json.dumps(search or {}))
    (root / "citations.json").write_text(json.dumps(citations or {}))
    return root


def paper(key, title, doi=None, text=None, **extra):
    rec = {"doc_key": key, "title": title, "doi": doi, "year": 2022, "authors": ["A Author"], **extra}
    if text is not None:
        rec["text"] = text
    return rec


def agent_reply(tool, arguments=""):
    return json.dumps({"tool": tool, "arguments": arguments})


def rcs_reply(summary, score):
    return json.dumps({"summary": summary, "relevance_score": score})


@pytest.fixture
def gene_corpus(tmp_path):
    """Three gene-editing papers plus one off-topic paper."""
    papers = [
        paper("Smith2021Gene", "Base editing of the HBB gene", "10.1/a", "Base editors corrected the HBB mutation in 60 percent of cells."),
        paper("Jones2022Prime", "Prime editing efficiency in neurons", "10.1/b", "Prime editing reached 20 percent efficiency in cortical neurons."),
        paper("Kim2020Crispr", "CRISPR screens in yeast", "10.1/c", "A genome-wide CRISPR screen identified 12 essential genes.", year=2019),
        paper("Lee2019Soil", "Soil bacteria diversity", "10.1/d", "Soil samples contained many bacterial taxa.", year=2019),
    ]
    search = {"gene editing": ["Smith2021Gene", "Jones2022Prime", "Kim2020Crispr"], "soil": ["Lee2019Soil"]}
    return write_fixture(tmp_path / "corpus", papers, search)


def services_for(root, entries, **kwargs) -> Services:
    return Services(MockGateway(entries, **kwargs), fixture_providers(root), jobs=2, current_year=2024)


@pytest.fixture
def litqa_config():
    return preset("litqa_default", "test question")


@pytest.fixture
def traversal_corpus(tmp_path):
    papers = [
        paper("Src1", "Source one", "10.1/s1", "alpha source text"),
        paper("Src2", "Source two", "10.1/s2", "alpha second source"),
        paper("Ref1", "Shared reference", "10.1/r1", "shared ref text"),
        paper("Ref2", "Single reference", "10.1/r2", "single ref text"),
        paper("Cit1", "Shared citer", "10.1/c1", "citer text"),
    ]
    citations = {
        "semantic_scholar": {
            "references": {
                "10.1/s1": [{"title": "Shared reference", "doi": "10.1/r1", "citation_count": 5}, {"title": "Single reference", "doi": "10.1/r2"}],
                "10.1/s2": [{"title": "Shared Reference", "doi": None, "citation_count": 9}, {"title": "Missing paper", "doi": "10.1/zz"}, {"title": "Source one", "doi": "10.1/s1"}],
            },
            "citers": {"10.1/s1": [{"title": "Shared citer", "doi": "10.1/c1"}], "10.1/s2": [{"doi": "10.1/c1"}]},
        },
        "crossref": {"references": {"10.1/s2": [{"title": "Missing paper", "doi": "10.1/zz"}]}, "citers": {}},
    }
    return write_fixture(tmp_path / "trav", papers, {"alpha": ["Src1", "Src2"]}, citations)


__all__ = ["MockEntry", "agent_reply", "rcs_reply", "paper", "write_fixture", "services_for"]


RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
