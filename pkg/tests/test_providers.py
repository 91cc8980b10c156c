import httpx
import pytest

from conftest import paper, write_fixture
from litagent.corpus import Document
from litagent.providers import (
    FUTURE_CITERS,
    PAST_REFERENCES,
    CitationRecord,
    CrossrefClient,
    LocalRepository,
    ProviderError,
    SearchError,
    SearchQuery,
    SemanticScholarClient,
    dedup_documents,
    fetch_citations,
    fixture_providers,
    merge_records,
    parse_search_string,
    search_papers,
)


@pytest.mark.parametrize(
    "text,expected",
    [
        ("gene editing 2020-2023", ("gene editing", 2020, 2023)),
        ("machine learning 2020", ("machine learning", 2020, 2020)),
        ("machine learning, 2010-2020", ("machine learning", 2010, 2020)),
        ("for immunology", ("for immunology", None, None)),
        ("covid 2023-2019", ("covid 2023-2019", None, None)),
    ],
)
def test_parse_search_string(text, expected):
    q = parse_search_string(text)
    assert (q.keywords, q.year_start, q.year_end) == expected


def test_parse_search_string_errors():
    with pytest.raises(SearchError):
        parse_search_string("   ")
    with pytest.raises(SearchError):
        parse_search_string(", 2020-2021")
    with pytest.raises(SearchError):
        SearchQuery("x", 2021, 2020)


def test_fixture_search_filters_years(gene_corpus):
    providers = fixture_providers(gene_corpus)
    docs = search_papers(parse_search_string("gene editing 2020-2023"), providers)
    assert [d.doc_key for d in docs] == ["Smith2021Gene", "Jones2022Prime"]
    assert docs[0].raw_text.startswith("Base editors")


def test_search_skips_unresolvable(tmp_path):
    root = write_fixture(tmp_path, [paper("A", "Alpha", "10.1/a", "text"), paper("B", "Beta", "10.1/b")], {"alpha": ["A", "B"]})
    skipped = []
    docs = search_papers(parse_search_string("alpha"), fixture_providers(root), skipped)
    assert [d.doc_key for d in docs] == ["A"]
    assert skipped == ["skipped B: full text unavailable"]


def test_search_provider_down(gene_corpus):
    providers = fixture_providers(gene_corpus)
    providers.search.down.add("search")
    with pytest.raises(ProviderError):
        search_papers(parse_search_string("gene editing"), providers)


def test_merge_records_by_title_or_doi():
    recs = [
        CitationRecord("Gene Editing", "10.1/A", 3),
        CitationRecord("gene editing", None, 9),
        CitationRecord(None, "10.1/a", None),
        CitationRecord("Other", None, None),
        CitationRecord(None, None, 5),
    ]
    merged = merge_records(recs)
    assert merged == [CitationRecord("Gene Editing", "10.1/a", 9), CitationRecord("Other", None, None)]


def citation_fixture(tmp_path, s2_refs, cr_refs, citers=None):
    citations = {
        "semantic_scholar": {"references": {"10.1/p": s2_refs}, "citers": {"10.1/p": citers or []}},
        "crossref": {"references": {"10.1/p": cr_refs}, "citers": {}},
    }
    return write_fixture(tmp_path, [paper("P", "Parent", "10.1/p", "x")], {}, citations)


def test_fetch_citations_merges_providers(tmp_path):
    root = citation_fixture(
        tmp_path,
        [{"title": "Child", "doi": "10.1/c", "citation_count": 4}],
        [{"title": "Child", "doi": None}, {"title": "Second", "doi": "10.1/s"}],
    )
    providers = fixture_providers(root)
    parent = providers.resolver.resolve(Document("P", "Parent", doi="10.1/p"))
    (refs,) = fetch_citations([parent], PAST_REFERENCES, providers)
    assert [(r.title, r.doi, r.citers) for r in refs] == [("Child", "10.1/c", 4), ("Second", "10.1/s", 0)]


def test_fetch_citations_survives_one_provider(tmp_path):
    root = citation_fixture(tmp_path, [{"title": "A", "doi": "10.1/a"}], [{"title": "B", "doi": "10.1/b"}])
    providers = fixture_providers(root)
    providers.search.down.add("crossref")
    (refs,) = fetch_citations([Document("P", "Parent", doi="10.1/p")], PAST_REFERENCES, providers)
    assert [r.title for r in refs] == ["A"]


def test_fetch_citations_all_down(tmp_path):
    root = citation_fixture(tmp_path, [], [])
    providers = fixture_providers(root)
    providers.search.down.add("semantic_scholar")
    with pytest.raises(ProviderError, match="all citation providers"):
        fetch_citations([Document("P", "Parent", doi="10.1/p")], FUTURE_CITERS, providers)
    with pytest.raises(ValueError):
        fetch_citations([], "sideways", providers)


def test_fixture_resolves_sections_and_text_file(tmp_path):
    (tmp_path / "b.txt").write_text("body from file")
    root = write_fixture(
        tmp_path,
        [
            paper("A", "Alpha", "10.1/a", sections=[["Intro", "hi"], ["References", "r"]], reference_sections=["References"]),
            paper("B", "Beta", "10.1/b", text_file="b.txt"),
        ],
    )
    providers = fixture_providers(root)
    a = providers.resolver.resolve(CitationRecord("alpha", None))
    assert a.sections == [("Intro", "hi"), ("References", "r")] and a.raw_text == "hi"
    assert providers.resolver.resolve(CitationRecord(None, "10.1/B")).raw_text == "body from file"
    assert providers.resolver.resolve(CitationRecord("Missing", None)) is None


def test_dedup_documents():
    docs = [Document("A", "Same"), Document("B", "same", doi="10.1/x"), Document("C", "", doi="10.1/X"), Document("D", "Other")]
    assert [d.doc_key for d in dedup_documents(docs)] == ["A", "D"]


def test_semantic_scholar_client():
    def handler(request):
        if request.url.path.endswith("/paper/search"):
            assert request.url.params["year"] == "2020-2023"
            return httpx.Response(200, json={"data": [
                {"title": "Base editing", "externalIds": {"DOI": "10.1/A"}, "year": 2021, "authors": [{"name": "Jo Smith"}], "citationCount": 3},
                {"title": "Base editing again", "externalIds": {}, "year": 2021, "authors": [{"name": "Al Smith"}]},
            ]})
        assert request.url.path.endswith("/paper/DOI:10.1/a/citations")
        return httpx.Response(200, json={"data": [{"citingPaper": {"title": "Later", "externalIds": {"DOI": "10.1/L"}, "citationCount": 2}}]})

    client = SemanticScholarClient(transport=httpx.MockTransport(handler))
    docs = client.search(parse_search_string("base editing 2020-2023"))
    assert [d.doc_key for d in docs] == ["Smith2021Base", "Smith2021Base2"]
    recs = client.citations(docs[0], FUTURE_CITERS)
    assert recs == [CitationRecord("Later", "10.1/l", 2)]
    assert client.citations(docs[1], FUTURE_CITERS) == []


def test_semantic_scholar_failure_is_provider_error():
    client = SemanticScholarClient(transport=httpx.MockTransport(lambda r: httpx.Response(503)))
    with pytest.raises(ProviderError):
        client.search(SearchQuery("x"))


def test_crossref_client():
    def handler(request):
        return httpx.Response(200, json={"message": {"reference": [{"article-title": "Ref", "DOI": "10.1/R"}, {"unstructured": "x"}]}})

    client = CrossrefClient(transport=httpx.MockTransport(handler))
    recs = client.citations(Document("P", "P", doi="10.1/p"), PAST_REFERENCES)
    assert recs[0] == CitationRecord("Ref", "10.1/r")
    with pytest.raises(ProviderError):
        client.citations(Document("P", "P", doi="10.1/p"), FUTURE_CITERS)


def test_local_repository(tmp_path):
    (tmp_path / "10_1_abc.txt").write_text("full text")
    repo = LocalRepository(tmp_path)
    doc = repo.resolve(Document("K", "Title", doi="10.1/ABC", year=2020))
    assert doc.raw_text == "full text" and doc.doc_key == "K" and doc.year == 2020
    assert repo.resolve(CitationRecord("T", None)) is None
    assert repo.resolve(CitationRecord("T", "10.1/zzz")) is None
