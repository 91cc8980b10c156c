import random
import time
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import MockEntry, rcs_reply, services_for
from litagent.config import preset
from litagent.corpus import Chunk, Document
from litagent.providers import CitationRecord
from litagent.state import AgentState, EvidenceSummary
from litagent.tools import (
    ToolFailure,
    add_documents,
    extract_citations,
    feather,
    filter_overlap,
    format_context,
    overlap_threshold,
    tool_gather_evidence,
    tool_generate_answer,
    tool_paper_search,
    traverse_citations,
)
from oracles import overlap_exhaustive, overlap_reference


def random_instance(rng, max_sets=8, max_papers=40):
    n_sets = rng.randint(1, max_sets)
    n_papers = rng.randint(1, max_papers)
    sets = [set(rng.sample(range(n_papers), rng.randint(0, n_papers))) for _ in range(n_sets)]
    previous = set(rng.sample(range(n_papers), rng.randint(0, n_papers // 3)))
    citers = {d: rng.randint(0, 5) for d in range(n_papers)}
    theta = rng.randint(1, n_sets)
    limit = rng.randint(1, 15)
    return sets, previous, theta, limit, citers


def test_filter_overlap_matches_reference_on_random_instances():
    rng = random.Random(20240901)
    start = time.perf_counter()
    for _ in range(1000):
        sets, previous, theta, limit, citers = random_instance(rng)
        got = filter_overlap(sets, previous, theta, limit, citers=citers.__getitem__)
        assert got == overlap_reference(sets, previous, theta, limit, citers.__getitem__)
    assert time.perf_counter() - start < 10


def test_filter_overlap_matches_exhaustive_search_on_small_instances():
    rng = random.Random(7)
    for _ in range(300):
        sets, previous, theta, limit, citers = random_instance(rng, max_sets=4, max_papers=9)
        got = filter_overlap(sets, previous, theta, limit, citers=citers.__getitem__)
        assert got == overlap_exhaustive(sets, previous, theta, limit, citers.__getitem__)


def worked_example():
    """Six sources; one paper cited by four, five by three, 29 by two and 428 by one."""
    sources = [set() for _ in range(6)]
    papers = []

    def add(n_papers, overlap, tag):
        for i in range(n_papers):
            d = f"{tag}{i:03d}"
            papers.append(d)
            for j in range(overlap):
                sources[(i + j) % 6].add(d)

    add(1, 4, "o4-")
    add(5, 3, "o3-")
    add(29, 2, "o2-")
    add(428, 1, "o1-")
    citers = {d: (int(d[3:]) * 7919) % 101 for d in papers}
    return sources, citers


def test_worked_example_bins_and_selection():
    sources, citers = worked_example()
    theta = overlap_threshold(Fraction(1, 3), len(sources))
    assert theta == 2
    chosen = filter_overlap(sources, set(), theta, 12, citers=citers.__getitem__)
    assert len(chosen) == 12
    assert chosen[0] == "o4-000"
    assert set(chosen[1:6]) == {f"o3-{i:03d}" for i in range(5)}
    bin2 = sorted((d for d in citers if d.startswith("o2-")), key=lambda d: (-citers[d], d))
    assert chosen[6:] == bin2[:6]


@pytest.mark.parametrize("fraction,n,expected", [(Fraction(1, 3), 1, 1), (Fraction(1, 3), 6, 2), (Fraction(2, 5), 6, 3), (Fraction(1, 3), 7, 3), (Fraction(1), 4, 4)])
def test_overlap_threshold(fraction, n, expected):
    assert overlap_threshold(fraction, n) == expected


@settings(max_examples=100, deadline=None)
@given(st.randoms(use_true_random=False))
def test_raising_threshold_or_lowering_limit_never_adds_papers(rnd):
    sets, previous, theta, limit, citers = random_instance(rnd)
    base = set(filter_overlap(sets, previous, theta, limit, citers=citers.__getitem__))
    stricter = set(filter_overlap(sets, previous, min(theta + 1, len(sets) + 1), limit, citers=citers.__getitem__))
    smaller = set(filter_overlap(sets, previous, theta, max(1, limit - 1), citers=citers.__getitem__))
    assert stricter <= base and smaller <= base
    assert not base & set(previous)
    assert len(base) <= limit


def test_filter_overlap_rejects_bad_parameters():
    with pytest.raises(ValueError):
        filter_overlap([{1}], set(), 0, 3)
    with pytest.raises(ValueError):
        filter_overlap([{1}], set(), 1, 0)


def test_feather_interleaves_and_dedups():
    fut = [CitationRecord("A"), CitationRecord("B"), CitationRecord("C")]
    past = [CitationRecord("X"), CitationRecord("a"), CitationRecord("Y")]
    assert [r.title for r in feather(fut, past)] == ["A", "X", "B", "C", "Y"]


# -- tools on a fixture corpus --------------------------------------------------------


def rcs_entry(text_fragment, summary, score):
    return MockEntry({"system_contains": "relevance_score", "contains": text_fragment}, [rcs_reply(summary, score)])


GENE_RCS = [
    rcs_entry("Base editors", "HBB correction in 60 percent of cells.", 9),
    rcs_entry("Prime editing reached", "Prime editing at 20 percent in neurons.", 6),
    rcs_entry("CRISPR screen", "Twelve essential genes.", 2),
    rcs_entry("Soil samples", "Unrelated.", 0),
]


def test_search_with_year_range_adds_two_papers(gene_corpus):
    services = services_for(gene_corpus, [])
    state = AgentState("q")
    cfg = preset("litqa_default", "q")
    assert tool_paper_search("gene editing 2020-2023", state, cfg, services) == 2
    assert set(state.docs) == {"Smith2021Gene", "Jones2022Prime"}
    assert state.new_docs_since_gather
    assert tool_paper_search("gene editing 2020-2023", state, cfg, services) == 0


def test_search_errors_become_tool_failures(gene_corpus):
    services = services_for(gene_corpus, [])
    with pytest.raises(ToolFailure):
        tool_paper_search("  ", AgentState("q"), preset("litqa_default", "q"), services)
    services.providers.search.down.add("search")
    with pytest.raises(ToolFailure, match="paper search failed"):
        tool_paper_search("gene editing", AgentState("q"), preset("litqa_default", "q"), services)


def gathered_state(root, cfg, entries=GENE_RCS, search="gene editing"):
    services = services_for(root, entries)
    state = AgentState("How efficient is gene editing?")
    tool_paper_search(search, state, cfg, services)
    tool_gather_evidence("gene editing efficiency", state, cfg, services)
    return state, services


def test_gather_scores_and_sorts(gene_corpus):
    cfg = preset("litqa_default", "q")
    state, services = gathered_state(gene_corpus, cfg)
    assert [s.relevance_score for s in state.summaries] == [9, 6, 2]
    assert state.summaries[0].doc_key == "Smith2021Gene"
    assert len(services.gateway.requests) == 3
    assert state.top_k_docs == {"Smith2021Gene", "Jones2022Prime", "Kim2020Crispr"}


def test_gather_is_noop_without_new_papers(gene_corpus):
    cfg = preset("litqa_default", "q")
    state, services = gathered_state(gene_corpus, cfg)
    assert tool_gather_evidence("gene editing efficiency", state, cfg, services) == 0
    assert len(services.gateway.requests) == 3
    # a new phrase re-ranks, but chunks with summaries are not re-summarized
    assert tool_gather_evidence("another phrase", state, cfg, services) == 0
    assert len(services.gateway.requests) == 3


def test_gather_respects_top_k_depth(gene_corpus):
    cfg = preset("litqa_default", "q", consider_sources=1)
    state, services = gathered_state(gene_corpus, cfg)
    assert len(state.summaries) == 1
    assert len(state.top_k_docs) == 1


def test_gather_discards_malformed_replies(gene_corpus):
    entries = [MockEntry({"system_contains": "relevance_score"}, ["not json"])]
    state, _ = gathered_state(gene_corpus, preset("litqa_default", "q"), entries)
    assert state.summaries == []


def test_skip_rcs_scores_by_similarity_without_llm(gene_corpus):
    cfg = preset("no_rcs", "q")
    state, services = gathered_state(gene_corpus, cfg, entries=[])
    assert services.gateway.requests == []
    assert len(state.summaries) == 3
    for s in state.summaries:
        assert s.summary == s.chunk.text
        assert s.relevance_score == min(10, max(0, round(10 * s.similarity)))
    scores = [s.relevance_score for s in state.summaries]
    assert scores == sorted(scores, reverse=True)


def test_rcs_requests_are_rendered_prompts(gene_corpus):
    cfg = preset("litqa_default", "q")
    _, services = gathered_state(gene_corpus, cfg)
    req = services.gateway.requests[0]
    assert req.model == cfg.summary_llm
    assert req.system == cfg.prompts.render("rcs_system", summary_length=cfg.summary_length)
    assert req.user.startswith("Excerpt from ") and req.user.endswith("Query: gene editing efficiency")


def test_score_adjust_hook(gene_corpus):
    cfg = preset("litqa_default", "q")
    services = services_for(gene_corpus, GENE_RCS)
    state = AgentState("q", score_adjust=lambda s: s.relevance_score - 5)
    tool_paper_search("gene editing", state, cfg, services)
    tool_gather_evidence("q", state, cfg, services)
    assert [s.relevance_score for s in state.summaries] == [4, 1, 0]


def test_generate_answer_uses_cutoff_and_extracts_citations(gene_corpus):
    cfg = preset("litqa_default", "q", max_sources=2)
    state, services = gathered_state(gene_corpus, cfg)
    services.gateway.entries.append(
        MockEntry({"regex": "^Answer the question below"}, ["Base editing works (Smith2021Gene pages 1-2; Kim2020Crispr pages 1-2)."])
    )
    answer = tool_generate_answer(state.question, state, cfg, services)
    req = services.gateway.requests[-1]
    assert req.system == ""
    assert "Smith2021Gene pages 1-2: HBB" in req.user and "Kim2020Crispr" not in req.user
    assert answer.context_keys == ["Smith2021Gene pages 1-2", "Jones2022Prime pages 1-2"]
    assert answer.cited == ["Smith2021Gene"]
    assert answer.attributed_dois == ["10.1/a"]
    assert not answer.insufficient


def test_generate_answer_without_evidence_skips_llm(gene_corpus):
    services = services_for(gene_corpus, [])
    state = AgentState("q")
    answer = tool_generate_answer("q", state, preset("litqa_default", "q"), services)
    assert answer.insufficient and services.gateway.requests == []


def test_generate_answer_flags_cannot_answer(gene_corpus):
    cfg = preset("litqa_default", "q")
    state, services = gathered_state(gene_corpus, cfg)
    services.gateway.entries.append(MockEntry({"regex": "^Answer the question"}, ["I cannot answer."]))
    assert tool_generate_answer("q", state, cfg, services).insufficient


@pytest.mark.parametrize(
    "text,docs,chunks",
    [
        ("A (Smith2021Gene pages 3-4).", ["Smith2021Gene"], ["Smith2021Gene pages 3-4"]),
        ("A (Smith2021Gene pages 3-4, Jones2022Prime pages 1-2)", ["Smith2021Gene", "Jones2022Prime"], ["Smith2021Gene pages 3-4", "Jones2022Prime pages 1-2"]),
        ("A (Smith2021Gene page 3)", ["Smith2021Gene"], ["Smith2021Gene pages 3"]),
        ("no citations here (see above)", [], []),
        ("A (Smith2021Gene pages 3–4) and again (Smith2021Gene pages 3-4)", ["Smith2021Gene"], ["Smith2021Gene pages 3-4"]),
    ],
)
def test_extract_citations(text, docs, chunks):
    assert extract_citations(text) == (docs, chunks)


def test_extract_citations_drops_unknown_keys():
    docs, chunks = extract_citations("x (Made2020Up pages 1-2; Smith2021Gene pages 9-10)", ["Smith2021Gene pages 1-2"])
    assert docs == ["Smith2021Gene"] and chunks == []


def test_format_context_includes_extra_keys():
    chunk = Chunk("K", 0, "t", (0, 1))
    s = EvidenceSummary("K", chunk, "sum", 7, "Cite.", {"gene_name": "TP53"})
    assert format_context([s]) == "K pages 1-2: sum\ngene_name: TP53\nFrom Cite."


def test_add_documents_dedups_and_renames(tmp_path):
    services = services_for(tmp_path, [])
    state = AgentState("q")
    cfg = preset("litqa_default", "q")
    docs = [Document("A", "Title", doi="10.1/x", raw_text="aaa"), Document("B", "title", raw_text="bbb"),
            Document("A", "Other", raw_text="ccc"), Document("E", "Empty")]
    assert add_documents(state, docs, cfg, services) == 2
    assert set(state.docs) == {"A", "A2"}
    assert state.skip_log == ["skipped E: no text after parsing"]


def test_sections_chunking_falls_back_without_sections(tmp_path):
    services = services_for(tmp_path, [])
    state = AgentState("q")
    cfg = preset("wikicrow", "q")
    add_documents(state, [Document("A", "T", raw_text="plain")], cfg, services)
    assert state.chunks[0].section_title is None


# -- citation traversal ---------------------------------------------------------------


def traversal_state(root, scores=(9, 8)):
    entries = [
        MockEntry({"system_contains": "relevance_score", "contains": "alpha source text"}, [rcs_reply("one", scores[0])]),
        MockEntry({"system_contains": "relevance_score", "contains": "alpha second source"}, [rcs_reply("two", scores[1])]),
    ]
    services = services_for(root, entries)
    state = AgentState("alpha?")
    cfg = preset("litqa_default", "q")
    tool_paper_search("alpha", state, cfg, services)
    tool_gather_evidence("alpha", state, cfg, services)
    return state, services, cfg


def test_traversal_default_fraction_keeps_single_overlaps_for_two_sources(traversal_corpus):
    state, services, cfg = traversal_state(traversal_corpus)
    assert traverse_citations(state, cfg, services) == 3
    assert set(state.docs) == {"Src1", "Src2", "Cit1", "Ref1", "Ref2"}
    assert state.new_docs_since_gather


def test_traversal_full_fraction_keeps_shared_papers_only(traversal_corpus):
    state, services, cfg = traversal_state(traversal_corpus)
    params = cfg.traversal.model_copy(update={"overlap_fraction": Fraction(1)})
    assert traverse_citations(state, cfg, services, params) == 2
    assert set(state.docs) == {"Src1", "Src2", "Cit1", "Ref1"}


def test_traversal_threshold_is_inclusive(traversal_corpus):
    state, services, cfg = traversal_state(traversal_corpus, scores=(8, 7))
    # one source: threshold ceil(1/3) = 1, so every citation of Src1 is eligible
    assert traverse_citations(state, cfg, services) == 3
    assert {"Ref1", "Ref2", "Cit1"} <= set(state.docs)


def test_traversal_score_threshold_eleven_is_noop(traversal_corpus):
    state, services, cfg = traversal_state(traversal_corpus)
    params = cfg.traversal.model_copy(update={"score_threshold": 11})
    assert traverse_citations(state, cfg, services, params) == 0
    assert set(state.docs) == {"Src1", "Src2"}


def test_traversal_logs_unresolvable(traversal_corpus):
    state, services, cfg = traversal_state(traversal_corpus)
    params = cfg.traversal.model_copy(update={"overlap_fraction": Fraction(1, 2)})
    traverse_citations(state, cfg, services, params)
    assert any("Missing paper" in line for line in state.skip_log)


def test_traversal_one_direction_down_continues(traversal_corpus):
    state, services, cfg = traversal_state(traversal_corpus)
    services.providers.search.down.add("semantic_scholar")
    # past references still come from the second provider
    assert traverse_citations(state, cfg, services) == 0
    services.providers.citation.pop("crossref")
    with pytest.raises(ToolFailure):
        traverse_citations(state, cfg, services)
