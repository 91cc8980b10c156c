import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from litagent.corpus import (
    Chunk,
    CorpusError,
    Document,
    chunk_document,
    chunk_sections,
    chunk_sliding,
    dedup_key,
    group_by_identity,
    keys_collide,
    load_document,
    make_doc_key,
    parse_tei,
    save_document,
)


def covers(spans, length):
    """True when the sorted spans tile [0, length) with no gaps."""
    reach = 0
    for start, end in sorted(spans):
        if start > reach:
            return False
        reach = max(reach, end)
    return reach == length


@st.composite
def chunk_params(draw):
    size = draw(st.integers(1, 60))
    overlap = draw(st.integers(0, size - 1))
    text = draw(st.text(min_size=0, max_size=400))
    return text, size, overlap


@settings(max_examples=200, deadline=None)
@given(chunk_params())
def test_sliding_chunks_cover_text(params):
    text, size, overlap = params
    chunks = chunk_sliding(text, size, overlap)
    assert covers([c.char_span for c in chunks], len(text))
    for i, c in enumerate(chunks):
        assert c.text == text[slice(*c.char_span)]
        assert len(c.text) <= size
        assert c.char_span[0] == i * (size - overlap)


def test_sliding_example_spans():
    chunks = chunk_sliding("x" * 25, 10, 3)
    assert [c.char_span for c in chunks] == [(0, 10), (7, 17), (14, 24), (21, 25)]
    assert [c.pages_label for c in chunks] == ["pages 1-2", "pages 2-3", "pages 3-4", "pages 4-5"]


def test_empty_text_gives_no_chunks():
    assert chunk_sliding("", 10, 2) == []


@pytest.mark.parametrize("size,overlap", [(0, 0), (5, 5), (5, -1)])
def test_invalid_window_rejected(size, overlap):
    with pytest.raises(CorpusError):
        chunk_sliding("abc", size, overlap)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.text(alphabet="abc de", min_size=1, max_size=120).filter(lambda s: s.strip()), min_size=1, max_size=5),
    st.integers(5, 40),
)
def test_section_chunks_stay_inside_sections(bodies, size):
    bodies = [" ".join(b.split()) for b in bodies]
    doc = Document("K", "T", sections=[(f"S{i}", b) for i, b in enumerate(bodies)], raw_text="x")
    chunks = chunk_sections(doc, size, 0)
    by_section = {}
    for c in chunks:
        body = bodies[int(c.section_title[1:])]
        assert c.text == body[slice(*c.char_span)]
        by_section.setdefault(c.section_title, []).append(c.char_span)
    for title, spans in by_section.items():
        assert covers(spans, len(bodies[int(title[1:])]))
    assert [c.chunk_id for c in chunks] == list(range(len(chunks)))


def test_reference_sections_skipped():
    doc = Document("K", "T", sections=[("Intro", "hello world"), ("References", "[1] Someone 2020"), ("Refs", "x")],
                   reference_sections={"Refs"})
    titles = [c.section_title for c in chunk_sections(doc, 100)]
    assert titles == ["Intro"]


def test_sections_without_sections_is_error():
    with pytest.raises(CorpusError, match="simple_overlap"):
        chunk_document(Document("K", "T", raw_text="abc"), 10, 0, "sections")
    with pytest.raises(CorpusError):
        chunk_document(Document("K", "T", raw_text="abc"), 10, 0, "other")


def test_raw_text_built_from_sections():
    doc = Document("K", "T", sections=[("A", "one"), ("Refs", "two")], reference_sections={"Refs"})
    assert doc.raw_text == "one"


def test_chunk_key_and_citation():
    doc = Document("Smith2021Gene", "Gene editing.", doi="10.1/ABC", year=2021, authors=["A", "B", "C", "D"],
                   journal="J", citation_count=4)
    assert doc.doi == "10.1/abc"
    assert doc.citation() == "Gene editing. A, B, C et al. J, 2021. doi:10.1/abc. This article has 4 citations."
    assert Chunk("Smith2021Gene", 2, "x", (0, 1)).key == "Smith2021Gene pages 3-4"


def test_dedup_identity():
    assert dedup_key(" Gene  Editing ", "10.1/A") == ("gene editing", "10.1/a")
    with pytest.raises(CorpusError):
        dedup_key(None, " ")
    assert keys_collide(("a", None), ("a", "x"))
    assert not keys_collide(("a", None), (None, "x"))


def test_group_by_identity_is_transitive():
    keys = [("a", "1"), ("b", "2"), ("b", "1"), ("c", None), (None, "2")]
    assert group_by_identity(keys) == [0, 0, 0, 3, 0]


def test_make_doc_key_unique():
    assert make_doc_key(["Jane Smith"], 2021, "On gene editing") == "Smith2021Gene"
    assert make_doc_key(["Jane Smith"], 2021, "On gene editing", taken={"Smith2021Gene"}) == "Smith2021Gene2"
    assert make_doc_key([], None, "a b") == "AnonPaper"


TEI = """<TEI xmlns="http://www.tei-c.org/ns/1.0">
<teiHeader><fileDesc><titleStmt><title>Prime editing in neurons</title></titleStmt>
<sourceDesc><biblStruct><analytic><author><persName><forename>Ada</forename><surname>Jones</surname></persName></author>
<idno type="DOI">10.1/XYZ</idno></analytic><monogr><imprint><date when="2022-03-01"/></imprint></monogr></biblStruct></sourceDesc>
</fileDesc><profileDesc><abstract><p>Short abstract.</p></abstract></profileDesc></teiHeader>
<text><body>
<div><head>Introduction</head><p>First   paragraph.</p><p>Second.</p></div>
<div><p>Untitled body.</p></div>
<figure><head>Figure 1</head><figDesc>Editing rates.</figDesc></figure>
</body><back><div type="references"><listBibl><biblStruct/></listBibl></div></back></text></TEI>"""


def test_parse_tei():
    doc = parse_tei(TEI)
    assert doc.title == "Prime editing in neurons"
    assert doc.doi == "10.1/xyz"
    assert doc.year == 2022
    assert doc.doc_key == "Jones2022Prime"
    assert doc.sections[0] == ("Abstract", "Short abstract.")
    assert ("Introduction", "First paragraph. Second.") in doc.sections
    assert ("Section 1", "Untitled body.") in doc.sections
    assert doc.sections[-1][0] == "Figure 1"


def test_parse_tei_malformed():
    with pytest.raises(CorpusError):
        parse_tei("<TEI>")


def test_save_and_load_round_trip(tmp_path):
    doc = Document("K", "T", doi="10.1/x", sections=[("A", "alpha beta")])
    chunks = chunk_sections(doc, 5)
    doc2, chunks2 = load_document(save_document(doc, chunks, tmp_path))
    assert doc2 == doc
    assert chunks2 == chunks
