"""Regenerate the shipped demo benchmark: fixture corpus, questions and scripted transcript.

The scripted answers pick letters for the seed-0 option order, so replaying
the benchmark with ``--seed 0 --repeats 1`` gives 3 correct, 1 incorrect and
1 unsure answer.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

from litagent.litqa import make_question, shuffle_options

DATA = Path(__file__).resolve().parents[1] / "src" / "litagent" / "data"

PAPERS = [
    {
        "doc_key": "Ortiz2021Signaling",
        "title": "Signaling kinases of the KLF-R family: a review",
        "doi": "10.5555/demo.101",
        "year": 2021,
        "authors": ["Lucia Ortiz", "Ben Hale"],
        "journal": "Demo Reviews in Cell Signaling",
        "citation_count": 212,
        "text": (
            "The KLF-R family of kinases controls stress signaling in epithelial cells. "
            "KLF-R7 is held inactive by an autoinhibitory loop and becomes active after "
            "phosphorylation within its activation segment. The exact residue was mapped "
            "in a later mutational study that combined mass spectrometry with alanine scanning. "
            "KLF-R7 activity rises sharply under oxidative stress."
        ),
    },
    {
        "doc_key": "Ng2022Activation",
        "title": "Activation of KLF-R7 by phosphorylation of a single serine",
        "doi": "10.5555/demo.001",
        "year": 2022,
        "authors": ["Mei Ng", "Omar Farouk", "Tess Lund"],
        "journal": "Demo Journal of Kinase Biology",
        "citation_count": 48,
        "text": (
            "We mapped the phosphorylation site that activates KLF-R7. Mass spectrometry "
            "identified a single phosphopeptide in the activation segment, and mutation of "
            "serine 212 to alanine abolished activity, whereas threonine 45 and tyrosine 301 "
            "mutants retained full activity. Phosphorylation of Ser212 is therefore required "
            "for KLF-R7 activation."
        ),
    },
    {
        "doc_key": "Baptiste2023Thermostable",
        "title": "A thermostable lipase from a hot spring metagenome",
        "doi": "10.5555/demo.002",
        "year": 2023,
        "authors": ["Anne Baptiste", "Kofi Mensah"],
        "journal": "Demo Extremophile Enzymology",
        "citation_count": 17,
        "text": (
            "The lipase TL-9 was expressed in E. coli and purified to homogeneity. Activity "
            "assays between 30 and 90 degrees showed maximal activity of TL-9 at 72 °C, with "
            "half of the peak activity retained at 85 °C. TL-9 was stable for 24 hours at 60 °C."
        ),
    },
    {
        "doc_key": "Sato2022Luminescent",
        "title": "A quorum sensor protein from a luminescent marine bacterium",
        "doi": "10.5555/demo.003",
        "year": 2022,
        "authors": ["Ken Sato", "Rhea Patel"],
        "journal": "Demo Microbial Signaling",
        "citation_count": 33,
        "text": (
            "The sensor protein HX-4 was cloned from Vibrio fischeri and characterized in vitro. "
            "HX-4 binds the autoinducer with nanomolar affinity and forms dimers in solution. "
            "Homologs were not detected in Escherichia coli or Bacillus subtilis."
        ),
    },
    {
        "doc_key": "Weber2023Cryoem",
        "title": "Cryo-EM structure of the pore complex PC-12",
        "doi": "10.5555/demo.004",
        "year": 2023,
        "authors": ["Jonas Weber", "Ada Osei", "Lin Zhou"],
        "journal": "Demo Structural Biology",
        "citation_count": 61,
        "text": (
            "We determined the cryo-EM structure of the pore complex PC-12 at 3.1 angstrom resolution. "
            "The complex assembles from six identical subunits arranged around a central channel, "
            "although earlier low-resolution studies had proposed an eight-fold arrangement."
        ),
    },
    {
        "doc_key": "Ivanova2021Synthesis",
        "title": "A scalable synthesis route to metabolite M-77",
        "doi": "10.5555/demo.005",
        "year": 2021,
        "authors": ["Olga Ivanova"],
        "journal": "Demo Organic Process Chemistry",
        "citation_count": 5,
        "text": (
            "We report a five-step synthesis of the metabolite M-77 from commercially available "
            "starting materials with an overall yield of 41 percent. The route avoids chromatography "
            "and was demonstrated at the 100 gram scale."
        ),
    },
]

SEARCH = {
    "klf-r7": ["Ortiz2021Signaling"],
    "tl-9": ["Baptiste2023Thermostable"],
    "hx-4": ["Sato2022Luminescent"],
    "pc-12": ["Weber2023Cryoem"],
    "m-77": ["Ivanova2021Synthesis"],
}

CITATIONS = {
    "semantic_scholar": {
        "references": {
            "10.5555/demo.101": [
                {"title": "Activation of KLF-R7 by phosphorylation of a single serine", "doi": "10.5555/demo.001", "citation_count": 48},
                {"title": "An unavailable conference abstract on KLF-R kinases", "doi": "10.5555/demo.999", "citation_count": 2},
            ]
        },
        "citers": {},
    },
    "crossref": {"references": {}, "citers": {}},
}

# (id, stem, ideal, distractors, gold doi, search phrase, gather phrase, RCS scores per paper, chosen option)
QUESTIONS = [
    (
        "demo-1",
        "Which residue of the kinase KLF-R7 must be phosphorylated for its activation?",
        "Serine 212",
        ["Threonine 45", "Tyrosine 301", "Serine 98"],
        "10.5555/demo.001",
    ),
    (
        "demo-2",
        "At what temperature does the lipase TL-9 show maximal activity?",
        "72 °C",
        ["55 °C", "85 °C", "37 °C"],
        "10.5555/demo.002",
    ),
    (
        "demo-3",
        "From which organism was the sensor protein HX-4 cloned?",
        "Vibrio fischeri",
        ["Escherichia coli", "Bacillus subtilis", "Aliivibrio salmonicida"],
        "10.5555/demo.003",
    ),
    (
        "demo-4",
        "How many subunits make up the pore complex PC-12?",
        "Six",
        ["Eight", "Four", "Twelve"],
        "10.5555/demo.004",
    ),
    (
        "demo-5",
        "What is the plasma half-life of the metabolite M-77 in humans?",
        "3 hours",
        ["30 minutes", "12 hours", "2 days"],
        "10.5555/demo.777",
    ),
]


def agent_call(tool: str, arguments: str) -> str:
    return json.dumps({"tool": tool, "arguments": arguments})


def rcs_reply(summary: str, score: int) -> str:
    return json.dumps({"summary": summary, "relevance_score": score})


def rcs_entry(title: str, phrase: str, summary: str, score: int) -> dict:
    regex = "^Excerpt from " + re.escape(title) + r"\.[\s\S]*Query: " + re.escape(phrase) + "$"
    return {"match": {"system_contains": "relevance_score", "regex": regex}, "response": rcs_reply(summary, score)}


def agent_entry(stem: str, calls: list[str]) -> dict:
    return {
        "match": {"system_contains": "You can call these tools", "contains": stem},
        "responses": calls,
        "cycle": True,
    }


def answer_entry(stem: str, text: str) -> dict:
    regex = r"^Answer the question below with the context\.[\s\S]*Question: " + re.escape(stem)
    return {"match": {"regex": regex}, "response": text}


def main() -> None:
    fixtures = DATA / "demo_fixtures"
    fixtures.mkdir(parents=True, exist_ok=True)
    with open(fixtures / "papers.jsonl", "w") as fh:
        for p in PAPERS:
            fh.write(json.dumps(p, ensure_ascii=False) + "\n")
    (fixtures / "search.json").write_text(json.dumps(SEARCH, indent=2) + "\n")
    (fixtures / "citations.json").write_text(json.dumps(CITATIONS, indent=2) + "\n")

    questions = [make_question(*q) for q in QUESTIONS]
    with open(DATA / "demo_questions.jsonl", "w") as fh:
        for q in questions:
            rec = {"id": q.id, "stem": q.stem, "options": [t for _, t in q.options], "ideal": q.ideal, "gold_doi": q.gold_doi}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")

    shuffled = {q.id: shuffle_options(q, 0) for q in questions}

    def letter(qid: str, text: str) -> str:
        return shuffled[qid].letter_of(text)

    titles = {p["doc_key"]: p["title"] for p in PAPERS}
    entries: list[dict] = [{"meta": {"strict": True}}]

    # 1: search, gather, traverse citations from the review, gather again, answer
    q1 = questions[0]
    phrase = "KLF-R7 activating phosphorylation site"
    entries.append(agent_entry(q1.stem, [
        agent_call("paper_search", "KLF-R7 phosphorylation activation"),
        agent_call("gather_evidence", phrase),
        agent_call("citation_traversal", ""),
        agent_call("gather_evidence", phrase),
        agent_call("generate_answer", q1.stem),
    ]))
    entries.append(rcs_entry(titles["Ortiz2021Signaling"], phrase,
                             "KLF-R7 is activated by phosphorylation in its activation segment; the residue was mapped later.", 8))
    entries.append(rcs_entry(titles["Ng2022Activation"], phrase,
                             "Mutating serine 212 to alanine abolished KLF-R7 activity; Ser212 phosphorylation is required.", 9))
    entries.append(answer_entry(q1.stem,
        f"{letter('demo-1', 'Serine 212')}) Serine 212. KLF-R7 activation requires phosphorylation of "
        "Ser212 in the activation segment (Ng2022Activation pages 1-2)."))

    # 2 and 3: straight search, gather, answer
    for q, key, phrase, summary, choice in (
        (questions[1], "Baptiste2023Thermostable", "TL-9 temperature optimum",
         "TL-9 shows maximal activity at 72 °C.", "72 °C"),
        (questions[2], "Sato2022Luminescent", "HX-4 source organism",
         "HX-4 was cloned from Vibrio fischeri.", "Vibrio fischeri"),
    ):
        entries.append(agent_entry(q.stem, [
            agent_call("paper_search", phrase),
            agent_call("gather_evidence", phrase),
            agent_call("generate_answer", q.stem),
        ]))
        entries.append(rcs_entry(titles[key], phrase, summary, 9))
        entries.append(answer_entry(q.stem, f"{letter(q.id, choice)}) {choice}. {summary} ({key} pages 1-2)"))

    # 4: the evidence is misread and a distractor is chosen
    q4 = questions[3]
    phrase = "PC-12 subunit stoichiometry"
    entries.append(agent_entry(q4.stem, [
        agent_call("paper_search", phrase),
        agent_call("gather_evidence", phrase),
        agent_call("generate_answer", q4.stem),
    ]))
    entries.append(rcs_entry(titles["Weber2023Cryoem"], phrase,
                             "PC-12 was proposed to have an eight-fold arrangement; the cryo-EM map resolves its subunits.", 7))
    entries.append(answer_entry(q4.stem,
        f"{letter('demo-4', 'Eight')}) Eight. PC-12 has an eight-fold arrangement of subunits (Weber2023Cryoem pages 1-2)."))

    # 5: only an unrelated paper is found, so no evidence and no answer
    q5 = questions[4]
    phrase = "M-77 plasma half-life"
    entries.append(agent_entry(q5.stem, [
        agent_call("paper_search", phrase),
        agent_call("gather_evidence", phrase),
        agent_call("generate_answer", q5.stem),
    ]))
    entries.append(rcs_entry(titles["Ivanova2021Synthesis"], phrase,
                             "The paper describes a synthesis route and reports nothing on pharmacokinetics.", 0))

    with open(DATA / "demo_transcript.jsonl", "w") as fh:
        for e in entries:
            fh.write(json.dumps(e, ensure_ascii=False) + "\n")


if __name__ == "__main__":
    main()
