"""Prompt templates and placeholder-checked rendering.

Templates use ``str.format`` syntax, so literal braces are doubled.  Every
template has a declared placeholder schema; a template whose placeholders do
not match its schema is rejected when a :class:`PromptSet` is built, and
rendering with a partial binding raises instead of leaking ``{name}`` into a
request.
"""

from __future__ import annotations

import string

from pydantic import BaseModel, ConfigDict, model_validator

AGENT_DIRECTIVE = (
    "Answer question: {question}. Search for papers, gather evidence, collect papers "
    "cited in evidence then re-gather evidence, and answer. Gathering evidence will do "
    "nothing if you have not done a new search or collected new papers. If you do not "
    "have enough evidence to generate a good answer, you can:\n"
    "- Search for more papers (preferred)\n"
    "- Collect papers cited by previous evidence (preferred)\n"
    "- Gather more evidence using a different phrase\n"
    "\n"
    "If you search for more papers or collect new papers cited by previous evidence, "
    "remember to gather evidence again. Once you have five or more pieces of evidence "
    "from multiple sources, or you have tried a few times, call {gen_answer_tool_name} "
    "tool. The {gen_answer_tool_name} tool output is visible to the user, so you do not "
    "need to restate the answer and can simply terminate if the answer looks "
    "sufficient. The current status of evidence/papers/cost is {status}"
)

PAPER_SEARCH_SCHEMA = (
    "A search query in this format: [query], [start year]-[end year]. You may include "
    "years as the last word in the query, e.g. 'machine learning 2020' or 'machine "
    "learning 2010-2020'. The current year is {current_year}. The query portion can be "
    "a specific phrase, complete sentence, or general keywords, e.g. 'machine learning "
    "for immunology'."
)

RCS_SYSTEM = (
    "Provide a summary of the relevant information that could help answer the question "
    "based on the excerpt. The excerpt may be irrelevant.  Do not directly answer the "
    "question - only summarize relevant information. Respond with the following JSON "
    "format:\n"
    '{{ "summary": "...",\n'
    '"relevance_score": "..."\n'
    "}}\n"
    'where "summary" is relevant information from text - {summary_length} words and '
    '"relevance_score" is the relevance of "summary" to answer the question (integer '
    "out of 10)"
)

# Gene-article variant: one extra JSON key carries the gene the excerpt is about.
RCS_SYSTEM_GENE = (
    "Provide a summary of the relevant information that could help answer the question "
    "based on the excerpt. The excerpt may be irrelevant.  Do not directly answer the "
    "question - only summarize relevant information. Respond with the following JSON "
    "format:\n"
    '{{ "summary": "...",\n'
    '"relevance_score": "...",\n'
    '"gene_name": "..."\n'
    "}}\n"
    'where "summary" is relevant information from text - {summary_length} words, '
    '"relevance_score" is the relevance of "summary" to answer the question (integer '
    'out of 10) and "gene_name" is the gene symbol the excerpt is primarily about'
)

RCS_USER = "Excerpt from {citation}\n----\n{text}\n----\nQuery: {question}"

ANSWER = (
    "Answer the question below with the context.\n"
    "\n"
    "Context:\n"
    "{context}\n"
    "----\n"
    "Question: {question}\n"
    "\n"
    'Write an answer based on the context. If the context provides insufficient '
    'information and the question cannot be directly answered, reply "I cannot '
    'answer." For each part of your answer, indicate which sources most support it via '
    "citation keys at the end of sentences, like (Example2012Example pages 3-4). Only "
    "cite from the context and only use the valid keys. Write in the style of a "
    "Wikipedia article, with concise sentences and coherent paragraphs. The context "
    "comes from a variety of sources and is only a summary, so there may inaccuracies "
    "or ambiguities. If quotes are present and relevant, use them in the answer. This "
    "answer will go directly onto Wikipedia, so do not add any extraneous information.\n"
    "\n"
    "Answer ({answer_length}):"
)

LETTER_EXTRACTION = (
    "Extract the single letter answer from the following question and answer\n"
    "{qa}\n"
    "\n"
    "Single Letter Answer:"
)

CONTRADICTION_DETECTION = (
    "Are there any contradictions to the following claim in the scientific literature?\n"
    "\n"
    "Claim: {claim}\n"
    "\n"
    "Search for papers that support or contradict the claim and reason over the "
    "evidence. End your response with a final paragraph that contains exactly one "
    "choice from this scale: {scale}. Choose Lack of evidence when no relevant "
    "evidence is found."
)

CLAIM_EXTRACTION = (
    "Extract the scientific claims made in the excerpt below. A claim is a clear, "
    "testable and generalizable statement of a finding that makes sense outside the "
    "context of the paper. Do not extract methods, descriptions or common knowledge.\n"
    "\n"
    "{excerpt}\n"
    "\n"
    "Respond with a JSON list of claim strings."
)

CLAIM_FILTER = (
    "Rate the quality of the following claim from 0 to 10. A high quality claim is "
    "clear, testable, generalizable, self-contained and supported by its source "
    "excerpt.\n"
    "\n"
    "Source excerpt:\n"
    "{excerpt}\n"
    "\n"
    "Claim: {claim}\n"
    "\n"
    'Respond with the following JSON format: {{"score": "..."}}'
)

# Placeholder schema per template field.
SCHEMAS: dict[str, frozenset[str]] = {
    "agent_directive": frozenset({"question", "gen_answer_tool_name", "status"}),
    "paper_search_schema": frozenset({"current_year"}),
    "rcs_system": frozenset({"summary_length"}),
    "rcs_user": frozenset({"citation", "text", "question"}),
    "answer": frozenset({"context", "question", "answer_length"}),
    "letter_extraction": frozenset({"qa"}),
    "contradiction_detection": frozenset({"claim", "scale"}),
    "claim_extraction": frozenset({"excerpt"}),
    "claim_filter": frozenset({"excerpt", "claim"}),
}


class PromptError(ValueError):
    pass


def placeholders(template: str) -> set[str]:
    """Return the named fields referenced by a format template."""
    names = set()
    for _, field, _, _ in string.Formatter().parse(template):
        if field is None:
            continue
        if field == "" or field.isdigit():
            raise PromptError(f"positional placeholder in template: {template[:40]!r}")
        names.add(field.split(".")[0].split("[")[0])
    return names


class PromptSet(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    agent_directive: str = AGENT_DIRECTIVE
    paper_search_schema: str = PAPER_SEARCH_SCHEMA
    rcs_system: str = RCS_SYSTEM
    rcs_user: str = RCS_USER
    answer: str = ANSWER
    letter_extraction: str = LETTER_EXTRACTION
    contradiction_detection: str = CONTRADICTION_DETECTION
    claim_extraction: str = CLAIM_EXTRACTION
    claim_filter: str = CLAIM_FILTER

    @model_validator(mode="after")
    def _check_schemas(self) -> "PromptSet":
        for name, expected in SCHEMAS.items():
            found = placeholders(getattr(self, name))
            if found != expected:
                raise PromptError(
                    f"prompts.{name}: placeholders {sorted(found)} do not match "
                    f"schema {sorted(expected)}"
                )
        return self

    def render(self, name: str, **binding: object) -> str:
        if name not in SCHEMAS:
            raise PromptError(f"unknown prompt {name!r}")
        missing = SCHEMAS[name] - binding.keys()
        if missing:
            raise PromptError(f"prompts.{name}: unbound placeholders {sorted(missing)}")
        extra = binding.keys() - SCHEMAS[name]
        if extra:
            raise PromptError(f"prompts.{name}: unexpected bindings {sorted(extra)}")
        return getattr(self, name).format(**binding)
