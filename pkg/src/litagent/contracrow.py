"""Contradiction detection: claim extraction and filtering, Likert verdicts, benchmark synthesis and ROC."""

from __future__ import annotations

import json
import logging
import random
import re
import statistics
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

from .config import EngineConfig
from .corpus import Document, chunk_sliding, normalize_whitespace, REFERENCE_TITLES
from .llm import CompletionRequest, CostTracker, Gateway, iter_json_objects, parse_score
from .litqa import MCQuestion
from .state import Answer

log = logging.getLogger(__name__)

LIKERT_LABELS: tuple[str, ...] = (
    "Definitive Agreement",
    "Explicit Agreement",
    "Strong Agreement",
    "Agreement",
    "Possibly an Agreement",
    "Lack of evidence",
    "Possibly a Contradiction",
    "Nuanced Contradiction",
    "Contradiction",
    "Strong Contradiction",
    "Explicit Contradiction",
)
LACK_OF_EVIDENCE = 5
CONTRADICTION_THRESHOLD = 8
CLAIM_SCORE_THRESHOLD = 8
CLAIM_CHUNK_CHARS = 5000
BATCH_SIZE = 1000
REPHRASE_MODEL = "openai/gpt-4-turbo-2024-04-09"

REPHRASE_PROMPT = (
    "Rephrase the question and answer below into a single declarative factual statement. "
    "Respond with the statement only.\n"
    "\n"
    "Question: {question}\n"
    "Answer: {answer}\n"
    "\n"
    "Statement:"
)

_LOWER = {label.lower(): i for i, label in enumerate(LIKERT_LABELS)}
_LABEL_RE = re.compile(
    r"(?<![A-Za-z])(" + "|".join(re.escape(l) for l in sorted(LIKERT_LABELS, key=len, reverse=True)) + r")(?![A-Za-z])",
    re.I,
)


class LikertError(ValueError):
    pass


def likert_to_int(label: str) -> int:
    try:
        return _LOWER[label.strip().lower()]
    except KeyError:
        raise LikertError(f"unknown Likert label {label!r}; valid labels: {', '.join(LIKERT_LABELS)}") from None


def int_to_likert(position: int) -> str:
    if not isinstance(position, int) or not 0 <= position <= 10:
        raise LikertError(f"Likert position must be an integer in 0-10, got {position!r}")
    return LIKERT_LABELS[position]


def scale_text() -> str:
    return ", ".join(LIKERT_LABELS)


def final_paragraph(text: str) -> str:
    paragraphs = [p for p in re.split(r"\n\s*\n", text.strip()) if p.strip()]
    return paragraphs[-1] if paragraphs else ""


def parse_likert(text: str) -> int | None:
    """Position of the last scale label in the final paragraph (longest label wins at each spot)."""
    matches = _LABEL_RE.findall(final_paragraph(text))
    return likert_to_int(matches[-1]) if matches else None


# -- claims --------------------------------------------------------------------------


@dataclass(frozen=True)
class Claim:
    text: str
    doc_key: str
    section: str
    chunk_ref: str
    quality_score: int

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, rec: Mapping[str, Any]) -> "Claim":
        return cls(rec["text"], rec.get("doc_key", ""), rec.get("section", ""), rec.get("chunk_ref", ""), int(rec.get("quality_score", 10)))


@dataclass(frozen=True)
class ClaimChunk:
    ref: str
    section: str
    text: str
    char_span: tuple[int, int]


def claim_chunks(document: Document, size: int = CLAIM_CHUNK_CHARS) -> list[ClaimChunk]:
    """Per-section chunks of at most ``size`` characters, no overlap, headed by paper and section titles."""
    sections = list(document.sections)
    if not sections and document.raw_text.strip():
        sections = [("Body", document.raw_text)]
    out = []
    for index, (title, body) in enumerate(sections):
        if title in document.reference_sections or title.strip().lower() in REFERENCE_TITLES:
            continue
        body = normalize_whitespace(body)
        if not body:
            continue
        for piece in chunk_sliding(body, size, 0, doc_key=document.doc_key, section_title=title):
            header = f"Paper: {document.title}\nSection: {title}\n\n"
            ref = f"{document.doc_key} section {index + 1} part {piece.chunk_id + 1}"
            out.append(ClaimChunk(ref, title, header + piece.text, piece.char_span))
    return out


def _parse_claim_list(reply: str) -> list[str] | None:
    for value in iter_json_objects(reply):
        if isinstance(value, list) and all(isinstance(v, str) for v in value):
            return [v.strip() for v in value if v.strip()]
        if isinstance(value, dict) and isinstance(value.get("claims"), list):
            return [str(v).strip() for v in value["claims"] if str(v).strip()]
    return None


def _parse_claim_score(reply: str) -> int | None:
    for value in iter_json_objects(reply):
        if isinstance(value, dict) and "score" in value:
            score = parse_score(value["score"])
            if score is not None:
                return min(10, max(0, score))
    return parse_score(reply)


def extract_claims(
    document: Document,
    gateway: Gateway,
    config: EngineConfig,
    *,
    threshold: int = CLAIM_SCORE_THRESHOLD,
    jobs: int = 8,
    tracker: CostTracker | None = None,
) -> list[Claim]:
    """Extract candidate claims per chunk, score each with the filter prompt, keep scores >= ``threshold``."""
    chunks = claim_chunks(document)
    model = config.claim_llm

    def candidates(chunk: ClaimChunk) -> list[str]:
        prompt = config.prompts.render("claim_extraction", excerpt=chunk.text)
        reply = gateway.complete(CompletionRequest(model, "", prompt, config.temperature), tracker)
        claims = _parse_claim_list(reply)
        if claims is None:
            log.warning("%s: claim extraction reply unparsable; chunk skipped", chunk.ref)
            return []
        return claims

    def score(item: tuple[ClaimChunk, str]) -> int | None:
        chunk, claim = item
        prompt = config.prompts.render("claim_filter", excerpt=chunk.text, claim=claim)
        return _parse_claim_score(gateway.complete(CompletionRequest(model, "", prompt, config.temperature), tracker))

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        per_chunk = list(pool.map(candidates, chunks))
        pairs = [(chunk, c) for chunk, cs in zip(chunks, per_chunk) for c in cs]
        scores = list(pool.map(score, pairs))
    out = []
    for (chunk, text), s in zip(pairs, scores):
        if s is None:
            log.info("claim filter reply unparsable; dropping %r", text[:60])
            continue
        if s >= threshold:
            out.append(Claim(text, document.doc_key, chunk.section, chunk.ref, s))
    return out


# -- verdicts ------------------------------------------------------------------------


@dataclass
class Verdict:
    claim: str
    position: int
    reasoning: str
    cited: list[str] = field(default_factory=list)
    parse_failure: bool = False
    doc_key: str = ""
    label: bool | None = None

    def __post_init__(self) -> None:
        int_to_likert(self.position)

    @property
    def likert(self) -> str:
        return int_to_likert(self.position)

    def is_contradiction(self, threshold: int = CONTRADICTION_THRESHOLD) -> bool:
        return self.position >= threshold

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["likert"] = self.likert
        return d

    @classmethod
    def from_dict(cls, rec: Mapping[str, Any]) -> "Verdict":
        return cls(
            rec["claim"], int(rec["position"]), rec.get("reasoning", ""), list(rec.get("cited", [])),
            bool(rec.get("parse_failure", False)), rec.get("doc_key", ""), rec.get("label"),
        )


def contradiction_query(claim: str, config: EngineConfig) -> str:
    return config.prompts.render("contradiction_detection", claim=claim, scale=scale_text())


AskFn = Callable[[str], tuple[Answer, Any]]


def detect_contradiction(claim: Claim | str, config: EngineConfig, ask: AskFn) -> Verdict:
    """Run the engine on the contradiction query for one claim and read back the Likert choice."""
    text = claim.text if isinstance(claim, Claim) else claim
    answer, _ = ask(contradiction_query(text, config))
    position = parse_likert(answer.text)
    failure = position is None
    if failure:
        log.warning("no Likert label in response for claim %r; using Lack of evidence", text[:60])
        position = LACK_OF_EVIDENCE
    return Verdict(
        claim=text,
        position=position,
        reasoning=answer.text,
        cited=list(answer.cited_chunks),
        parse_failure=failure,
        doc_key=claim.doc_key if isinstance(claim, Claim) else "",
    )


def detect_many(claims: Sequence[Claim | str], config: EngineConfig, ask: AskFn, *, jobs: int = 8, batch_size: int = BATCH_SIZE) -> list[Verdict]:
    """Claims run concurrently, each with its own engine state, in batches of at most ``batch_size``."""
    out: list[Verdict] = []
    for start in range(0, len(claims), batch_size):
        batch = claims[start : start + batch_size]
        with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
            out.extend(pool.map(lambda c: detect_contradiction(c, config, ask), batch))
    return out


# -- benchmark synthesis -------------------------------------------------------------


@dataclass(frozen=True)
class LabeledStatement:
    question_id: str
    statement: str
    contradiction: bool
    source_answer: str

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def rephrase(question: str, answer: str, gateway: Gateway | None, model: str = REPHRASE_MODEL) -> str:
    if gateway is None:
        # offline fallback; real runs rephrase with a model
        return f"{question.strip().rstrip('?')}: {answer.strip()}."
    prompt = REPHRASE_PROMPT.format(question=question, answer=answer)
    return gateway.complete(CompletionRequest(model, "", prompt, 0.0)).strip()


def build_contradetect(questions: Sequence[MCQuestion], gateway: Gateway | None, seed: int, model: str = REPHRASE_MODEL) -> list[LabeledStatement]:
    """Turn answerable questions into statements: half true (ideal answer), half contradicted (first distractor)."""
    kept = [q for q in questions if q.ideal is not None]
    order = list(range(len(kept)))
    random.Random(seed).shuffle(order)
    true_half = set(order[: (len(kept) + 1) // 2])
    out = []
    for i, q in enumerate(kept):
        if i in true_half:
            answer, label = q.ideal_text, False
        else:
            if not q.distractors:
                log.warning("question %s has no distractor; skipped", q.id)
                continue
            answer, label = q.distractors[0], True
        out.append(LabeledStatement(q.id, rephrase(q.stem, answer, gateway, model), label, answer))
    return out


# -- evaluation ----------------------------------------------------------------------


@dataclass(frozen=True)
class RocReport:
    thresholds: tuple[int, ...]
    tpr: tuple[float, ...]
    fpr: tuple[float, ...]
    auc: float
    accuracy: float
    precision: float | None
    false_positive_rate: float
    decision_threshold: int

    def table(self) -> str:
        lines = [f"{'threshold':>9} {'tpr':>7} {'fpr':>7}"]
        lines += [f"{t:>9} {a:>7.4f} {b:>7.4f}" for t, a, b in zip(self.thresholds, self.tpr, self.fpr)]
        prec = "n/a" if self.precision is None else f"{self.precision:.4f}"
        lines.append(f"AUC {self.auc:.4f}")
        lines.append(
            f"at threshold {self.decision_threshold}: accuracy {self.accuracy:.4f} precision {prec} "
            f"false positive rate {self.false_positive_rate:.4f}"
        )
        return "\n".join(lines)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def roc_auc(positions: Sequence[int], labels: Sequence[bool], decision_threshold: int = CONTRADICTION_THRESHOLD) -> RocReport:
    """ROC over integer thresholds 0-11 (predict contradiction when position >= threshold), trapezoid AUC."""
    if len(positions) != len(labels):
        raise ValueError("positions and labels differ in length")
    pos = sum(1 for l in labels if l)
    neg = len(labels) - pos
    if pos == 0 or neg == 0:
        raise ValueError("ROC needs at least one positive and one negative label")
    thresholds = tuple(range(11, -1, -1))
    tpr, fpr = [], []
    for t in thresholds:
        tp = sum(1 for p, l in zip(positions, labels) if l and p >= t)
        fp = sum(1 for p, l in zip(positions, labels) if not l and p >= t)
        tpr.append(tp / pos)
        fpr.append(fp / neg)
    auc = sum((fpr[i + 1] - fpr[i]) * (tpr[i + 1] + tpr[i]) / 2 for i in range(len(thresholds) - 1))
    tp = sum(1 for p, l in zip(positions, labels) if l and p >= decision_threshold)
    fp = sum(1 for p, l in zip(positions, labels) if not l and p >= decision_threshold)
    tn = neg - fp
    return RocReport(
        thresholds,
        tuple(tpr),
        tuple(fpr),
        auc,
        (tp + tn) / len(labels),
        tp / (tp + fp) if tp + fp else None,
        fp / neg,
        decision_threshold,
    )


def per_paper_stats(verdicts_by_paper: Mapping[str, Sequence[int | Verdict]], threshold: int = CONTRADICTION_THRESHOLD) -> dict[str, Any]:
    """Claims and contradictions per paper, corpus mean/SD and a histogram of contradiction counts."""
    if not verdicts_by_paper:
        return {}
    papers = {}
    for key in sorted(verdicts_by_paper):
        positions = [v.position if isinstance(v, Verdict) else int(v) for v in verdicts_by_paper[key]]
        papers[key] = {"claims": len(positions), "contradictions": sum(1 for p in positions if p >= threshold)}

    def mean_sd(values: list[int]) -> dict[str, float]:
        return {"mean": statistics.fmean(values), "sd": statistics.stdev(values) if len(values) > 1 else 0.0}

    claims = [p["claims"] for p in papers.values()]
    found = [p["contradictions"] for p in papers.values()]
    histogram = Counter(found)
    return {
        "threshold": threshold,
        "papers": papers,
        "claims_per_paper": mean_sd(claims),
        "contradictions_per_paper": mean_sd(found),
        "histogram": {str(k): histogram[k] for k in sorted(histogram)},
    }


def group_by_paper(verdicts: Iterable[Verdict]) -> dict[str, list[Verdict]]:
    out: dict[str, list[Verdict]] = {}
    for v in verdicts:
        out.setdefault(v.doc_key, []).append(v)
    return out


def write_records(path: str | Path, records: Iterable[Any]) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict() if hasattr(r, "to_dict") else r) + "\n")


def read_records(path: str | Path) -> list[dict[str, Any]]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
