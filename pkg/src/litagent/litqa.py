"""Multiple-choice benchmark harness: shuffling, letter extraction, grading and metrics."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
import statistics
import string
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from .config import EngineConfig
from .llm import CompletionRequest, Gateway
from .state import STAGES, Answer

log = logging.getLogger(__name__)

UNSURE = "Insufficient information to answer this question"
GRADER_MODEL = "openai/gpt-4-0613"
OUTCOMES = ("correct", "incorrect", "unsure")

# a multiplier coprime with n! for any realistic option count
_SEED_STRIDE = 1_000_003


class QuestionError(ValueError):
    pass


@dataclass(frozen=True)
class MCQuestion:
    id: str
    stem: str
    options: tuple[tuple[str, str], ...]
    ideal: str | None
    gold_doi: str | None = None

    def __post_init__(self) -> None:
        letters = [l for l, _ in self.options]
        if len(set(letters)) != len(letters):
            raise QuestionError(f"{self.id}: option letters are not distinct")
        if self.ideal is not None and self.ideal not in letters:
            raise QuestionError(f"{self.id}: ideal {self.ideal!r} is not an option letter")
        if self.gold_doi:
            object.__setattr__(self, "gold_doi", self.gold_doi.strip().lower())

    @property
    def letters(self) -> list[str]:
        return [l for l, _ in self.options]

    def text_of(self, letter: str) -> str:
        return dict(self.options)[letter]

    def letter_of(self, text: str) -> str:
        for letter, t in self.options:
            if t == text:
                return letter
        raise KeyError(text)

    @property
    def unsure_letter(self) -> str | None:
        for letter, t in self.options:
            if t == UNSURE:
                return letter
        return None

    @property
    def ideal_text(self) -> str | None:
        return None if self.ideal is None else self.text_of(self.ideal)

    @property
    def distractors(self) -> list[str]:
        return [t for l, t in self.options if l != self.ideal and t != UNSURE]


def make_question(
    id: str, stem: str, ideal: str | None, distractors: Sequence[str], gold_doi: str | None = None
) -> MCQuestion:
    """Question with the ideal answer first, then distractors, then the unsure option."""
    texts = ([ideal] if ideal is not None else []) + [d for d in distractors] + [UNSURE]
    options = tuple(zip(string.ascii_uppercase, texts))
    return MCQuestion(id, stem, options, "A" if ideal is not None else None, gold_doi)


def question_from_record(rec: dict[str, Any]) -> MCQuestion:
    """Accepts ``options`` as texts or ``[letter, text]`` pairs; the unsure option is appended if missing."""
    try:
        raw = rec["options"]
        if raw and isinstance(raw[0], str):
            texts = list(raw)
            options = list(zip(string.ascii_uppercase, texts))
        else:
            options = [(str(l), str(t)) for l, t in raw]
        if UNSURE not in [t for _, t in options]:
            used = {l for l, _ in options}
            options.append((next(c for c in string.ascii_uppercase if c not in used), UNSURE))
        return MCQuestion(str(rec["id"]), rec["stem"], tuple(options), rec.get("ideal"), rec.get("gold_doi"))
    except KeyError as exc:
        raise QuestionError(f"question record missing field {exc}") from None


def load_questions(path: str | Path) -> list[MCQuestion]:
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(question_from_record(json.loads(line)))
        except (json.JSONDecodeError, QuestionError) as exc:
            raise QuestionError(f"{path}:{lineno}: {exc}") from None
    return out


def format_question(q: MCQuestion) -> str:
    lines = [q.stem, "", "Options:"] + [f"{letter}) {text}" for letter, text in q.options]
    return "\n".join(lines)


# -- shuffling -----------------------------------------------------------------------


def _stable_hash(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")


def permutation_from_index(n: int, index: int) -> list[int]:
    """Decode ``index`` (taken mod n!) into a permutation of ``range(n)`` via the factorial number system."""
    index %= math.factorial(n)
    pool = list(range(n))
    out = []
    for i in range(n, 0, -1):
        f = math.factorial(i - 1)
        j, index = divmod(index, f)
        out.append(pool.pop(j))
    return out


def shuffle_options(q: MCQuestion, seed: int) -> MCQuestion:
    """Deterministically permute option texts, keeping letters in place and remapping the ideal.

    Consecutive seeds visit every ordering of the options once per n! seeds.
    """
    n = len(q.options)
    perm = permutation_from_index(n, seed * _SEED_STRIDE + _stable_hash(q.id))
    texts = [q.options[i][1] for i in perm]
    options = tuple((letter, text) for (letter, _), text in zip(q.options, texts))
    ideal = None
    if q.ideal is not None:
        target = q.text_of(q.ideal)
        ideal = next(letter for letter, text in options if text == target)
    return replace(q, options=options, ideal=ideal)


# -- grading -------------------------------------------------------------------------

_LETTER = re.compile(r"(?<![A-Za-z0-9])([A-Z])(?:\)|\s*$)")


def regex_letter(text: str, letters: Iterable[str]) -> str | None:
    """First standalone capital letter followed by ``)`` or the end of the text."""
    allowed = set(letters)
    for m in _LETTER.finditer(text.strip()):
        if m.group(1) in allowed:
            return m.group(1)
    return None


def extraction_prompt(q: MCQuestion, answer_text: str, config: EngineConfig | None = None) -> str:
    from .prompts import PromptSet

    prompts = config.prompts if config is not None else PromptSet()
    qa = f"{format_question(q)}\n\n{answer_text}"
    return prompts.render("letter_extraction", qa=qa)


@dataclass(frozen=True)
class GradedAnswer:
    question_id: str
    outcome: str
    letter: str | None
    attributed_dois: frozenset[str] = frozenset()
    parse_failure: bool = False

    def __post_init__(self) -> None:
        if self.outcome not in OUTCOMES:
            raise ValueError(f"outcome must be one of {OUTCOMES}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "question_id": self.question_id,
            "outcome": self.outcome,
            "letter": self.letter,
            "attributed_dois": sorted(self.attributed_dois),
            "parse_failure": self.parse_failure,
        }


def grade_letter(letter: str | None, q: MCQuestion, attributed: Iterable[str] = ()) -> GradedAnswer:
    dois = frozenset(d.lower() for d in attributed)
    if letter is None or letter not in q.letters:
        return GradedAnswer(q.id, "incorrect", None, dois, parse_failure=True)
    if letter == q.unsure_letter:
        outcome = "correct" if q.ideal is None else "unsure"
    else:
        outcome = "correct" if letter == q.ideal else "incorrect"
    return GradedAnswer(q.id, outcome, letter, dois)


def grade_answer(
    answer_text: str,
    q: MCQuestion,
    gateway: Gateway | None = None,
    *,
    model: str = GRADER_MODEL,
    attributed: Iterable[str] = (),
    config: EngineConfig | None = None,
) -> GradedAnswer:
    """Extract the chosen letter (grader model, or regex when ``gateway`` is None) and grade it."""
    if gateway is None:
        letter = regex_letter(answer_text, q.letters)
        if letter is None and "cannot answer" in answer_text.lower():
            # a refusal without a letter picks the unsure option
            letter = q.unsure_letter
    else:
        reply = gateway.complete(CompletionRequest(model, "", extraction_prompt(q, answer_text, config), 0.0))
        letter = regex_letter(reply, q.letters)
    return grade_letter(letter, q, attributed)


# -- metrics -------------------------------------------------------------------------


@dataclass(frozen=True)
class Metrics:
    correct: int
    incorrect: int
    unsure: int
    total: int
    recall_hits: int = 0

    @property
    def precision(self) -> Fraction | None:
        answered = self.correct + self.incorrect
        return Fraction(self.correct, answered) if answered else None

    @property
    def accuracy(self) -> Fraction:
        return Fraction(self.correct, self.total)

    @property
    def recall(self) -> Fraction:
        return Fraction(self.recall_hits, self.total)

    def to_dict(self) -> dict[str, Any]:
        p = self.precision
        return {
            "correct": self.correct,
            "incorrect": self.incorrect,
            "unsure": self.unsure,
            "total": self.total,
            "precision": None if p is None else float(p),
            "accuracy": float(self.accuracy),
            "recall": float(self.recall),
        }


def compute_metrics(graded: Sequence[GradedAnswer], gold_dois: dict[str, str | None] | None = None) -> Metrics:
    if not graded:
        raise ValueError("cannot compute metrics over zero answers")
    counts = {o: sum(1 for g in graded if g.outcome == o) for o in OUTCOMES}
    gold_dois = gold_dois or {}
    hits = sum(1 for g in graded if gold_dois.get(g.question_id) and gold_dois[g.question_id] in g.attributed_dois)
    return Metrics(counts["correct"], counts["incorrect"], counts["unsure"], len(graded), hits)


def stage_recall(records: Sequence[dict[str, Any]], gold_dois: dict[str, str | None]) -> dict[str, float]:
    """Fraction of runs whose gold DOI survives each stage, search through attribution.

    Each stage filters the previous one, so a DOI counts at a stage only if it
    was present at every earlier stage too.
    """
    if not records:
        raise ValueError("no run records")
    hits = dict.fromkeys(STAGES, 0)
    for rec in records:
        stages = rec.get("stages")
        if not isinstance(stages, dict) or any(s not in stages for s in STAGES):
            raise ValueError(f"run record for {rec.get('question_id')!r} lacks stage logs")
        gold = gold_dois.get(rec["question_id"])
        alive = gold is not None
        for s in STAGES:
            alive = alive and gold in set(stages[s])
            hits[s] += alive
    return {s: hits[s] / len(records) for s in STAGES}


# -- benchmark runs ------------------------------------------------------------------


@dataclass
class QuestionRun:
    question: MCQuestion
    answer: Answer
    graded: GradedAnswer
    stages: dict[str, list[str]]
    action_log: list[dict[str, Any]]
    cost: dict[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return {
            "question_id": self.question.id,
            "options": [list(o) for o in self.question.options],
            "ideal": self.question.ideal,
            "gold_doi": self.question.gold_doi,
            "answer": self.answer.to_dict(),
            "graded": self.graded.to_dict(),
            "stages": self.stages,
            "action_log": self.action_log,
            "cost": self.cost,
        }


@dataclass
class BenchmarkRun:
    seed: int
    questions: list[QuestionRun]
    metrics: Metrics
    stage_recall: dict[str, float]

    def to_dict(self) -> dict[str, Any]:
        return {"seed": self.seed, "metrics": self.metrics.to_dict(), "stage_recall": self.stage_recall}


@dataclass
class BenchmarkResult:
    runs: list[BenchmarkRun] = field(default_factory=list)

    def summary(self) -> dict[str, dict[str, float | None]]:
        """Mean and sample SD per metric across repeat runs (SD is 0 for a single run)."""
        out: dict[str, dict[str, float | None]] = {}
        for name in ("precision", "accuracy", "recall"):
            values = [getattr(r.metrics, name) for r in self.runs]
            values = [float(v) for v in values if v is not None]
            if not values:
                out[name] = {"mean": None, "sd": None}
                continue
            out[name] = {"mean": statistics.fmean(values), "sd": statistics.stdev(values) if len(values) > 1 else 0.0}
        return out

    def table(self) -> str:
        lines = [f"{'metric':<10} {'mean':>8} {'sd':>8}"]
        for name, v in self.summary().items():
            mean = "n/a" if v["mean"] is None else f"{v['mean']:.4f}"
            sd = "n/a" if v["sd"] is None else f"{v['sd']:.4f}"
            lines.append(f"{name:<10} {mean:>8} {sd:>8}")
        return "\n".join(lines)


AskFn = Callable[[str], tuple[Answer, Any]]


def run_benchmark(
    questions: Sequence[MCQuestion],
    ask: AskFn,
    *,
    seed: int = 0,
    repeats: int = 3,
    grader: Gateway | None = None,
    jobs: int = 1,
    config: EngineConfig | None = None,
) -> BenchmarkResult:
    """Run every question ``repeats`` times with seeds ``seed, seed+1, ...``.

    ``ask`` takes the formatted question and returns ``(Answer, AgentState)``.
    """
    result = BenchmarkResult()
    gold = {q.id: q.gold_doi for q in questions}
    for r in range(repeats):
        run_seed = seed + r

        def one(q: MCQuestion) -> QuestionRun:
            shuffled = shuffle_options(q, run_seed)
            answer, state = ask(format_question(shuffled))
            graded = grade_answer(answer.text, shuffled, grader, attributed=answer.attributed_dois, config=config)
            return QuestionRun(
                shuffled,
                answer,
                graded,
                state.stage_sets(),
                [c.to_dict() for c in state.action_log],
                state.cost.to_dict(),
            )

        with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
            runs = list(pool.map(one, questions))
        metrics = compute_metrics([qr.graded for qr in runs], gold)
        recall = stage_recall([{"question_id": qr.question.id, "stages": qr.stages} for qr in runs], gold)
        result.runs.append(BenchmarkRun(run_seed, runs, metrics, recall))
    return result
