"""Command-line entry point: ``litagent <command> ...``.

Exit status is 0 on success, 1 on user error (bad flags, config, inputs) and
2 on provider or system failure.  Every failing run prints one line starting
with ``error: user:`` or ``error: system:`` to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import yaml

from .agent import AgentRunError, RunRecord, ask
from .config import PRESETS, ConfigError, EngineConfig, build_config, dump_config
from .contracrow import (
    Claim,
    LikertError,
    Verdict,
    build_contradetect,
    detect_many,
    extract_claims,
    group_by_paper,
    per_paper_stats,
    read_records,
    roc_auc,
    write_records,
)
from .corpus import CorpusError, Document, parse_tei, read_plain_text
from .embedding import HashingEmbedder, VectorCache, WordHashTokenizer, default_tokenizer
from .litqa import QuestionError, load_questions, run_benchmark
from .llm import CostTracker, Gateway, GatewayError, MockGateway, OpenAIEmbedder, RecordingGateway, gateway_from_env, load_transcript
from .providers import CrossrefClient, LocalRepository, ProviderError, ProviderSet, SemanticScholarClient, fixture_providers
from .state import AgentState, Services
from .wikicrow import format_statements, generate_article, load_genes, save_article

log = logging.getLogger("litagent")

PLACEHOLDER_QUERY = "(set per item)"


class UserError(Exception):
    """Bad input from the command line; exit status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        print(f"error: user: {message}", file=sys.stderr)
        raise SystemExit(1)


def data_path(name: str) -> Path:
    """Path of a file shipped in the package data directory."""
    return Path(str(resources.files("litagent") / "data" / name))


# -- run context ---------------------------------------------------------------------


@dataclass
class Context:
    args: argparse.Namespace
    config: EngineConfig
    services: Services
    out_dir: Path
    outputs: list[str] = field(default_factory=list)
    cost: CostTracker = field(default_factory=CostTracker)

    def ask(self, question: str, state: AgentState | None = None):
        cfg = self.config.model_copy(update={"query": question})
        answer, state = ask(question, cfg, self.services, state)
        self.cost.merge(state.cost)
        return answer, state

    def output(self, name: str) -> Path:
        path = self.out_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        self.outputs.append(str(path))
        return path


def _config_from_args(args: argparse.Namespace, query: str) -> EngineConfig:
    if not args.config and not args.preset:
        raise UserError("one of --config or --preset is required")
    document: dict[str, Any] = {}
    if args.config:
        try:
            loaded = yaml.safe_load(Path(args.config).read_text())
        except OSError as exc:
            raise UserError(f"cannot read config: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed configuration document: {exc}") from None
        document = dict(loaded or {})
    if args.preset:
        document["preset"] = args.preset
    document.setdefault("query", query)
    return build_config(document)


def _services(args: argparse.Namespace, config: EngineConfig, out_dir: Path) -> Services:
    if args.mock_transcript:
        gateway: Gateway = MockGateway(load_transcript(args.mock_transcript))
        embedder: Any = HashingEmbedder()
        tokenizer: Any = WordHashTokenizer()
    else:
        gateway = gateway_from_env(rpm=args.rpm)
        if args.record:
            gateway = RecordingGateway(gateway, out_dir / "transcript.jsonl")
        key = os.environ.get("OPENAI_API_KEY")
        embedder = OpenAIEmbedder(key) if key else HashingEmbedder()
        tokenizer = default_tokenizer()
    if args.fixtures:
        providers = fixture_providers(args.fixtures)
    else:
        fulltext = args.fulltext_dir or os.environ.get("LITAGENT_FULLTEXT_DIR")
        if not fulltext:
            raise UserError("live runs need --fulltext-dir (or LITAGENT_FULLTEXT_DIR); offline runs need --fixtures")
        s2 = SemanticScholarClient(os.environ.get("SEMANTIC_SCHOLAR_API_KEY"))
        providers = ProviderSet(
            search=s2,
            citation={"semantic_scholar": s2, "crossref": CrossrefClient(os.environ.get("CROSSREF_MAILTO"))},
            resolver=LocalRepository(fulltext),
        )
    cache = VectorCache(out_dir / "vectors.jsonl") if args.vector_cache else None
    return Services(gateway, providers, embedder, tokenizer, jobs=args.jobs, vector_cache=cache)


def _write_jsonl(path: Path, records: Sequence[Any]) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict() if hasattr(r, "to_dict") else r, sort_keys=True) + "\n")


# -- commands ------------------------------------------------------------------------


def cmd_ask(ctx: Context) -> None:
    question = ctx.args.question
    try:
        answer, state = ctx.ask(question)
    except AgentRunError as exc:
        RunRecord.from_state(exc.state, exc.state.answer or _empty_answer(question)).save(ctx.out_dir / "run")
        ctx.outputs.append(str(ctx.out_dir / "run"))
        raise
    RunRecord.from_state(state, answer).save(ctx.out_dir / "run")
    ctx.outputs.append(str(ctx.out_dir / "run"))
    print(answer.text)
    if answer.cited:
        print("\nReferences: " + ", ".join(answer.cited))


def _empty_answer(question: str):
    from .state import Answer

    return Answer(question, "", insufficient=True)


def cmd_eval_litqa(ctx: Context) -> None:
    questions = load_questions(ctx.args.questions)
    if not questions:
        raise UserError("question file is empty")
    result = run_benchmark(
        questions,
        ctx.ask,
        seed=ctx.args.seed,
        repeats=ctx.args.repeats,
        grader=None if ctx.args.mock_transcript or ctx.args.regex_grader else ctx.services.gateway,
        jobs=ctx.args.jobs,
        config=ctx.config,
    )
    _write_jsonl(ctx.output("runs.jsonl"), [{"seed": r.seed, **qr.to_dict()} for r in result.runs for qr in r.questions])
    _write_jsonl(ctx.output("stage_recall.jsonl"), [{"seed": r.seed, **r.stage_recall} for r in result.runs])
    ctx.output("metrics.json").write_text(
        json.dumps({"runs": [r.to_dict() for r in result.runs], "summary": result.summary()}, indent=2)
    )
    print(result.table())


def _load_paper(path: str) -> Document:
    p = Path(path)
    if not p.exists():
        raise UserError(f"no such paper file: {path}")
    if p.name.endswith(".json"):
        return Document.from_record(json.loads(p.read_text()))
    if p.name.endswith(".xml"):
        return parse_tei(p.read_bytes(), doc_key=p.name.split(".")[0])
    return read_plain_text(p, p.stem)


def cmd_contracrow(ctx: Context) -> None:
    a = ctx.args
    if a.action == "extract-claims":
        claims = []
        for path in a.papers:
            claims.extend(extract_claims(_load_paper(path), ctx.services.gateway, ctx.config, jobs=a.jobs, tracker=ctx.cost))
        write_records(ctx.output("claims.jsonl"), claims)
        print(f"{len(claims)} claims retained")
    elif a.action == "detect":
        claims = [Claim.from_dict(r) for r in read_records(a.claims)]
        verdicts = detect_many(claims, ctx.config, ctx.ask, jobs=a.jobs)
        write_records(ctx.output("verdicts.jsonl"), verdicts)
        report = per_paper_stats(group_by_paper(verdicts), a.threshold)
        ctx.output("per_paper.json").write_text(json.dumps(report, indent=2))
        print(f"{sum(v.is_contradiction(a.threshold) for v in verdicts)} of {len(verdicts)} claims contradicted")
    elif a.action == "roc":
        verdicts = [Verdict.from_dict(r) for r in read_records(a.verdicts)]
        if any(v.label is None for v in verdicts):
            raise UserError("every verdict record needs a boolean 'label' for ROC evaluation")
        report = roc_auc([v.position for v in verdicts], [bool(v.label) for v in verdicts], a.threshold)
        ctx.output("roc.json").write_text(json.dumps(report.to_dict(), indent=2))
        print(report.table())
    elif a.action == "contradetect-build":
        statements = build_contradetect(load_questions(a.questions), None if a.template_rephrase else ctx.services.gateway, a.seed)
        write_records(ctx.output("contradetect.jsonl"), statements)
        print(f"{len(statements)} statements ({sum(s.contradiction for s in statements)} contradicted)")


def cmd_contradetect(ctx: Context) -> None:
    """Build the benchmark, run detection on every statement and report the ROC."""
    a = ctx.args
    statements = build_contradetect(load_questions(a.questions), None if a.template_rephrase else ctx.services.gateway, a.seed)
    verdicts = detect_many([s.statement for s in statements], ctx.config, ctx.ask, jobs=a.jobs)
    for v, s in zip(verdicts, statements):
        v.label = s.contradiction
        v.doc_key = s.question_id
    write_records(ctx.output("contradetect.jsonl"), statements)
    write_records(ctx.output("verdicts.jsonl"), verdicts)
    report = roc_auc([v.position for v in verdicts], [s.contradiction for s in statements], a.threshold)
    ctx.output("roc.json").write_text(json.dumps(report.to_dict(), indent=2))
    print(report.table())


def cmd_wikicrow(ctx: Context) -> None:
    genes = load_genes(ctx.args.genes)
    if not genes:
        raise UserError("gene list is empty")
    summary = []
    for gene in genes:
        start = time.time()
        article = generate_article(gene, ctx.config, ctx.services, ask=lambda q, c, s, st: ctx.ask(q, st))
        path = save_article(article, ctx.out_dir / "articles")
        ctx.outputs.append(str(path))
        statements = format_statements(article, ctx.args.seed)
        _write_jsonl(ctx.output(f"articles/{gene}.statements.jsonl"), [s.__dict__ for s in statements])
        summary.append({"gene": gene, "seconds": round(time.time() - start, 3), "cost": article.cost})
        print(f"{gene}: {path}")
    _write_jsonl(ctx.output("articles/summary.jsonl"), summary)


COMMANDS = {
    "ask": cmd_ask,
    "eval-litqa": cmd_eval_litqa,
    "contracrow": cmd_contracrow,
    "wikicrow": cmd_wikicrow,
    "contradetect": cmd_contradetect,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML configuration file")
    common.add_argument("--preset", choices=sorted(PRESETS), help="named preset")
    common.add_argument("--seed", type=int, default=0, help="seed for all randomness")
    common.add_argument("--mock-transcript", help="replay completions from a transcript file (offline)")
    common.add_argument("--fixtures", help="fixture directory used instead of live literature providers")
    common.add_argument("--fulltext-dir", help="directory of full texts for live runs")
    common.add_argument("--out-dir", default="runs", help="directory for run artifacts")
    common.add_argument("--jobs", type=int, default=4, help="maximum concurrent tasks")
    common.add_argument("--rpm", type=int, default=0, help="request-per-minute limit for live models")
    common.add_argument("--record", action="store_true", help="record live completions to a transcript")
    common.add_argument("--vector-cache", action="store_true", help="persist embeddings under the out dir")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="litagent", description="Agentic literature question answering and evaluation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ask", parents=[common], help="answer one question")
    p.add_argument("question")

    p = sub.add_parser("eval-litqa", parents=[common], help="multiple-choice benchmark")
    p.add_argument("--questions", default=None, help="question file (default: shipped demo set)")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--regex-grader", action="store_true", help="grade by regex instead of a grader model")

    # options live on the actions only: argparse lets sub-subparser defaults clobber parent values
    p = sub.add_parser("contracrow", help="contradiction detection pipeline")
    actions = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    q = actions.add_parser("extract-claims", parents=[common])
    q.add_argument("papers", nargs="+", help="paper files (.json record, .tei.xml or plain text)")
    q = actions.add_parser("detect", parents=[common])
    q.add_argument("--claims", required=True)
    q.add_argument("--threshold", type=int, default=8)
    q = actions.add_parser("roc", parents=[common])
    q.add_argument("--verdicts", required=True)
    q.add_argument("--threshold", type=int, default=8)
    q = actions.add_parser("contradetect-build", parents=[common])
    q.add_argument("--questions", required=True)
    q.add_argument("--template-rephrase", action="store_true", help="rephrase without a model")

    p = sub.add_parser("wikicrow", parents=[common], help="write gene articles")
    p.add_argument("--genes", required=True, help="file with one gene symbol per line")

    p = sub.add_parser("contradetect", parents=[common], help="build the contradiction benchmark and evaluate it")
    p.add_argument("--questions", required=True)
    p.add_argument("--threshold", type=int, default=8)
    p.add_argument("--template-rephrase", action="store_true")
    return parser


USER_ERRORS = (UserError, ConfigError, QuestionError, CorpusError, LikertError, FileNotFoundError, json.JSONDecodeError)
SYSTEM_ERRORS = (GatewayError, ProviderError, AgentRunError, OSError)


def _needs_engine(args: argparse.Namespace) -> bool:
    return not (args.command == "contracrow" and args.action == "roc")


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "eval-litqa" and args.questions is None:
        args.questions = str(data_path("demo_questions.jsonl"))
    out_dir = Path(args.out_dir)
    started = time.time()
    manifest: dict[str, Any] = {
        "command": " ".join([args.command] + ([args.action] if getattr(args, "action", None) else [])),
        "argv": list(sys.argv[1:] if argv is None else argv),
        "seed": args.seed,
        "start": started,
    }
    ctx: Context | None = None
    status, error = 0, None
    try:
        if _needs_engine(args):
            query = args.question if args.command == "ask" else PLACEHOLDER_QUERY
            config = _config_from_args(args, query)
            out_dir.mkdir(parents=True, exist_ok=True)
            ctx = Context(args, config, _services(args, config, out_dir), out_dir)
            manifest["config_hash"] = config.digest()
            (out_dir / "config.yaml").write_text(dump_config(config))
        else:
            out_dir.mkdir(parents=True, exist_ok=True)
            ctx = Context(args, build_config({"query": PLACEHOLDER_QUERY}), None, out_dir)  # type: ignore[arg-type]
        COMMANDS[args.command](ctx)
    except USER_ERRORS as exc:
        status, error = 1, f"user: {exc}"
        if isinstance(exc, UserError):
            parser.print_usage(sys.stderr)
        log.debug("user error", exc_info=True)
    except SYSTEM_ERRORS as exc:
        status, error = 2, f"system: {exc}"
        log.debug("system error", exc_info=True)
    if error is not None:
        print("error: " + " ".join(error.split()), file=sys.stderr)
    manifest.update(
        {
            "end": time.time(),
            "status": status,
            "error": error,
            "cost": ctx.cost.to_dict() if ctx else CostTracker().to_dict(),
            "outputs": ctx.outputs if ctx else [],
        }
    )
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "manifest.jsonl", "a") as fh:
            fh.write(json.dumps(manifest, sort_keys=True) + "\n")
    except OSError as exc:
        print(f"error: system: cannot write manifest: {exc}", file=sys.stderr)
        return 2
    return status


if __name__ == "__main__":
    raise SystemExit(main())
