"""Tool-calling agent loop and the fixed search/gather/answer pipeline."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .config import EngineConfig
from .llm import CompletionRequest, GatewayError, iter_json_objects
from .providers import ProviderError
from .state import INSUFFICIENT_TEXT, AgentState, Answer, Services, ToolCall
from .tools import (
    ToolFailure,
    tool_gather_evidence,
    tool_generate_answer,
    tool_paper_search,
    traverse_citations,
)

log = logging.getLogger(__name__)

GEN_ANSWER_TOOL = "generate_answer"

REPAIR_MESSAGE = (
    'Your previous reply could not be read as a tool call. Reply with only a JSON object of the form '
    '{"tool": "<tool name>", "arguments": "<argument text>"}.'
)


class AgentRunError(RuntimeError):
    """A run stopped on an unrecoverable error; ``state`` holds what was done so far."""

    def __init__(self, message: str, state: AgentState):
        super().__init__(message)
        self.state = state


def tool_descriptions(config: EngineConfig, current_year: int) -> dict[str, str]:
    return {
        "paper_search": "Search for papers to increase the paper count. Argument: "
        + config.prompts.render("paper_search_schema", current_year=current_year),
        "gather_evidence": "Find and summarize the passages of the collected papers relevant to a question. "
        "Argument: the question or a rephrasing of it.",
        "generate_answer": "Write the final answer from the gathered evidence. Argument: the question.",
        "citation_traversal": "Collect papers that cite, or are cited by, the papers behind the best evidence. "
        "Argument: ignored (may be empty).",
    }


def agent_system_prompt(config: EngineConfig, current_year: int) -> str:
    descriptions = tool_descriptions(config, current_year)
    lines = ["You can call these tools:"]
    lines += [f"- {name}: {descriptions[name]}" for name in config.agent_tools]
    lines.append(
        'Reply with exactly one tool call as a JSON object: {"tool": "<tool name>", "arguments": "<argument text>"}.'
    )
    return "\n".join(lines)


def render_status(state: AgentState) -> str:
    return f"Papers: {len(state.docs)} | Evidence: {state.evidence_count()} | Cost: ${state.cost.cost:.2f}"


def _history(state: AgentState) -> str:
    if not state.action_log:
        return ""
    lines = ["", "", "Previous actions:"]
    lines += [f"{i}. {c.tool}({c.arguments!r}) -> {c.outcome}" for i, c in enumerate(state.action_log, 1)]
    return "\n".join(lines)


def agent_user_prompt(state: AgentState, config: EngineConfig) -> str:
    directive = config.prompts.render(
        "agent_directive", question=state.question, gen_answer_tool_name=GEN_ANSWER_TOOL, status=render_status(state)
    )
    return directive + _history(state)


_FUNC_STYLE = re.compile(r"^\s*([a-z_]+)\s*\((.*)\)\s*$", re.S)


def parse_tool_call(text: str, allowed: tuple[str, ...]) -> tuple[str, str] | None:
    """Read ``{"tool": ..., "arguments": ...}`` (or ``name("args")``) from a reply."""
    for obj in iter_json_objects(text):
        if isinstance(obj, dict) and obj.get("tool") in allowed:
            args = obj.get("arguments", "")
            if isinstance(args, dict):
                args = next(iter(args.values()), "") if len(args) == 1 else json.dumps(args, sort_keys=True)
            return obj["tool"], "" if args is None else str(args)
    m = _FUNC_STYLE.match(text.strip())
    if m and m.group(1) in allowed:
        args = m.group(2).strip()
        if len(args) >= 2 and args[0] == args[-1] and args[0] in "\"'":
            args = args[1:-1]
        return m.group(1), args
    return None


ToolFn = Callable[[str, AgentState, EngineConfig, Services], str]


def _run_search(arg: str, state: AgentState, config: EngineConfig, services: Services) -> str:
    n = tool_paper_search(arg, state, config, services)
    return f"Found {n} new papers. {render_status(state)}"


def _run_gather(arg: str, state: AgentState, config: EngineConfig, services: Services) -> str:
    phrase = arg.strip() or state.question
    if state.docs and not state.new_docs_since_gather and phrase in state.gathered_phrases:
        return f"Nothing new: no new papers since the last gather. {render_status(state)}"
    n = tool_gather_evidence(phrase, state, config, services)
    return f"Added {n} pieces of evidence. {render_status(state)}"


def _run_traversal(arg: str, state: AgentState, config: EngineConfig, services: Services) -> str:
    n = traverse_citations(state, config, services)
    return f"Collected {n} new papers from citations. {render_status(state)}"


def _run_answer(arg: str, state: AgentState, config: EngineConfig, services: Services) -> str:
    answer = tool_generate_answer(state.question, state, config, services)
    return "Answer: " + answer.text


TOOLS: dict[str, ToolFn] = {
    "paper_search": _run_search,
    "gather_evidence": _run_gather,
    "citation_traversal": _run_traversal,
    "generate_answer": _run_answer,
}


def execute_tool(name: str, arguments: str, state: AgentState, config: EngineConfig, services: Services) -> str:
    """Run one tool and append it to the action log; tool and provider failures become outcomes."""
    if name not in config.agent_tools:
        raise ValueError(f"tool {name!r} is not enabled")
    try:
        outcome = TOOLS[name](arguments, state, config, services)
    except (ToolFailure, ProviderError) as exc:
        outcome = f"Tool failed: {exc}"
    state.action_log.append(ToolCall(name, arguments, outcome))
    state.step_count += 1
    return outcome


def _insufficient(state: AgentState) -> Answer:
    answer = Answer(state.question, INSUFFICIENT_TEXT, insufficient=True)
    state.answer = answer
    return answer


def run_agent(question: str, config: EngineConfig, services: Services, state: AgentState | None = None) -> tuple[Answer, AgentState]:
    """Let the agent model pick tools until it answers or the step limit is hit."""
    state = state or AgentState(question)
    system = agent_system_prompt(config, services.current_year)
    try:
        while state.step_count < config.max_agent_steps:
            user = agent_user_prompt(state, config)
            request = CompletionRequest(config.agent_llm, system, user, config.temperature)
            call = parse_tool_call(services.gateway.complete(request, state.cost), config.agent_tools)
            if call is None:
                repair = CompletionRequest(config.agent_llm, system, user + "\n\n" + REPAIR_MESSAGE, config.temperature)
                call = parse_tool_call(services.gateway.complete(repair, state.cost), config.agent_tools)
                if call is None:
                    log.warning("agent reply unreadable twice; forcing %s", GEN_ANSWER_TOOL)
                    call = (GEN_ANSWER_TOOL, question)
            name, arguments = call
            if name == GEN_ANSWER_TOOL and GEN_ANSWER_TOOL not in config.agent_tools:
                break
            execute_tool(name, arguments, state, config, services)
            if name == GEN_ANSWER_TOOL:
                return state.answer, state
    except GatewayError as exc:
        raise AgentRunError(f"run aborted after {len(state.action_log)} tool calls: {exc}", state) from exc
    if state.answer is not None:
        return state.answer, state
    return _insufficient(state), state


def run_fixed_pipeline(question: str, config: EngineConfig, services: Services, state: AgentState | None = None) -> tuple[Answer, AgentState]:
    """Search with the question, gather, answer; the agent model is never called."""
    state = state or AgentState(question)
    pipeline = [("paper_search", question), ("gather_evidence", question), ("generate_answer", question)]
    try:
        for name, arguments in pipeline:
            fn = TOOLS[name]
            try:
                outcome = fn(arguments, state, config, services)
            except (ToolFailure, ProviderError) as exc:
                outcome = f"Tool failed: {exc}"
            state.action_log.append(ToolCall(name, arguments, outcome))
            state.step_count += 1
    except GatewayError as exc:
        raise AgentRunError(f"run aborted after {len(state.action_log)} tool calls: {exc}", state) from exc
    return state.answer or _insufficient(state), state


def ask(question: str, config: EngineConfig, services: Services, state: AgentState | None = None) -> tuple[Answer, AgentState]:
    runner = run_agent if config.use_agent else run_fixed_pipeline
    return runner(question, config, services, state)


@dataclass
class RunRecord:
    """What a single question run leaves on disk."""

    question: str
    answer: Answer
    action_log: list[ToolCall]
    stages: dict[str, list[str]]
    cost: dict[str, Any]
    skip_log: list[str] = field(default_factory=list)
    extra: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_state(cls, state: AgentState, answer: Answer, **extra: Any) -> "RunRecord":
        return cls(state.question, answer, list(state.action_log), state.stage_sets(), state.cost.to_dict(), list(state.skip_log), extra)

    def to_dict(self) -> dict[str, Any]:
        return {
            "question": self.question,
            "answer": self.answer.to_dict(),
            "action_log": [c.to_dict() for c in self.action_log],
            "stages": self.stages,
            "cost": self.cost,
            "skip_log": self.skip_log,
            **self.extra,
        }

    def save(self, folder: str | Path) -> Path:
        folder = Path(folder)
        folder.mkdir(parents=True, exist_ok=True)
        with open(folder / "action_log.jsonl", "w") as fh:
            for c in self.action_log:
                fh.write(json.dumps(c.to_dict()) + "\n")
        (folder / "answer.json").write_text(json.dumps(self.answer.to_dict(), indent=2))
        (folder / "run.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        return folder
