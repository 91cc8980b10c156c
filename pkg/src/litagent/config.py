"""Engine configuration, presets and YAML loading.

Configs are immutable pydantic models.  Unknown keys are hard errors so that a
typo in an ablation file cannot silently fall back to a default.
"""

from __future__ import annotations

import hashlib
import json
from fractions import Fraction
from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_serializer,
    field_validator,
    model_validator,
)

from .prompts import RCS_SYSTEM_GENE, PromptSet

TOOL_NAMES = ("paper_search", "gather_evidence", "generate_answer", "citation_traversal")
PARSERS = ("plain_text", "structured")

GPT4_TURBO = "openai/gpt-4-turbo-2024-04-09"
CLAUDE_SONNET = "anthropic/claude-3-5-sonnet-20240620"


class ConfigError(ValueError):
    """Raised for invalid configuration documents or constraint violations."""


class ParsingConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    parser_preference: tuple[str, ...] = ("plain_text",)
    chunksize: int = Field(9000, gt=0)
    overlap: int = Field(750, ge=0)
    chunking_algorithm: Literal["simple_overlap", "sections"] = "simple_overlap"

    @field_validator("parser_preference")
    @classmethod
    def _known_parsers(cls, value: tuple[str, ...]) -> tuple[str, ...]:
        if not value:
            raise ValueError("parser_preference must not be empty")
        for name in value:
            if name not in PARSERS:
                raise ValueError(f"unknown parser {name!r}; expected one of {PARSERS}")
        return value

    @model_validator(mode="after")
    def _check(self) -> "ParsingConfig":
        if self.overlap >= self.chunksize:
            raise ValueError("overlap must be smaller than chunksize")
        if self.chunking_algorithm == "sections" and self.parser_preference[0] != "structured":
            raise ValueError("sections chunking requires the structured parser first in parser_preference")
        return self


class TraversalConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    score_threshold: int = Field(8, ge=0, le=11)
    overlap_fraction: Fraction = Fraction(1, 3)
    limit: int = Field(12, ge=1)

    @field_validator("overlap_fraction", mode="before")
    @classmethod
    def _parse_fraction(cls, value: Any) -> Fraction:
        try:
            frac = Fraction(value) if not isinstance(value, float) else Fraction(value).limit_denominator(1000)
        except (TypeError, ValueError, ZeroDivisionError) as exc:
            raise ValueError(f"not a rational number: {value!r}") from exc
        if not 0 < frac <= 1:
            raise ValueError("overlap_fraction must be in (0, 1]")
        return frac

    @field_serializer("overlap_fraction")
    def _dump_fraction(self, value: Fraction) -> str:
        return str(value)


class EngineConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    query: str = Field(min_length=1)
    llm: str = GPT4_TURBO
    agent_llm: str = GPT4_TURBO
    summary_llm: str = GPT4_TURBO
    claim_llm: str = GPT4_TURBO
    max_sources: int = Field(15, gt=0)
    consider_sources: int = Field(30, gt=0)
    agent_tools: tuple[str, ...] = TOOL_NAMES
    use_agent: bool = True
    max_agent_steps: int = Field(10, ge=1)
    docs_index_mmr_lambda: float = Field(1.0, ge=0.0, le=1.0)
    temperature: float = Field(0.0, ge=0.0)
    summary_temperature: float = Field(0.0, ge=0.0)
    skip_rcs: bool = False
    search_limit: int = Field(12, gt=0)
    summary_length: str = "about 100"
    answer_length: str = "about 200 words, but can be longer"
    rcs_extra_keys: tuple[str, ...] = ()
    parsing: ParsingConfig = ParsingConfig()
    traversal: TraversalConfig = TraversalConfig()
    prompts: PromptSet = PromptSet()

    @field_validator("agent_tools")
    @classmethod
    def _known_tools(cls, value: tuple[str, ...]) -> tuple[str, ...]:
        if not value:
            raise ValueError("agent_tools must not be empty")
        for name in value:
            if name not in TOOL_NAMES:
                raise ValueError(f"unknown tool {name!r}; expected one of {TOOL_NAMES}")
        if len(set(value)) != len(value):
            raise ValueError("agent_tools contains duplicates")
        return value

    @model_validator(mode="after")
    def _sources(self) -> "EngineConfig":
        # An explicit cutoff deeper than the ranking is a mistake; the default
        # cutoff simply clamps to a shallower ranking depth.
        if "max_sources" in self.model_fields_set and self.max_sources > self.consider_sources:
            raise ValueError(
                f"max_sources ({self.max_sources}) must not exceed consider_sources ({self.consider_sources})"
            )
        return self

    @property
    def answer_cutoff(self) -> int:
        return min(self.max_sources, self.consider_sources)

    def to_dict(self) -> dict[str, Any]:
        return self.model_dump(mode="json")

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# Presets are partial documents layered over the defaults.  Values follow the
# reported experiment settings.
_LITQA: dict[str, Any] = {}
_NO_TRAVERSAL = [t for t in TOOL_NAMES if t != "citation_traversal"]

PRESETS: dict[str, dict[str, Any]] = {
    "litqa_default": _LITQA,
    "no_agent": {"use_agent": False},
    "no_cit_trav": {"agent_tools": _NO_TRAVERSAL},
    "no_rcs": {"skip_rcs": True},
    "answer_cutoff_5": {"max_sources": 5},
    "llm_claude_3_opus": {"llm": "anthropic/claude-3-opus-20240229", "summary_llm": "anthropic/claude-3-opus-20240229"},
    "llm_gemini_1_5_pro": {"llm": "gemini/gemini-1.5-pro", "summary_llm": "gemini/gemini-1.5-pro"},
    "rcs_gpt_3_5_turbo": {"summary_llm": "openai/gpt-3.5-turbo-0125"},
    "rcs_llama3_70b": {"summary_llm": "together/meta-llama/Llama-3-70b-chat-hf"},
    "parsing_structured_sections": {
        "parsing": {"parser_preference": ["structured"], "chunking_algorithm": "sections"},
    },
    "wikicrow": {
        "consider_sources": 25,
        "docs_index_mmr_lambda": 0.9,
        "rcs_extra_keys": ["gene_name"],
        "parsing": {"parser_preference": ["structured"], "chunking_algorithm": "sections"},
        "prompts": {"rcs_system": RCS_SYSTEM_GENE},
    },
    "contracrow": {
        "llm": CLAUDE_SONNET,
        "agent_llm": CLAUDE_SONNET,
        "summary_llm": CLAUDE_SONNET,
        "parsing": {"chunksize": 7000, "overlap": 250, "chunking_algorithm": "simple_overlap"},
    },
}

TOPK_DEPTHS = (1, 5, 10, 15, 20, 25)
for _depth in TOPK_DEPTHS:
    PRESETS[f"topk_{_depth}"] = {"consider_sources": _depth}


def _deep_merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def _format_errors(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def build_config(document: dict[str, Any]) -> EngineConfig:
    """Validate a parsed document, expanding an optional ``preset`` key first."""
    if not isinstance(document, dict):
        raise ConfigError("configuration document must be a mapping")
    document = dict(document)
    preset = document.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"preset: unknown preset {preset!r}; known: {sorted(PRESETS)}")
        document = _deep_merge(PRESETS[preset], document)
    try:
        return EngineConfig.model_validate(document)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def load_config(source: str | Path | dict[str, Any]) -> EngineConfig:
    """Load a config from YAML text, a YAML file path or an already-parsed mapping."""
    if isinstance(source, dict):
        return build_config(source)
    if isinstance(source, Path):
        source = source.read_text()
    try:
        document = yaml.safe_load(source)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed configuration document: {exc}") from None
    return build_config(document or {})


def preset(name: str, query: str, **overrides: Any) -> EngineConfig:
    return build_config({"preset": name, "query": query, **overrides})


def dump_config(config: EngineConfig) -> str:
    document = config.to_dict()
    if "max_sources" not in config.model_fields_set:
        del document["max_sources"]
    return yaml.safe_dump(document, sort_keys=False, allow_unicode=True)


def config_diff(a: EngineConfig, b: EngineConfig) -> dict[str, tuple[Any, Any]]:
    """Flattened dotted-path differences between two configs."""

    def flatten(d: dict[str, Any], prefix: str = "") -> dict[str, Any]:
        flat: dict[str, Any] = {}
        for key, value in d.items():
            path = f"{prefix}{key}"
            if isinstance(value, dict):
                flat.update(flatten(value, path + "."))
            else:
                flat[path] = value
        return flat

    fa, fb = flatten(a.to_dict()), flatten(b.to_dict())
    return {k: (fa.get(k), fb.get(k)) for k in sorted(fa.keys() | fb.keys()) if fa.get(k) != fb.get(k)}
