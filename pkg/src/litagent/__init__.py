"""Agentic retrieval-augmented question answering over scientific literature."""

from .agent import AgentRunError, ask, render_status, run_agent, run_fixed_pipeline
from .config import EngineConfig, load_config, preset
from .state import AgentState, Answer, Services

__version__ = "0.1.0"

__all__ = [
    "AgentRunError",
    "AgentState",
    "Answer",
    "EngineConfig",
    "Services",
    "ask",
    "load_config",
    "preset",
    "render_status",
    "run_agent",
    "run_fixed_pipeline",
]
