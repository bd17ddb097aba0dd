"""Dual-path math reasoning: chain-of-thought and program answers with a
learned selector between them, plus the exact error analysis of that ensemble."""

__version__ = "0.1.0"

from .core import (
    AnswerKind,
    CanonicalAnswer,
    Choice,
    Method,
    OptionOrder,
    Question,
    ReasoningPath,
    RunRecord,
    SelectionRecord,
    TaskKind,
    answers_equal,
    normalize_number,
    parse_cot_answer,
)
from .llm import GenerationRequest, TokenUsage, estimate_cost
from .pipeline import (
    OneSidedPolicy,
    Pipeline,
    PipelineConfig,
    fallback_method,
    majority_vote,
    parse_choice,
)

__all__ = [
    "AnswerKind",
    "CanonicalAnswer",
    "Choice",
    "GenerationRequest",
    "Method",
    "OneSidedPolicy",
    "OptionOrder",
    "Pipeline",
    "PipelineConfig",
    "Question",
    "ReasoningPath",
    "RunRecord",
    "SelectionRecord",
    "TaskKind",
    "TokenUsage",
    "answers_equal",
    "estimate_cost",
    "fallback_method",
    "majority_vote",
    "normalize_number",
    "parse_choice",
]
