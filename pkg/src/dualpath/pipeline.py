"""The solve loop: dual-path generation, judged disagreements, majority voting.

Each sample generates one chain answer and one program answer.  Equal answers
short-circuit; different answers go to the selector model, whose verdict letter
maps back through the configured option order.  An unparseable verdict falls
back to a seeded coin flip so reruns stay reproducible.  Self-consistency runs
k independent samples and majority-votes their finals.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum

from .core import (
    CanonicalAnswer,
    Choice,
    Method,
    OptionOrder,
    Question,
    ReasoningPath,
    RunRecord,
    SelectionRecord,
    answers_equal,
    parse_cot_answer,
)
from .llm import Backend, GenerationRequest
from .pal_exec import extract_program, outcome_to_answer
from .prompts import SelectionPromptConfig, TemplateStore

SC_TEMPERATURE_COT = Decimal("0.5")
SC_TEMPERATURE_PAL = Decimal("0.8")


class OneSidedPolicy(str, Enum):
    """What to do when exactly one method produced an answer."""

    USE_AVAILABLE = "use-available"
    ABSTAIN = "abstain"


@dataclass(frozen=True)
class PipelineConfig:
    """Run-scoped knobs.  Model identity and token budget ride along because
    every backend call needs them; they are not part of the published method.
    """

    model_id: str
    selection_prompt: SelectionPromptConfig = field(default_factory=SelectionPromptConfig)
    gen_temperature_cot: Decimal = Decimal(0)
    gen_temperature_pal: Decimal = Decimal(0)
    select_temperature: Decimal = Decimal(0)
    rng_seed: int = 0
    k_samples: int = 1
    one_sided_policy: OneSidedPolicy = OneSidedPolicy.USE_AVAILABLE
    max_tokens: int = 1024

    def __post_init__(self) -> None:
        if self.k_samples < 1:
            raise ValueError("k_samples must be at least 1")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")
        for name in ("gen_temperature_cot", "gen_temperature_pal", "select_temperature"):
            value = getattr(self, name)
            if not (Decimal(0) <= value <= Decimal(2)):
                raise ValueError(f"{name} must be within [0, 2]")

    @classmethod
    def greedy(cls, model_id: str, **overrides) -> "PipelineConfig":
        """Deterministic single-sample mode: every temperature 0, k=1."""
        overrides.pop("k_samples", None)
        return cls(model_id=model_id, k_samples=1, **overrides)

    @classmethod
    def self_consistency(cls, model_id: str, k_samples: int, **overrides) -> "PipelineConfig":
        """Sampled mode: chain 0.5, program 0.8, selector pinned at 0."""
        return cls(
            model_id=model_id,
            k_samples=k_samples,
            gen_temperature_cot=SC_TEMPERATURE_COT,
            gen_temperature_pal=SC_TEMPERATURE_PAL,
            select_temperature=Decimal(0),
            **overrides,
        )


def parse_choice(selector_raw: str) -> Choice:
    """First verdict token wins; explanations mention the loser later."""
    a = selector_raw.find("(A)")
    b = selector_raw.find("(B)")
    if a < 0 and b < 0:
        return Choice.NONE
    if b < 0 or (0 <= a < b):
        return Choice.A
    return Choice.B


def majority_vote(finals: list[CanonicalAnswer | None]) -> CanonicalAnswer | None:
    """Largest answers_equal-group wins; ties go to the smallest sort key."""
    groups: list[tuple[CanonicalAnswer, int]] = []
    for answer in finals:
        if answer is None:
            continue
        for i, (representative, count) in enumerate(groups):
            if answers_equal(answer, representative):
                groups[i] = (representative, count + 1)
                break
        else:
            groups.append((answer, 1))
    if not groups:
        return None
    return min(groups, key=lambda g: (-g[1], g[0].sort_key()))[0]


def fallback_method(rng_seed: int, question_id: str, sample_index: int) -> Method:
    """Seeded uniform draw, keyed so it survives reordering and resume."""
    token = f"{rng_seed}|{question_id}|{sample_index}|fallback".encode("utf-8")
    bit = hashlib.sha256(token).digest()[0] & 1
    return Method.COT if bit == 0 else Method.PAL


@dataclass(frozen=True)
class SampleResult:
    cot: ReasoningPath
    pal: ReasoningPath
    selection: SelectionRecord | None
    final: CanonicalAnswer | None


class Pipeline:
    """Binds a backend, a template store, and a program executor to a config."""

    def __init__(
        self,
        backend: Backend,
        templates: TemplateStore,
        executor,
        config: PipelineConfig,
    ):
        self.backend = backend
        self.templates = templates
        self.executor = executor
        self.config = config

    # -- single components ---------------------------------------------------

    def _call(self, messages, temperature: Decimal, sample_index: int):
        request = GenerationRequest(
            model_id=self.config.model_id,
            messages=tuple(messages),
            temperature=temperature,
            max_tokens=self.config.max_tokens,
            sample_index=sample_index,
        )
        return self.backend.generate(request)

    def generate_cot(self, question: Question, sample_index: int) -> ReasoningPath:
        messages = self.templates.build_cot_prompt(question)
        text, usage = self._call(messages, self.config.gen_temperature_cot, sample_index)
        answer = parse_cot_answer(text, question.task_kind)
        return ReasoningPath(Method.COT, text, answer, usage)

    def generate_pal(self, question: Question, sample_index: int) -> ReasoningPath:
        messages = self.templates.build_pal_prompt(question)
        text, usage = self._call(messages, self.config.gen_temperature_pal, sample_index)
        program = extract_program(text)
        answer = None
        if program is not None:
            outcome = self.executor.execute(program, question.task_kind)
            answer = outcome_to_answer(outcome, question.task_kind)
        return ReasoningPath(Method.PAL, text, answer, usage)

    def judge(
        self, question: Question, cot: ReasoningPath, pal: ReasoningPath, sample_index: int
    ) -> SelectionRecord:
        """Ask the selector to pick between two present, unequal answers."""
        cfg = self.config.selection_prompt
        messages = self.templates.build_selection_prompt(question, cot, pal, cfg)
        text, usage = self._call(messages, self.config.select_temperature, sample_index)
        parsed = parse_choice(text)
        if parsed is Choice.NONE:
            chosen = fallback_method(self.config.rng_seed, question.question_id, sample_index)
            fallback_used = True
        else:
            first, second = cfg.order.first_method(), cfg.order.second_method()
            chosen = first if parsed is Choice.A else second
            fallback_used = False
        chosen_path = cot if chosen is Method.COT else pal
        assert chosen_path.answer is not None
        return SelectionRecord(
            sample_index=sample_index,
            order=cfg.order,
            selector_raw=text,
            parsed=parsed,
            fallback_used=fallback_used,
            chosen_method=chosen,
            final=chosen_path.answer,
            usage=usage,
        )

    # -- the algorithm ---------------------------------------------------------

    def solve_one_sample(self, question: Question, sample_index: int) -> SampleResult:
        cot = self.generate_cot(question, sample_index)
        pal = self.generate_pal(question, sample_index)
        if cot.answer is not None and pal.answer is not None:
            if answers_equal(cot.answer, pal.answer):
                return SampleResult(cot, pal, None, cot.answer)
            selection = self.judge(question, cot, pal, sample_index)
            return SampleResult(cot, pal, selection, selection.final)
        present = cot.answer if cot.answer is not None else pal.answer
        if present is not None and self.config.one_sided_policy is OneSidedPolicy.USE_AVAILABLE:
            return SampleResult(cot, pal, None, present)
        return SampleResult(cot, pal, None, None)

    def solve(self, question: Question) -> RunRecord:
        paths: list[ReasoningPath] = []
        selections: list[SelectionRecord] = []
        per_sample_finals: list[CanonicalAnswer | None] = []
        for sample_index in range(self.config.k_samples):
            sample = self.solve_one_sample(question, sample_index)
            paths.extend((sample.cot, sample.pal))
            if sample.selection is not None:
                selections.append(sample.selection)
            per_sample_finals.append(sample.final)
        final = majority_vote(per_sample_finals)
        correct = final is not None and answers_equal(final, question.gold)
        return RunRecord(
            question_id=question.question_id,
            paths=tuple(paths),
            selections=tuple(selections),
            final=final,
            correct=correct,
            per_sample_finals=tuple(per_sample_finals),
        )
