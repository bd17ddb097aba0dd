"""Few-shot prompt assembly from versioned template data files.

Three prompt families live here: chain-style generation, program-style
generation, and the two-choice selection prompt.  All wording ships in data
files under ``templates/`` so a prompt change is a data diff, not a code diff.
Selection exemplars are stored method-tagged (which side is the chain, which
is the program, which one is right) and get their (A)/(B) letters assigned at
render time from the configured option order.

Template files are plain UTF-8 with ``@@section <name>`` headers; section
bodies keep their leading blank lines, which is how a template encodes whether
an exemplar answer attaches inline (completion style) or as a fresh paragraph
(chat style).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .core import (
    AnswerKind,
    CanonicalAnswer,
    Method,
    OptionOrder,
    Question,
    ReasoningPath,
    TaskKind,
    answers_equal,
    parse_cot_answer,
)
from .pal_exec import ProgramText, extract_program, rendered_to_answer

BUNDLED_DIR = Path(__file__).parent / "templates"


class TemplateError(ValueError):
    """Base for template-store problems."""


class MissingTemplate(TemplateError):
    pass


class UnknownExemplarSet(TemplateError):
    pass


class BadExemplar(TemplateError):
    pass


class PromptStyle(str, Enum):
    COMPLETION = "completion"
    CHAT = "chat"


@dataclass(frozen=True)
class SelectionPromptConfig:
    order: OptionOrder = OptionOrder.COT_FIRST
    with_explanation: bool = False
    include_pal_answer: bool = False
    n_shots: int | None = None
    style: PromptStyle = PromptStyle.CHAT


# Problem-kind wording: (block label, inline phrase).
_KIND_WORDS: dict[TaskKind, tuple[str, str]] = {
    TaskKind.ARITHMETIC: ("Math Problem", "math problem"),
    TaskKind.DATE: ("Date Understanding Problem", "date understanding problem"),
    TaskKind.OTHER: ("Problem", "problem"),
}

RESULT_LINE = "The result is {value}."


def parse_sections(text: str) -> dict[str, str]:
    """Split a template file into named sections.

    A ``@@section name`` line opens a section; everything to the next header
    belongs to it.  Bodies keep interior and leading blank lines but drop
    trailing ones, so attachment spacing is authored, not inferred.
    """
    sections: dict[str, list[str]] = {}
    current: list[str] | None = None
    for line in text.splitlines():
        if line.startswith("@@section "):
            name = line[len("@@section ") :].strip()
            if not name or name in sections:
                raise TemplateError(f"bad or duplicate section header: {line!r}")
            current = sections.setdefault(name, [])
        elif current is not None:
            current.append(line)
        elif line.strip():
            raise TemplateError(f"content before first section header: {line!r}")
    return {name: "\n".join(body).rstrip("\n") for name, body in sections.items()}


def _fill(template: str, **values: str) -> str:
    out = template
    for key, value in values.items():
        out = out.replace("{{" + key + "}}", value)
    return out


@dataclass(frozen=True)
class GenerationExemplar:
    question: str
    solution: str


@dataclass(frozen=True)
class SelectionExemplar:
    """One worked disagreement, method-tagged rather than letter-tagged.

    ``explanation`` uses ``{{chosen}}``/``{{other}}`` placeholders so the
    letters stay truthful under either option order.  ``reconstructed`` marks
    entries authored to fill out the set.
    """

    question: str
    answer: str
    answer_kind: AnswerKind
    cot: str
    pal: str
    pal_result: str
    correct_method: Method
    explanation: str
    reconstructed: bool

    @property
    def task_gold(self) -> CanonicalAnswer:
        if self.answer_kind is AnswerKind.NUMBER:
            return CanonicalAnswer.from_number(self.answer)
        if self.answer_kind is AnswerKind.DATE:
            return CanonicalAnswer.from_date(self.answer)
        return CanonicalAnswer.from_text(self.answer)


def _answer_task_kind(kind: AnswerKind) -> TaskKind:
    return {
        AnswerKind.NUMBER: TaskKind.ARITHMETIC,
        AnswerKind.DATE: TaskKind.DATE,
        AnswerKind.TEXT: TaskKind.OTHER,
    }[kind]


def _validate_selection_exemplar(exemplar: SelectionExemplar, where: str) -> None:
    """Static cross-checks: exactly one option is right, letters stay symbolic."""
    if "(A)" in exemplar.explanation or "(B)" in exemplar.explanation:
        raise BadExemplar(f"{where}: explanation must use placeholders, not letters")
    if "def solution" not in exemplar.pal:
        raise BadExemplar(f"{where}: program option lacks a solution function")
    kind = _answer_task_kind(exemplar.answer_kind)
    gold = exemplar.task_gold
    cot_answer = parse_cot_answer(exemplar.cot, kind)
    if cot_answer is None:
        raise BadExemplar(f"{where}: chain option never states its answer")
    pal_answer = rendered_to_answer(exemplar.pal_result, kind)
    if pal_answer is None:
        raise BadExemplar(f"{where}: pal_result does not parse under {kind.value}")
    cot_right = answers_equal(cot_answer, gold)
    pal_right = answers_equal(pal_answer, gold)
    if cot_right == pal_right:
        raise BadExemplar(
            f"{where}: exactly one option must contain the injected error "
            f"(chain right={cot_right}, program right={pal_right})"
        )
    if (exemplar.correct_method is Method.COT) != cot_right:
        raise BadExemplar(f"{where}: correct_method disagrees with the options")


@dataclass(frozen=True)
class _SelectionSet:
    style_key: str
    sections: dict[str, str]
    exemplars: tuple[SelectionExemplar, ...]
    default_shots: int


@dataclass(frozen=True)
class _GenerationSet:
    sections: dict[str, str]
    exemplars: tuple[GenerationExemplar, ...]
    default_shots: int


class TemplateStore:
    """Loads and renders the bundled (or a user-supplied) template directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        manifest_path = self.root / "manifest.json"
        if not manifest_path.exists():
            raise MissingTemplate(f"no manifest.json under {self.root}")
        with manifest_path.open(encoding="utf-8") as fh:
            self.manifest = json.load(fh)
        self._generation: dict[tuple[str, str], _GenerationSet] = {}
        self._selection: dict[tuple[str, str], _SelectionSet] = {}
        self._load()

    @classmethod
    def bundled(cls) -> "TemplateStore":
        return cls(BUNDLED_DIR)

    def _read(self, name: str) -> str:
        path = self.root / name
        if not path.exists():
            raise MissingTemplate(f"template file missing: {path}")
        return path.read_text(encoding="utf-8")

    def _load(self) -> None:
        for family, kinds in self.manifest.get("generation", {}).items():
            for set_id, entry in kinds.items():
                sections = parse_sections(self._read(entry["template"]))
                for required in ("block_exemplar", "block_target"):
                    if required not in sections:
                        raise TemplateError(f"{entry['template']}: missing section {required}")
                raw = json.loads(self._read(entry["exemplars"]))
                exemplars = tuple(
                    GenerationExemplar(e["question"], e["solution"]) for e in raw["exemplars"]
                )
                if not exemplars:
                    raise BadExemplar(f"{entry['exemplars']}: empty exemplar set")
                self._generation[(family, set_id)] = _GenerationSet(
                    sections, exemplars, int(entry["default_shots"])
                )
        for style_key, kinds in self.manifest.get("selection", {}).items():
            for set_id, entry in kinds.items():
                sections = parse_sections(self._read(entry["template"]))
                for required in ("block", "answer_plain", "answer_explained"):
                    if required not in sections:
                        raise TemplateError(f"{entry['template']}: missing section {required}")
                raw = json.loads(self._read(entry["exemplars"]))
                exemplars = []
                for i, doc in enumerate(raw["exemplars"]):
                    exemplar = SelectionExemplar(
                        question=doc["question"],
                        answer=doc["answer"],
                        answer_kind=AnswerKind(doc["answer_kind"]),
                        cot=doc["cot"],
                        pal=doc["pal"],
                        pal_result=doc["pal_result"],
                        correct_method=Method(doc["correct_method"]),
                        explanation=doc["explanation"],
                        reconstructed=bool(doc.get("reconstructed", False)),
                    )
                    _validate_selection_exemplar(
                        exemplar, f"{entry['exemplars']}[{i}]"
                    )
                    exemplars.append(exemplar)
                if not exemplars:
                    raise BadExemplar(f"{entry['exemplars']}: empty exemplar set")
                self._selection[(style_key, set_id)] = _SelectionSet(
                    style_key, sections, tuple(exemplars), int(entry["default_shots"])
                )

    # -- generation prompts -------------------------------------------------

    def _generation_set(self, family: str, set_id: str) -> _GenerationSet:
        try:
            return self._generation[(family, set_id)]
        except KeyError:
            raise UnknownExemplarSet(f"no {family} exemplar set {set_id!r}") from None

    def _build_generation(
        self, family: str, question: Question, set_id: str | None, n_shots: int | None
    ) -> tuple[tuple[str, str], ...]:
        gen = self._generation_set(family, set_id or question.task_kind.value)
        shots = gen.default_shots if n_shots is None else n_shots
        if not (1 <= shots <= len(gen.exemplars)):
            raise TemplateError(
                f"n_shots={shots} out of range for set of {len(gen.exemplars)} exemplars"
            )
        parts = [
            _fill(gen.sections["block_exemplar"], question=e.question, solution=e.solution)
            for e in gen.exemplars[:shots]
        ]
        parts.append(_fill(gen.sections["block_target"], question=question.text))
        body = "\n\n".join(parts)
        system = gen.sections.get("system", "")
        if system:
            return (("system", system), ("user", body))
        return (("user", body),)

    def build_cot_prompt(
        self, question: Question, set_id: str | None = None, n_shots: int | None = None
    ) -> tuple[tuple[str, str], ...]:
        return self._build_generation("cot", question, set_id, n_shots)

    def build_pal_prompt(
        self, question: Question, set_id: str | None = None, n_shots: int | None = None
    ) -> tuple[tuple[str, str], ...]:
        return self._build_generation("pal", question, set_id, n_shots)

    # -- selection prompts ---------------------------------------------------

    def _selection_set(self, cfg: SelectionPromptConfig, set_id: str) -> _SelectionSet:
        # The result-line variant has its own wording when the directory ships
        # one for this set; otherwise the base style carries the result lines.
        if cfg.include_pal_answer and ("llama", set_id) in self._selection:
            return self._selection[("llama", set_id)]
        try:
            return self._selection[(cfg.style.value, set_id)]
        except KeyError:
            raise UnknownExemplarSet(
                f"no selection exemplar set {set_id!r} for style {cfg.style.value}"
            ) from None

    @staticmethod
    def _with_header(chain_text: str, chain_header: str) -> str:
        # The chain option opens with a style-specific header ("Answer:" or
        # "A:") that travels with the option under either order.
        return chain_header + "\n" + chain_text if chain_header else chain_text

    @classmethod
    def _option_bodies(
        cls, exemplar: SelectionExemplar, include_pal_answer: bool, chain_header: str
    ) -> dict[Method, str]:
        pal_text = exemplar.pal
        if include_pal_answer:
            pal_text += "\n" + RESULT_LINE.format(value=exemplar.pal_result)
        return {
            Method.COT: cls._with_header(exemplar.cot, chain_header),
            Method.PAL: pal_text,
        }

    @classmethod
    def target_option_bodies(
        cls,
        cot: ReasoningPath,
        pal: ReasoningPath,
        include_pal_answer: bool,
        chain_header: str = "",
    ) -> dict[Method, str]:
        program = extract_program(pal.raw_text)
        pal_text = program.source if program is not None else pal.raw_text.strip()
        if include_pal_answer and pal.answer is not None:
            pal_text += "\n" + RESULT_LINE.format(value=pal.answer.render())
        return {
            Method.COT: cls._with_header(cot.raw_text.strip(), chain_header),
            Method.PAL: pal_text,
        }

    def render_target_block(
        self, question: Question, cot: ReasoningPath, pal: ReasoningPath, cfg: SelectionPromptConfig
    ) -> str:
        """The final, unanswered block the selector is asked to judge."""
        sel = self._selection_set(cfg, question.task_kind.value)
        label, phrase = _KIND_WORDS[question.task_kind]
        bodies = self.target_option_bodies(
            cot, pal, cfg.include_pal_answer, sel.sections.get("chain_header", "")
        )
        return _fill(
            sel.sections["block"],
            problem_label=label,
            problem_kind=phrase,
            question=question.text,
            option_a=bodies[cfg.order.first_method()],
            option_b=bodies[cfg.order.second_method()],
        )

    def build_selection_prompt(
        self,
        question: Question,
        cot: ReasoningPath,
        pal: ReasoningPath,
        cfg: SelectionPromptConfig,
    ) -> tuple[tuple[str, str], ...]:
        sel = self._selection_set(cfg, question.task_kind.value)
        shots = sel.default_shots if cfg.n_shots is None else cfg.n_shots
        if not (0 <= shots <= len(sel.exemplars)):
            raise TemplateError(
                f"n_shots={shots} out of range for set of {len(sel.exemplars)} exemplars"
            )
        label, phrase = _KIND_WORDS[question.task_kind]
        turn_header = sel.sections.get("turn_header", "")
        answer_key = "answer_explained" if cfg.with_explanation else "answer_plain"

        parts: list[str] = []
        preamble = sel.sections.get("preamble", "")
        if preamble:
            parts.append(_fill(preamble, problem_kind=phrase))
        chain_header = sel.sections.get("chain_header", "")
        for index, exemplar in enumerate(sel.exemplars[:shots]):
            bodies = self._option_bodies(exemplar, cfg.include_pal_answer, chain_header)
            first = cfg.order.first_method()
            chosen, other = ("(A)", "(B)") if exemplar.correct_method is first else ("(B)", "(A)")
            block = _fill(
                sel.sections["block"],
                problem_label=label,
                problem_kind=phrase,
                question=exemplar.question,
                option_a=bodies[first],
                option_b=bodies[cfg.order.second_method()],
            )
            answer = _fill(
                sel.sections[answer_key],
                problem_kind=phrase,
                chosen=chosen,
                other=other,
                explanation=_fill(exemplar.explanation, chosen=chosen, other=other),
            )
            if index > 0 and turn_header:
                parts.append(_fill(turn_header, problem_kind=phrase))
            parts.append(block + answer)
        if turn_header and shots > 0:
            parts.append(_fill(turn_header, problem_kind=phrase))
        parts.append(self.render_target_block(question, cot, pal, cfg))

        body = "\n\n".join(parts)
        system = sel.sections.get("system", "")
        if system:
            return (("system", _fill(system, problem_kind=phrase)), ("user", body))
        return (("user", body),)

    def selection_exemplars(self, style: PromptStyle | str, set_id: str) -> tuple[SelectionExemplar, ...]:
        key = style.value if isinstance(style, PromptStyle) else style
        try:
            return self._selection[(key, set_id)].exemplars
        except KeyError:
            raise UnknownExemplarSet(f"no selection exemplar set {set_id!r} for {key}") from None

    def all_selection_exemplars(self) -> list[tuple[str, str, SelectionExemplar]]:
        out = []
        for (style_key, set_id), sel in sorted(self._selection.items()):
            for exemplar in sel.exemplars:
                out.append((style_key, set_id, exemplar))
        return out

    def generation_exemplars(self, family: str, set_id: str) -> tuple[GenerationExemplar, ...]:
        return self._generation_set(family, set_id).exemplars


def verify_exemplar_programs(store: TemplateStore, executor) -> list[str]:
    """Deep check: run every stored program, compare against its pal_result.

    Needs a working runner, so it lives outside load-time validation.  Returns
    a list of failure descriptions (empty when everything matches).
    """
    problems = []
    seen: set[str] = set()
    for style_key, set_id, exemplar in store.all_selection_exemplars():
        if exemplar.pal in seen:
            continue
        seen.add(exemplar.pal)
        kind = _answer_task_kind(exemplar.answer_kind)
        outcome = executor.execute(ProgramText(exemplar.pal), kind)
        if not outcome.ok:
            problems.append(
                f"{style_key}/{set_id} {exemplar.question[:40]!r}: program failed "
                f"({outcome.failure}: {outcome.detail})"
            )
        elif outcome.value != exemplar.pal_result:
            problems.append(
                f"{style_key}/{set_id} {exemplar.question[:40]!r}: program rendered "
                f"{outcome.value!r}, stored pal_result is {exemplar.pal_result!r}"
            )
    return problems
