"""Canonical answers, answer parsing, and per-question run records.

Free-form model output is reduced to a small canonical vocabulary (numbers,
calendar dates, short text) before anything downstream compares answers.  Two
answers "agree" only through :func:`answers_equal`, so every module shares one
notion of equality.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import datetime
from decimal import Decimal, InvalidOperation
from enum import Enum

from .llm import TokenUsage


class TaskKind(str, Enum):
    ARITHMETIC = "arithmetic"
    DATE = "date"
    OTHER = "other"


class Method(str, Enum):
    COT = "CoT"
    PAL = "PAL"


class Choice(str, Enum):
    A = "A"
    B = "B"
    NONE = "none"


class OptionOrder(str, Enum):
    COT_FIRST = "cot-first"
    PAL_FIRST = "pal-first"

    def first_method(self) -> Method:
        return Method.COT if self is OptionOrder.COT_FIRST else Method.PAL

    def second_method(self) -> Method:
        return Method.PAL if self is OptionOrder.COT_FIRST else Method.COT


class AnswerKind(str, Enum):
    NUMBER = "number"
    DATE = "date"
    TEXT = "text"


_CURRENCY_SIGNS = "$€£"
_GROUPED_INT = re.compile(r"^\d{1,3}(?:,\d{3})+$")
_PLAIN_NUMBER = re.compile(r"^[-+]?(?:\d+(?:\.\d*)?|\.\d+)$")
_DATE_TOKEN = re.compile(r"\b(\d{1,2})/(\d{1,2})/(\d{4})\b")
_ANSWER_MARKER = re.compile(r"the answer is", re.IGNORECASE)

# Numeric agreement tolerance: relative for ordinary magnitudes, absolute near zero.
REL_TOLERANCE = Decimal("1e-6")
ABS_TOLERANCE = Decimal("1e-9")


def render_decimal(value: Decimal) -> str:
    """Render without exponent notation and without trailing zeros."""
    if value == 0:
        return "0"
    return format(value.normalize(), "f")


def normalize_number(text: str) -> Decimal | None:
    """Parse a human-formatted number to an exact decimal.

    Strips surrounding whitespace, one leading currency sign, thousands
    separators (grouping is validated, not just deleted), a single trailing
    period, and a trailing percent sign.  Word numerals are out of scope.
    Returns None on anything that is not a number.
    """
    s = text.strip()
    if not s:
        return None
    if s.endswith("%"):
        s = s[:-1].rstrip()
    sign = ""
    if s and s[0] in "+-":
        sign, s = s[0], s[1:].lstrip()
    if s and s[0] in _CURRENCY_SIGNS:
        s = s[1:].lstrip()
    if not sign and s and s[0] in "+-":
        sign, s = s[0], s[1:]
    if s.endswith(".") and not s.endswith(".."):
        s = s[:-1]
    if "," in s:
        head, dot, frac = s.partition(".")
        if not _GROUPED_INT.match(head) or "," in frac:
            return None
        s = head.replace(",", "") + dot + frac
    s = sign + s
    if not _PLAIN_NUMBER.match(s):
        return None
    try:
        return Decimal(s)
    except InvalidOperation:
        return None


def canonical_date_text(text: str) -> str | None:
    """Find an M/D/YYYY token, validate it as a real date, render MM/DD/YYYY."""
    match = _DATE_TOKEN.search(text)
    if match is None:
        return None
    month, day, year = (int(g) for g in match.groups())
    try:
        return datetime(year, month, day).strftime("%m/%d/%Y")
    except ValueError:
        return None


@dataclass(frozen=True)
class CanonicalAnswer:
    """Tagged union over the three answer shapes the tasks produce."""

    kind: AnswerKind
    number: Decimal | None = None
    text: str | None = None

    def __post_init__(self) -> None:
        if self.kind is AnswerKind.NUMBER:
            if self.number is None or not self.number.is_finite():
                raise ValueError("number answers need a finite decimal value")
        elif self.kind is AnswerKind.DATE:
            if self.text is None or canonical_date_text(self.text) != self.text:
                raise ValueError(f"not a canonical MM/DD/YYYY date: {self.text!r}")
        else:
            if self.text is None or not self.text:
                raise ValueError("text answers must be nonempty after trimming")

    @staticmethod
    def from_number(value: Decimal | int | str) -> "CanonicalAnswer":
        return CanonicalAnswer(AnswerKind.NUMBER, number=Decimal(value))

    @staticmethod
    def from_date(text: str) -> "CanonicalAnswer":
        canonical = canonical_date_text(text)
        if canonical is None:
            raise ValueError(f"not a valid date: {text!r}")
        return CanonicalAnswer(AnswerKind.DATE, text=canonical)

    @staticmethod
    def from_text(text: str) -> "CanonicalAnswer":
        return CanonicalAnswer(AnswerKind.TEXT, text=text.strip().casefold())

    def render(self) -> str:
        if self.kind is AnswerKind.NUMBER:
            assert self.number is not None
            return render_decimal(self.number)
        assert self.text is not None
        return self.text

    def sort_key(self) -> tuple:
        if self.kind is AnswerKind.NUMBER:
            return (0, self.number)
        if self.kind is AnswerKind.DATE:
            return (1, self.text)
        return (2, self.text)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "value": self.render()}

    @staticmethod
    def from_dict(doc: dict) -> "CanonicalAnswer":
        kind = AnswerKind(doc["kind"])
        if kind is AnswerKind.NUMBER:
            return CanonicalAnswer.from_number(doc["value"])
        return CanonicalAnswer(kind, text=doc["value"])


def _coerce(answer: CanonicalAnswer) -> CanonicalAnswer:
    # Text that reads as a number or a date compares under that reading.
    if answer.kind is not AnswerKind.TEXT:
        return answer
    assert answer.text is not None
    number = normalize_number(answer.text)
    if number is not None:
        return CanonicalAnswer(AnswerKind.NUMBER, number=number)
    date = canonical_date_text(answer.text)
    if date is not None and date == answer.text:
        return CanonicalAnswer(AnswerKind.DATE, text=date)
    return answer


def answers_equal(a: CanonicalAnswer, b: CanonicalAnswer) -> bool:
    """Shared agreement predicate: tolerant for numbers, exact otherwise."""
    a, b = _coerce(a), _coerce(b)
    if a.kind is not b.kind:
        return False
    if a.kind is AnswerKind.NUMBER:
        assert a.number is not None and b.number is not None
        diff = abs(a.number - b.number)
        tol = max(ABS_TOLERANCE, REL_TOLERANCE * max(abs(a.number), abs(b.number)))
        return diff <= tol
    return a.text == b.text


def parse_cot_answer(raw_text: str, task_kind: TaskKind) -> CanonicalAnswer | None:
    """Pull the final answer out of a reasoning chain.

    The extraction anchor is the last occurrence of "the answer is" (case
    insensitive, which also covers "So the answer is").  Chains often restate
    intermediate answers; only the last one counts.  Returns None when there is
    no anchor or the tail does not parse under the task kind.
    """
    last = None
    for match in _ANSWER_MARKER.finditer(raw_text):
        last = match
    if last is None:
        return None
    tail = raw_text[last.end() :]
    if task_kind is TaskKind.DATE:
        date = canonical_date_text(tail)
        return CanonicalAnswer(AnswerKind.DATE, text=date) if date else None
    if task_kind is TaskKind.ARITHMETIC:
        for token in tail.split():
            number = normalize_number(token)
            if number is not None:
                return CanonicalAnswer(AnswerKind.NUMBER, number=number)
        return None
    line = tail.splitlines()[0] if tail.splitlines() else ""
    line = line.strip().rstrip(".").strip()
    return CanonicalAnswer.from_text(line) if line else None


# ---------------------------------------------------------------------------
# Run records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Question:
    question_id: str
    text: str
    gold: CanonicalAnswer
    task_kind: TaskKind


@dataclass(frozen=True)
class ReasoningPath:
    """One method's attempt at one sample: raw output plus its parsed answer."""

    method: Method
    raw_text: str
    answer: CanonicalAnswer | None
    usage: TokenUsage

    def to_dict(self) -> dict:
        return {
            "method": self.method.value,
            "raw_text": self.raw_text,
            "answer": self.answer.to_dict() if self.answer else None,
            "usage": {
                "prompt_tokens": self.usage.prompt_tokens,
                "completion_tokens": self.usage.completion_tokens,
            },
        }

    @staticmethod
    def from_dict(doc: dict) -> "ReasoningPath":
        return ReasoningPath(
            method=Method(doc["method"]),
            raw_text=doc["raw_text"],
            answer=CanonicalAnswer.from_dict(doc["answer"]) if doc["answer"] else None,
            usage=TokenUsage(doc["usage"]["prompt_tokens"], doc["usage"]["completion_tokens"]),
        )


@dataclass(frozen=True)
class SelectionRecord:
    """One judged disagreement: what the selector said and what we did with it.

    ``parsed is Choice.NONE`` if and only if ``fallback_used``; the fallback is
    a seeded uniform draw, so records stay reproducible.  ``usage`` covers the
    selector call itself, which Table-style cost accounting must include.
    """

    sample_index: int
    order: OptionOrder
    selector_raw: str
    parsed: Choice
    fallback_used: bool
    chosen_method: Method
    final: CanonicalAnswer
    usage: TokenUsage

    def __post_init__(self) -> None:
        if (self.parsed is Choice.NONE) != self.fallback_used:
            raise ValueError("fallback_used must mirror an unparseable selector output")

    def to_dict(self) -> dict:
        return {
            "sample_index": self.sample_index,
            "order": self.order.value,
            "selector_raw": self.selector_raw,
            "parsed": self.parsed.value,
            "fallback_used": self.fallback_used,
            "chosen_method": self.chosen_method.value,
            "final": self.final.to_dict(),
            "usage": {
                "prompt_tokens": self.usage.prompt_tokens,
                "completion_tokens": self.usage.completion_tokens,
            },
        }

    @staticmethod
    def from_dict(doc: dict) -> "SelectionRecord":
        return SelectionRecord(
            sample_index=doc["sample_index"],
            order=OptionOrder(doc["order"]),
            selector_raw=doc["selector_raw"],
            parsed=Choice(doc["parsed"]),
            fallback_used=doc["fallback_used"],
            chosen_method=Method(doc["chosen_method"]),
            final=CanonicalAnswer.from_dict(doc["final"]),
            usage=TokenUsage(doc["usage"]["prompt_tokens"], doc["usage"]["completion_tokens"]),
        )


@dataclass(frozen=True)
class RunRecord:
    """Everything one question produced: paths, selections, and the final call."""

    question_id: str
    paths: tuple[ReasoningPath, ...]
    selections: tuple[SelectionRecord, ...]
    final: CanonicalAnswer | None
    correct: bool
    per_sample_finals: tuple[CanonicalAnswer | None, ...] = field(default=())

    @property
    def k_samples(self) -> int:
        return len(self.per_sample_finals)

    def to_dict(self) -> dict:
        return {
            "kind": "record",
            "question_id": self.question_id,
            "paths": [p.to_dict() for p in self.paths],
            "selections": [s.to_dict() for s in self.selections],
            "final": self.final.to_dict() if self.final else None,
            "correct": self.correct,
            "per_sample_finals": [a.to_dict() if a else None for a in self.per_sample_finals],
        }

    @staticmethod
    def from_dict(doc: dict) -> "RunRecord":
        return RunRecord(
            question_id=doc["question_id"],
            paths=tuple(ReasoningPath.from_dict(p) for p in doc["paths"]),
            selections=tuple(SelectionRecord.from_dict(s) for s in doc["selections"]),
            final=CanonicalAnswer.from_dict(doc["final"]) if doc["final"] else None,
            correct=doc["correct"],
            per_sample_finals=tuple(
                CanonicalAnswer.from_dict(a) if a else None for a in doc["per_sample_finals"]
            ),
        )
