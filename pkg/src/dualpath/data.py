"""Dataset ingestion.

Two line formats cover everything we run: plain question/answer JSONL, and the
grade-school math export whose gold hides after the final "#### " marker.
Anything else is converted offline.  Loading normalizes every gold through the
canonical answer rules so a malformed dataset fails at load time, not at
scoring time.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .core import CanonicalAnswer, Question, TaskKind, normalize_number

GSM_DELIMITER = "#### "


class DatasetFormat(str, Enum):
    JSONL_QA = "jsonl_qa"
    JSONL_GSM_HASH = "jsonl_gsm_hash"


class ParseError(Exception):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class EmptyDataset(Exception):
    pass


class OutOfRange(Exception):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    path: Path
    format: DatasetFormat
    task_kind: TaskKind
    id_prefix: str = "q"


def _normalize_gold(raw: str, task_kind: TaskKind, line_no: int) -> CanonicalAnswer:
    if task_kind is TaskKind.ARITHMETIC:
        number = normalize_number(raw)
        if number is None:
            raise ParseError(line_no, f"gold {raw!r} is not a number")
        return CanonicalAnswer.from_number(number)
    if task_kind is TaskKind.DATE:
        try:
            return CanonicalAnswer.from_date(raw.strip())
        except ValueError:
            raise ParseError(line_no, f"gold {raw!r} is not an MM/DD/YYYY date") from None
    text = raw.strip()
    if not text:
        raise ParseError(line_no, "gold is empty")
    return CanonicalAnswer.from_text(text)


def _parse_line(doc: dict, spec: DatasetSpec, line_no: int) -> Question:
    for key in ("question", "answer"):
        if key not in doc:
            raise ParseError(line_no, f"missing {key!r} field")
        if not isinstance(doc[key], str) or not doc[key].strip():
            raise ParseError(line_no, f"{key!r} must be a nonempty string")

    raw_answer = doc["answer"]
    if spec.format is DatasetFormat.JSONL_GSM_HASH:
        head, delim, tail = raw_answer.rpartition(GSM_DELIMITER)
        if not delim:
            raise ParseError(line_no, f"answer has no {GSM_DELIMITER.strip()!r} delimiter")
        raw_answer = tail
        question_id = f"{spec.id_prefix}{line_no}"
    else:
        question_id = doc.get("id") or f"{spec.id_prefix}{line_no}"
        if not isinstance(question_id, str):
            raise ParseError(line_no, "'id' must be a string")

    return Question(
        question_id=question_id,
        text=doc["question"].strip(),
        gold=_normalize_gold(raw_answer, spec.task_kind, line_no),
        task_kind=spec.task_kind,
    )


def load_questions(spec: DatasetSpec) -> list[Question]:
    """Read one JSON object per line; blank lines are allowed and skipped.
    Ids come from the file when present, otherwise id_prefix + 1-based line
    number.  Duplicate ids are an error because transcripts key on them.
    """
    questions: list[Question] = []
    seen: set[str] = set()
    with Path(spec.path).open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(line_no, f"invalid JSON: {exc.msg}") from None
            if not isinstance(doc, dict):
                raise ParseError(line_no, "each line must be a JSON object")
            question = _parse_line(doc, spec, line_no)
            if question.question_id in seen:
                raise ParseError(line_no, f"duplicate id {question.question_id!r}")
            seen.add(question.question_id)
            questions.append(question)
    if not questions:
        raise EmptyDataset(str(spec.path))
    return questions


def sample_subset(questions: list[Question], k: int, seed: int) -> list[Question]:
    """Seeded shuffle, first k.  Same seed and input always give the same subset."""
    if not 1 <= k <= len(questions):
        raise OutOfRange(f"k={k} outside 1..{len(questions)}")
    shuffled = list(questions)
    random.Random(seed).shuffle(shuffled)
    return shuffled[:k]
