"""Transcript analysis: accuracies, selection quality, and cost.

Everything is recomputed from the stored paths and selections rather than
trusted from the records' own correct flags, so a corrupted transcript shows
up as a failed accounting identity instead of a silently wrong table.
Accuracies are exact fractions; floats appear only at render time.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction
from typing import IO

from .core import (
    CanonicalAnswer,
    Method,
    Question,
    RunRecord,
    answers_equal,
)
from .llm import PriceTable, TokenUsage, estimate_cost
from .pipeline import majority_vote


class UnknownQuestion(Exception):
    """A record references a question id the question list does not contain."""


class MixedModes(Exception):
    """Greedy-only analysis was asked of a transcript that is not uniformly greedy."""


@dataclass(frozen=True)
class BucketCounts:
    """Question-level taxonomy by which methods got the gold answer.

    A missing answer counts as wrong, so one-sided and empty samples land in
    the only-X-correct or both-wrong buckets and the five counts cover every
    question exactly once.
    """

    agree_correct: int
    agree_wrong: int
    only_cot_correct: int
    only_pal_correct: int
    both_wrong_disagree: int

    @property
    def total(self) -> int:
        return (
            self.agree_correct
            + self.agree_wrong
            + self.only_cot_correct
            + self.only_pal_correct
            + self.both_wrong_disagree
        )

    def to_dict(self) -> dict:
        return {
            "agree_correct": self.agree_correct,
            "agree_wrong": self.agree_wrong,
            "only_cot_correct": self.only_cot_correct,
            "only_pal_correct": self.only_pal_correct,
            "both_wrong_disagree": self.both_wrong_disagree,
        }


@dataclass(frozen=True)
class CostSummary:
    total_tokens: int
    generated_tokens: int
    usd: Decimal | None

    def to_dict(self) -> dict:
        return {
            "total_tokens": self.total_tokens,
            "generated_tokens": self.generated_tokens,
            "usd": str(self.usd) if self.usd is not None else None,
        }


def _ratio(value) -> dict | None:
    if value is None:
        return None
    return {"value": float(value), "exact": f"{value.numerator}/{value.denominator}"}


@dataclass(frozen=True)
class AnalysisReport:
    n_questions: int
    k_samples: int
    mode: str
    acc_cot: Fraction
    acc_pal: Fraction
    acc_ours: Fraction
    acc_upper_bound: Fraction
    improvement: Fraction
    delta_upper_bound: Fraction
    success_rate: Fraction | None
    ratio_cot: Fraction | None
    ratio_pal: Fraction | None
    fallback_rate: Fraction
    counts: BucketCounts
    correct_total: int
    selected_correct: int
    one_sided_total: int
    one_sided_correct: int
    n_selections: int
    n_fallbacks: int
    cost: CostSummary

    def to_json_dict(self) -> dict:
        return {
            "n_questions": self.n_questions,
            "k_samples": self.k_samples,
            "mode": self.mode,
            "acc_cot": _ratio(self.acc_cot),
            "acc_pal": _ratio(self.acc_pal),
            "acc_ours": _ratio(self.acc_ours),
            "acc_upper_bound": _ratio(self.acc_upper_bound),
            "improvement": _ratio(self.improvement),
            "delta_upper_bound": _ratio(self.delta_upper_bound),
            "success_rate": _ratio(self.success_rate),
            "ratio_cot": _ratio(self.ratio_cot),
            "ratio_pal": _ratio(self.ratio_pal),
            "fallback_rate": _ratio(self.fallback_rate),
            "counts": self.counts.to_dict(),
            "correct_total": self.correct_total,
            "selected_correct": self.selected_correct,
            "one_sided_total": self.one_sided_total,
            "one_sided_correct": self.one_sided_correct,
            "n_selections": self.n_selections,
            "n_fallbacks": self.n_fallbacks,
            "cost": self.cost.to_dict(),
        }

    def render_text(self) -> str:
        def pct(value) -> str:
            return "-" if value is None else f"{float(value) * 100:6.2f}%"

        c = self.counts
        lines = [
            f"questions            {self.n_questions}   mode {self.mode} (k={self.k_samples})",
            f"accuracy chain       {pct(self.acc_cot)}",
            f"accuracy program     {pct(self.acc_pal)}",
            f"accuracy combined    {pct(self.acc_ours)}   improvement {pct(self.improvement)}",
            f"accuracy upper bound {pct(self.acc_upper_bound)}   headroom    {pct(self.delta_upper_bound)}",
            f"selection success    {pct(self.success_rate)}   chain/program split {pct(self.ratio_cot)} / {pct(self.ratio_pal)}",
            f"selector calls       {self.n_selections}   fallbacks {self.n_fallbacks} ({pct(self.fallback_rate)})",
            f"agreement            {c.agree_correct} right, {c.agree_wrong} wrong",
            f"disagreement         {c.only_cot_correct} chain-only right, {c.only_pal_correct} program-only right, {c.both_wrong_disagree} neither",
            f"one-sided            {self.one_sided_total} ({self.one_sided_correct} resolved correctly)",
            f"tokens               {self.cost.total_tokens} total, {self.cost.generated_tokens} generated",
        ]
        if self.cost.usd is not None:
            lines.append(f"estimated cost       ${self.cost.usd}")
        return "\n".join(lines)


def _method_answer(record: RunRecord, method: Method) -> CanonicalAnswer | None:
    answers = [p.answer for p in record.paths if p.method is method]
    if len(answers) == 1:
        return answers[0]
    return majority_vote(answers)


def _is_correct(answer: CanonicalAnswer | None, gold: CanonicalAnswer) -> bool:
    return answer is not None and answers_equal(answer, gold)


def analyze(
    records: list[RunRecord],
    questions: list[Question],
    *,
    model_id: str | None = None,
    prices: PriceTable | None = None,
) -> AnalysisReport:
    """Aggregate a transcript against its question list.

    Self-consistency transcripts get per-method accuracies from majority votes
    over each method's samples; selection-quality fields (success rate,
    choice ratios) are greedy-only and come back as None otherwise.
    Cost in dollars appears only when both model_id and prices are given.
    """
    by_id = {q.question_id: q for q in questions}
    if not records:
        raise ValueError("no records to analyze")
    ks = {record.k_samples for record in records}
    if len(ks) > 1:
        raise MixedModes(f"transcript mixes sample counts {sorted(ks)}")
    k = ks.pop()
    greedy = k == 1

    seen: set[str] = set()
    counts = {key: 0 for key in (
        "agree_correct", "agree_wrong", "only_cot_correct", "only_pal_correct",
        "both_wrong_disagree",
    )}
    cot_right = pal_right = ours_right = either_right = 0
    one_sided_total = one_sided_correct = 0
    selected_correct = n_selections = n_fallbacks = 0
    one_correct_judged = one_correct_judged_right = one_correct_chose_cot = 0
    usages: list[TokenUsage] = []

    for record in records:
        question = by_id.get(record.question_id)
        if question is None:
            raise UnknownQuestion(record.question_id)
        if record.question_id in seen:
            raise ValueError(f"duplicate record for question {record.question_id!r}")
        seen.add(record.question_id)
        gold = question.gold

        a_cot = _method_answer(record, Method.COT)
        a_pal = _method_answer(record, Method.PAL)
        cot_ok = _is_correct(a_cot, gold)
        pal_ok = _is_correct(a_pal, gold)
        cot_right += cot_ok
        pal_right += pal_ok
        either_right += cot_ok or pal_ok
        ours_right += _is_correct(record.final, gold)

        agree = a_cot is not None and a_pal is not None and answers_equal(a_cot, a_pal)
        if agree or (cot_ok and pal_ok):
            counts["agree_correct" if cot_ok else "agree_wrong"] += 1
        elif cot_ok:
            counts["only_cot_correct"] += 1
        elif pal_ok:
            counts["only_pal_correct"] += 1
        else:
            counts["both_wrong_disagree"] += 1

        for selection in record.selections:
            n_selections += 1
            n_fallbacks += selection.fallback_used
            selected_correct += _is_correct(selection.final, gold)
        if greedy:
            present = [a for a in (a_cot, a_pal) if a is not None]
            if len(present) == 1:
                one_sided_total += 1
                one_sided_correct += _is_correct(record.final, gold)
            if record.selections and cot_ok != pal_ok:
                one_correct_judged += 1
                one_correct_judged_right += _is_correct(record.selections[0].final, gold)
                one_correct_chose_cot += record.selections[0].chosen_method is Method.COT

        for path in record.paths:
            usages.append(path.usage)
        for selection in record.selections:
            usages.append(selection.usage)

    n = len(records)
    acc_cot = Fraction(cot_right, n)
    acc_pal = Fraction(pal_right, n)
    acc_ours = Fraction(ours_right, n)
    acc_upper = Fraction(either_right, n)
    base = max(acc_cot, acc_pal)

    success_rate = ratio_cot = ratio_pal = None
    if greedy and one_correct_judged:
        success_rate = Fraction(one_correct_judged_right, one_correct_judged)
        ratio_cot = Fraction(one_correct_chose_cot, one_correct_judged)
        ratio_pal = 1 - ratio_cot

    usd = None
    if model_id is not None and prices is not None:
        usd = estimate_cost(usages, model_id, prices)
    cost = CostSummary(
        total_tokens=sum(u.total_tokens for u in usages),
        generated_tokens=sum(u.completion_tokens for u in usages),
        usd=usd,
    )

    return AnalysisReport(
        n_questions=n,
        k_samples=k,
        mode="greedy" if greedy else "self-consistency",
        acc_cot=acc_cot,
        acc_pal=acc_pal,
        acc_ours=acc_ours,
        acc_upper_bound=acc_upper,
        improvement=acc_ours - base,
        delta_upper_bound=acc_upper - base,
        success_rate=success_rate,
        ratio_cot=ratio_cot,
        ratio_pal=ratio_pal,
        fallback_rate=Fraction(n_fallbacks, n_selections) if n_selections else Fraction(0),
        counts=BucketCounts(**counts),
        correct_total=ours_right,
        selected_correct=selected_correct,
        one_sided_total=one_sided_total,
        one_sided_correct=one_sided_correct,
        n_selections=n_selections,
        n_fallbacks=n_fallbacks,
        cost=cost,
    )


def accounting_identity_check(report: AnalysisReport) -> bool:
    """Exact decomposition of the combined score for greedy transcripts:
    every correct final came through agreement, a correct selection, or a
    correctly resolved one-sided sample.  Fails on tampered finals.
    """
    if report.mode != "greedy":
        raise MixedModes("accounting identity is defined for greedy transcripts only")
    return report.correct_total == (
        report.counts.agree_correct + report.selected_correct + report.one_sided_correct
    )


CSV_FIELDS = ("id", "a_cot", "a_pal", "agree", "choice", "fallback", "correct")


def per_question_rows(records: list[RunRecord], questions: list[Question]) -> list[dict]:
    by_id = {q.question_id: q for q in questions}
    rows = []
    for record in records:
        question = by_id.get(record.question_id)
        if question is None:
            raise UnknownQuestion(record.question_id)
        a_cot = _method_answer(record, Method.COT)
        a_pal = _method_answer(record, Method.PAL)
        selection = record.selections[0] if record.selections else None
        rows.append(
            {
                "id": record.question_id,
                "a_cot": a_cot.render() if a_cot is not None else "",
                "a_pal": a_pal.render() if a_pal is not None else "",
                "agree": a_cot is not None and a_pal is not None and answers_equal(a_cot, a_pal),
                "choice": selection.chosen_method.value if selection else "",
                "fallback": selection.fallback_used if selection else False,
                "correct": _is_correct(record.final, question.gold),
            }
        )
    return rows


def write_csv(records: list[RunRecord], questions: list[Question], out: IO[str]) -> None:
    writer = csv.DictWriter(out, fieldnames=CSV_FIELDS)
    writer.writeheader()
    for row in per_question_rows(records, questions):
        writer.writerow(row)
