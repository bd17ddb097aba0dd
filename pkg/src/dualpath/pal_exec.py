"""Program extraction and sandboxed execution through an external runner.

Generated programs never execute in this process.  The host writes the program
to a temp file, invokes the configured runner command on it, and reads back a
single JSON protocol line.  The host side enforces exactly two things: a
wall-clock timeout (plus a short kill grace) and an output-size cap.  Every
other failure mode is whatever the runner reports.
"""

from __future__ import annotations

import json
import re
import subprocess
import tempfile
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .core import AnswerKind, CanonicalAnswer, TaskKind, canonical_date_text, normalize_number

OUTPUT_CAP_BYTES = 64 * 1024
KILL_GRACE_S = 0.5
DEFAULT_TIMEOUT_MS = 10_000

_FENCE = re.compile(r"```(?:python)?[ \t]*\n(.*?)```", re.DOTALL)
_DEF_SOLUTION = re.compile(r"^def solution\s*\(\s*\)\s*:", re.MULTILINE)


class FailureKind(str, Enum):
    TIMEOUT = "timeout"
    RUNNER_CRASH = "runner_crash"
    RUNTIME_EXCEPTION = "runtime_exception"
    NO_SOLUTION_FUNCTION = "no_solution_function"
    MALFORMED_OUTPUT = "malformed_output"


@dataclass(frozen=True)
class ProgramText:
    source: str


@dataclass(frozen=True)
class ExecutionOutcome:
    ok: bool
    value: str | None = None
    failure: FailureKind | None = None
    detail: str = ""

    def __post_init__(self) -> None:
        if self.ok and (self.value is None or self.value == ""):
            raise ValueError("successful outcomes carry a nonempty rendered value")
        if not self.ok and self.failure is None:
            raise ValueError("failed outcomes carry a failure kind")

    @staticmethod
    def success(value: str) -> "ExecutionOutcome":
        return ExecutionOutcome(ok=True, value=value)

    @staticmethod
    def failed(kind: FailureKind, detail: str = "") -> "ExecutionOutcome":
        return ExecutionOutcome(ok=False, failure=kind, detail=detail)


def extract_program(raw_text: str) -> ProgramText | None:
    """Find the program in a model completion.

    A fenced code block wins over everything around it.  Without a fence, the
    program is the region from the first top-level ``def solution():`` through
    the last line still indented under it.  Returns None when neither shape
    appears.
    """
    fence = _FENCE.search(raw_text)
    if fence is not None:
        body = fence.group(1).strip("\n")
        if _DEF_SOLUTION.search(body):
            return ProgramText(body)
    match = _DEF_SOLUTION.search(raw_text)
    if match is None:
        return None
    lines = raw_text[match.start() :].splitlines()
    kept = [lines[0]]
    for line in lines[1:]:
        if line.strip() == "" or line[:1] in (" ", "\t"):
            kept.append(line)
        else:
            break
    while kept and kept[-1].strip() == "":
        kept.pop()
    return ProgramText("\n".join(kept))


def rendered_to_answer(value: str, task_kind: TaskKind) -> CanonicalAnswer | None:
    """Interpret a runner-rendered value under the task kind."""
    if task_kind is TaskKind.DATE:
        date = canonical_date_text(value)
        if date is not None and date == value.strip():
            return CanonicalAnswer(AnswerKind.DATE, text=date)
        return None
    if task_kind is TaskKind.ARITHMETIC:
        number = normalize_number(value)
        return CanonicalAnswer(AnswerKind.NUMBER, number=number) if number is not None else None
    stripped = value.strip()
    return CanonicalAnswer.from_text(stripped) if stripped else None


def outcome_to_answer(outcome: ExecutionOutcome, task_kind: TaskKind) -> CanonicalAnswer | None:
    if not outcome.ok:
        return None
    assert outcome.value is not None
    return rendered_to_answer(outcome.value, task_kind)


_PROTOCOL_KEYS = {"ok", "result", "error_kind", "error_detail"}
_ERROR_KIND_MAP = {
    "exception": FailureKind.RUNTIME_EXCEPTION,
    "no_solution_fn": FailureKind.NO_SOLUTION_FUNCTION,
}


class ProgramExecutor:
    """Runs programs through the runner CLI: ``runner <file> --task-kind <kind>``.

    ``runner_cmd`` is the command prefix; the source path and task-kind flag
    are appended per call.  Calls are independent and may run concurrently up
    to ``max_procs`` at a time.
    """

    def __init__(
        self,
        runner_cmd: tuple[str, ...] | list[str],
        timeout_ms: int = DEFAULT_TIMEOUT_MS,
        max_procs: int | None = None,
    ):
        if not runner_cmd:
            raise ValueError("runner_cmd must be nonempty")
        if timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")
        self.runner_cmd = tuple(runner_cmd)
        self.timeout_ms = timeout_ms
        self._gate = threading.Semaphore(max_procs) if max_procs else None

    def execute(
        self, program: ProgramText, task_kind: TaskKind, timeout_ms: int | None = None
    ) -> ExecutionOutcome:
        timeout = (timeout_ms if timeout_ms is not None else self.timeout_ms) / 1000.0
        if self._gate is not None:
            with self._gate:
                return self._execute(program, task_kind, timeout)
        return self._execute(program, task_kind, timeout)

    def _execute(self, program: ProgramText, task_kind: TaskKind, timeout_s: float) -> ExecutionOutcome:
        with tempfile.TemporaryDirectory(prefix="dualpath-exec-") as workdir:
            source_path = Path(workdir) / "program.py"
            source_path.write_text(program.source + "\n", encoding="utf-8")
            argv = [*self.runner_cmd, str(source_path), "--task-kind", task_kind.value]
            try:
                proc = subprocess.Popen(
                    argv, stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True
                )
            except OSError as exc:
                return ExecutionOutcome.failed(FailureKind.RUNNER_CRASH, f"spawn failed: {exc}")
            try:
                stdout, stderr = proc.communicate(timeout=timeout_s)
            except subprocess.TimeoutExpired:
                proc.kill()
                try:
                    proc.communicate(timeout=KILL_GRACE_S)
                except subprocess.TimeoutExpired:
                    pass
                return ExecutionOutcome.failed(
                    FailureKind.TIMEOUT, f"no result within {timeout_s * 1000:.0f}ms"
                )
        return self._classify(proc.returncode, stdout, stderr)

    @staticmethod
    def _classify(returncode: int, stdout: str, stderr: str) -> ExecutionOutcome:
        if len(stdout.encode("utf-8", "replace")) > OUTPUT_CAP_BYTES:
            return ExecutionOutcome.failed(
                FailureKind.MALFORMED_OUTPUT,
                f"runner stdout exceeded {OUTPUT_CAP_BYTES} bytes",
            )
        if returncode != 0:
            tail = stderr.strip().splitlines()[-5:]
            return ExecutionOutcome.failed(
                FailureKind.RUNNER_CRASH,
                f"runner exited {returncode}: " + " | ".join(tail),
            )
        lines = [line for line in stdout.splitlines() if line.strip()]
        if len(lines) != 1:
            return ExecutionOutcome.failed(
                FailureKind.MALFORMED_OUTPUT,
                f"expected exactly one protocol line, got {len(lines)}",
            )
        try:
            report = json.loads(lines[0])
        except json.JSONDecodeError as exc:
            return ExecutionOutcome.failed(FailureKind.MALFORMED_OUTPUT, f"bad JSON: {exc}")
        if not isinstance(report, dict) or "ok" not in report or not set(report) <= _PROTOCOL_KEYS:
            return ExecutionOutcome.failed(
                FailureKind.MALFORMED_OUTPUT, f"unexpected protocol shape: {lines[0][:200]}"
            )
        if report["ok"] is True:
            value = report.get("result")
            if not isinstance(value, str) or not value:
                return ExecutionOutcome.failed(
                    FailureKind.MALFORMED_OUTPUT, "ok report without a rendered result"
                )
            return ExecutionOutcome.success(value)
        if report["ok"] is False:
            kind = _ERROR_KIND_MAP.get(report.get("error_kind", ""))
            detail = str(report.get("error_detail", ""))
            if kind is None:
                return ExecutionOutcome.failed(
                    FailureKind.MALFORMED_OUTPUT,
                    f"unknown error_kind: {report.get('error_kind')!r}",
                )
            return ExecutionOutcome.failed(kind, detail)
        return ExecutionOutcome.failed(FailureKind.MALFORMED_OUTPUT, "ok field must be a boolean")
