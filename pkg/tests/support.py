"""Shared test doubles for the solve loop and CLI tests."""

import ast
import textwrap

from dualpath.llm import TokenUsage
from dualpath.pal_exec import ExecutionOutcome, FailureKind


class RoutingBackend:
    """Answers by prompt shape: program prompts end with the code cue, selection
    prompts ask which choice is right, everything else is a chain prompt.
    Scripts are strings or callables taking the request."""

    def __init__(self, cot, pal, select=None):
        self.scripts = {"cot": cot, "pal": pal, "select": select}
        self.requests = []

    def generate(self, request):
        body = request.messages[-1][1]
        if body.rstrip().endswith("# solution in Python:"):
            kind = "pal"
        elif "Which of the" in body:
            kind = "select"
        else:
            kind = "cot"
        self.requests.append((kind, request))
        script = self.scripts[kind]
        if script is None:
            raise AssertionError(f"unexpected {kind} call")
        text = script(request) if callable(script) else script
        return text, TokenUsage(prompt_tokens=10, completion_tokens=5)

    def kinds(self):
        return [kind for kind, _ in self.requests]


def render_value(value):
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


class FakeExecutor:
    """Evaluates the literal after ``return`` instead of spawning a runner."""

    def __init__(self):
        self.calls = []

    def execute(self, program, task_kind, timeout_ms=None):
        self.calls.append(program.source)
        for line in program.source.splitlines():
            stripped = line.strip()
            if stripped.startswith("return "):
                value = ast.literal_eval(stripped[len("return "):])
                return ExecutionOutcome.success(render_value(value))
        return ExecutionOutcome.failed(FailureKind.RUNTIME_EXCEPTION, "no return reached")


class InProcessExecutor:
    """Runs programs with exec() in this process; same namespace seeding and
    rendering as the real runner, minus the sandboxing.  For fixture synthesis
    where spawning a subprocess per program would be needless drag."""

    def __init__(self):
        self.calls = []

    def execute(self, program, task_kind, timeout_ms=None):
        import datetime as _dt

        from dateutil.relativedelta import relativedelta

        self.calls.append(program.source)
        namespace = {
            "datetime": _dt.datetime,
            "timedelta": _dt.timedelta,
            "relativedelta": relativedelta,
        }
        try:
            exec(program.source, namespace)
            fn = namespace.get("solution")
            if not callable(fn):
                return ExecutionOutcome.failed(FailureKind.NO_SOLUTION_FUNCTION, "no solution()")
            value = fn()
        except Exception as exc:
            return ExecutionOutcome.failed(FailureKind.RUNTIME_EXCEPTION, repr(exc))
        return ExecutionOutcome.success(render_value(value))


# A minimal real runner for subprocess tests: execs the program file and speaks
# the one-line JSON protocol.  Ignores --task-kind; namespace seeding and
# rendering match the production contract (bool -> str, float -> repr, else str).
RUNNER_SRC = textwrap.dedent(
    """
    import datetime
    import json
    import sys

    namespace = {"datetime": datetime.datetime, "timedelta": datetime.timedelta}
    try:
        from dateutil.relativedelta import relativedelta
        namespace["relativedelta"] = relativedelta
    except ImportError:
        pass

    try:
        exec(open(sys.argv[1]).read(), namespace)
        value = namespace["solution"]()
    except Exception as exc:
        print(json.dumps({"ok": False, "error_kind": "exception", "error_detail": str(exc)}))
    else:
        if isinstance(value, bool):
            rendered = str(value)
        elif isinstance(value, float):
            rendered = repr(value)
        else:
            rendered = str(value)
        print(json.dumps({"ok": True, "result": rendered}))
    """
).strip()


def write_runner(tmp_path) -> str:
    """Drop the stub runner script into tmp_path; returns a runner_cmd string."""
    import sys

    script = tmp_path / "stub_runner.py"
    script.write_text(RUNNER_SRC + "\n", encoding="utf-8")
    return f"{sys.executable} {script}"
