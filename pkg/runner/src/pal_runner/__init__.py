"""Single-shot harness for generated programs.

Invocation: ``pal-runner <source-file> --task-kind <arithmetic|date|other>``
(or ``python -m pal_runner ...``).  The harness executes the source in a fresh
namespace, calls its ``solution()`` with no arguments, and writes exactly one
JSON line to stdout:

    {"ok": true, "result": "<rendered value>"}
    {"ok": false, "error_kind": "exception", "error_detail": "..."}
    {"ok": false, "error_kind": "no_solution_fn"}

Anything the program itself prints is diverted to stderr so the protocol
channel stays clean.  Exit status: 0 once a protocol line was emitted (even
for reported failures), 2 when the source cannot be read, 3 on an internal
harness fault.

The namespace pre-binds ``datetime``, ``timedelta``, and ``relativedelta``,
the names calendar-style programs use without importing.  The task-kind flag
is part of the invocation contract but does not change execution: values are
rendered the same way regardless, and all interpretation happens host-side.
"""

from __future__ import annotations

import argparse
import builtins as _builtins
import contextlib
import datetime as _dt
import json
import sys
import traceback

from dateutil.relativedelta import relativedelta

__version__ = "0.1.0"
__all__ = ["main", "run_source", "render_value", "fresh_namespace"]

TASK_KINDS = ("arithmetic", "date", "other")

# Importable roots under --restricted: computation and calendar helpers only.
# This is an opt-in tripwire against filesystem/network-adjacent modules, not
# a security sandbox; isolation belongs to the OS layer around this process.
RESTRICTED_IMPORTS = frozenset(
    {
        "bisect",
        "calendar",
        "cmath",
        "collections",
        "copy",
        "datetime",
        "dateutil",
        "decimal",
        "fractions",
        "functools",
        "heapq",
        "itertools",
        "math",
        "numbers",
        "operator",
        "random",
        "re",
        "statistics",
        "string",
        "time",
    }
)


def render_value(value: object) -> str:
    """Render a solution() return value for the protocol line.

    Floats keep their shortest round-trip form (so 65960.0 stays "65960.0"
    and thirds keep all their digits); everything else renders via str().
    bool is checked first because it would otherwise fall into int rendering,
    which happens to agree, but being explicit costs nothing.
    """
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def fresh_namespace(restricted: bool = False) -> dict:
    """A new globals dict for one program, date helpers pre-bound.

    Builtins are copied per call so one program's mutations cannot leak into
    the next within the same process (relevant for in-process reuse in tests;
    the CLI runs one program per process anyway).
    """
    available = dict(vars(_builtins))
    if restricted:
        real_import = available["__import__"]

        def guarded_import(name, globals=None, locals=None, fromlist=(), level=0):
            root = name.partition(".")[0]
            if level == 0 and root not in RESTRICTED_IMPORTS:
                raise ImportError(f"import of {name!r} is disabled in restricted mode")
            return real_import(name, globals, locals, fromlist, level)

        available["__import__"] = guarded_import
    return {
        "__name__": "__pal_program__",
        "__builtins__": available,
        "datetime": _dt.datetime,
        "timedelta": _dt.timedelta,
        "relativedelta": relativedelta,
    }


def run_source(source: str, restricted: bool = False) -> dict:
    """Execute one program and build its protocol report."""
    namespace = fresh_namespace(restricted)
    try:
        with contextlib.redirect_stdout(sys.stderr):
            exec(compile(source, "<program>", "exec"), namespace)
            solution = namespace.get("solution")
            if not callable(solution):
                return {"ok": False, "error_kind": "no_solution_fn"}
            rendered = render_value(solution())
    except BaseException as exc:  # noqa: BLE001 - the program is untrusted
        return {"ok": False, "error_kind": "exception", "error_detail": repr(exc)}
    return {"ok": True, "result": rendered}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="pal-runner",
        description="Run one generated program and report a single JSON result line.",
    )
    parser.add_argument("source", help="path to the program source file")
    parser.add_argument(
        "--task-kind",
        required=True,
        choices=TASK_KINDS,
        help="what kind of answer the caller expects (informational)",
    )
    parser.add_argument(
        "--restricted",
        action="store_true",
        help="allow imports only from a small computation/calendar allowlist",
    )
    parser.add_argument("--version", action="version", version=__version__)
    args = parser.parse_args(argv)

    try:
        with open(args.source, encoding="utf-8") as fh:
            source = fh.read()
    except OSError as exc:
        print(f"cannot read source: {exc}", file=sys.stderr)
        return 2

    try:
        report = run_source(source, restricted=args.restricted)
        sys.stdout.write(json.dumps(report) + "\n")
        sys.stdout.flush()
    except Exception:
        traceback.print_exc()
        return 3
    return 0
