"""Command line: run experiments, report on transcripts, sweep the theory,
and exec single programs.

Transcripts are append-only JSONL: line 1 is a manifest snapshot of the
resolved configuration, then one record object per completed question.
Reruns against the same file resume, skipping question ids that already have
a record.  Under the replay backend no timestamps are written, so a rerun of
the same configuration produces byte-identical output.
"""

from __future__ import annotations

import argparse
import itertools
import json
import shlex
import sys
from concurrent.futures import ThreadPoolExecutor, as_completed
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path

from . import __version__
from .core import OptionOrder, Question, RunRecord, TaskKind
from .data import (
    DatasetFormat,
    DatasetSpec,
    EmptyDataset,
    OutOfRange,
    ParseError,
    load_questions,
    sample_subset,
)
from .llm import (
    CachingBackend,
    LiveBackend,
    LLMError,
    PriceTable,
    ReplayBackend,
    ReplayStore,
)
from .metrics import UnknownQuestion, accounting_identity_check, analyze, write_csv
from .pal_exec import ProgramExecutor, ProgramText
from .pipeline import Pipeline, PipelineConfig
from .prompts import PromptStyle, SelectionPromptConfig, TemplateStore
from .theory import (
    ConstructionInvalid,
    InvalidInstance,
    WeakSelectorParams,
    alpha_sweep,
    construct_weak_selector_instance,
    evaluate_params,
    feasible_base_level,
    monte_carlo,
    write_sweep_csv,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATASET = 2
EXIT_BACKEND = 3


class ConfigError(Exception):
    pass


# -- configuration -----------------------------------------------------------------

# name -> (converter, default); converters take the raw string from a config file
_BOOL_WORDS = {"true": True, "1": True, "on": True, "false": False, "0": False, "off": False}


def _to_bool(raw: str) -> bool:
    try:
        return _BOOL_WORDS[raw.lower()]
    except KeyError:
        raise ValueError(f"not a boolean: {raw!r}") from None


def _choice(*allowed: str):
    def convert(raw: str) -> str:
        if raw not in allowed:
            raise ValueError(f"must be one of {', '.join(allowed)}; got {raw!r}")
        return raw

    return convert


RUN_SCHEMA: dict = {
    "dataset": (str, None),
    "format": (_choice("jsonl_qa", "jsonl_gsm_hash"), "jsonl_qa"),
    "task_kind": (_choice("arithmetic", "date"), "arithmetic"),
    "mode": (_choice("greedy", "sc"), "greedy"),
    "k": (int, 5),
    "order": (_choice("cot-first", "pal-first"), "cot-first"),
    "explanations": (_choice("on", "off"), "on"),
    "include_pal_answer": (_to_bool, False),
    "style": (_choice("completion", "chat"), "chat"),
    "shots": (int, None),
    "backend": (_choice("live", "replay"), "replay"),
    "jobs": (int, 1),
    "seed": (int, 0),
    "timeout_ms": (int, 10000),
    "max_tokens": (int, 1024),
    "model": (str, "gpt-3.5-turbo"),
    "endpoint": (str, "https://api.openai.com"),
    "replay_dir": (str, "recordings"),
    "runner_cmd": (str, f"{sys.executable} -m pal_runner"),
    "sample": (int, None),
    "out": (str, None),
}


def read_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise ConfigError(f"{path}:{line_no}: expected key = value")
        values[key.strip()] = value.strip().strip('"')
    return values


def resolve_run_config(args: argparse.Namespace) -> dict:
    """flag > config file > built-in default."""
    from_file: dict[str, str] = {}
    if args.config:
        from_file = read_config_file(args.config)
        unknown = set(from_file) - set(RUN_SCHEMA)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")

    resolved: dict = {}
    for key, (convert, default) in RUN_SCHEMA.items():
        flag_value = getattr(args, key)
        if flag_value is not None:
            resolved[key] = flag_value
        elif key in from_file:
            try:
                resolved[key] = convert(from_file[key])
            except ValueError as exc:
                raise ConfigError(f"config key {key}: {exc}") from None
        else:
            resolved[key] = default
    for key in ("dataset", "out"):
        if resolved[key] is None:
            raise ConfigError(f"missing required setting: {key}")
    if resolved["mode"] == "sc" and resolved["k"] < 1:
        raise ConfigError("k must be at least 1")
    return resolved


# -- transcript persistence -----------------------------------------------------------


def _dump(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def read_transcript(path: Path) -> tuple[dict, list[RunRecord]]:
    """Manifest plus all complete record lines; a torn final line is ignored."""
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ValueError("empty transcript")
    docs = []
    for i, line in enumerate(lines):
        try:
            docs.append(json.loads(line))
        except json.JSONDecodeError:
            if i == len(lines) - 1:
                break  # crashed mid-write; everything above is intact
            raise ValueError(f"corrupt transcript line {i + 1}")
    manifest = docs[0]
    if not isinstance(manifest, dict) or manifest.get("kind") != "manifest":
        raise ValueError("transcript does not start with a manifest line")
    records = [RunRecord.from_dict(doc) for doc in docs[1:] if doc.get("kind") == "record"]
    return manifest, records


def _manifest_doc(config: dict, timestamps: bool) -> dict:
    doc = {
        "kind": "manifest",
        "version": __version__,
        "config": {k: v for k, v in config.items()},
        "rng_seed": config["seed"],
    }
    if timestamps:
        doc["started_at"] = datetime.now(timezone.utc).isoformat()
    return doc


def _comparable(config: dict) -> dict:
    return {k: v for k, v in config.items() if k != "jobs"}


# -- cmd_run ---------------------------------------------------------------------------


def build_pipeline(config: dict) -> Pipeline:
    selection = SelectionPromptConfig(
        order=OptionOrder(config["order"]),
        with_explanation=config["explanations"] == "on",
        include_pal_answer=config["include_pal_answer"],
        n_shots=config["shots"],
        style=PromptStyle(config["style"]),
    )
    common = dict(
        selection_prompt=selection,
        rng_seed=config["seed"],
        max_tokens=config["max_tokens"],
    )
    if config["mode"] == "greedy":
        pipe_config = PipelineConfig.greedy(config["model"], **common)
    else:
        pipe_config = PipelineConfig.self_consistency(config["model"], config["k"], **common)

    store = ReplayStore(config["replay_dir"])
    if config["backend"] == "replay":
        backend = ReplayBackend(store)
    else:
        backend = CachingBackend(LiveBackend(config["endpoint"]), store)
    executor = ProgramExecutor(
        shlex.split(config["runner_cmd"]),
        timeout_ms=config["timeout_ms"],
        max_procs=config["jobs"],
    )
    return Pipeline(backend, TemplateStore.bundled(), executor, pipe_config)


def load_run_questions(config: dict) -> list[Question]:
    spec = DatasetSpec(
        path=Path(config["dataset"]),
        format=DatasetFormat(config["format"]),
        task_kind=TaskKind(config["task_kind"]),
    )
    questions = load_questions(spec)
    if config["sample"] is not None:
        questions = sample_subset(questions, config["sample"], config["seed"])
    return questions


def cmd_run(args: argparse.Namespace) -> int:
    try:
        config = resolve_run_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        questions = load_run_questions(config)
    except (ParseError, EmptyDataset, OutOfRange, OSError) as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return EXIT_DATASET

    out_path = Path(config["out"])
    completed: set[str] = set()
    write_manifest = True
    if out_path.exists() and out_path.stat().st_size > 0:
        try:
            manifest, records = read_transcript(out_path)
        except ValueError as exc:
            print(f"config error: cannot resume {out_path}: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        if _comparable(manifest["config"]) != _comparable(config):
            print(
                f"config error: {out_path} was produced with a different configuration",
                file=sys.stderr,
            )
            return EXIT_CONFIG
        completed = {record.question_id for record in records}
        write_manifest = False

    try:
        pipeline = build_pipeline(config)
    except (LLMError, ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    timestamps = config["backend"] == "live"
    pending = [q for q in questions if q.question_id not in completed]
    backend_failures = 0
    done = 0

    with out_path.open("a", encoding="utf-8") as out:
        if write_manifest:
            out.write(_dump(_manifest_doc(config, timestamps)) + "\n")
            out.flush()

        def emit(doc: dict) -> None:
            out.write(_dump(doc) + "\n")
            out.flush()

        def solve(question: Question):
            return pipeline.solve(question)

        if config["jobs"] <= 1:
            for question in pending:
                try:
                    record = solve(question)
                except LLMError as exc:
                    backend_failures += 1
                    emit({"kind": "error", "question_id": question.question_id, "error": str(exc)})
                    continue
                emit(record.to_dict())
                done += 1
        else:
            with ThreadPoolExecutor(max_workers=config["jobs"]) as pool:
                futures = {pool.submit(solve, q): q for q in pending}
                for future in as_completed(futures):
                    question = futures[future]
                    try:
                        record = future.result()
                    except LLMError as exc:
                        backend_failures += 1
                        emit(
                            {
                                "kind": "error",
                                "question_id": question.question_id,
                                "error": str(exc),
                            }
                        )
                        continue
                    emit(record.to_dict())
                    done += 1

        footer = {"kind": "run-end", "completed": done, "failed": backend_failures}
        if timestamps:
            footer["ended_at"] = datetime.now(timezone.utc).isoformat()
        emit(footer)

    print(
        f"{done} solved, {backend_failures} failed, {len(completed)} already done",
        file=sys.stderr,
    )
    return EXIT_BACKEND if backend_failures else EXIT_OK


# -- cmd_report -------------------------------------------------------------------------


def cmd_report(args: argparse.Namespace) -> int:
    path = Path(args.transcript)
    try:
        manifest, records = read_transcript(path)
    except (OSError, ValueError) as exc:
        print(f"transcript error: {exc}", file=sys.stderr)
        return EXIT_DATASET
    if not records:
        print("no records")
        return EXIT_OK

    config = manifest.get("config", {})
    dataset = args.dataset or config.get("dataset")
    if dataset is None:
        print("transcript error: no dataset in manifest; pass --dataset", file=sys.stderr)
        return EXIT_DATASET
    spec = DatasetSpec(
        path=Path(dataset),
        format=DatasetFormat(args.format or config.get("format", "jsonl_qa")),
        task_kind=TaskKind(args.task_kind or config.get("task_kind", "arithmetic")),
    )
    try:
        questions = load_questions(spec)
    except (ParseError, EmptyDataset, OSError) as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return EXIT_DATASET

    model_id = args.model or config.get("model")
    prices = PriceTable.from_file(args.prices) if args.prices else PriceTable.bundled_sample()
    if model_id not in prices.prices:
        model_id = prices = None

    try:
        report = analyze(records, questions, model_id=model_id, prices=prices)
    except (UnknownQuestion, ValueError) as exc:
        print(f"transcript error: {exc}", file=sys.stderr)
        return EXIT_DATASET

    if args.json:
        print(json.dumps(report.to_json_dict(), indent=2, sort_keys=True))
    else:
        print(report.render_text())
        if report.mode == "greedy":
            ok = accounting_identity_check(report)
            print(f"accounting identity   {'ok' if ok else 'FAILED'}")
    if args.csv:
        with Path(args.csv).open("w", encoding="utf-8", newline="") as fh:
            write_csv(records, questions, fh)
    return EXIT_OK


# -- cmd_simulate -----------------------------------------------------------------------


def _fraction_list(raw: str, name: str) -> list[Fraction]:
    try:
        return [Fraction(part) for part in raw.split(",")]
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"{name}: expected comma-separated rationals, got {raw!r}") from None


def _int_list(raw: str, name: str) -> list[int]:
    try:
        return [int(part) for part in raw.split(",")]
    except ValueError:
        raise ConfigError(f"{name}: expected comma-separated integers, got {raw!r}") from None


SIM_COLUMNS = (
    "n", "T", "alpha", "epsilon", "delta", "lambda", "base_level",
    "rho", "err", "err1", "err2", "improves",
)


def cmd_simulate(args: argparse.Namespace) -> int:
    out = sys.stdout
    opened = None
    if args.out:
        opened = out = Path(args.out).open("w", encoding="utf-8", newline="")
    try:
        if args.sweep_alpha:
            write_sweep_csv(alpha_sweep(args.sweep_alpha, tail=args.tail), out)
            return EXIT_OK

        import csv as _csv

        writer = _csv.writer(out)
        header = list(SIM_COLUMNS)
        if args.mc_trials:
            header += ["mc_err", "mc_err_stderr", "mc_rho", "mc_rho_stderr", "mc_within"]
        writer.writerow(header)

        grid = itertools.product(
            _int_list(args.n, "--n"),
            _int_list(args.T, "--T"),
            _fraction_list(args.eps, "--eps"),
            _fraction_list(args.delta, "--delta"),
            _fraction_list(args.lam, "--lam"),
        )
        for n, T, eps, delta, lam in grid:
            if args.base_level == "auto":
                base_level = feasible_base_level(n, T, eps)
            else:
                base_level = _fraction_list(args.base_level, "--base-level")[0]
            params = WeakSelectorParams(
                n=n, T=T, epsilon=eps, delta=delta, lam=lam, base_level=base_level
            )
            point = evaluate_params(params)
            row = [
                n, T,
                format(float(params.alpha), ".12g"),
                format(float(eps), ".12g"),
                format(float(delta), ".12g"),
                format(float(lam), ".12g"),
                format(float(base_level), ".12g"),
                format(float(point.rho), ".12g"),
                format(float(point.err), ".12g"),
                format(float(point.err1), ".12g"),
                format(float(point.err2), ".12g"),
                point.err < min(point.err1, point.err2),
            ]
            if args.mc_trials:
                instance = construct_weak_selector_instance(params)
                mc = monte_carlo(instance, args.mc_trials, seed=args.seed, shards=args.shards)
                within = abs(mc.err_hat - float(point.err)) <= 4 * mc.err_stderr and abs(
                    mc.rho_hat - float(point.rho)
                ) <= 4 * mc.rho_stderr
                row += [
                    format(mc.err_hat, ".12g"),
                    format(mc.err_stderr, ".12g"),
                    format(mc.rho_hat, ".12g"),
                    format(mc.rho_stderr, ".12g"),
                    within,
                ]
            writer.writerow(row)
        return EXIT_OK
    except (ConstructionInvalid, InvalidInstance, ConfigError, ValueError) as exc:
        print(f"simulate error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    finally:
        if opened:
            opened.close()


# -- cmd_exec ----------------------------------------------------------------------------


def _camel(kind_value: str) -> str:
    return "".join(part.title() for part in kind_value.split("_"))


def cmd_exec(args: argparse.Namespace) -> int:
    path = Path(args.program)
    try:
        source = path.read_text(encoding="utf-8")
    except OSError as exc:
        print(f"cannot read {path}: {exc}", file=sys.stderr)
        return EXIT_DATASET
    executor = ProgramExecutor(shlex.split(args.runner_cmd), timeout_ms=args.timeout_ms)
    outcome = executor.execute(ProgramText(source), TaskKind(args.task_kind))
    if outcome.ok:
        print(f"Ok: {outcome.value}")
        return EXIT_OK
    detail = f" ({outcome.detail})" if outcome.detail else ""
    print(f"Failed: {_camel(outcome.failure.value)}{detail}")
    return EXIT_CONFIG


# -- argument parsing ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualpath",
        description="Dual-path reasoning runs, transcript reports, and theory sweeps.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="solve a dataset and write a transcript")
    run.add_argument("--config", help="key = value file; flags override it")
    run.add_argument("--dataset")
    run.add_argument("--format", choices=["jsonl_qa", "jsonl_gsm_hash"])
    run.add_argument("--task-kind", dest="task_kind", choices=["arithmetic", "date"])
    run.add_argument("--mode", choices=["greedy", "sc"])
    run.add_argument("--k", type=int)
    run.add_argument("--order", choices=["cot-first", "pal-first"])
    run.add_argument("--explanations", choices=["on", "off"])
    run.add_argument(
        "--include-pal-answer", dest="include_pal_answer", action="store_const", const=True
    )
    run.add_argument("--style", choices=["completion", "chat"])
    run.add_argument("--shots", type=int)
    run.add_argument("--backend", choices=["live", "replay"])
    run.add_argument("--jobs", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--timeout-ms", dest="timeout_ms", type=int)
    run.add_argument("--max-tokens", dest="max_tokens", type=int)
    run.add_argument("--model")
    run.add_argument("--endpoint")
    run.add_argument("--replay-dir", dest="replay_dir")
    run.add_argument("--runner-cmd", dest="runner_cmd")
    run.add_argument("--sample", type=int)
    run.add_argument("--out")
    run.set_defaults(func=cmd_run)

    report = sub.add_parser("report", help="analyze a transcript")
    report.add_argument("transcript")
    report.add_argument("--dataset")
    report.add_argument("--format", choices=["jsonl_qa", "jsonl_gsm_hash"])
    report.add_argument("--task-kind", dest="task_kind", choices=["arithmetic", "date"])
    report.add_argument("--model")
    report.add_argument("--prices")
    report.add_argument("--json", action="store_true")
    report.add_argument("--csv")
    report.set_defaults(func=cmd_report)

    simulate = sub.add_parser("simulate", help="evaluate the weak-selector construction")
    simulate.add_argument("--n", default="100")
    simulate.add_argument("--T", default="90")
    simulate.add_argument("--eps", default="1/10")
    simulate.add_argument("--delta", default="9/10")
    simulate.add_argument("--lam", default="1/10")
    simulate.add_argument("--base-level", dest="base_level", default="auto")
    simulate.add_argument("--mc-trials", dest="mc_trials", type=int)
    simulate.add_argument("--shards", type=int, default=1)
    simulate.add_argument("--seed", type=int, default=0)
    simulate.add_argument("--sweep-alpha", dest="sweep_alpha", type=int)
    simulate.add_argument("--tail", type=int, default=10)
    simulate.add_argument("--out")
    simulate.set_defaults(func=cmd_simulate)

    ex = sub.add_parser("exec", help="run one program through the executor")
    ex.add_argument("program")
    ex.add_argument("--task-kind", dest="task_kind", choices=["arithmetic", "date"],
                    default="arithmetic")
    ex.add_argument("--timeout-ms", dest="timeout_ms", type=int, default=10000)
    ex.add_argument("--runner-cmd", dest="runner_cmd",
                    default=f"{sys.executable} -m pal_runner")
    ex.set_defaults(func=cmd_exec)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
