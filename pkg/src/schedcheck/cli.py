"""Batch front-end: parse a configuration, run explore/walk/replay, and emit
human-readable traces or a machine-readable JSON report.

Exit codes: 0 no violation and complete; 1 violation(s) found; 2 usage or
configuration error; 3 bounded-incomplete without a violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor

from . import __version__
from .explorer import (
    ExplorationReport,
    Limits,
    ReplayError,
    ScheduleStep,
    Trace,
    VirtualProcess,
    explore,
    random_walk,
    replay,
)
from .model import ConfigurationError, KernelConfig, TaskKind

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_USAGE = 2
EXIT_INCOMPLETE = 3

_FAULT_FLAGS = {
    "enqueue-before-state": "fault_enqueue_before_state",
    "skip-resume-state": "fault_skip_resume_state",
    "skip-running-check": "fault_skip_running_check",
}


def parse_task_plan(text: str) -> tuple[TaskKind, ...]:
    plan = []
    for part in text.split(","):
        part = part.strip().upper()
        if part == "H":
            plan.append(TaskKind.HEAVY)
        elif part == "L":
            plan.append(TaskKind.LIGHT)
        else:
            raise ConfigurationError(f"bad task kind {part!r} (expected H or L)")
    return tuple(plan)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="schedcheck",
        description="Check a preemptive async-task scheduler model by "
        "exhaustive interleaving exploration or seeded random walks.",
    )
    p.add_argument("--workers", type=int, default=None, help="worker core count (default 2)")
    p.add_argument("--tasks", default=None, help="task plan, e.g. H,L,L (default)")
    p.add_argument("--fix-wait", choices=["on", "off"], default=None,
                   help="need_sched fix for the wake/wait race (default on)")
    p.add_argument("--fix-preempt", choices=["on", "off"], default=None,
                   help="need_sched-before-IPI fix for preemption (default on)")
    p.add_argument("--fault", action="append", default=[], metavar="NAME",
                   choices=sorted(_FAULT_FLAGS),
                   help="enable a fault toggle (repeatable): " + ", ".join(sorted(_FAULT_FLAGS)))
    p.add_argument("--max-waits", type=int, default=None, help="waits per heavy task (default 1)")
    p.add_argument("--max-preemptions", type=int, default=None,
                   help="preemptions per heavy task (default 1)")
    p.add_argument("--mode", choices=["explore", "walk", "replay"], default="explore")
    p.add_argument("--seed", type=int, default=None, help="random-walk seed (walk mode)")
    p.add_argument("--max-steps", type=int, default=100_000, help="walk step budget")
    p.add_argument("--max-states", type=int, default=None, help="explore state budget")
    p.add_argument("--max-depth", type=int, default=None, help="explore depth budget")
    p.add_argument("--max-violations", type=int, default=16,
                   help="stop after collecting this many violations")
    p.add_argument("--trace-in", default=None, metavar="FILE",
                   help="JSON report whose violations to replay (replay mode)")
    p.add_argument("--out", choices=["text", "json"], default="text")
    p.add_argument("--quiet", action="store_true", help="suppress per-step trace lines")
    p.add_argument("--sweep", default=None, metavar="FILE",
                   help="file with one task plan per line; explore each in its own process")
    return p


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.mode == "walk" and args.seed is None:
        parser.error("--mode walk requires --seed")
    if args.mode == "replay" and args.trace_in is None:
        parser.error("--mode replay requires --trace-in")
    return args


def config_from_args(args: argparse.Namespace, base: dict | None = None) -> KernelConfig:
    """Build the kernel config; explicit flags override `base` (an embedded
    config echo from a trace file), which overrides the defaults."""
    base = dict(base or {})

    def pick(flag_value, key, default):
        if flag_value is not None:
            return flag_value
        return base.get(key, default)

    fix_wait = args.fix_wait == "on" if args.fix_wait is not None else bool(base.get("fix_wait", True))
    fix_preempt = (
        args.fix_preempt == "on" if args.fix_preempt is not None else bool(base.get("fix_preempt", True))
    )
    faults = set(args.fault) if args.fault else set(base.get("faults", []))
    plan_text = pick(args.tasks, "tasks", "H,L,L")
    return KernelConfig(
        worker_count=pick(args.workers, "workers", 2),
        task_plan=parse_task_plan(plan_text),
        fix_wait_need_sched=fix_wait,
        fix_preempt_need_sched=fix_preempt,
        fault_enqueue_before_state="enqueue-before-state" in faults,
        fault_skip_resume_state="skip-resume-state" in faults,
        fault_skip_running_check="skip-running-check" in faults,
        max_waits_per_task=pick(args.max_waits, "max_waits", 1),
        max_preemptions_per_task=pick(args.max_preemptions, "max_preemptions", 1),
    )


def usage_error(message: str) -> SystemExit:
    print(f"schedcheck: error: {message}", file=sys.stderr)
    return SystemExit(EXIT_USAGE)


# -- document (de)serialization --------------------------------------


def config_to_dict(config: KernelConfig) -> dict:
    faults = [
        name for name, attr in sorted(_FAULT_FLAGS.items()) if getattr(config, attr)
    ]
    return {
        "workers": config.worker_count,
        "tasks": ",".join(k.value for k in config.task_plan),
        "fix_wait": config.fix_wait_need_sched,
        "fix_preempt": config.fix_preempt_need_sched,
        "faults": faults,
        "max_waits": config.max_waits_per_task,
        "max_preemptions": config.max_preemptions_per_task,
    }


def config_from_dict(doc: dict) -> KernelConfig:
    faults = set(doc.get("faults", []))
    return KernelConfig(
        worker_count=doc["workers"],
        task_plan=parse_task_plan(doc["tasks"]),
        fix_wait_need_sched=bool(doc["fix_wait"]),
        fix_preempt_need_sched=bool(doc["fix_preempt"]),
        fault_enqueue_before_state="enqueue-before-state" in faults,
        fault_skip_resume_state="skip-resume-state" in faults,
        fault_skip_running_check="skip-running-check" in faults,
        max_waits_per_task=doc["max_waits"],
        max_preemptions_per_task=doc["max_preemptions"],
    )


def step_to_dict(step: ScheduleStep) -> dict:
    return {
        "process": step.process.kind,
        "core": step.process.core,
        "variant": step.variant,
    }


def step_from_dict(doc: dict) -> ScheduleStep:
    return ScheduleStep(VirtualProcess(doc["process"], doc["core"]), doc["variant"])


def trace_to_dict(trace: Trace) -> dict:
    err = trace.monitor_error
    return {
        "verdict": trace.verdict,
        "steps": [step_to_dict(s) for s in trace.steps],
        "lines": trace.lines(),
        "monitor_error": None if err is None else {
            "task": err.task,
            "current_state": str(err.current_state),
            "symbol": str(err.symbol),
        },
        "final_task_states": {str(tid): st for tid, st in trace.final_task_states},
        "final_queue": list(trace.final_queue),
        "detail": trace.detail,
    }


def report_to_doc(report: ExplorationReport, mode: str, seed: int | None = None) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "tool": {"name": "schedcheck", "version": __version__},
        "mode": mode,
        "seed": seed,
        "config": config_to_dict(report.config),
        "counters": {
            "states_visited": report.states_visited,
            "transitions_taken": report.transitions_taken,
            "max_depth": report.max_depth,
            "quiescent_ok": report.quiescent_ok,
        },
        "incomplete": report.incomplete,
        "all_paths_terminal_ok": report.all_paths_terminal_ok,
        "violations": [trace_to_dict(t) for t in report.violations],
    }


def emit_json(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def exit_code_for(doc: dict) -> int:
    """Exit code as a pure function of the report document."""
    if doc["violations"]:
        return EXIT_VIOLATION
    if doc["incomplete"]:
        return EXIT_INCOMPLETE
    return EXIT_OK


# -- rendering --------------------------------------------------------


def render_text(doc: dict, quiet: bool) -> str:
    lines: list[str] = []
    cfg = doc["config"]
    faults = ",".join(cfg["faults"]) or "none"
    lines.append(
        f"schedcheck {doc['tool']['version']} mode={doc['mode']} "
        f"workers={cfg['workers']} tasks={cfg['tasks']} "
        f"fix_wait={'on' if cfg['fix_wait'] else 'off'} "
        f"fix_preempt={'on' if cfg['fix_preempt'] else 'off'} "
        f"faults={faults} max_waits={cfg['max_waits']} "
        f"max_preemptions={cfg['max_preemptions']}"
    )
    for i, v in enumerate(doc["violations"]):
        lines.append(f"violation {i + 1}: {v['verdict']}")
        if not quiet:
            lines.extend("  " + ln for ln in v["lines"])
        if v["monitor_error"] is not None:
            err = v["monitor_error"]
            lines.append(f"  error: invalid transition for task {err['task']}")
            lines.append(f"    current state: {err['current_state']}")
            lines.append(f"    symbol: {err['symbol']}")
        if v["detail"]:
            lines.append(f"  detail: {v['detail']}")
        states = ", ".join(f"task {t}={s}" for t, s in sorted(v["final_task_states"].items()))
        lines.append(f"  final states: {states}; queue={v['final_queue']}")
    c = doc["counters"]
    lines.append(
        f"states={c['states_visited']} transitions={c['transitions_taken']} "
        f"max_depth={c['max_depth']} quiescent_ok={c['quiescent_ok']} "
        f"violations={len(doc['violations'])} "
        f"{'INCOMPLETE' if doc['incomplete'] else 'complete'}"
    )
    verdict = "ok" if not doc["violations"] else "violations found"
    if doc["incomplete"] and not doc["violations"]:
        verdict = "bounded-incomplete"
    lines.append(f"result: {verdict}")
    return "\n".join(lines) + "\n"


# -- modes ------------------------------------------------------------


def _run_explore(config: KernelConfig, args: argparse.Namespace) -> dict:
    limits = Limits(
        max_states=args.max_states,
        max_depth=args.max_depth,
        max_violations=args.max_violations,
    )
    report = explore(config, limits, verify_invariants=True)
    return report_to_doc(report, "explore")


def _run_walk(config: KernelConfig, args: argparse.Namespace) -> dict:
    report = random_walk(config, args.seed, args.max_steps, verify_invariants=True)
    return report_to_doc(report, "walk", seed=args.seed)


def _run_replay(args: argparse.Namespace) -> tuple[dict, int]:
    try:
        with open(args.trace_in, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise usage_error(f"cannot read trace file: {exc}")
    config = config_from_args(args, base=doc.get("config"))
    results = []
    worst = EXIT_OK
    for v in doc.get("violations", []):
        steps = tuple(step_from_dict(s) for s in v["steps"])
        try:
            result = replay(config, steps, verify_invariants=True)
        except ReplayError as exc:
            results.append({"expected": v["verdict"], "reproduced": None,
                            "match": False, "error": str(exc)})
            worst = EXIT_USAGE
            continue
        match = result.verdict == v["verdict"]
        results.append({
            "expected": v["verdict"],
            "reproduced": result.verdict,
            "match": match,
            "error": None,
        })
        if result.verdict is not None:
            worst = max(worst, EXIT_VIOLATION)
        if not match:
            worst = EXIT_USAGE
    out = {
        "schema": SCHEMA_VERSION,
        "tool": {"name": "schedcheck", "version": __version__},
        "mode": "replay",
        "config": config_to_dict(config),
        "replays": results,
    }
    return out, worst


def _render_replay_text(doc: dict) -> str:
    lines = [f"schedcheck {doc['tool']['version']} mode=replay"]
    for i, r in enumerate(doc["replays"]):
        status = "MATCH" if r["match"] else "MISMATCH"
        lines.append(
            f"replay {i + 1}: expected={r['expected']} "
            f"reproduced={r['reproduced']} {status}"
            + (f" ({r['error']})" if r["error"] else "")
        )
    if not doc["replays"]:
        lines.append("nothing to replay")
    return "\n".join(lines) + "\n"


def _sweep_worker(payload: tuple[dict, dict]) -> dict:
    cfg_doc, limit_doc = payload
    config = config_from_dict(cfg_doc)
    limits = Limits(**limit_doc)
    report = explore(config, limits, verify_invariants=True)
    return report_to_doc(report, "explore")


def _run_sweep(args: argparse.Namespace) -> int:
    try:
        with open(args.sweep, "r", encoding="utf-8") as fh:
            plans = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    except OSError as exc:
        raise usage_error(f"cannot read sweep file: {exc}")
    if not plans:
        raise usage_error("sweep file lists no task plans")
    payloads = []
    for plan in plans:
        args_copy = argparse.Namespace(**vars(args))
        args_copy.tasks = plan
        config = config_from_args(args_copy)
        payloads.append((
            config_to_dict(config),
            {"max_states": args.max_states, "max_depth": args.max_depth,
             "max_violations": args.max_violations},
        ))
    worst = EXIT_OK
    with ProcessPoolExecutor() as pool:
        for plan, doc in zip(plans, pool.map(_sweep_worker, payloads)):
            code = exit_code_for(doc)
            worst = max(worst, code)
            c = doc["counters"]
            print(
                f"plan {plan}: states={c['states_visited']} "
                f"violations={len(doc['violations'])} "
                f"{'INCOMPLETE' if doc['incomplete'] else 'complete'} exit={code}"
            )
    return worst


def main(argv: list[str] | None = None) -> int:
    try:
        args = parse_args(argv if argv is not None else sys.argv[1:])
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0

    try:
        if args.sweep is not None:
            return _run_sweep(args)
        if args.mode == "replay":
            doc, code = _run_replay(args)
            if args.out == "json":
                sys.stdout.write(emit_json(doc))
            else:
                sys.stdout.write(_render_replay_text(doc))
            return code
        config = config_from_args(args)
        doc = _run_explore(config, args) if args.mode == "explore" else _run_walk(config, args)
        if args.out == "json":
            sys.stdout.write(emit_json(doc))
        else:
            sys.stdout.write(render_text(doc, args.quiet))
        return exit_code_for(doc)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except (ValueError, OSError) as exc:
        # covers ConfigurationError and bad limit values too
        print(f"schedcheck: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
