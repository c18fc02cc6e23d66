"""Exhaustive interleaving exploration over kernel-model steps.

A fixed set of virtual processes (the primary core's timer and
preempter, a spawner, and one worker per core) each contribute guarded
atomic steps. `explore` runs a depth-first search with visited-state
pruning over full canonical encodings, recording monitor violations,
deadlocks, and invariant failures as replayable counterexample traces.
`random_walk` samples one seeded schedule, standing in for live runtime
verification; `replay` re-executes a recorded trace and reproduces its
verdict.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .model import (
    CtxState,
    FetchOutcome,
    KernelConfig,
    KernelState,
    Role,
    TaskKind,
    TaskState,
    TERMINAL_STATES,
    UsageError,
    initial_state,
    snapshot,
)
from .monitor import MonitorViolation

PROCESS_KINDS = ("PrimaryTimer", "PrimaryPreempter", "Spawner", "Worker")

VERDICT_MONITOR = "MonitorViolation"
VERDICT_DEADLOCK = "Deadlock"
VERDICT_ASSERTION = "AssertionFailure"


class ReplayError(RuntimeError):
    """A recorded trace does not fit the configuration it is replayed under."""


@dataclass(frozen=True)
class VirtualProcess:
    kind: str
    core: int | None = None

    def __str__(self) -> str:
        if self.kind == "Worker":
            return f"Worker({self.core})"
        return self.kind


@dataclass(frozen=True)
class ScheduleStep:
    """One atomic step attributed to a virtual process; `variant` indexes
    that process's enabled choices (which timer entry, which target core)."""

    process: VirtualProcess
    variant: int = 0

    def __str__(self) -> str:
        if self.variant:
            return f"{self.process}[{self.variant}]"
        return str(self.process)


@dataclass(frozen=True)
class StepAnnotation:
    label: str
    monitor_lines: tuple[str, ...] = ()


@dataclass(frozen=True)
class Trace:
    """Replayable counterexample: the schedule, per-step annotations, the
    verdict, and a summary of the final state."""

    steps: tuple[ScheduleStep, ...]
    annotations: tuple[StepAnnotation, ...]
    verdict: str
    monitor_error: MonitorViolation | None = None
    final_task_states: tuple[tuple[int, str], ...] = ()
    final_queue: tuple[int, ...] = ()
    detail: str = ""

    def lines(self) -> list[str]:
        out = []
        for i, (step, ann) in enumerate(zip(self.steps, self.annotations)):
            out.append(f"#{i} {step.process} | {ann.label}")
            for line in ann.monitor_lines:
                out.append(f"#{i} {step.process} | {line}")
        return out


@dataclass
class ExplorationReport:
    config: KernelConfig
    states_visited: int = 0
    transitions_taken: int = 0
    max_depth: int = 0
    quiescent_ok: int = 0
    violations: list[Trace] = field(default_factory=list)
    incomplete: bool = False
    all_paths_terminal_ok: bool = False

    def finalize(self) -> None:
        self.all_paths_terminal_ok = not self.violations and not self.incomplete


def _task_state_summary(state: KernelState) -> tuple[tuple[int, str], ...]:
    out = []
    for t in state.tcbs:
        flag = "true" if t.need_sched else "false"
        out.append((t.id, f"{t.state.value}({flag})"))
    return tuple(out)


def enabled(state: KernelState) -> list[ScheduleStep]:
    """All enabled steps, deterministically ordered: timer variants first,
    then preempter, spawner, and workers ascending."""
    steps: list[ScheduleStep] = []
    timer = VirtualProcess("PrimaryTimer")
    for i in range(len(state.fireable_timers())):
        steps.append(ScheduleStep(timer, i))
    preempter = VirtualProcess("PrimaryPreempter")
    if state.decision is not None:
        target = state.decision[0]
        if state.cores[target].pending_ipi is None:
            steps.append(ScheduleStep(preempter, 0))
    elif not state.preempt_in_flight:
        for i in range(len(state.preempt_candidates())):
            steps.append(ScheduleStep(preempter, i))
    if _spawner_enabled(state):
        steps.append(ScheduleStep(VirtualProcess("Spawner"), 0))
    for core in state.workers():
        if _worker_action(state, core.core_id) is not None:
            steps.append(ScheduleStep(VirtualProcess("Worker", core.core_id), 0))
    return steps


def _spawner_enabled(state: KernelState) -> bool:
    # The plan always finishes spawning: enabled while something runs
    # (any running task may spawn) and again once everything spawned so
    # far has terminated, so no maximal path strands unspawned entries.
    if state.spawn_cursor >= len(state.config.task_plan):
        return False
    if any(t.state is TaskState.RUNNING for t in state.tcbs):
        return True
    return state.all_tasks_terminal()


def _worker_action(state: KernelState, core_id: int) -> str | None:
    """Which step the worker core would take: an IPI masks everything else."""
    core = state.cores[core_id]
    if core.pending_ipi is not None or core.ipi_phase is not None:
        return "ipi"
    if core.current_task is not None:
        tcb = state.tcbs[core.current_task]
        if tcb.state is TaskState.RUNNING or (
            state.config.fault_skip_resume_state and tcb.state is TaskState.PREEMPTED
        ):
            return "poll"
        return None
    if len(state.run_queue) > 0:
        return "fetch"
    return None


def _apply(state: KernelState, choice: ScheduleStep) -> KernelState:
    """Clone-and-execute one enabled step; the caller guarantees enabledness."""
    succ = state.clone()
    kind = choice.process.kind
    if kind == "PrimaryTimer":
        fireable = succ.fireable_timers()
        succ.timer_fire(fireable[choice.variant])
    elif kind == "PrimaryPreempter":
        if succ.decision is not None:
            succ.send_ipi()
        else:
            succ.preempt_decide(succ.preempt_candidates()[choice.variant])
    elif kind == "Spawner":
        succ.spawn_next()
    else:
        core_id = choice.process.core
        assert core_id is not None
        action = _worker_action(succ, core_id)
        if action == "ipi":
            succ.handle_ipi_step(core_id)
        elif action == "poll":
            succ.poll_step(core_id)
        else:
            outcome = succ.get_next_task(core_id)
            assert outcome is not FetchOutcome.IDLE
    return succ


def step(state: KernelState, choice: ScheduleStep) -> KernelState:
    """Pure successor of `state` under an enabled `choice`."""
    if choice not in enabled(state):
        raise UsageError(f"step {choice} is not enabled")
    return _apply(state, choice)


def check_invariants(state: KernelState) -> str | None:
    """Structural invariants every reachable state must satisfy; returns a
    description of the first failure, or None."""
    queue = state.run_queue.as_tuple()
    if len(set(queue)) != len(queue):
        return f"duplicate task ids in run queue {queue}"
    if len(queue) > len(state.config.task_plan):
        return f"run queue over capacity: {queue}"
    for t in state.tcbs:
        if t.in_queue != (t.id in queue):
            return f"task {t.id} in_queue={t.in_queue} but queue={queue}"
        if t.remaining_waits < 0 or t.remaining_preemptions < 0:
            return f"task {t.id} counter below zero"
    currents = [c.current_task for c in state.cores if c.current_task is not None]
    if len(set(currents)) != len(currents):
        return f"cores share a current task: {currents}"
    for c in state.cores:
        if c.role is Role.PRIMARY and c.current_task is not None:
            return "primary core has a current task"
    for t in state.tcbs:
        if t.state is TaskState.RUNNING and t.id not in currents:
            return f"running task {t.id} is not current on any core"
        if t.state in TERMINAL_STATES and (t.in_queue or t.id in currents):
            return f"terminal task {t.id} is queued or current"
    for s in state.slots:
        if (s.saved_pc is not None) != (s.ctx_state is CtxState.PREEMPTED):
            return f"slot {s.id}: saved pc {s.saved_pc} with state {s.ctx_state.value}"
    for c in state.cores:
        if c.role is Role.WORKER and c.ipi_phase is None:
            if c.active_context is None:
                return f"worker {c.core_id} has no active context"
            if state.slots[c.active_context].ctx_state is not CtxState.ACTIVE:
                return f"worker {c.core_id} active context is not CtxActive"
    decisions = (1 if state.decision is not None else 0) + sum(
        1 for c in state.cores if c.pending_ipi is not None
    )
    if decisions > 1:
        return "more than one preemption decision outstanding"
    if state.preempt_in_flight != (
        decisions > 0 or any(c.ipi_phase is not None for c in state.cores)
    ):
        return "preempt_in_flight flag out of sync"
    for d in ([state.decision] if state.decision is not None else []):
        if state.tcbs[d[1]].kind is not TaskKind.HEAVY:
            return f"light task {d[1]} observed by a preemption decision"
    return None


@dataclass(frozen=True)
class Limits:
    max_states: int | None = None
    max_depth: int | None = None
    max_violations: int = 16

    def __post_init__(self) -> None:
        if self.max_states is not None and self.max_states <= 0:
            raise ValueError("max_states must be positive")
        if self.max_depth is not None and self.max_depth <= 0:
            raise ValueError("max_depth must be positive")
        if self.max_violations < 1:
            raise ValueError("max_violations must be at least 1")


def explore(
    config: KernelConfig,
    limits: Limits | None = None,
    *,
    verify_invariants: bool = False,
) -> ExplorationReport:
    """Exhaustive DFS from the initial state with visited-state pruning.

    Deadlock means no step is enabled while some task is neither
    Terminated nor Panicked. Violating states are leaves: the trace is
    recorded and the search backtracks. Hitting a limit flags the report
    incomplete instead of crashing.
    """
    limits = limits or Limits()
    report = ExplorationReport(config=config)
    init = initial_state(config)
    visited = {snapshot(init)}
    report.states_visited = 1

    path: list[ScheduleStep] = []
    annotations: list[StepAnnotation] = []

    def record(state: KernelState, verdict: str, detail: str = "") -> None:
        report.violations.append(
            Trace(
                steps=tuple(path),
                annotations=tuple(annotations),
                verdict=verdict,
                monitor_error=state.violation,
                final_task_states=_task_state_summary(state),
                final_queue=state.run_queue.as_tuple(),
                detail=detail,
            )
        )

    def handle_quiescent(state: KernelState) -> None:
        if state.all_tasks_terminal():
            report.quiescent_ok += 1
        else:
            record(state, VERDICT_DEADLOCK, "no step enabled, tasks not terminal")

    init_enabled = enabled(init)
    if not init_enabled:
        handle_quiescent(init)
        report.finalize()
        return report

    frames: list[tuple[KernelState, list[ScheduleStep], int]] = [(init, init_enabled, 0)]
    while frames:
        state, options, idx = frames[-1]
        if idx >= len(options):
            frames.pop()
            if path:
                path.pop()
                annotations.pop()
            continue
        frames[-1] = (state, options, idx + 1)
        choice = options[idx]
        succ = _apply(state, choice)
        report.transitions_taken += 1
        key = snapshot(succ)
        if key in visited:
            continue
        if limits.max_states is not None and len(visited) >= limits.max_states:
            report.incomplete = True
            continue
        visited.add(key)
        report.states_visited += 1

        path.append(choice)
        annotations.append(
            StepAnnotation(succ.step_label, tuple(succ.step_lines))
        )
        report.max_depth = max(report.max_depth, len(path))

        stop_here = False
        if succ.violation is not None:
            record(succ, VERDICT_MONITOR)
            stop_here = True
        elif verify_invariants and (failure := check_invariants(succ)) is not None:
            record(succ, VERDICT_ASSERTION, failure)
            stop_here = True

        if stop_here:
            path.pop()
            annotations.pop()
            if len(report.violations) >= limits.max_violations:
                report.incomplete = True
                break
            continue

        succ_enabled = enabled(succ)
        if not succ_enabled:
            handle_quiescent(succ)
            if len(report.violations) >= limits.max_violations:
                report.incomplete = True
                path.pop()
                annotations.pop()
                break
            path.pop()
            annotations.pop()
            continue
        if limits.max_depth is not None and len(path) >= limits.max_depth:
            report.incomplete = True
            path.pop()
            annotations.pop()
            continue
        frames.append((succ, succ_enabled, 0))

    report.finalize()
    return report


def random_walk(
    config: KernelConfig,
    seed: int,
    max_steps: int,
    *,
    verify_invariants: bool = False,
) -> ExplorationReport:
    """One seeded pseudo-random schedule; fully replayable from (config, seed)."""
    if max_steps <= 0:
        raise ValueError("max_steps must be positive")
    rng = random.Random(seed)
    report = ExplorationReport(config=config)
    state = initial_state(config)
    seen = {snapshot(state)}
    path: list[ScheduleStep] = []
    annotations: list[StepAnnotation] = []

    def record(verdict: str, detail: str = "") -> None:
        report.violations.append(
            Trace(
                steps=tuple(path),
                annotations=tuple(annotations),
                verdict=verdict,
                monitor_error=state.violation,
                final_task_states=_task_state_summary(state),
                final_queue=state.run_queue.as_tuple(),
                detail=detail,
            )
        )

    for _ in range(max_steps):
        options = enabled(state)
        if not options:
            if state.all_tasks_terminal():
                report.quiescent_ok += 1
            else:
                record(VERDICT_DEADLOCK, "no step enabled, tasks not terminal")
            report.states_visited = len(seen)
            report.max_depth = len(path)
            report.finalize()
            return report
        choice = options[rng.randrange(len(options))]
        state = _apply(state, choice)
        report.transitions_taken += 1
        path.append(choice)
        annotations.append(StepAnnotation(state.step_label, tuple(state.step_lines)))
        seen.add(snapshot(state))
        if state.violation is not None:
            record(VERDICT_MONITOR)
            break
        if verify_invariants and (failure := check_invariants(state)) is not None:
            record(VERDICT_ASSERTION, failure)
            break
    else:
        report.incomplete = True
    report.states_visited = len(seen)
    report.max_depth = len(path)
    report.finalize()
    return report


@dataclass(frozen=True)
class ReplayResult:
    verdict: str | None
    monitor_error: MonitorViolation | None
    final_task_states: tuple[tuple[int, str], ...]
    final_queue: tuple[int, ...]
    annotations: tuple[StepAnnotation, ...]


def replay(
    config: KernelConfig,
    steps: tuple[ScheduleStep, ...],
    *,
    verify_invariants: bool = False,
) -> ReplayResult:
    """Re-execute a recorded schedule under `config` and report the verdict.

    Raises ReplayError naming the first step that is not enabled; an
    empty schedule reproduces "no violation" (verdict None) unless the
    initial state itself is quiescent-deadlocked. Pass verify_invariants
    to reproduce traces recorded with invariant checking on.
    """
    state = initial_state(config)
    annotations: list[StepAnnotation] = []
    verdict: str | None = None
    for i, choice in enumerate(steps):
        if choice not in enabled(state):
            raise ReplayError(f"step #{i} ({choice}) is not enabled; trace diverges")
        state = _apply(state, choice)
        annotations.append(StepAnnotation(state.step_label, tuple(state.step_lines)))
        if state.violation is not None:
            if i != len(steps) - 1:
                raise ReplayError(
                    f"violation already at step #{i}, before the trace ends"
                )
            verdict = VERDICT_MONITOR
        elif verify_invariants and check_invariants(state) is not None:
            if i != len(steps) - 1:
                raise ReplayError(
                    f"invariant failure already at step #{i}, before the trace ends"
                )
            verdict = VERDICT_ASSERTION
    if verdict is None and not enabled(state) and not state.all_tasks_terminal():
        verdict = VERDICT_DEADLOCK
    return ReplayResult(
        verdict=verdict,
        monitor_error=state.violation,
        final_task_states=_task_state_summary(state),
        final_queue=state.run_queue.as_tuple(),
        annotations=tuple(annotations),
    )
