"""Executable semantics of a preemptive async-task scheduler.

One primary core drives timer wakeups and round-robin preemption
decisions; worker cores fetch tasks from a shared FIFO run queue and
poll them. Preemption is a two-phase protocol (decide, then IPI) with a
per-task need_sched flag; preempted task progress lives in context
slots that are saved and restored across cores.

Every shared-state mutation here is one explicitly atomic step, so an
external driver can interleave steps from different virtual processes.
Compound queue/optional operations are atomic; the deliberate splits are
(register timer / become waiting), (decide / send IPI), and
(set state / enqueue) inside IPI handling, because the interesting races
live in exactly those windows. Fix and fault toggles in the config
select buggy or fixed variants of the wake and preemption protocols.

There is no real concurrency: instances are plain values, safe to run in
parallel OS processes with nothing shared.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .monitor import Event, MonitorRegistry, MonitorViolation


class ConfigurationError(ValueError):
    """Bad configuration or reference to a task that does not exist."""


class UsageError(RuntimeError):
    """An operation was invoked outside its precondition."""


class TaskState(Enum):
    RUNNABLE = "Runnable"
    RUNNING = "Running"
    WAITING = "Waiting"
    PREEMPTED = "Preempted"
    TERMINATED = "Terminated"
    PANICKED = "Panicked"


TERMINAL_STATES = frozenset({TaskState.TERMINATED, TaskState.PANICKED})


class TaskKind(Enum):
    LIGHT = "L"
    HEAVY = "H"


class Action(Enum):
    """Script actions a task performs when polled."""

    COMPUTE = "Compute"
    REGISTER_TIMER_AND_PEND = "RegisterTimerAndPend"
    SPAWN_NEXT = "SpawnNext"
    FINISH = "Finish"
    PANIC = "Panic"


class CtxState(Enum):
    NOT_INITIALIZED = "CtxNotInitialized"
    ACTIVE = "CtxActive"
    DO_PREEMPTION = "CtxDoPreemption"
    PREEMPTED = "CtxPreempted"
    IN_THREAD_POOL = "CtxInThreadPool"


class Role(Enum):
    PRIMARY = "Primary"
    WORKER = "Worker"


class IpiPhase(Enum):
    """Progress marker for the multi-step preemption handler on a core."""

    CTX_SAVED = "ctx_saved"
    STATED = "stated"
    ENQUEUED = "enqueued"


class FetchOutcome(Enum):
    IDLE = "Idle"
    SKIPPED = "Skipped"
    STARTED = "Started"
    RESUMED = "Resumed"


@dataclass(frozen=True)
class KernelConfig:
    """Workload shape plus the fix/fault toggles under test."""

    worker_count: int = 2
    task_plan: tuple[TaskKind, ...] = (TaskKind.HEAVY, TaskKind.LIGHT, TaskKind.LIGHT)
    fix_wait_need_sched: bool = True
    fix_preempt_need_sched: bool = True
    fault_enqueue_before_state: bool = False
    fault_skip_resume_state: bool = False
    fault_skip_running_check: bool = False
    max_waits_per_task: int = 1
    max_preemptions_per_task: int = 1

    def __post_init__(self) -> None:
        if self.worker_count < 1:
            raise ConfigurationError("worker_count must be >= 1")
        if not self.task_plan:
            raise ConfigurationError("task_plan must be non-empty")
        if self.max_waits_per_task < 0 or self.max_preemptions_per_task < 0:
            raise ConfigurationError("bounds must be >= 0")


def script_for(kind: TaskKind, config: KernelConfig) -> tuple[Action, ...]:
    """Derive a task's action script from its kind and the wait bound.

    Heavy tasks alternate compute with timed waits; light tasks just
    compute twice and finish, and never wait.
    """
    if kind is TaskKind.LIGHT:
        return (Action.COMPUTE, Action.COMPUTE, Action.FINISH)
    steps: list[Action] = [Action.COMPUTE]
    for _ in range(config.max_waits_per_task):
        steps.append(Action.REGISTER_TIMER_AND_PEND)
        steps.append(Action.COMPUTE)
    steps.append(Action.FINISH)
    return tuple(steps)


@dataclass
class TaskControlBlock:
    """Per-task record; pending_wait marks the window between registering a
    timer and actually becoming Waiting."""

    id: int
    kind: TaskKind
    script: tuple[Action, ...]
    state: TaskState = TaskState.RUNNABLE
    need_sched: bool = False
    in_queue: bool = False
    preempt_context: int | None = None
    pc: int = 0
    pending_wait: bool = False
    remaining_waits: int = 0
    remaining_preemptions: int = 0

    def clone(self) -> TaskControlBlock:
        return TaskControlBlock(
            self.id,
            self.kind,
            self.script,
            self.state,
            self.need_sched,
            self.in_queue,
            self.preempt_context,
            self.pc,
            self.pending_wait,
            self.remaining_waits,
            self.remaining_preemptions,
        )


@dataclass
class ContextSlot:
    """Abstract thread context; saved progress is (pc, mid-wait flag),
    because an IPI can land between timer registration and the waiting
    transition."""

    id: int
    ctx_state: CtxState = CtxState.IN_THREAD_POOL
    saved_pc: int | None = None
    saved_mid_wait: bool = False

    def clone(self) -> ContextSlot:
        return ContextSlot(self.id, self.ctx_state, self.saved_pc, self.saved_mid_wait)


@dataclass
class CoreState:
    core_id: int
    role: Role
    current_task: int | None = None
    interrupt_flag: bool = False
    pending_ipi: int | None = None  # observed task id of the delivered decision
    ipi_phase: IpiPhase | None = None
    active_context: int | None = None
    context_pool: list[int] = field(default_factory=list)

    def clone(self) -> CoreState:
        return CoreState(
            self.core_id,
            self.role,
            self.current_task,
            self.interrupt_flag,
            self.pending_ipi,
            self.ipi_phase,
            self.active_context,
            list(self.context_pool),
        )


class RunQueue:
    """Bounded FIFO of task ids with no duplicates."""

    __slots__ = ("capacity", "_items")

    def __init__(self, capacity: int, items: tuple[int, ...] = ()) -> None:
        self.capacity = capacity
        self._items: list[int] = list(items)

    def push_back(self, task: int) -> None:
        if task in self._items:
            raise UsageError(f"task {task} already queued")
        if len(self._items) >= self.capacity:
            raise UsageError("run queue over capacity")
        self._items.append(task)

    def pop_front(self) -> int:
        if not self._items:
            raise UsageError("pop from empty run queue")
        return self._items.pop(0)

    def __len__(self) -> int:
        return len(self._items)

    def __contains__(self, task: int) -> bool:
        return task in self._items

    def as_tuple(self) -> tuple[int, ...]:
        return tuple(self._items)

    def clone(self) -> RunQueue:
        return RunQueue(self.capacity, tuple(self._items))


@dataclass
class KernelState:
    """The complete shared world, including the monitors observing it.

    Mutating operations record a human-readable label and any monitor
    lines for the step just executed in step_label / step_lines; the
    first monitor violation of a step lands in `violation`.
    """

    config: KernelConfig
    tcbs: list[TaskControlBlock]
    run_queue: RunQueue
    timers: set[int]
    cores: list[CoreState]
    slots: list[ContextSlot]
    preempt_in_flight: bool = False
    decision: tuple[int, int] | None = None  # (target core, observed task)
    spawn_cursor: int = 0
    monitors: MonitorRegistry = field(default_factory=MonitorRegistry)
    violation: MonitorViolation | None = None
    step_label: str = ""
    step_lines: list[str] = field(default_factory=list)

    # -- bookkeeping -------------------------------------------------

    def clone(self) -> KernelState:
        return KernelState(
            config=self.config,
            tcbs=[t.clone() for t in self.tcbs],
            run_queue=self.run_queue.clone(),
            timers=set(self.timers),
            cores=[c.clone() for c in self.cores],
            slots=[s.clone() for s in self.slots],
            preempt_in_flight=self.preempt_in_flight,
            decision=self.decision,
            spawn_cursor=self.spawn_cursor,
            monitors=self.monitors.clone(),
            violation=None,
            step_label="",
            step_lines=[],
        )

    def begin_step(self, label: str) -> None:
        self.step_label = label
        self.step_lines = []
        self.violation = None

    def tcb(self, task: int) -> TaskControlBlock:
        if not 0 <= task < len(self.tcbs):
            raise ConfigurationError(f"unknown task id {task}")
        return self.tcbs[task]

    def worker(self, core_id: int) -> CoreState:
        core = self.cores[core_id]
        if core.role is not Role.WORKER:
            raise UsageError(f"core {core_id} is not a worker")
        return core

    def workers(self) -> list[CoreState]:
        return [c for c in self.cores if c.role is Role.WORKER]

    def all_tasks_terminal(self) -> bool:
        return all(t.state in TERMINAL_STATES for t in self.tcbs)

    def fireable_timers(self) -> list[int]:
        """Pending timer entries, lowest task id first; time is
        over-approximated, so any of them may fire at any moment."""
        return sorted(self.timers)

    def _fire_event(self, task: int, event: Event) -> None:
        violation, line = self.monitors.fire(task, event)
        self.step_lines.append(line)
        if violation is not None and self.violation is None:
            self.violation = violation

    def _enqueue(self, task: int) -> None:
        self.run_queue.push_back(task)
        self.tcbs[task].in_queue = True

    def _dequeue(self) -> int:
        task = self.run_queue.pop_front()
        self.tcbs[task].in_queue = False
        return task

    # -- operations ---------------------------------------------------

    def spawn_next(self) -> int | None:
        """Create the next planned task; it is woken immediately, so it
        lands Runnable in the run queue. Returns None when the plan is
        exhausted."""
        if self.spawn_cursor >= len(self.config.task_plan):
            self.begin_step("spawn: nothing to spawn")
            return None
        task_id = self.spawn_cursor
        kind = self.config.task_plan[task_id]
        self.begin_step(f"spawn task {task_id} ({kind.value})")
        tcb = TaskControlBlock(
            id=task_id,
            kind=kind,
            script=script_for(kind, self.config),
            state=TaskState.RUNNABLE,
            remaining_waits=(
                self.config.max_waits_per_task if kind is TaskKind.HEAVY else 0
            ),
            remaining_preemptions=(
                self.config.max_preemptions_per_task if kind is TaskKind.HEAVY else 0
            ),
        )
        self.tcbs.append(tcb)
        self.spawn_cursor += 1
        self.monitors.register(task_id)
        self._fire_event(task_id, Event.SPAWN)
        self._enqueue(task_id)
        self._fire_event(task_id, Event.WAKE)
        return task_id

    def wake(self, task: int) -> None:
        """Timer callback: enqueue a waiting task; with the wait fix, flag a
        running one; ignore every other state."""
        tcb = self.tcb(task)
        if tcb.state is TaskState.WAITING:
            tcb.state = TaskState.RUNNABLE
            self._enqueue(task)
            self._fire_event(task, Event.WAKE)
        elif tcb.state is TaskState.RUNNING:
            if self.config.fix_wait_need_sched:
                tcb.need_sched = True
                self._fire_event(task, Event.SET_NEED_SCHED)
            # without the fix the call is silently dropped
        # Runnable / Preempted / Terminated / Panicked: ignore

    def timer_fire(self, task: int | None = None) -> int:
        """Deliver one pending timed event (lowest eligible id by default)."""
        fireable = self.fireable_timers()
        if not fireable:
            raise UsageError("no fireable timer entry")
        chosen = fireable[0] if task is None else task
        if chosen not in fireable:
            raise UsageError(f"timer entry for task {chosen} not fireable")
        self.begin_step(f"timer fire: wake task {chosen}")
        self.timers.discard(chosen)
        self.wake(chosen)
        return chosen

    def get_next_task(self, core_id: int) -> FetchOutcome:
        """Worker fetch: dequeue the head and start or resume it.

        A head still marked Running is re-enqueued at the back and
        skipped (no monitor event) unless the running check is disabled
        by fault toggle; a head with a saved context resumes from its
        saved progress.
        """
        core = self.worker(core_id)
        if core.current_task is not None:
            raise UsageError(f"core {core_id} already runs task {core.current_task}")
        assert not core.interrupt_flag, "fetch with interrupt flag set"
        if len(self.run_queue) == 0:
            self.begin_step(f"worker {core_id}: queue empty")
            return FetchOutcome.IDLE
        task = self._dequeue()
        tcb = self.tcbs[task]
        if (
            tcb.state is TaskState.RUNNING
            and not self.config.fault_skip_running_check
        ):
            self.begin_step(f"worker {core_id}: task {task} still running, requeued")
            self._enqueue(task)
            return FetchOutcome.SKIPPED
        if tcb.preempt_context is not None:
            slot = self.slots[tcb.preempt_context]
            self.begin_step(
                f"worker {core_id}: resume task {task} at pc {slot.saved_pc}"
            )
            tcb.pc = slot.saved_pc if slot.saved_pc is not None else tcb.pc
            tcb.pending_wait = slot.saved_mid_wait
            slot.saved_pc = None
            slot.saved_mid_wait = False
            # pool the core's active context, activate the saved one
            old_active = core.active_context
            if old_active is not None:
                self.slots[old_active].ctx_state = CtxState.IN_THREAD_POOL
                core.context_pool.append(old_active)
                core.context_pool.sort()
            slot.ctx_state = CtxState.ACTIVE
            core.active_context = slot.id
            tcb.preempt_context = None
            tcb.need_sched = False
            core.current_task = task
            if not self.config.fault_skip_resume_state:
                tcb.state = TaskState.RUNNING
                self._fire_event(task, Event.GET_NEXT)
            return FetchOutcome.RESUMED
        self.begin_step(f"worker {core_id}: start task {task}")
        tcb.state = TaskState.RUNNING
        core.current_task = task
        self._fire_event(task, Event.GET_NEXT)
        return FetchOutcome.STARTED

    def poll_step(self, core_id: int) -> None:
        """Execute the current task's next atomic script step.

        RegisterTimerAndPend is two separate steps: first the timer
        registration, then the waiting transition, which re-enqueues
        immediately instead when need_sched was set in between.
        """
        core = self.worker(core_id)
        if core.current_task is None:
            raise UsageError(f"core {core_id} has no current task")
        task = core.current_task
        tcb = self.tcbs[task]
        runnable_here = tcb.state is TaskState.RUNNING or (
            self.config.fault_skip_resume_state and tcb.state is TaskState.PREEMPTED
        )
        if not runnable_here:
            raise UsageError(f"task {task} is not running (state {tcb.state.value})")

        if tcb.pending_wait:
            # second half of RegisterTimerAndPend
            tcb.pending_wait = False
            tcb.remaining_waits -= 1
            core.current_task = None
            fix = self.config.fix_wait_need_sched
            if fix and tcb.need_sched:
                self.begin_step(f"worker {core_id}: task {task} requeued (need_sched)")
                tcb.need_sched = False
                tcb.state = TaskState.RUNNABLE
                self._enqueue(task)
                self._fire_event(task, Event.POLL_PENDING)
            elif fix and task not in self.timers:
                # The wake already fired and was recorded in need_sched, but
                # a preemption consumed the flag in between (it is cleared on
                # resume). Complete the wait and re-deliver the wake at once,
                # or the task would sleep on a timer that is gone.
                self.begin_step(
                    f"worker {core_id}: task {task} wait over (wake already delivered)"
                )
                tcb.state = TaskState.WAITING
                self._fire_event(task, Event.POLL_PENDING)
                tcb.state = TaskState.RUNNABLE
                self._enqueue(task)
                self._fire_event(task, Event.WAKE)
            else:
                self.begin_step(f"worker {core_id}: task {task} enters waiting")
                tcb.state = TaskState.WAITING
                self._fire_event(task, Event.POLL_PENDING)
            return

        action = tcb.script[tcb.pc]
        if action is Action.COMPUTE:
            self.begin_step(f"worker {core_id}: task {task} compute (pc {tcb.pc})")
            tcb.pc += 1
        elif action is Action.REGISTER_TIMER_AND_PEND:
            self.begin_step(f"worker {core_id}: task {task} registers timer")
            self.timers.add(task)
            tcb.pc += 1
            tcb.pending_wait = True
        elif action is Action.SPAWN_NEXT:
            tcb.pc += 1
            self.spawn_next()
        elif action is Action.FINISH:
            self.begin_step(f"worker {core_id}: task {task} finishes")
            tcb.state = TaskState.TERMINATED
            core.current_task = None
            self._fire_event(task, Event.POLL_READY)
        elif action is Action.PANIC:
            self.begin_step(f"worker {core_id}: task {task} panics")
            tcb.state = TaskState.PANICKED
            core.current_task = None
            self._fire_event(task, Event.PANIC)

    def preempt_candidates(self) -> list[int]:
        """Worker cores currently running a preemptible heavy task."""
        out = []
        for core in self.workers():
            if core.current_task is None:
                continue
            tcb = self.tcbs[core.current_task]
            if (
                tcb.kind is TaskKind.HEAVY
                and tcb.state is TaskState.RUNNING
                and tcb.remaining_preemptions > 0
            ):
                out.append(core.core_id)
        return out

    def preempt_decide(self, core_id: int) -> None:
        """Record a preemption decision for a core; with the preempt fix the
        observed task's need_sched is set now, ahead of any IPI."""
        if self.preempt_in_flight:
            raise UsageError("a preemption is already in flight")
        if core_id not in self.preempt_candidates():
            raise UsageError(f"core {core_id} is not a preemption candidate")
        task = self.cores[core_id].current_task
        assert task is not None
        self.begin_step(f"preempt decide: core {core_id} task {task}")
        self.decision = (core_id, task)
        self.preempt_in_flight = True
        if self.config.fix_preempt_need_sched:
            self.tcbs[task].need_sched = True
            self._fire_event(task, Event.SET_NEED_SCHED)

    def send_ipi(self) -> None:
        """Deliver the recorded decision to its target core; deliberately a
        separate step from the decision itself."""
        if self.decision is None:
            raise UsageError("no preemption decision recorded")
        target, observed = self.decision
        core = self.cores[target]
        if core.pending_ipi is not None:
            raise UsageError(f"core {target} already has a pending IPI")
        self.begin_step(f"send IPI to core {target} (observed task {observed})")
        core.pending_ipi = observed
        core.interrupt_flag = True
        self.decision = None

    def handle_ipi_step(self, core_id: int) -> None:
        """Run the core's next preemption-handler step.

        Receipt cancels outright when the core is idle or (with the
        preempt fix) when the current task's need_sched is clear.
        Otherwise the handler takes three steps: save context, then set
        state and enqueue as two separate steps whose order the
        enqueue-before-state fault flips. need_sched is not cleared
        here; it is cleared when the task resumes.
        """
        core = self.worker(core_id)
        if core.ipi_phase is None:
            if core.pending_ipi is None:
                raise UsageError(f"core {core_id} has no pending IPI")
            core.pending_ipi = None
            core.interrupt_flag = False
            task = core.current_task
            if task is None:
                self.begin_step(f"core {core_id}: IPI canceled (idle core)")
                self.preempt_in_flight = False
                return
            tcb = self.tcbs[task]
            if self.config.fix_preempt_need_sched and not tcb.need_sched:
                self.begin_step(
                    f"core {core_id}: IPI canceled (task {task} need_sched clear)"
                )
                self.preempt_in_flight = False
                return
            if self.config.fix_preempt_need_sched and tcb.remaining_preemptions <= 0:
                # A stale decision can land on a flagged task whose preemption
                # budget is spent (the flag came from a wake); completing it
                # would overrun the bound, so the fixed protocol backs off.
                self.begin_step(
                    f"core {core_id}: IPI canceled (task {task} budget spent)"
                )
                self.preempt_in_flight = False
                return
            self.begin_step(f"core {core_id}: save context of task {task}")
            assert core.active_context is not None
            slot = self.slots[core.active_context]
            slot.ctx_state = CtxState.PREEMPTED
            slot.saved_pc = tcb.pc
            slot.saved_mid_wait = tcb.pending_wait
            tcb.preempt_context = slot.id
            core.ipi_phase = IpiPhase.CTX_SAVED
            return

        task = core.current_task
        assert task is not None
        tcb = self.tcbs[task]
        if core.ipi_phase is IpiPhase.CTX_SAVED:
            if self.config.fault_enqueue_before_state:
                self.begin_step(f"core {core_id}: enqueue task {task} (before state)")
                self._enqueue(task)
                core.ipi_phase = IpiPhase.ENQUEUED
            else:
                self.begin_step(f"core {core_id}: task {task} preempted")
                tcb.state = TaskState.PREEMPTED
                self._fire_event(task, Event.PREEMPT)
                core.ipi_phase = IpiPhase.STATED
            return
        if core.ipi_phase is IpiPhase.STATED:
            self.begin_step(f"core {core_id}: enqueue preempted task {task}")
            self._enqueue(task)
        else:  # ENQUEUED: state assignment was deferred past the enqueue
            self.begin_step(f"core {core_id}: task {task} preempted (late state)")
            tcb.state = TaskState.PREEMPTED
            self._fire_event(task, Event.PREEMPT)
        self._finish_preemption(core, tcb)

    def _finish_preemption(self, core: CoreState, tcb: TaskControlBlock) -> None:
        tcb.remaining_preemptions -= 1
        if not core.context_pool:
            raise UsageError(f"core {core.core_id} context pool exhausted")
        fresh = core.context_pool.pop(0)
        self.slots[fresh].ctx_state = CtxState.ACTIVE
        core.active_context = fresh
        core.current_task = None
        core.ipi_phase = None
        self.preempt_in_flight = False


def initial_state(config: KernelConfig) -> KernelState:
    """Boot: build cores and context slots, then spawn the first planned
    task immediately (later entries are spawned by the spawner step)."""
    heavies = sum(1 for k in config.task_plan if k is TaskKind.HEAVY)
    pool_per_core = 1 + config.max_preemptions_per_task * max(heavies, 1)
    cores = [CoreState(0, Role.PRIMARY)]
    slots: list[ContextSlot] = []
    for w in range(1, config.worker_count + 1):
        active = ContextSlot(len(slots), CtxState.ACTIVE)
        slots.append(active)
        pool: list[int] = []
        for _ in range(pool_per_core):
            slot = ContextSlot(len(slots), CtxState.IN_THREAD_POOL)
            slots.append(slot)
            pool.append(slot.id)
        cores.append(
            CoreState(w, Role.WORKER, active_context=active.id, context_pool=pool)
        )
    state = KernelState(
        config=config,
        tcbs=[],
        run_queue=RunQueue(capacity=len(config.task_plan)),
        timers=set(),
        cores=cores,
        slots=slots,
    )
    state.spawn_next()
    state.begin_step("init")
    return state


def snapshot(state: KernelState) -> str:
    """Canonical, injective encoding of the full global state.

    Covers every TCB field, queue order, timers, cores with their
    handler phases and context slots, the preemption flags, the spawn
    cursor, and each monitor's current state. Equal states encode
    equally; transient step bookkeeping is excluded.
    """
    tcbs = tuple(
        (
            t.id,
            t.state.value,
            int(t.need_sched),
            int(t.in_queue),
            -1 if t.preempt_context is None else t.preempt_context,
            t.pc,
            int(t.pending_wait),
            t.remaining_waits,
            t.remaining_preemptions,
        )
        for t in state.tcbs
    )
    cores = tuple(
        (
            c.core_id,
            c.role.value,
            -1 if c.current_task is None else c.current_task,
            int(c.interrupt_flag),
            -1 if c.pending_ipi is None else c.pending_ipi,
            "-" if c.ipi_phase is None else c.ipi_phase.value,
            -1 if c.active_context is None else c.active_context,
            tuple(c.context_pool),
        )
        for c in state.cores
    )
    slots = tuple(
        (
            s.id,
            s.ctx_state.value,
            -1 if s.saved_pc is None else s.saved_pc,
            int(s.saved_mid_wait),
        )
        for s in state.slots
    )
    monitors = tuple((tid, str(mon.current)) for tid, mon in state.monitors.items())
    key = (
        tcbs,
        state.run_queue.as_tuple(),
        tuple(sorted(state.timers)),
        cores,
        slots,
        int(state.preempt_in_flight),
        state.decision if state.decision is not None else (-1, -1),
        state.spawn_cursor,
        monitors,
    )
    return repr(key)
