"""Per-task DFA runtime monitors over (task state, need_sched flag).

Each spawned task gets its own monitor instance sharing one transition
table. Scheduler hooks feed events; an event with no defined transition
yields a violation report carrying the current state, the offending
symbol, and the full transition history. Monitors are pure values: a
cloned monitor can step independently of the original, which lets the
interleaving explorer carry them inside state snapshots.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class Event(Enum):
    SPAWN = "Spawn"
    WAKE = "Wake"
    SET_NEED_SCHED = "SetNeedSched"
    GET_NEXT = "GetNext"
    POLL_PENDING = "PollPending"
    POLL_READY = "PollReady"
    PREEMPT = "Preempt"
    PANIC = "Panic"

    def __str__(self) -> str:
        return self.value


class Base(Enum):
    """Base component of a monitor state.

    INIT is a synthetic pre-spawn state; the rest mirror task states.
    """

    INIT = "Init"
    RUNNABLE = "Runnable"
    RUNNING = "Running"
    WAITING = "Waiting"
    PREEMPTED = "Preempted"
    TERMINATED = "Terminated"
    PANICKED = "Panicked"


class Flag(Enum):
    FALSE = "false"
    TRUE = "true"
    DONT_CARE = "*"


# Bases whose flag carries no information (rendered as "*").
_DONT_CARE_BASES = frozenset({Base.INIT, Base.TERMINATED, Base.PANICKED})


@dataclass(frozen=True)
class MonitorState:
    base: Base
    flag: Flag

    def __post_init__(self) -> None:
        if (self.flag is Flag.DONT_CARE) != (self.base in _DONT_CARE_BASES):
            raise ValueError(f"flag {self.flag} invalid for base {self.base}")

    def __str__(self) -> str:
        return f"{self.base.value}({self.flag.value})"


def mstate(base: Base, flag: bool | None = None) -> MonitorState:
    """Build a MonitorState, inferring don't-care for terminal/init bases."""
    if base in _DONT_CARE_BASES:
        return MonitorState(base, Flag.DONT_CARE)
    if flag is None:
        raise ValueError(f"base {base} needs a concrete flag")
    return MonitorState(base, Flag.TRUE if flag else Flag.FALSE)


INIT = mstate(Base.INIT)


@dataclass(frozen=True)
class MonitorViolation:
    """Undefined transition: the monitor stayed put and reports context."""

    current_state: MonitorState
    symbol: Event
    history: tuple[tuple[MonitorState, Event, MonitorState], ...]
    task: int | None = None

    def describe(self) -> str:
        return (
            f"invalid transition: current state: {self.current_state}, "
            f"symbol: {self.symbol}"
        )


class TransitionTable:
    """Deterministic transition relation as (source, event, target) triples."""

    def __init__(
        self,
        triples: tuple[tuple[MonitorState, Event, MonitorState], ...],
        initial: MonitorState = INIT,
    ) -> None:
        index: dict[tuple[MonitorState, Event], MonitorState] = {}
        for src, ev, dst in triples:
            key = (src, ev)
            if key in index:
                raise ValueError(f"nondeterministic table: duplicate {src} --{ev}-->")
            if src.base in (Base.TERMINATED, Base.PANICKED):
                raise ValueError(f"absorbing state {src} must have no outgoing triples")
            index[key] = dst
        self.triples = triples
        self.initial = initial
        self._index = index

    def lookup(self, state: MonitorState, event: Event) -> MonitorState | None:
        return self._index.get((state, event))


def default_table() -> TransitionTable:
    """The task life-cycle DFA: states are (base, need_sched) pairs.

    Spawn lands in Waiting(false) and the spawn hook's immediate wake
    moves it on to Runnable(false). SetNeedSched records a wake or a
    preemption decision hitting a running task; Preempt is only valid
    once the flag is set, and resuming a preempted task clears it.
    """
    s = mstate
    B = Base
    triples = (
        (INIT, Event.SPAWN, s(B.WAITING, False)),
        (s(B.WAITING, False), Event.WAKE, s(B.RUNNABLE, False)),
        (s(B.RUNNABLE, False), Event.GET_NEXT, s(B.RUNNING, False)),
        (s(B.RUNNING, False), Event.POLL_PENDING, s(B.WAITING, False)),
        (s(B.RUNNING, False), Event.SET_NEED_SCHED, s(B.RUNNING, True)),
        (s(B.RUNNING, True), Event.SET_NEED_SCHED, s(B.RUNNING, True)),
        (s(B.RUNNING, True), Event.POLL_PENDING, s(B.RUNNABLE, False)),
        (s(B.RUNNING, True), Event.PREEMPT, s(B.PREEMPTED, True)),
        (s(B.RUNNING, False), Event.POLL_READY, s(B.TERMINATED)),
        (s(B.RUNNING, True), Event.POLL_READY, s(B.TERMINATED)),
        (s(B.PREEMPTED, True), Event.GET_NEXT, s(B.RUNNING, False)),
        (s(B.PREEMPTED, False), Event.GET_NEXT, s(B.RUNNING, False)),
        (s(B.RUNNING, False), Event.PANIC, s(B.PANICKED)),
        (s(B.RUNNING, True), Event.PANIC, s(B.PANICKED)),
    )
    return TransitionTable(triples)


def format_transition(
    task: int, src: MonitorState, event: Event, dst: MonitorState
) -> str:
    """Render one observed transition as a stable log line."""
    return f"task={task} {src} -- {event} --> {dst}"


# History is kept as a shared-tail cons chain so cloning a monitor is O(1);
# entry = ((src, event, dst), previous-chain-or-None).


class TaskMonitor:
    """One task's monitor: shared table, current state, transition history."""

    __slots__ = ("table", "current", "_hist")

    def __init__(
        self,
        table: TransitionTable,
        current: MonitorState | None = None,
        _hist: tuple | None = None,
    ) -> None:
        self.table = table
        self.current = table.initial if current is None else current
        self._hist = _hist

    @property
    def history(self) -> tuple[tuple[MonitorState, Event, MonitorState], ...]:
        entries = []
        node = self._hist
        while node is not None:
            entries.append(node[0])
            node = node[1]
        entries.reverse()
        return tuple(entries)

    def next(self, event: Event) -> MonitorViolation | None:
        """Advance on a defined transition; report and stay on an undefined one."""
        dst = self.table.lookup(self.current, event)
        if dst is None:
            return MonitorViolation(self.current, event, self.history)
        self._hist = ((self.current, event, dst), self._hist)
        self.current = dst
        return None

    def clone(self) -> TaskMonitor:
        return TaskMonitor(self.table, self.current, self._hist)


class MonitorRegistry:
    """task id -> TaskMonitor; monitors persist for the life of the run."""

    __slots__ = ("table", "_monitors")

    def __init__(self, table: TransitionTable | None = None) -> None:
        self.table = table if table is not None else default_table()
        self._monitors: dict[int, TaskMonitor] = {}

    def register(self, task: int) -> TaskMonitor:
        if task in self._monitors:
            raise ValueError(f"task {task} already registered")
        mon = TaskMonitor(self.table)
        self._monitors[task] = mon
        return mon

    def get(self, task: int) -> TaskMonitor:
        return self._monitors[task]

    def __contains__(self, task: int) -> bool:
        return task in self._monitors

    def __len__(self) -> int:
        return len(self._monitors)

    def items(self):
        return sorted(self._monitors.items())

    def fire(self, task: int, event: Event) -> tuple[MonitorViolation | None, str]:
        """Feed one event; return (violation-or-None, formatted line)."""
        mon = self._monitors[task]
        src = mon.current
        violation = mon.next(event)
        if violation is not None:
            violation = MonitorViolation(
                violation.current_state, violation.symbol, violation.history, task
            )
            return violation, f"task={task} {violation.describe()}"
        return None, format_transition(task, src, event, mon.current)

    def clone(self) -> MonitorRegistry:
        other = MonitorRegistry(self.table)
        other._monitors = {tid: mon.clone() for tid, mon in self._monitors.items()}
        return other
