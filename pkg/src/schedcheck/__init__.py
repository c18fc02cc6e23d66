"""Verification workbench for a preemptive async-task scheduler model."""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    Action,
    ConfigurationError,
    CtxState,
    FetchOutcome,
    KernelConfig,
    KernelState,
    TaskKind,
    TaskState,
    UsageError,
    initial_state,
    snapshot,
)
from .monitor import (  # noqa: F401
    Event,
    MonitorRegistry,
    MonitorState,
    MonitorViolation,
    TaskMonitor,
    TransitionTable,
    default_table,
    format_transition,
)
from .explorer import (  # noqa: F401
    ExplorationReport,
    Limits,
    ReplayError,
    ScheduleStep,
    Trace,
    VirtualProcess,
    enabled,
    explore,
    random_walk,
    replay,
    step,
)
