"""Resource manager layer: FIFO task queue, first-fit machine assignment
with capacity reservation, infrastructure and file-system status, and the
running-workflow registry.

Two coupling topologies exist.  In workflow-aware mode the resource manager
is handed whole workflows and resolves readiness itself; in disjoint mode an
external driver submits ready instances one at a time and the resource
manager knows nothing about workflow structure (running_workflows is always
empty there).
"""

from dataclasses import dataclass

from .blueprint import TopologyMode
from .machine import MachineRegistry, MachineStatus, ResourceVector
from .workflow import ResourceRequest, RunRecord, WorkflowSpec

__all__ = [
    "TopologyMode",
    "QueueEntry",
    "InfrastructureStatus",
    "FileSystemStatus",
    "ResourceManager",
    "ResmanError",
    "WrongTopologyError",
    "DuplicateTaskError",
    "UnknownEntryError",
]


class ResmanError(Exception):
    pass


class WrongTopologyError(ResmanError):
    def __init__(self, operation: str, topology: TopologyMode):
        super().__init__(f"{operation} not available in {topology.wire_name} mode")
        self.operation = operation


class DuplicateTaskError(ResmanError):
    def __init__(self, task_id: str):
        super().__init__(f"task already submitted: {task_id!r}")
        self.task_id = task_id


class UnknownEntryError(ResmanError):
    def __init__(self, task_id: str):
        super().__init__(f"no such queued or running task: {task_id!r}")
        self.task_id = task_id


@dataclass(frozen=True)
class QueueEntry:
    """One ready-to-run instance waiting for a machine.  workflow_id is
    known only in workflow-aware mode."""

    task_id: str
    requested: ResourceRequest
    enqueue_ms: int
    workflow_id: str | None = None


@dataclass(frozen=True)
class InfrastructureStatus:
    machines_total: int
    machines_by_status: dict[MachineStatus, int]
    capacity_total: ResourceVector
    capacity_reserved: ResourceVector
    queue_depth: int
    running_tasks: int


@dataclass(frozen=True)
class FileSystemStatus:
    total_bytes: int
    used_bytes: int
    healthy: bool


def _request_vector(requested: ResourceRequest) -> ResourceVector:
    return ResourceVector(
        cpu_cores=requested.cpu_cores,
        memory_bytes=requested.memory_bytes,
        disk_bytes=requested.disk_bytes,
    )


class ResourceManager:
    """Single-actor scheduler core.  All mutation goes through the engine
    thread; reads build fresh values and are safe to expose."""

    def __init__(self, topology: TopologyMode, registry: MachineRegistry, fs_total_bytes: int):
        if fs_total_bytes <= 0:
            raise ResmanError("fs_total_bytes must be positive")
        self.topology = topology
        self.registry = registry
        self.fs_total_bytes = fs_total_bytes
        self._queue: list[QueueEntry] = []
        self._running: dict[str, tuple[str, ResourceRequest]] = {}
        self._finished: set[str] = set()
        self._reserved: dict[str, ResourceVector] = {}
        self._fs_written_bytes = 0
        self._runs: list[tuple[str, str, RunRecord]] = []

    # -- submission ---------------------------------------------------------

    def submit_workflow(self, spec: WorkflowSpec, input_count: int, run: RunRecord) -> str:
        """Register a whole workflow for workflow-aware execution.  The
        engine expands and enqueues its instances as they become ready."""
        if self.topology is not TopologyMode.WORKFLOW_AWARE:
            raise WrongTopologyError("submit_workflow", self.topology)
        if input_count <= 0:
            raise ResmanError(f"input_count must be positive, got {input_count}")
        self._runs.append((run.run_id, spec.workflow_id, run))
        return run.run_id

    def submit_task(self, entry: QueueEntry) -> None:
        """External single-task submission; only the disjoint driver may use
        this path."""
        if self.topology is not TopologyMode.DISJOINT:
            raise WrongTopologyError("submit_task", self.topology)
        if entry.workflow_id is not None:
            raise ResmanError("disjoint submissions must not carry a workflow_id")
        self.enqueue(entry)

    def enqueue(self, entry: QueueEntry) -> None:
        """FIFO append with task-id uniqueness across queue, running, and
        finished sets."""
        known = (
            entry.task_id in self._finished
            or entry.task_id in self._running
            or any(e.task_id == entry.task_id for e in self._queue)
        )
        if known:
            raise DuplicateTaskError(entry.task_id)
        self._queue.append(entry)

    # -- scheduling ---------------------------------------------------------

    def _headroom(self, machine_id: str) -> ResourceVector:
        capacity = self.registry.descriptor(machine_id).capacity
        reserved = self._reserved.get(machine_id, ResourceVector(0, 0, 0))
        return capacity.minus(reserved)

    def schedule(self, t_ms: int) -> list[tuple[str, str]]:
        """One scheduling pass: walk the queue in FIFO order and give each
        entry the first healthy machine (ascending id) with room on every
        dimension.  Assignment reserves capacity immediately; entries that
        fit nowhere stay queued."""
        assignments = []
        remaining = []
        for entry in self._queue:
            need = _request_vector(entry.requested)
            chosen = None
            for machine_id in self.registry.machine_ids():
                descriptor = self.registry.descriptor(machine_id)
                if descriptor.status is not MachineStatus.HEALTHY:
                    continue
                if need.fits_within(self._headroom(machine_id)):
                    chosen = machine_id
                    break
            if chosen is None:
                remaining.append(entry)
                continue
            reserved = self._reserved.get(chosen, ResourceVector(0, 0, 0))
            self._reserved[chosen] = reserved.plus(need)
            self._running[entry.task_id] = (chosen, entry.requested)
            assignments.append((entry.task_id, chosen))
        self._queue = remaining
        return assignments

    def release(self, task_id: str, wchar_bytes: int = 0) -> None:
        """Return a finished task's reservation and account its writes
        against the shared file system."""
        if task_id not in self._running:
            raise UnknownEntryError(task_id)
        machine_id, requested = self._running.pop(task_id)
        self._reserved[machine_id] = self._reserved[machine_id].minus(
            _request_vector(requested)
        )
        self._finished.add(task_id)
        self._fs_written_bytes += max(0, wchar_bytes)

    def running_on(self, machine_id: str) -> list[str]:
        return sorted(
            task_id for task_id, (m, _) in self._running.items() if m == machine_id
        )

    def assignment(self, task_id: str) -> "tuple[str, ResourceRequest] | None":
        return self._running.get(task_id)

    def queue_depth(self) -> int:
        return len(self._queue)

    def reserved_on(self, machine_id: str) -> ResourceVector:
        return self._reserved.get(machine_id, ResourceVector(0, 0, 0))

    # -- status -------------------------------------------------------------

    def infrastructure_status(self) -> InfrastructureStatus:
        counts = self.registry.status_counts()
        total = ResourceVector(0, 0, 0)
        for machine_id in self.registry.machine_ids():
            total = total.plus(self.registry.descriptor(machine_id).capacity)
        reserved = ResourceVector(0, 0, 0)
        for machine_id in self.registry.machine_ids():
            reserved = reserved.plus(self.reserved_on(machine_id))
        return InfrastructureStatus(
            machines_total=sum(counts.values()),
            machines_by_status=counts,
            capacity_total=total,
            capacity_reserved=reserved,
            queue_depth=len(self._queue),
            running_tasks=len(self._running),
        )

    def filesystem_status(self) -> FileSystemStatus:
        used = min(self.fs_total_bytes, self._fs_written_bytes)
        return FileSystemStatus(
            total_bytes=self.fs_total_bytes,
            used_bytes=used,
            healthy=used < self.fs_total_bytes,
        )

    def running_workflows(self) -> list[tuple[str, str, str]]:
        """(run_id, workflow_id, state) triples for registered runs; the
        disjoint resource manager cannot see workflows and reports none."""
        if self.topology is TopologyMode.DISJOINT:
            return []
        return [
            (run_id, workflow_id, run.final_state.value)
            for run_id, workflow_id, run in self._runs
        ]
