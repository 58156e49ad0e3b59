"""Shared fixtures: workflow/cluster generators and the acceptance-criteria
summary printed at the end of the session."""

import random
from contextlib import contextmanager

import pytest

from stratus.machine import HardwareSpec, MachineDescriptor, MachineType, ResourceVector
from stratus.workflow import ResourceRequest, TaskDefinition, WorkflowSpec

GiB = 1024**3


def make_request(cpus=1, mem=GiB, disk=GiB // 4, timeout=600_000) -> ResourceRequest:
    return ResourceRequest(
        cpu_cores=cpus, memory_bytes=mem, disk_bytes=disk, max_runtime_ms=timeout
    )


def make_machine(machine_id, cpus=8, mem=16 * GiB, disk=100 * GiB) -> MachineDescriptor:
    return MachineDescriptor(
        machine_id=machine_id,
        machine_type=MachineType.BARE_METAL,
        hardware=HardwareSpec(
            cpu_architecture="x86_64",
            cpu_model="sim",
            memory_clock_mhz=3200,
            disk_partitions=(("root", disk),),
        ),
        capacity=ResourceVector(cpu_cores=cpus, memory_bytes=mem, disk_bytes=disk),
    )


def random_dag_spec(
    rng: random.Random,
    workflow_id: str = "rw",
    max_tasks: int = 8,
    edge_probability: float = 0.35,
    scatter_probability: float = 0.4,
    model_keys: tuple = ("quick", "default"),
) -> WorkflowSpec:
    """A random DAG: edges only go from lower to higher task index, so the
    result is acyclic by construction."""
    count = rng.randint(1, max_tasks)
    tasks = []
    for i in range(count):
        tasks.append(
            TaskDefinition(
                name=f"t{i}",
                scatter=rng.random() < scatter_probability,
                requested=make_request(
                    cpus=rng.randint(1, 3), mem=rng.randint(1, 3) * GiB
                ),
                runtime_model=rng.choice(model_keys),
            )
        )
    edges = []
    for i in range(count):
        for j in range(i + 1, count):
            if rng.random() < edge_probability:
                edges.append((f"t{i}", f"t{j}"))
    return WorkflowSpec(workflow_id=workflow_id, tasks=tuple(tasks), edges=tuple(edges))


def random_cluster(rng: random.Random, max_machines: int = 3) -> list[MachineDescriptor]:
    count = rng.randint(1, max_machines)
    return [
        make_machine(
            f"m{i + 1}",
            cpus=rng.randint(2, 8),
            mem=rng.randint(4, 16) * GiB,
            disk=rng.randint(20, 100) * GiB,
        )
        for i in range(count)
    ]


_ACCEPTANCE_RESULTS: dict[int, tuple[str, bool]] = {}


@pytest.fixture
def acceptance():
    """Context manager that records one acceptance criterion's outcome for
    the end-of-session summary."""

    @contextmanager
    def _criterion(number: int, title: str):
        try:
            yield
        except BaseException:
            _ACCEPTANCE_RESULTS[number] = (title, False)
            raise
        _ACCEPTANCE_RESULTS[number] = (title, True)

    return _criterion


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for number in sorted(_ACCEPTANCE_RESULTS):
        title, passed = _ACCEPTANCE_RESULTS[number]
        mark = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} [{mark}] {title}")
