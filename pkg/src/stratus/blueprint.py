"""Monitoring layer taxonomy, feature access matrix, and capability scoring.

Four monitoring layers form a strict hierarchy: resource manager above
workflow above machine above task.  Abstraction decreases and metric
granularity increases as you move down.  Every monitoring feature is owned
by exactly one layer, and the access matrix records which layers are
permitted to serve it (a layer may always serve its own features; higher
layers may additionally read features owned below them).

All taxonomy values here are immutable after construction and safe to share
across concurrent readers.
"""

import enum
import re
from dataclasses import dataclass, field


class BlueprintError(Exception):
    """Base class for taxonomy and matrix errors."""


class UnknownLayerError(BlueprintError):
    def __init__(self, name: str):
        super().__init__(f"unknown layer: {name!r}")
        self.layer_name = name


class UnknownFeatureError(BlueprintError):
    def __init__(self, name: str, line: int | None = None):
        at = f" (line {line})" if line is not None else ""
        super().__init__(f"unknown feature key: {name!r}{at}")
        self.feature_name = name
        self.line = line


class MatrixFileError(BlueprintError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class InvalidMatrixError(BlueprintError):
    pass


class LayerId(enum.IntEnum):
    """Monitoring layer.  Numeric value orders the hierarchy: a larger value
    means a more abstract layer that may read everything below it."""

    TASK = 0
    MACHINE = 1
    WORKFLOW = 2
    RESOURCE_MANAGER = 3

    @property
    def wire_name(self) -> str:
        return self.name.lower()

    @classmethod
    def from_wire(cls, name: str) -> "LayerId":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise UnknownLayerError(name) from None


class TopologyMode(enum.Enum):
    """How the workflow system and the resource manager are coupled.

    WORKFLOW_AWARE: the resource manager sees whole workflows and resolves
    task dependencies itself.  DISJOINT: a separate workflow driver submits
    ready instances one by one, and the resource manager cannot see any
    workflow-owned monitoring feature.  Fixed for the lifetime of a run.
    """

    WORKFLOW_AWARE = "workflow_aware"
    DISJOINT = "disjoint"

    @property
    def wire_name(self) -> str:
        return self.value

    @classmethod
    def from_wire(cls, name: str) -> "TopologyMode":
        normalized = name.strip().lower().replace("-", "_")
        for mode in cls:
            if mode.value == normalized:
                return mode
        raise BlueprintError(f"unknown topology: {name!r}")


class FeatureKey(str, enum.Enum):
    """The monitoring features, in the canonical grouped order (resource
    manager, workflow, machine, task).  Values are the wire spelling used in
    every file format and API path."""

    # resource manager layer
    INFRASTRUCTURE_STATUS = "infrastructure_status"
    FILE_SYSTEM_STATUS = "file_system_status"
    RUNNING_WORKFLOWS = "running_workflows"
    # workflow layer
    WORKFLOW_STATUS = "workflow_status"
    WORKFLOW_SPECIFICATION = "workflow_specification"
    GRAPHICAL_REPRESENTATION = "graphical_representation"
    WORKFLOW_ID = "workflow_id"
    EXECUTION_REPORT = "execution_report"
    PREVIOUS_EXECUTIONS = "previous_executions"
    # machine layer
    MACHINE_STATUS = "machine_status"
    MACHINE_TYPE = "machine_type"
    HARDWARE_SPECIFICATION = "hardware_specification"
    AVAILABLE_RESOURCES = "available_resources"
    USED_RESOURCES = "used_resources"
    # task layer
    TASK_STATUS = "task_status"
    REQUESTED_RESOURCES = "requested_resources"
    CONSUMED_RESOURCES = "consumed_resources"
    RESOURCE_CONSUMPTION_FOR_CODE_PARTS = "resource_consumption_for_code_parts"
    TASK_ID = "task_id"
    APPLICATION_LOGS = "application_logs"
    TASK_DURATION = "task_duration"
    LOW_LEVEL_TASK_METRICS = "low_level_task_metrics"
    FAULT_DIAGNOSIS = "fault_diagnosis"

    @property
    def wire_name(self) -> str:
        return self.value

    @property
    def owning_layer(self) -> LayerId:
        return _OWNING_LAYER[self]

    @classmethod
    def from_wire(cls, name: str) -> "FeatureKey":
        try:
            return cls(name.strip())
        except ValueError:
            raise UnknownFeatureError(name) from None


_OWNING_LAYER: dict[FeatureKey, LayerId] = {
    FeatureKey.INFRASTRUCTURE_STATUS: LayerId.RESOURCE_MANAGER,
    FeatureKey.FILE_SYSTEM_STATUS: LayerId.RESOURCE_MANAGER,
    FeatureKey.RUNNING_WORKFLOWS: LayerId.RESOURCE_MANAGER,
    FeatureKey.WORKFLOW_STATUS: LayerId.WORKFLOW,
    FeatureKey.WORKFLOW_SPECIFICATION: LayerId.WORKFLOW,
    FeatureKey.GRAPHICAL_REPRESENTATION: LayerId.WORKFLOW,
    FeatureKey.WORKFLOW_ID: LayerId.WORKFLOW,
    FeatureKey.EXECUTION_REPORT: LayerId.WORKFLOW,
    FeatureKey.PREVIOUS_EXECUTIONS: LayerId.WORKFLOW,
    FeatureKey.MACHINE_STATUS: LayerId.MACHINE,
    FeatureKey.MACHINE_TYPE: LayerId.MACHINE,
    FeatureKey.HARDWARE_SPECIFICATION: LayerId.MACHINE,
    FeatureKey.AVAILABLE_RESOURCES: LayerId.MACHINE,
    FeatureKey.USED_RESOURCES: LayerId.MACHINE,
    FeatureKey.TASK_STATUS: LayerId.TASK,
    FeatureKey.REQUESTED_RESOURCES: LayerId.TASK,
    FeatureKey.CONSUMED_RESOURCES: LayerId.TASK,
    FeatureKey.RESOURCE_CONSUMPTION_FOR_CODE_PARTS: LayerId.TASK,
    FeatureKey.TASK_ID: LayerId.TASK,
    FeatureKey.APPLICATION_LOGS: LayerId.TASK,
    FeatureKey.TASK_DURATION: LayerId.TASK,
    FeatureKey.LOW_LEVEL_TASK_METRICS: LayerId.TASK,
    FeatureKey.FAULT_DIAGNOSIS: LayerId.TASK,
}

ALL_LAYERS: tuple[LayerId, ...] = (
    LayerId.RESOURCE_MANAGER,
    LayerId.WORKFLOW,
    LayerId.MACHINE,
    LayerId.TASK,
)

ALL_FEATURES: tuple[FeatureKey, ...] = tuple(FeatureKey)


def features_owned_by(layer: LayerId) -> tuple[FeatureKey, ...]:
    return tuple(f for f in ALL_FEATURES if f.owning_layer is layer)


# Per-layer feature totals; the denominators of every coverage summary.
LAYER_FEATURE_TOTALS: dict[LayerId, int] = {
    layer: len(features_owned_by(layer)) for layer in ALL_LAYERS
}

_EVERY_LAYER = frozenset(ALL_LAYERS)
_RM = frozenset({LayerId.RESOURCE_MANAGER})
_RM_WF = frozenset({LayerId.RESOURCE_MANAGER, LayerId.WORKFLOW})
_WF = frozenset({LayerId.WORKFLOW})
_RM_M = frozenset({LayerId.RESOURCE_MANAGER, LayerId.MACHINE})
_M = frozenset({LayerId.MACHINE})
_T = frozenset({LayerId.TASK})

# The default permitted-layer sets, row by row.
_DEFAULT_PERMITTED: dict[FeatureKey, frozenset[LayerId]] = {
    FeatureKey.INFRASTRUCTURE_STATUS: _RM,
    FeatureKey.FILE_SYSTEM_STATUS: _RM,
    FeatureKey.RUNNING_WORKFLOWS: _RM,
    FeatureKey.WORKFLOW_STATUS: _RM_WF,
    FeatureKey.WORKFLOW_SPECIFICATION: _RM_WF,
    FeatureKey.GRAPHICAL_REPRESENTATION: _WF,
    FeatureKey.WORKFLOW_ID: _RM_WF,
    FeatureKey.EXECUTION_REPORT: _WF,
    FeatureKey.PREVIOUS_EXECUTIONS: _WF,
    FeatureKey.MACHINE_STATUS: _RM_M,
    FeatureKey.MACHINE_TYPE: _RM_M,
    FeatureKey.HARDWARE_SPECIFICATION: _M,
    FeatureKey.AVAILABLE_RESOURCES: _RM_M,
    FeatureKey.USED_RESOURCES: _RM_M,
    FeatureKey.TASK_STATUS: _EVERY_LAYER,
    FeatureKey.REQUESTED_RESOURCES: _EVERY_LAYER,
    FeatureKey.CONSUMED_RESOURCES: _EVERY_LAYER,
    FeatureKey.RESOURCE_CONSUMPTION_FOR_CODE_PARTS: _T,
    FeatureKey.TASK_ID: _EVERY_LAYER,
    FeatureKey.APPLICATION_LOGS: _T,
    FeatureKey.TASK_DURATION: _EVERY_LAYER,
    FeatureKey.LOW_LEVEL_TASK_METRICS: _T,
    FeatureKey.FAULT_DIAGNOSIS: _T,
}

_EXTENSION_NAME_RE = re.compile(r"^[a-z][a-z0-9_]*$")


@dataclass(frozen=True)
class AccessMatrix:
    """Mapping from monitoring feature to the set of layers permitted to
    serve it.

    ``entries`` covers the standard features and must satisfy two rules for
    each of them: the owning layer is always permitted, and every permitted
    layer sits at or above the owning layer in the hierarchy.  ``extensions``
    holds additional deployment-specific features declared in an override
    file; they are exempt from table conformance but still hierarchy-checked
    against their lowest permitted layer.
    """

    entries: dict[FeatureKey, frozenset[LayerId]]
    extensions: dict[str, frozenset[LayerId]] = field(default_factory=dict)

    def __post_init__(self):
        missing = [f for f in ALL_FEATURES if f not in self.entries]
        if missing:
            raise InvalidMatrixError(
                f"matrix is missing entries for: {[f.value for f in missing]}"
            )
        for feature, permitted in self.entries.items():
            owner = feature.owning_layer
            if owner not in permitted:
                raise InvalidMatrixError(
                    f"{feature.value}: owning layer {owner.wire_name} not permitted"
                )
            below = [l for l in permitted if l < owner]
            if below:
                raise InvalidMatrixError(
                    f"{feature.value}: layers below the owner are permitted: "
                    f"{[l.wire_name for l in below]}"
                )
        standard_names = {f.value for f in ALL_FEATURES}
        for name, permitted in self.extensions.items():
            if not _EXTENSION_NAME_RE.match(name):
                raise InvalidMatrixError(f"extension name not lower_snake_case: {name!r}")
            if name in standard_names:
                raise InvalidMatrixError(f"extension {name!r} shadows a standard feature")
            if not permitted:
                raise InvalidMatrixError(f"extension {name!r} permits no layer")

    def lookup(self, feature: "FeatureKey | str") -> frozenset[LayerId]:
        if isinstance(feature, FeatureKey):
            return self.entries[feature]
        if feature in self.extensions:
            return self.extensions[feature]
        return self.entries[FeatureKey.from_wire(feature)]

    def owning_layer(self, feature: "FeatureKey | str") -> LayerId:
        """Owning layer of a feature; for extensions, the lowest permitted
        layer stands in as the owner."""
        if isinstance(feature, str) and feature in self.extensions:
            return min(self.extensions[feature])
        if isinstance(feature, str):
            feature = FeatureKey.from_wire(feature)
        return feature.owning_layer

    def known_features(self) -> "tuple[FeatureKey | str, ...]":
        return ALL_FEATURES + tuple(sorted(self.extensions))


def default_access_matrix() -> AccessMatrix:
    """The built-in access matrix: one permitted-layer set per feature, the
    default policy every deployment starts from."""
    return AccessMatrix(entries=dict(_DEFAULT_PERMITTED))


def access_allowed(
    matrix: AccessMatrix,
    layer: LayerId,
    feature: "FeatureKey | str",
    topology: TopologyMode,
) -> bool:
    """Whether ``layer`` may serve/report ``feature`` under the matrix.

    In the disjoint topology the resource manager additionally loses access
    to every workflow-owned feature, since the workflow system no longer
    shares its structures with it.
    """
    permitted = matrix.lookup(feature)
    if layer not in permitted:
        return False
    if (
        topology is TopologyMode.DISJOINT
        and layer is LayerId.RESOURCE_MANAGER
        and matrix.owning_layer(feature) is LayerId.WORKFLOW
    ):
        return False
    return True


@dataclass(frozen=True)
class CapabilityProfile:
    """The set of standard monitoring features one workflow system supports."""

    name: str
    supported: frozenset[FeatureKey]

    def __post_init__(self):
        for f in self.supported:
            if not isinstance(f, FeatureKey):
                raise BlueprintError(f"profile {self.name!r}: not a FeatureKey: {f!r}")


@dataclass(frozen=True)
class CoverageSummary:
    """Per-layer supported/total counts for a capability profile, plus the
    features the profile is missing."""

    per_layer: dict[LayerId, tuple[int, int]]
    missing: frozenset[FeatureKey]

    def supported_count(self, layer: LayerId) -> int:
        return self.per_layer[layer][0]

    def total_count(self, layer: LayerId) -> int:
        return self.per_layer[layer][1]


def classify_capabilities(profile: CapabilityProfile) -> CoverageSummary:
    """Score a profile against the standard feature set, layer by layer."""
    per_layer = {}
    for layer in ALL_LAYERS:
        owned = features_owned_by(layer)
        supported = sum(1 for f in owned if f in profile.supported)
        per_layer[layer] = (supported, len(owned))
    missing = frozenset(f for f in ALL_FEATURES if f not in profile.supported)
    return CoverageSummary(per_layer=per_layer, missing=missing)


def parse_matrix_overrides(text: str) -> AccessMatrix:
    """Parse an access-matrix override file and apply it over the default.

    One line per feature: ``<feature_key>: <layer>[,<layer>...]`` with layers
    spelled ``resource_manager|workflow|machine|task``.  A bare feature key
    must be one of the standard ones; unknown keys are an error.  New
    deployment-specific features are declared explicitly with an
    ``extension`` prefix: ``extension <name>: <layer>[,<layer>...]``.
    Blank lines and ``#`` comments are ignored.
    """
    entries = dict(_DEFAULT_PERMITTED)
    extensions: dict[str, frozenset[LayerId]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise MatrixFileError(lineno, f"expected '<feature>: <layers>', got {line!r}")
        key_part, _, layer_part = line.partition(":")
        key_part = key_part.strip()
        layer_names = [p.strip() for p in layer_part.split(",") if p.strip()]
        if not layer_names:
            raise MatrixFileError(lineno, "no layers listed")
        try:
            layers = frozenset(LayerId.from_wire(n) for n in layer_names)
        except UnknownLayerError as exc:
            raise MatrixFileError(lineno, str(exc)) from None
        if key_part.startswith("extension "):
            name = key_part[len("extension "):].strip()
            if not _EXTENSION_NAME_RE.match(name):
                raise MatrixFileError(lineno, f"bad extension name {name!r}")
            extensions[name] = layers
        else:
            try:
                feature = FeatureKey.from_wire(key_part)
            except UnknownFeatureError:
                raise UnknownFeatureError(key_part, line=lineno) from None
            entries[feature] = layers
    try:
        return AccessMatrix(entries=entries, extensions=extensions)
    except InvalidMatrixError as exc:
        raise InvalidMatrixError(f"override file: {exc}") from None


def parse_capability_profile(text: str, default_name: str = "profile") -> CapabilityProfile:
    """Parse a capability profile file: an optional ``name <text>`` line, then
    one standard feature key per line.  ``#`` comments and blanks ignored."""
    name = default_name
    supported = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("name "):
            name = line[len("name "):].strip()
            continue
        try:
            supported.add(FeatureKey.from_wire(line))
        except UnknownFeatureError:
            raise UnknownFeatureError(line, line=lineno) from None
    return CapabilityProfile(name=name, supported=frozenset(supported))


def render_matrix_grid(matrix: AccessMatrix, topology: TopologyMode) -> str:
    """Render the effective access matrix as a fixed-width x/· grid, one row
    per standard feature, columns in hierarchy order.  Byte-stable for equal
    inputs."""
    key_width = max(len(f.value) for f in ALL_FEATURES)
    headers = [l.wire_name for l in ALL_LAYERS]
    lines = ["{:<{w}}  {}".format("feature", " ".join(headers), w=key_width)]
    for feature in ALL_FEATURES:
        cells = []
        for layer in ALL_LAYERS:
            mark = "x" if access_allowed(matrix, layer, feature, topology) else "·"
            cells.append("{:<{w}}".format(mark, w=len(layer.wire_name)))
        lines.append("{:<{w}}  {}".format(feature.value, " ".join(cells), w=key_width))
    return "\n".join(lines) + "\n"
