"""Algorithm/dataset/configuration models and combination expansion.

A mapping configuration binds one algorithm, one dataset sequence, parameter
values and a topic remap table into a single run recipe.  Combination specs
declare multiple values per key ("v1 | v2 | v3") plus linked option groups
for keys that modify the dataset itself (frame rate, resolution factor) and
therefore must change dependent parameters such as camera intrinsics in
lockstep.  Expansion takes the Cartesian product in a reproducible order.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

import yaml

SENSOR_MODES = {"mono", "mono-imu", "stereo", "stereo-imu", "rgbd", "lidar", "lidar-imu"}

VALUE_KINDS = {"integer", "real", "text", "flag"}

# Param keys whose values require a derived dataset; plain multi-values on
# these are rejected (dependent parameters would silently desynchronize).
DATASET_MODIFYING_KEYS = {"frame_rate", "resolution_factor"}

# Reserved combination axes that address configuration fields, not params.
FIELD_AXES = {"algorithm", "dataset", "sequence"}

DEFAULT_EXPANSION_CAP = 100_000


class ConfigError(Exception):
    """Base class for configuration modelling errors."""


class EmptyItem(ConfigError):
    """A multi-value list contains an empty item."""


class ProductTooLarge(ConfigError):
    """Combination expansion would exceed the configured cap."""


class UnknownDriverValue(ConfigError):
    """A linked-group driver value is not among the declared options."""


class DanglingReference(ConfigError):
    """A configuration references an unknown algorithm, dataset, sequence or topic."""


class InvalidCombination(ConfigError):
    """A combination spec violates its structural invariants."""


@dataclass(frozen=True)
class Parameter:
    """One template entry: key, default value and value kind."""

    key: str
    default: Any
    kind: str = "text"

    def __post_init__(self) -> None:
        if self.kind not in VALUE_KINDS:
            raise ConfigError(f"unknown value kind {self.kind!r} for {self.key!r}")


@dataclass(frozen=True)
class AlgorithmSpec:
    id: str
    name: str
    sensor_modes: frozenset[str]
    image_ref: str
    parameter_template: tuple[Parameter, ...] = ()

    def __post_init__(self) -> None:
        bad = self.sensor_modes - SENSOR_MODES
        if bad:
            raise ConfigError(f"unknown sensor modes {sorted(bad)}")
        keys = [p.key for p in self.parameter_template]
        if len(keys) != len(set(keys)):
            raise ConfigError(f"duplicate parameter keys in template of {self.id!r}")

    def kind_of(self, key: str) -> str | None:
        for p in self.parameter_template:
            if p.key == key:
                return p.kind
        return None

    def defaults(self) -> dict[str, Any]:
        return {p.key: p.default for p in self.parameter_template}


@dataclass(frozen=True)
class DatasetSpec:
    id: str
    name: str
    sequences: tuple[str, ...]
    topics: Mapping[str, str]
    ground_truth_ref: str
    native_rate: float
    native_resolution: tuple[int, int]

    def __post_init__(self) -> None:
        if self.native_rate <= 0:
            raise ConfigError(f"native_rate must be positive for {self.id!r}")
        w, h = self.native_resolution
        if w <= 0 or h <= 0:
            raise ConfigError(f"native_resolution must be positive for {self.id!r}")


@dataclass(frozen=True)
class MappingConfiguration:
    """One fully-bound run recipe."""

    id: str
    algorithm_id: str
    dataset_id: str
    sequence: str
    algorithm_params: Mapping[str, Any] = field(default_factory=dict)
    dataset_params: Mapping[str, Any] = field(default_factory=dict)
    remap: tuple[tuple[str, str], ...] = ()
    comb_parent: str | None = None

    def identity_key(self) -> tuple:
        """Value identity of the recipe, ignoring the configuration id."""
        return (
            self.algorithm_id,
            self.dataset_id,
            self.sequence,
            tuple(sorted(self.algorithm_params.items())),
            tuple(sorted(self.dataset_params.items())),
            self.remap,
        )


@dataclass(frozen=True)
class LinkedParameterGroup:
    """Driver key plus per-driver-value dependent overrides, applied atomically."""

    driver_key: str
    options: tuple[tuple[Any, Mapping[str, Any]], ...]

    def __post_init__(self) -> None:
        if not self.options:
            raise InvalidCombination(f"linked group {self.driver_key!r} has no options")
        values = [v for v, _ in self.options]
        if len(values) != len(set(map(repr, values))):
            raise InvalidCombination(f"duplicate driver values in group {self.driver_key!r}")

    def overrides_for(self, driver_value: Any) -> Mapping[str, Any]:
        for value, overrides in self.options:
            if value == driver_value:
                return overrides
        raise UnknownDriverValue(
            f"{driver_value!r} is not an option of group {self.driver_key!r}"
        )


@dataclass(frozen=True)
class CombinationSpec:
    id: str
    base: MappingConfiguration
    multi_values: Mapping[str, Sequence[Any]] = field(default_factory=dict)
    linked_groups: tuple[LinkedParameterGroup, ...] = ()


def split_multi_values(text: str) -> list[str]:
    """Split a '|'-separated value list, trimming whitespace.

    Order is preserved; empty items are an error.
    """
    if not text.strip():
        raise EmptyItem("empty multi-value text")
    items = [item.strip() for item in text.split("|")]
    if any(not item for item in items):
        raise EmptyItem(f"empty item in {text!r}")
    return items


def coerce_value(kind: str, text: str) -> Any:
    """Coerce a textual parameter value per its declared kind."""
    if kind == "integer":
        return int(text)
    if kind == "real":
        return float(text)
    if kind == "flag":
        lowered = text.strip().lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"not a flag value: {text!r}")
    return text


def _param_home(config: MappingConfiguration, key: str) -> str:
    in_alg = key in config.algorithm_params
    in_ds = key in config.dataset_params
    if in_alg and in_ds:
        raise InvalidCombination(f"key {key!r} exists in both parameter sections")
    if in_alg:
        return "algorithm_params"
    if in_ds:
        return "dataset_params"
    raise InvalidCombination(f"key {key!r} is not in the configuration template")


def _with_param(config: MappingConfiguration, key: str, value: Any) -> MappingConfiguration:
    home = _param_home(config, key)
    params = dict(getattr(config, home))
    params[key] = value
    return replace(config, **{home: params})


def apply_linked_group(
    config: MappingConfiguration, group: LinkedParameterGroup, driver_value: Any
) -> MappingConfiguration:
    """Set the driver key and all dependent overrides of one option atomically."""
    overrides = group.overrides_for(driver_value)
    out = _with_param(config, group.driver_key, driver_value)
    for key, value in overrides.items():
        out = _with_param(out, key, value)
    return out


def _axes(spec: CombinationSpec) -> list[tuple[str, list]]:
    """Expansion axes as (key, choices) with choices as appliers, sorted by key."""
    axes: list[tuple[str, list]] = []
    seen: set[str] = set()

    for key, values in spec.multi_values.items():
        if key in seen:
            raise InvalidCombination(f"duplicate axis {key!r}")
        seen.add(key)
        if not values:
            raise InvalidCombination(f"multi-value list for {key!r} is empty")
        if len(set(map(repr, values))) != len(list(values)):
            raise InvalidCombination(f"duplicate values for {key!r}")
        if key in FIELD_AXES:
            axes.append((key, [("field", key, v) for v in values]))
            continue
        if key in DATASET_MODIFYING_KEYS:
            raise InvalidCombination(
                f"{key!r} modifies the dataset; declare it as a linked group"
            )
        _param_home(spec.base, key)  # raises when the key is unknown
        axes.append((key, [("param", key, v) for v in values]))

    for group in spec.linked_groups:
        if group.driver_key in seen:
            raise InvalidCombination(f"duplicate axis {group.driver_key!r}")
        seen.add(group.driver_key)
        _param_home(spec.base, group.driver_key)
        for _, overrides in group.options:
            for key in overrides:
                _param_home(spec.base, key)
        axes.append(
            (group.driver_key, [("linked", group, value) for value, _ in group.options])
        )

    axes.sort(key=lambda ax: ax[0])
    return axes


def expansion_count(spec: CombinationSpec) -> int:
    """Number of configurations expand_combinations would produce."""
    count = 1
    for _, choices in _axes(spec):
        count *= len(choices)
    return count


def expand_combinations(
    spec: CombinationSpec, cap: int = DEFAULT_EXPANSION_CAP
) -> list[MappingConfiguration]:
    """Expand a combination spec into concrete configurations.

    The product runs over all multi-value keys and linked-group drivers, axes
    sorted by key name and values in declared order, so the output order and
    generated ids are reproducible.  Every output carries comb_parent.
    """
    axes = _axes(spec)
    total = 1
    for _, choices in axes:
        total *= len(choices)
    if total > cap:
        raise ProductTooLarge(f"expansion would produce {total} > cap {cap}")

    out: list[MappingConfiguration] = []
    for index, combo in enumerate(itertools.product(*(choices for _, choices in axes))):
        config = replace(spec.base, id=f"{spec.id}/{index:05d}", comb_parent=spec.id)
        for item in combo:
            tag = item[0]
            if tag == "field":
                _, key, value = item
                field_name = {"algorithm": "algorithm_id", "dataset": "dataset_id",
                              "sequence": "sequence"}[key]
                config = replace(config, **{field_name: value})
            elif tag == "param":
                _, key, value = item
                config = _with_param(config, key, value)
            else:
                _, group, value = item
                config = apply_linked_group(config, group, value)
        out.append(config)
    return out


class Catalog:
    """In-memory registry of algorithms and datasets."""

    def __init__(self) -> None:
        self.algorithms: dict[str, AlgorithmSpec] = {}
        self.datasets: dict[str, DatasetSpec] = {}

    def add_algorithm(self, spec: AlgorithmSpec) -> None:
        if spec.id in self.algorithms:
            raise ConfigError(f"algorithm id {spec.id!r} already registered")
        self.algorithms[spec.id] = spec

    def add_dataset(self, spec: DatasetSpec) -> None:
        if spec.id in self.datasets:
            raise ConfigError(f"dataset id {spec.id!r} already registered")
        self.datasets[spec.id] = spec

    def validate_config(self, config: MappingConfiguration) -> None:
        """Check referential integrity and dataset-parameter ranges."""
        algorithm = self.algorithms.get(config.algorithm_id)
        if algorithm is None:
            raise DanglingReference(f"unknown algorithm {config.algorithm_id!r}")
        dataset = self.datasets.get(config.dataset_id)
        if dataset is None:
            raise DanglingReference(f"unknown dataset {config.dataset_id!r}")
        if config.sequence not in dataset.sequences:
            raise DanglingReference(
                f"dataset {dataset.id!r} has no sequence {config.sequence!r}"
            )
        for source, _target in config.remap:
            if source not in dataset.topics.values():
                raise DanglingReference(f"remap source topic {source!r} not in dataset")
        rate = config.dataset_params.get("frame_rate")
        if rate is not None and float(rate) > dataset.native_rate:
            raise ConfigError(
                f"frame_rate {rate} exceeds native rate {dataset.native_rate}"
            )
        factor = config.dataset_params.get("resolution_factor")
        if factor is not None and not 0 < float(factor) <= 1:
            raise ConfigError(f"resolution_factor {factor} outside (0, 1]")


def render_unified_config(config: MappingConfiguration, catalog: Catalog) -> str:
    """Render the unified per-run configuration document.

    The document has five sections (algorithm, dataset, algorithm_params,
    dataset_params, remap) and is serialized canonically with sorted keys,
    so identical configurations produce byte-identical documents.
    """
    catalog.validate_config(config)
    algorithm = catalog.algorithms[config.algorithm_id]
    dataset = catalog.datasets[config.dataset_id]
    doc = {
        "id": config.id,
        "comb_parent": config.comb_parent,
        "algorithm": {
            "id": algorithm.id,
            "name": algorithm.name,
            "image": algorithm.image_ref,
        },
        "dataset": {
            "id": dataset.id,
            "name": dataset.name,
            "sequence": config.sequence,
            "ground_truth": dataset.ground_truth_ref,
        },
        "algorithm_params": dict(config.algorithm_params),
        "dataset_params": dict(config.dataset_params),
        "remap": [{"from": src, "to": dst} for src, dst in config.remap],
    }
    return yaml.safe_dump(doc, sort_keys=True, default_flow_style=False)


def _auto_coerce(text: str) -> Any:
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def config_from_document(doc: Mapping[str, Any]) -> MappingConfiguration:
    """Build a configuration from its flat document form (API/CLI input)."""
    remap_raw = doc.get("remap") or []
    remap = []
    for entry in remap_raw:
        if isinstance(entry, Mapping):
            remap.append((entry["from"], entry["to"]))
        else:
            src, dst = entry
            remap.append((src, dst))
    return MappingConfiguration(
        id=str(doc["id"]),
        algorithm_id=str(doc["algorithm_id"]),
        dataset_id=str(doc["dataset_id"]),
        sequence=str(doc["sequence"]),
        algorithm_params=dict(doc.get("algorithm_params") or {}),
        dataset_params=dict(doc.get("dataset_params") or {}),
        remap=tuple(remap),
        comb_parent=doc.get("comb_parent"),
    )


def config_to_document(config: MappingConfiguration) -> dict:
    return {
        "id": config.id,
        "algorithm_id": config.algorithm_id,
        "dataset_id": config.dataset_id,
        "sequence": config.sequence,
        "algorithm_params": dict(config.algorithm_params),
        "dataset_params": dict(config.dataset_params),
        "remap": [{"from": src, "to": dst} for src, dst in config.remap],
        "comb_parent": config.comb_parent,
    }


def combination_spec_from_document(doc: Mapping[str, Any]) -> CombinationSpec:
    """Build a combination spec from its document form.

    multi_values entries may be lists or '|'-separated strings; string items
    are coerced to int/float when they parse as numbers.  Linked groups use
    {driver, options: [{value, overrides}]}.
    """
    base = config_from_document({**doc["base"], "id": doc["base"].get("id", doc["id"])})
    multi_values: dict[str, list[Any]] = {}
    for key, raw in (doc.get("multi_values") or {}).items():
        if isinstance(raw, str):
            values: list[Any] = [_auto_coerce(item) for item in split_multi_values(raw)]
        else:
            values = list(raw)
        multi_values[str(key)] = values
    groups = []
    for group_doc in doc.get("linked_groups") or []:
        options = tuple(
            (opt["value"], dict(opt.get("overrides") or {}))
            for opt in group_doc["options"]
        )
        groups.append(LinkedParameterGroup(str(group_doc["driver"]), options))
    return CombinationSpec(
        id=str(doc["id"]),
        base=base,
        multi_values=multi_values,
        linked_groups=tuple(groups),
    )


def parse_unified_config(text: str) -> MappingConfiguration:
    """Parse a unified configuration document back into a MappingConfiguration."""
    doc = yaml.safe_load(text)
    required = ("algorithm", "dataset", "algorithm_params", "dataset_params", "remap")
    missing = [k for k in required if k not in doc]
    if missing:
        raise ConfigError(f"unified config missing sections: {missing}")
    return MappingConfiguration(
        id=doc.get("id") or "",
        algorithm_id=doc["algorithm"]["id"],
        dataset_id=doc["dataset"]["id"],
        sequence=doc["dataset"]["sequence"],
        algorithm_params=dict(doc["algorithm_params"] or {}),
        dataset_params=dict(doc["dataset_params"] or {}),
        remap=tuple((r["from"], r["to"]) for r in (doc["remap"] or [])),
        comb_parent=doc.get("comb_parent"),
    )
