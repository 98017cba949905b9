"""
SCKD-Discovery Configuration
Strict TOML experiment/sweep configs, dotted-path overrides and ablation presets.
Desk-scale Novel Class Discovery
"""

import copy
import dataclasses
try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib
import typing
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from .data import CsvSchema, SyntheticConfig
from .errors import ConfigurationError
from .evaluation import AGNOSTIC_MAPPINGS
from .model import ModelConfig
from .objective import TrainConfig

SOURCES = ("synthetic", "csv")

# SckdConfig field overrides per ablation preset.
PRESETS: Dict[str, Dict[str, Any]] = {
    "sckd": {},
    "baseline": {"beta": 0.0},
    "only_k_to_n": {"use_n_to_k": False},
    "only_n_to_k": {"use_k_to_n": False},
    "no_replica": {"use_replica": False},
    "average_s": {"score_mode": "average"},
    "random_s": {"score_mode": "random"},
}


@dataclass
class CsvSource:
    """CSV ingestion settings; without ``test_path`` the file is split 80/20 per class."""
    path: str = ""
    test_path: Optional[str] = None
    label_column: str = "label"
    known_classes: List[str] = field(default_factory=list)
    feature_columns: Optional[List[str]] = None
    split_seed: int = 0

    def to_schema(self) -> CsvSchema:
        return CsvSchema(
            label_column=self.label_column,
            known_classes=list(self.known_classes),
            feature_columns=list(self.feature_columns) if self.feature_columns else None,
        )


@dataclass
class EvalSchedule:
    """When and how to evaluate."""
    every: int = 0  # stage-2 epochs between evaluations; 0 evaluates only at the end
    agnostic_mapping: str = "restricted"
    train_novel: bool = True

    def validate(self):
        if self.every < 0:
            raise ConfigurationError(f"must be >= 0, got {self.every}", field="every")
        if self.agnostic_mapping not in AGNOSTIC_MAPPINGS:
            raise ConfigurationError(
                f"must be one of {AGNOSTIC_MAPPINGS}, got '{self.agnostic_mapping}'", field="agnostic_mapping"
            )


@dataclass
class ExperimentConfig:
    """One experiment: data source, model, training, evaluation and seeds."""
    name: str = "sckd"
    source: str = "synthetic"
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    csv: CsvSource = field(default_factory=CsvSource)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSchedule = field(default_factory=EvalSchedule)
    seeds: List[int] = field(default_factory=lambda: [0])
    output_dir: str = "results"
    workers: int = 1

    def validate(self):
        if self.source not in SOURCES:
            raise ConfigurationError(f"must be one of {SOURCES}, got '{self.source}'", field="source")
        if not self.seeds:
            raise ConfigurationError("at least one seed is required", field="seeds")
        if self.workers < 1:
            raise ConfigurationError(f"must be >= 1, got {self.workers}", field="workers")
        if self.source == "csv":
            if not self.csv.path:
                raise ConfigurationError("a CSV source needs a path", field="csv.path")
            if not self.csv.known_classes:
                raise ConfigurationError("known-class list must not be empty", field="csv.known_classes")
        if not self.output_dir:
            raise ConfigurationError("must not be empty", field="output_dir")


@dataclass
class SweepPoint:
    """
    One imbalance setting. Without explicit per-class counts the sweep's
    total sample budget is shared equally by all classes.
    """
    num_known: int
    num_novel: int
    samples_per_known_class: Optional[int] = None
    samples_per_novel_class: Optional[int] = None

    def validate(self):
        if self.num_known < 1 or self.num_novel < 1:
            raise ConfigurationError(
                f"need num_known >= 1 and num_novel >= 1, got {self.num_known}/{self.num_novel}"
            )

    @property
    def label(self) -> str:
        return f"{self.num_known}k/{self.num_novel}n"


@dataclass
class SweepSpec:
    """Sweep points, method presets and optional hyperparameter grids over a base experiment."""
    base: ExperimentConfig = field(default_factory=ExperimentConfig)
    points: List[SweepPoint] = field(default_factory=list)
    total_samples: int = 1000
    methods: List[str] = field(default_factory=lambda: ["baseline", "sckd"])
    alphas: List[float] = field(default_factory=list)
    betas: List[float] = field(default_factory=list)
    lams: List[float] = field(default_factory=list)

    def validate(self):
        if not self.points:
            raise ConfigurationError("a sweep needs at least one point", field="points")
        if self.total_samples < 1:
            raise ConfigurationError(f"must be >= 1, got {self.total_samples}", field="total_samples")
        for name in self.methods:
            if name not in PRESETS:
                raise ConfigurationError(f"unknown preset '{name}', expected one of {sorted(PRESETS)}", field="methods")


# ==================== Strict Building ====================

def _type_name(tp) -> str:
    return getattr(tp, "__name__", str(tp))


def _coerce(value: Any, tp, path: str) -> Any:
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        options = [t for t in typing.get_args(tp) if t is not type(None)]
        if value is None:
            return None
        return _coerce(value, options[0], path)
    if origin in (list, List):
        if not isinstance(value, list):
            raise ConfigurationError(f"expected a list, got {type(value).__name__}", field=path)
        (item_type,) = typing.get_args(tp)
        return [_coerce(item, item_type, f"{path}[{i}]") for i, item in enumerate(value)]
    if dataclasses.is_dataclass(tp):
        return build_dataclass(tp, value, path)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigurationError(f"expected true/false, got {value!r}", field=path)
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"expected an integer, got {value!r}", field=path)
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"expected a number, got {value!r}", field=path)
        return float(value)
    if tp is str:
        # class names may be written as bare integers
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return str(value)
        if not isinstance(value, str):
            raise ConfigurationError(f"expected a string, got {value!r}", field=path)
        return value
    raise ConfigurationError(f"unsupported field type {_type_name(tp)}", field=path)


def build_dataclass(cls, data: Any, path: str = ""):
    """
    Build ``cls`` from a mapping, rejecting unknown keys and ill-typed
    values, then run its ``validate`` if it has one. Errors name the
    dotted field path.
    """
    if not isinstance(data, dict):
        raise ConfigurationError(f"expected a table, got {type(data).__name__}", field=path or None)
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        where = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ConfigurationError(f"unknown key (allowed: {sorted(known)})", field=where)

    kwargs = {}
    for name, value in data.items():
        kwargs[name] = _coerce(value, hints[name], f"{path}.{name}" if path else name)
    try:
        obj = cls(**kwargs)
    except TypeError as e:
        raise ConfigurationError(f"missing required fields: {e}", field=path or None) from e

    if hasattr(obj, "validate"):
        try:
            obj.validate()
        except ConfigurationError as e:
            inner = e.field
            where = ".".join(p for p in (path, inner) if p) or None
            raise ConfigurationError(e.reason, field=where) from e
    return obj


def parse_value(text: str) -> Any:
    """A TOML literal (number, bool, string, array); anything else stays a plain string."""
    try:
        return tomllib.loads(f"value = {text}")["value"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(data: Dict[str, Any], overrides: List[str]) -> Dict[str, Any]:
    """
    Apply ``dotted.path=value`` overrides to a raw config mapping.

    Returns:
        A new mapping; ``data`` is left untouched.
    """
    data = copy.deepcopy(data)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigurationError(f"override '{item}' is not of the form key.path=value")
        key, text = item.split("=", 1)
        parts = [p for p in key.strip().split(".") if p]
        if not parts:
            raise ConfigurationError(f"override '{item}' has an empty key")
        node = data
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigurationError("cannot override inside a non-table value", field=key)
            node = child
        node[parts[-1]] = parse_value(text.strip())
    return data


def read_toml(path: str) -> Dict[str, Any]:
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"invalid TOML in {path}: {e}")


def experiment_from_dict(data: Dict[str, Any]) -> ExperimentConfig:
    return build_dataclass(ExperimentConfig, data)


def load_experiment(path: Optional[str] = None, overrides: Optional[List[str]] = None) -> ExperimentConfig:
    """Read, override and validate an experiment config (defaults when ``path`` is None)."""
    data = read_toml(path) if path else {}
    data.pop("sweep", None)
    return experiment_from_dict(apply_overrides(data, overrides or []))


def load_sweep(path: str, overrides: Optional[List[str]] = None) -> SweepSpec:
    """
    Read a sweep file: a full experiment config plus a ``[sweep]`` table
    holding points, methods and grids.
    """
    data = apply_overrides(read_toml(path), overrides or [])
    sweep = data.pop("sweep", None)
    if sweep is None:
        raise ConfigurationError("missing [sweep] table", field="sweep")
    if not isinstance(sweep, dict):
        raise ConfigurationError("expected a table", field="sweep")
    base = experiment_from_dict(data)
    if "base" in sweep:
        raise ConfigurationError("the base experiment lives at the top level", field="sweep.base")
    spec = build_dataclass(SweepSpec, {**sweep, "base": config_to_dict(base)}, "sweep")
    return spec


def config_to_dict(config) -> Dict[str, Any]:
    """Plain nested mapping of any config dataclass (for provenance)."""
    return dataclasses.asdict(config)


def apply_preset(config: ExperimentConfig, preset: str) -> ExperimentConfig:
    """Copy of ``config`` with the named ablation preset's SckdConfig overrides."""
    if preset not in PRESETS:
        raise ConfigurationError(f"unknown preset '{preset}', expected one of {sorted(PRESETS)}", field="preset")
    updated = copy.deepcopy(config)
    updated.train.sckd = dataclasses.replace(updated.train.sckd, **PRESETS[preset])
    updated.train.sckd.validate()
    return updated
