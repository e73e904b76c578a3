"""Configuration loader for fairpoi experiments.

An experiment is described by a YAML file, for example:

    dataset:
      checkins: data/checkins.tsv
      social: data/social.tsv
      min_user_checkins: 15
      min_poi_visits: 10
    models: [mostpop, bpr, wmf, pf]
    bpr:
      learning_rate: [0.05, 0.01]   # lists declare a validation grid

Layers are merged: defaults → config file → CLI overrides (later layers win).
Unlike a lenient loader, every problem in the file is collected and reported
at once; unknown keys come with a close-match suggestion.
"""

import difflib
import hashlib
import itertools
import json
import types
import typing
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any, Union

import yaml

from fairpoi.errors import ConfigError

USER_GROUP_LABELS = ("very-inactive", "slightly-inactive", "slightly-active", "very-active")
ITEM_GROUP_LABELS = ("short-head", "mid-tail", "long-tail")

MODEL_KINDS = ("mostpop", "bpr", "wmf", "pf", "geosoca", "lore", "external")


def _default_user_targets() -> dict[str, list[float]]:
    return {
        "Pf0": [0.25, 0.25, 0.25, 0.25],
        "Pf1": [0.7, 0.1, 0.1, 0.1],
        "Pf2": [0.1, 0.7, 0.1, 0.1],
        "Pf3": [0.1, 0.1, 0.7, 0.1],
        "Pf4": [0.1, 0.1, 0.1, 0.7],
    }


def _default_item_targets() -> dict[str, list[float]]:
    third = 1.0 / 3.0
    return {
        "Pf0": [third, third, third],
        "Pf1": [0.7, 0.15, 0.15],
        "Pf2": [0.15, 0.7, 0.15],
        "Pf3": [0.15, 0.15, 0.7],
    }


@dataclass
class DatasetConfig:
    """Input files and the cold-start filters."""

    checkins: str | None = None
    social: str | None = None
    categories: str | None = None
    min_user_checkins: int = 15
    min_poi_visits: int = 10
    iterate: bool = False  # run the filters to a fixed point instead of one pass each


@dataclass
class SplitConfig:
    train_frac: float = 0.7
    valid_frac: float = 0.1


@dataclass
class SamplingConfig:
    fraction: float = 1.0


@dataclass
class GroupsConfig:
    user_thresholds: list[int] = field(default_factory=lambda: [19, 47, 94])
    item_shares: list[float] = field(default_factory=lambda: [0.5, 0.3, 0.2])


@dataclass
class MetricsConfig:
    k: int = 10
    beta: float = 0.5
    extra_betas: list[float] = field(default_factory=list)
    smoothing: float = 1.0
    epsilon: float = 1e-12
    limit_tolerance: float = 1e-9
    ndcg_scale: float = 10.0
    user_targets: dict[str, list[float]] = field(default_factory=_default_user_targets)
    item_targets: dict[str, list[float]] = field(default_factory=_default_item_targets)


@dataclass
class OutputConfig:
    dir: str = "out"
    progress: bool = False
    dump_components: bool = False


@dataclass
class ModelEntry:
    """One model of the roster; `name` labels its rows in the report."""

    name: str
    kind: str
    rankings: str | None = None


@dataclass
class MostPopConfig:
    pass


@dataclass
class BPRConfig:
    factors: int | list[int] = 32
    learning_rate: float | list[float] = 0.05
    regularization: float | list[float] = 0.01
    steps_per_interaction: int | list[int] = 30
    use_bias: bool = True


@dataclass
class WMFConfig:
    factors: int | list[int] = 32
    alpha: float | list[float] = 40.0
    regularization: float | list[float] = 0.1
    sweeps: int | list[int] = 15


@dataclass
class PFConfig:
    factors: int | list[int] = 32
    a: float | list[float] = 0.3
    b: float | list[float] = 0.3
    c: float | list[float] = 0.3
    e: float | list[float] = 0.3
    max_iter: int = 100
    tol: float = 1e-5


@dataclass
class GeoSoCaConfig:
    bandwidth: float | None = None  # km; None = Scott's rule per user
    adaptivity: float = 0.5
    min_bandwidth: float = 0.1
    geo_weight: float | list[float] = 1.0
    social_weight: float | list[float] = 1.0
    categorical_weight: float | list[float] = 1.0


@dataclass
class LoreConfig:
    bandwidth: float | None = None
    adaptivity: float = 0.5
    min_bandwidth: float = 0.1
    recency_base: float = 2.0
    max_gap: float | None = None  # seconds between consecutive check-ins
    sequential_weight: float | list[float] = 1.0
    geo_weight: float | list[float] = 1.0
    social_weight: float | list[float] = 1.0


def _default_models() -> list[ModelEntry]:
    return [ModelEntry(name=kind, kind=kind) for kind in ("mostpop", "bpr", "wmf", "pf")]


@dataclass
class ExperimentConfig:
    """Complete description of one benchmark run."""

    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    groups: GroupsConfig = field(default_factory=GroupsConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    models: list[ModelEntry] = field(default_factory=_default_models)
    mostpop: MostPopConfig = field(default_factory=MostPopConfig)
    bpr: BPRConfig = field(default_factory=BPRConfig)
    wmf: WMFConfig = field(default_factory=WMFConfig)
    pf: PFConfig = field(default_factory=PFConfig)
    geosoca: GeoSoCaConfig = field(default_factory=GeoSoCaConfig)
    lore: LoreConfig = field(default_factory=LoreConfig)
    seed: int = 42
    threads: int = 1

    def model_params(self, kind: str) -> Any:
        """Hyper-parameter section for a model kind."""
        return getattr(self, kind)


def _field_names(obj: Any, prefix: str) -> list[str]:
    names = []
    for f in fields(obj):
        names.append(f"{prefix}{f.name}")
    return names


def _suggest(key: str, candidates: list[str]) -> str:
    matches = difflib.get_close_matches(key, candidates, n=1, cutoff=0.6)
    return f" (did you mean '{matches[0]}'?)" if matches else ""


def _matches_type(value: Any, hint: Any) -> bool:
    """Check a YAML value against a dataclass field annotation."""
    origin = typing.get_origin(hint)
    if origin in (Union, types.UnionType):
        return any(_matches_type(value, arg) for arg in typing.get_args(hint))
    if hint is type(None):
        return value is None
    if hint is bool:
        return isinstance(value, bool)
    if hint is int:
        return isinstance(value, int) and not isinstance(value, bool)
    if hint is float:
        return isinstance(value, int | float) and not isinstance(value, bool)
    if hint is str:
        return isinstance(value, str)
    if origin is list:
        (item_hint,) = typing.get_args(hint)
        return isinstance(value, list) and all(_matches_type(v, item_hint) for v in value)
    if origin is dict:
        key_hint, value_hint = typing.get_args(hint)
        return isinstance(value, dict) and all(
            _matches_type(k, key_hint) and _matches_type(v, value_hint) for k, v in value.items()
        )
    return False


def _normalize(value: Any, hint: Any) -> Any:
    """Promote ints to floats where a float is declared so round-trips compare equal."""
    origin = typing.get_origin(hint)
    if origin in (Union, types.UnionType):
        for arg in typing.get_args(hint):
            if _matches_type(value, arg):
                return _normalize(value, arg)
        return value
    if hint is float:
        return float(value)
    if origin is list:
        (item_hint,) = typing.get_args(hint)
        return [_normalize(v, item_hint) for v in value]
    if origin is dict:
        _, value_hint = typing.get_args(hint)
        return {k: _normalize(v, value_hint) for k, v in value.items()}
    return value


def _apply_section(obj: Any, data: Any, prefix: str, problems: list[str]) -> None:
    """Apply a YAML mapping onto a settings dataclass, recording problems."""
    if data is None:
        return
    if not isinstance(data, dict):
        problems.append(f"'{prefix.rstrip('.')}' must be a mapping")
        return
    hints = typing.get_type_hints(type(obj))
    known = {f.name for f in fields(obj)}
    for key, value in data.items():
        dotted = f"{prefix}{key}"
        if key not in known:
            problems.append(f"unknown key '{dotted}'{_suggest(dotted, _field_names(obj, prefix))}")
            continue
        hint = hints[key]
        if not _matches_type(value, hint):
            problems.append(f"'{dotted}' has invalid value {value!r}")
            continue
        setattr(obj, key, _normalize(value, hint))


def _parse_models(data: Any, problems: list[str]) -> list[ModelEntry]:
    if not isinstance(data, list):
        problems.append("'models' must be a list")
        return _default_models()
    models = []
    for position, item in enumerate(data):
        if isinstance(item, str):
            models.append(ModelEntry(name=item, kind=item))
        elif isinstance(item, dict):
            unknown = set(item) - {"name", "kind", "rankings"}
            for key in sorted(unknown):
                problems.append(
                    f"unknown key 'models[{position}].{key}'{_suggest(key, ['name', 'kind', 'rankings'])}"
                )
            kind = item.get("kind", item.get("name"))
            name = item.get("name", kind)
            if not isinstance(name, str) or not isinstance(kind, str):
                problems.append(f"'models[{position}]' needs string 'name' and 'kind'")
                continue
            rankings = item.get("rankings")
            if rankings is not None and not isinstance(rankings, str):
                problems.append(f"'models[{position}].rankings' must be a path")
                rankings = None
            models.append(ModelEntry(name=name, kind=kind, rankings=rankings))
        else:
            problems.append(f"'models[{position}]' must be a model name or a mapping")
    return models


def _is_probability_vector(values: list[float], length: int) -> bool:
    return len(values) == length and all(v >= 0 for v in values) and abs(sum(values) - 1.0) < 1e-9


def validate_config(config: ExperimentConfig) -> list[str]:
    """Return every semantic problem of a type-checked config."""
    problems = []
    ds = config.dataset
    if ds.min_user_checkins < 1 or ds.min_poi_visits < 1:
        problems.append("dataset thresholds must be >= 1")
    sp = config.split
    if sp.train_frac <= 0 or sp.valid_frac <= 0 or sp.train_frac + sp.valid_frac >= 1:
        problems.append("split fractions must be positive with train_frac + valid_frac < 1")
    if not 0 < config.sampling.fraction <= 1:
        problems.append("sampling.fraction must be in (0, 1]")
    gr = config.groups
    if len(gr.user_thresholds) != 3 or any(a >= b for a, b in itertools.pairwise(gr.user_thresholds)):
        problems.append("groups.user_thresholds must be three strictly increasing counts")
    if len(gr.item_shares) != 3 or any(s <= 0 for s in gr.item_shares) or abs(sum(gr.item_shares) - 1) > 1e-9:
        problems.append("groups.item_shares must be three positive fractions summing to 1")
    mt = config.metrics
    if mt.k < 1:
        problems.append("metrics.k must be >= 1")
    if mt.smoothing < 0:
        problems.append("metrics.smoothing must be >= 0")
    if mt.epsilon <= 0:
        problems.append("metrics.epsilon must be > 0")
    for name, target in mt.user_targets.items():
        if not _is_probability_vector(target, len(USER_GROUP_LABELS)):
            problems.append(f"metrics.user_targets.{name} must be a probability vector over 4 user groups")
    for name, target in mt.item_targets.items():
        if not _is_probability_vector(target, len(ITEM_GROUP_LABELS)):
            problems.append(f"metrics.item_targets.{name} must be a probability vector over 3 item groups")
    if not mt.user_targets or not mt.item_targets:
        problems.append("metrics targets must not be empty")
    if config.threads < 1:
        problems.append("threads must be >= 1")
    names = [m.name for m in config.models]
    for duplicate in sorted({n for n in names if names.count(n) > 1}):
        problems.append(f"model name '{duplicate}' is listed more than once")
    for entry in config.models:
        if entry.kind not in MODEL_KINDS:
            problems.append(f"unknown model kind '{entry.kind}'{_suggest(entry.kind, list(MODEL_KINDS))}")
        elif entry.kind == "external" and not entry.rankings:
            problems.append(f"external model '{entry.name}' needs a 'rankings' path")
    if not config.models:
        problems.append("at least one model is required")
    return problems


def _resolve(path: str | None, base_dir: Path | None) -> str | None:
    if path is None or base_dir is None:
        return path
    candidate = Path(path).expanduser()
    return str(candidate if candidate.is_absolute() else (base_dir / candidate).resolve())


_SECTIONS = ("dataset", "split", "sampling", "groups", "metrics", "output") + tuple(
    kind for kind in MODEL_KINDS if kind != "external"
)


def config_from_mapping(
    data: dict[str, Any] | None,
    base_dir: Path | None = None,
    overrides: dict[str, Any] | None = None,
) -> ExperimentConfig:
    """Build a validated config from a parsed mapping plus dotted-key overrides."""
    config = ExperimentConfig()
    problems: list[str] = []
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("top level of the config must be a mapping")

    top_level = list(_SECTIONS) + ["models", "seed", "threads"]
    for key, value in data.items():
        if key in _SECTIONS:
            _apply_section(getattr(config, key), value, f"{key}.", problems)
        elif key == "models":
            config.models = _parse_models(value, problems)
        elif key in ("seed", "threads"):
            if isinstance(value, int) and not isinstance(value, bool):
                setattr(config, key, value)
            else:
                problems.append(f"'{key}' must be an integer")
        else:
            problems.append(f"unknown key '{key}'{_suggest(key, top_level)}")

    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.rpartition(".")
        if section:
            _apply_section(getattr(config, section), {key: value}, f"{section}.", problems)
        else:
            setattr(config, key, value)

    ds = config.dataset
    ds.checkins = _resolve(ds.checkins, base_dir)
    ds.social = _resolve(ds.social, base_dir)
    ds.categories = _resolve(ds.categories, base_dir)
    for entry in config.models:
        entry.rankings = _resolve(entry.rankings, base_dir)

    problems.extend(validate_config(config))
    if problems:
        raise ConfigError(problems)
    return config


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    """Load, merge and validate an experiment config.

    Merge order: defaults → YAML file → overrides (dotted keys such as
    ``sampling.fraction``).
    """
    data: dict[str, Any] = {}
    base_dir = None
    if path is not None:
        config_path = Path(path)
        try:
            text = config_path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file {config_path}: {exc}") from exc
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file {config_path} is not valid YAML: {exc}") from exc
        base_dir = config_path.resolve().parent
    return config_from_mapping(data, base_dir=base_dir, overrides=overrides)


def dump_config(config: ExperimentConfig) -> dict[str, Any]:
    """Serialize to a plain, YAML-safe mapping."""
    data = asdict(config)
    data["models"] = [
        {k: v for k, v in asdict(entry).items() if v is not None} for entry in config.models
    ]
    return data


def save_config(config: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(dump_config(config), sort_keys=False), encoding="utf-8")


def config_digest(config: ExperimentConfig) -> str:
    payload = json.dumps(dump_config(config), sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def grid_points(params: Any) -> list[dict[str, Any]]:
    """Expand list-valued hyper-parameters into the Cartesian grid.

    Example:
        >>> grid_points(WMFConfig(factors=[8, 16]))[1]["factors"]
        16
    """
    if not is_dataclass(params):
        raise TypeError("params must be a settings dataclass")
    names = [f.name for f in fields(params)]
    axes = []
    for name in names:
        value = getattr(params, name)
        axes.append(value if isinstance(value, list) else [value])
    return [dict(zip(names, combo, strict=True)) for combo in itertools.product(*axes)]

