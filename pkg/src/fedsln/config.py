"""Experiment configuration: sectioned key=value files and manifests.

Grammar: INI-style sections of ``key = value`` lines, ``#`` comments.

    [experiment]   methods, seeds, output_dir
    [model]        hidden_sizes
    [data]         source = synthetic | edge_lists
                   synthetic: nodes, communities, intra_p, inter_p
                   (comma lists, one entry per client)
                   edge_lists: paths (comma list of files)
    [split]        removal_fraction, train_fraction, negatives_per_positive
    [explain]      enabled, method, pairs_per_client, background_size
    [<method>]     per-method hyperparameter overrides

Method sections are centralized, fedavg, fedavg_ft, perfedavg_hf and
fedala. Unset hyperparameters fall back to the shipped per-method
defaults. The fedavg_ft section configures only the fine-tuning pass;
its federated phase always runs under the fedavg section. A resolved
configuration round-trips through run_manifest.json, and load_config
accepts either format (.json is treated as a manifest).
"""

from __future__ import annotations

import configparser
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .neural import DEFAULT_HIDDEN, TrainConfig

__all__ = [
    "ConfigError",
    "EdgeListSpec",
    "ExperimentConfig",
    "ExplainOptions",
    "METHOD_NAMES",
    "SplitOptions",
    "SyntheticSpec",
    "build_experiment_config",
    "config_to_manifest",
    "load_config",
    "manifest_to_config",
    "read_raw_sections",
]

METHOD_NAMES = ("centralized", "fedavg", "fedavg_ft", "perfedavg_hf", "fedala")

# Default hyperparameters per training regime.
_METHOD_DEFAULTS: dict[str, dict[str, Any]] = {
    "centralized": {"learning_rate": 1e-3, "epochs": 200, "batch_size": 256},
    "fedavg": {
        "learning_rate": 1e-3,
        "global_rounds": 30,
        "local_steps": 200,
        "batch_size": 256,
    },
    "fedavg_ft": {"learning_rate": 1e-4, "batch_size": 64},
    "perfedavg_hf": {
        "learning_rate": 1e-2,
        "batch_size": 256,
        "local_steps": 350,
        "global_rounds": 15,
    },
    "fedala": {
        "learning_rate": 1e-2,
        "global_rounds": 30,
        "local_steps": 100,
        "batch_size": 128,
        "ala_top_layers": 2,
        "ala_data_fraction": 80.0,
    },
}

# Parseable TrainConfig fields and their scalar types.
_TRAIN_FIELD_TYPES: dict[str, type] = {
    "learning_rate": float,
    "batch_size": int,
    "local_steps": int,
    "global_rounds": int,
    "epochs": int,
    "meta_inner": float,
    "meta_outer": float,
    "hf_delta": float,
    "ala_top_layers": int,
    "ala_data_fraction": float,
    "ala_weight_lr": float,
    "ala_convergence_tol": float,
    "ala_window": int,
    "ala_update_cap": int,
}

_BOOL_WORDS = {"true": True, "yes": True, "on": True, "1": True,
               "false": False, "no": False, "off": False, "0": False}


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class SyntheticSpec:
    """Per-client stochastic block model parameters."""

    nodes: tuple[int, ...]
    communities: tuple[int, ...]
    intra_p: tuple[float, ...]
    inter_p: tuple[float, ...]

    def __post_init__(self):
        lengths = {len(self.nodes), len(self.communities), len(self.intra_p), len(self.inter_p)}
        if lengths != {len(self.nodes)} or len(self.nodes) == 0:
            raise ConfigError("synthetic client lists must be non-empty and equally long")

    @property
    def n_clients(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class EdgeListSpec:
    """One edge-list file per client."""

    paths: tuple[str, ...]

    def __post_init__(self):
        if len(self.paths) == 0:
            raise ConfigError("need at least one edge-list path")

    @property
    def n_clients(self) -> int:
        return len(self.paths)


@dataclass(frozen=True)
class SplitOptions:
    removal_fraction: float = 0.2
    train_fraction: float = 0.8
    negatives_per_positive: float = 5.0

    def __post_init__(self):
        if not 0.0 <= self.removal_fraction <= 1.0:
            raise ConfigError("removal_fraction must lie in [0, 1]")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if self.negatives_per_positive < 0:
            raise ConfigError("negatives_per_positive must be non-negative")


@dataclass(frozen=True)
class ExplainOptions:
    """Shapley reporting knobs; explanations use the first seed's models."""

    enabled: bool = False
    method: str = "fedala"
    pairs_per_client: int = 20
    background_size: int = 100

    def __post_init__(self):
        if self.method not in METHOD_NAMES:
            raise ConfigError(f"unknown explain method {self.method!r}")
        if self.pairs_per_client < 1 or self.background_size < 1:
            raise ConfigError("explain sizes must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    data: SyntheticSpec | EdgeListSpec
    methods: tuple[str, ...] = ("centralized", "fedavg", "fedala")
    seeds: tuple[int, ...] = (1,)
    output_dir: str = "runs/experiment"
    hidden_sizes: tuple[int, ...] = DEFAULT_HIDDEN
    split: SplitOptions = field(default_factory=SplitOptions)
    explain: ExplainOptions = field(default_factory=ExplainOptions)
    train: dict[str, TrainConfig] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.methods) == 0:
            raise ConfigError("at least one method is required")
        for m in self.methods:
            if m not in METHOD_NAMES:
                raise ConfigError(f"unknown method {m!r}; valid: {METHOD_NAMES}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("duplicate methods")
        if len(self.seeds) == 0:
            raise ConfigError("at least one seed is required")
        if not self.output_dir:
            raise ConfigError("output_dir must be non-empty")
        if len(self.hidden_sizes) == 0 or any(h < 1 for h in self.hidden_sizes):
            raise ConfigError("hidden_sizes must be positive")
        # every method keeps a resolved TrainConfig, selected or not:
        # fedavg_ft's federated phase borrows the fedavg entry.
        for m in METHOD_NAMES:
            if m not in self.train:
                self.train[m] = _default_train_config(m, self.hidden_sizes)

    @property
    def n_clients(self) -> int:
        return self.data.n_clients


def _default_train_config(method: str, hidden_sizes: tuple[int, ...]) -> TrainConfig:
    return TrainConfig(hidden_sizes=tuple(hidden_sizes), **_METHOD_DEFAULTS[method])


def _convert(value: str, kind: type, context: str) -> Any:
    try:
        if kind is bool:
            word = value.strip().lower()
            if word not in _BOOL_WORDS:
                raise ValueError(value)
            return _BOOL_WORDS[word]
        return kind(value.strip())
    except ValueError as exc:
        raise ConfigError(f"{context}: cannot parse {value!r} as {kind.__name__}") from exc


def _convert_list(value: str, kind: type, context: str) -> tuple:
    items = [v for v in (part.strip() for part in value.split(",")) if v]
    if not items:
        raise ConfigError(f"{context}: empty list")
    return tuple(_convert(v, kind, context) for v in items)


def build_experiment_config(raw: dict[str, dict[str, Any]]) -> ExperimentConfig:
    """Assemble a resolved config from a nested section dict.

    Values may be already-typed (manifest path) or strings (INI or CLI
    path); strings are converted per the documented grammar.
    """
    known = {"experiment", "model", "data", "split", "explain", *METHOD_NAMES}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")

    def section(name: str) -> dict[str, Any]:
        return dict(raw.get(name, {}))

    exp = section("experiment")
    kwargs: dict[str, Any] = {}
    if "methods" in exp:
        kwargs["methods"] = _as_tuple(exp.pop("methods"), str, "experiment.methods")
    if "seeds" in exp:
        kwargs["seeds"] = _as_tuple(exp.pop("seeds"), int, "experiment.seeds")
    if "output_dir" in exp:
        kwargs["output_dir"] = str(exp.pop("output_dir"))
    if exp:
        raise ConfigError(f"unknown keys in [experiment]: {sorted(exp)}")

    model = section("model")
    hidden = DEFAULT_HIDDEN
    if "hidden_sizes" in model:
        hidden = _as_tuple(model.pop("hidden_sizes"), int, "model.hidden_sizes")
    if model:
        raise ConfigError(f"unknown keys in [model]: {sorted(model)}")
    kwargs["hidden_sizes"] = hidden

    data = section("data")
    source = str(data.pop("source", "synthetic"))
    if source == "synthetic":
        try:
            spec = SyntheticSpec(
                nodes=_as_tuple(data.pop("nodes"), int, "data.nodes"),
                communities=_as_tuple(data.pop("communities"), int, "data.communities"),
                intra_p=_as_tuple(data.pop("intra_p"), float, "data.intra_p"),
                inter_p=_as_tuple(data.pop("inter_p"), float, "data.inter_p"),
            )
        except KeyError as exc:
            raise ConfigError(f"synthetic data needs key {exc.args[0]!r}") from exc
    elif source == "edge_lists":
        try:
            spec = EdgeListSpec(paths=_as_tuple(data.pop("paths"), str, "data.paths"))
        except KeyError as exc:
            raise ConfigError("edge_lists data needs key 'paths'") from exc
    else:
        raise ConfigError(f"unknown data source {source!r}")
    if data:
        raise ConfigError(f"unknown keys in [data]: {sorted(data)}")

    split_raw = section("split")
    split_kwargs = {}
    for name in ("removal_fraction", "train_fraction", "negatives_per_positive"):
        if name in split_raw:
            split_kwargs[name] = _convert_scalar(split_raw.pop(name), float, f"split.{name}")
    if split_raw:
        raise ConfigError(f"unknown keys in [split]: {sorted(split_raw)}")

    explain_raw = section("explain")
    explain_kwargs: dict[str, Any] = {}
    if "enabled" in explain_raw:
        explain_kwargs["enabled"] = _convert_scalar(explain_raw.pop("enabled"), bool, "explain.enabled")
    if "method" in explain_raw:
        explain_kwargs["method"] = str(explain_raw.pop("method")).strip()
    for name in ("pairs_per_client", "background_size"):
        if name in explain_raw:
            explain_kwargs[name] = _convert_scalar(explain_raw.pop(name), int, f"explain.{name}")
    if explain_raw:
        raise ConfigError(f"unknown keys in [explain]: {sorted(explain_raw)}")

    train: dict[str, TrainConfig] = {}
    for method in METHOD_NAMES:
        overrides = section(method)
        values = dict(_METHOD_DEFAULTS[method])
        for key, value in overrides.items():
            if key not in _TRAIN_FIELD_TYPES:
                raise ConfigError(f"unknown key {key!r} in [{method}]")
            values[key] = _convert_scalar(value, _TRAIN_FIELD_TYPES[key], f"{method}.{key}")
        try:
            train[method] = TrainConfig(hidden_sizes=tuple(hidden), **values)
        except ValueError as exc:
            raise ConfigError(f"[{method}]: {exc}") from exc

    try:
        return ExperimentConfig(
            data=spec,
            split=SplitOptions(**split_kwargs),
            explain=ExplainOptions(**explain_kwargs),
            train=train,
            **kwargs,
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def _convert_scalar(value: Any, kind: type, context: str) -> Any:
    if isinstance(value, str):
        return _convert(value, kind, context)
    if kind is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{context}: expected a boolean")
    try:
        return kind(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{context}: cannot coerce {value!r}") from exc


def _as_tuple(value: Any, kind: type, context: str) -> tuple:
    if isinstance(value, str):
        if kind is str:
            items = [v for v in (p.strip() for p in value.split(",")) if v]
            if not items:
                raise ConfigError(f"{context}: empty list")
            return tuple(items)
        return _convert_list(value, kind, context)
    try:
        return tuple(kind(v) if kind is not str else str(v) for v in value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{context}: cannot coerce {value!r}") from exc


def read_raw_sections(path: str | Path) -> dict[str, dict[str, Any]]:
    """Parse a config file into its nested section dict, unvalidated."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    if path.suffix == ".json":
        raw = dict(json.loads(path.read_text()))
        raw.pop("fedsln_version", None)
        return raw
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return {name: dict(parser[name]) for name in parser.sections()}


def load_config(path: str | Path) -> ExperimentConfig:
    """Read a key=value config file or a run manifest (.json)."""
    return build_experiment_config(read_raw_sections(path))


def config_to_manifest(cfg: ExperimentConfig) -> dict[str, Any]:
    """Fully resolved configuration as a JSON-ready section dict."""
    from . import __version__

    data: dict[str, Any]
    if isinstance(cfg.data, SyntheticSpec):
        data = {
            "source": "synthetic",
            "nodes": list(cfg.data.nodes),
            "communities": list(cfg.data.communities),
            "intra_p": list(cfg.data.intra_p),
            "inter_p": list(cfg.data.inter_p),
        }
    else:
        data = {"source": "edge_lists", "paths": list(cfg.data.paths)}
    train: dict[str, Any] = {}
    for method in METHOD_NAMES:
        tc = cfg.train[method]
        entry = {}
        for f in fields(TrainConfig):
            if f.name in ("seed", "hidden_sizes"):
                continue
            entry[f.name] = getattr(tc, f.name)
        train[method] = entry
    return {
        "fedsln_version": __version__,
        "experiment": {
            "methods": list(cfg.methods),
            "seeds": list(cfg.seeds),
            "output_dir": cfg.output_dir,
        },
        "model": {"hidden_sizes": list(cfg.hidden_sizes)},
        "data": data,
        "split": asdict(cfg.split),
        "explain": asdict(cfg.explain),
        **{method: train[method] for method in METHOD_NAMES},
    }


def manifest_to_config(manifest: dict[str, Any]) -> ExperimentConfig:
    raw = dict(manifest)
    raw.pop("fedsln_version", None)
    return build_experiment_config(raw)


def with_seed(cfg: TrainConfig, seed: int) -> TrainConfig:
    """Copy of a training config bound to a master seed."""
    return replace(cfg, seed=seed)
