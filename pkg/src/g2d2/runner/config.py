"""Experiment configuration: pydantic models, presets and the file loaders.

Two file formats are accepted:

- YAML (``.yaml``/``.yml``, and anything not listed below): nested sections or
  flat dotted keys such as ``operator.name: blur``.
- Plain ``key = value`` lines (``.cfg``, ``.conf``, ``.txt``, ``.ini``); values are
  typed with the YAML scalar rules, so ``seeds = [0, 1, 2]`` is a list.

Solver fields may also appear at the top level (``T = 8``). Duplicate and unknown
keys are rejected with the offending line number.
"""
from __future__ import annotations

import logging
import re
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from g2d2.core.errors import ConfigError
from g2d2.core.noise_process import DEFAULT_ENDPOINTS
from g2d2.core.sampler import SolverConfig

logger = logging.getLogger(__name__)

KEY_VALUE_SUFFIXES = {".cfg", ".conf", ".txt", ".ini"}

# Hyperparameters shared by every preset
_SHARED_PRESET = {"inner_iters": 30, "tau": 1.0, "gamma": 0.3}

PRESETS: Dict[str, Dict[str, Any]] = {
    "deblur": {**_SHARED_PRESET, "eta_kl_base": 3e-4, "lambda_kl": 2.0, "lr_base": 15.0, "lambda_lr": 1.0},
    "super_resolution": {
        **_SHARED_PRESET,
        "eta_kl_base": 3e-4,
        "lambda_kl": 2.0,
        "lr_base": 10.0,
        "lambda_lr": 1.0,
    },
    # Each step's optimum is q(z_0 | z_t, y) whenever that conditional factorizes
    "posterior": {
        "inner_iters": 100,
        "tau": 0.1,
        "gamma": 0.0,
        "eta_kl_base": 1.0,
        "lambda_kl": 0.0,
        "lr_base": 0.1,
        "lambda_lr": 0.0,
        "n_mc": 4,
        "optimizer": "adam",
        "likelihood_scale": "gaussian",
    },
}

KEY_PATTERN = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z_][A-Za-z0-9_]*)*$")

KeyPath = Tuple[str, ...]


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class PriorSpec(_Section):
    """Joint prior over clean token fields; ``rows`` pins an independent prior."""

    kind: Literal["independent", "markov_chain", "dirichlet"] = "markov_chain"
    K: int = Field(3, ge=1)
    d_z: int = Field(2, ge=1)
    coupling: float = 1.0
    concentration: float = Field(1.0, gt=0.0)
    rows: Optional[List[List[float]]] = None
    seed: int = 0

    @model_validator(mode="after")
    def check_rows(self) -> "PriorSpec":
        if self.rows is not None:
            if self.kind != "independent":
                raise ValueError("prior.rows is only used by the independent prior")
            if len(self.rows) != self.d_z or any(len(r) != self.K for r in self.rows):
                raise ValueError(f"prior.rows must be a {self.d_z} x {self.K} table")
        return self


class ScheduleSpec(_Section):
    alpha_bar_1: float = DEFAULT_ENDPOINTS[0]
    alpha_bar_T: float = DEFAULT_ENDPOINTS[1]
    gamma_bar_1: float = DEFAULT_ENDPOINTS[2]
    gamma_bar_T: float = DEFAULT_ENDPOINTS[3]


class CodebookSpec(_Section):
    d_b: int = Field(2, ge=1)
    scale: float = Field(1.0, gt=0.0)
    vectors: Optional[List[List[float]]] = None
    seed: int = 1


class DecoderSpec(_Section):
    kind: Literal["linear", "mlp", "identity"] = "linear"
    d_x0: Optional[int] = Field(None, ge=1)
    hidden: int = Field(8, ge=1)
    scale: float = Field(1.0, gt=0.0)
    seed: int = 2


class OperatorSpec(_Section):
    name: Literal["identity", "inpainting", "downsample", "blur", "matrix"] = "identity"
    kept: Optional[List[int]] = None
    factor: int = Field(2, ge=1)
    blur_len: int = Field(3, ge=1)
    blur_std: float = Field(1.0, gt=0.0)
    matrix: Optional[List[List[float]]] = None
    sigma_eta: float = Field(0.1, ge=0.0)

    @field_validator("blur_len")
    @classmethod
    def odd_blur(cls, v: int) -> int:
        if v % 2 == 0:
            raise ValueError("blur_len must be odd")
        return v


class InjectionSpec(_Section):
    """Force wrong unmasked tokens into ``dims`` of z_{at}."""

    at: int = Field(..., ge=0)
    dims: List[int] = Field(default_factory=lambda: [0])


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    prior: PriorSpec = Field(default_factory=PriorSpec)
    schedule: ScheduleSpec = Field(default_factory=ScheduleSpec)
    codebook: CodebookSpec = Field(default_factory=CodebookSpec)
    decoder: DecoderSpec = Field(default_factory=DecoderSpec)
    operator: OperatorSpec = Field(default_factory=OperatorSpec)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    denoiser: Literal["exact", "marginal", "uniform"] = "exact"
    inject: Optional[InjectionSpec] = None
    seeds: List[int] = Field(default_factory=lambda: [0], min_length=1)
    peak: Optional[float] = Field(None, gt=0.0)
    out: Optional[str] = None

    @property
    def d_x0(self) -> int:
        if self.decoder.kind == "identity" or self.decoder.d_x0 is None:
            return self.prior.d_z * self.codebook.d_b
        return self.decoder.d_x0

    @model_validator(mode="after")
    def check_dimensions(self) -> "ExperimentConfig":
        K, d_z, d_b, d_x0 = self.prior.K, self.prior.d_z, self.codebook.d_b, self.d_x0
        if self.codebook.vectors is not None:
            if len(self.codebook.vectors) != K or any(len(v) != d_b for v in self.codebook.vectors):
                raise ValueError(f"codebook.vectors must be a {K} x {d_b} table")
        if self.decoder.kind == "identity" and self.decoder.d_x0 not in (None, d_z * d_b):
            raise ValueError(f"the identity decoder outputs d_z * d_b = {d_z * d_b} values")
        op = self.operator
        if op.name == "inpainting":
            if not op.kept:
                raise ValueError("operator.kept must list at least one coordinate")
            if min(op.kept) < 0 or max(op.kept) >= d_x0:
                raise ValueError(f"operator.kept entries must lie in [0, {d_x0 - 1}]")
        if op.name == "downsample" and d_x0 % op.factor != 0:
            raise ValueError(f"operator.factor={op.factor} must divide d_x0={d_x0}")
        if op.name == "blur" and op.blur_len > d_x0:
            raise ValueError(f"operator.blur_len={op.blur_len} exceeds d_x0={d_x0}")
        if op.name == "matrix":
            if not op.matrix or any(len(row) != d_x0 for row in op.matrix):
                raise ValueError(f"operator.matrix needs rows of length d_x0={d_x0}")
        if self.inject is not None:
            if self.inject.at > self.solver.T:
                raise ValueError(f"inject.at={self.inject.at} exceeds T={self.solver.T}")
            if any(not 0 <= d < d_z for d in self.inject.dims):
                raise ValueError(f"inject.dims must lie in [0, {d_z - 1}]")
            if K < 2:
                raise ValueError("error injection needs K >= 2")
        return self


class _StrictLoader(yaml.SafeLoader):
    """SafeLoader that refuses duplicate mapping keys."""

    def construct_mapping(self, node: yaml.MappingNode, deep: bool = False) -> Dict[Any, Any]:
        seen: Dict[Any, int] = {}
        for key_node, _ in node.value:
            key = self.construct_object(key_node, deep=deep)
            line = key_node.start_mark.line + 1
            if key in seen:
                raise ConfigError(f"duplicate key {key!r} (first set on line {seen[key]})", line)
            seen[key] = line
        return super().construct_mapping(node, deep=deep)


def _yaml_lines(node: Optional[yaml.Node], prefix: KeyPath = ()) -> Dict[KeyPath, int]:
    lines: Dict[KeyPath, int] = {}
    if not isinstance(node, yaml.MappingNode):
        return lines
    for key_node, value_node in node.value:
        path = prefix + tuple(str(key_node.value).split("."))
        lines[path] = key_node.start_mark.line + 1
        lines.update(_yaml_lines(value_node, path))
    return lines


def _parse_yaml(text: str) -> Tuple[Dict[str, Any], Dict[KeyPath, int]]:
    try:
        node = yaml.compose(text, Loader=_StrictLoader)
        data = yaml.load(text, Loader=_StrictLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {getattr(exc, 'problem', exc)}", mark.line + 1 if mark else None) from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("the config file must contain a mapping at the top level", 1)
    return data, _yaml_lines(node)


def _parse_key_values(text: str) -> Tuple[Dict[str, Any], Dict[KeyPath, int]]:
    data: Dict[str, Any] = {}
    lines: Dict[KeyPath, int] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", number)
        key, value = (part.strip() for part in line.split("=", 1))
        if not KEY_PATTERN.match(key):
            raise ConfigError(f"invalid key {key!r}", number)
        if key in data:
            raise ConfigError(f"duplicate key {key!r} (first set on line {lines[tuple(key.split('.'))]})", number)
        try:
            data[key] = yaml.safe_load(value) if value else None
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse value for {key!r}: {value!r}", number) from exc
        lines[tuple(key.split("."))] = number
    return data, lines


def expand_dotted(data: Dict[str, Any], lines: Optional[Dict[KeyPath, int]] = None) -> Dict[str, Any]:
    """Turn ``{"operator.name": "blur"}`` into ``{"operator": {"name": "blur"}}``, recursively."""
    lines = lines or {}
    out: Dict[str, Any] = {}

    def place(path: KeyPath, value: Any) -> None:
        node = out
        for depth, part in enumerate(path[:-1]):
            existing = node.setdefault(part, {})
            if not isinstance(existing, dict):
                raise ConfigError(f"{'.'.join(path[: depth + 1])} is both a value and a section", lines.get(path))
            node = existing
        leaf = path[-1]
        if isinstance(value, dict):
            for key, inner in value.items():
                place(path + tuple(str(key).split(".")), inner)
            return
        if leaf in node:
            raise ConfigError(f"{'.'.join(path)} is set twice", lines.get(path))
        node[leaf] = value

    for key, value in data.items():
        place(tuple(str(key).split(".")), value)
    return out


def _hoist_solver_fields(data: Dict[str, Any], lines: Dict[KeyPath, int]) -> Dict[str, Any]:
    solver_fields = set(SolverConfig.model_fields)
    top = {k: v for k, v in data.items() if k in solver_fields}
    if not top:
        return data
    rest = {k: v for k, v in data.items() if k not in solver_fields}
    if not isinstance(rest.get("solver") or {}, dict):
        raise ConfigError("solver must be a section", lines.get(("solver",)))
    solver = dict(rest.get("solver") or {})
    for key, value in top.items():
        if key in solver:
            raise ConfigError(f"{key} is set both at the top level and in solver", lines.get((key,)))
        solver[key] = value
        if (key,) in lines:
            lines[("solver", key)] = lines[(key,)]
    rest["solver"] = solver
    return rest


def apply_preset(data: Dict[str, Any], preset: Optional[str]) -> Dict[str, Any]:
    """Fill solver hyperparameters from a named preset; explicit values win."""
    if preset is None:
        return data
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(sorted(PRESETS))}")
    section = data.get("solver") or {}
    if not isinstance(section, dict):
        raise ConfigError("solver must be a section")
    merged = dict(data)
    merged["solver"] = {**PRESETS[preset], **section}
    return merged


def _line_for(loc: Tuple[Any, ...], lines: Dict[KeyPath, int]) -> Optional[int]:
    path = tuple(str(part) for part in loc)
    while path:
        if path in lines:
            return lines[path]
        path = path[:-1]
    return None


def config_from_mapping(
    data: Dict[str, Any], lines: Optional[Dict[KeyPath, int]] = None, preset: Optional[str] = None
) -> ExperimentConfig:
    """Validate an already parsed mapping; ``preset`` overrides a ``preset`` key in the data."""
    lines = dict(lines or {})
    nested = _hoist_solver_fields(expand_dotted(data, lines), lines)
    file_preset = nested.pop("preset", None)
    nested = apply_preset(nested, preset or file_preset)
    try:
        return ExperimentConfig.model_validate(nested)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(part) for part in first["loc"]) or "config"
        raise ConfigError(f"{where}: {first['msg']}", _line_for(first["loc"], lines)) from exc


def load_config(path: Union[str, Path], preset: Optional[str] = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if path.suffix.lower() in KEY_VALUE_SUFFIXES:
        data, lines = _parse_key_values(text)
    else:
        data, lines = _parse_yaml(text)
    cfg = config_from_mapping(data, lines, preset)
    logger.info("Loaded config %s (%d seeds, variant %s)", path, len(cfg.seeds), cfg.solver.variant)
    return cfg
