"""Experiment configuration: strict parsing, validation, serialization,
and construction of the library objects an experiment needs.

Configs are YAML documents with nested sections. Validation is total:
unknown keys are rejected, every numeric field is range-checked, and
errors name the offending key path. Omitted optional keys get the
documented defaults (see the README table); ``serialize_config`` always
emits a fully specified document, so parse -> serialize -> parse is the
identity on configs.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field, replace
from typing import Any

import numpy as np
import yaml

from . import families
from .coeffs import CoefficientField, MarkMeasure
from .errors import ConfigError

KINDS = (
    "simulate",
    "invert",
    "spde",
    "spde_bar",
    "partition",
    "limit",
    "moments",
    "assumptions",
)
SCHEMES = ("euler", "exact")
PERTURBATIONS = ("drift_shift", "sigma_scale")

# name -> {param: (kind, required, default)} with kinds
# float | int | vector | matrix
FAMILY_PARAM_SPECS: dict[str, dict[str, tuple[str, bool, Any]]] = {
    "zero": {"dim": ("int", False, 1), "brownian_count": ("int", False, 1)},
    "const": {"shift": ("vector", True, None), "brownian_count": ("int", False, 1)},
    "gbm": {"mu": ("float", True, None), "nu": ("float", True, None)},
    "affine": {
        "matrix": ("matrix", True, None),
        "shift": ("vector", False, None),
        "noise": ("matrix", False, None),
    },
    "rot": {"omega": ("float", False, 1.0)},
    "linjump": {"scale": ("float", True, None), "dim": ("int", False, 1)},
    "sinjump": {"amplitude": ("float", True, None), "dim": ("int", False, 1)},
}


@dataclass(frozen=True)
class FamilySpec:
    name: str
    params: tuple[tuple[str, Any], ...]

    def as_kwargs(self) -> dict:
        return {k: v for k, v in self.params}


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    family: FamilySpec
    jump: FamilySpec | None
    measure_atoms: tuple[tuple[float, float], ...]
    window_s: float
    window_t_end: float
    base_steps: int
    scheme: str
    space_box: tuple[tuple[float, float], ...] | None
    space_step: float | None
    epsilon: float
    beta_prime: float
    p: float
    paths: int
    seed: int
    invert_tol: float | None
    points: tuple[tuple[float, ...], ...] | None
    limit_n_values: tuple[int, ...]
    limit_perturbation: str
    partition_m: int
    partition_fd_step: float
    partition_quad_order: int
    output_dir: str = "out"


def _err(path: str, message: str) -> ConfigError:
    return ConfigError(f"{path}: {message}")


def _check_keys(mapping: dict, allowed, path: str):
    for key in mapping:
        if key not in allowed:
            raise _err(f"{path}.{key}" if path else str(key), "unknown key")


def _as_map(value, path: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise _err(path, "expected a mapping")
    return value


def _as_float(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise _err(path, f"expected a number, got {value!r}")
    v = float(value)
    if not np.isfinite(v):
        raise _err(path, "value must be finite")
    return v


def _as_int(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise _err(path, f"expected an integer, got {value!r}")
    return int(value)


def _as_vector(value, path: str) -> tuple[float, ...]:
    if not isinstance(value, (list, tuple)) or not value:
        raise _err(path, "expected a non-empty list of numbers")
    return tuple(_as_float(v, f"{path}[{i}]") for i, v in enumerate(value))


def _as_matrix(value, path: str) -> tuple[tuple[float, ...], ...]:
    if not isinstance(value, (list, tuple)) or not value:
        raise _err(path, "expected a non-empty list of rows")
    rows = tuple(_as_vector(r, f"{path}[{i}]") for i, r in enumerate(value))
    if len({len(r) for r in rows}) != 1:
        raise _err(path, "rows must share one length")
    return rows


def _parse_family(raw, path: str) -> FamilySpec:
    raw = _as_map(raw, path)
    _check_keys(raw, {"name", "params"}, path)
    if "name" not in raw:
        raise _err(f"{path}.name", "missing required key")
    name = raw["name"]
    if name not in FAMILY_PARAM_SPECS:
        raise _err(f"{path}.name", f"unknown family {name!r}")
    spec = FAMILY_PARAM_SPECS[name]
    params_raw = _as_map(raw.get("params"), f"{path}.params")
    _check_keys(params_raw, set(spec), f"{path}.params")
    parsed: list[tuple[str, Any]] = []
    for pname, (pkind, required, default) in spec.items():
        ppath = f"{path}.params.{pname}"
        if pname not in params_raw:
            if required:
                raise _err(ppath, "missing required key")
            if default is not None:
                parsed.append((pname, default))
            continue
        value = params_raw[pname]
        if pkind == "float":
            parsed.append((pname, _as_float(value, ppath)))
        elif pkind == "int":
            parsed.append((pname, _as_int(value, ppath)))
        elif pkind == "vector":
            parsed.append((pname, _as_vector(value, ppath)))
        elif pkind == "matrix":
            parsed.append((pname, _as_matrix(value, ppath)))
    return FamilySpec(name=name, params=tuple(parsed))


TOP_KEYS = {
    "kind",
    "family",
    "jump",
    "measure",
    "window",
    "base_steps",
    "scheme",
    "space",
    "report",
    "paths",
    "seed",
    "tolerances",
    "points",
    "limit",
    "partition",
    "output_dir",
}


def config_from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("top level: expected a mapping")
    _check_keys(doc, TOP_KEYS, "")
    for key in ("kind", "family", "window", "seed"):
        if key not in doc:
            raise _err(key, "missing required key")

    kind = doc["kind"]
    if kind not in KINDS:
        raise _err("kind", f"must be one of {KINDS}")

    family = _parse_family(doc["family"], "family")
    jump = None
    if doc.get("jump") is not None:
        jump = _parse_family(doc["jump"], "jump")
        if jump.name not in families.JUMP_FAMILIES:
            raise _err("jump.name", f"must be one of {families.JUMP_FAMILIES}")

    measure_raw = _as_map(doc.get("measure"), "measure")
    _check_keys(measure_raw, {"atoms"}, "measure")
    atoms: list[tuple[float, float]] = []
    for i, pair in enumerate(measure_raw.get("atoms") or []):
        row = _as_vector(pair, f"measure.atoms[{i}]")
        if len(row) != 2:
            raise _err(f"measure.atoms[{i}]", "expected [mark, rate]")
        if row[1] <= 0:
            raise _err(f"measure.atoms[{i}]", "rate must be positive")
        atoms.append((row[0], row[1]))

    window = _as_map(doc["window"], "window")
    _check_keys(window, {"s", "t_end"}, "window")
    if "s" not in window or "t_end" not in window:
        raise _err("window", "needs keys s and t_end")
    w_s = _as_float(window["s"], "window.s")
    w_t = _as_float(window["t_end"], "window.t_end")
    if w_t <= w_s:
        raise _err("window.t_end", "must exceed window.s")

    base_steps = _as_int(doc.get("base_steps", 64), "base_steps")
    if base_steps < 1:
        raise _err("base_steps", "must be >= 1")

    scheme = doc.get("scheme", "euler")
    if scheme not in SCHEMES:
        raise _err("scheme", f"must be one of {SCHEMES}")

    space_box = None
    space_step = None
    if doc.get("space") is not None:
        space = _as_map(doc["space"], "space")
        _check_keys(space, {"box", "grid_step"}, "space")
        if "box" not in space or "grid_step" not in space:
            raise _err("space", "needs keys box and grid_step")
        box = _as_matrix(space["box"], "space.box")
        for i, side in enumerate(box):
            if len(side) != 2 or side[1] <= side[0]:
                raise _err(f"space.box[{i}]", "expected [lo, hi] with hi > lo")
        space_step = _as_float(space["grid_step"], "space.grid_step")
        if space_step <= 0:
            raise _err("space.grid_step", "must be positive")
        space_box = box

    report = _as_map(doc.get("report"), "report")
    _check_keys(report, {"epsilon", "beta_prime", "p"}, "report")
    epsilon = _as_float(report.get("epsilon", 1.0), "report.epsilon")
    if epsilon <= 0:
        raise _err("report.epsilon", "must be positive")
    beta_prime = _as_float(report.get("beta_prime", 1.0), "report.beta_prime")
    if not 1.0 <= beta_prime <= 2.0:
        raise _err("report.beta_prime", "must lie in [1, 2]")
    p = _as_float(report.get("p", 2.0), "report.p")
    if p < 1.0:
        raise _err("report.p", "must be >= 1")

    paths = _as_int(doc.get("paths", 1), "paths")
    if paths < 1:
        raise _err("paths", "must be >= 1")
    seed = _as_int(doc["seed"], "seed")
    if seed < 0:
        raise _err("seed", "must be >= 0")

    tolerances = _as_map(doc.get("tolerances"), "tolerances")
    _check_keys(tolerances, {"invert"}, "tolerances")
    invert_tol = None
    if tolerances.get("invert") is not None:
        invert_tol = _as_float(tolerances["invert"], "tolerances.invert")
        if invert_tol <= 0:
            raise _err("tolerances.invert", "must be positive")

    points = None
    if doc.get("points") is not None:
        points = _as_matrix(doc["points"], "points")

    limit = _as_map(doc.get("limit"), "limit")
    _check_keys(limit, {"n_values", "perturbation"}, "limit")
    n_values = tuple(
        _as_int(v, f"limit.n_values[{i}]")
        for i, v in enumerate(limit.get("n_values", [1, 2, 4, 8, 16]))
    )
    if any(n < 1 for n in n_values) or list(n_values) != sorted(set(n_values)):
        raise _err("limit.n_values", "must be strictly increasing positive integers")
    perturbation = limit.get("perturbation", "drift_shift")
    if perturbation not in PERTURBATIONS:
        raise _err("limit.perturbation", f"must be one of {PERTURBATIONS}")

    partition = _as_map(doc.get("partition"), "partition")
    _check_keys(partition, {"m", "fd_step", "quad_order"}, "partition")
    part_m = _as_int(partition.get("m", 16), "partition.m")
    if part_m < 2 or part_m & (part_m - 1):
        raise _err("partition.m", "must be a power of two >= 2")
    fd_step = _as_float(partition.get("fd_step", 1e-3), "partition.fd_step")
    if fd_step <= 0:
        raise _err("partition.fd_step", "must be positive")
    quad_order = _as_int(partition.get("quad_order", 8), "partition.quad_order")
    if quad_order < 1:
        raise _err("partition.quad_order", "must be >= 1")

    output_dir = doc.get("output_dir", "out")
    if not isinstance(output_dir, str) or not output_dir:
        raise _err("output_dir", "expected a non-empty string")

    return ExperimentConfig(
        kind=kind,
        family=family,
        jump=jump,
        measure_atoms=tuple(atoms),
        window_s=w_s,
        window_t_end=w_t,
        base_steps=base_steps,
        scheme=scheme,
        space_box=space_box,
        space_step=space_step,
        epsilon=epsilon,
        beta_prime=beta_prime,
        p=p,
        paths=paths,
        seed=seed,
        invert_tol=invert_tol,
        points=points,
        limit_n_values=n_values,
        limit_perturbation=perturbation,
        partition_m=part_m,
        partition_fd_step=fd_step,
        partition_quad_order=quad_order,
        output_dir=output_dir,
    )


def parse_config(text: str) -> ExperimentConfig:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from exc
    if doc is None:
        raise ConfigError("empty config document")
    return config_from_dict(doc)


def _listify(value):
    if isinstance(value, tuple):
        return [_listify(v) for v in value]
    return value


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Fully specified plain-dict form (defaults materialized)."""
    doc: dict[str, Any] = {
        "kind": cfg.kind,
        "family": {"name": cfg.family.name, "params": {k: _listify(v) for k, v in cfg.family.params}},
        "window": {"s": cfg.window_s, "t_end": cfg.window_t_end},
        "base_steps": cfg.base_steps,
        "scheme": cfg.scheme,
        "report": {"epsilon": cfg.epsilon, "beta_prime": cfg.beta_prime, "p": cfg.p},
        "paths": cfg.paths,
        "seed": cfg.seed,
        "limit": {
            "n_values": list(cfg.limit_n_values),
            "perturbation": cfg.limit_perturbation,
        },
        "partition": {
            "m": cfg.partition_m,
            "fd_step": cfg.partition_fd_step,
            "quad_order": cfg.partition_quad_order,
        },
        "output_dir": cfg.output_dir,
    }
    if cfg.jump is not None:
        doc["jump"] = {"name": cfg.jump.name, "params": {k: _listify(v) for k, v in cfg.jump.params}}
    if cfg.measure_atoms:
        doc["measure"] = {"atoms": [[z, r] for z, r in cfg.measure_atoms]}
    if cfg.space_box is not None:
        doc["space"] = {"box": _listify(cfg.space_box), "grid_step": cfg.space_step}
    if cfg.invert_tol is not None:
        doc["tolerances"] = {"invert": cfg.invert_tol}
    if cfg.points is not None:
        doc["points"] = _listify(cfg.points)
    return doc


def serialize_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=True)


def _family_kwargs(spec: FamilySpec) -> dict:
    kwargs = {}
    for key, value in spec.params:
        if isinstance(value, tuple):
            kwargs[key] = np.asarray(value, dtype=float)
        else:
            kwargs[key] = value
    return kwargs


def field_from_config(cfg: ExperimentConfig) -> CoefficientField:
    base = families.FAMILY_BUILDERS[cfg.family.name](**_family_kwargs(cfg.family))
    if cfg.jump is None:
        return base
    jump_part = families.FAMILY_BUILDERS[cfg.jump.name](**_family_kwargs(cfg.jump))
    return families.with_jump(base, jump_part, measure_from_config(cfg))


def measure_from_config(cfg: ExperimentConfig) -> MarkMeasure:
    return MarkMeasure(cfg.measure_atoms)


def default_box(cfg: ExperimentConfig, dim: int):
    if cfg.space_box is not None:
        if len(cfg.space_box) != dim:
            raise ConfigError(
                f"space.box: has {len(cfg.space_box)} sides, family dimension is {dim}"
            )
        return cfg.space_box, cfg.space_step
    return tuple(((-1.0, 1.0),) * dim), 0.5


def with_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    return replace(cfg, seed=int(seed))
