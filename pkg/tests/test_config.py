"""Config parsing: totality, strictness, defaults, and round-tripping."""

import numpy as np
import pytest

from stochflow.config import (
    config_from_dict,
    field_from_config,
    measure_from_config,
    parse_config,
    serialize_config,
)
from stochflow.errors import ConfigError

MINIMAL = """\
kind: simulate
family: {name: gbm, params: {mu: 0.1, nu: 0.2}}
window: {s: 0.0, t_end: 1.0}
seed: 7
"""

FULL = """\
kind: limit
family: {name: gbm, params: {mu: 0.1, nu: 0.2}}
jump: {name: linjump, params: {scale: -0.5, dim: 1}}
measure: {atoms: [[1.0, 2.0], [-1.0, 0.5]]}
window: {s: 0.0, t_end: 2.0}
base_steps: 32
scheme: exact
space: {box: [[-2.0, 2.0]], grid_step: 0.25}
report: {epsilon: 0.5, beta_prime: 1.5, p: 3.0}
paths: 12
seed: 99
tolerances: {invert: 1.0e-9}
points: [[0.5], [1.5]]
limit: {n_values: [1, 2, 4], perturbation: sigma_scale}
partition: {m: 8, fd_step: 0.001, quad_order: 6}
output_dir: results
"""


def test_minimal_config_gets_documented_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.kind == "simulate"
    assert cfg.base_steps == 64
    assert cfg.scheme == "euler"
    assert cfg.paths == 1
    assert cfg.epsilon == 1.0
    assert cfg.beta_prime == 1.0
    assert cfg.p == 2.0
    assert cfg.measure_atoms == ()
    assert cfg.space_box is None
    assert cfg.invert_tol is None
    assert cfg.limit_n_values == (1, 2, 4, 8, 16)
    assert cfg.limit_perturbation == "drift_shift"
    assert cfg.partition_m == 16
    assert cfg.output_dir == "out"


def test_unknown_key_rejected_by_name():
    with pytest.raises(ConfigError, match="foo"):
        parse_config(MINIMAL + "foo: 1\n")
    with pytest.raises(ConfigError, match="family.params.zeta"):
        parse_config(MINIMAL.replace("nu: 0.2", "nu: 0.2, zeta: 3"))


def test_missing_required_keys():
    with pytest.raises(ConfigError, match="seed"):
        parse_config("kind: simulate\nfamily: {name: zero}\nwindow: {s: 0, t_end: 1}\n")
    with pytest.raises(ConfigError, match="family.params.mu"):
        parse_config(MINIMAL.replace("mu: 0.1, ", ""))


def test_range_violations():
    with pytest.raises(ConfigError, match="window.t_end"):
        parse_config(MINIMAL.replace("t_end: 1.0", "t_end: 0.0"))
    with pytest.raises(ConfigError, match="base_steps"):
        parse_config(MINIMAL + "base_steps: 0\n")
    with pytest.raises(ConfigError, match="report.beta_prime"):
        parse_config(MINIMAL + "report: {beta_prime: 2.5}\n")
    with pytest.raises(ConfigError, match="measure.atoms"):
        parse_config(MINIMAL + "measure: {atoms: [[1.0, -2.0]]}\n")
    with pytest.raises(ConfigError, match="partition.m"):
        parse_config(MINIMAL + "partition: {m: 12}\n")
    with pytest.raises(ConfigError, match="kind"):
        parse_config(MINIMAL.replace("kind: simulate", "kind: dance"))
    with pytest.raises(ConfigError, match="scheme"):
        parse_config(MINIMAL + "scheme: milstein\n")


def test_jump_section_restricted_to_jump_families():
    with pytest.raises(ConfigError, match="jump.name"):
        parse_config(MINIMAL + "jump: {name: gbm, params: {mu: 1, nu: 1}}\n")


def test_round_trip_identity():
    cfg = parse_config(FULL)
    again = parse_config(serialize_config(cfg))
    assert again == cfg
    # the minimal config round-trips through its materialized defaults
    cfg2 = parse_config(MINIMAL)
    assert parse_config(serialize_config(cfg2)) == cfg2


def test_invalid_yaml_and_empty_document():
    with pytest.raises(ConfigError, match="YAML"):
        parse_config("kind: [unclosed")
    with pytest.raises(ConfigError, match="empty"):
        parse_config("")
    with pytest.raises(ConfigError):
        config_from_dict(["not", "a", "mapping"])


def test_field_and_measure_construction():
    cfg = parse_config(FULL)
    field = field_from_config(cfg)
    assert field.has_jump
    assert field.dim == 1
    measure = measure_from_config(cfg)
    assert measure.total_rate == pytest.approx(2.5)
    x = np.array([[2.0]])
    np.testing.assert_allclose(field.jump(0.0, x, -1.0), [[1.0]])
