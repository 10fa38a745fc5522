"""Tests for experiment config loading, validation and presets."""
import pytest

from g2d2.core.errors import ConfigError
from g2d2.runner.config import PRESETS, ExperimentConfig, config_from_mapping, expand_dotted, load_config

pytestmark = pytest.mark.unit


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_empty_file_gives_defaults(tmp_path):
    cfg = load_config(_write(tmp_path, "empty.yaml", ""))
    assert cfg == ExperimentConfig()
    assert cfg.solver.T == 20
    assert cfg.seeds == [0]
    assert cfg.d_x0 == 4


def test_yaml_nested_and_dotted_keys(tmp_path):
    text = """\
prior:
  kind: independent
  K: 2
  d_z: 2
  rows: [[0.5, 0.5], [0.2, 0.8]]
operator.name: inpainting
operator.kept: [0, 2]
solver:
  T: 5
  variant: markov
seeds: [3, 4]
"""
    cfg = load_config(_write(tmp_path, "exp.yaml", text))
    assert cfg.prior.kind == "independent"
    assert cfg.prior.rows == [[0.5, 0.5], [0.2, 0.8]]
    assert cfg.operator.name == "inpainting"
    assert cfg.operator.kept == [0, 2]
    assert cfg.solver.T == 5
    assert cfg.solver.variant == "markov"
    assert cfg.seeds == [3, 4]


def test_key_value_format(tmp_path):
    text = """\
# tiny downsampling run
prior.K = 2
prior.d_z = 2
T = 4
inner_iters = 3
variant = markov
seeds = [0, 1, 2]

operator.name = downsample   # factor 2 on d_x0 = 4
operator.factor = 2
"""
    cfg = load_config(_write(tmp_path, "exp.cfg", text))
    assert cfg.prior.K == 2
    assert cfg.solver.T == 4
    assert cfg.solver.inner_iters == 3
    assert cfg.solver.variant == "markov"
    assert cfg.seeds == [0, 1, 2]
    assert cfg.operator.factor == 2


def test_key_value_duplicate_reports_line(tmp_path):
    path = _write(tmp_path, "dup.cfg", "T = 4\n# again\nT = 5\n")
    with pytest.raises(ConfigError) as exc:
        load_config(path)
    assert exc.value.line == 3
    assert "duplicate key 'T'" in str(exc.value)
    assert "line 1" in str(exc.value)


def test_key_value_needs_equals(tmp_path):
    with pytest.raises(ConfigError) as exc:
        load_config(_write(tmp_path, "bad.conf", "T = 4\nvariant markov\n"))
    assert exc.value.line == 2


def test_yaml_duplicate_reports_line(tmp_path):
    with pytest.raises(ConfigError) as exc:
        load_config(_write(tmp_path, "dup.yaml", "seeds: [0]\nseeds: [1]\n"))
    assert exc.value.line == 2


def test_dotted_key_clashing_with_section(tmp_path):
    text = "operator:\n  name: blur\noperator.name: identity\n"
    with pytest.raises(ConfigError) as exc:
        load_config(_write(tmp_path, "clash.yaml", text))
    assert "set twice" in str(exc.value)
    assert exc.value.line == 3


def test_unknown_key_reports_line(tmp_path):
    with pytest.raises(ConfigError) as exc:
        load_config(_write(tmp_path, "unknown.cfg", "T = 4\nsolver.bogus = 1\n"))
    assert "solver.bogus" in str(exc.value)
    assert exc.value.line == 2

    with pytest.raises(ConfigError) as exc:
        load_config(_write(tmp_path, "unknown.yaml", "seeds: [0]\ncolour: red\n"))
    assert exc.value.line == 2


def test_top_level_solver_field_conflict(tmp_path):
    with pytest.raises(ConfigError, match="both at the top level and in solver"):
        load_config(_write(tmp_path, "conflict.yaml", "T: 4\nsolver:\n  T: 5\n"))


def test_invalid_yaml(tmp_path):
    with pytest.raises(ConfigError) as exc:
        load_config(_write(tmp_path, "broken.yaml", "seeds: [0, 1\n"))
    assert "invalid YAML" in str(exc.value)


def test_non_mapping_yaml(tmp_path):
    with pytest.raises(ConfigError, match="mapping"):
        load_config(_write(tmp_path, "list.yaml", "- 1\n- 2\n"))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.yaml")


def test_preset_from_file_and_override(tmp_path):
    path = _write(tmp_path, "preset.yaml", "preset: deblur\nsolver:\n  inner_iters: 5\n")
    cfg = load_config(path)
    assert cfg.solver.lr_base == PRESETS["deblur"]["lr_base"]
    # explicit values win over the preset
    assert cfg.solver.inner_iters == 5

    cfg = load_config(path, preset="super_resolution")
    assert cfg.solver.lr_base == PRESETS["super_resolution"]["lr_base"]

    with pytest.raises(ConfigError, match="unknown preset"):
        load_config(path, preset="denoise")


def test_posterior_preset_uses_gaussian_weight(tmp_path):
    cfg = load_config(_write(tmp_path, "post.yaml", "preset: posterior\n"))
    assert cfg.solver.optimizer == "adam"
    assert cfg.solver.inner_iters == 100
    assert cfg.solver.effective_likelihood_weight(0.5) == pytest.approx(2.0)
    assert cfg.solver.objective(1.0, sigma_eta=0.5).likelihood_weight == pytest.approx(2.0)
    with pytest.raises(ValueError):
        cfg.solver.effective_likelihood_weight(0.0)


def test_even_blur_length_rejected(tmp_path):
    text = "operator:\n  name: blur\n  blur_len: 2\n"
    with pytest.raises(ConfigError) as exc:
        load_config(_write(tmp_path, "blur.yaml", text))
    assert "blur_len" in str(exc.value)
    assert exc.value.line == 3


def test_dimension_checks():
    with pytest.raises(ConfigError, match="operator.kept"):
        config_from_mapping({"operator": {"name": "inpainting", "kept": [0, 4]}})
    with pytest.raises(ConfigError, match="must divide"):
        config_from_mapping({"prior.d_z": 3, "codebook.d_b": 1, "operator": {"name": "downsample", "factor": 2}})
    with pytest.raises(ConfigError, match="codebook.vectors"):
        config_from_mapping({"prior.K": 2, "codebook.vectors": [[0.0, 1.0]]})
    with pytest.raises(ConfigError, match="prior.rows"):
        config_from_mapping({"prior": {"kind": "markov_chain", "rows": [[1.0]]}})


def test_injection_validation():
    cfg = config_from_mapping({"T": 3, "inject": {"at": 3, "dims": [1]}})
    assert cfg.inject.at == 3
    with pytest.raises(ConfigError, match="inject.at"):
        config_from_mapping({"T": 3, "inject": {"at": 5}})
    with pytest.raises(ConfigError, match="inject.dims"):
        config_from_mapping({"inject": {"at": 1, "dims": [2]}})


def test_identity_decoder_dimension():
    cfg = config_from_mapping({"prior.d_z": 3, "codebook.d_b": 2, "decoder.kind": "identity"})
    assert cfg.d_x0 == 6
    with pytest.raises(ConfigError, match="identity decoder"):
        config_from_mapping({"decoder": {"kind": "identity", "d_x0": 5}})


def test_expand_dotted_nests():
    assert expand_dotted({"a.b.c": 1, "a": {"b.d": 2}}) == {"a": {"b": {"c": 1, "d": 2}}}
    with pytest.raises(ConfigError, match="both a value and a section"):
        expand_dotted({"a": 1, "a.b": 2})
