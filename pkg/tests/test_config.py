from fractions import Fraction

import pytest

from knowada.backends import CachedBackend, MockBackend
from knowada.config import RunConfig, build_handles, load_config, prompt_library
from knowada.errors import ConfigError

from conftest import write_config, write_mock_script


def test_defaults_without_config_file():
    config = load_config(None)
    assert config.m == 10
    assert config.temperature == 0.4
    assert config.threshold == Fraction(1, 5)
    assert config.contradiction_orientation == "formulas"


def test_load_config_values(tmp_path):
    config = load_config(write_config(tmp_path, m=6))
    assert config.m == 6
    assert config.threshold == Fraction(1, 5)  # "20%"
    assert config.seed == 7
    assert config.resolve_role("judge").type == "mock"
    assert config.config_hash() == load_config(write_config(tmp_path, m=6)).config_hash()


def test_config_hash_changes_with_content(tmp_path):
    first = load_config(write_config(tmp_path, m=6)).config_hash()
    second = load_config(write_config(tmp_path, m=7)).config_hash()
    assert first != second


def test_unknown_top_level_key_rejected(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text("samplig:\n  m: 3\n")
    with pytest.raises(ConfigError, match="unknown key"):
        load_config(path)


def test_unknown_role_rejected(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text("backends:\n  narrator:\n    type: mock\n    script: s.json\n")
    with pytest.raises(ConfigError, match="unknown backend role"):
        load_config(path)


def test_partial_roles_without_default_rejected(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text("backends:\n  judge:\n    type: mock\n    script: s.json\n")
    with pytest.raises(ConfigError, match="no backend configured for role"):
        load_config(path)


def test_backend_spec_validation():
    with pytest.raises(ConfigError):
        RunConfig(m=0)
    with pytest.raises(ConfigError):
        RunConfig(threshold=Fraction(3, 2))
    with pytest.raises(ConfigError):
        RunConfig(contradiction_orientation="sideways")


def test_mock_backend_requires_script(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text("backends:\n  default:\n    type: mock\n")
    with pytest.raises(ConfigError, match="script"):
        load_config(path)


def test_http_backend_requires_base_url(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text("backends:\n  default:\n    type: http\n")
    with pytest.raises(ConfigError, match="base_url"):
        load_config(path)


def test_build_handles_shares_backend_across_roles(tmp_path):
    config = load_config(write_config(tmp_path))
    handles = build_handles(config)
    backends = {id(h.backend) for h in handles.values()}
    assert len(backends) == 1  # one default spec, one concrete instance
    assert isinstance(handles["vlm"].backend, CachedBackend)
    assert isinstance(handles["vlm"].backend.inner, MockBackend)
    assert handles["vlm"].model_id == "scripted"


def test_build_handles_distinct_specs_get_distinct_backends(tmp_path):
    write_mock_script(tmp_path / "other.json")
    config = load_config(
        write_config(
            tmp_path,
            extra="  judge:\n    type: mock\n    script: other.json\n    model_id: judge-model\n",
        )
    )
    handles = build_handles(config)
    assert handles["judge"].backend is not handles["vlm"].backend
    assert handles["judge"].model_id == "judge-model"


def test_script_path_resolved_relative_to_config(tmp_path):
    nested = tmp_path / "configs"
    nested.mkdir()
    write_mock_script(nested / "mock-script.json")
    path = nested / "config.yaml"
    path.write_text("backends:\n  default:\n    type: mock\n    script: mock-script.json\n")
    handles = build_handles(load_config(path))
    assert isinstance(handles["vlm"].backend.inner, MockBackend)


def test_prompt_library_override_dir(tmp_path):
    prompts = tmp_path / "prompts"
    prompts.mkdir()
    (prompts / "judge.txt").write_text("short {caption} {question} {answer}")
    write_mock_script(tmp_path / "mock-script.json")
    path = tmp_path / "config.yaml"
    path.write_text(
        "prompts:\n  dir: prompts\nbackends:\n  default:\n    type: mock\n    script: mock-script.json\n"
    )
    config = load_config(path)
    library = prompt_library(config)
    assert library.render("judge", caption="c", question="q", answer="a") == "short c q a"
    # Templates without an override still come from the package.
    assert "JSON array" in library.template("question_gen")


def test_rate_limit_from_config(tmp_path):
    config = load_config(write_config(tmp_path, extra=""))
    assert config.requests_per_second is None
    path = tmp_path / "config2.yaml"
    write_mock_script(tmp_path / "mock-script.json")
    path.write_text(
        "rate_limit:\n  requests_per_second: 5\nbackends:\n  default:\n    type: mock\n    script: mock-script.json\n"
    )
    assert load_config(path).requests_per_second == 5
