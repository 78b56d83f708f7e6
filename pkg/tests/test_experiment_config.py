import os
from unittest.mock import patch

import numpy as np
import pytest
import yaml

from kgcouple.config import get_bundled_config
from kgcouple.errors import ConfigParseError, ConfigValidationError
from kgcouple.experiment_config import (
    EXPERIMENTS,
    ExperimentConfig,
    FunctionalSpec,
    InitialStateConfig,
    lower_keys,
    parse_config,
    validate_config,
)


@pytest.fixture
def raw_config():
    return {
        "EXPERIMENT": "simulate",
        "SEED": 3,
        "MODEL": {
            "d": 1,
            "masses": [1.0],
            "omega": 1.5,
            "box_length": 8.0,
            "grid_n": 8,
            "profiles": [{"amplitude": 0.3, "support_radius": 1.0}],
        },
    }


def test_lower_keys_is_recursive():
    assert lower_keys({"A": {"B": [{"C": 1}]}, "d": 2}) == {"a": {"b": [{"c": 1}]}, "d": 2}


def test_validate_uppercase_sections(raw_config):
    config = validate_config(raw_config)
    assert config.experiment == "simulate"
    assert config.model.grid_n == 8
    assert config.dt == config.model.dt
    assert config.covariance.d == 1
    assert config.resolvent.contour().sigma == 0.1


def test_bundled_config_validates():
    config = validate_config(yaml.safe_load(get_bundled_config("kgcouple")))
    assert config.experiment in EXPERIMENTS
    assert config.model.box_length / 2 - config.model.max_support > config.scattering.horizon
    assert [f.id for f in config.functionals] == ["q1", "p1", "phi-bump", "pi-bump", "mixed"]
    assert config.ensemble.m == 200


def test_validation_collects_every_error(raw_config):
    raw_config["MODEL"]["grid_n"] = 9
    raw_config["TIME_GRID"] = {"times": [2.0, 1.0]}
    raw_config["BOGUS"] = 1
    with pytest.raises(ConfigValidationError) as exc:
        validate_config(raw_config)
    joined = "\n".join(exc.value.errors)
    assert len(exc.value.errors) == 3
    assert "model.grid_n" in joined and "grid_n must be even" in joined
    assert "time_grid.times" in joined
    assert "bogus" in joined
    assert str(exc.value).startswith("Invalid configuration:")


def test_missing_omega_is_reported(raw_config):
    del raw_config["MODEL"]["omega"]
    with pytest.raises(ConfigValidationError, match="model.omega: Field required"):
        validate_config(raw_config)


def test_equilibrium_needs_a_seed(raw_config):
    raw_config["EXPERIMENT"] = "equilibrium"
    raw_config["SEED"] = None
    with pytest.raises(ConfigValidationError, match="needs a seed"):
        validate_config(raw_config)


def test_covariance_dimension_must_match(raw_config):
    raw_config["COVARIANCE"] = {
        "c00": [[1.0, 0.0], [0.0, 1.0]],
        "c01": [[0.0, 0.0], [0.0, 0.0]],
        "c11": [[1.0, 0.0], [0.0, 1.0]],
    }
    with pytest.raises(ConfigValidationError, match="covariance has d=2 but model has d=1"):
        validate_config(raw_config)


def test_functional_ids_must_be_unique(raw_config):
    raw_config["FUNCTIONALS"] = [{"id": "a"}, {"id": "a", "u": [1.0, 0.0, 0.0]}]
    with pytest.raises(ConfigValidationError, match="unique"):
        validate_config(raw_config)


def test_support_guard_surfaces_in_config(raw_config):
    raw_config["MODEL"]["profiles"][0]["support_radius"] = 2.5
    with pytest.raises(ConfigValidationError, match="support guard"):
        validate_config(raw_config)


def test_plemelj_eps_must_decrease(raw_config):
    raw_config["PLEMELJ"] = {"eps": [1e-3, 1e-2]}
    with pytest.raises(ConfigValidationError, match="decreasing positive"):
        validate_config(raw_config)


def test_contour_aliasing_is_validated(raw_config):
    raw_config["RESOLVENT"] = {"sigma": 0.05, "dy": 0.05}
    with pytest.raises(ConfigValidationError, match="too coarse"):
        validate_config(raw_config)


def test_initial_state_build(raw_config):
    model = validate_config(raw_config).model
    state = InitialStateConfig(q0=(0.1, 0.2, 0.3), field_amplitude=2.0, field_radius=1.5).build(model)
    assert state.field.phi[0, 0, 0, 0] == pytest.approx(2.0)
    assert not np.any(state.field.pi)
    assert state.particle.q.tolist() == [0.1, 0.2, 0.3]
    quiet = InitialStateConfig(field_amplitude=0.0).build(model)
    assert not np.any(quiet.field.phi)


def test_functional_build(raw_config):
    model = validate_config(raw_config).model
    Z = FunctionalSpec(id="b", field_amplitude=1.0, field_slot=1, center=(2.0, 0.0, 0.0)).build(model)
    assert not np.any(Z.psi0)
    assert Z.psi1[0, 2, 0, 0] == pytest.approx(1.0)
    assert Z.psi1[0, 0, 0, 0] == 0.0
    with pytest.raises(ValueError, match="uses component 1 but d=1"):
        FunctionalSpec(id="c", component=1).build(model)


def test_echo_is_json_ready(raw_config):
    echo = validate_config(raw_config).echo()
    assert echo["model"]["profiles"][0]["amplitude"] == 0.3
    assert echo["time_grid"]["dt"] is None
    assert isinstance(echo["plemelj"]["eps"], list)


def test_parse_config_from_file(raw_config, clean_cwd):
    path = clean_cwd / "custom.yaml"
    path.write_text(yaml.safe_dump(raw_config))
    with patch.dict(os.environ, {"KGCOUPLE_SKIP_BUNDLED_CONFIG_LOAD": "true"}):
        config = parse_config(str(path))
    assert isinstance(config, ExperimentConfig)
    assert config.seed == 3


def test_parse_config_reports_yaml_position(clean_cwd):
    path = clean_cwd / "broken.yaml"
    path.write_text("MODEL:\n  omega: 1.5\n  masses: [1.0\n")
    with pytest.raises(ConfigParseError) as exc:
        parse_config(str(path))
    assert exc.value.line is not None
