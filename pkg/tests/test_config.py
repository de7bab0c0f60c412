import math

import pytest

from xqclme.config import RunConfig
from xqclme.errors import ConfigError


def test_roundtrip_through_ini():
    cfg = RunConfig(example="fiber", h=16.0, gamma_mode="uniform", enrich=False, spacings="32,16")
    back = RunConfig.from_ini(cfg.to_ini())
    assert back == cfg or (math.isnan(back.gamma_min) and back.to_ini() == cfg.to_ini())
    assert back.digest() == cfg.digest()


def test_digest_changes_with_settings():
    assert RunConfig().digest() != RunConfig(h=16.0).digest()


def test_digest_ignores_output_location():
    assert RunConfig(output="a").digest() == RunConfig(output="b/c").digest()


@pytest.mark.parametrize("kw", [
    {"h": 7.0}, {"h": 0.0}, {"example": "hexagon"}, {"scheme": "quadratic"},
    {"gamma_min": 5.0}, {"gamma_mode": "random"}, {"workers": 0}, {"u_d": -1.0},
    {"spacings": "32,abc"}, {"schemes": "linear-H,bogus"},
])
def test_invalid_values_rejected(kw):
    with pytest.raises(ConfigError):
        RunConfig(**kw).validate()


def test_h_message_names_the_constraint():
    with pytest.raises(ConfigError, match="must divide the 256 mm domain edge"):
        RunConfig(h=7.0).validate()


def test_ini_errors():
    with pytest.raises(ConfigError, match="unknown key"):
        RunConfig.from_ini("[run]\ncolour = red\n")
    with pytest.raises(ConfigError, match="belongs in section"):
        RunConfig.from_ini("[gamma]\nh = 8\n")
    with pytest.raises(ConfigError, match="invalid value"):
        RunConfig.from_ini("[run]\nh = eight\n")
    with pytest.raises(ConfigError):
        RunConfig.from_ini("not an ini file")
    with pytest.raises(ConfigError):
        RunConfig.from_file("/nonexistent/config.ini")


def test_overrides_skip_none():
    cfg = RunConfig(h=16.0).with_overrides(h=None, example="square")
    assert cfg.h == 16.0 and cfg.example == "square"
    with pytest.raises(ConfigError):
        RunConfig().with_overrides(colour="red")
    assert RunConfig.from_ini("[gamma]\nenrich = no\n").enrich is False
