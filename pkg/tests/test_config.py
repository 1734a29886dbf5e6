import math

import pytest

from tankrl.config import ConfigError, RunConfig, dump_config, load_config, parse_config

# Constants of the reference simulation setup, frozen independently of the dataclass defaults.
REFERENCE = {
    ("env", "hole_ratio"): 0.0019,
    ("env", "pump_gain"): 0.12,
    ("env", "gravity"): 981.0,
    ("env", "input_min"): 0.0,
    ("env", "input_max"): 10.0,
    ("env", "sample_period"): 2.0,
    ("env", "goal_min"): 0.0,
    ("env", "goal_max"): 10.0,
    ("env", "steps_per_goal"): 200,
    ("prior", "kp"): 2.0,
    ("prior", "u0"): 5.0,
    ("ppo", "gamma"): 0.99,
    ("ppo", "gae_lambda"): 0.97,
    ("ppo", "clip_eps"): 0.2,
    ("ppo", "value_coef"): 1.0,
    ("ppo", "entropy_coef"): 0.02,
    ("ppo", "epochs"): 16,
    ("ppo", "minibatch_size"): 256,
    ("ppo", "learning_rate"): 3e-4,
    ("train", "goals_per_update"): 5,
    ("train", "steps_per_goal"): 200,
    ("train", "hidden_units"): 128,
    ("train", "hidden_layers"): 3,
}


def lookup(cfg: RunConfig, section, key):
    if section == "env":
        return getattr(cfg.env.params, key) if hasattr(cfg.env.params, key) else getattr(cfg.env, key)
    return getattr(getattr(cfg, section), key)


@pytest.mark.parametrize("section,key", sorted(REFERENCE))
def test_defaults_match_reference_setup(section, key):
    assert lookup(load_config(None), section, key) == REFERENCE[(section, key)]


def test_empty_file_equals_defaults(tmp_path):
    path = tmp_path / "empty.ini"
    path.write_text("")
    assert load_config(path) == RunConfig()


def test_echo_round_trip():
    cfg = parse_config("[train]\nseed = 7\nmode = plain_ppo\n[env]\noverflow_mode = yes\n[ppo]\nlearning_rate = 1e-4\n")
    assert parse_config(dump_config(cfg)) == cfg
    assert dump_config(parse_config(dump_config(cfg))) == dump_config(cfg)


def test_float_values_survive_echo_exactly():
    cfg = parse_config("[env]\nhole_ratio = 0.0019000000000000002\n")
    assert parse_config(dump_config(cfg)).env.params.hole_ratio == 0.0019000000000000002


def test_overrides_take_precedence():
    cfg = parse_config("[train]\nseed = 3\n", overrides={"train.seed": "9", "prior.kp": "1.5"})
    assert cfg.train.seed == 9 and cfg.prior.kp == 1.5


def test_prior_inherits_input_limits():
    cfg = parse_config("[env]\ninput_max = 8\n")
    assert cfg.prior.input_max == 8.0


def test_missing_file_names_path(tmp_path):
    missing = tmp_path / "nope.ini"
    with pytest.raises(ConfigError, match="nope.ini"):
        load_config(missing)


def test_bad_value_reports_line():
    text = "[ppo]\ngamma = 0.99\n\n[train]\nseed = one\n"
    with pytest.raises(ConfigError, match=r"cfg.ini:5: \[train\] seed"):
        parse_config(text, "cfg.ini")


def test_unknown_key_reports_line():
    with pytest.raises(ConfigError, match=r"cfg.ini:2: \[ppo\] gamm: unknown key"):
        parse_config("[ppo]\ngamm = 0.9\n", "cfg.ini")


@pytest.mark.parametrize("text", ["[nonsense]\na = 1\n", "[ppo]\ngamma = 0\n", "[train]\nmode = ppo\n",
                                  "[env]\noverflow_mode = maybe\n", "no section here\n"])
def test_invalid_configs_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_unknown_override():
    with pytest.raises(ConfigError, match="train.sed"):
        parse_config("", overrides={"train.sed": "1"})


def test_steady_state_default_is_finite():
    cfg = load_config(None)
    assert math.isfinite(cfg.env.params.steady_state(cfg.prior.u0))
