import pytest
from hypothesis import given
from hypothesis import strategies as st

from sense_forge.config import CLAIM_IDS, RunConfig, default_claims_config, merge_claims_config
from sense_forge.errors import ConfigError


@given(
    st.floats(0, 1),
    st.integers(1, 10**6),
    st.integers(0, 2**64 - 1),
    st.sampled_from(["absorb", "reflect", "abort"]),
    st.sampled_from(["geometric", "asinh", "constant"]),
    st.floats(1e-4, 1.0),
)
def test_parse_serialize_parse_is_identity(alpha, n, seed, policy, model, dt):
    cfg = RunConfig.from_dict(
        {"alpha": alpha, "n_paths": n, "seed": seed, "policy": policy, "model": model, "dt": dt, "T": 1.0}
    )
    assert RunConfig.from_json(cfg.to_json()) == cfg


@pytest.mark.parametrize(
    "field, value, message",
    [
        ("alpha", 1.5, "alpha must lie in [0,1]"),
        ("dt", -1.0, "dt"),
        ("n_paths", 0, "n_paths"),
        ("seed", -3, "seed"),
        ("policy", "bounce", "policy"),
        ("boundary", "open", "boundary"),
        ("x_range", [[2.0, 1.0]], "x_range"),
        ("model", "unknown", "model"),
        ("bogus", 1, "bogus"),
    ],
)
def test_invalid_fields_are_named(field, value, message):
    with pytest.raises(ConfigError) as info:
        RunConfig.from_dict({field: value})
    assert message in str(info.value)
    assert info.value.exit_code == 2


def test_flags_override_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text('{"alpha": 0.25, "n_paths": 10}')
    cfg = RunConfig.load(path, {"alpha": 0.75, "seed": None})
    assert cfg.alpha == 0.75 and cfg.n_paths == 10 and cfg.seed == 7


def test_x0_defaults_to_model_dimension():
    assert RunConfig(model="diag2d").x0 == [1.0, 1.0]
    with pytest.raises(ConfigError, match="x0"):
        RunConfig(model="diag2d", x0=[1.0])


def test_claims_config_merging():
    base = default_claims_config()
    assert tuple(base["enabled"]) == CLAIM_IDS
    merged = merge_claims_config({"sense_selection": {"thresholds": {"ks_half_max": 0.02}}}, seed=11)
    assert merged["seed"] == 11
    assert merged["sense_selection"]["thresholds"]["ks_half_max"] == 0.02
    assert merged["sense_selection"]["thresholds"]["separation_factor"] == 5.0
    with pytest.raises(ConfigError):
        merge_claims_config(enabled=["nope"])
