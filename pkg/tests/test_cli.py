import json

import pytest

from sense_forge.cli import main


def run(tmp_path, *args):
    return main(list(args) + ["--out", str(tmp_path)])


def test_simulate_writes_deterministic_files(tmp_path, capsys):
    args = ["simulate", "--model", "geometric", "--alpha", "0.5", "--n", "50", "--seed", "7", "--T", "0.1",
            "--dt", "0.01"]
    assert run(tmp_path / "a", *args) == 0
    assert run(tmp_path / "b", *args) == 0
    assert (tmp_path / "a" / "ensemble.csv").read_bytes() == (tmp_path / "b" / "ensemble.csv").read_bytes()
    meta = json.loads((tmp_path / "a" / "ensemble.json").read_text())
    assert meta["seed"] == 7 and meta["alpha"] == 0.5


def test_invalid_alpha_exits_2(tmp_path, capsys):
    assert run(tmp_path, "simulate", "--alpha", "1.5") == 2
    assert "alpha must lie in [0,1]" in capsys.readouterr().err


def test_domain_exit_budget_exits_3(tmp_path, capsys):
    code = run(tmp_path, "simulate", "--model", "geometric", "--model-params", '{"sigma": 3, "x_max": 5}',
               "--n", "200", "--dt", "0.01")
    assert code == 3


def test_transform_geometric_and_singular(tmp_path, capsys):
    assert run(tmp_path / "g", "transform", "--model", "geometric", "--chart", "tabulated",
               "--x-range", "0.1", "10") == 0
    report = json.loads((tmp_path / "g" / "validation.json").read_text())
    assert report["round_trip_error"] < 1e-8
    assert run(tmp_path / "s", "transform", "--noise", "x1", "--x-range", "-1", "1", "--x0", "0.5") == 4
    assert "not a zero point of b(x)" in capsys.readouterr().err


def test_transform_rank_variation_exits_5(tmp_path, capsys):
    code = run(tmp_path, "transform", "--noise", '[["1", "0"], ["0", "x2"]]', "--x0", "1", "0.5",
               "--x-range", "0.5", "2", "--x-range", "-1", "1")
    assert code == 5


def test_transform_unit_diffusion_emits_identity(tmp_path):
    assert run(tmp_path, "transform", "--model", "constant", "--model-params", '{"dim": 2}') == 0
    assert json.loads((tmp_path / "chart.json").read_text())["kind"] == "identity"


def test_fpe_alpha_changes_density_and_stability_exit(tmp_path, capsys):
    common = ["fpe", "--model", "geometric", "--grid-size", "64", "--T", "0.1", "--x-range", "0.2", "3"]
    assert run(tmp_path / "a0", *common, "--alpha", "0") == 0
    assert run(tmp_path / "a5", *common, "--alpha", "0.5") == 0
    last = "density_005.csv"
    assert (tmp_path / "a0" / last).read_bytes() != (tmp_path / "a5" / last).read_bytes()
    assert run(tmp_path / "bad", *common, "--fpe-dt", "0.01") == 6
    assert "max admissible dt" in capsys.readouterr().err


def test_verify_single_claim_and_report(tmp_path, capsys):
    assert run(tmp_path, "verify", "--claim", "drift_projection") == 0
    assert sorted(p.name for p in (tmp_path / "claims").iterdir()) == ["drift_projection.json"]
    assert run(tmp_path, "report") == 0
    assert "flagged-ambiguous" in capsys.readouterr().out


def test_verify_failing_claim_exits_1(tmp_path):
    assert run(tmp_path, "verify", "--claim", "spurious_identity", "--seed", "3") == 1


def test_verify_needs_a_selection(tmp_path):
    assert run(tmp_path, "verify") == 2


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"alpha": 0.0, "n_paths": 5, "T": 0.05, "dt": 0.01}))
    assert main(["simulate", "--config", str(cfg), "--alpha", "1", "--out", str(tmp_path / "o")]) == 0
    meta = json.loads((tmp_path / "o" / "ensemble.json").read_text())
    assert meta["alpha"] == 1.0 and meta["N"] == 5


def test_argparse_errors_exit_2():
    with pytest.raises(SystemExit) as info:
        main(["simulate", "--policy", "nope"])
    assert info.value.code == 2
