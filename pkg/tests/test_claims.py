import json

import numpy as np
import pytest

from sense_forge.claims import (
    ClaimReport,
    Measurement,
    claim_drift_projection,
    identity_deviation,
    identity_family,
    run_all,
    run_claim,
    summary_markdown,
)
from sense_forge.config import CLAIM_IDS, default_claims_config

# small versions of the expensive claims; thresholds stay at their defaults
SMALL = {
    "sense_selection": {
        "n_paths": 4000, "dt": 0.01, "replications": 2, "pathwise_paths": 50, "control": {"n_paths": 2000}
    },
    "fpe_alpha_independence": {"grid": {"size": 128}, "refined_size": 256, "control": {"grid": {"size": 64}}},
    "alpha_integral_moments": {"n_samples": 20000},
    "transformed_asp_zero": {"points": 100, "numeric_points": 50, "grid_size": 257},
}


@pytest.fixture(scope="module")
def small_reports():
    return {r.claim_id: r for r in run_all(SMALL)}


def test_run_all_returns_one_report_per_enabled_claim(small_reports):
    assert tuple(small_reports) == CLAIM_IDS
    reduced = run_all(dict(SMALL, enabled=["drift_projection", "spurious_identity"]))
    assert [r.claim_id for r in reduced] == ["spurious_identity", "drift_projection"]


def test_thresholds_come_from_config_verbatim(small_reports):
    defaults = default_claims_config()
    for cid, report in small_reports.items():
        listed = {t["name"]: t["value"] for t in report.to_dict()["thresholds"]}
        assert listed == defaults[cid].get("thresholds", {})
        for m in report.measurements:
            if m.relation != "info" and isinstance(m.threshold, float) and m.name != "l1_half_refined":
                assert m.threshold in listed.values()


def test_small_sense_selection_prefers_half(small_reports):
    report = small_reports["sense_selection"]
    for row in report.table:
        ks = list(row["ks"].values())
        assert int(np.argmin(ks)) == 2
    assert report.verdict == "pass"


def test_small_fpe_route_prefers_half(small_reports):
    values = {m.name: m.value for m in small_reports["fpe_alpha_independence"].measurements}
    assert values["argmin_alpha"] == 0.5
    assert values["l1_half"] < values["l1_alpha_0"] / 5


def test_spurious_identity_reports_the_symmetric_counterexample(small_reports):
    report = small_reports["spurious_identity"]
    table = {row["family"]: row for row in report.table}
    for family in ("diagonal", "diagonal_3d", "scalar_times_constant"):
        assert table[family]["analytic"] < 1e-12
    assert table["symmetric_polynomial"]["analytic"] > 1e-2
    assert table["raw_asymmetric"]["informational"]
    assert report.verdict == "fail"


def test_identity_family_derivatives_are_consistent():
    rng = np.random.default_rng(0)
    for name in ("diagonal", "scalar_times_constant", "symmetric_polynomial", "symmetrized_asymmetric"):
        noise = identity_family(name, rng)
        x = rng.uniform(-1, 1, size=(10, noise.rows))
        np.testing.assert_allclose(noise.derivative(x), noise.fd_derivative(x), atol=1e-7)
        assert abs(identity_deviation(noise, x) - identity_deviation(noise, x, True)) < 1e-6


def test_drift_projection_table_and_verdict():
    cfg = default_claims_config()["drift_projection"]
    report = claim_drift_projection(cfg, 7)
    assert report.verdict == "flagged-ambiguous"
    assert len(report.table) == len(cfg["betas"]) * (1 + len(cfg["alphas"]))
    rows = {(r["beta"], r["rule"], r["alpha"]): r for r in report.table}
    assert rows[(0.0, "tensor", None)]["a_star"] == pytest.approx(0.0, abs=1e-12)
    assert rows[(0.5, "tensor", None)]["a_star"] == pytest.approx(0.25, rel=1e-12)
    assert rows[(-0.5, "ito", 1.0)]["a_star"] == pytest.approx(0.0, abs=1e-9)
    assert rows[(0.25, "ito", 0.0)]["a_star"] == pytest.approx(-0.125, abs=1e-9)


def test_small_moments_claim_passes(small_reports):
    assert small_reports["alpha_integral_moments"].verdict == "pass"
    assert small_reports["transformed_asp_zero"].verdict == "pass"


def test_verdict_is_a_function_of_measurements():
    report = ClaimReport("x", {}, {"t": 1.0})
    assert report.verdict == "fail"
    report.measure("a", 0.5, "t", "<")
    report.measure("b", 3.0)
    assert report.verdict == "pass"
    report.measurements.append(Measurement("c", 2.0, 1.0, "<"))
    assert report.verdict == "fail"
    report.ambiguous = True
    assert report.verdict == "flagged-ambiguous"


def test_failing_claim_does_not_stop_the_batch():
    bad = {"drift_projection": {"sigma": "oops"}, "enabled": ["drift_projection", "spurious_identity"]}
    reports = {r.claim_id: r for r in run_all(bad)}
    assert len(reports) == 2
    assert "error" in reports["drift_projection"].to_dict()
    assert reports["spurious_identity"].error is None
    broken = run_claim("transformed_asp_zero", {"transformed_asp_zero": {"cases": [{"name": "x", "builder": "nope",
                                                                                   "model": "geometric",
                                                                                   "range": [[0.1, 1.0]]}]}})
    assert broken.verdict == "fail" and broken.error


def test_report_json_is_deterministic_and_excludes_runtime():
    a = run_claim("spurious_identity")
    b = run_claim("spurious_identity")
    assert a.to_json() == b.to_json()
    assert "runtime" not in json.loads(a.to_json())
    c = run_claim("spurious_identity", seed=8)
    assert c.to_json() != a.to_json() and c.verdict == a.verdict


def test_summary_markdown_lists_every_claim(small_reports):
    text = summary_markdown(list(small_reports.values()))
    for cid in CLAIM_IDS:
        assert f"| {cid} |" in text
