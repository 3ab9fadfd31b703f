"""Acceptance criteria 1-8, each at its stated tolerance and runtime budget.

Every test records one ``criterion N: PASS|FAIL`` line, printed in the
terminal summary, and then asserts.
"""

import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import ks_2samp

from conftest import ACCEPTANCE_LINES
from sense_forge.cli import main
from sense_forge.claims import run_claim
from sense_forge.config import default_claims_config
from sense_forge.integrator import simulate_senses
from sense_forge.models import asinh, constant, geometric, ornstein_uhlenbeck
from sense_forge.normal_form import analytic_chart, build_chart_1d, validate_chart

ALPHAS = [0.0, 0.25, 0.5, 0.75, 1.0]


def record(number, ok, runtime, budget, detail):
    ok = bool(ok) and (budget is None or runtime < budget)
    limit = "" if budget is None else f" (budget {budget:g} s)"
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} in {runtime:.2f} s{limit}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def test_criterion_1_alpha_integral_moments():
    start = time.perf_counter()
    report = run_claim("alpha_integral_moments")
    runtime = time.perf_counter() - start
    cfg = default_claims_config()["alpha_integral_moments"]
    dt, n = cfg["dt"], cfg["n_samples"]
    se = (dt / np.sqrt(2)) / np.sqrt(n)
    ok = True
    parts = []
    for row in report.table:
        mean_ok = abs(row["mean"] - row["alpha"] * dt) < 4 * se
        var_rel = abs(row["variance"] - dt * dt / 2) / (dt * dt / 2)
        ok &= mean_ok and var_rel < 0.02
        parts.append(f"a={row['alpha']}: mean/SE off {abs(row['mean'] - row['alpha'] * dt) / se:.2f}, var rel {var_rel:.4f}")
    assert record(1, ok, runtime, 30, "; ".join(parts))


def test_criterion_2_spurious_identity():
    start = time.perf_counter()
    report = run_claim("spurious_identity")
    runtime = time.perf_counter() - start
    asserted = [row for row in report.table if not row["informational"]]
    worst = {row["family"]: row["analytic"] for row in asserted}
    ok = len(asserted) >= 5 and all(v < 1e-6 for v in worst.values())
    detail = ", ".join(f"{k} {v:.2e}" for k, v in worst.items())
    assert record(2, ok, runtime, 5, f"max relative deviation per family: {detail}")


def test_criterion_3_chart_correctness():
    start = time.perf_counter()
    cases = {
        "geometric": (geometric(sigma=0.5), (0.1, 10.0), 1.0),
        "asinh": (asinh(), (-5.0, 5.0), 0.0),
    }
    ok = True
    parts = []
    for name, (model, box, ref) in cases.items():
        charts = {
            "tabulated": build_chart_1d(model, box, x_ref=ref),
            "analytic": analytic_chart(model, x_range=([box[0]], [box[1]]), x_ref=ref),
        }
        for kind, chart in charts.items():
            res = validate_chart(chart, model, n_points=1000)
            values = [res["round_trip_error"], res["diffusion_residual"], res["spurious_drift_residual"]]
            ok &= all(v < 1e-8 for v in values)
            parts.append(f"{name}/{kind} " + "/".join(f"{v:.1e}" for v in values))
    runtime = time.perf_counter() - start
    assert record(3, ok, runtime, 5, "round-trip/D*/a_sp*: " + ", ".join(parts))


def test_criterion_4_sense_selection():
    start = time.perf_counter()
    report = run_claim("sense_selection")
    runtime = time.perf_counter() - start
    rows = report.table
    ok = len(rows) == 10
    for row in rows:
        ks = [row["ks"][str(a)] for a in ALPHAS]
        ok &= int(np.argmin(ks)) == 2 and ks[2] < 0.01 and ks[0] > 5 * ks[2] and ks[4] > 5 * ks[2]
    half = max(row["ks"]["0.5"] for row in rows)
    ends = min(min(row["ks"]["0.0"], row["ks"]["1.0"]) for row in rows)
    assert record(4, ok, runtime, 60, f"10 replications, max KS(1/2) {half:.5f}, min KS(0|1) {ends:.4f}")


def test_criterion_5_fpe_route():
    start = time.perf_counter()
    report = run_claim("fpe_alpha_independence")
    runtime = time.perf_counter() - start
    values = {m.name: m.value for m in report.measurements}
    l1 = {a: values[f"l1[alpha={a}]"] for a in ALPHAS}
    ok = min(l1, key=l1.get) == 0.5 and l1[0.5] <= 1e-2 and l1[0.0] >= 5e-2 and l1[1.0] >= 5e-2
    detail = ", ".join(f"L1({a})={v:.2e}" for a, v in l1.items())
    assert record(5, ok, runtime, 30, detail)


def test_criterion_6_neutral_sense_control():
    start = time.perf_counter()
    models = {
        "constant b=1": (constant(b=1.0), 0.0),
        "constant b=2 drift=0.3": (constant(b=2.0, drift=0.3), 1.0),
        "ornstein-uhlenbeck": (ornstein_uhlenbeck(theta=1.0, b=0.5), 1.0),
    }
    ok = True
    parts = []
    for name, (model, x0) in models.items():
        out = simulate_senses(model, [x0], 1.0, 1e-3, 100000, 7, ALPHAS, record_every=1000)
        worst = 0.0
        for i, a in enumerate(ALPHAS):
            for b in ALPHAS[i + 1:]:
                worst = max(worst, ks_2samp(out[a].terminal[:, 0], out[b].terminal[:, 0]).statistic)
        ok &= worst < 0.005
        parts.append(f"{name}: max pairwise KS {worst:.2e}")
    runtime = time.perf_counter() - start
    assert record(6, ok, runtime, 30, "; ".join(parts))


def test_criterion_7_drift_projection_table():
    start = time.perf_counter()
    report = run_claim("drift_projection")
    runtime = time.perf_counter() - start
    cfg = default_claims_config()["drift_projection"]
    sigma = cfg["sigma"]
    rows = {(r["beta"], r["rule"], r["alpha"]): r["a_star"] for r in report.table}
    ok = report.verdict == "flagged-ambiguous" and len(rows) == len(cfg["betas"]) * (1 + len(cfg["alphas"]))
    for beta in cfg["betas"]:
        ok &= abs(rows[(beta, "tensor", None)] - beta * sigma) < 1e-8
        for alpha in cfg["alphas"]:
            ok &= abs(rows[(beta, "ito", alpha)] - (beta + alpha - 0.5) * sigma) < 1e-8
    assert record(7, ok, runtime, 5, f"{len(rows)} rows, verdict {report.verdict}")


def test_criterion_8_verify_is_byte_deterministic(tmp_path):
    start = time.perf_counter()
    codes = [main(["verify", "--all", "--seed", "7", "--out", str(tmp_path / run)]) for run in ("a", "b")]
    runtime = time.perf_counter() - start

    def reports(root):
        return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(Path(root).rglob("*.json"))
                if p.name != "runtimes.json"}

    a, b = reports(tmp_path / "a"), reports(tmp_path / "b")
    ok = len(a) == 7 and a == b and codes[0] == codes[1]
    assert record(8, ok, runtime, None, f"{len(a)} JSON reports identical: {a == b}; exit codes {codes}")
