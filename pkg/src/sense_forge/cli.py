"""Command-line front end: ``sense-forge simulate|transform|fpe|verify|report``.

Exit codes: 0 ok, 1 failed claims, 2 configuration, 3 domain-exit budget,
4 singular noise, 5 rank variation, 6 stability.  Flags override values from
the ``--config`` JSON file, which override the built-in defaults.
"""

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .charts import IdentityChart
from .claims import combined_report, run_all, summary_markdown
from .config import CHART_KINDS, CLAIM_IDS, RunConfig
from .core import Box, as_diffusion
from .errors import ConfigError, DomainExitError, SenseForgeError
from .fpe import BOUNDARIES, fpe_evolve, gaussian_density, max_stable_dt, write_density
from .integrator import POLICIES, check_time_grid, simulate_ensemble, write_ensemble
from .io import atomic_write_text, read_json, write_json
from .normal_form import analytic_chart, build_chart_1d, build_chart_2d, build_chart_diagonal, validate_chart

__all__ = ["main", "build_parser"]

_DEFAULT_SPAN = 5.0


def _json_arg(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise argparse.ArgumentTypeError(f"invalid JSON: {exc.msg}") from None


def build_parser():
    parser = argparse.ArgumentParser(prog="sense-forge", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration; flags override its values")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--model", help="registry model name, or 'expression' with --noise/--drift")
    common.add_argument("--model-params", type=_json_arg, help='model parameters as JSON, e.g. \'{"sigma": 0.5}\'')
    common.add_argument("--noise", type=_json_arg_or_text, help="noise expression(s): a string or a JSON matrix")
    common.add_argument("--drift", type=_json_arg_or_text, help="drift expression(s): a string or a JSON list")
    common.add_argument("--alpha", type=float, help="integration sense in [0,1]")
    common.add_argument("--x0", type=float, nargs="+", help="initial state")
    common.add_argument("--T", type=float, help="time horizon")
    common.add_argument("--dt", type=float, help="time step")
    common.add_argument("--x-range", type=float, nargs=2, action="append", metavar=("LO", "HI"),
                        help="range per axis (repeat for each axis)")
    common.add_argument("--x-ref", type=float, nargs="+", help="chart reference point")

    p = sub.add_parser("simulate", parents=[common], help="simulate an ensemble and write CSV + JSON")
    p.add_argument("--n", type=int, help="number of paths")
    p.add_argument("--record-every", type=int)
    p.add_argument("--policy", choices=POLICIES)
    p.add_argument("--max-exit-fraction", type=float, help="domain-exit budget before exit code 3")

    p = sub.add_parser("transform", parents=[common], help="build and validate a normal-form chart")
    p.add_argument("--chart", choices=CHART_KINDS)
    p.add_argument("--chart-grid-size", type=int)
    p.add_argument("--numeric-grid-size", type=int)
    p.add_argument("--signature", action="store_true", default=None, help="accept indefinite coefficient matrices")

    p = sub.add_parser("fpe", parents=[common], help="evolve a density under the Fokker-Planck equation")
    p.add_argument("--grid-size", type=int)
    p.add_argument("--boundary", choices=BOUNDARIES)
    p.add_argument("--fpe-dt", type=float, help="FPE time step (default: largest stable step)")
    p.add_argument("--initial-std", type=float, help="std of the Gaussian initial density around x0")
    p.add_argument("--snapshots", type=int, help="number of output times after t = 0")

    p = sub.add_parser("verify", parents=[common], help="run the claims harness")
    p.add_argument("--claim", action="append", choices=CLAIM_IDS, help="claim to run (repeatable)")
    p.add_argument("--all", action="store_true", help="run every enabled claim")

    p = sub.add_parser("report", parents=[common], help="rebuild the markdown summary from claim reports")
    return parser


def _json_arg_or_text(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _overrides(args):
    """Flag values as RunConfig fields (``None`` means not given)."""
    names = {
        "seed": "seed", "out": "out", "alpha": "alpha", "x0": "x0", "T": "T", "dt": "dt",
        "x_range": "x_range", "x_ref": "x_ref", "n": "n_paths", "record_every": "record_every",
        "policy": "policy", "max_exit_fraction": "max_exit_fraction", "chart": "chart",
        "chart_grid_size": "chart_grid_size", "numeric_grid_size": "numeric_grid_size",
        "signature": "signature", "grid_size": "grid_size", "boundary": "boundary", "fpe_dt": "fpe_dt",
        "initial_std": "initial_std", "snapshots": "snapshots",
    }
    out = {field: getattr(args, flag) for flag, field in names.items() if hasattr(args, flag)}
    if args.model is not None or args.noise is not None:
        name = args.model or "expression"
        if name == "expression":
            if args.noise is None:
                raise ConfigError("noise", "expression models need --noise")
            out["model"] = {"model": "expression", "noise": args.noise, "params": args.model_params or {}}
            if args.drift is not None:
                out["model"]["drift"] = [args.drift] if isinstance(args.drift, str) else args.drift
        else:
            out["model"] = {"model": name, "params": args.model_params or {}}
    elif args.model_params is not None:
        raise ConfigError("model_params", "--model-params needs --model")
    return out


def _default_ranges(config, model):
    """``x_range`` if given, else the model domain clipped to ``x0 +- 5``."""
    if config.x_range is not None:
        return [tuple(r) for r in config.x_range]
    dom = model.domain
    return [
        (max(float(dom.lower[i]), x - _DEFAULT_SPAN), min(float(dom.upper[i]), x + _DEFAULT_SPAN))
        for i, x in enumerate(config.x0)
    ]


# ---------------------------------------------------------------- simulate


def cmd_simulate(config):
    model = config.build_model()
    out = Path(config.out)
    ensemble = simulate_ensemble(
        model, config.x0, config.T, config.dt, config.n_paths, config.seed, config.policy, config.record_every
    )
    extra = {"config": config.to_dict()}
    write_ensemble(ensemble, out / "ensemble.csv", out / "ensemble.json", model.name, extra)
    fraction = ensemble.report.exited_paths / ensemble.n_paths
    if fraction > config.max_exit_fraction:
        raise DomainExitError(
            f"{ensemble.report.exited_paths} of {ensemble.n_paths} paths left the domain "
            f"(fraction {fraction!r} exceeds max_exit_fraction {config.max_exit_fraction!r})"
        )
    print(f"wrote {out / 'ensemble.csv'} ({ensemble.n_paths} paths, {len(ensemble.times)} times)")
    return 0


# ---------------------------------------------------------------- transform


def _is_constant_identity(diffusion, box, size=9):
    grids = np.meshgrid(*[np.linspace(lo, hi, size) for lo, hi in zip(box.lower, box.upper)], indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=-1)
    d = diffusion(points)
    return bool(np.array_equal(d, np.broadcast_to(np.eye(diffusion.dim), d.shape)))


def _is_diagonal(diffusion, box, size=9):
    grids = np.meshgrid(*[np.linspace(lo, hi, size) for lo, hi in zip(box.lower, box.upper)], indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=-1)
    d = diffusion(points)
    off = d - np.einsum("...ii->...i", d)[..., None] * np.eye(diffusion.dim)
    return not np.any(off)


def build_chart(config, model):
    """Chart selection for ``transform``: analytic, tabulated 1D, diagonal or numeric 2D."""
    ranges = _default_ranges(config, model)
    box = Box([r[0] for r in ranges], [r[1] for r in ranges])
    kind = config.chart
    dim = model.state_dim
    x_ref = config.x_ref
    diffusion = as_diffusion(model)
    if kind == "auto":
        if _is_constant_identity(diffusion, box):
            return IdentityChart(dim, box)
        if dim == 1:
            try:
                return analytic_chart(model, x_range=(box.lower, box.upper), x_ref=None if x_ref is None else x_ref[0])
            except SenseForgeError as exc:
                if exc.exit_code != 2:
                    raise
            kind = "tabulated"
        else:
            kind = "diagonal" if _is_diagonal(diffusion, box) else "numeric"
    if kind == "analytic":
        return analytic_chart(model, x_range=(box.lower, box.upper), x_ref=None if x_ref is None else x_ref[0])
    if kind == "tabulated":
        if dim != 1:
            raise ConfigError("chart", "tabulated charts are one-dimensional")
        return build_chart_1d(model, ranges[0], config.chart_grid_size, None if x_ref is None else x_ref[0],
                              config.signature)
    if kind == "diagonal":
        return build_chart_diagonal(model, ranges, config.chart_grid_size, x_ref, config.signature)
    if dim != 2:
        raise ConfigError("chart", "numeric charts are two-dimensional")
    size = config.numeric_grid_size
    return build_chart_2d(model, np.linspace(*ranges[0], size), np.linspace(*ranges[1], size), size, x_ref,
                          config.signature)


def cmd_transform(config):
    model = config.build_model()
    chart = build_chart(config, model)
    out = Path(config.out)
    atomic_write_text(out / "chart.json", chart.to_json())
    box = chart.valid_x_box
    points = None
    if not (np.all(np.isfinite(box.lo)) and np.all(np.isfinite(box.hi))):
        ranges = _default_ranges(config, model)
        rng = np.random.default_rng(config.seed)
        lo = np.array([r[0] for r in ranges])
        hi = np.array([r[1] for r in ranges])
        points = lo + (hi - lo) * rng.random((1000, model.state_dim))
    report = validate_chart(chart, model, points=points, seed=config.seed)
    report["kappa"] = list(chart.kappa)
    report["model"] = config.model
    write_json(out / "validation.json", report)
    print(f"wrote {out / 'chart.json'} ({chart.kind}); round-trip error {report['round_trip_error']!r}")
    return 0


# ---------------------------------------------------------------- fpe


def cmd_fpe(config):
    model = config.build_model()
    if model.state_dim != 1:
        raise ConfigError("model", "fpe needs a one-dimensional model")
    lo, hi = _default_ranges(config, model)[0]
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ConfigError("x_range", "fpe needs a finite x_range")
    axis = np.linspace(lo, hi, config.grid_size)
    w = gaussian_density(axis, config.x0[0], config.initial_std, config.boundary)
    interval = config.T / config.snapshots
    b = model.noise(axis[:, None])
    limit = max_stable_dt(axis, np.einsum("jk,jk->j", b[:, 0, :], b[:, 0, :]))
    dt = config.fpe_dt if config.fpe_dt is not None else interval / math.ceil(interval / limit * (1.0 + 1e-12))
    check_time_grid(interval, dt)
    out = Path(config.out)
    files = []
    for k in range(config.snapshots + 1):
        if k > 0:
            w = fpe_evolve(model, w, interval, dt, config.alpha)
        name = f"density_{k:03d}"
        write_density(w, out / f"{name}.csv", out / f"{name}.json", {"alpha": config.alpha, "dt": dt})
        files.append({"file": f"{name}.csv", "t": w.t, "mass": w.mass, "ledger": w.ledger})
    write_json(out / "fpe.json", {"config": config.to_dict(), "dt": dt, "snapshots": files})
    print(f"wrote {len(files)} density snapshots to {out}")
    return 0


# ---------------------------------------------------------------- verify / report


def cmd_verify(config, claims=None):
    reports = run_all(config.claims, config.seed, claims)
    out = Path(config.out)
    for r in reports:
        write_json(out / "claims" / f"{r.claim_id}.json", r.to_dict())
    write_json(out / "report.json", combined_report(reports))
    write_json(out / "runtimes.json", {r.claim_id: r.runtime for r in reports})
    atomic_write_text(out / "summary.md", summary_markdown(reports))
    failed = 0
    for r in reports:
        print(f"{r.claim_id}: {r.verdict} ({r.runtime:.2f} s)")
        failed += r.verdict == "fail"
    return 1 if failed else 0


def cmd_report(config):
    out = Path(config.out)
    combined = out / "report.json"
    if not combined.exists():
        raise ConfigError("out", f"no report.json in {out}; run verify first")
    reports = read_json(combined)["claims"]
    runtimes_path = out / "runtimes.json"
    runtimes = read_json(runtimes_path) if runtimes_path.exists() else {}
    for r in reports:
        r["runtime"] = runtimes.get(r["claim_id"])
    text = summary_markdown(reports)
    atomic_write_text(out / "summary.md", text)
    sys.stdout.write(text)
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = RunConfig.load(args.config, _overrides(args))
        if args.command == "simulate":
            return cmd_simulate(config)
        if args.command == "transform":
            return cmd_transform(config)
        if args.command == "fpe":
            return cmd_fpe(config)
        if args.command == "verify":
            if not args.all and not args.claim:
                raise ConfigError("claim", "give --claim ID or --all")
            return cmd_verify(config, None if args.all else args.claim)
        return cmd_report(config)
    except SenseForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if getattr(exc, "max_dt", None) is not None:
            print(f"max admissible dt: {exc.max_dt!r}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
