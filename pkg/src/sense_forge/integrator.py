"""Alpha-sense Euler stepping and ensemble simulation.

A step uses the explicit Ito-equivalent increment

    x' = x + [a(x) + alpha a_sp(x)] dt + B(x) dW,

i.e. the noise coefficient is evaluated at the left point and the sense enters
only through the spurious drift.  No implicit solve is needed for alpha > 0.
"""

import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np

from .core import SdeModel, as_sense, ito_equivalent_drift
from .errors import ChartRangeError, ContractError, DomainExitError
from .io import fmt, write_csv, write_json
from .models import KERNEL_ASINH, KERNEL_CONSTANT, KERNEL_GEOMETRIC, KERNEL_OU
from .rng import PURPOSE_INCREMENTS, RngStreamSpec, _as_u64, _normal_pair, block_normals

__all__ = [
    "StepReport",
    "PathEnsemble",
    "alpha_euler_step",
    "simulate_ensemble",
    "simulate_senses",
    "simulate_senses_with_wiener",
    "wiener_ensemble",
    "pushforward_paths",
    "check_time_grid",
    "write_ensemble",
    "POLICIES",
]

POLICIES = ("absorb", "reflect", "abort")

# normals generated per chunk (paths x steps x noise dims)
_CHUNK_DRAWS = 1 << 22


@dataclass(frozen=True)
class StepReport:
    """Domain-exit bookkeeping: ``rejected_steps`` counts exit events."""

    rejected_steps: int = 0
    exited_paths: int = 0
    clamped: bool = False

    def to_dict(self):
        return {"rejected_steps": self.rejected_steps, "exited_paths": self.exited_paths, "clamped": self.clamped}


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """``n_paths`` sample paths recorded on ``times``.

    ``states`` has shape ``(n_paths, len(times), n)``; path ``p`` was driven
    by stream ``RngStreamSpec(master_seed, stream_ids[p])``.
    """

    model: Optional[SdeModel]
    times: np.ndarray
    states: np.ndarray
    master_seed: int
    stream_ids: np.ndarray
    alpha: Optional[float]
    dt: float
    report: StepReport = field(default_factory=StepReport)
    policy: str = "absorb"
    label: str = ""

    @property
    def n_paths(self):
        return self.states.shape[0]

    @property
    def dim(self):
        return self.states.shape[2]

    @property
    def streams(self):
        return [RngStreamSpec(self.master_seed, int(s)) for s in self.stream_ids]

    @property
    def initial(self):
        return self.states[:, 0, :]

    @property
    def terminal(self):
        return self.states[:, -1, :]

    def at(self, time_index):
        return self.states[:, time_index, :]


def check_time_grid(T, dt):
    """Number of steps; ``dt`` must divide ``T`` within 1e-9 relative."""
    if not (T > 0 and dt > 0):
        raise ContractError("T and dt must be positive")
    steps = int(round(T / dt))
    if steps < 1 or abs(steps * dt - T) > 1e-9 * T:
        raise ContractError(f"dt={dt} does not divide T={T}")
    return steps


def _noise_times(b, dw):
    # b: (..., n, m), dw broadcastable to (..., m)
    if b.shape[-1] == 1 and b.shape[-2] == 1:
        return b[..., 0, :] * dw
    return np.einsum("...ik,...k->...i", b, np.broadcast_to(dw, b.shape[:-2] + b.shape[-1:]))


def _spurious(noise, x, b):
    db = noise.derivative(x, check=False)
    if b.shape[-1] == 1 and b.shape[-2] == 1:
        return db[..., 0, 0, :] * b[..., 0, :]
    return np.einsum("...ikm,...mk->...i", db, b)


def _increment(model, x, dw, dt, alpha_column):
    """Ito-equivalent increment for states ``x`` of shape ``(A, N, n)``.

    ``alpha_column`` is ``alphas[:, None, None]``, or None when every alpha is 0.
    """
    a = model.drift.raw(x)
    b = model.noise.raw(x)
    step = _noise_times(b, dw)
    if alpha_column is not None:
        a = a + alpha_column * _spurious(model.noise, x, b)
    step += a * dt
    return step


_POLICY_CODES = {"absorb": 0, "reflect": 1, "abort": 2}


@numba.njit(cache=True, inline="always")
def _scalar_coefficients(code, p0, p1, x):
    """(a, b, db/dx) of a built-in scalar family, in the same floating-point
    order as the vectorized field definitions in models.py."""
    if code == 1:  # geometric: a = mu x, b = sigma x
        return p0 * x, p1 * x, p1
    if code == 2:  # asinh: b = sqrt(1 + x^2)
        root = np.sqrt(1.0 + x * x)
        return 0.0, root, x / root
    if code == 3:  # constant drift and noise
        return p0, p1, 0.0
    # Ornstein-Uhlenbeck: a = -theta x
    return -p0 * x, p1, 0.0


@numba.njit(cache=True, error_model="numpy")
def _scalar_senses_kernel(
    seed, first_stream, n_paths, steps, sqrt_dt, dt, code, p0, p1, x0, alphas, any_alpha,
    bounded, lo, hi, policy, record, states, wiener, exits, dead, clamped, exit_step, exit_point,
):
    n_alpha = alphas.shape[0]
    purpose = np.uint64(0)
    x = np.empty(n_alpha)
    alive = np.empty(n_alpha, dtype=np.bool_)
    pair = np.empty(2)
    for p in range(n_paths):
        stream = np.uint64(first_stream + p)
        for a in range(n_alpha):
            x[a] = x0
            alive[a] = True
            states[a, p, 0] = x0
        wiener[p, 0] = 0.0
        w = 0.0
        next_record = 1
        for j in range(steps):
            if j % 2 == 0:
                pair[0], pair[1] = _normal_pair(seed, purpose, stream, np.uint64(j >> 1))
            dw = pair[j % 2] * sqrt_dt
            w = w + dw
            for a in range(n_alpha):
                if not alive[a]:
                    continue
                old = x[a]
                drift, b, db = _scalar_coefficients(code, p0, p1, old)
                step = b * dw
                if any_alpha:
                    drift = drift + alphas[a] * (db * b)
                step += drift * dt
                new = step + old
                if bounded and not (new >= lo and new <= hi and np.isfinite(new)):
                    exits[a] += 1
                    if exit_step[a, p] < 0:
                        exit_step[a, p] = j
                        exit_point[a, p] = new
                    if policy == 1:
                        r = new
                        if r < lo:
                            r = 2 * lo - r
                        if r > hi:
                            r = 2 * hi - r
                        if not np.isfinite(r):
                            clamped[0] = True
                            r = old
                        elif r < lo or r > hi:
                            clamped[0] = True
                        x[a] = min(max(r, lo), hi)
                    else:
                        alive[a] = False
                        dead[a, p] = True
                else:
                    x[a] = new
            if next_record < record.shape[0] and j + 1 == record[next_record]:
                for a in range(n_alpha):
                    states[a, p, next_record] = x[a]
                wiener[p, next_record] = w
                next_record += 1
    return 0


def alpha_euler_step(model, x, dw, dt, alpha=None):
    """One alpha-sense Euler step.

    Raises
    ------
    DomainExitError
        When the new point leaves the model domain; the point is attached so
        the caller can absorb, reflect or abort.
    """
    if not dt > 0:
        raise ContractError("dt must be positive")
    x = np.asarray(x, dtype=float)
    model.domain.require(x)
    alpha = model.alpha if alpha is None else as_sense(alpha).alpha
    drift = ito_equivalent_drift(model, x, alpha)
    b = model.noise(x)
    new = x + drift * dt + _noise_times(b, np.asarray(dw, dtype=float))
    if not np.all(model.domain.contains(new)) or not np.all(np.isfinite(new)):
        raise DomainExitError(f"step from {x.tolist()} left the domain", point=new)
    return new


def _record_indices(steps, record_every):
    if record_every < 1:
        raise ContractError("record_every must be positive")
    idx = list(range(0, steps + 1, record_every))
    if idx[-1] != steps:
        idx.append(steps)
    return np.array(idx)


def _apply_policy(model, old, new, alive, policy):
    """Returns (state, alive, exits, clamped) after the domain policy."""
    lo, hi = model.domain.lo, model.domain.hi
    inside = np.all((new >= lo) & (new <= hi), axis=-1) & np.all(np.isfinite(new), axis=-1)
    exits = alive & ~inside
    n_exits = np.count_nonzero(exits, axis=-1)
    if not np.any(n_exits):
        return np.where(alive[..., None], new, old), alive, n_exits, False
    if policy == "abort":
        where = np.argwhere(exits)[0]
        raise DomainExitError(
            f"path {int(where[-1])} left the domain", point=new[tuple(where)], path_index=int(where[-1])
        )
    if policy == "absorb":
        state = np.where((alive & inside)[..., None], new, old)
        return state, alive & inside, n_exits, False
    reflected = np.where(new < lo, 2 * lo - new, new)
    reflected = np.where(reflected > hi, 2 * hi - reflected, reflected)
    clamped_mask = (reflected < lo) | (reflected > hi) | ~np.isfinite(reflected)
    reflected = np.clip(np.where(np.isfinite(reflected), reflected, old), lo, hi)
    state = np.where(alive[..., None], reflected, old)
    return state, alive, n_exits, bool(np.any(clamped_mask & alive[..., None]))


def _prepare(model, x0, T, dt, n_paths, alphas, policy, record_every):
    if policy not in POLICIES:
        raise ContractError(f"policy must be one of {POLICIES}")
    if n_paths < 1:
        raise ContractError("n_paths must be at least 1")
    steps = check_time_grid(T, dt)
    alphas = np.array([model.alpha] if alphas is None else [as_sense(a).alpha for a in alphas])
    n = model.state_dim
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (n,)).copy()
    model.domain.require(x0, "initial condition")
    return steps, alphas, x0, _record_indices(steps, record_every)


def _run_scalar_kernel(model, x0, dt, n_paths, master_seed, steps, alphas, policy, record, first_stream):
    code, p0, p1 = model.scalar_kernel
    lo, hi = float(model.domain.lo[0]), float(model.domain.hi[0])
    bounded = bool(np.isfinite(lo) or np.isfinite(hi))
    states = np.empty((alphas.size, n_paths, record.size))
    wiener = np.empty((n_paths, record.size))
    exits = np.zeros(alphas.size, dtype=np.int64)
    dead = np.zeros((alphas.size, n_paths), dtype=bool)
    clamped = np.zeros(1, dtype=bool)
    exit_step = np.full((alphas.size, n_paths), -1, dtype=np.int64)
    exit_point = np.zeros((alphas.size, n_paths))
    _scalar_senses_kernel(
        _as_u64(master_seed, "master_seed"), int(first_stream), int(n_paths), int(steps), math.sqrt(dt), float(dt),
        int(code), float(p0), float(p1), float(x0[0]), alphas, bool(np.any(alphas != 0.0)),
        bounded, lo, hi, _POLICY_CODES[policy], record, states, wiener, exits, dead, clamped, exit_step, exit_point,
    )
    if policy == "abort" and np.any(exit_step >= 0):
        first = exit_step[exit_step >= 0].min()
        a, p = np.argwhere(exit_step == first)[0]
        raise DomainExitError(f"path {int(p)} left the domain", point=exit_point[a, p : p + 1], path_index=int(p))
    return states[..., None], wiener[..., None], exits, ~dead, bool(clamped[0])


def _run_vectorized(model, x0, dt, n_paths, master_seed, steps, alphas, policy, record, first_stream):
    n, m = model.state_dim, model.noise_dim
    states = np.empty((alphas.size, n_paths, record.size, n))
    x = np.broadcast_to(x0, (alphas.size, n_paths, n)).copy()
    states[:, :, 0, :] = x
    alive = np.ones((alphas.size, n_paths), dtype=bool)
    exits = np.zeros(alphas.size, dtype=np.int64)
    clamped = False
    bounded = bool(np.any(np.isfinite(model.domain.lo)) or np.any(np.isfinite(model.domain.hi)))
    lo, hi = model.domain.lo, model.domain.hi
    alpha_column = alphas[:, None, None] if np.any(alphas != 0.0) else None
    all_alive = True
    sqrt_dt = math.sqrt(dt)
    chunk = max(1, min(steps, _CHUNK_DRAWS // max(1, n_paths * m)))
    next_record = 1
    for start in range(0, steps, chunk):
        count = min(chunk, steps - start)
        z = block_normals(master_seed, first_stream, n_paths, count * m, PURPOSE_INCREMENTS, start * m)
        z *= sqrt_dt
        # step-major so each step reads a contiguous (N, m) slab
        z = np.ascontiguousarray(z.reshape(n_paths, count, m).transpose(1, 0, 2))
        for j in range(count):
            new = _increment(model, x, z[j], dt, alpha_column)
            new += x
            if not bounded:
                x = new
            elif all_alive and np.all(new.min(axis=(0, 1)) >= lo) and np.all(new.max(axis=(0, 1)) <= hi):
                # min/max propagate NaN, which fails both comparisons
                x = new
            else:
                x, alive, n_exit, clamp = _apply_policy(model, x, new, alive, policy)
                exits += n_exit
                clamped = clamped or clamp
                all_alive = bool(np.all(alive))
            k = start + j + 1
            if next_record < record.size and k == record[next_record]:
                states[:, :, next_record, :] = x
                next_record += 1
    return states, None, exits, alive, clamped


def _simulate(model, x0, T, dt, n_paths, master_seed, alphas, policy, record_every, first_stream, compiled):
    steps, alphas, x0, record = _prepare(model, x0, T, dt, n_paths, alphas, policy, record_every)
    use_kernel = compiled and model.scalar_kernel is not None
    runner = _run_scalar_kernel if use_kernel else _run_vectorized
    states, wiener, exits, alive, clamped = runner(
        model, x0, dt, n_paths, master_seed, steps, alphas, policy, record, first_stream
    )
    stream_ids = np.arange(first_stream, first_stream + n_paths, dtype=np.uint64)
    times = record * dt
    out = {}
    for i, alpha in enumerate(alphas):
        report = StepReport(
            rejected_steps=int(exits[i]),
            exited_paths=int(np.count_nonzero(~alive[i])),
            clamped=clamped,
        )
        out[float(alpha)] = PathEnsemble(
            model.with_sense(alpha), times, states[i], int(master_seed), stream_ids, float(alpha), dt, report, policy
        )
    if wiener is not None:
        wiener = PathEnsemble(None, times, wiener, int(master_seed), stream_ids, None, dt, label="wiener")
    return out, wiener


def simulate_senses(
    model,
    x0,
    T,
    dt,
    n_paths,
    master_seed,
    alphas=None,
    policy="absorb",
    record_every=1,
    first_stream=0,
    compiled=True,
):
    """Simulates the model under several senses with common driving noise.

    Each alpha's ensemble is identical to ``simulate_ensemble`` run on
    ``model.with_sense(alpha)`` with the same seed; the shared increments are
    only generated once.  Built-in scalar models are stepped by a compiled
    kernel that performs the same floating-point operations in the same order
    (``compiled=False`` forces the vectorized path; both agree bit for bit).

    Returns
    -------
    dict
        alpha -> PathEnsemble
    """
    return _simulate(model, x0, T, dt, n_paths, master_seed, alphas, policy, record_every, first_stream, compiled)[0]


def simulate_senses_with_wiener(
    model, x0, T, dt, n_paths, master_seed, alphas=None, policy="absorb", record_every=1, first_stream=0
):
    """Like :func:`simulate_senses`, also returning the driving Wiener ensemble.

    The second element equals ``wiener_ensemble(T, dt, n_paths, master_seed,
    model.noise_dim, record_every, first_stream)``.
    """
    out, wiener = _simulate(model, x0, T, dt, n_paths, master_seed, alphas, policy, record_every, first_stream, True)
    if wiener is None:
        wiener = wiener_ensemble(T, dt, n_paths, master_seed, model.noise_dim, record_every, first_stream)
    return out, wiener


def simulate_ensemble(model, x0, T, dt, n_paths, master_seed, policy="absorb", record_every=1, first_stream=0):
    """Simulates ``n_paths`` independent paths of the model in its own sense.

    Path ``p`` is driven by stream ``first_stream + p`` of ``master_seed``;
    the result is a pure function of the arguments.
    """
    return simulate_senses(
        model, x0, T, dt, n_paths, master_seed, None, policy, record_every, first_stream
    )[model.alpha]


def wiener_ensemble(T, dt, n_paths, master_seed, dim=1, record_every=1, first_stream=0):
    """The driving Wiener paths ``W(t)`` that ``simulate_ensemble`` would use.

    Built from the same streams and the same ``sqrt(dt) * z`` increments, so a
    ``simulate_ensemble`` run with the same seed sees exactly these paths.
    """
    steps = check_time_grid(T, dt)
    record = _record_indices(steps, record_every)
    states = np.zeros((n_paths, record.size, dim))
    w = np.zeros((n_paths, dim))
    sqrt_dt = math.sqrt(dt)
    chunk = max(1, min(steps, _CHUNK_DRAWS // max(1, n_paths * dim)))
    next_record = 1
    for start in range(0, steps, chunk):
        count = min(chunk, steps - start)
        z = block_normals(master_seed, first_stream, n_paths, count * dim, PURPOSE_INCREMENTS, start * dim)
        z *= sqrt_dt
        z = np.ascontiguousarray(z.reshape(n_paths, count, dim).transpose(1, 0, 2))
        for j in range(count):
            w = w + z[j]
            k = start + j + 1
            if next_record < record.size and k == record[next_record]:
                states[:, next_record, :] = w
                next_record += 1
    stream_ids = np.arange(first_stream, first_stream + n_paths, dtype=np.uint64)
    return PathEnsemble(None, record * dt, states, int(master_seed), stream_ids, None, dt, label="wiener")


def pushforward_paths(chart, z_ensemble):
    """Applies the inverse chart ``x(z)`` to every recorded state."""
    z = z_ensemble.states
    box = chart.valid_z_box
    inside = np.all((z >= box.lo) & (z <= box.hi), axis=-1)
    if not np.all(inside):
        bad = int(np.argwhere(~inside)[0][0])
        raise ChartRangeError(f"path {bad} leaves the chart range {box.lower}..{box.upper}", path_index=bad)
    flat = z.reshape(-1, z.shape[-1])
    x = chart.inverse(flat).reshape(z.shape)
    return PathEnsemble(
        None,
        z_ensemble.times,
        x,
        z_ensemble.master_seed,
        z_ensemble.stream_ids,
        z_ensemble.alpha,
        z_ensemble.dt,
        z_ensemble.report,
        z_ensemble.policy,
        label=f"pushforward({chart.kind})",
    )


def write_ensemble(ensemble, csv_path, json_path, model_name=None, extra=None):
    """CSV ``path_id,t,x1..xn`` plus a JSON sidecar with run metadata."""
    n = ensemble.dim
    header = ["path_id", "t"] + [f"x{i + 1}" for i in range(n)]
    times = [fmt(t) for t in ensemble.times]

    def rows():
        for p in range(ensemble.n_paths):
            pid = str(p)
            for k, t in enumerate(times):
                yield [pid, t] + [fmt(v) for v in ensemble.states[p, k]]

    write_csv(csv_path, header, rows())
    meta = {
        "model": model_name or (ensemble.model.name if ensemble.model is not None else ensemble.label),
        "alpha": ensemble.alpha,
        "seed": ensemble.master_seed,
        "dt": ensemble.dt,
        "T": float(ensemble.times[-1]),
        "N": ensemble.n_paths,
        "policy": ensemble.policy,
        "domain_exits": ensemble.report.to_dict(),
        "recorded_times": len(ensemble.times),
    }
    if extra:
        meta.update(extra)
    write_json(json_path, meta)
    return meta


def worker_cap():
    """Worker cap from SENSE_FORGE_THREADS; informational, results never depend on it."""
    value = os.environ.get("SENSE_FORGE_THREADS")
    try:
        return max(1, int(value)) if value else 1
    except ValueError:
        return 1
