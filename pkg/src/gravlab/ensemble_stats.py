"""Monte Carlo harness: trajectory ensembles over either solver.

Trajectory j of an ensemble always consumes the noise stream
(base_seed, j), so results are a pure function of the config and do not
depend on chunking, execution order, or worker count.  Estimator standard
errors come from resampling whole trajectories (200 bootstrap draws with a
fixed internal seed); pointwise least-squares errors would be badly
overconfident because residuals are correlated along each trajectory.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError, GravlabError, StatisticsError
from .gaussian_dynamics import (
    GaussianState,
    TrajectoryRecord,
    Variant,
    kinetic_energy,
    soliton_state,
    step,
)
from .grid_dynamics import (
    CatState,
    GridState,
    branch_split_weights,
    init_cat,
    init_gaussian,
    step_quadratic,
)
from .model_core import Constants
from .noise_field import wiener_increments

OBSERVABLES = ("xbar", "pbar", "delta_x", "kinetic")
SOLVERS = ("gaussian", "grid")
SCHEMA_VERSION = 1

# fit-window and bootstrap policy
TRANSIENT_OVER_OMEGA = 5.0  # skipped for non-soliton starts: width relaxation
N_BOOTSTRAP = 200
R2_TREND_THRESHOLD = 0.95
STDERR_FLOOR = 1e-12  # keeps exact-zero estimates from reporting stderr 0
_BOOTSTRAP_SEED = 0x5EED


@dataclass(frozen=True)
class InitialSpec:
    """Initial Gaussian packet: the variant's soliton or an explicit width."""

    kind: str  # "soliton" | "gaussian"
    xbar: float = 0.0
    pbar: float = 0.0
    a: complex | None = None

    def __post_init__(self):
        if self.kind not in ("soliton", "gaussian"):
            raise DomainError(f"unknown initial-state kind {self.kind!r}")
        if self.kind == "gaussian":
            if self.a is None or not complex(self.a).real > 0:
                raise DomainError("explicit initial state needs Re(a) > 0")

    @classmethod
    def soliton(cls, xbar: float = 0.0, pbar: float = 0.0) -> "InitialSpec":
        return cls("soliton", xbar, pbar)

    @classmethod
    def gaussian(cls, xbar: float, pbar: float, a: complex) -> "InitialSpec":
        return cls("gaussian", xbar, pbar, complex(a))

    def resolve_a(self, variant: Variant, constants: Constants, omega: float) -> complex:
        if self.kind == "soliton":
            return soliton_state(variant, constants, omega).a
        return complex(self.a)

    def is_soliton(self) -> bool:
        return self.kind == "soliton"


@dataclass(frozen=True)
class EnsembleConfig:
    """One reproducible ensemble run; trajectory j uses seed (base_seed, j)."""

    variant: Variant
    solver: str = "gaussian"
    n_trajectories: int = 1000
    t_final: float = 10.0
    dt: float = 1e-3
    base_seed: int = 0
    initial: InitialSpec = InitialSpec.soliton()
    observables: tuple = OBSERVABLES
    record_stride: int = 0  # 0 picks a stride giving about 200 samples
    grid_n: int = 1024
    grid_x_min: float = -40.0
    grid_x_max: float = 40.0
    constants: Constants = Constants()
    omega: float = 1.0

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise DomainError(f"unknown solver {self.solver!r}")
        if self.n_trajectories < 2:
            raise DomainError("need at least 2 trajectories")
        if self.t_final <= 0 or self.dt <= 0:
            raise DomainError("t_final and dt must be positive")
        n_steps = round(self.t_final / self.dt)
        if n_steps < 1 or abs(n_steps * self.dt - self.t_final) > 1e-9:
            raise DomainError("t_final must be a positive multiple of dt")
        unknown = set(self.observables) - set(OBSERVABLES)
        if unknown:
            raise DomainError(f"unknown observables {sorted(unknown)}")
        if self.record_stride < 0:
            raise DomainError("record_stride must be >= 0")

    @property
    def n_steps(self) -> int:
        return round(self.t_final / self.dt)

    @property
    def stride(self) -> int:
        if self.record_stride:
            return self.record_stride
        return max(1, self.n_steps // 200)


def _noise_matrix(config: EnsembleConfig, indices: Sequence[int]) -> np.ndarray:
    out = np.empty((config.n_steps, len(indices)))
    for col, j in enumerate(indices):
        out[:, col] = wiener_increments(
            config.base_seed, j, config.n_steps, config.dt
        ).increments[:, 0]
    return out


def _assemble_records(times, columns) -> list[TrajectoryRecord]:
    """Transpose per-sample column dicts into one record per trajectory."""
    times = np.asarray(times)
    stacked = {k: np.stack(v) for k, v in columns.items()}  # (n_samples, n_traj)
    n_traj = stacked["xbar"].shape[1]
    return [
        TrajectoryRecord(
            times=times,
            xbar=stacked["xbar"][:, j].astype(float),
            pbar=stacked["pbar"][:, j].astype(float),
            delta_x=stacked["delta_x"][:, j].astype(float),
            kinetic=stacked["kinetic"][:, j].astype(float),
            a=stacked["a"][:, j].astype(complex),
        )
        for j in range(n_traj)
    ]


def _run_chunk_gaussian(config: EnsembleConfig, indices) -> list[TrajectoryRecord]:
    consts, omega = config.constants, config.omega
    a0 = config.initial.resolve_a(config.variant, consts, omega)
    n = len(indices)
    state = GaussianState(
        np.full(n, float(config.initial.xbar)),
        np.full(n, float(config.initial.pbar)),
        np.full(n, a0, dtype=complex),
    )
    incr = _noise_matrix(config, indices)
    times, columns = [], {k: [] for k in ("xbar", "pbar", "delta_x", "kinetic", "a")}

    def sample(t, st):
        times.append(t)
        columns["xbar"].append(np.asarray(st.xbar, dtype=float))
        columns["pbar"].append(np.asarray(st.pbar, dtype=float))
        columns["delta_x"].append(np.sqrt(st.delta_x2))
        columns["kinetic"].append(np.asarray(kinetic_energy(st, consts), dtype=float))
        columns["a"].append(np.asarray(st.a, dtype=complex))

    sample(0.0, state)
    for k in range(config.n_steps):
        state = step(state, config.variant, config.dt, incr[k], consts, omega)
        if (k + 1) % config.stride == 0:
            sample((k + 1) * config.dt, state)
    return _assemble_records(times, columns)


def _run_chunk_grid(config: EnsembleConfig, indices) -> list[TrajectoryRecord]:
    consts, omega = config.constants, config.omega
    a0 = config.initial.resolve_a(config.variant, consts, omega)
    base = init_gaussian(
        config.initial.xbar, config.initial.pbar, a0,
        config.grid_n, config.grid_x_min, config.grid_x_max, consts,
    )
    amps = np.broadcast_to(base.amplitudes, (len(indices), base.n)).copy()
    state = GridState(amps, base.dx_grid, base.x0)
    incr = _noise_matrix(config, indices)
    times, columns = [], {k: [] for k in ("xbar", "pbar", "delta_x", "kinetic", "a")}

    def sample(t, st):
        dx2 = st.delta_x2()
        corr = st.correlation_xp(consts)
        # effective complex width read off the moments; exact for Gaussians
        a_eff = 1.0 / (4.0 * dx2) - 0.5j * corr / (consts.hbar * dx2)
        times.append(t)
        columns["xbar"].append(st.mean_x())
        columns["pbar"].append(st.mean_p(consts))
        columns["delta_x"].append(np.sqrt(dx2))
        columns["kinetic"].append(st.kinetic_energy(consts))
        columns["a"].append(a_eff)

    sample(0.0, state)
    for k in range(config.n_steps):
        state = step_quadratic(state, config.variant, config.dt, incr[k], consts, omega)
        if (k + 1) % config.stride == 0:
            sample((k + 1) * config.dt, state)
    return _assemble_records(times, columns)


def _chunk_runner(config: EnsembleConfig):
    return _run_chunk_gaussian if config.solver == "gaussian" else _run_chunk_grid


def _run_chunk_attributed(config: EnsembleConfig, indices) -> list[TrajectoryRecord]:
    """Run a chunk; on solver failure, rerun singles to name the trajectory."""
    runner = _chunk_runner(config)
    try:
        return runner(config, indices)
    except GravlabError as exc:
        if len(indices) == 1:
            raise type(exc)(f"trajectory {indices[0]}: {exc}") from exc
        for j in indices:
            try:
                runner(config, [j])
            except GravlabError as single:
                raise type(single)(f"trajectory {j}: {single}") from single
        raise


def run_ensemble(config: EnsembleConfig, workers: int = 1) -> list[TrajectoryRecord]:
    """All trajectories of the configured ensemble, in trajectory order.

    workers > 1 splits the ensemble into contiguous chunks on a thread
    pool; records are identical to the workers=1 output.
    """
    if workers < 1:
        raise DomainError("workers must be >= 1")
    indices = list(range(config.n_trajectories))
    chunks = [c.tolist() for c in np.array_split(indices, workers) if c.size]
    if len(chunks) == 1:
        return _run_chunk_attributed(config, chunks[0])
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        parts = list(pool.map(lambda c: _run_chunk_attributed(config, c), chunks))
    return [rec for part in parts for rec in part]


@dataclass(frozen=True)
class FitDiagnostics:
    """Goodness-of-fit summary attached to every estimate."""

    r_squared: float | None
    residual_trend: bool
    details: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EstimatorResult:
    name: str
    estimate: float
    stderr: float
    window: tuple
    diagnostics: FitDiagnostics

    def __post_init__(self):
        if not self.stderr > 0:
            raise StatisticsError("estimator standard error must be positive")
        if not self.window[0] <= self.window[1]:
            raise StatisticsError("empty fit window")


def _stack_observable(records, name):
    times = records[0].times
    for rec in records[1:]:
        if not np.array_equal(rec.times, times):
            raise StatisticsError("records do not share a common time grid")
    return times, np.stack([getattr(rec, name) for rec in records])


def _auto_transient(times, delta_x_matrix, omega):
    """Non-soliton starts relax their width; skip 5 / omega of data."""
    mean_width = delta_x_matrix.mean(axis=0)
    drift = np.max(np.abs(mean_width - mean_width[0])) / mean_width[0]
    return 0.0 if drift < 1e-3 else TRANSIENT_OVER_OMEGA / omega


def _window_slice(times, t_lo, t_hi):
    mask = (times >= t_lo - 1e-12) & (times <= t_hi + 1e-12)
    if mask.sum() < 3:
        raise StatisticsError("fit window holds fewer than 3 samples")
    return mask


def _linear_fit(t, y, through_origin=False):
    if through_origin:
        slope = float(np.dot(t, y) / np.dot(t, t))
        fitted = slope * t
    else:
        slope, intercept = np.polyfit(t, y, 1)
        fitted = slope * t + intercept
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return float(slope), r2


def _bootstrap_stderr(matrix, reduce_fn, fit_fn):
    """Std of fit_fn(reduce_fn(resampled rows)) over trajectory resamples."""
    rng = np.random.default_rng(_BOOTSTRAP_SEED)
    n = matrix.shape[0]
    draws = rng.integers(0, n, size=(N_BOOTSTRAP, n))
    stats = np.array([fit_fn(reduce_fn(matrix[d])) for d in draws])
    return max(float(np.std(stats, ddof=1)), STDERR_FLOOR)


def estimate_ke_rate(
    records,
    transient: float | None = None,
    omega: float = 1.0,
) -> EstimatorResult:
    """Slope of the ensemble-mean kinetic energy versus time."""
    if len(records) < 100:
        raise StatisticsError("kinetic-energy rate needs at least 100 trajectories")
    times, kin = _stack_observable(records, "kinetic")
    _, widths = _stack_observable(records, "delta_x")
    if transient is None:
        transient = _auto_transient(times, widths, omega)
    if transient >= times[-1]:
        raise StatisticsError("simulated range does not outlast the width transient")
    mask = _window_slice(times, transient, times[-1])
    t, window = times[mask], (float(times[mask][0]), float(times[-1]))
    series = kin[:, mask].mean(axis=0)
    if np.ptp(series) == 0.0:
        diag = FitDiagnostics(1.0, False)
        return EstimatorResult("ke_rate", 0.0, STDERR_FLOOR, window, diag)
    slope, r2 = _linear_fit(t, series)
    stderr = _bootstrap_stderr(
        kin[:, mask], lambda m: m.mean(axis=0), lambda y: _linear_fit(t, y)[0]
    )
    diag = FitDiagnostics(r2, r2 < R2_TREND_THRESHOLD)
    return EstimatorResult("ke_rate", slope, stderr, window, diag)


def estimate_diffusion(
    records,
    observable: str,
    variant: Variant | None = None,
    transient: float | None = None,
    omega: float = 1.0,
) -> EstimatorResult:
    """Slope of the ensemble variance of xbar or pbar versus time.

    For the SSNE position variance the fit is constrained through the
    origin (identical starts diffuse from zero spread with no drift term).
    Diagnostics carry quadratic and cubic coefficients of an unconstrained
    cubic fit with bootstrap errors, to expose any superlinear component.
    """
    if observable not in ("xbar", "pbar"):
        raise DomainError("diffusion estimator expects observable xbar or pbar")
    if len(records) < 100:
        raise StatisticsError("diffusion fit needs at least 100 trajectories")
    times, values = _stack_observable(records, observable)
    _, widths = _stack_observable(records, "delta_x")
    if transient is None:
        transient = _auto_transient(times, widths, omega)
    if transient >= times[-1]:
        raise StatisticsError("simulated range does not outlast the width transient")
    mask = _window_slice(times, transient, times[-1])
    t, window = times[mask], (float(times[mask][0]), float(times[-1]))
    sub = values[:, mask]
    series = sub.var(axis=0, ddof=1)
    name = f"var_{observable}_rate"
    through_origin = variant is Variant.SSNE and observable == "xbar" and window[0] == 0.0
    if np.ptp(series) == 0.0 and series[0] == 0.0:
        diag = FitDiagnostics(1.0, False, {"quadratic": 0.0, "cubic": 0.0})
        return EstimatorResult(name, 0.0, STDERR_FLOOR, window, diag)
    slope, r2 = _linear_fit(t, series, through_origin)

    def var_of(m):
        return m.var(axis=0, ddof=1)

    stderr = _bootstrap_stderr(
        sub, var_of, lambda y: _linear_fit(t, y, through_origin)[0]
    )
    cubic = np.polyfit(t, series, 3)
    quad_err = _bootstrap_stderr(sub, var_of, lambda y: np.polyfit(t, y, 3)[1])
    cube_err = _bootstrap_stderr(sub, var_of, lambda y: np.polyfit(t, y, 3)[0])
    details = {
        "quadratic": float(cubic[1]),
        "quadratic_stderr": quad_err,
        "cubic": float(cubic[0]),
        "cubic_stderr": cube_err,
    }
    diag = FitDiagnostics(r2, r2 < R2_TREND_THRESHOLD, details)
    return EstimatorResult(name, slope, stderr, window, diag)


def estimate_xp_covariance(records, t_max: float = 0.5) -> EstimatorResult:
    """Leading-order growth rate of Cov(xbar, pbar).

    Fits cov = c1 t + c2 t^2 through the origin on [0, t_max] and reports
    c1; the quadratic term absorbs the drift-fed covariance growth so the
    estimate isolates the shared-noise contribution.
    """
    if len(records) < 100:
        raise StatisticsError("covariance fit needs at least 100 trajectories")
    times, xs = _stack_observable(records, "xbar")
    _, ps = _stack_observable(records, "pbar")
    mask = _window_slice(times, 0.0, min(t_max, float(times[-1])))
    t = times[mask]

    def cov_series(xm, pm):
        xc = xm - xm.mean(axis=0)
        pc = pm - pm.mean(axis=0)
        return (xc * pc).sum(axis=0) / (xm.shape[0] - 1)

    def fit_linear_term(y):
        basis = np.stack([t, t**2], axis=1)
        coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
        return float(coef[0])

    series = cov_series(xs[:, mask], ps[:, mask])
    c1 = fit_linear_term(series)
    fitted = np.stack([t, t**2], axis=1) @ np.linalg.lstsq(
        np.stack([t, t**2], axis=1), series, rcond=None
    )[0]
    ss_res = float(np.sum((series - fitted) ** 2))
    ss_tot = float(np.sum((series - series.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot

    rng = np.random.default_rng(_BOOTSTRAP_SEED)
    n = xs.shape[0]
    draws = rng.integers(0, n, size=(N_BOOTSTRAP, n))
    boots = np.array(
        [fit_linear_term(cov_series(xs[d][:, mask], ps[d][:, mask])) for d in draws]
    )
    stderr = max(float(np.std(boots, ddof=1)), STDERR_FLOOR)
    positive = bool(np.all(series[t > 0] > 0.0))
    diag = FitDiagnostics(r2, r2 < R2_TREND_THRESHOLD, {"all_positive": positive})
    return EstimatorResult(
        "xp_cov_rate", c1, stderr, (float(t[0]), float(t[-1])), diag
    )


@dataclass(frozen=True)
class BranchWeightRecord:
    """Left-branch weight along one cat trajectory, sampled every step."""

    trajectory: int
    times: np.ndarray
    weight_left: np.ndarray


def run_collapse_ensemble(
    cat: CatState,
    variant: Variant,
    n_trajectories: int,
    t_final: float,
    dt: float = 1e-3,
    base_seed: int = 0,
    n: int = 1024,
    x_min: float = -40.0,
    x_max: float = 40.0,
    constants: Constants = Constants(),
    omega: float = 1.0,
    workers: int = 1,
) -> list[BranchWeightRecord]:
    """Grid cat ensemble recording the branch-weight series per trajectory."""
    if n_trajectories < 2:
        raise DomainError("need at least 2 trajectories")
    n_steps = round(t_final / dt)
    if n_steps < 1 or abs(n_steps * dt - t_final) > 1e-9:
        raise DomainError("t_final must be a positive multiple of dt")
    if workers < 1:
        raise DomainError("workers must be >= 1")

    def run_chunk(indices):
        base = init_cat(cat, n, x_min, x_max, constants)
        amps = np.broadcast_to(base.amplitudes, (len(indices), n)).copy()
        state = GridState(amps, base.dx_grid, base.x0)
        incr = np.empty((n_steps, len(indices)))
        for col, j in enumerate(indices):
            incr[:, col] = wiener_increments(base_seed, j, n_steps, dt).increments[:, 0]
        weights = np.empty((n_steps, len(indices)))
        for k in range(n_steps):
            state = step_quadratic(state, variant, dt, incr[k], constants, omega)
            weights[k] = branch_split_weights(state, cat)
        times = dt * np.arange(1, n_steps + 1)
        return [
            BranchWeightRecord(j, times, weights[:, col].copy())
            for col, j in enumerate(indices)
        ]

    chunks = [c.tolist() for c in np.array_split(np.arange(n_trajectories), workers) if c.size]
    if len(chunks) == 1:
        return run_chunk(chunks[0])
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        parts = list(pool.map(run_chunk, chunks))
    return [rec for part in parts for rec in part]


def collapse_time_stats(records, threshold: float = 0.99) -> EstimatorResult:
    """Median first-passage time of the dominant branch weight.

    The estimate is the median over decided trajectories with a bootstrap
    confidence interval; diagnostics carry the winner split, its binomial
    error, and the censored count.  More than 20% censored trajectories
    make the median untrustworthy and raise StatisticsError.
    """
    if not 0.5 < threshold < 1.0:
        raise DomainError("threshold must lie in (0.5, 1)")
    if len(records) < 2:
        raise StatisticsError("need at least 2 trajectories")
    times_out, winners = [], []
    for rec in records:
        w = rec.weight_left
        hits = np.flatnonzero(np.maximum(w, 1.0 - w) >= threshold)
        if hits.size:
            times_out.append(rec.times[hits[0]])
            winners.append(-1 if w[hits[0]] > 0.5 else 1)
        else:
            times_out.append(np.nan)
            winners.append(0)
    times_out = np.asarray(times_out)
    winners = np.asarray(winners)
    censored = int(np.isnan(times_out).sum())
    if censored > 0.20 * len(records):
        raise StatisticsError(
            f"{censored} of {len(records)} trajectories undecided at t_final"
        )
    decided = times_out[~np.isnan(times_out)]
    median = float(np.median(decided))
    rng = np.random.default_rng(_BOOTSTRAP_SEED)
    draws = rng.integers(0, decided.size, size=(N_BOOTSTRAP, decided.size))
    medians = np.median(decided[draws], axis=1)
    ci = (float(np.percentile(medians, 2.5)), float(np.percentile(medians, 97.5)))
    stderr = max(float(np.std(medians, ddof=1)), STDERR_FLOOR)
    n_decided = decided.size
    frac_right = float(np.mean(winners[winners != 0] == 1))
    split_err = math.sqrt(max(frac_right * (1.0 - frac_right), 0.25 / n_decided) / n_decided)
    details = {
        "ci_low": ci[0],
        "ci_high": ci[1],
        "winner_fraction_right": frac_right,
        "winner_split_stderr": split_err,
        "n_decided": n_decided,
        "n_censored": censored,
    }
    window = (float(records[0].times[0]), float(records[0].times[-1]))
    return EstimatorResult(
        "collapse_time_median", median, stderr, window, FitDiagnostics(None, False, details)
    )


def write_records_csv(records, path, observables=OBSERVABLES) -> None:
    """Long-format dump: one row per (trajectory, time, observable)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trajectory", "time", "observable", "value"])
        for j, rec in enumerate(records):
            for name in observables:
                values = getattr(rec, name)
                for t, v in zip(rec.times, values):
                    writer.writerow([j, repr(float(t)), name, repr(float(v))])


def result_to_dict(result: EstimatorResult) -> dict:
    diag = result.diagnostics
    return {
        "estimate": result.estimate,
        "stderr": result.stderr,
        "window": list(result.window),
        "r_squared": diag.r_squared,
        "residual_trend": diag.residual_trend,
        "details": diag.details,
    }


def write_summary_json(results, path, metadata=None) -> None:
    """JSON summary keyed by estimator name, with a metadata block."""
    payload = {
        "schema_version": SCHEMA_VERSION,
        "metadata": dict(metadata or {}),
        "estimates": {r.name: result_to_dict(r) for r in results},
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
