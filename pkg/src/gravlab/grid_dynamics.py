"""Split-step 1D wave-function solver for the quadratic stochastic dynamics.

Complements the closed-form Gaussian propagator: works for arbitrary states
(notably two-packet cats), so it serves both as an independent oracle for the
Gaussian moment equations and as the only way to simulate collapse and
decoherence observables.

One Ito step of the quadratic dynamics is Strang-split:

    half kinetic (Fourier)  ->  local factor  ->  half kinetic  ->  renormalize

with the local factor exp[-(alpha M omega^2 / 2 hbar + s^2/2) x_c^2 dt
+ s x_c dW], x_c = x - <x> centered on the midpoint mean (after the first
kinetic half step).  The -s^2 x_c^2 / 2 term converts the exponential
(Stratonovich-like) update into the Ito generator: with it, the
pre-renormalization norm deviation per step has zero mean and O(dt) size,
and Gaussian initial data reproduce the closed-form moment flow on shared
noise paths.

A deterministic nonlocal mode evolves the mean-field dynamics with a
softened attractive kernel; that update is exactly unitary on the grid, so
the norm is preserved to machine precision without renormalization.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import fft as sfft

from .errors import (
    ContainmentError,
    DomainError,
    IllDefinedBranchesError,
    StatisticsError,
    StepSizeError,
)
from .gaussian_dynamics import Variant, variant_coefficients
from .model_core import Constants
from .noise_field import wiener_increments

DEFAULT_N = 1024
DEFAULT_X_MIN = -20.0
DEFAULT_X_MAX = 20.0

# |psi| allowed at the outermost cells; larger means the state touches the box
CONTAINMENT_TOL = 1e-8
# amplitudes this far below the peak are roundoff, not physics; the noisy
# local factor would otherwise grow that floor in a geometric random walk
FLOOR_FRACTION = 1e-13
# fraction of the peak density allowed at the cat midpoint before the
# two-branch decomposition stops being meaningful
BRANCH_OVERLAP_FRACTION = 0.5
MIN_COHERENCE_SEEDS = 100


@functools.lru_cache(maxsize=16)
def _k_grids(n: int, dx: float):
    k = 2.0 * math.pi * np.fft.fftfreq(n, d=dx)
    kd = k.copy()
    if n % 2 == 0:
        kd[n // 2] = 0.0  # aliased Nyquist has no usable derivative sign
    return k, kd


@functools.lru_cache(maxsize=32)
def _half_kinetic_factor(n: int, dx: float, dt: float, hbar: float, mass: float):
    k, _ = _k_grids(n, dx)
    return np.exp(-0.25j * hbar * k**2 * dt / mass)


@functools.lru_cache(maxsize=16)
def _dealias_mask(n: int, dx: float):
    # two-thirds rule: near-Nyquist modes can exceed pi kinetic phase per
    # step and get parametrically pumped by a state-dependent potential;
    # our packets carry no physical content there
    k, _ = _k_grids(n, dx)
    return (np.abs(k) <= (2.0 / 3.0) * np.max(np.abs(k))).astype(float)


@dataclass(frozen=True, eq=False)
class GridState:
    """Wave function on a uniform 1D grid x_j = x0 + j dx.

    amplitudes may be (n,) for one trajectory or (batch, n) for a vectorized
    ensemble; all moment accessors reduce over the last axis.  States are
    kept L2-normalized (sum |psi|^2 dx = 1) by the quadratic stepper; the
    pre-renormalization mismatch of the latest step is kept in
    norm_deviation as a solver diagnostic.
    """

    amplitudes: np.ndarray
    dx_grid: float
    x0: float
    norm_deviation: float | np.ndarray = 0.0

    @property
    def n(self) -> int:
        return self.amplitudes.shape[-1]

    @property
    def x(self) -> np.ndarray:
        return self.x0 + self.dx_grid * np.arange(self.n)

    def density(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def norm(self):
        return np.sqrt(np.sum(self.density(), axis=-1) * self.dx_grid)

    def mean_x(self):
        rho = self.density()
        return np.sum(self.x * rho, axis=-1) / np.sum(rho, axis=-1)

    def delta_x2(self):
        rho = self.density()
        tot = np.sum(rho, axis=-1)
        m1 = np.sum(self.x * rho, axis=-1) / tot
        m2 = np.sum(self.x**2 * rho, axis=-1) / tot
        return m2 - m1**2

    def _spectral_weights(self):
        ph = sfft.fft(self.amplitudes, axis=-1)
        w = np.abs(ph) ** 2
        return ph, w, np.sum(w, axis=-1)

    def mean_p(self, constants: Constants = Constants()):
        _, kd = _k_grids(self.n, self.dx_grid)
        _, w, tot = self._spectral_weights()
        return constants.hbar * np.sum(kd * w, axis=-1) / tot

    def delta_p2(self, constants: Constants = Constants()):
        k, kd = _k_grids(self.n, self.dx_grid)
        _, w, tot = self._spectral_weights()
        m1 = np.sum(kd * w, axis=-1) / tot
        m2 = np.sum(k**2 * w, axis=-1) / tot
        return constants.hbar**2 * (m2 - m1**2)

    def kinetic_energy(self, constants: Constants = Constants()):
        k, _ = _k_grids(self.n, self.dx_grid)
        _, w, tot = self._spectral_weights()
        return constants.hbar**2 * np.sum(k**2 * w, axis=-1) / tot / (2.0 * constants.mass)

    def correlation_xp(self, constants: Constants = Constants()):
        """Symmetrized covariance <xp + px>/2 - <x><p>."""
        _, kd = _k_grids(self.n, self.dx_grid)
        psi = self.amplitudes
        dpsi = sfft.ifft(1j * kd * sfft.fft(psi, axis=-1), axis=-1)
        xc = self.x - self.mean_x()[..., None] if psi.ndim > 1 else self.x - self.mean_x()
        raw = np.sum(np.conj(psi) * xc * (-1j * constants.hbar) * dpsi, axis=-1).real
        tot = np.sum(np.abs(psi) ** 2, axis=-1)
        return raw / tot

    def renormalized(self) -> "GridState":
        nrm = self.norm()
        scale = nrm[..., None] if self.amplitudes.ndim > 1 else nrm
        return replace(self, amplitudes=self.amplitudes / scale, norm_deviation=nrm - 1.0)


@dataclass(frozen=True)
class CatState:
    """Two-packet superposition spec: equal widths a0 at separation ell.

    Branches sit at -ell/2 and +ell/2 with amplitude weights
    sqrt(weight_left), sqrt(weight_right).
    """

    a0: complex
    separation: float
    weight_left: float = 0.5
    weight_right: float = 0.5

    def __post_init__(self):
        if not np.real(self.a0) > 0:
            raise DomainError("packet width parameter needs Re(a0) > 0")
        if self.weight_left < 0 or self.weight_right < 0:
            raise DomainError("branch weights must be non-negative")
        if abs(self.weight_left + self.weight_right - 1.0) > 1e-12:
            raise DomainError("branch weights must sum to 1")
        if not self.separation > 4.0 * self.packet_delta_x:
            raise DomainError("branches closer than 4 packet widths are not resolvable")

    @property
    def packet_delta_x(self) -> float:
        return math.sqrt(1.0 / (4.0 * np.real(self.a0)))


@dataclass(frozen=True)
class SoftKernelSpec:
    """Softened 1D pair kernel -strength / sqrt(dx^2 + a_soft^2).

    strength plays the role of G M^2; a_soft keeps the kernel regular at
    contact so packets can overlap without a singularity.
    """

    a_soft: float
    strength: float

    def __post_init__(self):
        if not self.a_soft > 0:
            raise DomainError("softening length must be positive")
        if self.strength < 0:
            raise DomainError("kernel strength must be non-negative")

    def pair_energy(self, distance) -> float:
        """Potential energy of two unit point masses at the given distance."""
        return -self.strength / np.sqrt(np.asarray(distance) ** 2 + self.a_soft**2)


def make_axis(n: int = DEFAULT_N, x_min: float = DEFAULT_X_MIN, x_max: float = DEFAULT_X_MAX):
    if n < 16:
        raise DomainError("grid needs at least 16 cells")
    if not x_max > x_min:
        raise DomainError("empty grid domain")
    dx = (x_max - x_min) / n
    return x_min + dx * np.arange(n), dx


def init_gaussian(
    xbar: float,
    pbar: float,
    a: complex,
    n: int = DEFAULT_N,
    x_min: float = DEFAULT_X_MIN,
    x_max: float = DEFAULT_X_MAX,
    constants: Constants = Constants(),
) -> GridState:
    """Normalized Gaussian exp(-a (x - xbar)^2 + i pbar (x - xbar) / hbar)."""
    if not np.real(a) > 0:
        raise DomainError("need Re(a) > 0 for a normalizable packet")
    x, dx = make_axis(n, x_min, x_max)
    spread = math.sqrt(1.0 / (4.0 * np.real(a)))
    if xbar - 6.0 * spread < x_min or xbar + 6.0 * spread > x_max:
        raise ContainmentError("grid does not contain 6 standard deviations around xbar")
    xc = x - xbar
    psi = np.exp(-a * xc**2 + 1j * pbar * xc / constants.hbar)
    psi = psi / (math.sqrt(np.sum(np.abs(psi) ** 2) * dx))
    return GridState(psi, dx, x_min)


def init_cat(
    cat: CatState,
    n: int = DEFAULT_N,
    x_min: float = DEFAULT_X_MIN,
    x_max: float = DEFAULT_X_MAX,
    constants: Constants = Constants(),
) -> GridState:
    """Normalized two-branch state centered on the origin."""
    x, dx = make_axis(n, x_min, x_max)
    half = 0.5 * cat.separation
    spread = cat.packet_delta_x
    if -half - 6.0 * spread < x_min or half + 6.0 * spread > x_max:
        raise ContainmentError("grid does not contain the cat branches")
    left = np.exp(-cat.a0 * (x + half) ** 2)
    right = np.exp(-cat.a0 * (x - half) ** 2)
    peak = 1.0 / math.sqrt(math.sqrt(math.pi / (2.0 * np.real(cat.a0))))
    psi = math.sqrt(cat.weight_left) * left + math.sqrt(cat.weight_right) * right
    psi = psi * peak  # scale is irrelevant; normalization follows
    psi = psi / math.sqrt(np.sum(np.abs(psi) ** 2) * dx)
    return GridState(psi.astype(complex), dx, x_min)


def _check_contained(psi: np.ndarray):
    edge = max(np.max(np.abs(psi[..., 0])), np.max(np.abs(psi[..., -1])))
    if edge > CONTAINMENT_TOL:
        raise ContainmentError(
            f"edge amplitude {edge:.2e} exceeds {CONTAINMENT_TOL:.0e}; enlarge the box"
        )


def _check_kinetic_resolution(dt: float, dx: float, constants: Constants):
    phase = constants.hbar * dt / (2.0 * constants.mass * dx**2)
    if phase >= 0.5:
        raise StepSizeError(f"kinetic phase per step {phase:.3f} >= 0.5; reduce dt")


def step_quadratic(
    state: GridState,
    variant: Variant,
    dt: float,
    dW,
    constants: Constants = Constants(),
    omega: float = 1.0,
) -> GridState:
    """One Ito step of the chosen variant; see the module docstring.

    dW is scalar for a single state or shape (batch,) for batched states.
    The returned state is renormalized; its norm_deviation records the
    pre-renormalization mismatch.
    """
    if dt <= 0:
        raise DomainError("dt must be positive")
    _check_kinetic_resolution(dt, state.dx_grid, constants)
    m, hbar = constants.mass, constants.hbar
    alpha, s = variant_coefficients(variant, constants, omega)
    # Ito-compensated local drift; for SSNE the imaginary parts cancel
    c_loc = -(alpha * m * omega**2 / (2.0 * hbar) + 0.5 * s * s)

    batched = state.amplitudes.ndim > 1
    if not batched and np.ndim(dW) != 0:
        raise DomainError("scalar state needs a scalar dW")
    dw = np.asarray(dW)
    dw_b = dw[..., None] if batched else dw

    half = _half_kinetic_factor(state.n, state.dx_grid, float(dt), hbar, m)
    psi = sfft.ifft(sfft.fft(state.amplitudes, axis=-1) * half, axis=-1)
    # center the noise factor on the midpoint mean: pre-step centering leaves
    # a systematic O(pbar dt^2) kick per step that accumulates to dt * |int
    # pbar| once the momentum has diffused
    rho = np.abs(psi) ** 2
    tot = np.sum(rho, axis=-1)
    xbar = np.sum(state.x * rho, axis=-1) / tot
    dx2_mid = np.sum(state.x**2 * rho, axis=-1) / tot - xbar**2
    xc = state.x - (xbar[..., None] if batched else xbar)
    # GSSE has a purely real exponent; the real exp path is much cheaper
    if c_loc.imag == 0.0 and s.imag == 0.0:
        exponent = c_loc.real * xc**2 * dt + s.real * xc * dw_b
    else:
        exponent = c_loc * xc**2 * dt + s * xc * dw_b
    psi = psi * np.exp(exponent)
    psi = sfft.ifft(sfft.fft(psi, axis=-1) * half, axis=-1)

    nrm = np.sqrt(np.sum(np.abs(psi) ** 2, axis=-1) * state.dx_grid)
    deviation = nrm - 1.0
    # realized-noise bound: the leading deviation is s^2 (dW^2 - dt) 2 Dx^2
    bound = 10.0 * (2.0 * abs(s) ** 2 * dx2_mid * (dw**2 + dt)) + 1e-9
    if np.any(np.abs(deviation) > bound):
        raise StepSizeError("pre-renormalization norm deviation too large; reduce dt")
    psi = psi / (nrm[..., None] if batched else nrm)
    mag = np.abs(psi)
    floor = FLOOR_FRACTION * np.max(mag, axis=-1)
    psi = np.where(mag < (floor[..., None] if batched else floor), 0.0, psi)
    _check_contained(psi)
    return GridState(psi, state.dx_grid, state.x0, deviation)


@functools.lru_cache(maxsize=16)
def _soft_kernel_spectrum(n: int, dx: float, a_soft: float, strength: float):
    # padded length 2n removes periodic wrap, making the convolution linear
    m = np.arange(2 * n)
    disp = dx * (((m + n) % (2 * n)) - n)
    kern = -strength / np.sqrt(disp**2 + a_soft**2)
    return sfft.rfft(kern)


def mean_field_potential(state: GridState, kernel: SoftKernelSpec) -> np.ndarray:
    """V(x) = int K_soft(x - y) |psi(y)|^2 dy on the grid."""
    n = state.n
    dens = state.density() * state.dx_grid
    pad_shape = dens.shape[:-1] + (2 * n,)
    padded = np.zeros(pad_shape)
    padded[..., :n] = dens
    spec = _soft_kernel_spectrum(n, state.dx_grid, kernel.a_soft, kernel.strength)
    return sfft.irfft(sfft.rfft(padded, axis=-1) * spec, axis=-1)[..., :n]


def step_sne_nonlocal(
    state: GridState,
    kernel: SoftKernelSpec,
    dt: float,
    constants: Constants = Constants(),
) -> GridState:
    """One deterministic mean-field step with the softened nonlocal kernel.

    Strang split: half kinetic, full potential phase with V built from the
    current density (|psi| is constant during the phase substep, so this is
    self-consistent), half kinetic.  Exactly unitary; no renormalization.
    """
    if dt <= 0:
        raise DomainError("dt must be positive")
    _check_kinetic_resolution(dt, state.dx_grid, constants)
    half = _half_kinetic_factor(state.n, state.dx_grid, float(dt), constants.hbar, constants.mass)
    half = half * _dealias_mask(state.n, state.dx_grid)
    psi = sfft.ifft(sfft.fft(state.amplitudes, axis=-1) * half, axis=-1)
    v = mean_field_potential(replace(state, amplitudes=psi), kernel)
    psi = psi * np.exp(-1j * v * dt / constants.hbar)
    psi = sfft.ifft(sfft.fft(psi, axis=-1) * half, axis=-1)
    nrm = np.sqrt(np.sum(np.abs(psi) ** 2, axis=-1) * state.dx_grid)
    deviation = nrm - 1.0
    if np.any(np.abs(deviation) > 1e-9):
        raise StepSizeError("unitary step lost the norm; reduce dt")
    _check_contained(psi)
    return GridState(psi, state.dx_grid, state.x0, deviation)


def branch_weights(state: GridState, cat: CatState, strict: bool = True):
    """Density weight in each half-domain split at the cat midpoint (x = 0).

    With strict=True, raises when the midpoint density is an appreciable
    fraction of the peak (the two-branch reading is then ill-defined).
    Returns (w_left, w_right); scalars for a single state, arrays for a
    batched one.
    """
    x = state.x
    rho = state.density()
    if strict:
        mid = np.argmin(np.abs(x))
        mid_density = rho[..., mid]
        peak = np.max(rho, axis=-1)
        if np.any(mid_density > BRANCH_OVERLAP_FRACTION * peak):
            raise IllDefinedBranchesError(
                "midpoint density comparable to the peaks; branches overlap"
            )
    left_mask = x < 0.0
    right_mask = x > 0.0
    mid_mask = x == 0.0
    total = np.sum(rho, axis=-1)
    w_left = (np.sum(rho[..., left_mask], axis=-1) + 0.5 * np.sum(rho[..., mid_mask], axis=-1))
    w_right = (np.sum(rho[..., right_mask], axis=-1) + 0.5 * np.sum(rho[..., mid_mask], axis=-1))
    return w_left / total, w_right / total


def coherence_series(
    seeds,
    cat: CatState,
    variant: Variant,
    times,
    dt: float = 1e-3,
    base_seed: int = 0,
    n: int = DEFAULT_N,
    x_min: float = DEFAULT_X_MIN,
    x_max: float = DEFAULT_X_MAX,
    constants: Constants = Constants(),
    omega: float = 1.0,
) -> np.ndarray:
    """Normalized ensemble coherence between the two branches at each time.

    Runs one batched trajectory per entry of seeds (trajectory stream
    indices under base_seed) and evaluates the ensemble-mean displaced
    overlap
        Re mean_traj int psi*(x) psi(x + ell) dx / sqrt(w_L w_R)
    at the requested times, which must be multiples of dt.
    """
    seeds = list(seeds)
    if len(seeds) < MIN_COHERENCE_SEEDS:
        raise StatisticsError(f"need at least {MIN_COHERENCE_SEEDS} seeds")
    if variant is Variant.SNE:
        raise DomainError("coherence decay needs a noisy variant")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    steps_at = np.round(times / dt).astype(int)
    if np.any(np.abs(steps_at * dt - times) > 1e-9) or np.any(times < 0):
        raise DomainError("times must be non-negative multiples of dt")

    base = init_cat(cat, n, x_min, x_max, constants)
    batch = np.broadcast_to(base.amplitudes, (len(seeds), n)).copy()
    state = GridState(batch, base.dx_grid, base.x0)
    ell_cells = int(round(cat.separation / base.dx_grid))

    n_steps = int(steps_at.max())
    incr = np.empty((n_steps, len(seeds)))
    for col, s in enumerate(seeds):
        incr[:, col] = wiener_increments(base_seed, s, n_steps, dt).increments[:, 0]

    out = np.empty(times.shape)
    lookup = {int(k): i for i, k in enumerate(steps_at)}

    def record(k, st):
        if k not in lookup:
            return
        # displaced overlap int psi*(x) psi(x + ell) dx isolates the
        # cross-branch off-diagonal and tolerates branch wandering; branch
        # masses are martingales, so the t=0 weights normalize it.  The real
        # part avoids the upward folding bias of |mean| at low coherence.
        psi = st.amplitudes
        seg = np.sum(np.conj(psi[:, :-ell_cells]) * psi[:, ell_cells:], axis=-1)
        num = np.mean(seg).real * st.dx_grid
        out[lookup[k]] = num / math.sqrt(cat.weight_left * cat.weight_right)

    record(0, state)
    for k in range(n_steps):
        state = step_quadratic(state, variant, dt, incr[k], constants, omega)
        record(k + 1, state)
    return out


def ensemble_density_offdiag(
    seeds,
    cat: CatState,
    variant: Variant,
    t: float,
    **kwargs,
) -> float:
    """Normalized coherence magnitude between branch centers at time t."""
    return float(coherence_series(seeds, cat, variant, [t], **kwargs)[0])


def _branch_split_weights(rho: np.ndarray, ell_cells: int):
    """Left-branch weight with the split at the midpoint of the two branches.

    The branches wander as a pair, so the split is located dynamically:
    global density peak, partner peak one separation away on the denser
    side, split halfway between them.
    """
    n = rho.shape[-1]
    rows = np.arange(rho.shape[0])
    i_peak = np.argmax(rho, axis=-1)
    lo = np.clip(i_peak - ell_cells, 0, n - 1)
    hi = np.clip(i_peak + ell_cells, 0, n - 1)
    i_other = np.where(rho[rows, lo] > rho[rows, hi], lo, hi)
    i_split = (i_peak + i_other) // 2
    csum = np.cumsum(rho, axis=-1)
    total = csum[:, -1]
    return csum[rows, i_split] / total


def branch_split_weights(state: GridState, cat: CatState) -> np.ndarray:
    """Left-branch weight per trajectory with a dynamically located split.

    Unlike branch_weights this follows the branches as they wander, so it
    stays meaningful deep into collapse; the split is halfway between the
    global density peak and its partner one separation away.
    """
    rho = np.atleast_2d(state.density())
    ell_cells = int(round(cat.separation / state.dx_grid))
    w = _branch_split_weights(rho, ell_cells)
    return w if state.amplitudes.ndim > 1 else float(w[0])


def collapse_first_passage(
    seeds,
    cat: CatState,
    variant: Variant,
    threshold: float = 0.99,
    dt: float = 1e-3,
    t_final: float = 4.0,
    base_seed: int = 0,
    n: int = 2048,
    x_min: float = -40.0,
    x_max: float = 40.0,
    constants: Constants = Constants(),
    omega: float = 1.0,
):
    """First time each trajectory's dominant branch weight crosses threshold.

    Returns (times, winners): times has NaN for trajectories still undecided
    at t_final (censored); winners is +1 for the right branch, -1 for the
    left, 0 while censored.
    """
    if not 0.5 < threshold < 1.0:
        raise DomainError("threshold must lie in (0.5, 1)")
    seeds = list(seeds)
    base = init_cat(cat, n, x_min, x_max, constants)
    batch = np.broadcast_to(base.amplitudes, (len(seeds), n)).copy()
    state = GridState(batch, base.dx_grid, base.x0)
    ell_cells = int(round(cat.separation / base.dx_grid))

    n_steps = int(round(t_final / dt))
    incr = np.empty((n_steps, len(seeds)))
    for col, s in enumerate(seeds):
        incr[:, col] = wiener_increments(base_seed, s, n_steps, dt).increments[:, 0]

    times = np.full(len(seeds), np.nan)
    winners = np.zeros(len(seeds), dtype=int)
    undecided = np.ones(len(seeds), dtype=bool)
    for k in range(n_steps):
        state = step_quadratic(state, variant, dt, incr[k], constants, omega)
        w_left = _branch_split_weights(state.density(), ell_cells)
        crossed = undecided & (np.maximum(w_left, 1.0 - w_left) >= threshold)
        if np.any(crossed):
            times[crossed] = (k + 1) * dt
            winners[crossed] = np.where(w_left[crossed] > 0.5, -1, 1)
            undecided &= ~crossed
            if not np.any(undecided):
                break
    return times, winners
