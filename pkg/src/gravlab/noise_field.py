"""Correlated gravitational noise and its reduction to packet-level kicks.

Three layers:

* wiener_increments: counter-based Gaussian increments.  Every increment is a
  pure function of (base_seed, trajectory_index, step), so ensembles are
  reproducible bit-for-bit regardless of execution order.
* sample_phi_field: a real random potential on a periodic 3D grid with
  spatial covariance G hbar / |r - s| per unit time, synthesized spectrally
  with weights sqrt(4 pi G hbar / k^2) and the uniform mode removed.
* reduce_phi_to_w: projection of the field onto the gradient of a mass
  profile.  The resulting 3-vector has identity covariance per unit time,
  which is what the packet-level solvers consume.

The reduction uses the momentum-space form of the overlap integral, so the
sharp edge of the uniform-sphere profile never needs a real-space derivative.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

from .errors import DomainError, ResolutionError
from .model_core import Constants, MassProfile, omega_g

_MASK64 = (1 << 64) - 1

# Field samples and trajectory noise live in disjoint Philox stream ranges so
# that reusing one base seed for both can never correlate them.
_FIELD_STREAM_BIT = 1 << 63

# Minimum number of grid cells per profile characteristic length for the
# reduction to be trustworthy.
MIN_CELLS_PER_LENGTH = 8


def _philox(base_seed: int, stream_index: int) -> np.random.Generator:
    """Counter-based generator keyed by (base_seed, stream_index)."""
    if base_seed < 0 or stream_index < 0:
        raise DomainError("seeds and stream indices must be non-negative")
    key = (base_seed & _MASK64) + ((stream_index & _MASK64) << 64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class NoisePath:
    """Wiener increments for one trajectory; increments[k] ~ N(0, dt)."""

    base_seed: int
    trajectory_index: int
    dt: float
    increments: np.ndarray  # shape (n_steps, n_axes)

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]

    @property
    def n_axes(self) -> int:
        return self.increments.shape[1]


def wiener_increments(
    base_seed: int,
    trajectory_index: int,
    n_steps: int,
    dt: float,
    n_axes: int = 1,
) -> NoisePath:
    """Draw the full increment table for one trajectory.

    The table is a pure function of (base_seed, trajectory_index); different
    trajectories use disjoint Philox keys, so any subset of an ensemble can
    be regenerated independently.
    """
    if dt <= 0:
        raise DomainError("dt must be positive")
    if n_steps < 0 or n_axes < 1:
        raise DomainError("need n_steps >= 0 and n_axes >= 1")
    if trajectory_index >= _FIELD_STREAM_BIT:
        raise DomainError("trajectory_index out of range")
    gen = _philox(base_seed, trajectory_index)
    incr = gen.standard_normal((n_steps, n_axes)) * math.sqrt(dt)
    return NoisePath(base_seed, trajectory_index, dt, incr)


@dataclass(frozen=True)
class FieldGrid:
    """Periodic cubic grid: n cells per axis, physical side length box."""

    n: int
    box: float

    def __post_init__(self) -> None:
        if self.n < 4:
            raise DomainError("grid needs at least 4 cells per axis")
        if not self.box > 0:
            raise DomainError("box size must be positive")

    @property
    def h(self) -> float:
        return self.box / self.n

    def axis(self) -> np.ndarray:
        """Cell-center coordinates, centered on the box."""
        return (np.arange(self.n) - self.n // 2) * self.h


@functools.lru_cache(maxsize=8)
def _k_arrays(n: int, h: float):
    kx = 2.0 * math.pi * np.fft.fftfreq(n, d=h)
    kz = 2.0 * math.pi * np.fft.rfftfreq(n, d=h)
    k2 = kx[:, None, None] ** 2 + kx[None, :, None] ** 2 + kz[None, None, :] ** 2
    # Parseval weights for the half spectrum stored by rfftn
    wt = np.full(kz.shape, 2.0)
    wt[0] = 1.0
    if n % 2 == 0:
        wt[-1] = 1.0
    # Derivative wavenumbers: the Nyquist mode aliases +-pi/h, so the
    # band-limited derivative of a real field is zero there.
    kxd = kx.copy()
    kzd = kz.copy()
    if n % 2 == 0:
        kxd[n // 2] = 0.0
        kzd[-1] = 0.0
    return kx, kz, k2, np.broadcast_to(wt, k2.shape), kxd, kzd


@dataclass(frozen=True)
class PhiFieldSample:
    """One spatial sample of the random potential, scaled by sqrt(dt)."""

    grid: FieldGrid
    dt: float
    values: np.ndarray  # (n, n, n) real
    base_seed: int
    sample_index: int
    constants: Constants


def sample_phi_field(
    grid: FieldGrid,
    dt: float,
    base_seed: int,
    sample_index: int = 0,
    constants: Constants = Constants(),
) -> PhiFieldSample:
    """Synthesize one field sample with covariance G hbar / |r - s| * dt.

    White noise per cell is filtered with sqrt(4 pi G hbar / k^2); the k = 0
    mode is dropped (only gradients of the field are ever observed, so the
    uniform component is unphysical).
    """
    if dt <= 0:
        raise DomainError("dt must be positive")
    if sample_index >= _FIELD_STREAM_BIT:
        raise DomainError("sample_index out of range")
    gen = _philox(base_seed, _FIELD_STREAM_BIT | sample_index)
    h = grid.h
    eta = gen.standard_normal((grid.n,) * 3) / h**1.5
    spec = sfft.rfftn(eta)
    _, _, k2, _, _, _ = _k_arrays(grid.n, h)
    amp = np.sqrt(4.0 * math.pi * constants.G * constants.hbar / np.where(k2 > 0, k2, 1.0))
    spec *= amp
    spec[0, 0, 0] = 0.0
    vals = sfft.irfftn(spec, s=(grid.n,) * 3) * math.sqrt(dt)
    return PhiFieldSample(grid, dt, vals, base_seed, sample_index, constants)


@functools.lru_cache(maxsize=8)
def _profile_spectrum(profile: MassProfile, grid: FieldGrid, center: tuple) -> np.ndarray:
    """rfftn of the profile density sampled on the grid around `center`.

    Displacements are minimum-image on the periodic box, so moving the center
    by a whole number of cells is exactly a cyclic shift of the samples.
    """
    ax = grid.axis()
    cx, cy, cz = center
    box = grid.box

    def wrap(d):
        return (d + 0.5 * box) % box - 0.5 * box

    r = np.sqrt(
        wrap(ax[:, None, None] - cx) ** 2
        + wrap(ax[None, :, None] - cy) ** 2
        + wrap(ax[None, None, :] - cz) ** 2
    )
    return sfft.rfftn(profile.density(r))


@functools.lru_cache(maxsize=32)
def _omega_cached(profile: MassProfile) -> float:
    return omega_g(profile)


def reduce_phi_to_w(
    field: PhiFieldSample,
    profile: MassProfile,
    center: tuple = (0.0, 0.0, 0.0),
) -> np.ndarray:
    """Project a field sample onto the profile gradient around `center`.

    Returns the 3-vector
        w_a = sqrt(M / hbar) / omega_g * int (d_a f)(r - center) Phi(r) d^3r
    carrying the sample's sqrt(dt) scaling, i.e. a Wiener increment with
    identity covariance per unit time.  Evaluated in momentum space where the
    profile gradient is i k_a f_hat.
    """
    grid = field.grid
    if grid.h > profile.char_length / MIN_CELLS_PER_LENGTH:
        raise ResolutionError(
            f"grid spacing {grid.h:.4f} too coarse for profile scale {profile.char_length:.4f}"
        )
    c = profile.constants
    fhat = _profile_spectrum(profile, grid, tuple(float(x) for x in center))
    spec = sfft.rfftn(field.values)
    _, _, _, wt, kxd, kzd = _k_arrays(grid.n, grid.h)
    cross = wt * (fhat * np.conj(spec))
    # sum_r A B h^3 = (h^3 / N^3) sum_k Ahat conj(Bhat); gradient brings i k_a
    pref = (
        math.sqrt(c.mass / c.hbar)
        / _omega_cached(profile)
        * grid.h**3
        / grid.n**3
    )
    w = np.empty(3)
    w[0] = pref * float(np.sum((1j * kxd[:, None, None]) * cross).real)
    w[1] = pref * float(np.sum((1j * kxd[None, :, None]) * cross).real)
    w[2] = pref * float(np.sum((1j * kzd[None, None, :]) * cross).real)
    return w
