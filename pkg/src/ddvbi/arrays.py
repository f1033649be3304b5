"""Angular grids and half-wavelength ULA response vectors.

All angles are in radians.  Grids are defined through their sine values,
``sin(theta_k) = (2/K) * (k - floor((K-1)/2))``, and mapped back with
``arcsin`` so every grid angle lies in ``[-pi/2, pi/2]``.  Doppler
frequencies are normalised to the symbol rate (cycles per symbol).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError


def sine_grid(k: int) -> np.ndarray:
    """Sine values of a ``k``-point uniform angular grid."""
    if k < 1:
        raise ConfigurationError("grid size must be >= 1, got %d" % k)
    idx = np.arange(k)
    return (2.0 / k) * (idx - (k - 1) // 2)


def _half_spacing(theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # distance to the midpoint with each neighbour; edges stop at +-pi/2
    k = theta.size
    lo = np.empty(k)
    hi = np.empty(k)
    if k == 1:
        lo[0] = theta[0] + np.pi / 2
        hi[0] = np.pi / 2 - theta[0]
        return lo, hi
    gaps = np.diff(theta) / 2
    lo[1:] = gaps
    hi[:-1] = gaps
    lo[0] = min(gaps[0], theta[0] + np.pi / 2)
    hi[-1] = min(gaps[-1], np.pi / 2 - theta[-1])
    return lo, hi


@dataclass(frozen=True)
class AngularGrid:
    """AoD grid (``m_tilde`` points) and AoA grid (``n_tilde`` points)."""

    m_tilde: int
    n_tilde: int
    theta_T: np.ndarray = field(repr=False)
    theta_R: np.ndarray = field(repr=False)

    @classmethod
    def uniform(cls, m_tilde: int, n_tilde: int) -> "AngularGrid":
        theta_T = np.arcsin(sine_grid(m_tilde))
        theta_R = np.arcsin(sine_grid(n_tilde))
        return cls(m_tilde, n_tilde, theta_T, theta_R)

    def __post_init__(self):
        if self.theta_T.shape != (self.m_tilde,) or self.theta_R.shape != (self.n_tilde,):
            raise ConfigurationError("grid angle vectors do not match the grid sizes")

    def offset_bounds_T(self) -> tuple[np.ndarray, np.ndarray]:
        """(lower, upper) magnitudes of admissible AoD offsets per grid point."""
        return _half_spacing(self.theta_T)

    def offset_bounds_R(self) -> tuple[np.ndarray, np.ndarray]:
        """(lower, upper) magnitudes of admissible AoA offsets per grid point."""
        return _half_spacing(self.theta_R)

    def clip_beta_R(self, beta: np.ndarray) -> np.ndarray:
        lo, hi = self.offset_bounds_R()
        return np.clip(beta, -lo, hi)

    def nearest_R(self, angles) -> np.ndarray:
        """Index of the nearest AoA grid point for each angle."""
        angles = np.atleast_1d(np.asarray(angles, dtype=float))
        return np.argmin(np.abs(angles[:, None] - self.theta_R[None, :]), axis=1)

    def nearest_T(self, angles) -> np.ndarray:
        angles = np.atleast_1d(np.asarray(angles, dtype=float))
        return np.argmin(np.abs(angles[:, None] - self.theta_T[None, :]), axis=1)


@dataclass(frozen=True)
class ArrayShape:
    """Antenna and RF-chain counts at the BS (``m``, ``m_b``) and user (``n``, ``n_b``)."""

    m: int
    n: int
    m_b: int | None = None
    n_b: int | None = None

    def __post_init__(self):
        m_b = self.m if self.m_b is None else self.m_b
        n_b = self.n if self.n_b is None else self.n_b
        object.__setattr__(self, "m_b", m_b)
        object.__setattr__(self, "n_b", n_b)
        if self.m < 1 or self.n < 1:
            raise ConfigurationError("antenna counts must be positive")
        if not (1 <= m_b <= self.m and 1 <= n_b <= self.n):
            raise ConfigurationError("RF chain counts must lie in [1, antennas]")

    @property
    def limited_rf(self) -> bool:
        return self.n_b < self.n


@dataclass(frozen=True)
class PhiParams:
    """Measurement-matrix parameters: AoA offsets, array rotation, maximum DFO."""

    beta_R: np.ndarray
    eta: float
    f_d: float

    def replace(self, **kw) -> "PhiParams":
        d = {"beta_R": self.beta_R, "eta": self.eta, "f_d": self.f_d}
        d.update(kw)
        return PhiParams(np.asarray(d["beta_R"], dtype=float), float(d["eta"]), float(d["f_d"]))


def steering_matrix(thetas, m: int) -> np.ndarray:
    """Stack of ULA responses, ``m x len(thetas)``, each column of unit norm."""
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    k = np.arange(m)[:, None]
    return np.exp(-1j * np.pi * k * np.sin(thetas)[None, :]) / np.sqrt(m)


def steering_tx(theta: float, m: int) -> np.ndarray:
    """BS array response ``a_T(theta)``."""
    return steering_matrix([theta], m)[:, 0]


def steering_rx(theta: float, n: int) -> np.ndarray:
    """User array response ``a_R(theta)``."""
    return steering_matrix([theta], n)[:, 0]


def doppler_phase(f_d, i, angle):
    """Unit-modulus Doppler factor ``exp(j 2 pi f_d i cos(angle))``."""
    return np.exp(2j * np.pi * f_d * i * np.cos(angle))


def steering_rx_doppler(theta_grid: float, beta: float, f_d: float, eta: float,
                        i: int, n: int) -> np.ndarray:
    """Doppler-rotated user response for one AoA grid point at symbol ``i``."""
    angle = theta_grid + beta
    return steering_rx(angle, n) * doppler_phase(f_d, i, angle + eta)


def doppler_phases(grid: AngularGrid, phi: PhiParams, symbols) -> np.ndarray:
    """Doppler factors for every AoA grid point, shape ``(len(symbols), n_tilde)``."""
    symbols = np.atleast_1d(np.asarray(symbols, dtype=float))
    angle = grid.theta_R + phi.beta_R + phi.eta
    return np.exp(2j * np.pi * phi.f_d * symbols[:, None] * np.cos(angle)[None, :])


def _check_phi(grid: AngularGrid, phi: PhiParams):
    if np.shape(phi.beta_R) != (grid.n_tilde,):
        raise ConfigurationError(
            "beta_R has shape %s, expected (%d,)" % (np.shape(phi.beta_R), grid.n_tilde))


def assemble_A_R(grid: AngularGrid, phi: PhiParams, i: int, n: int) -> np.ndarray:
    """``A_{R,i}(phi)``: ``n x n_tilde`` matrix of Doppler-rotated AoA responses."""
    _check_phi(grid, phi)
    base = steering_matrix(grid.theta_R + phi.beta_R, n)
    return base * doppler_phases(grid, phi, [i])[0][None, :]


def assemble_A_T(grid: AngularGrid, beta_T: np.ndarray, m: int) -> np.ndarray:
    """``A_T(beta_T)``: ``m x m_tilde`` matrix of off-grid AoD responses."""
    if np.shape(beta_T) != (grid.m_tilde,):
        raise ConfigurationError("beta_T length does not match the AoD grid")
    return steering_matrix(grid.theta_T + beta_T, m)
