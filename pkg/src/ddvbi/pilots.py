"""Downlink training vectors, pilot placement, observations and measurement matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arrays import AngularGrid, ArrayShape, PhiParams, doppler_phases, steering_matrix
from .channel import FrameTruth, render_channel
from .errors import ConfigurationError

SNR_DEFINITION = (
    "per-receive-antenna pilot SNR = E||H_{t,0} v||^2 / (N sigma^2) with v isotropic "
    "and unit power, i.e. sigma^2 = ||H_{t,0}||_F^2 / (M N snr_lin)"
)


@dataclass(frozen=True)
class PilotSchedule:
    """``n_p`` downlink pilots spread uniformly over ``subframe_len`` symbols."""

    n_p: int
    subframe_len: int

    def __post_init__(self):
        if not (1 <= self.n_p <= self.subframe_len):
            raise ConfigurationError("need 1 <= n_p <= subframe_len")

    @property
    def indices(self) -> np.ndarray:
        k = np.arange(self.n_p)
        return (k * self.subframe_len) // self.n_p

    @property
    def spacing(self) -> float:
        return self.subframe_len / self.n_p


@dataclass
class TrainingDesign:
    """Designed training vector and the quantities it was built from."""

    v: np.ndarray
    rho_split: float
    mu_threshold: float
    basis: np.ndarray
    m_star: np.ndarray
    theta_s: np.ndarray
    exploration_only: bool = False

    @property
    def n_s(self) -> int:
        return int(self.m_star.size)


@dataclass
class Observation:
    """Stacked pilot observations ``y`` and the combiners used to form them.

    ``combiners`` is None in full-RF mode, otherwise an array of shape
    ``(n_p, n, n_b)`` holding one ``U_k`` per pilot.
    """

    y: np.ndarray
    combiners: np.ndarray | None
    noise_var: float
    schedule: PilotSchedule


def dft_basis(m: int) -> np.ndarray:
    """Unitary ``m x m`` DFT matrix with entries ``exp(-j 2 pi k l / m) / sqrt(m)``."""
    if m < 1:
        raise ConfigurationError("basis size must be >= 1")
    k = np.arange(m)
    return np.exp(-2j * np.pi * np.outer(k, k) / m) / np.sqrt(m)


def minimal_energy_set(energies, mu: float) -> np.ndarray:
    """Smallest index set whose energy reaches a fraction ``mu`` of the total.

    Energies are sorted in descending order (ties by lower index) and the
    shortest prefix reaching the threshold is returned.
    """
    energies = np.asarray(energies, dtype=float)
    total = energies.sum()
    if total <= 0:
        return np.array([], dtype=int)
    order = np.argsort(-energies, kind="stable")
    csum = np.cumsum(energies[order])
    # small slack so that mu = 1 is not defeated by rounding in the cumsum
    need = mu * total * (1.0 - 1e-12)
    k = int(np.searchsorted(csum, need, side="left")) + 1
    return order[:min(k, energies.size)]


def design_training_vector(h_eff_prev, basis, mu: float = 0.9, rho: float = 0.5,
                           rng=None) -> TrainingDesign:
    """Training vector mixing exploitation of promising directions with exploration.

    Args:
        h_eff_prev: previous effective-channel estimate, ``n_d x m``.
        basis: orthonormal ``m x m`` basis whose columns are candidate directions.
        mu: energy fraction defining the promising set.
        rho: power fraction placed on the promising set.
        rng: seed or generator for the random phases.

    Returns:
        A :class:`TrainingDesign` with unit-norm ``v``.
    """
    if not (0 < mu <= 1):
        raise ConfigurationError("mu must lie in (0, 1]")
    if not (0 <= rho <= 1):
        raise ConfigurationError("rho must lie in [0, 1]")
    rng = np.random.default_rng(rng)
    basis = np.asarray(basis, dtype=complex)
    m = basis.shape[1]
    h = np.atleast_2d(np.asarray(h_eff_prev, dtype=complex))
    if h.shape[1] != basis.shape[0]:
        raise ConfigurationError("effective channel width does not match the basis")
    theta = rng.uniform(0, 2 * np.pi, m)
    cols = basis * np.exp(1j * theta)[None, :]
    energies = np.sum(np.abs(h @ basis) ** 2, axis=0)
    m_star = minimal_energy_set(energies, mu)
    n_s = m_star.size
    rest = np.setdiff1d(np.arange(m), m_star)
    if n_s == 0:
        v = cols.sum(axis=1) / np.sqrt(m)
        return TrainingDesign(v, 0.0, mu, basis, m_star, theta, exploration_only=True)
    if n_s == m:
        v = cols.sum(axis=1) / np.sqrt(m)
    else:
        v = (np.sqrt(rho / n_s) * cols[:, m_star].sum(axis=1)
             + np.sqrt((1 - rho) / (m - n_s)) * cols[:, rest].sum(axis=1))
    return TrainingDesign(v, rho, mu, basis, m_star, theta)


def random_training_vector(m: int, rng=None) -> np.ndarray:
    """Isotropic unit-norm complex training vector."""
    rng = np.random.default_rng(rng)
    v = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    return v / np.linalg.norm(v)


def random_combiners(n: int, n_b: int, n_p: int, rng=None, vary: bool = True) -> np.ndarray:
    """Random ``n x n_b`` combiners with orthonormal columns, one per pilot."""
    if not (1 <= n_b <= n):
        raise ConfigurationError("need 1 <= n_b <= n")
    rng = np.random.default_rng(rng)
    count = n_p if vary else 1
    g = rng.standard_normal((count, n, n_b)) + 1j * rng.standard_normal((count, n, n_b))
    q, r = np.linalg.qr(g)
    # fix the phase ambiguity so the draw is Haar distributed
    d = np.diagonal(r, axis1=1, axis2=2)
    q = q * (d / np.abs(d))[:, None, :]
    if not vary:
        q = np.repeat(q, n_p, axis=0)
    return q


def noise_variance(truth: FrameTruth, grid: AngularGrid, shape: ArrayShape, snr_db: float) -> float:
    h0 = render_channel(truth, grid, shape, 0)
    snr = 10.0 ** (snr_db / 10.0)
    return float(np.linalg.norm(h0) ** 2 / (shape.m * shape.n * snr))


def synthesize_observation(truth: FrameTruth, grid: AngularGrid, shape: ArrayShape,
                           schedule: PilotSchedule, v, combiners=None, snr_db: float | None = None,
                           rng=None, noise_var: float | None = None) -> Observation:
    """Noisy pilot observations ``y_k = U_k^H (H_{t,i_k} v + n_k)``.

    Args:
        truth: frame ground truth.
        grid: angular grid.
        shape: array sizes.
        schedule: pilot placement.
        v: training vector, length ``m``.
        combiners: ``(n_p, n, n_b)`` combiners or None for full RF.
        snr_db: pilot SNR; ignored when ``noise_var`` is given.
        rng: seed or generator for the noise.
        noise_var: explicit noise variance, overriding ``snr_db``.

    Returns:
        The stacked :class:`Observation`.
    """
    rng = np.random.default_rng(rng)
    v = np.asarray(v, dtype=complex)
    if noise_var is None:
        noise_var = 0.0 if snr_db is None else noise_variance(truth, grid, shape, snr_db)
    _check_combiners(combiners, schedule, shape)
    blocks = []
    for k, i in enumerate(schedule.indices):
        r = render_channel(truth, grid, shape, i) @ v
        if noise_var > 0:
            r = r + np.sqrt(noise_var / 2) * (rng.standard_normal(shape.n)
                                              + 1j * rng.standard_normal(shape.n))
        if combiners is not None:
            r = combiners[k].conj().T @ r
        blocks.append(r)
    return Observation(np.concatenate(blocks), combiners, float(noise_var), schedule)


def _check_combiners(combiners, schedule: PilotSchedule, shape: ArrayShape):
    if combiners is None:
        return
    if combiners.ndim != 3 or combiners.shape[0] != schedule.n_p or combiners.shape[1] != shape.n:
        raise ConfigurationError("combiners must have shape (n_p, n, n_b)")


def assemble_F(grid: AngularGrid, phi: PhiParams, schedule: PilotSchedule, combiners,
               shape: ArrayShape) -> np.ndarray:
    """Stacked measurement matrix with blocks ``U_k^H A_{R,i_k}(phi)``."""
    if np.shape(phi.beta_R) != (grid.n_tilde,):
        raise ConfigurationError("beta_R length does not match the AoA grid")
    _check_combiners(combiners, schedule, shape)
    base = steering_matrix(grid.theta_R + phi.beta_R, shape.n)
    if combiners is not None:
        base = np.einsum("knb,nc->kbc", combiners.conj(), base)
    else:
        base = base[None, :, :]
    ph = doppler_phases(grid, phi, schedule.indices)
    blocks = base * ph[:, None, :]
    return blocks.reshape(-1, grid.n_tilde)
