"""Synthetic Doppler multipath channels with a Markov-evolving AoA support.

Each frame holds ``l_t`` paths.  Every path sits on a distinct AoA grid
point and a distinct AoD grid point, displaced by an off-grid offset that
keeps the nearest grid point unchanged.  Within a frame the channel at
symbol ``i`` is ``A_{R,i}(phi) X A_T(beta_T)^H``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .arrays import (AngularGrid, ArrayShape, PhiParams, assemble_A_R, assemble_A_T,
                     steering_matrix)
from .errors import ConfigurationError
from .prior import MarkovParams

# fraction of the half spacing used when drawing offsets, so that the
# nearest grid point of a perturbed angle is never ambiguous
_OFFSET_MARGIN = 0.98


@dataclass
class FrameTruth:
    """Ground-truth parameters of one frame.

    ``aoa_idx``/``aod_idx`` are the grid points hosting each path and
    ``beta_R``/``beta_T`` the full offset vectors (zero off the support).
    ``x_true`` is filled by :func:`with_training` once a training vector is known.
    """

    t: int
    alpha: np.ndarray
    aoa_idx: np.ndarray
    aod_idx: np.ndarray
    beta_R: np.ndarray
    beta_T: np.ndarray
    f_d: float
    eta: float
    x_true: np.ndarray | None = field(default=None, repr=False)

    @property
    def l_t(self) -> int:
        return int(self.alpha.size)

    @property
    def n_tilde(self) -> int:
        return int(self.beta_R.size)

    @property
    def support_R(self) -> np.ndarray:
        s = np.zeros(self.n_tilde, dtype=bool)
        s[self.aoa_idx] = True
        return s

    def aoa(self, grid: AngularGrid) -> np.ndarray:
        return grid.theta_R[self.aoa_idx] + self.beta_R[self.aoa_idx]

    def aod(self, grid: AngularGrid) -> np.ndarray:
        return grid.theta_T[self.aod_idx] + self.beta_T[self.aod_idx]

    def phi(self) -> PhiParams:
        return PhiParams(self.beta_R.copy(), float(self.eta), float(self.f_d))

    def angular(self) -> "AngularChannel":
        x = np.zeros((self.n_tilde, self.beta_T.size), dtype=complex)
        x[self.aoa_idx, self.aod_idx] = self.alpha
        return AngularChannel(x, self.beta_T.copy(), self.beta_R.copy())

    def with_training(self, grid: AngularGrid, v) -> "FrameTruth":
        return replace(self, x_true=partial_coefficients(self, grid, v))

    def to_dict(self, grid: AngularGrid) -> dict:
        """JSON-friendly record; complex values become ``[re, im]`` pairs."""
        def cpx(z):
            return [[float(c.real), float(c.imag)] for c in np.atleast_1d(z)]
        d = {
            "t": int(self.t),
            "l_t": self.l_t,
            "alpha": cpx(self.alpha),
            "aod": [float(a) for a in self.aod(grid)],
            "aoa": [float(a) for a in self.aoa(grid)],
            "aoa_idx": [int(k) for k in self.aoa_idx],
            "aod_idx": [int(k) for k in self.aod_idx],
            "f_d": float(self.f_d),
            "eta": float(self.eta),
            "support_R": [int(b) for b in self.support_R],
        }
        if self.x_true is not None:
            d["x_true"] = cpx(self.x_true)
        return d


@dataclass
class AngularChannel:
    """Sparse angular matrix ``x_tilde`` (``n_tilde x m_tilde``) and its offsets."""

    x_tilde: np.ndarray
    beta_T: np.ndarray
    beta_R: np.ndarray


@dataclass(frozen=True)
class ScenarioConfig:
    """Parameters of the synthetic path generator.

    Attributes:
        l_mean: mean of the Poisson path count of the first frame.
        l_max: upper truncation of the first-frame path count.
        min_paths: paths forced active when the support chain empties.
        f_d: maximum Doppler in cycles per symbol.
        f_d_mode: ``"constant"`` or ``"drift"`` (multiplicative log-normal walk).
        eta_mode: ``"redraw"``, ``"constant"`` or ``"drift"``.
        offset_jitter: std of the offset perturbation of surviving paths,
            as a fraction of the half spacing.
        power_decay_db: per-path power decay applied to new paths in draw order.
    """

    markov: MarkovParams = MarkovParams(0.01, 0.1)
    l_mean: float = 3.0
    l_max: int = 6
    min_paths: int = 1
    f_d: float = 1e-3
    f_d_mode: str = "constant"
    f_d_drift: float = 0.01
    eta_mode: str = "redraw"
    eta_drift: float = 0.05
    offset_jitter: float = 0.1
    power_decay_db: float = 0.0

    def __post_init__(self):
        if self.l_max < 1 or self.min_paths < 1 or self.min_paths > self.l_max:
            raise ConfigurationError("need 1 <= min_paths <= l_max")
        if self.f_d < 0:
            raise ConfigurationError("f_d must be nonnegative")
        if self.f_d_mode not in ("constant", "drift"):
            raise ConfigurationError("unknown f_d_mode %r" % self.f_d_mode)
        if self.eta_mode not in ("redraw", "constant", "drift"):
            raise ConfigurationError("unknown eta_mode %r" % self.eta_mode)


def _draw_offsets(lo, hi, rng):
    u = rng.random(np.shape(lo))
    return _OFFSET_MARGIN * (-lo + u * (lo + hi))


def _cn(rng, size, power=1.0):
    return np.sqrt(np.asarray(power) / 2) * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def _new_paths(grid: AngularGrid, k: int, busy_R, busy_T, rng, start_rank=0, decay_db=0.0):
    """Draw ``k`` paths on grid points not in ``busy_R``/``busy_T``."""
    free_R = np.setdiff1d(np.arange(grid.n_tilde), busy_R)
    free_T = np.setdiff1d(np.arange(grid.m_tilde), busy_T)
    k = min(k, free_R.size, free_T.size)
    aoa_idx = rng.choice(free_R, size=k, replace=False)
    aod_idx = rng.choice(free_T, size=k, replace=False)
    power = 10.0 ** (-decay_db * (start_rank + np.arange(k)) / 10.0)
    alpha = _cn(rng, k, power)
    return aoa_idx, aod_idx, alpha


def initial_frame(grid: AngularGrid, scenario: ScenarioConfig, rng=None) -> FrameTruth:
    """First frame: truncated-Poisson path count, uniform grid points and offsets."""
    rng = np.random.default_rng(rng)
    l_t = int(rng.poisson(scenario.l_mean))
    l_t = int(np.clip(l_t, scenario.min_paths, scenario.l_max))
    l_t = min(l_t, grid.n_tilde, grid.m_tilde)
    aoa_idx, aod_idx, alpha = _new_paths(grid, l_t, [], [], rng, decay_db=scenario.power_decay_db)
    lo_R, hi_R = grid.offset_bounds_R()
    lo_T, hi_T = grid.offset_bounds_T()
    beta_R = np.zeros(grid.n_tilde)
    beta_T = np.zeros(grid.m_tilde)
    beta_R[aoa_idx] = _draw_offsets(lo_R[aoa_idx], hi_R[aoa_idx], rng)
    beta_T[aod_idx] = _draw_offsets(lo_T[aod_idx], hi_T[aod_idx], rng)
    eta = 0.0 if scenario.eta_mode == "constant" else float(rng.uniform(0, 2 * np.pi))
    order = np.argsort(aoa_idx)
    return FrameTruth(0, alpha[order], aoa_idx[order], aod_idx[order], beta_R, beta_T,
                      float(scenario.f_d), eta)


def evolve_frame(prev: FrameTruth, markov: MarkovParams, grid: AngularGrid, rng=None,
                 scenario: ScenarioConfig | None = None) -> FrameTruth:
    """Advance the ground truth by one frame.

    The AoA support follows the Markov chain.  Surviving paths keep their
    gain, AoD and AoA grid points and get a small offset jitter.  Newly
    activated grid points host fresh CN(0, 1) paths with uniform offsets.
    If fewer than ``scenario.min_paths`` paths remain, extra paths are
    activated so the frame is never empty.

    Args:
        prev: previous frame.
        markov: support transition probabilities.
        grid: angular grid.
        rng: seed or generator.
        scenario: drift and jitter settings; defaults to ``ScenarioConfig()``
            with ``markov`` substituted.

    Returns:
        The next :class:`FrameTruth` with ``x_true`` unset.
    """
    rng = np.random.default_rng(rng)
    if scenario is None:
        scenario = ScenarioConfig(markov=markov)
    if prev.n_tilde != grid.n_tilde or prev.beta_T.size != grid.m_tilde:
        raise ConfigurationError("frame truth does not match the grid")
    s_prev = prev.support_R
    u = rng.random(grid.n_tilde)
    s_new = np.where(s_prev, u >= markov.rho_10, u < markov.rho_01)

    lo_R, hi_R = grid.offset_bounds_R()
    lo_T, hi_T = grid.offset_bounds_T()
    keep = s_new[prev.aoa_idx]
    aoa_idx = prev.aoa_idx[keep]
    aod_idx = prev.aod_idx[keep]
    alpha = prev.alpha[keep]
    beta_R = np.zeros(grid.n_tilde)
    beta_T = np.zeros(grid.m_tilde)
    jit = scenario.offset_jitter * rng.standard_normal(aoa_idx.size)
    half = 0.5 * (lo_R[aoa_idx] + hi_R[aoa_idx])
    beta_R[aoa_idx] = np.clip(prev.beta_R[aoa_idx] + jit * half,
                              -_OFFSET_MARGIN * lo_R[aoa_idx], _OFFSET_MARGIN * hi_R[aoa_idx])
    beta_T[aod_idx] = prev.beta_T[aod_idx]

    born = np.flatnonzero(s_new & ~s_prev)
    n_new = born.size
    deficit = max(0, scenario.min_paths - (aoa_idx.size + n_new))
    # births use the chain's chosen grid points; top-ups pick free points
    new_R = born
    if deficit:
        free = np.setdiff1d(np.arange(grid.n_tilde), np.concatenate([aoa_idx, born]))
        new_R = np.concatenate([born, rng.choice(free, size=min(deficit, free.size), replace=False)])
    free_T = np.setdiff1d(np.arange(grid.m_tilde), aod_idx)
    n_add = min(new_R.size, free_T.size)
    new_R = new_R[:n_add]
    new_T = rng.choice(free_T, size=n_add, replace=False)
    power = 10.0 ** (-scenario.power_decay_db * np.arange(n_add) / 10.0)
    new_alpha = _cn(rng, n_add, power)
    beta_R[new_R] = _draw_offsets(lo_R[new_R], hi_R[new_R], rng)
    beta_T[new_T] = _draw_offsets(lo_T[new_T], hi_T[new_T], rng)

    aoa_idx = np.concatenate([aoa_idx, new_R]).astype(int)
    aod_idx = np.concatenate([aod_idx, new_T]).astype(int)
    alpha = np.concatenate([alpha, new_alpha])
    order = np.argsort(aoa_idx)

    f_d = prev.f_d
    if scenario.f_d_mode == "drift":
        f_d = float(f_d * np.exp(scenario.f_d_drift * rng.standard_normal()))
    if scenario.eta_mode == "redraw":
        eta = float(rng.uniform(0, 2 * np.pi))
    elif scenario.eta_mode == "drift":
        eta = float((prev.eta + scenario.eta_drift * rng.standard_normal()) % (2 * np.pi))
    else:
        eta = prev.eta
    return FrameTruth(prev.t + 1, alpha[order], aoa_idx[order], aod_idx[order],
                      beta_R, beta_T, f_d, eta)


def render_channel(truth: FrameTruth, grid: AngularGrid, shape: ArrayShape, i) -> np.ndarray:
    """Channel ``H_{t,i}`` (``n x m``) in compact angular form."""
    ang = truth.angular()
    a_r = assemble_A_R(grid, truth.phi(), i, shape.n)
    a_t = assemble_A_T(grid, ang.beta_T, shape.m)
    return a_r @ ang.x_tilde @ a_t.conj().T


def render_channel_pathsum(truth: FrameTruth, grid: AngularGrid, shape: ArrayShape, i) -> np.ndarray:
    """Channel ``H_{t,i}`` as an explicit sum of rank-one path contributions."""
    aoa = truth.aoa(grid)
    aod = truth.aod(grid)
    n_r = np.arange(shape.n)[:, None, None]
    n_t = np.arange(shape.m)[None, :, None]
    dop = np.exp(2j * np.pi * truth.f_d * i * np.cos(aoa + truth.eta))
    phase = np.exp(-1j * np.pi * n_r * np.sin(aoa) + 1j * np.pi * n_t * np.sin(aod))
    return (phase * (truth.alpha * dop)).sum(axis=2) / np.sqrt(shape.m * shape.n)


def partial_coefficients(truth: FrameTruth, grid: AngularGrid, v) -> np.ndarray:
    """Projection of each AoA row of the angular channel onto the training vector."""
    v = np.asarray(v, dtype=complex)
    x = np.zeros(truth.n_tilde, dtype=complex)
    a_t = steering_matrix(truth.aod(grid), v.size)
    x[truth.aoa_idx] = truth.alpha * (a_t.conj().T @ v)
    return x
