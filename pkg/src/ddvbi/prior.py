"""Three-layer hierarchical Markov prior over the AoA support.

Layer one is a binary support chain per grid point, layer two draws a
Gamma precision whose hyperparameters depend on the support bit, and layer
three is a circular complex Gaussian coefficient with that precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, xlogy

from .errors import ConfigurationError


@dataclass(frozen=True)
class MarkovParams:
    """Transition probabilities of the binary support chain.

    ``rho_01`` is P(s=1 | previous 0) and ``rho_10`` is P(s=0 | previous 1).
    """

    rho_01: float
    rho_10: float

    def __post_init__(self):
        for name in ("rho_01", "rho_10"):
            val = getattr(self, name)
            if not (0.0 <= val <= 1.0) or not np.isfinite(val):
                raise ConfigurationError("%s must lie in [0, 1], got %r" % (name, val))

    @property
    def lam(self) -> float:
        """Steady-state activity probability.

        A frozen chain (both rates zero) keeps any initial law; 0.5 is
        returned in that case.
        """
        tot = self.rho_01 + self.rho_10
        if tot == 0.0:
            return 0.5
        return self.rho_01 / tot

    def transition(self) -> np.ndarray:
        """Row-stochastic 2x2 matrix ``P[prev, next]``."""
        return np.array([[1.0 - self.rho_01, self.rho_01],
                         [self.rho_10, 1.0 - self.rho_10]])


@dataclass(frozen=True)
class GammaHyper:
    """Gamma hyperparameters for active/inactive precisions and the noise precision."""

    a: float = 0.1
    b: float = 0.1
    a_bar: float = 1.0
    b_bar: float = 1e-6
    a_kappa: float = 1e-6
    b_kappa: float = 1e-6

    def __post_init__(self):
        for name in ("a", "b", "a_bar", "b_bar", "a_kappa", "b_kappa"):
            val = getattr(self, name)
            if not (val > 0) or not np.isfinite(val):
                raise ConfigurationError("%s must be positive, got %r" % (name, val))


def support_log_prob(s, s_prev, markov: MarkovParams) -> float:
    """log p(s | s_prev); with ``s_prev=None`` the stationary marginal is used."""
    s = np.asarray(s, dtype=float)
    if s_prev is None:
        p1 = np.full(s.shape, markov.lam)
    else:
        s_prev = np.asarray(s_prev, dtype=float)
        p1 = s_prev * (1.0 - markov.rho_10) + (1.0 - s_prev) * markov.rho_01
    with np.errstate(divide="ignore"):
        return float(np.sum(xlogy(s, p1) + xlogy(1.0 - s, 1.0 - p1)))


def _gamma_logpdf(g, shape, rate):
    return shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(g) - rate * g


def log_prior_joint(x, gamma, s, s_prev, markov: MarkovParams, hyper: GammaHyper) -> float:
    """Joint log density ``log p(s|s_prev) + log p(gamma|s) + log p(x|gamma)``.

    Args:
        x: complex coefficients, length ``n_tilde``.
        gamma: positive precisions, length ``n_tilde``.
        s: binary support, length ``n_tilde``.
        s_prev: previous-frame support, or None for the first frame.
        markov: support chain parameters.
        hyper: Gamma hyperparameters.

    Returns:
        The log density as a float.
    """
    x = np.asarray(x, dtype=complex)
    gamma = np.asarray(gamma, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(gamma <= 0) or not np.all(np.isfinite(gamma)):
        raise ValueError("precisions must be finite and strictly positive")
    if not (x.shape == gamma.shape == s.shape):
        raise ConfigurationError("x, gamma and s must have equal length")
    lp = support_log_prob(s, s_prev, markov)
    shape = np.where(s > 0.5, hyper.a, hyper.a_bar)
    rate = np.where(s > 0.5, hyper.b, hyper.b_bar)
    lp += float(np.sum(_gamma_logpdf(gamma, shape, rate)))
    lp += float(np.sum(-np.log(np.pi) + np.log(gamma) - gamma * np.abs(x) ** 2))
    return lp


def sample_support_chain(markov: MarkovParams, n_tilde: int, n_frames: int, rng=None) -> np.ndarray:
    """Draw ``n_frames`` consecutive support vectors, shape ``(n_frames, n_tilde)``."""
    rng = np.random.default_rng(rng)
    out = np.empty((n_frames, n_tilde), dtype=bool)
    s = rng.random(n_tilde) < markov.lam
    for t in range(n_frames):
        if t > 0:
            u = rng.random(n_tilde)
            s = np.where(s, u >= markov.rho_10, u < markov.rho_01)
        out[t] = s
    return out


def sample_prior(markov: MarkovParams, hyper: GammaHyper, n_tilde: int, s_prev=None, rng=None):
    """Ancestral sample ``(s, gamma, x)`` for one frame.

    Args:
        markov: support chain parameters.
        hyper: Gamma hyperparameters.
        n_tilde: number of AoA grid points.
        s_prev: previous support or None to draw from the stationary law.
        rng: seed or ``numpy.random.Generator``.

    Returns:
        Tuple of boolean support, float precisions and complex coefficients.
    """
    rng = np.random.default_rng(rng)
    u = rng.random(n_tilde)
    if s_prev is None:
        s = u < markov.lam
    else:
        s_prev = np.asarray(s_prev, dtype=bool)
        s = np.where(s_prev, u >= markov.rho_10, u < markov.rho_01)
    shape = np.where(s, hyper.a, hyper.a_bar)
    rate = np.where(s, hyper.b, hyper.b_bar)
    gamma = rng.gamma(shape, 1.0 / rate)
    # guard against underflow to an exact zero precision
    gamma = np.maximum(gamma, np.finfo(float).tiny)
    scale = np.sqrt(0.5 / gamma)
    x = scale * (rng.standard_normal(n_tilde) + 1j * rng.standard_normal(n_tilde))
    return s, gamma, x
