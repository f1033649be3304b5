"""Mean-field variational E-step for the sparse Markov-prior model.

The factorised posterior is ``q(x) q(gamma) q(s) q(kappa)`` with a complex
Gaussian ``q(x)``, independent Gamma factors for the precisions, Bernoulli
support factors and a Gamma noise precision.  Each update below is the exact
coordinate minimiser of :func:`free_energy`, so a full sweep never increases it.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg
from scipy.special import digamma, gammaln, xlogy

from .errors import ConfigurationError
from .prior import GammaHyper

_COND_LIMIT = 1e12


@dataclass
class PosteriorState:
    """Parameters of the factorised posterior."""

    mu: np.ndarray
    sigma: np.ndarray
    a_gamma: np.ndarray
    b_gamma: np.ndarray
    pi: np.ndarray
    a_kappa_t: float
    b_kappa_t: float

    @property
    def gamma_mean(self) -> np.ndarray:
        return self.a_gamma / self.b_gamma

    @property
    def log_gamma_mean(self) -> np.ndarray:
        return digamma(self.a_gamma) - np.log(self.b_gamma)

    @property
    def kappa_mean(self) -> float:
        return self.a_kappa_t / self.b_kappa_t

    @property
    def x_second_moment(self) -> np.ndarray:
        return np.abs(self.mu) ** 2 + np.real(np.diag(self.sigma))

    def copy(self) -> "PosteriorState":
        return PosteriorState(self.mu.copy(), self.sigma.copy(), self.a_gamma.copy(),
                              self.b_gamma.copy(), self.pi.copy(), self.a_kappa_t, self.b_kappa_t)


@dataclass(frozen=True)
class SupportMessage:
    """Prior activity probabilities handed from one frame to the next."""

    pi_tilde: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pi_tilde, dtype=float)
        if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
            raise ConfigurationError("support probabilities must lie in [0, 1]")
        object.__setattr__(self, "pi_tilde", p)

    @classmethod
    def stationary(cls, n_tilde: int, lam: float) -> "SupportMessage":
        return cls(np.full(n_tilde, float(lam)))


class LinearModel:
    """``y = F x + n`` with the Gram quantities cached for repeated sweeps."""

    def __init__(self, F, y):
        self.F = np.asarray(F, dtype=complex)
        self.y = np.asarray(y, dtype=complex)
        if self.F.ndim != 2 or self.F.shape[0] != self.y.size:
            raise ConfigurationError("F rows (%s) must match len(y) (%d)"
                                     % (self.F.shape, self.y.size))
        self.gram = self.F.conj().T @ self.F
        self.fhy = self.F.conj().T @ self.y
        self.yy = float(np.real(np.vdot(self.y, self.y)))

    @property
    def rows(self) -> int:
        return self.F.shape[0]

    def residual_energy(self, mu, sigma) -> float:
        """``||y - F mu||^2 + tr(F sigma F^H)``, the expected squared residual."""
        r = self.y - self.F @ mu
        return float(np.real(np.vdot(r, r)) + np.real(np.sum(sigma * self.gram.T)))


def _as_model(F, y, model):
    return model if model is not None else LinearModel(F, y)


def _hermitian(a):
    return 0.5 * (a + a.conj().T)


def _posterior_direct(gram, fhy, gamma_mean, kappa):
    prec = np.diag(gamma_mean).astype(complex) + kappa * gram
    try:
        c = linalg.cho_factor(prec, lower=True)
        sigma = linalg.cho_solve(c, np.eye(prec.shape[0], dtype=complex))
    except linalg.LinAlgError:
        warnings.warn("posterior precision not positive definite; regularising", RuntimeWarning)
        sigma = np.linalg.inv(prec + 1e-10 * np.eye(prec.shape[0]))
    sigma = _hermitian(sigma)
    return kappa * sigma @ fhy, sigma


def _posterior_woodbury(F, y, gamma_mean, kappa):
    r = 1.0 / gamma_mean
    fr = F * r[None, :]
    inner = np.eye(F.shape[0]) + kappa * fr @ F.conj().T
    if np.linalg.cond(inner) > _COND_LIMIT:
        return None
    sol = np.linalg.solve(inner, fr)
    sigma = np.diag(r).astype(complex) - kappa * fr.conj().T @ sol
    sigma = _hermitian(sigma)
    return kappa * sigma @ (F.conj().T @ y), sigma


def gaussian_posterior(F, y, gamma_mean, kappa, method: str = "auto", model=None):
    """Gaussian posterior of ``x`` given diagonal prior precisions and noise precision.

    Args:
        F: measurement matrix, ``rows x n_tilde``.
        y: observations.
        gamma_mean: prior precisions (diagonal).
        kappa: noise precision.
        method: ``"direct"``, ``"woodbury"`` or ``"auto"`` (Woodbury when the
            row count is smaller than ``n_tilde``).
        model: optional cached :class:`LinearModel` for ``(F, y)``.

    Returns:
        ``(mu, sigma)``.
    """
    gamma_mean = np.asarray(gamma_mean, dtype=float)
    F = np.asarray(F, dtype=complex)
    if method == "auto":
        method = "woodbury" if F.shape[0] < F.shape[1] else "direct"
    if method == "woodbury":
        out = _posterior_woodbury(F, np.asarray(y, dtype=complex), gamma_mean, kappa)
        if out is not None:
            return out
    elif method != "direct":
        raise ValueError("unknown method %r" % method)
    model = _as_model(F, y, model)
    return _posterior_direct(model.gram, model.fhy, gamma_mean, kappa)


def init_frame(msg: SupportMessage, F, y, hyper: GammaHyper, model=None) -> PosteriorState:
    """Initial posterior from the incoming support message.

    The precision factors start at the prior mixture moments, the support at
    the message, and ``q(x)`` at the unit-noise-precision Gaussian posterior.
    """
    model = _as_model(F, y, model)
    pt = msg.pi_tilde
    if pt.size != model.F.shape[1]:
        raise ConfigurationError("message length %d does not match F columns %d"
                                 % (pt.size, model.F.shape[1]))
    a_g = pt * hyper.a + (1 - pt) * hyper.a_bar
    b_g = pt * hyper.b + (1 - pt) * hyper.b_bar
    mu, sigma = _posterior_direct(model.gram, model.fhy, a_g / b_g, 1.0)
    return PosteriorState(mu, sigma, a_g, b_g, pt.copy(), hyper.a_kappa, hyper.b_kappa)


def update_kappa(state: PosteriorState, F, y, hyper: GammaHyper, model=None) -> PosteriorState:
    model = _as_model(F, y, model)
    a = hyper.a_kappa + model.rows
    b = hyper.b_kappa + model.residual_energy(state.mu, state.sigma)
    return replace(state, a_kappa_t=float(a), b_kappa_t=float(b))


def update_x(state: PosteriorState, F, y, method: str = "direct", model=None) -> PosteriorState:
    model = _as_model(F, y, model)
    mu, sigma = gaussian_posterior(model.F, model.y, state.gamma_mean, state.kappa_mean,
                                   method=method, model=model)
    return replace(state, mu=mu, sigma=sigma)


def update_gamma(state: PosteriorState, hyper: GammaHyper) -> PosteriorState:
    p = state.pi
    a = p * hyper.a + (1 - p) * hyper.a_bar + 1.0
    b = p * hyper.b + (1 - p) * hyper.b_bar + state.x_second_moment
    return replace(state, a_gamma=a, b_gamma=b)


def _branch_log_weight(shape, rate, e_log, e_gamma):
    return shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * e_log - rate * e_gamma


def update_s(state: PosteriorState, msg: SupportMessage, hyper: GammaHyper) -> PosteriorState:
    """Bernoulli support update, computed with a two-branch log-sum-exp."""
    e_log = state.log_gamma_mean
    e_g = state.gamma_mean
    pt = msg.pi_tilde
    with np.errstate(divide="ignore"):
        l1 = np.log(pt) + _branch_log_weight(hyper.a, hyper.b, e_log, e_g)
        l0 = np.log1p(-pt) + _branch_log_weight(hyper.a_bar, hyper.b_bar, e_log, e_g)
    top = np.maximum(l1, l0)
    with np.errstate(invalid="ignore"):
        p = np.exp(l1 - top) / (np.exp(l1 - top) + np.exp(l0 - top))
    p = np.where(pt >= 1, 1.0, np.where(pt <= 0, 0.0, p))
    return replace(state, pi=p)


def _gamma_entropy(a, b):
    return a - np.log(b) + gammaln(a) + (1 - a) * digamma(a)


def free_energy(state: PosteriorState, F, y, msg: SupportMessage, hyper: GammaHyper,
                model=None) -> float:
    """Variational free energy ``E_q[ln q] - E_q[ln p(y, x, gamma, s, kappa)]``."""
    model = _as_model(F, y, model)
    n = state.mu.size
    e_k, e_lk = state.kappa_mean, digamma(state.a_kappa_t) - np.log(state.b_kappa_t)
    e_g, e_lg = state.gamma_mean, state.log_gamma_mean
    p, pt = state.pi, msg.pi_tilde

    lik = model.rows * (e_lk - np.log(np.pi)) - e_k * model.residual_energy(state.mu, state.sigma)
    x_prior = np.sum(-np.log(np.pi) + e_lg - e_g * state.x_second_moment)
    g_prior = np.sum(p * _branch_log_weight(hyper.a, hyper.b, e_lg, e_g)
                     + (1 - p) * _branch_log_weight(hyper.a_bar, hyper.b_bar, e_lg, e_g))
    with np.errstate(divide="ignore", invalid="ignore"):
        s_prior = np.sum(xlogy(p, pt) + xlogy(1 - p, 1 - pt))
    k_prior = _branch_log_weight(hyper.a_kappa, hyper.b_kappa, e_lk, e_k)

    try:
        chol = np.linalg.cholesky(state.sigma)
        logdet = 2.0 * np.sum(np.log(np.real(np.diag(chol))))
    except np.linalg.LinAlgError:
        logdet = float(np.linalg.slogdet(state.sigma)[1])
    h_x = n * np.log(np.pi * np.e) + logdet
    h_g = np.sum(_gamma_entropy(state.a_gamma, state.b_gamma))
    h_s = -np.sum(xlogy(p, p) + xlogy(1 - p, 1 - p))
    h_k = _gamma_entropy(state.a_kappa_t, state.b_kappa_t)
    return float(-(lik + x_prior + g_prior + s_prior + k_prior) - (h_x + h_g + h_s + h_k))


def sweep(state: PosteriorState, model: LinearModel, msg: SupportMessage, hyper: GammaHyper,
          method: str = "direct") -> PosteriorState:
    """One pass of the four factor updates in the order kappa, x, gamma, s."""
    state = update_kappa(state, None, None, hyper, model=model)
    state = update_x(state, None, None, method=method, model=model)
    state = update_gamma(state, hyper)
    return update_s(state, msg, hyper)


def _max_change(a: PosteriorState, b: PosteriorState) -> float:
    rel = lambda u, v: float(np.max(np.abs(u - v) / np.maximum(np.abs(v), 1.0), initial=0.0))
    return max(rel(a.mu, b.mu), rel(a.sigma, b.sigma), rel(a.gamma_mean, b.gamma_mean),
               rel(a.pi, b.pi), rel(a.kappa_mean, b.kappa_mean))


def estep(state: PosteriorState, model: LinearModel, msg: SupportMessage, hyper: GammaHyper,
          max_sweeps: int = 50, tol: float = 1e-6, param_tol: float | None = None):
    """Repeat :func:`sweep` until the relative free-energy change drops below ``tol``.

    The free energy is flat to first order near a stationary point, so a small
    change in it only bounds the parameter change by about ``sqrt(tol)``.
    When ``param_tol`` is given the largest relative change of any factor
    parameter must also fall below it.

    Returns:
        ``(state, trace, converged)`` where ``trace`` lists the free energy
        after every sweep.
    """
    trace = []
    prev = free_energy(state, None, None, msg, hyper, model=model)
    converged = False
    for _ in range(max_sweeps):
        old = state
        state = sweep(state, model, msg, hyper)
        fe = free_energy(state, None, None, msg, hyper, model=model)
        trace.append(fe)
        if abs(prev - fe) <= tol * max(1.0, abs(fe)) and (
                param_tol is None or _max_change(state, old) <= param_tol):
            converged = True
            break
        prev = fe
    return state, trace, converged
