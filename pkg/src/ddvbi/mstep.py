"""Surrogate maximisation over the measurement parameters ``phi = (beta_R, eta, f_d)``.

Only the expected log-likelihood depends on ``phi``; up to constants it equals
``-<kappa> (||y - F(phi) mu||^2 + tr(F(phi) Sigma F(phi)^H))``.  Gradients are
analytic.  Steps follow a damped Gauss-Newton direction with Armijo backtracking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arrays import AngularGrid, ArrayShape, PhiParams, steering_matrix
from .errors import ConfigurationError
from .pilots import PilotSchedule, assemble_F
from .vbi import PosteriorState


@dataclass(frozen=True)
class ArmijoConfig:
    step: float = 1.0
    shrink: float = 0.5
    c: float = 1e-4
    max_backtracks: int = 30

    def __post_init__(self):
        if not (0 < self.shrink < 1) or self.step <= 0 or self.c <= 0 or self.max_backtracks < 1:
            raise ConfigurationError("invalid Armijo settings")


@dataclass(frozen=True)
class PilotGeometry:
    """Everything needed to evaluate ``F(phi)`` for one frame."""

    grid: AngularGrid
    schedule: PilotSchedule
    shape: ArrayShape
    combiners: np.ndarray | None = None

    def F(self, phi: PhiParams) -> np.ndarray:
        return assemble_F(self.grid, phi, self.schedule, self.combiners, self.shape)

    def jacobians(self, phi: PhiParams):
        """``F`` and its derivatives.

        Returns:
            ``(F, D_f, D_eta, D_beta)``; column ``n`` of ``D_beta`` is the
            derivative of column ``n`` of ``F`` with respect to ``beta_R[n]``.
        """
        g = self.grid
        n = self.shape.n
        omega = g.theta_R + phi.beta_R
        base = steering_matrix(omega, n)
        d_base = base * (-1j * np.pi * np.arange(n)[:, None] * np.cos(omega)[None, :])
        if self.combiners is not None:
            uh = self.combiners.conj()
            base = np.einsum("knb,nc->kbc", uh, base)
            d_base = np.einsum("knb,nc->kbc", uh, d_base)
        else:
            base = base[None]
            d_base = d_base[None]
        idx = self.schedule.indices.astype(float)
        c = np.cos(omega + phi.eta)
        s = np.sin(omega + phi.eta)
        ph = np.exp(2j * np.pi * phi.f_d * idx[:, None] * c[None, :])[:, None, :]
        F = base * ph
        d_f = F * (2j * np.pi * idx[:, None, None] * c[None, None, :])
        d_eta = F * (-2j * np.pi * phi.f_d * idx[:, None, None] * s[None, None, :])
        d_beta = d_base * ph + d_eta
        k = g.n_tilde
        return (F.reshape(-1, k), d_f.reshape(-1, k), d_eta.reshape(-1, k),
                d_beta.reshape(-1, k))


def _second_moment(state: PosteriorState) -> np.ndarray:
    return state.sigma + np.outer(state.mu, state.mu.conj())


def surrogate_objective(phi: PhiParams, state: PosteriorState, y, geom: PilotGeometry,
                        F=None) -> float:
    """``-<kappa> (||y - F mu||^2 + tr(F Sigma F^H))`` at ``phi``."""
    if F is None:
        F = geom.F(phi)
    r = y - F @ state.mu
    tr = np.real(np.sum((F @ state.sigma) * F.conj()))
    return float(-state.kappa_mean * (np.real(np.vdot(r, r)) + tr))


def mstep_gradient(phi: PhiParams, state: PosteriorState, y, geom: PilotGeometry,
                   jac=None) -> np.ndarray:
    """Gradient of :func:`surrogate_objective`.

    Returns:
        Flat array ``[d/d beta_R (n_tilde entries), d/d eta, d/d f_d]``.
    """
    F, d_f, d_eta, d_beta = geom.jacobians(phi) if jac is None else jac
    G = F @ _second_moment(state) - np.outer(y, state.mu.conj())
    scale = -2.0 * state.kappa_mean
    g_beta = scale * np.real(np.sum(G.conj() * d_beta, axis=0))
    g_eta = scale * np.real(np.sum(G.conj() * d_eta))
    g_f = scale * np.real(np.sum(G.conj() * d_f))
    return np.concatenate([g_beta, [g_eta, g_f]])


def gauss_newton_matrix(state: PosteriorState, jac, active) -> np.ndarray:
    """Gauss-Newton curvature of the negated surrogate over ``[beta_R[active], eta, f_d]``."""
    _, d_f, d_eta, d_beta = jac
    P = _second_moment(state)
    db = d_beta[:, active]
    Pa = P[np.ix_(active, active)]
    full = [d_eta, d_f]
    k = db.shape[1]
    H = np.empty((k + 2, k + 2))
    H[:k, :k] = np.real(Pa * (db.conj().T @ db).T)
    for a, Da in enumerate(full):
        DaP = Da @ P
        H[:k, k + a] = np.real(np.sum(db.conj() * DaP[:, active], axis=0))
        H[k + a, :k] = H[:k, k + a]
        for b, Db in enumerate(full):
            H[k + a, k + b] = np.real(np.sum(Db.conj() * DaP))
    return 2.0 * state.kappa_mean * H


def project(phi: PhiParams, grid: AngularGrid, fd_max: float) -> PhiParams:
    """Clip offsets to the half spacing, ``f_d`` to ``[0, fd_max]`` and wrap ``eta``."""
    return PhiParams(grid.clip_beta_R(phi.beta_R), float(np.mod(phi.eta, 2 * np.pi)),
                     float(np.clip(phi.f_d, 0.0, fd_max)))


def _unflatten(vec, n_tilde):
    return vec[:n_tilde], vec[n_tilde], vec[n_tilde + 1]


def armijo_step(phi: PhiParams, state: PosteriorState, y, geom: PilotGeometry, fd_max: float,
                cfg: ArmijoConfig = ArmijoConfig(), active=None, estimate_eta: bool = True,
                estimate_f: bool = True):
    """One projected ascent step on the surrogate.

    The search direction is the damped Gauss-Newton direction restricted to
    ``beta_R[active]``, ``eta`` and ``f_d``; the step length comes from Armijo
    backtracking on the projected point.

    Args:
        phi: current parameters.
        state: E-step posterior (held fixed).
        y: observations.
        geom: pilot geometry.
        fd_max: upper bound on ``f_d``.
        cfg: Armijo settings.
        active: boolean mask of offsets to move; all when None.
        estimate_eta: when False, ``eta`` stays fixed.
        estimate_f: when False, ``f_d`` stays fixed.

    Returns:
        ``(phi_new, accepted, value_new)``.
    """
    n_t = geom.grid.n_tilde
    jac = geom.jacobians(phi)
    f0 = surrogate_objective(phi, state, y, geom, F=jac[0])
    grad = mstep_gradient(phi, state, y, geom, jac=jac)
    act = np.ones(n_t, bool) if active is None else np.asarray(active, bool)
    idx = np.flatnonzero(act)
    H = gauss_newton_matrix(state, jac, idx)
    g_sub = np.concatenate([grad[idx], grad[n_t:]])
    keep = np.ones(g_sub.size, bool)
    keep[-2] = estimate_eta
    keep[-1] = estimate_f
    H = H[np.ix_(keep, keep)]
    g_red = g_sub[keep]
    if g_red.size == 0 or not np.any(g_red):
        return phi, False, f0
    damp = 1e-9 * max(np.max(np.abs(np.diag(H))), 1e-300)
    try:
        d_red = np.linalg.solve(H + damp * np.eye(H.shape[0]), g_red)
    except np.linalg.LinAlgError:
        d_red = g_red
    if np.dot(d_red, g_red) <= 0:
        d_red = g_red
    d_sub = np.zeros(g_sub.size)
    d_sub[keep] = d_red
    direction = np.zeros(n_t + 2)
    direction[idx] = d_sub[:idx.size]
    direction[n_t:] = d_sub[idx.size:]

    x0 = np.concatenate([phi.beta_R, [phi.eta, phi.f_d]])
    step = cfg.step
    for _ in range(cfg.max_backtracks):
        b, e, f = _unflatten(x0 + step * direction, n_t)
        cand = project(PhiParams(b, e, f), geom.grid, fd_max)
        moved = np.concatenate([cand.beta_R - phi.beta_R,
                                [np.angle(np.exp(1j * (cand.eta - phi.eta))), cand.f_d - phi.f_d]])
        val = surrogate_objective(cand, state, y, geom)
        if val >= f0 + cfg.c * np.dot(grad, moved) and val >= f0:
            return cand, True, val
        step *= cfg.shrink
    return phi, False, f0


def profile_objective(phi: PhiParams, gamma_mean, kappa: float, y, geom: PilotGeometry,
                      F=None):
    """Surrogate with ``q(x)`` re-optimised at ``phi`` (precisions held fixed).

    Equals ``-kappa ||y||^2 + kappa^2 y^H F A^{-1} F^H y - ln det A`` with
    ``A = diag(gamma) + kappa F^H F``, up to constants.

    Returns:
        ``(value, mu, sigma)`` where ``(mu, sigma)`` is the re-optimised ``q(x)``.
    """
    if F is None:
        F = geom.F(phi)
    A = np.diag(np.asarray(gamma_mean, float)).astype(complex) + kappa * (F.conj().T @ F)
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return -np.inf, None, None
    rhs = kappa * (F.conj().T @ y)
    w = np.linalg.solve(L, rhs)
    mu = np.linalg.solve(L.conj().T, w)
    linv = np.linalg.solve(L, np.eye(L.shape[0]))
    sigma = linv.conj().T @ linv
    val = (-kappa * np.real(np.vdot(y, y)) + np.real(np.vdot(w, w))
           - 2.0 * np.sum(np.log(np.real(np.diag(L)))))
    return float(val), mu, sigma


def _projection_curvature(state: PosteriorState, jac, active):
    # Gauss-Newton curvature of the profiled residual; directions that q(x)
    # can absorb get little curvature and therefore long steps
    F, d_f, d_eta, d_beta = jac
    mu = state.mu
    u = np.column_stack([d_beta[:, active] * mu[active][None, :], d_eta @ mu, d_f @ mu])
    kap = state.kappa_mean
    fu = F.conj().T @ u
    H = u.conj().T @ u - kap * fu.conj().T @ state.sigma @ fu
    return 2.0 * kap * np.real(H)


def profile_step(phi: PhiParams, gamma_mean, kappa: float, y, geom: PilotGeometry, fd_max: float,
                 cfg: ArmijoConfig = ArmijoConfig(), active=None, estimate_eta: bool = True,
                 estimate_f: bool = True, value=None):
    """Projected ascent step on :func:`profile_objective`.

    Returns:
        ``(phi_new, accepted, value_new)``.
    """
    n_t = geom.grid.n_tilde
    jac = geom.jacobians(phi)
    if value is None:
        f0, mu, sigma = profile_objective(phi, gamma_mean, kappa, y, geom, F=jac[0])
    else:
        f0, mu, sigma = value
    if mu is None:
        return phi, False, f0
    st = PosteriorState(mu, sigma, np.ones(n_t), np.ones(n_t), np.zeros(n_t), kappa, 1.0)
    grad = mstep_gradient(phi, st, y, geom, jac=jac)
    act = np.ones(n_t, bool) if active is None else np.asarray(active, bool)
    idx = np.flatnonzero(act)
    H = _projection_curvature(st, jac, idx)
    g_sub = np.concatenate([grad[idx], grad[n_t:]])
    keep = np.ones(g_sub.size, bool)
    keep[-2] = estimate_eta
    keep[-1] = estimate_f
    H = H[np.ix_(keep, keep)]
    g_red = g_sub[keep]
    if g_red.size == 0 or not np.any(g_red):
        return phi, False, f0
    damp = 1e-9 * max(np.max(np.abs(np.diag(H))), 1e-300)
    try:
        d_red = np.linalg.solve(H + damp * np.eye(H.shape[0]), g_red)
    except np.linalg.LinAlgError:
        d_red = g_red
    if np.dot(d_red, g_red) <= 0:
        d_red = g_red
    d_sub = np.zeros(g_sub.size)
    d_sub[keep] = d_red
    direction = np.zeros(n_t + 2)
    direction[idx] = d_sub[:idx.size]
    direction[n_t:] = d_sub[idx.size:]

    x0 = np.concatenate([phi.beta_R, [phi.eta, phi.f_d]])
    step = cfg.step
    for _ in range(cfg.max_backtracks):
        b, e, f = _unflatten(x0 + step * direction, n_t)
        cand = project(PhiParams(b, e, f), geom.grid, fd_max)
        moved = np.concatenate([cand.beta_R - phi.beta_R,
                                [np.angle(np.exp(1j * (cand.eta - phi.eta))), cand.f_d - phi.f_d]])
        val = profile_objective(cand, gamma_mean, kappa, y, geom)[0]
        if val >= f0 + cfg.c * np.dot(grad, moved) and val >= f0:
            return cand, True, val
        step *= cfg.shrink
    return phi, False, f0
