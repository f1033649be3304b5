"""Per-frame alternating E/M solver and the multi-frame tracker built on it."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .arrays import PhiParams
from .errors import ConfigurationError
from .hyper_em import em_loop, local_evidence
from .mstep import ArmijoConfig, PilotGeometry, armijo_step, profile_step, project
from .prior import GammaHyper, MarkovParams
from .vbi import LinearModel, PosteriorState, SupportMessage, estep, free_energy, init_frame


@dataclass(frozen=True)
class SolverConfig:
    """Iteration limits and numerical settings of the per-frame solver.

    Attributes:
        max_outer_iters: cap on E/M alternations.
        max_estep_sweeps: cap on factor sweeps inside one E-step.
        elbo_tol: relative tolerance for both the free energy and parameter moves.
        armijo: line-search settings.
        pi_clamp: keeps outgoing support probabilities in ``[eps, 1 - eps]``.
        mstep_iters: accepted ascent steps attempted per outer iteration.
        fd_max: upper bound on the Doppler estimate (cycles per symbol).
        coarse_search: seed ``(f_d, eta)`` from a grid search each frame.
        coarse_eta_points: lower bound on the rotation grid size of that search.
        auto_scale: normalise ``y`` so active coefficients are of unit order.
        estimate_f, estimate_eta, estimate_beta: freeze the corresponding
            parameter at its initial value.
        active_threshold: support probability above which an offset is refined.
    """

    max_outer_iters: int = 50
    max_estep_sweeps: int = 50
    elbo_tol: float = 1e-6
    armijo: ArmijoConfig = ArmijoConfig()
    pi_clamp: float = 1e-3
    mstep_iters: int = 1
    fd_max: float = 3e-4
    coarse_search: bool = True
    coarse_eta_points: int = 16
    auto_scale: bool = True
    estimate_f: bool = True
    estimate_eta: bool = True
    estimate_beta: bool = True
    active_threshold: float = 0.5
    mstep_mode: str = "profile"

    def __post_init__(self):
        if self.max_outer_iters < 1 or self.max_estep_sweeps < 1 or self.mstep_iters < 0:
            raise ConfigurationError("iteration limits must be positive")
        if not (self.elbo_tol > 0):
            raise ConfigurationError("elbo_tol must be positive")
        if not (0 <= self.pi_clamp < 0.5):
            raise ConfigurationError("pi_clamp must lie in [0, 0.5)")
        if self.mstep_mode not in ("profile", "surrogate"):
            raise ConfigurationError("mstep_mode must be 'profile' or 'surrogate'")
        if not (self.fd_max > 0):
            raise ConfigurationError("fd_max must be positive")


@dataclass
class FrameEstimate:
    """Output of :func:`run_frame`."""

    x_hat: np.ndarray
    phi: PhiParams
    state: PosteriorState
    message: SupportMessage
    converged: bool
    outer_iters: int
    free_energy: list = field(default_factory=list)
    phi_trace: list = field(default_factory=list)
    scale: float = 1.0


def propagate_message(pi, markov: MarkovParams, eps: float = 0.0) -> SupportMessage:
    """Prior support probabilities of the next frame from this frame's posterior."""
    pi = np.asarray(pi, dtype=float)
    nxt = (1 - pi) * markov.rho_01 + pi * (1 - markov.rho_10)
    return SupportMessage(np.clip(nxt, eps, 1 - eps))


def _column_correlations(y, geom: PilotGeometry, beta):
    """``z[k, n] = (U_k^H a_n)^H y_k`` for the Doppler-free steering columns."""
    phi0 = PhiParams(beta, 0.0, 0.0)
    F0 = geom.F(phi0)
    n_p = geom.schedule.n_p
    rows = F0.shape[0] // n_p
    return np.einsum("krn,kr->kn", F0.reshape(n_p, rows, -1).conj(), y.reshape(n_p, rows))


def coarse_search(y, geom: PilotGeometry, fd_max: float, beta=None, candidates=(),
                  eta_points: int = 16, eta_fixed: float | None = None):
    """Grid search for ``(f_d, eta)`` that makes the significant columns add coherently.

    For every candidate the per-column matched-filter output ``|F_n^H y|^2``
    is normalised by its maximum over the grid, and the normalised values of
    the columns holding at least 10% of the peak energy are summed.  Each path
    then votes with equal weight, so the winner is the pair consistent with
    all dominant paths at once.

    Args:
        y: observations.
        geom: pilot geometry.
        fd_max: largest Doppler considered.
        beta: AoA offsets used for the columns (zeros when None).
        candidates: extra ``(f_d, eta)`` pairs to score, e.g. a warm start.
        eta_points: minimum number of rotation grid points.
        eta_fixed: search ``f_d`` only, at this rotation.

    Returns:
        ``(f_d, eta)`` of the best candidate.
    """
    grid = geom.grid
    beta = np.zeros(grid.n_tilde) if beta is None else np.asarray(beta, float)
    z = _column_correlations(y, geom, beta)
    idx = geom.schedule.indices.astype(float)
    span = max(idx[-1] - idx[0], 1.0)
    n_f = int(np.ceil(4 * fd_max * span)) + 1
    f_grid = np.linspace(0.0, fd_max, max(n_f, 2))
    if eta_fixed is None:
        n_eta = int(np.clip(np.ceil(8 * np.pi * fd_max * span), eta_points, 256))
        eta_grid = np.arange(n_eta) * (2 * np.pi / n_eta)
    else:
        eta_grid = np.array([float(eta_fixed)])
    ff, ee = np.meshgrid(f_grid, eta_grid, indexing="ij")
    pairs = np.column_stack([ff.ravel(), ee.ravel()])
    if len(candidates):
        pairs = np.vstack([pairs, np.asarray(candidates, float).reshape(-1, 2)])
    omega = grid.theta_R + beta
    cosv = np.cos(omega[None, :] + pairs[:, 1:2])
    ph = np.exp(-2j * np.pi * pairs[:, 0][:, None, None] * idx[None, :, None] * cosv[:, None, :])
    energy = np.abs(np.einsum("gkn,kn->gn", ph, z)) ** 2
    peak = energy.max(axis=0)
    sig = peak >= 0.1 * peak.max() if peak.max() > 0 else np.ones_like(peak, bool)
    score = (energy[:, sig] / peak[sig]).sum(axis=1)
    best = int(np.argmax(score))
    return float(pairs[best, 0]), float(np.mod(pairs[best, 1], 2 * np.pi))


def _auto_scale(y, F):
    norms = np.sum(np.abs(F) ** 2, axis=0)
    corr = np.abs(F.conj().T @ y) / np.maximum(norms, 1e-300)
    c = float(corr.max())
    return c if c > 0 else 1.0


def _phi_move(a: PhiParams, b: PhiParams, geom: PilotGeometry, fd_max: float) -> float:
    lo, hi = geom.grid.offset_bounds_R()
    half = np.maximum(0.5 * (lo + hi), 1e-12)
    d_beta = np.max(np.abs(a.beta_R - b.beta_R) / half) if a.beta_R.size else 0.0
    d_eta = abs(np.angle(np.exp(1j * (a.eta - b.eta)))) / (2 * np.pi)
    d_f = abs(a.f_d - b.f_d) / max(abs(b.f_d), 1e-3 * fd_max)
    return float(max(d_beta, d_eta, d_f))


def run_frame(obs_y, geom: PilotGeometry, msg: SupportMessage, phi_init: PhiParams,
              cfg: SolverConfig = SolverConfig(), hyper: GammaHyper = GammaHyper(),
              markov: MarkovParams = MarkovParams(0.01, 0.1)) -> FrameEstimate:
    """Estimate one frame by alternating E-steps and surrogate ascent steps.

    Args:
        obs_y: stacked observations of the frame.
        geom: pilot geometry (grid, schedule, array sizes, combiners).
        msg: incoming support message.
        phi_init: starting parameters (warm start from the previous frame).
        cfg: solver settings.
        hyper: Gamma hyperparameters.
        markov: support transition probabilities used for the outgoing message.

    Returns:
        A :class:`FrameEstimate`; ``converged`` is False when an iteration
        cap was hit, in which case the last iterate is returned.
    """
    y = np.asarray(obs_y, dtype=complex)
    grid = geom.grid
    if msg.pi_tilde.size != grid.n_tilde or np.shape(phi_init.beta_R) != (grid.n_tilde,):
        raise ConfigurationError("message or phi does not match the AoA grid")
    phi = project(phi_init, grid, cfg.fd_max)
    if cfg.coarse_search and cfg.estimate_f:
        eta_fixed = None if cfg.estimate_eta else phi.eta
        f0, e0 = coarse_search(y, geom, cfg.fd_max, beta=phi.beta_R,
                               candidates=[(phi.f_d, phi.eta)],
                               eta_points=cfg.coarse_eta_points, eta_fixed=eta_fixed)
        phi = phi.replace(f_d=f0, eta=e0)

    F = geom.F(phi)
    scale = _auto_scale(y, F) if cfg.auto_scale else 1.0
    ys = y / scale
    model = LinearModel(F, ys)
    state = init_frame(msg, None, None, hyper, model=model)

    fe_trace, phi_trace = [], [phi]
    converged = False
    prev_fe = None
    n_outer = 0
    for n_outer in range(1, cfg.max_outer_iters + 1):
        state, trace, _ = estep(state, model, msg, hyper, cfg.max_estep_sweeps, cfg.elbo_tol)
        fe = trace[-1] if trace else free_energy(state, None, None, msg, hyper, model=model)
        fe_trace.append(fe)
        active = state.pi > cfg.active_threshold
        phi_old = phi
        if cfg.estimate_beta:
            # offsets of inactive points restart from zero every iteration
            phi = phi.replace(beta_R=np.where(active, phi.beta_R, 0.0))
        else:
            active = np.zeros_like(active)
        free = cfg.estimate_f or cfg.estimate_eta or active.any()
        for _ in range(cfg.mstep_iters if free else 0):
            if cfg.mstep_mode == "profile":
                phi, ok, _ = profile_step(phi, state.gamma_mean, state.kappa_mean, ys, geom,
                                          cfg.fd_max, cfg.armijo, active=active,
                                          estimate_eta=cfg.estimate_eta,
                                          estimate_f=cfg.estimate_f)
            else:
                phi, ok, _ = armijo_step(phi, state, ys, geom, cfg.fd_max, cfg.armijo,
                                         active=active, estimate_eta=cfg.estimate_eta,
                                         estimate_f=cfg.estimate_f)
            if not ok:
                break
        phi_trace.append(phi)
        m_move = _phi_move(phi, phi_old, geom, cfg.fd_max)
        e_move = np.inf if prev_fe is None else abs(fe - prev_fe) / max(1.0, abs(fe))
        prev_fe = fe
        model = LinearModel(geom.F(phi), ys)
        if m_move < cfg.elbo_tol and e_move < cfg.elbo_tol:
            converged = True
            break
    # final E-step so the posterior matches the returned parameters
    state, trace, _ = estep(state, model, msg, hyper, cfg.max_estep_sweeps, cfg.elbo_tol)
    fe_trace.extend(trace[-1:])

    state.mu = state.mu * scale
    state.sigma = state.sigma * scale ** 2
    state.b_kappa_t = state.b_kappa_t * scale ** 2
    message = propagate_message(state.pi, markov, cfg.pi_clamp)
    return FrameEstimate(state.mu.copy(), phi, state, message, converged, n_outer,
                         fe_trace, phi_trace, scale)


class DDVBITracker:
    """Runs :func:`run_frame` frame after frame, passing messages and warm starts.

    When ``learn_markov`` is set, the transition probabilities are re-estimated
    after each frame by EM over a sliding window of per-frame evidence.
    """

    def __init__(self, n_tilde: int, markov: MarkovParams, cfg: SolverConfig = SolverConfig(),
                 hyper: GammaHyper = GammaHyper(), learn_markov: bool = False,
                 em_window: int = 50, em_iters: int = 20):
        self.cfg = cfg
        self.hyper = hyper
        self.markov = markov
        self.learn_markov = learn_markov
        self.em_window = em_window
        self.em_iters = em_iters
        self.msg = SupportMessage.stationary(n_tilde, markov.lam)
        self.phi = PhiParams(np.zeros(n_tilde), 0.0, cfg.fd_max / 2)
        self.evidence: list[np.ndarray] = []
        self.markov_trace: list[MarkovParams] = []
        self.frames = 0

    def step(self, y, geom: PilotGeometry) -> FrameEstimate:
        est = run_frame(y, geom, self.msg, self.phi, self.cfg, self.hyper, self.markov)
        self.frames += 1
        if self.learn_markov:
            self.evidence.append(local_evidence(est.state.pi, self.msg.pi_tilde))
            self.evidence = self.evidence[-self.em_window:]
            if len(self.evidence) >= 2:
                res = em_loop(np.array(self.evidence), self.markov, max_iters=self.em_iters)
                self.markov = res.params
            self.markov_trace.append(self.markov)
            est.message = propagate_message(est.state.pi, self.markov, self.cfg.pi_clamp)
        self.msg = est.message
        self.phi = est.phi
        return est
