"""EM for the support transition probabilities with binary forward-backward smoothing.

Every AoA grid point carries its own two-state chain; all chains share
``(rho_01, rho_10)``.  The per-frame evidence is a likelihood ratio
``p(obs | s=1) / p(obs | s=0)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy

from .prior import MarkovParams

_EVIDENCE_CLIP = 1e12


@dataclass
class ChainPosterior:
    """Smoothed marginals of the support chains.

    Attributes:
        singleton: ``(T, n_tilde)`` values of P(s_tau = 1).
        pairwise: ``(T - 1, n_tilde)`` values of E[s_{tau-1} s_tau].
        loglik: log-likelihood of the evidence (relative to the all-inactive
            emission), summed over chains.
    """

    singleton: np.ndarray
    pairwise: np.ndarray
    loglik: float


@dataclass
class EMResult:
    params: MarkovParams
    loglik: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    insufficient_data: bool = False
    flags: list = field(default_factory=list)


def local_evidence(pi, pi_tilde) -> np.ndarray:
    """Likelihood ratio implied by a posterior ``pi`` under the prior ``pi_tilde``."""
    pi = np.clip(np.asarray(pi, dtype=float), 1e-300, 1 - 1e-16)
    pt = np.clip(np.asarray(pi_tilde, dtype=float), 1e-300, 1 - 1e-16)
    ratio = (pi / (1 - pi)) / (pt / (1 - pt))
    return np.clip(ratio, 1.0 / _EVIDENCE_CLIP, _EVIDENCE_CLIP)


def forward_backward(evidence, markov: MarkovParams) -> ChainPosterior:
    """Exact smoothing of independent binary chains, vectorised over chains.

    Args:
        evidence: ``(T, n_tilde)`` positive likelihood ratios (a 1-D array is
            treated as a single chain).
        markov: shared transition probabilities; the first frame uses the
            stationary law.

    Returns:
        The :class:`ChainPosterior`.
    """
    ev = np.asarray(evidence, dtype=float)
    if ev.ndim == 1:
        ev = ev[:, None]
    if np.any(~np.isfinite(ev)) or np.any(ev <= 0):
        raise ValueError("evidence must be finite and positive")
    T, n = ev.shape
    P = markov.transition()
    emis = np.stack([np.ones_like(ev), ev], axis=-1)  # (T, n, 2)
    alpha = np.empty((T, n, 2))
    c = np.empty((T, n))
    a = np.array([1 - markov.lam, markov.lam])[None, :] * emis[0]
    c[0] = a.sum(axis=1)
    alpha[0] = a / c[0][:, None]
    for t in range(1, T):
        a = (alpha[t - 1] @ P) * emis[t]
        c[t] = a.sum(axis=1)
        alpha[t] = a / c[t][:, None]
    beta = np.ones((T, n, 2))
    for t in range(T - 2, -1, -1):
        beta[t] = ((emis[t + 1] * beta[t + 1]) @ P.T) / c[t + 1][:, None]
    gam = alpha * beta
    single = gam[..., 1] / gam.sum(axis=-1)
    if T > 1:
        # E[s_{t-1} s_t] = alpha_{t-1}(1) P[1,1] e_t(1) beta_t(1) / c_t
        pair = alpha[:-1, :, 1] * P[1, 1] * emis[1:, :, 1] * beta[1:, :, 1] / c[1:]
    else:
        pair = np.zeros((0, n))
    return ChainPosterior(np.clip(single, 0, 1), np.clip(pair, 0, 1), float(np.sum(np.log(c))))


def em_update_rho(post: ChainPosterior, prev: MarkovParams | None = None):
    """Baum-Welch transition estimates from smoothed marginals.

    Args:
        post: smoothed chain marginals (needs at least two frames).
        prev: parameters kept when a denominator vanishes.

    Returns:
        ``(rho_10, rho_01, flags)`` where ``flags`` names any parameter that
        was kept because its source state carried no mass.
    """
    s = post.singleton
    pair = post.pairwise
    if s.shape[0] < 2:
        raise ValueError("at least two frames are needed")
    prev_s = s[:-1]
    cur_s = s[1:]
    flags = []
    den10 = float(np.sum(prev_s))
    den01 = float(np.sum(1 - prev_s))
    if den10 > 0:
        rho_10 = float(np.sum(prev_s - pair)) / den10
    else:
        rho_10 = prev.rho_10 if prev is not None else 0.0
        flags.append("rho_10")
    if den01 > 0:
        rho_01 = float(np.sum(cur_s - pair)) / den01
    else:
        rho_01 = prev.rho_01 if prev is not None else 0.0
        flags.append("rho_01")
    return float(np.clip(rho_10, 0, 1)), float(np.clip(rho_01, 0, 1)), flags


def expected_complete_loglik(post: ChainPosterior, markov: MarkovParams) -> float:
    """Transition and initial-state part of the EM auxiliary function."""
    s = post.singleton
    pair = post.pairwise
    lam = markov.lam
    q = np.sum(xlogy(s[0], lam) + xlogy(1 - s[0], 1 - lam))
    n11 = np.sum(pair)
    n10 = np.sum(s[:-1]) - n11
    n01 = np.sum(s[1:]) - n11
    n00 = np.sum(1 - s[:-1]) - n01
    r01, r10 = markov.rho_01, markov.rho_10
    q += (xlogy(n11, 1 - r10) + xlogy(max(n10, 0), r10)
          + xlogy(max(n01, 0), r01) + xlogy(max(n00, 0), 1 - r01))
    return float(q)


def em_loop(evidence_sequence, init: MarkovParams, max_iters: int = 50,
            tol: float = 1e-6) -> EMResult:
    """Alternate smoothing and transition updates until the parameters settle.

    The closed-form update ignores the dependence of the first-frame prior on
    the transition probabilities, so a proposal that lowers the auxiliary
    function is pulled back toward the previous value.  This keeps the
    evidence likelihood non-decreasing.

    Args:
        evidence_sequence: ``(T, n_tilde)`` likelihood ratios.
        init: starting parameters.
        max_iters: iteration cap.
        tol: stop when both parameters move less than this.

    Returns:
        An :class:`EMResult`; with one frame the initial parameters are
        returned and ``insufficient_data`` is set.
    """
    ev = np.asarray(evidence_sequence, dtype=float)
    if ev.ndim == 1:
        ev = ev[:, None]
    res = EMResult(init)
    if ev.shape[0] < 2:
        res.insufficient_data = True
        return res
    cur = init
    post = forward_backward(ev, cur)
    res.loglik.append(post.loglik)
    for it in range(1, max_iters + 1):
        r10, r01, flags = em_update_rho(post, cur)
        res.flags.extend(flags)
        prop = MarkovParams(r01, r10)
        q_old = expected_complete_loglik(post, cur)
        step = 1.0
        for _ in range(40):
            if expected_complete_loglik(post, prop) >= q_old:
                break
            step *= 0.5
            prop = MarkovParams(cur.rho_01 + step * (r01 - cur.rho_01),
                                cur.rho_10 + step * (r10 - cur.rho_10))
        else:
            prop = cur
        moved = max(abs(prop.rho_01 - cur.rho_01), abs(prop.rho_10 - cur.rho_10))
        cur = prop
        post = forward_backward(ev, cur)
        res.loglik.append(post.loglik)
        res.iterations = it
        if moved < tol:
            res.converged = True
            break
    res.params = cur
    return res
