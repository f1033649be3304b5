"""Selective angular-domain Doppler compensation, uplink LS estimation and rates.

After compensation the user sees ``H^s_i = D_i^H W^H H_i`` (``n_d x m``).
In the uplink the same beams are used through reciprocity, so the BS
observes ``(H^s_i)^T d_i + n_i`` for transmitted symbols ``d_i``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arrays import AngularGrid, steering_matrix
from .errors import RankDeficientPilotsError


def select_dominant(x_hat, threshold_frac: float = 0.1, cap: int | None = None) -> np.ndarray:
    """Indices whose energy is at least ``threshold_frac`` of the strongest one.

    The result is sorted by energy (descending, ties by lower index) and cut
    to ``cap`` entries when a cap is given.  An all-zero input gives an
    empty array.
    """
    if not (0 < threshold_frac <= 1):
        raise ValueError("threshold_frac must lie in (0, 1]")
    e = np.abs(np.asarray(x_hat)) ** 2
    top = e.max() if e.size else 0.0
    if top <= 0:
        return np.array([], dtype=int)
    order = np.argsort(-e, kind="stable")
    sel = order[e[order] >= threshold_frac * top]
    if cap is not None:
        sel = sel[:cap]
    return sel


@dataclass
class CompensationPlan:
    """Beams on the selected AoA directions plus their Doppler de-rotation."""

    indices: np.ndarray
    angles: np.ndarray
    w_d: np.ndarray
    f_d: float
    eta: float

    @classmethod
    def from_estimate(cls, indices, grid: AngularGrid, beta_R, f_d: float, eta: float,
                      n: int) -> "CompensationPlan":
        indices = np.asarray(indices, dtype=int)
        angles = grid.theta_R[indices] + np.asarray(beta_R)[indices]
        return cls(indices, angles, steering_matrix(angles, n), float(f_d), float(eta))

    @property
    def n_d(self) -> int:
        return int(self.indices.size)

    def doppler_phases(self, i) -> np.ndarray:
        """Diagonal of ``D_i`` (or rows of them for an array of symbols)."""
        i = np.asarray(i, dtype=float)
        return np.exp(2j * np.pi * self.f_d * i[..., None] * np.cos(self.angles + self.eta))

    def matrices(self, i):
        return self.w_d, np.diag(self.doppler_phases(i))


def build_compensation(indices, grid: AngularGrid, beta_R, f_d: float, eta: float, i, n: int):
    """Beamformer ``W`` (``n x n_d``) and Doppler matrix ``D_i`` for symbol ``i``."""
    plan = CompensationPlan.from_estimate(indices, grid, beta_R, f_d, eta, n)
    return plan.matrices(i)


def effective_channel(H, W, D) -> np.ndarray:
    """``D^H W^H H``."""
    return np.asarray(D).conj().T @ np.asarray(W).conj().T @ np.asarray(H)


def ls_estimate(Y, S) -> np.ndarray:
    """Least-squares channel ``Y S^H (S S^H)^{-1}`` for ``Y = G S + N``."""
    S = np.atleast_2d(np.asarray(S, dtype=complex))
    gram = S @ S.conj().T
    if np.linalg.matrix_rank(gram) < gram.shape[0]:
        raise RankDeficientPilotsError("pilot matrix of shape %s is rank deficient" % (S.shape,))
    return np.asarray(Y) @ S.conj().T @ np.linalg.inv(gram)


def uplink_pilots(n_d: int) -> np.ndarray:
    """Orthogonal ``n_d x n_d`` pilot block with unit power per symbol."""
    k = np.arange(n_d)
    return np.exp(-2j * np.pi * np.outer(k, k) / n_d) / np.sqrt(n_d)


def ls_estimate_effective(observations, S) -> np.ndarray:
    """Average LS estimate of ``H^s`` over several uplink pilot sets.

    Args:
        observations: sequence of ``m x n_p_u`` BS observations, one per set.
        S: ``n_d x n_p_u`` pilot matrix shared by all sets.

    Returns:
        ``n_d x m`` effective-channel estimate.
    """
    est = [ls_estimate(Y, S) for Y in observations]
    return np.mean(est, axis=0).T


def simulate_uplink_pilots(h_s_seq, S, noise_var: float, rng=None) -> np.ndarray:
    """BS observations ``Y[:, k] = (H^s_k)^T S[:, k] + n_k`` for one pilot set.

    Args:
        h_s_seq: ``(n_p_u, n_d, m)`` effective channels at the pilot symbols.
        S: ``n_d x n_p_u`` pilot matrix.
        noise_var: per-antenna noise variance.
        rng: seed or generator.
    """
    rng = np.random.default_rng(rng)
    h_s_seq = np.asarray(h_s_seq)
    y = np.einsum("kdm,dk->mk", h_s_seq, S)
    if noise_var > 0:
        y = y + np.sqrt(noise_var / 2) * (rng.standard_normal(y.shape)
                                          + 1j * rng.standard_normal(y.shape))
    return y


def _stream_gmi(A, B, C) -> float:
    # GMI of nearest-neighbour decoding with a Gaussian codebook (nats)
    if C <= 0 or A <= 0:
        return 0.0
    if B <= 0:
        B = np.finfo(float).tiny
    u = (C + np.sqrt(C * C + 4 * A * B)) / (2 * B)
    if u <= 1:
        return 0.0
    theta = (u - 1) / C
    return float(max(0.0, -theta * B + np.log1p(theta * C) + theta * A / (1 + theta * C)))


def achievable_rate(h_s_est, h_s_true, snr: float) -> float:
    """Uplink sum rate (bits/s/Hz) with estimate-based LMMSE combining.

    ``n_d`` streams share unit total power equally.  The BS builds an LMMSE
    combiner from the estimate and decodes each stream by nearest-neighbour
    decoding with the estimated gain.  The rate of each stream is its
    generalized mutual information averaged over the true channels given
    (one per data symbol), which exposes both estimation error and aging.

    Args:
        h_s_est: ``n_d x m`` estimate of the effective channel.
        h_s_true: ``n_d x m`` true channel or ``(n_sym, n_d, m)`` sequence.
        snr: linear transmit SNR (total power over noise variance).

    Returns:
        Sum rate in bits/s/Hz.
    """
    h_est = np.atleast_2d(np.asarray(h_s_est, dtype=complex))
    h_true = np.asarray(h_s_true, dtype=complex)
    if h_true.ndim == 2:
        h_true = h_true[None]
    n_d = h_est.shape[0]
    if n_d == 0 or snr <= 0:
        return 0.0
    p = 1.0 / n_d
    s2 = 1.0 / snr
    G_hat = h_est.T  # m x n_d
    G = np.transpose(h_true, (0, 2, 1))  # n_sym x m x n_d
    m = G_hat.shape[0]
    R = p * G_hat @ G_hat.conj().T + s2 * np.eye(m)
    Wc = np.linalg.solve(R, p * G_hat)  # columns are combiners
    total = 0.0
    for j in range(n_d):
        w = Wc[:, j]
        g_hat = np.vdot(w, G_hat[:, j])
        wn = s2 * np.real(np.vdot(w, w))
        resp = np.einsum("m,smk->sk", w.conj(), G)  # n_sym x n_d
        A = np.mean(p * np.sum(np.abs(resp) ** 2, axis=1)) + wn
        err = resp.copy()
        err[:, j] -= g_hat
        B = np.mean(p * np.sum(np.abs(err) ** 2, axis=1)) + wn
        C = p * abs(g_hat) ** 2
        total += _stream_gmi(A, B, C)
    return total / np.log(2)


def logdet_rate(h_eq, snr: float, n_d: int | None = None) -> float:
    """Equal-power MIMO rate ``log2 det(I + snr/n_d H H^H)`` (perfect-CSI bound)."""
    h = np.atleast_2d(np.asarray(h_eq, dtype=complex))
    n_d = h.shape[0] if n_d is None else n_d
    if n_d == 0:
        return 0.0
    g = np.eye(h.shape[0]) + (snr / n_d) * h @ h.conj().T
    return float(np.linalg.slogdet(g)[1] / np.log(2))
