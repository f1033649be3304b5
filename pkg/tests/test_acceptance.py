"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import time

import numpy as np

from ddvbi.arrays import AngularGrid, ArrayShape, PhiParams
from ddvbi.channel import FrameTruth, render_channel
from ddvbi.compensation import CompensationPlan
from ddvbi.config import build_config
from ddvbi.harness import rows_to_csv, run_sweep_rows, summarize
from ddvbi.hyper_em import em_loop, forward_backward
from ddvbi.mstep import PilotGeometry, mstep_gradient, surrogate_objective
from ddvbi.pilots import (PilotSchedule, assemble_F, random_combiners, random_training_vector,
                          synthesize_observation)
from ddvbi.prior import GammaHyper, MarkovParams, sample_support_chain
from ddvbi.tracker import SolverConfig, run_frame
from ddvbi.vbi import (LinearModel, PosteriorState, SupportMessage, estep, free_energy,
                       gaussian_posterior, init_frame, sweep, update_gamma, update_kappa,
                       update_s, update_x)

from _helpers import cn, random_instance, random_phi, random_truth
from test_hyper_em import brute_force, hard_evidence
from test_mstep import fd_gradient


def _oracle(truth, grid, n, m, i):
    # vectorised path sum written from the model, independent of the package
    aoa, aod = truth.aoa(grid), truth.aod(grid)
    r = np.arange(n)[:, None]
    c = np.arange(m)[:, None]
    a_r = np.exp(-1j * np.pi * r * np.sin(aoa)) / np.sqrt(n)
    a_t = np.exp(-1j * np.pi * c * np.sin(aod)) / np.sqrt(m)
    g = truth.alpha * np.exp(2j * np.pi * truth.f_d * i * np.cos(aoa + truth.eta))
    return (a_r * g) @ a_t.conj().T


def test_c01_model_equivalence(criterion):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(500):
        grid, shape, truth = random_instance(rng)
        i = int(rng.integers(0, 25000))
        ref = _oracle(truth, grid, shape.n, shape.m, i)
        got = render_channel(truth, grid, shape, i)
        worst = max(worst, np.linalg.norm(got - ref) / np.linalg.norm(ref))
    dt = time.perf_counter() - t0
    criterion(1, worst <= 1e-10 and dt < 10,
              "max rel Frobenius error %.2e over 500 instances, %.1f s" % (worst, dt))


def test_c02_measurement_identity(criterion):
    rng = np.random.default_rng(102)
    worst = {False: 0.0, True: 0.0}
    for k in range(1000):
        limited = k % 2 == 1
        grid, shape, truth = random_instance(rng)
        if limited:
            shape = ArrayShape(shape.m, shape.n, n_b=int(rng.integers(1, shape.n + 1)))
        n_p = int(rng.integers(1, 11))
        sched = PilotSchedule(n_p, 12500)
        comb = random_combiners(shape.n, shape.n_b, n_p, rng) if limited else None
        v = cn(rng, shape.m)
        tv = truth.with_training(grid, v)
        y = synthesize_observation(tv, grid, shape, sched, v, comb).y
        F = assemble_F(grid, tv.phi(), sched, comb, shape)
        worst[limited] = max(worst[limited],
                             np.linalg.norm(y - F @ tv.x_true) / max(1.0, np.linalg.norm(y)))
    ok = max(worst.values()) <= 1e-9
    criterion(2, ok, "max error full-RF %.2e, limited-RF %.2e (500 each)"
              % (worst[False], worst[True]))


def test_c03_vbi_oracles(criterion):
    rng = np.random.default_rng(103)
    scalar = 0.0
    for _ in range(200):
        rows = int(rng.integers(1, 9))
        f, y = cn(rng, rows, 1), cn(rng, rows)
        g, k = rng.uniform(0.1, 10), rng.uniform(0.1, 10)
        mu, sig = gaussian_posterior(f, y, [g], k)
        var = 1.0 / (g + k * np.sum(np.abs(f) ** 2))
        m_ref = k * var * np.vdot(f[:, 0], y)
        scalar = max(scalar, abs(sig[0, 0] - var) / var, abs(mu[0] - m_ref) / max(1, abs(m_ref)))

    wood = 0.0
    for _ in range(200):
        F, y = cn(rng, 8, 16), cn(rng, 8)
        g, k = rng.uniform(0.1, 10, 16), rng.uniform(0.1, 10)
        _, s1 = gaussian_posterior(F, y, g, k, method="direct")
        _, s2 = gaussian_posterior(F, y, g, k, method="woodbury")
        wood = max(wood, np.linalg.norm(s1 - s2) / np.linalg.norm(s1))

    # Monte-Carlo estimate of <||y - F x||^2> under q(x)
    n, rows = 6, 10
    F, y = cn(rng, rows, n), cn(rng, rows)
    A = cn(rng, n, n)
    sigma = A @ A.conj().T / n + 0.1 * np.eye(n)
    state = PosteriorState(cn(rng, n), sigma, np.ones(n), np.ones(n), np.full(n, 0.5), 1.0, 1.0)
    hyper = GammaHyper()
    b_t = update_kappa(state, F, y, hyper).b_kappa_t - hyper.b_kappa
    L = np.linalg.cholesky(sigma)
    x = state.mu[:, None] + L @ cn(rng, n, 100_000)
    resid = np.sum(np.abs(y[:, None] - F @ x) ** 2, axis=0)
    z = abs(resid.mean() - b_t) / (resid.std(ddof=1) / np.sqrt(resid.size))
    ok = scalar <= 1e-10 and wood <= 1e-8 and z <= 3
    criterion(3, ok, "scalar %.1e, Woodbury vs direct %.1e, kappa MC deviation %.2f SE"
              % (scalar, wood, z))


def test_c04_free_energy_monotone(criterion):
    rng = np.random.default_rng(104)
    worst_rise, worst_fix = -np.inf, 0.0
    for _ in range(200):
        n, rows = int(rng.integers(2, 17)), int(rng.integers(2, 17))
        model = LinearModel(cn(rng, rows, n), cn(rng, rows))
        msg = SupportMessage(rng.uniform(0.02, 0.98, n))
        h = GammaHyper(*rng.uniform(0.05, 2, 4))
        state = init_frame(msg, None, None, h, model=model)
        fe = free_energy(state, None, None, msg, h, model=model)
        for _ in range(30):
            state = sweep(state, model, msg, h)
            nxt = free_energy(state, None, None, msg, h, model=model)
            worst_rise = max(worst_rise, (nxt - fe) / max(1.0, abs(fe)))
            fe = nxt
        # with fewer rows than columns the active set can interpolate y and the noise
        # precision grows without bound, so the fixed point is checked on tall systems
        n = int(rng.integers(2, 17))
        rows = n + int(rng.integers(1, 17))
        model = LinearModel(cn(rng, rows, n), cn(rng, rows))
        msg = SupportMessage(rng.uniform(0.02, 0.98, n))
        state = init_frame(msg, None, None, h, model=model)
        state, _, ok = estep(state, model, msg, h, max_sweeps=20_000, tol=1e-14,
                             param_tol=1e-12)
        assert ok
        again = [update_kappa(state, None, None, h, model=model),
                 update_x(state, None, None, model=model),
                 update_gamma(state, h), update_s(state, msg, h)]
        diffs = [abs(again[0].kappa_mean - state.kappa_mean) / state.kappa_mean,
                 np.max(np.abs(again[1].mu - state.mu)),
                 np.max(np.abs(again[1].sigma - state.sigma)),
                 np.max(np.abs(again[2].a_gamma - state.a_gamma)),
                 np.max(np.abs(again[2].b_gamma - state.b_gamma) / state.b_gamma),
                 np.max(np.abs(again[3].pi - state.pi))]
        worst_fix = max(worst_fix, max(diffs))
    ok = worst_rise <= 1e-8 and worst_fix <= 1e-8
    criterion(4, ok, "largest relative free-energy rise %.1e, fixed-point residual %.1e"
              % (worst_rise, worst_fix))


def test_c05_gradient_vs_finite_differences(criterion):
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(1050 + seed)
        k, n, n_p = int(rng.integers(2, 9)), int(rng.integers(2, 9)), int(rng.integers(2, 6))
        grid = AngularGrid.uniform(k, k)
        limited = seed % 2 == 1
        shape = ArrayShape(4, n, n_b=2 if limited else None)
        sched = PilotSchedule(n_p, 12500)
        comb = random_combiners(n, 2, n_p, rng) if limited else None
        geom = PilotGeometry(grid, sched, shape, comb)
        phi = random_phi(rng, grid)
        A = cn(rng, k, k)
        state = PosteriorState(cn(rng, k), A @ A.conj().T / k, np.ones(k), np.ones(k),
                               np.ones(k), 2.0, 1.0)
        y = cn(rng, geom.F(phi).shape[0])
        g = mstep_gradient(phi, state, y, geom)
        ref = fd_gradient(lambda p: surrogate_objective(p, state, y, geom), phi,
                          sched.indices[-1])
        worst = max(worst, np.max(np.abs(g - ref) / np.abs(ref)))
    criterion(5, worst <= 1e-5, "max componentwise relative error %.2e on 100 instances" % worst)


def test_c06_doppler_recovery(criterion):
    grid = AngularGrid.uniform(32, 32)
    shape = ArrayShape(32, 32)
    sched = PilotSchedule(8, 12500)
    limit = 1 / (2 * sched.spacing)
    geom = PilotGeometry(grid, sched, shape)
    cfg = SolverConfig(fd_max=limit, estimate_eta=False)
    good = 0
    t0 = time.perf_counter()
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n, m = int(rng.integers(32)), int(rng.integers(32))
        f = rng.uniform(0, 0.4) * limit
        eta = rng.uniform(0, 2 * np.pi)
        truth = FrameTruth(0, cn(rng, 1) * np.sqrt(2), np.array([n]), np.array([m]),
                           np.zeros(32), np.zeros(32), f, eta)
        v = random_training_vector(32, rng)
        truth = truth.with_training(grid, v)
        y = synthesize_observation(truth, grid, shape, sched, v).y
        est = run_frame(y, geom, SupportMessage.stationary(32, 0.09),
                        PhiParams(np.zeros(32), eta, limit / 2), cfg)
        good += abs(est.phi.f_d - f) / f < 1e-3
    dt = time.perf_counter() - t0
    criterion(6, good >= 95 and dt < 60, "%d/100 trials with relative error < 1e-3, %.1f s"
              % (good, dt))


def _trend_ok(means, ses):
    ups = [k for k in range(len(means) - 1) if means[k + 1] > means[k]]
    if len(ups) > 1:
        return False, ups
    return all(means[k + 1] - means[k] <= ses[k + 1] for k in ups), ups


def test_c07_pilot_trend(criterion):
    n_ps = list(range(2, 11))
    cfg = build_config(None, {"trials": "100", "n_p": ",".join(map(str, n_ps)),
                              "schemes": "ddvbi-designed,ddvbi-random", "snr_db": "0"})
    rows = run_sweep_rows(cfg)
    parts, ok = [], True
    for metric in ("freq_mse", "channel_mse"):
        s = summarize(rows, metric)
        means = [s["ddvbi-designed", 32, p, 0.0][0] for p in n_ps]
        ses = [s["ddvbi-designed", 32, p, 0.0][1] for p in n_ps]
        good, ups = _trend_ok(means, ses)
        ok &= good
        parts.append("%s %s (rises after N_p=%s)" % (
            metric, " ".join("%.3f" % v for v in means), [n_ps[k] for k in ups]))
    s = summarize(rows, "channel_mse")
    beats = [s["ddvbi-designed", 32, p, 0.0][0] <= s["ddvbi-random", 32, p, 0.0][0]
             for p in n_ps]
    ok &= all(beats)
    parts.append("designed <= random at %d/9 points" % sum(beats))
    criterion(7, ok, "; ".join(parts))


def test_c08_compensation_scaling(criterion):
    L = 12500
    symbols = (L // 4, L // 2, L)

    def variation(n, seed, l_t, f_d):
        rng = np.random.default_rng(seed)
        grid = AngularGrid.uniform(n, n)
        truth = random_truth(rng, grid, l_t, f_d=f_d)
        shape = ArrayShape(16, n)
        plan = CompensationPlan.from_estimate(truth.aoa_idx, grid, truth.beta_R, truth.f_d,
                                              truth.eta, n)

        def h_s(i):
            hs = plan.w_d.conj().T @ render_channel(truth, grid, shape, i)
            return plan.doppler_phases(i).conj()[:, None] * hs

        h0 = h_s(0)
        return np.mean([np.linalg.norm(h_s(i) - h0) / np.linalg.norm(h0) for i in symbols])

    ns = (32, 64, 128, 256)
    single = [np.mean([variation(n, s, 1, 2e-4) for s in range(100)]) for n in ns]
    multi = [np.mean([variation(n, s, 3, 2e-4) for s in range(100)]) for n in ns]
    static = max(variation(n, s, 3, 0.0) for n in ns for s in range(20))
    ok = (max(single) < 1e-12 and all(b < a for a, b in zip(multi, multi[1:]))
          and static < 1e-12)
    criterion(8, ok, "single path %s; three paths %s; f_d=0 max %.1e"
              % (" ".join("%.1e" % v for v in single), " ".join("%.4f" % v for v in multi),
                 static))


def test_c09_rate_ordering(criterion):
    cfg = build_config(None, {"trials": "100", "n_p": "8", "snr_db": "0"})
    assert abs(cfg.f_d_hz - 10e3) < 250
    s = summarize(run_sweep_rows(cfg), "rate")
    order = ["genie-oracle", "ddvbi-designed", "ddvbi-random", "no-compensation"]
    r = [s[name, 32, 8, 0.0][0] for name in order]
    ok = all(a >= b for a, b in zip(r, r[1:]))
    criterion(9, ok, " >= ".join("%s %.2f" % (n, v) for n, v in zip(order, r)))


def test_c10_em_recovery(criterion):
    truth = MarkovParams(rho_01=0.05, rho_10=0.1)
    chains = sample_support_chain(truth, 64, 200, np.random.default_rng(110))
    res = em_loop(hard_evidence(chains), MarkovParams(0.5, 0.5))
    err = max(abs(res.params.rho_10 - 0.1), abs(res.params.rho_01 - 0.05))
    ll = np.array(res.loglik)
    monotone = bool(np.all(np.diff(ll) >= -1e-9 * np.abs(ll[1:])))
    rng = np.random.default_rng(111)
    fb = 0.0
    for T in range(1, 11):
        for _ in range(5):
            m = MarkovParams(*rng.uniform(0.01, 0.99, 2))
            ev = np.exp(rng.uniform(-3, 3, T))
            single, pair, logz = brute_force(ev, m)
            post = forward_backward(ev, m)
            fb = max(fb, np.max(np.abs(post.singleton[:, 0] - single)),
                     np.max(np.abs(post.pairwise[:, 0] - pair), initial=0.0),
                     abs(post.loglik - logz))
    ok = err <= 0.05 and fb <= 1e-10 and monotone
    criterion(10, ok, "rho_10 %.4f rho_01 %.4f, forward-backward vs enumeration %.1e, "
              "log-likelihood monotone %s" % (res.params.rho_10, res.params.rho_01, fb, monotone))


def test_c11_determinism(criterion):
    base = {"trials": "3", "frames": "2", "n_p": "4,6", "seed": "2024"}
    a = rows_to_csv(run_sweep_rows(build_config(None, base)))
    b = rows_to_csv(run_sweep_rows(build_config(None, base)))
    c = rows_to_csv(run_sweep_rows(build_config(None, dict(base, threads="2"))))
    d = rows_to_csv(run_sweep_rows(build_config(None, dict(base, threads="3"))))
    ok = a.encode() == b.encode() == c.encode() == d.encode()
    criterion(11, ok, "%d-byte CSV identical across repeated and 2/3-worker runs" % len(a))
