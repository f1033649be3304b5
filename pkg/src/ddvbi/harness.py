"""Monte-Carlo trials, sweeps and result persistence.

Randomness is keyed by ``SeedSequence([trial_seed, stream, frame])`` so the
channel, the shared random training vectors and the noise are common to
all schemes and all axis points of one trial.
"""

from __future__ import annotations

import csv
import io
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .channel import FrameTruth, evolve_frame, initial_frame, render_channel
from .compensation import (CompensationPlan, achievable_rate, ls_estimate_effective,
                           select_dominant, simulate_uplink_pilots, uplink_pilots)
from .config import ExperimentConfig
from .errors import ConfigurationError
from .metrics import channel_mse, freq_mse
from .mstep import PilotGeometry
from .pilots import (SNR_DEFINITION, PilotSchedule, design_training_vector, dft_basis,
                     noise_variance, random_combiners, random_training_vector,
                     synthesize_observation)
from .tracker import DDVBITracker

SCHEMA_VERSION = 1
RATE_DEFINITION = (
    "uplink sum over N_d equal-power streams of the generalized mutual information of "
    "nearest-neighbour decoding after an LMMSE combiner built from the LS estimate of the "
    "compensated channel, averaged over sampled uplink data symbols (bits/s/Hz)"
)
COLUMNS = ["scheme", "m", "n_p", "snr_db", "trial", "frame", "seed", "f_d_true", "f_d_hat",
           "freq_mse", "channel_mse", "rate", "n_d", "outer_iters", "converged"]

# stream tags for SeedSequence keys
_TRUTH, _V, _NOISE, _COMB, _DESIGN, _UPLINK = 1, 2, 3, 4, 5, 6

SIMULATE_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "config", "frames"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "config": {"type": "object"},
        "frames": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["t", "l_t", "alpha", "aod", "aoa", "f_d", "eta", "support_R"],
                "properties": {
                    "t": {"type": "integer", "minimum": 0},
                    "l_t": {"type": "integer", "minimum": 1},
                    "alpha": {"type": "array", "items": {
                        "type": "array", "items": {"type": "number"},
                        "minItems": 2, "maxItems": 2}},
                    "aod": {"type": "array", "items": {"type": "number"}},
                    "aoa": {"type": "array", "items": {"type": "number"}},
                    "f_d": {"type": "number", "minimum": 0},
                    "eta": {"type": "number"},
                    "support_R": {"type": "array", "items": {"enum": [0, 1]}},
                },
            },
        },
    },
}


def _rng(*key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def trial_seed(cfg: ExperimentConfig, trial: int) -> int:
    return int(cfg.seed) + int(trial)


def simulate_truths(cfg: ExperimentConfig, seed: int, m: int | None = None) -> list[FrameTruth]:
    """Ground-truth frame sequence of one trial (independent of ``m`` and ``n_p``)."""
    grid = cfg.grid()
    scen = cfg.scenario()
    truths = [initial_frame(grid, scen, _rng(seed, _TRUTH, 0))]
    for t in range(1, cfg.frames):
        truths.append(evolve_frame(truths[-1], scen.markov, grid, _rng(seed, _TRUTH, t), scen))
    return truths


@dataclass
class _Uplink:
    h_est: np.ndarray
    rate: float
    n_d: int


def _uplink(cfg, truth, grid, shape, plan: CompensationPlan, noise_var, seed, frame,
            compensate=True) -> _Uplink:
    n_d = plan.n_d
    if n_d == 0:
        return _Uplink(np.zeros((0, shape.m), complex), 0.0, 0)
    L = cfg.subframe_len
    S = uplink_pilots(n_d)
    start = L + np.arange(n_d)
    end = 2 * L - n_d + np.arange(n_d)
    data = np.linspace(L + n_d, 2 * L - n_d - 1, cfg.rate_symbols).round().astype(int)

    def h_s(i):
        H = render_channel(truth, grid, shape, i)
        hs = plan.w_d.conj().T @ H
        if compensate:
            hs = plan.doppler_phases(i).conj()[:, None] * hs
        return hs

    rng = _rng(seed, _UPLINK, frame)
    obs = [simulate_uplink_pilots(np.array([h_s(i) for i in idx]), S, noise_var, rng)
           for idx in (start, end)]
    h_est = ls_estimate_effective(obs, S)
    h_true = np.array([h_s(i) for i in data])
    rate = achievable_rate(h_est, h_true, 1.0 / noise_var if noise_var > 0 else 1e12)
    return _Uplink(h_est, rate, n_d)


def _genie_estimate(y, geom, truth):
    F = geom.F(truth.phi())[:, truth.aoa_idx]
    sol, *_ = np.linalg.lstsq(F, y, rcond=None)
    x = np.zeros(geom.grid.n_tilde, complex)
    x[truth.aoa_idx] = sol
    return x


def run_trial(cfg: ExperimentConfig, m: int, n_p: int, snr_db: float, trial: int) -> list[dict]:
    """All requested schemes for one ``(m, n_p, snr, trial)`` cell.

    Returns:
        One result dict per ``(scheme, frame)``.
    """
    seed = trial_seed(cfg, trial)
    grid = cfg.grid()
    shape = cfg.shape(m)
    schedule = PilotSchedule(n_p, cfg.subframe_len)
    truths = simulate_truths(cfg, seed)
    basis = dft_basis(m)
    limited = shape.limited_rf
    cap = shape.n_b if limited else None
    schemes = list(cfg.schemes)
    # genie shares the designed training vector, so it needs that tracker too
    need_designed = any(s in schemes for s in ("ddvbi-designed", "no-compensation",
                                               "genie-oracle"))
    trackers = {}
    if need_designed:
        trackers["designed"] = DDVBITracker(grid.n_tilde, cfg.markov(), cfg.solver(),
                                            cfg.hyper(), cfg.learn_markov, cfg.em_window)
    if "ddvbi-random" in schemes:
        trackers["random"] = DDVBITracker(grid.n_tilde, cfg.markov(), cfg.solver(),
                                          cfg.hyper(), cfg.learn_markov, cfg.em_window)
    h_prev = None
    rows = []
    for t, truth in enumerate(truths):
        combiners = (random_combiners(shape.n, shape.n_b, n_p, _rng(seed, _COMB, t))
                     if limited else None)
        geom = PilotGeometry(grid, schedule, shape, combiners)
        noise_var = noise_variance(truth, grid, shape, snr_db)
        v_rand = random_training_vector(m, _rng(seed, _V, t))
        base = dict(m=m, n_p=n_p, snr_db=float(snr_db), trial=trial, frame=t, seed=seed,
                    f_d_true=float(truth.f_d))

        def observe(v):
            tv = truth.with_training(grid, v)
            obs = synthesize_observation(tv, grid, shape, schedule, v, combiners,
                                         rng=_rng(seed, _NOISE, t), noise_var=noise_var)
            return tv, obs

        def ddvbi_rows(key, v, names):
            nonlocal h_prev
            tv, obs = observe(v)
            t0 = time.perf_counter()
            est = trackers[key].step(obs.y, geom)
            wall = time.perf_counter() - t0
            dom = select_dominant(est.x_hat, cfg.threshold, cap)
            plan = CompensationPlan.from_estimate(dom, grid, est.phi.beta_R, est.phi.f_d,
                                                  est.phi.eta, shape.n)
            out = []
            for name in names:
                up = _uplink(cfg, truth, grid, shape, plan, noise_var, seed, t,
                             compensate=(name != "no-compensation"))
                if name == "ddvbi-designed":
                    h_prev = up.h_est
                out.append(dict(base, scheme=name, f_d_hat=est.phi.f_d,
                                freq_mse=freq_mse(est.phi.f_d, truth.f_d),
                                channel_mse=channel_mse(est.x_hat, tv.x_true),
                                rate=up.rate, n_d=up.n_d, outer_iters=est.outer_iters,
                                converged=int(est.converged), wall_time=wall))
            return out

        v = v_rand
        if need_designed:
            if t == 0 or h_prev is None or h_prev.shape[0] == 0:
                v = v_rand
            else:
                v = design_training_vector(h_prev, basis, cfg.mu, cfg.rho,
                                           _rng(seed, _DESIGN, t)).v
            names = [s for s in ("ddvbi-designed", "no-compensation") if s in schemes]
            if "ddvbi-designed" not in schemes:
                names = ["ddvbi-designed"] + names
            got = ddvbi_rows("designed", v, names)
            rows.extend(r for r in got if r["scheme"] in schemes)
        if "ddvbi-random" in schemes:
            rows.extend(ddvbi_rows("random", v_rand, ["ddvbi-random"]))
        if "genie-oracle" in schemes:
            tv, obs = observe(v)
            t0 = time.perf_counter()
            x = _genie_estimate(obs.y, geom, truth)
            wall = time.perf_counter() - t0
            dom = select_dominant(x, cfg.threshold, cap)
            plan = CompensationPlan.from_estimate(dom, grid, truth.beta_R, truth.f_d, truth.eta,
                                                  shape.n)
            up = _uplink(cfg, truth, grid, shape, plan, noise_var, seed, t)
            rows.append(dict(base, scheme="genie-oracle", f_d_hat=float(truth.f_d),
                             freq_mse=freq_mse(truth.f_d, truth.f_d),
                             channel_mse=channel_mse(x, tv.x_true), rate=up.rate, n_d=up.n_d,
                             outer_iters=0, converged=1, wall_time=wall))
    return rows


def _cells(cfg: ExperimentConfig):
    return [(m, n_p, snr, trial) for m in cfg.m for n_p in cfg.n_p for snr in cfg.snr_db
            for trial in range(cfg.trials)]


def _run_cell(args):
    cfg, cell = args
    return run_trial(cfg, *cell)


def _sort_key(r):
    return (r["scheme"], r["m"], r["n_p"], r["snr_db"], r["trial"], r["frame"])


def run_sweep_rows(cfg: ExperimentConfig) -> list[dict]:
    """Run every cell (optionally in worker processes) and return sorted rows."""
    cells = _cells(cfg)
    if cfg.threads > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as ex:
            parts = list(ex.map(_run_cell, [(cfg, c) for c in cells]))
    else:
        parts = [run_trial(cfg, *c) for c in cells]
    rows = [r for part in parts for r in part]
    rows.sort(key=_sort_key)
    return rows


def rows_to_csv(rows: list[dict], timing: bool = False) -> str:
    cols = COLUMNS + (["wall_time"] if timing else [])
    buf = io.StringIO()
    buf.write("# schema_version=%d\r\n" % SCHEMA_VERSION)
    w = csv.writer(buf)
    w.writerow(cols)
    for r in rows:
        w.writerow([repr(float(r[c])) if isinstance(r[c], (float, np.floating)) else r[c]
                    for c in cols])
    return buf.getvalue()


def metadata(cfg: ExperimentConfig) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "columns": COLUMNS + (["wall_time"] if cfg.timing else []),
        "config": cfg.to_dict(),
        "snr_definition": SNR_DEFINITION,
        "rate_definition": RATE_DEFINITION,
        "f_d_normalized": cfg.f_d_normalized,
        "subframe_len": cfg.subframe_len,
        "trial_seed_rule": "seed + trial index",
    }


def resolve_output(out: str | None, default_name: str) -> str:
    """Output file path; directories (or paths ending in a separator) get ``default_name``."""
    if out is None or out == "":
        out = os.environ.get("DDVBI_OUT_DIR", ".")
    if out.endswith(os.sep) or os.path.isdir(out):
        out = os.path.join(out, default_name)
    return out


def check_writable(path: str):
    d = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(d):
        raise ConfigurationError("output directory %s does not exist" % d)
    if not os.access(d, os.W_OK) or (os.path.exists(path) and not os.access(path, os.W_OK)):
        raise ConfigurationError("output path %s is not writable" % path)


def run_sweep(cfg: ExperimentConfig, out: str | None = None) -> tuple[str, str]:
    """Run a campaign and write the CSV plus its JSON sidecar.

    Returns:
        ``(csv_path, json_path)``.
    """
    path = resolve_output(out, "results.csv")
    check_writable(path)
    rows = run_sweep_rows(cfg)
    with open(path, "w", newline="") as fh:
        fh.write(rows_to_csv(rows, cfg.timing))
    side = os.path.splitext(path)[0] + ".json"
    with open(side, "w") as fh:
        json.dump(metadata(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path, side


def summarize(rows: list[dict], metric: str, by=("scheme", "m", "n_p", "snr_db")) -> dict:
    """Mean and standard error of ``metric`` per group.

    Frames of one trial are averaged first, so the standard error reflects
    the spread across independent trials.
    """
    per_trial: dict = {}
    for r in rows:
        key = tuple(r[k] for k in by)
        per_trial.setdefault(key, {}).setdefault(r["trial"], []).append(float(r[metric]))
    out = {}
    for key, trials in per_trial.items():
        vals = np.array([np.mean(v) for v in trials.values()])
        se = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
        out[key] = (float(vals.mean()), se)
    return out


def simulate_record(cfg: ExperimentConfig) -> dict:
    """Ground truth of trial 0 as a JSON-ready dict."""
    seed = trial_seed(cfg, 0)
    grid = cfg.grid()
    shape = cfg.shape(cfg.m[0])
    frames = []
    for t, truth in enumerate(simulate_truths(cfg, seed)):
        v = random_training_vector(shape.m, _rng(seed, _V, t))
        frames.append(truth.with_training(grid, v).to_dict(grid))
    return {"schema_version": SCHEMA_VERSION, "config": cfg.to_dict(), "frames": frames}


def track_diagnostics(cfg: ExperimentConfig) -> list[dict]:
    """Per-frame diagnostics of a single designed-training run (first axis values)."""
    seed = trial_seed(cfg, 0)
    m, n_p, snr = cfg.m[0], cfg.n_p[0], cfg.snr_db[0]
    grid = cfg.grid()
    shape = cfg.shape(m)
    schedule = PilotSchedule(n_p, cfg.subframe_len)
    tracker = DDVBITracker(grid.n_tilde, cfg.markov(), cfg.solver(), cfg.hyper(),
                           cfg.learn_markov, cfg.em_window)
    basis = dft_basis(m)
    cap = shape.n_b if shape.limited_rf else None
    h_prev = None
    out = []
    for t, truth in enumerate(simulate_truths(cfg, seed)):
        combiners = (random_combiners(shape.n, shape.n_b, n_p, _rng(seed, _COMB, t))
                     if shape.limited_rf else None)
        geom = PilotGeometry(grid, schedule, shape, combiners)
        noise_var = noise_variance(truth, grid, shape, snr)
        if h_prev is None or h_prev.shape[0] == 0:
            v = random_training_vector(m, _rng(seed, _V, t))
        else:
            v = design_training_vector(h_prev, basis, cfg.mu, cfg.rho, _rng(seed, _DESIGN, t)).v
        tv = truth.with_training(grid, v)
        obs = synthesize_observation(tv, grid, shape, schedule, v, combiners,
                                     rng=_rng(seed, _NOISE, t), noise_var=noise_var)
        est = tracker.step(obs.y, geom)
        dom = select_dominant(est.x_hat, cfg.threshold, cap)
        plan = CompensationPlan.from_estimate(dom, grid, est.phi.beta_R, est.phi.f_d,
                                              est.phi.eta, shape.n)
        up = _uplink(cfg, truth, grid, shape, plan, noise_var, seed, t)
        h_prev = up.h_est
        out.append({
            "frame": t,
            "f_d_true": float(truth.f_d),
            "f_d_hat": float(est.phi.f_d),
            "eta_true": float(truth.eta),
            "eta_hat": float(est.phi.eta),
            "freq_mse": freq_mse(est.phi.f_d, truth.f_d),
            "channel_mse": channel_mse(est.x_hat, tv.x_true),
            "rate": up.rate,
            "n_d": up.n_d,
            "outer_iters": est.outer_iters,
            "converged": bool(est.converged),
            "free_energy": [float(v) for v in est.free_energy],
            "f_d_trace": [float(p.f_d) for p in est.phi_trace],
            "eta_trace": [float(p.eta) for p in est.phi_trace],
            "support": [int(k) for k in np.flatnonzero(est.state.pi > 0.5)],
            "true_support": [int(k) for k in truth.aoa_idx],
            "rho_01": tracker.markov.rho_01,
            "rho_10": tracker.markov.rho_10,
        })
    return out


__all__ = ["run_trial", "run_sweep", "run_sweep_rows", "rows_to_csv", "summarize",
           "simulate_record", "track_diagnostics", "SIMULATE_SCHEMA"]
