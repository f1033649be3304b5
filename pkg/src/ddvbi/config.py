"""Experiment configuration: flat ``key = value`` files with CLI overrides."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields

from .arrays import AngularGrid, ArrayShape
from .channel import ScenarioConfig
from .errors import ConfigurationError
from .mstep import ArmijoConfig
from .prior import GammaHyper, MarkovParams
from .tracker import SolverConfig

SCHEMES = ("ddvbi-designed", "ddvbi-random", "genie-oracle", "no-compensation")
SPEED_OF_LIGHT = 299_792_458.0


@dataclass
class ExperimentConfig:
    """All knobs of a Monte-Carlo campaign.

    List-valued keys (``n_p``, ``snr_db``, ``m``, ``schemes``) are sweep axes.
    ``f_d_norm`` overrides the Doppler derived from carrier, velocity and
    symbol rate when it is nonnegative.
    """

    # array and grid
    n: int = 32
    m: list = field(default_factory=lambda: [32])
    n_tilde: int = 32
    m_tilde: int = 32
    n_b: int = 0
    # support dynamics and path generator
    rho_01: float = 0.01
    rho_10: float = 0.1
    l_mean: float = 3.0
    l_max: int = 6
    min_paths: int = 2
    f_d_mode: str = "constant"
    eta_mode: str = "redraw"
    offset_jitter: float = 0.1
    power_decay_db: float = 0.0
    # physical scenario
    carrier_hz: float = 28e9
    velocity_kmh: float = 380.0
    bandwidth_hz: float = 50e6
    frame_s: float = 0.5e-3
    f_d_norm: float = -1.0
    frames: int = 3
    # sweep axes
    n_p: list = field(default_factory=lambda: [8])
    snr_db: list = field(default_factory=lambda: [0.0])
    schemes: list = field(default_factory=lambda: list(SCHEMES))
    # training design and compensation
    mu: float = 0.9
    rho: float = 0.5
    threshold: float = 0.1
    rate_symbols: int = 8
    # prior
    a: float = 0.1
    b: float = 0.1
    a_bar: float = 1.0
    b_bar: float = 1e-6
    a_kappa: float = 1e-6
    b_kappa: float = 1e-6
    # solver
    max_outer_iters: int = 50
    max_estep_sweeps: int = 50
    elbo_tol: float = 1e-6
    armijo_step: float = 1.0
    armijo_shrink: float = 0.5
    armijo_c: float = 1e-4
    armijo_backtracks: int = 30
    pi_clamp: float = 1e-3
    mstep_iters: int = 1
    mstep_mode: str = "profile"
    fd_max_factor: float = 1.5
    learn_markov: bool = False
    em_window: int = 50
    # campaign
    trials: int = 50
    seed: int = 0
    threads: int = 1
    timing: bool = False

    # ---- derived quantities -------------------------------------------------
    @property
    def subframe_len(self) -> int:
        return int(round(self.frame_s * self.bandwidth_hz / 2))

    @property
    def f_d_hz(self) -> float:
        return self.velocity_kmh / 3.6 * self.carrier_hz / SPEED_OF_LIGHT

    @property
    def f_d_normalized(self) -> float:
        if self.f_d_norm >= 0:
            return float(self.f_d_norm)
        return self.f_d_hz / self.bandwidth_hz

    @property
    def fd_max(self) -> float:
        return max(self.fd_max_factor * self.f_d_normalized, 1e-12)

    def grid(self) -> AngularGrid:
        return AngularGrid.uniform(self.m_tilde, self.n_tilde)

    def shape(self, m: int) -> ArrayShape:
        return ArrayShape(m, self.n, n_b=self.n_b if self.n_b > 0 else None)

    def markov(self) -> MarkovParams:
        return MarkovParams(self.rho_01, self.rho_10)

    def hyper(self) -> GammaHyper:
        return GammaHyper(self.a, self.b, self.a_bar, self.b_bar, self.a_kappa, self.b_kappa)

    def scenario(self) -> ScenarioConfig:
        return ScenarioConfig(markov=self.markov(), l_mean=self.l_mean, l_max=self.l_max,
                              min_paths=self.min_paths, f_d=self.f_d_normalized,
                              f_d_mode=self.f_d_mode, eta_mode=self.eta_mode,
                              offset_jitter=self.offset_jitter,
                              power_decay_db=self.power_decay_db)

    def solver(self) -> SolverConfig:
        arm = ArmijoConfig(self.armijo_step, self.armijo_shrink, self.armijo_c,
                           self.armijo_backtracks)
        return SolverConfig(max_outer_iters=self.max_outer_iters,
                            max_estep_sweeps=self.max_estep_sweeps, elbo_tol=self.elbo_tol,
                            armijo=arm, pi_clamp=self.pi_clamp, mstep_iters=self.mstep_iters,
                            fd_max=self.fd_max, mstep_mode=self.mstep_mode)

    def validate(self) -> "ExperimentConfig":
        for name in ("m", "n_p", "snr_db", "schemes"):
            if len(getattr(self, name)) == 0:
                raise ConfigurationError("%s must be a nonempty list" % name)
        if self.trials < 1:
            raise ConfigurationError("trials must be >= 1")
        if self.frames < 1:
            raise ConfigurationError("frames must be >= 1")
        if self.threads < 1:
            raise ConfigurationError("threads must be >= 1")
        if self.rate_symbols < 1:
            raise ConfigurationError("rate_symbols must be >= 1")
        bad = [s for s in self.schemes if s not in SCHEMES]
        if bad:
            raise ConfigurationError("unknown scheme(s) %s; choose from %s" % (bad, SCHEMES))
        for v in self.snr_db:
            if not math.isfinite(v):
                raise ConfigurationError("snr_db entries must be finite")
        if self.n_b < 0 or self.n_b > self.n:
            raise ConfigurationError("n_b must lie in [0, n] (0 means full RF)")
        if not (0 < self.threshold <= 1):
            raise ConfigurationError("threshold must lie in (0, 1]")
        for n_p in self.n_p:
            if not (1 <= n_p <= self.subframe_len):
                raise ConfigurationError("n_p entries must lie in [1, subframe_len]")
        # constructing these runs their own range checks
        self.grid()
        for m in self.m:
            self.shape(m)
        self.hyper()
        self.scenario()
        self.solver()
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_LIST_TYPES = {"m": int, "n_p": int, "snr_db": float, "schemes": str}


def _field_types() -> dict:
    out = {}
    for f in fields(ExperimentConfig):
        if f.name in _LIST_TYPES:
            out[f.name] = ("list", _LIST_TYPES[f.name])
        else:
            out[f.name] = ("scalar", {"int": int, "float": float, "str": str,
                                      "bool": bool}[f.type])
    return out


FIELD_TYPES = _field_types()


def parse_bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError("not a boolean: %r" % text)


def _convert(kind, typ, text: str, key: str):
    try:
        if kind == "list":
            items = [s.strip() for s in str(text).split(",") if s.strip()]
            return [typ(s) for s in items]
        if typ is bool:
            return parse_bool(text)
        if typ is int:
            return int(text)
        return typ(text)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError("bad value for %s: %r (%s)" % (key, text, exc)) from None


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment, lists are comma separated."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError("line %d: expected 'key = value'" % lineno)
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in FIELD_TYPES:
            raise ConfigurationError("line %d: unknown key %r" % (lineno, key))
        kind, typ = FIELD_TYPES[key]
        out[key] = _convert(kind, typ, val, key)
    return out


def build_config(file_text: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Defaults, then the config file, then string overrides (e.g. CLI flags)."""
    values = parse_config_text(file_text) if file_text else {}
    for key, text in (overrides or {}).items():
        key = key.replace("-", "_")
        if key not in FIELD_TYPES:
            raise ConfigurationError("unknown key %r" % key)
        kind, typ = FIELD_TYPES[key]
        values[key] = _convert(kind, typ, text, key)
    return ExperimentConfig(**values).validate()
