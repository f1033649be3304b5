"""Doppler-aware dynamic VBI tracking of fast time-varying multipath MIMO channels."""

from .arrays import AngularGrid, ArrayShape, PhiParams, assemble_A_R, assemble_A_T, sine_grid
from .channel import FrameTruth, ScenarioConfig, evolve_frame, initial_frame, render_channel
from .compensation import CompensationPlan, achievable_rate, select_dominant
from .config import ExperimentConfig, build_config
from .errors import ConfigurationError, RankDeficientPilotsError
from .hyper_em import em_loop, forward_backward
from .metrics import channel_mse, freq_mse
from .pilots import PilotSchedule, design_training_vector, synthesize_observation
from .prior import GammaHyper, MarkovParams
from .tracker import DDVBITracker, SolverConfig, run_frame

__version__ = "0.1.0"
