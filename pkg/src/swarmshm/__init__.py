"""Swarm-based vibration inspection of a clamped plate.

Pipeline pieces: a finite-difference plate eigensolver for baseline and
damaged mode shapes, mode-superposition vibration synthesis, Gaussian
process exploration for a simulated robot swarm, frequency-domain mode
identification from scattered spectrum samples, and curvature-based
damage mapping with z-score classification.
"""

from .plate import (
    PlateSpec,
    DamageRegion,
    ModalBasis,
    assemble_operators,
    solve_modes,
    analytic_beam_basis,
    apply_damage,
    uniform_thickness,
)
from .vibration import SensorModel, VibrationField, simulate_field, sample_at
from .gp import GPHyper, GPPosterior, kernel, posterior, posterior_variance, log_marginal_likelihood, optimize_hyper
from .oma import BandProtocol, SpectrumSample, SampleSet, CSDMatrix, window_fft, extract_bands, build_csd, fdd_mode, mac
from .swarm import NavParams, RobotState, candidate_targets, select_target, step_motion, run_mission
from .damage import DamageMap, MetricsReport, interpolate_mode, curvature, damage_index, z_classify, score

__version__ = "0.1.0"
