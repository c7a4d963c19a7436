"""Joint position, orientation and clock-offset inference for distributed apertures."""
from .bp import (AGENT, ANCHOR, Aperture, BeliefSummary, BpConfig, ParticleSet,
                 kernel_bandwidth, run_loopy_bp, systematic_resample)
from .channel import ChannelObservation, synthesize_all_pairs, synthesize_observation
from .geometry import ApertureState, ArrayConfig, local_params, rotation_matrix
from .likelihood import log_profile_likelihood, noise_variance_ml
from .manifold import steering_vector
from .montecarlo import ScenarioConfig, default_scenario, run_campaign

__version__ = "0.1.0"
