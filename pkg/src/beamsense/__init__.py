"""Micromobility-aware beam tracking: synthetic traces, channel model,
trace statistics, Mann-Whitney tests, classifiers and an adaptive
tracking-interval controller."""

from .channel import GainModel, PowerTrace, calibrate_channel, misalignment_loss, to_power_trace
from .features import (FeatureVector, WindowSpec, ensemble_stats, ewma, extract_features,
                       fall_time_summary, lsf_slope, pca2, stft_sum, time_to_fall)
from .mobility import (AngularOffset, BeamCenterTrace, MarkovModel2D, fit_markov2d,
                       sample_decomposed, sample_markov2d, synth_corpus, synth_walk)
from .profiles import ApplicationProfile, table_profiles
from .stattest import MWResult, mann_whitney_u, pairwise_slope_matrix
from .tracker import TrackerConfig, TrackerState, estimate_interval, step

__version__ = "0.1.0"
