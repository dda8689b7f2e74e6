"""Road-network enhanced trajectory recovery.

Recovers a dense map-matched trajectory (road segment + moving ratio at a
fixed interval) from a sparse, noisy GPS track. The package couples a
learned road representation (grid-sequence recurrence plus graph
attention), a spatial-temporal trajectory encoder, and a constraint-masked
recurrent decoder, alongside the classic linear-interpolation + HMM
baseline and a synthetic city generator for end-to-end experiments.
"""

__version__ = "0.1.0"

from . import autodiff, metrics
from .mapmatch import HmmConfig, hmm_match, shortest_path_distance
from .model import ModelConfig, RecoveryModel
from .roadnet import GridSpec, RoadNetwork, RoadSegment, load_network, save_network
from .synth import SynthConfig, gen_network, gen_trajectories
from .trajectory import (MatchedPath, MatchedTrajectory, RawTrajectory,
                         downsample, linear_interpolate, to_gps)
from .training import Sample, TrainConfig, build_samples, train

__all__ = [
    "GridSpec", "HmmConfig", "MatchedPath", "MatchedTrajectory", "ModelConfig",
    "RawTrajectory", "RecoveryModel", "RoadNetwork", "RoadSegment", "Sample",
    "SynthConfig", "TrainConfig", "autodiff", "build_samples", "downsample",
    "gen_network", "gen_trajectories", "hmm_match", "linear_interpolate",
    "load_network", "metrics", "save_network", "shortest_path_distance",
    "to_gps", "train",
]
