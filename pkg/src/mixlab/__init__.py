"""Decoding-time mixture of frozen expert models under a small trainable
preference controller, with pairwise-reward RL training and win-rate
evaluation on an analytic synthetic testbed."""

from .core import (
    Context,
    Dimension,
    DimensionRegistry,
    PreferenceSpec,
    Vocab,
    encode_preference,
    validate_dist,
)
from .mixer import DecodeStrategy, MergeSpace, Trajectory, decode, mix_next_token, sequence_logprob
from .pcm import MixtureWeights, PcmConfig, PcmParams, init_params, pcm_backward, pcm_forward
from .rewards import ReferenceStore, RewardOracle, aggregate_reward, bt_transform
from .testbed import Testbed, build_testbed

__version__ = "0.1.0"
