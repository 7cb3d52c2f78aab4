"""Streaming end-to-end keyword spotting with SVDF networks."""

from .errors import (ConfigError, DataError, InvalidArgumentError, KwsError, ModelFormatError,
                     NoOperatingPointError, PreconditionError, TrainingDivergedError,
                     UnsupportedVersionError)
from .estimators import BaselineKeywordSpotter, SvdfKeywordSpotter
from .evaluation import evaluate, fr_at_fa, latency_report, roc_curve, score_utterances
from .frontend import (ContextConfig, ContextStacker, FeatureFrame, LogMelFrontend, MelConfig,
                       StreamingFrontend, compute_log_mel, log_mel_frames, stack_context)
from .labeling import OK_GOOGLE, AlignedUtterance, KeywordSpec, Segment, generate_e2e_labels
from .nnet import SvdfLayer, SvdfState, svdf_forward_batch, svdf_forward_stream
from .scoring import ScoringRule, StreamingDetector, baseline_scores, detect_events, detect_stream
from .synth import gen_synthetic_dataset
from .topology import (Model, ModelConfig, baseline_config, builtin_config, count_macs,
                       count_params, e2e_config, load_model, receptive_field, save_model)
from .training import TrainConfig, train, train_one_stage, train_two_stage

__version__ = "0.1.0"
