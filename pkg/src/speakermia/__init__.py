"""Membership inference against speaker-identification models, with target-side defenses."""

from .attack import (AttackMetrics, AttackModel, MembershipRecord, build_attack_dataset, evaluate_attack,
                     extract_attack_feature, select_threshold, train_attack)
from .corpus import (AudioClip, CorpusSpec, SpeakerProfile, SplitPlan, build_corpus, degrade_clip,
                     make_speaker, plan_splits, synthesize_clip)
from .defenses import (AdvRegConfig, DistillConfig, KeyConfig, KeyedSidModel, keyed_predict,
                       train_adversarially_regularized, train_distilled, train_keyed)
from .features import Spectrogram, compute_feature_stats, log_compress_and_standardize, stft_magnitude
from .harness import ExperimentSpec, GridEntry, Pipeline, ReportRow, render_report, run_experiment
from .nncore import ParamSet, TrainConfig, gradient_check, softmax_t
from .obfuscation import ObfuscationConfig, obfuscate
from .server import ServeConfig, remote_attack, serve
from .sid import SidModel, evaluate_sid, predict_posteriors, train_sid

__version__ = "0.1.0"
