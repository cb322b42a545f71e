"""captionlab: a desk-scale captioning laboratory.

Encoder-decoder caption models (static-vector baselines through additive
attention with a Bi-LSTM spatial encoder), a minimal reverse-mode autodiff
core, the full training recipe, beam-search inference, BLEU/METEOR
evaluation, and a controlled synthetic ablation of the GAP information
bottleneck.
"""

__version__ = "0.1.0"

from .autodiff import Tensor, backward, grad_check, no_grad
from .beam import BeamConfig, BeamHypothesis, beam_search, greedy_decode
from .data import CaptionedExample, Vocabulary, build_vocab, gen_dataset, tokenize
from .features import FeatureGrid, FeatureVector, SceneSpec, load_features, save_features, synth_scene_features, to_vector
from .metrics import bleu_n, evaluate_corpus, meteor, token_prf
from .models import CaptionModel, ModelConfig, build, decode_step, forward_train, init_state
from .training import AdamState, TrainingConfig, adam_update, clip_by_global_norm, select_champion, train

__all__ = [
    "Tensor", "backward", "grad_check", "no_grad",
    "BeamConfig", "BeamHypothesis", "beam_search", "greedy_decode",
    "CaptionedExample", "Vocabulary", "build_vocab", "gen_dataset", "tokenize",
    "FeatureGrid", "FeatureVector", "SceneSpec",
    "load_features", "save_features", "synth_scene_features", "to_vector",
    "bleu_n", "evaluate_corpus", "meteor", "token_prf",
    "CaptionModel", "ModelConfig", "build", "decode_step", "forward_train", "init_state",
    "AdamState", "TrainingConfig", "adam_update", "clip_by_global_norm", "select_champion", "train",
]
