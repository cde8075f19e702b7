"""Ensemble-style unsupervised community search on multilayer graphs.

Each layer is searched with diffusion-based representations and an
expected-score-gain cut; the per-layer answers are merged with a
Dawid-Skene EM consensus.
"""

from .consensus import EMConfig, ConsensusState, extract_community, majority_vote, run_em
from .diffusion import HeatKernelConfig, diffuse_features, heat_coefficients, hop_features, normalize_symmetric
from .encoder import EncoderConfig, EncoderParams
from .evaluation import f1_score, generate_queries
from .graph import LayerGraph, MultilayerGraph, augment_adjacency, fallback_features, load_multilayer_graph
from .pipeline import EvalReport, RunConfig, load_config, run_pipeline
from .search import ScoreConfig, esg, identify_community, layer_community_scores, search_all_layers
from .synthetic import synthetic_decisions, synthetic_multilayer
from .training import LossConfig, train

__version__ = "0.1.0"
