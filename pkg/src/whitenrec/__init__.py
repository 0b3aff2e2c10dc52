"""Whitened pre-trained text embeddings for sequential recommendation.

The package covers whitening transforms (ZCA, PCA, Cholesky, per-dimension
standardization, and their grouped forms), anisotropy diagnostics, a numpy
self-attention sequence recommender with hand-written gradients, dataset
utilities, full-ranking evaluation and a command line front end.
"""
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    Embeddings, InteractionDataset, SequenceData, cold_start_split, five_core,
    gen_anisotropic_embeddings, gen_sequences, leave_one_out, load_embeddings, load_sequences,
    save_embeddings, save_sequences,
)
from .diagnostics import (
    alignment_uniformity, condition_number, cosine_cdf, mean_pairwise_cosine, singular_spectrum,
    uniformity,
)
from .evaluation import EvalReport, evaluate, ndcg_at_k, rank_of_target, recall_at_k
from .exceptions import (
    CheckpointError, ConfigError, DegenerateInputError, EmptyEvaluationError, NumericError,
    ParseError, ShapeError, WhitenRecError,
)
from .linalg import cholesky, covariance, jacobi_eigh, sym_eigendecompose
from .model import Combine, ModelConfig, SeqRecNet, TargetStyle, Variant
from .recommender import PopularityRecommender, SeqRecommender, TrainHistory, grad_check
from .whitening import Whitener, WhiteningMethod, WhiteningReport, verify_whitening, whiten

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
