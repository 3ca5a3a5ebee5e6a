"""Word-level pitch accent detection from frame-level acoustics and word embeddings."""

from .corpus import Corpus, Label, Utterance, WordToken, corpus_stats, load_manifest
from .dsp import FrameFeatureTrack, SignalBuffer, extract_lld_track, load_wav
from .embeddings import EmbeddingTable, load_embedding_text, normalize_word, oov_report
from .harness import (
    CorpusBundle, ExperimentConfig, MetricsReport, compute_metrics, make_cv_splits, run_all_setting, run_cross,
    run_experiment, run_within,
)
from .model import AcousticConfig, LexicalConfig, LexicoAcousticModel, build_model, gradient_check
from .synthetic import SyntheticSpec, generate_synthetic_corpus, synthetic_embedding_table

__all__ = [
    "AcousticConfig", "Corpus", "CorpusBundle", "EmbeddingTable", "ExperimentConfig", "FrameFeatureTrack", "Label",
    "LexicalConfig", "LexicoAcousticModel", "MetricsReport", "SignalBuffer", "SyntheticSpec", "Utterance",
    "WordToken", "build_model", "compute_metrics", "corpus_stats", "extract_lld_track", "generate_synthetic_corpus",
    "gradient_check", "load_embedding_text", "load_manifest", "load_wav", "make_cv_splits", "normalize_word",
    "oov_report", "run_all_setting", "run_cross", "run_experiment", "run_within", "synthetic_embedding_table",
]
__version__ = "0.1.0"
