"""Feature synthesis and adaptive self-distillation over embedding spaces."""

from ._core import (
    Accuracy,
    EmbeddingSet,
    EpochMetrics,
    FormatError,
    NumericalError,
    SynthConfig,
    TrainConfig,
    class_probabilities,
    evaluate,
    extrapolate_jointly,
    extrapolate_per_class,
    harmonic_mean,
    init_params,
    load_embeddings,
    make_synthetic,
    nearest_centroid_accuracy,
    project_directly,
    retrieve_knn,
    save_embeddings,
    train,
    ValidationError,
    window_size,
)

__all__ = [name for name in dir() if not name.startswith("_")]
