"""rarescore: detect and mitigate rare subclasses in neural-network
classifiers via commonality scoring of penultimate-layer activations."""

__version__ = "0.1.0"

from .activation import (
    CumulativeActivationMatrix,
    ScoredSample,
    TukeyThreshold,
    binarize,
    build_matrix,
    load_matrix,
    merge_matrices,
    partition_outliers,
    quartiles,
    save_matrix,
    score,
    score_batch,
    tukey_threshold,
)
from .data import (
    LabeledDataset,
    RarefactionSpec,
    load_parity_split,
    oversample,
    parity_labels,
    rarify,
    read_idx_images,
    read_idx_labels,
    write_idx,
)
from .errors import FormatError, UndefinedScoreError
from .experiments import (
    DecileReport,
    ExtremesReport,
    OutlierReport,
    RarityDigitSummary,
    RarityTrialResult,
    UndefinedRatioError,
    decile_analysis,
    extremes_report,
    outlier_misclassification,
    rarity_experiment,
    ratio,
    score_dataset,
)
from .monitor import (
    ScoreMonitor,
    TrustDecision,
    assess,
    build_monitor,
    fingerprint_file,
    load_monitor,
    save_monitor,
)
from .net import (
    FeedforwardModel,
    ForwardResult,
    LayerSpec,
    TrainConfig,
    TrainingDivergedError,
    default_arch,
    evaluate,
    forward,
    gradient_check,
    init_model,
    load_model,
    predict,
    save_model,
    train,
)
from .pgm import emit_montage

__all__ = [name for name in dir() if not name.startswith("_")]
