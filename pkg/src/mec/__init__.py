"""Maximum-entropy coding: log-determinant objectives for Siamese training.

The numerical core lives in `matkernel` and `objective`; `baselines` holds
the reference self-supervised losses, `trainer`/`encoder` the desk-scale
training harness, `data` the dataset loaders, and `cli` the command-line
entry points (bench, verify, train, probe, export-embeddings).
"""

from .baselines import (
    BaselineConfig,
    CompositeConfig,
    barlow_loss,
    composite_loss,
    infonce_loss,
    simsiam_loss,
)
from .bench import BenchConfig, run_bench
from .data import DatasetHandle, SyntheticSpec, gen_synthetic, load_cifar10_bin, load_csv
from .encoder import EncoderArch, EncoderParams
from .matkernel import (
    CodingConfig,
    EmbeddingBatch,
    MatrixError,
    SingularMatrixError,
    gram,
    logdet_ipc,
    spectral_bound,
    trace_log_taylor,
)
from .objective import (
    DivergenceError,
    LossResult,
    MecLossConfig,
    dual_gap,
    lambda_schedule,
    mec_gradcheck,
    mec_loss,
)
from .trainer import (
    AugmentPolicy,
    CollapseReport,
    EmaSchedule,
    TrainConfig,
    augment,
    collapse_report,
    knn_probe,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AugmentPolicy", "BaselineConfig", "BenchConfig", "CodingConfig",
    "CollapseReport", "CompositeConfig", "DatasetHandle", "DivergenceError",
    "EmaSchedule", "EmbeddingBatch", "EncoderArch", "EncoderParams",
    "LossResult", "MatrixError", "MecLossConfig", "SingularMatrixError",
    "SyntheticSpec", "TrainConfig", "augment", "barlow_loss",
    "collapse_report", "composite_loss", "dual_gap", "gen_synthetic", "gram",
    "infonce_loss", "knn_probe", "lambda_schedule", "load_cifar10_bin",
    "load_csv", "logdet_ipc", "mec_gradcheck", "mec_loss", "run_bench",
    "simsiam_loss", "spectral_bound", "trace_log_taylor", "train",
]
