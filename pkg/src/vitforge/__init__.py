"""vitforge: a self-contained Vision Transformer engine.

Dense tensors with reverse-mode differentiation, an image preprocessing
pipeline, the ViT forward pass, Adam training with early stopping, the full
classification-metric suite, and a bit-exact binary checkpoint container.
"""

from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    CorruptionError,
    DataError,
    DimensionError,
    FormatError,
    LabelError,
    ManifestError,
    NumericalError,
    SplitError,
    UndefinedMetricError,
    VersionError,
    VitforgeError,
)
from .tensor import (
    Tape,
    Tensor,
    backward,
    concat,
    default_dtype,
    gelu,
    layer_norm,
    matmul,
    reshape,
    set_default_dtype,
    softmax,
    tensor_mean,
    tensor_sum,
    transpose,
    use_dtype,
)
from .model import (
    ViT,
    ViTConfig,
    ViTParams,
    attention,
    embed,
    encoder_layer,
    forward,
    forward_features,
    manifest_shapes,
    patchify,
    predict,
)
from .preprocess import (
    Batch,
    ImageSample,
    LabeledDataset,
    TensorDataset,
    load_dataset,
    load_packed_fixture,
    make_batches,
    normalize,
    permute_hwc_to_chw,
    preprocess_dataset,
    resize,
    save_packed_fixture,
    stratified_split,
)
from .train import (
    AdamState,
    EarlyStopper,
    EpochLog,
    TrainConfig,
    adam_step,
    cross_entropy,
    evaluate,
    fit,
)
from .metrics import (
    MetricsReport,
    accuracy,
    balanced_accuracy,
    compute_report,
    confusion,
    precision_recall,
    roc_auc,
    sensitivity_specificity,
)
from . import checkpoint

__version__ = "0.1.0"
