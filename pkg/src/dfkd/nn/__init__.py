from . import functional
from .checkpoint import (
    checkpoint_bytes,
    file_hash,
    load_checkpoint,
    model_from_bytes,
    model_hash,
    save_checkpoint,
)
from .functional import (
    BNBatchStats,
    batchnorm2d,
    conv2d,
    cross_entropy_with_labels,
    flatten,
    global_avg_pool,
    linear,
    log_softmax,
    maxpool2d,
    relu,
    softmax,
)
from .model import LayerSpec, Model, forward, mode, tinynet, tinynet_specs
