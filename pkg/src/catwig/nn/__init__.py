"""From-scratch numpy network core: layers, loss, Adam, checkpoints."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .functional import (
    CacheError,
    GeometryError,
    batchnorm2d_backward,
    batchnorm2d_forward,
    conv2d_backward,
    conv2d_forward,
    conv_output_size,
    dropout_backward,
    dropout_forward,
    global_avg_pool_backward,
    global_avg_pool_forward,
    linear_backward,
    linear_forward,
    maxpool2x2_backward,
    maxpool2x2_forward,
    relu_backward,
    relu_forward,
    softmax,
    softmax_cross_entropy,
)
from .graph import ModelGraph
from .layers import (
    BasicBlock,
    BatchNorm2d,
    Conv2d,
    Dropout,
    Flatten,
    GlobalAvgPool,
    Layer,
    Linear,
    MaxPool2x2,
    ReLU,
    Sequential,
)
from .optim import Adam, AdamState, adam_step
