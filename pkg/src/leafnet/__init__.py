"""leafnet: a from-scratch residual CNN for leaf-image classification.

Dense fp32 tensors with reverse-mode autodiff, an im2col-based ResNet9,
Adam with cosine annealing, folder-per-class data ingestion, confusion
matrix reporting, and a pinned binary checkpoint format — numpy underneath,
no deep-learning framework.
"""

from . import tensor
from .checkpoint import (CheckpointError, HeaderError, MagicError,
                         TensorMismatchError, TruncatedError, VersionError,
                         load_checkpoint, save_checkpoint)
from .data import (Batch, DatasetError, DatasetManifest, ImageDecodeError,
                   SplitSpec, batch_iter, load_image, load_manifest,
                   save_manifest, scan_dataset, stratified_split)
from .layers import (BatchNorm2d, Conv2d, Linear, ModelConfig, ResNet9,
                     count_parameters, global_max_pool, kaiming_init,
                     max_pool2d)
from .metrics import (ConfusionMatrix, MetricsReport, build_report, overall,
                      per_class, render_confusion, render_report)
from .optim import Adam, ConstantSchedule, CosineSchedule
from .tensor import (NumericError, Rng, ShapeError, Tensor, backward,
                     deterministic_mode, grad_check, is_deterministic,
                     no_grad, set_deterministic, zero_grads)
from .train import TrainConfig, evaluate, train_model

__version__ = "0.1.0"
