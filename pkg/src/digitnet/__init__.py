"""Small numpy toolkit for MNIST: a CNN trained with Nesterov SGD, cosine-similarity
analysis of its convolution filters, and dense (variational) autoencoders."""

from .errors import (
    ConfigError,
    DigitNetError,
    DomainError,
    FormatError,
    ShapeError,
    UndefinedSimilarityError,
    UserError,
    VersionError,
)
from .layers import LayerSpec, Network, default_architecture
from .mnist import BatchPlan, Dataset, load_dataset, load_split
from .optim import OptimizerState, SgdConfig, effective_lr, sgd_step
from .tensor import SeededRng
from .trainer import EpochMetrics, TrainingConfig, evaluate, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
