"""Feed-forward attention for long-range sequence regression, in numpy."""
from .model import ModelParams, PoolingMode, SequenceBatch, backward, forward, loss, param_count, predict
from .optim import AdamState, adam_step, init_params
from .tasks import Fixed, Range, TaskKind, generate, generate_batch, make_test_set
from .trainer import TrainConfig, evaluate, lr_sweep, train

__version__ = "0.1.0"
