from .model import COMPONENTS, ModelConfig, TransformerNMT, component_of, init_model, named_components, parameter_count
from .train import (Batch, TrainConfig, TrainResult, TrainState, batch_loss, gradient_check, make_batch,
                    new_state, perplexity, train, train_step)
from .decode import Hypothesis, greedy, translate, translate_corpus
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .transfer import transfer_init
